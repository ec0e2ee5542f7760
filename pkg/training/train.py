"""Train the cycle reconstruction network, fine-tune it for a new user, and run the evaluation protocols."""

from __future__ import annotations

import argparse
import copy
import logging
import math
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch
from sklearn.model_selection import KFold
from torch import nn

from earcardio.errors import EmptyDataset, NonFiniteLoss
from earcardio.metrics import pearson
from earcardio.model import ModelConfig, ReconstructionModel, TrainConfig, build_model, save_checkpoint
from earcardio.reconstruction import forward_batch
from earcardio.waveform import zscore_array
from training.dataset import CyclePairDataset, make_loader

logger = logging.getLogger(__name__)

Pair = Tuple[object, object]


def train_one_epoch(
    model: nn.Module, loader, criterion: nn.Module, optimizer: torch.optim.Optimizer, epoch: int = 0
) -> float:
    model.train()
    total_loss = 0.0
    for batch, (inputs, targets) in enumerate(loader):
        optimizer.zero_grad()
        outputs = model(inputs)
        loss = criterion(outputs, targets)
        if not torch.isfinite(loss):
            raise NonFiniteLoss(f"loss became {loss.item()} at epoch {epoch}, batch {batch}")
        loss.backward()
        optimizer.step()
        total_loss += loss.item() * inputs.size(0)
    return total_loss / len(loader.dataset)


def evaluate(model: nn.Module, loader, criterion: nn.Module) -> float:
    model.eval()
    total_loss = 0.0
    with torch.no_grad():
        for inputs, targets in loader:
            outputs = model(inputs)
            loss = criterion(outputs, targets)
            total_loss += loss.item() * inputs.size(0)
    return total_loss / len(loader.dataset)


def train(
    config: ModelConfig,
    tcfg: TrainConfig,
    pairs: Sequence[Pair],
    val_pairs: Optional[Sequence[Pair]] = None,
) -> Tuple[ReconstructionModel, List[float]]:
    """Adam + MSE with reduce-on-plateau; returns the model and the per-epoch mean training loss."""
    tcfg.validate()
    if not pairs:
        raise EmptyDataset("no (ear, target) pairs to train on")
    model = build_model(config, seed=tcfg.seed)
    dataset = CyclePairDataset(pairs, config.input_len)
    loader = make_loader(dataset, tcfg.batch_size, tcfg.seed)
    val_loader = make_loader(CyclePairDataset(val_pairs, config.input_len), tcfg.batch_size, tcfg.seed, False) \
        if val_pairs else None

    criterion = nn.MSELoss()
    optimizer = torch.optim.Adam(model.network.parameters(), lr=tcfg.lr)
    scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
        optimizer, mode="min", factor=tcfg.plateau_factor, patience=tcfg.plateau_patience, min_lr=tcfg.min_lr
    )
    history: List[float] = []
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(tcfg.seed)
        for epoch in range(1, tcfg.max_epochs + 1):
            train_loss = train_one_epoch(model.network, loader, criterion, optimizer, epoch)
            history.append(train_loss)
            monitored = train_loss
            if val_loader is not None:
                monitored = evaluate(model.network, val_loader, criterion)
                logger.info("Epoch %d: train_loss=%.4f val_loss=%.4f", epoch, train_loss, monitored)
            else:
                logger.info("Epoch %d: train_loss=%.4f", epoch, train_loss)
            scheduler.step(monitored)
    model.network.eval()
    model.train_meta = {
        "seed": tcfg.seed,
        "epochs": tcfg.max_epochs,
        "final_loss": history[-1] if history else None,
        "n_pairs": len(pairs),
    }
    return model, history


def calibrate(
    model: ReconstructionModel,
    pairs: Sequence[Pair],
    epochs: int = 50,
    lr: float = 1e-4,
    batch_size: int = 32,
    seed: int = 0,
) -> ReconstructionModel:
    """Fine-tune every layer on a handful of the new user's pairs; the base model is left untouched."""
    tuned = copy.deepcopy(model)
    if not pairs:
        return tuned
    loader = make_loader(CyclePairDataset(pairs, model.config.input_len), batch_size, seed)
    criterion = nn.MSELoss()
    optimizer = torch.optim.Adam(tuned.network.parameters(), lr=lr)
    loss = math.nan
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        for epoch in range(1, epochs + 1):
            loss = train_one_epoch(tuned.network, loader, criterion, optimizer, epoch)
    tuned.network.eval()
    tuned.train_meta = dict(model.train_meta, calibration_pairs=len(pairs), calibration_loss=loss)
    logger.info("calibrated on %d pairs: final loss %.4f", len(pairs), loss)
    return tuned


def mean_reconstruction_pearson(
    model: ReconstructionModel, inputs: Sequence, references: Sequence
) -> float:
    outputs = forward_batch(model, [zscore_array(getattr(c, "samples", c)) for c in inputs])
    return float(np.mean([pearson(out, ref) for out, ref in zip(outputs, references)]))


@dataclass
class FoldReport:
    fold_pearson: List[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_pearson))

    @property
    def std(self) -> float:
        return float(np.std(self.fold_pearson))


def evaluate_within_user(
    pairs: Sequence[Pair],
    config: ModelConfig,
    tcfg: TrainConfig,
    k: int = 5,
    references: Optional[Sequence] = None,
) -> FoldReport:
    """Contiguous k-fold: train on k-1 folds, score held-out cycles against `references` (default: the targets)."""
    if len(pairs) < k:
        raise EmptyDataset(f"need at least {k} pairs for {k}-fold evaluation, got {len(pairs)}")
    refs = list(references) if references is not None else [p[1] for p in pairs]
    scores = []
    for fold, (train_idx, test_idx) in enumerate(KFold(n_splits=k).split(np.arange(len(pairs)))):
        model, _ = train(config, replace(tcfg, seed=tcfg.seed + fold), [pairs[i] for i in train_idx])
        scores.append(
            mean_reconstruction_pearson(model, [pairs[i][0] for i in test_idx], [refs[i] for i in test_idx])
        )
        logger.info("fold %d: mean Pearson %.3f", fold, scores[-1])
    return FoldReport(scores)


def calibration_sweep(
    model: ReconstructionModel,
    calibration_pairs: Sequence[Pair],
    test_inputs: Sequence,
    test_references: Sequence,
    counts: Iterable[int] = range(0, 12),
    epochs: int = 50,
    lr: float = 1e-4,
    seed: int = 0,
) -> Dict[int, float]:
    """Mean held-out Pearson after fine-tuning on the first n calibration pairs, for each n."""
    results = {}
    for n in counts:
        tuned = calibrate(model, list(calibration_pairs[:n]), epochs=epochs, lr=lr, seed=seed)
        results[n] = mean_reconstruction_pearson(tuned, test_inputs, test_references)
        logger.info("calibration with %d cycles: mean Pearson %.3f", n, results[n])
    return results


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Train the ear-to-SCG/GCG reconstruction model.")
    parser.add_argument("sessions", nargs="+", help="Session directories written by synth or ingest.")
    parser.add_argument("--target", choices=["scg", "gcg"], default="scg", help="Target modality.")
    parser.add_argument("--epochs", type=int, default=150, help="Number of training epochs.")
    parser.add_argument("--batch-size", type=int, default=32, help="Batch size.")
    parser.add_argument("--lr", type=float, default=1e-3, help="Learning rate.")
    parser.add_argument("--seed", type=int, default=42, help="Seed for initialisation and shuffling.")
    parser.add_argument("--save-path", type=str, default="models/scg.ckpt", help="Checkpoint path.")
    return parser.parse_args(argv)


def main(argv: Optional[Sequence[str]] = None) -> None:
    from earcardio.ingestion import PairedSession
    from earcardio.pipeline import segment_session
    from earcardio.waveform import Modality

    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    modality = Modality(args.target.upper())
    pairs: List[Pair] = []
    for directory in args.sessions:
        pairs.extend(segment_session(PairedSession.load(directory), targets=[modality]).pairs(modality))
    tcfg = TrainConfig(lr=args.lr, batch_size=args.batch_size, max_epochs=args.epochs, seed=args.seed)
    model, history = train(ModelConfig(target_modality=modality), tcfg, pairs)
    save_checkpoint(model, args.save_path)
    final = history[-1] if history else float("nan")
    print(f"Trained on {len(pairs)} pairs, final train_loss={final:.4f}")
    print(f"Saved model to {args.save_path}")


if __name__ == "__main__":
    main()
