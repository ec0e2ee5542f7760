"""Command-line interface for the ear-canal cardiac reconstruction pipeline."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from earcardio.config import PipelineConfig, load_config, provenance
from earcardio.equalizer import EqualizerProfile, build_profile
from earcardio.errors import CardioError
from earcardio.fiducial import label_cycles, read_fiducial_csv, write_fiducial_csv
from earcardio.ingestion import PairedSession, ingest
from earcardio.metrics import (
    Grouping,
    cycle_variability,
    mean_pearson,
    pearson,
    summarize_timing_errors,
    timing_errors,
    write_cdf_csv,
)
from earcardio.motion_gate import (
    MotionClassifier,
    evaluate_cv,
    gate_stream,
    mfcc_features,
    pca_projection,
    train_motion_classifier,
)
from earcardio.pipeline import SessionCycles, segment_session
from earcardio.segmentation import CardiacCycle, load_cycles, pair_cycles, save_cycles
from earcardio.synth import PerturbDimension, generate_gate_corpus, generate_session, perturb, write_truth
from earcardio.utils import TARGET_RATE_HZ, atomic_write_json, atomic_write_text, parallel_map
from earcardio.waveform import Modality, resample

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class CliParser(argparse.ArgumentParser):
    """Reports usage errors with exit status 1."""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _modality(name: str) -> Modality:
    return Modality(name.upper())


def build_parser() -> CliParser:
    parser = CliParser(prog="earcardio", description="Reconstruct SCG/GCG cycles from ear-canal heart sounds.")
    parser.add_argument("--config", type=str, default=None, help="Pipeline configuration JSON.")
    parser.add_argument("--seed", type=int, default=None, help="Seed override for every random stage.")
    parser.add_argument("--jobs", type=int, default=None, help="Worker count; any value gives identical outputs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=CliParser)
    sub.required = True

    p = sub.add_parser("synth", help="Generate a synthetic paired session with ground truth.")
    p.add_argument("--out", required=True, help="Session output directory.")
    p.add_argument("--duration", type=float, default=None, help="Duration in seconds.")
    p.add_argument("--heart-rate", type=float, default=None, help="Heart rate in bpm.")
    p.add_argument("--noise-db", type=float, default=None, help="Ear noise level in dB.")
    p.add_argument("--music-db", type=float, default=None, help="Add >60 Hz music at this level in dB.")
    p.add_argument("--perturb", choices=[d.value.lower() for d in PerturbDimension], default=None,
                   help="Derive the session along one variability factor.")

    p = sub.add_parser("ingest", help="Align and crop a recorded ear WAV and IMU CSV pair.")
    p.add_argument("--wav", required=True, help="Ear recording (WAV).")
    p.add_argument("--imu", required=True, help="IMU recording (CSV).")
    p.add_argument("--out", required=True, help="Session output directory.")

    p = sub.add_parser("gate", help="Train the motion gate or apply it to a session.")
    p.add_argument("--train", action="store_true", help="Train on a synthetic gate corpus.")
    p.add_argument("--n-static", type=int, default=132, help="Static windows in the training corpus.")
    p.add_argument("--n-motion", type=int, default=176, help="Motion windows in the training corpus.")
    p.add_argument("--export-pca", type=str, default=None, help="Write a 2-D PCA projection of the corpus as CSV.")
    p.add_argument("--classifier", type=str, default=None, help="Classifier JSON to apply.")
    p.add_argument("--session", type=str, default=None, help="Session directory to gate.")
    p.add_argument("--out", required=True, help="Classifier JSON (with --train) or gate report JSON.")

    p = sub.add_parser("segment", help="Cut SNR-filtered ear cycles and AO-anchored target cycles.")
    p.add_argument("--session", nargs="+", required=True, help="Session directories.")
    p.add_argument("--classifier", type=str, default=None, help="Optional motion gate classifier.")
    p.add_argument("--out", required=True, help="Output directory (one subdirectory per session).")

    p = sub.add_parser("label", help="Label MC/IM/AO/MA/RE in SCG or GCG cycles.")
    p.add_argument("--cycles", required=True, help="Cycle directory.")
    p.add_argument("--out", required=True, help="Fiducial CSV.")

    p = sub.add_parser("train", help="Train a reconstruction model.")
    _add_pair_sources(p)
    p.add_argument("--epochs", type=int, default=None, help="Training epochs.")
    p.add_argument("--val-split", type=float, default=0.0,
                   help="Fraction of pairs, taken from the end, held out to drive the LR schedule.")
    p.add_argument("--out", required=True, help="Checkpoint path.")

    p = sub.add_parser("calibrate", help="Fine-tune a model on a few cycles of a new user.")
    _add_pair_sources(p)
    p.add_argument("--model", required=True, help="Pretrained checkpoint.")
    p.add_argument("--n", type=int, default=None, help="Calibration cycles to use.")
    p.add_argument("--out", required=True, help="Calibrated checkpoint path.")

    p = sub.add_parser("equalize", help="Build a cross-device equalizer profile.")
    p.add_argument("--ref", required=True, help="Reference-device ear cycle directory.")
    p.add_argument("--tgt", required=True, help="Target-device ear cycle directory.")
    p.add_argument("--n", type=int, default=None, help="Cycles averaged per device.")
    p.add_argument("--out", required=True, help="Profile JSON.")

    p = sub.add_parser("reconstruct", help="Reconstruct target cycles from ear cycles.")
    p.add_argument("--model", required=True, help="Checkpoint.")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--cycles", type=str, help="Ear cycle directory written by segment.")
    src.add_argument("--session", type=str, help="Session directory (segments in-process).")
    p.add_argument("--profile", type=str, default=None, help="Equalizer profile JSON.")
    p.add_argument("--classifier", type=str, default=None, help="Motion gate classifier (with --session).")
    p.add_argument("--out", required=True, help="Output cycle directory.")

    p = sub.add_parser("eval", help="Score predictions against references.")
    p.add_argument("--pred", type=str, default=None, help="Predicted fiducial CSV.")
    p.add_argument("--truth", type=str, default=None, help="Reference fiducial CSV.")
    p.add_argument("--pred-cycles", type=str, default=None, help="Predicted cycle directory.")
    p.add_argument("--ref-cycles", type=str, default=None, help="Reference cycle directory.")
    p.add_argument("--cdf-out", type=str, default=None, help="Write per-fiducial error CDFs as CSV.")
    p.add_argument("--out", type=str, default=None, help="Report JSON (default: stdout).")
    return parser


def _add_pair_sources(p: argparse.ArgumentParser) -> None:
    p.add_argument("--target", choices=["scg", "gcg"], default=None, help="Target modality.")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--cycles", nargs="+", help="Segment output directories (ear/ and scg|gcg/ inside).")
    src.add_argument("--session", nargs="+", help="Session directories (segments in-process).")


def _stamp(cfg: PipelineConfig, payload: Dict[str, Any]) -> Dict[str, Any]:
    return dict(payload, provenance=provenance(cfg))


def _segment(cfg: PipelineConfig, directory: str, classifier: Optional[MotionClassifier]) -> SessionCycles:
    return segment_session(
        PairedSession.load(directory), cfg.bandpass, cfg.snr_threshold_db, classifier, cfg.motion_threshold_p
    )


def _load_classifier(path: Optional[str]) -> Optional[MotionClassifier]:
    return MotionClassifier.load(path) if path else None


def _pairs(cfg: PipelineConfig, args: argparse.Namespace, modality: Modality) -> List[Tuple[CardiacCycle, CardiacCycle]]:
    pairs: List[Tuple[CardiacCycle, CardiacCycle]] = []
    if args.cycles:
        for directory in args.cycles:
            root = Path(directory)
            pairs.extend(pair_cycles(load_cycles(root / "ear"), load_cycles(root / modality.value.lower())))
    else:
        results = parallel_map(lambda d: _segment(cfg, d, None), args.session, cfg.jobs)
        for result in results:
            pairs.extend(result.pairs(modality))
    return pairs


def cmd_synth(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    synth_cfg = replace(
        cfg.synth,
        **{k: v for k, v in {
            "duration_s": args.duration,
            "heart_rate_bpm": args.heart_rate,
            "noise_db": args.noise_db,
            "music_db": args.music_db,
        }.items() if v is not None},
    )
    if args.perturb:
        dimension = next(d for d in PerturbDimension if d.value.lower() == args.perturb)
        synth_cfg = perturb(synth_cfg, dimension)
    session, truth = generate_session(synth_cfg)
    out = Path(args.out)
    session.save(out, provenance(cfg))
    write_truth(out / "truth.json", truth, provenance(cfg))
    print(f"Wrote {len(truth.beat_times_s)} beats over {synth_cfg.duration_s:.1f} s to {out}")
    return EXIT_OK


def cmd_ingest(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    session = ingest(args.wav, args.imu, cfg.axis_map, {"source": "recording", "wav": args.wav, "imu": args.imu})
    session.save(args.out, provenance(cfg))
    print(f"Aligned with offset {session.offset_ms:.1f} ms; wrote {session.ear.duration_s:.1f} s to {args.out}")
    return EXIT_OK


def cmd_gate(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    if args.train:
        windows, labels = generate_gate_corpus(args.n_static, args.n_motion, seed=cfg.seed)
        features = np.stack(parallel_map(lambda w: mfcc_features(w, cfg.mfcc), windows, cfg.jobs))
        cv = evaluate_cv(features, labels, k=5, seed=cfg.seed)
        clf = train_motion_classifier(features, labels, seed=cfg.seed, mfcc_config=cfg.mfcc, jobs=cfg.jobs)
        clf.save(args.out, provenance(cfg))
        print(f"5-fold CV: AUC={cv.auc:.3f} accuracy={cv.accuracy:.3f}; OOB accuracy={clf.oob_score:.3f}")
        if args.export_pca:
            projected, ratio = pca_projection(features)
            buf = io.StringIO()
            writer = csv.writer(buf, lineterminator="\n")
            writer.writerow(["pc1", "pc2", "label"])
            for (a, b), label in zip(projected, labels):
                writer.writerow([f"{a:.6f}", f"{b:.6f}", label])
            atomic_write_text(args.export_pca, buf.getvalue())
            print(f"Wrote PCA projection ({ratio[0]:.2f}, {ratio[1]:.2f} of variance) to {args.export_pca}")
        print(f"Wrote classifier to {args.out}")
        return EXIT_OK
    if not (args.classifier and args.session):
        raise UsageError("gate needs --train, or both --classifier and --session")
    clf = MotionClassifier.load(args.classifier)
    ear = PairedSession.load(args.session).ear
    _, report = gate_stream(resample(ear, TARGET_RATE_HZ), clf, cfg.motion_threshold_p)
    atomic_write_json(args.out, _stamp(cfg, report.to_dict()))
    print(f"Kept {len(report.kept)} of {report.n_windows} windows; wrote {args.out}")
    return EXIT_OK


def cmd_segment(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    classifier = _load_classifier(args.classifier)
    results = parallel_map(lambda d: _segment(cfg, d, classifier), args.session, cfg.jobs)
    for directory, result in zip(args.session, results):
        out = Path(args.out) / Path(directory).name if len(args.session) > 1 else Path(args.out)
        stamp = _stamp(cfg, {"session": str(directory), "channel": result.channel})
        save_cycles(out / "ear", result.ear_cycles, result.ear_snr, stamp)
        for modality, cycles in result.targets.items():
            save_cycles(out / modality.value.lower(), cycles, None, stamp)
        print(f"{directory}: kept {len(result.ear_cycles)} of {result.n_extracted} ear cycles "
              f"(channel {result.channel}); wrote {out}")
    return EXIT_OK


def cmd_label(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    cycles = load_cycles(args.cycles)
    sets, report = label_cycles(cycles)
    write_fiducial_csv(args.out, [(i, s) for i, s in enumerate(sets) if s is not None], provenance(cfg))
    print(f"Labelled {report.labeled} of {report.total} cycles; wrote {args.out}")
    for reason, count in sorted(report.rejected.items()):
        print(f"  rejected {count}: {reason}")
    return EXIT_OK


def cmd_train(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    from earcardio.model import save_checkpoint
    from training.dataset import holdout_split
    from training.train import train

    modality = _modality(args.target) if args.target else cfg.model.target_modality
    pairs, val_pairs = holdout_split(_pairs(cfg, args, modality), args.val_split)
    tcfg = cfg.train if args.epochs is None else replace(cfg.train, max_epochs=args.epochs)
    model, history = train(replace(cfg.model, target_modality=modality), tcfg, pairs, val_pairs or None)
    model.train_meta["n_val_pairs"] = len(val_pairs)
    model.train_meta["provenance"] = provenance(cfg)
    save_checkpoint(model, args.out)
    final = history[-1] if history else float("nan")
    print(f"Trained {modality.value} model on {len(pairs)} pairs, final train_loss={final:.4f}")
    print(f"Saved model to {args.out}")
    return EXIT_OK


def cmd_calibrate(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    from earcardio.model import load_checkpoint, save_checkpoint
    from training.train import calibrate

    base = load_checkpoint(args.model)
    n = cfg.calibration_cycles if args.n is None else args.n
    pairs = _pairs(cfg, args, base.config.target_modality)[:n]
    tuned = calibrate(base, pairs, epochs=cfg.calibration_epochs, lr=cfg.calibration_lr, seed=cfg.seed)
    tuned.train_meta["provenance"] = provenance(cfg)
    save_checkpoint(tuned, args.out)
    print(f"Calibrated on {len(pairs)} cycles; saved model to {args.out}")
    return EXIT_OK


def cmd_equalize(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    n = cfg.equalizer_cycles if args.n is None else args.n
    profile = build_profile(
        load_cycles(args.ref), load_cycles(args.tgt), n=n, ref_device_id=args.ref, tgt_device_id=args.tgt
    )
    profile.save(args.out, provenance(cfg))
    print(f"Wrote equalizer profile ({n} cycles per device) to {args.out}")
    return EXIT_OK


def cmd_reconstruct(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    from earcardio.model import load_checkpoint
    from earcardio.reconstruction import reconstruct_session

    model = load_checkpoint(args.model)
    if args.cycles:
        ear_cycles = load_cycles(args.cycles)
    else:
        ear_cycles = _segment(cfg, args.session, _load_classifier(args.classifier)).ear_cycles
    profile = EqualizerProfile.load(args.profile) if args.profile else None
    outputs = reconstruct_session(model, ear_cycles, profile)
    save_cycles(args.out, outputs, None, _stamp(cfg, {"model": args.model, "profile": args.profile}))
    print(f"Reconstructed {len(outputs)} {model.config.target_modality.value} cycles; wrote {args.out}")
    return EXIT_OK


def cmd_eval(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    report: Dict[str, Any] = {}
    if args.pred or args.truth:
        if not (args.pred and args.truth):
            raise UsageError("--pred and --truth go together")
        predicted, truth = read_fiducial_csv(args.pred), read_fiducial_csv(args.truth)
        errors = timing_errors(predicted, truth)
        common = sorted(set(predicted) & set(truth))
        flat_pred = [v for cid in common for v in predicted[cid].as_tuple()]
        flat_true = [v for cid in common for v in truth[cid].as_tuple()]
        report["fiducial_pearson"] = pearson(flat_pred, flat_true)
        report["timing_errors_ms"] = summarize_timing_errors(errors)
        if args.cdf_out:
            write_cdf_csv(args.cdf_out, errors, provenance(cfg))
    if args.pred_cycles or args.ref_cycles:
        if not (args.pred_cycles and args.ref_cycles):
            raise UsageError("--pred-cycles and --ref-cycles go together")
        pred_cycles, ref_cycles = load_cycles(args.pred_cycles), load_cycles(args.ref_cycles)
        pairs = pair_cycles(pred_cycles, ref_cycles)
        report["waveform_pearson"] = mean_pearson([p for p, _ in pairs], [r for _, r in pairs])
        report["n_pairs"] = len(pairs)
        report["intra_session"] = cycle_variability(pred_cycles, Grouping.INTRA_SESSION).to_dict()
    if not report:
        raise UsageError("eval needs --pred/--truth or --pred-cycles/--ref-cycles")
    text = json.dumps(_stamp(cfg, report), indent=2, sort_keys=True)
    if args.out:
        atomic_write_text(args.out, text + "\n")
        print(f"Wrote evaluation report to {args.out}")
    else:
        print(text)
    return EXIT_OK


COMMANDS: Dict[str, Callable[[PipelineConfig, argparse.Namespace], int]] = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "gate": cmd_gate,
    "segment": cmd_segment,
    "label": cmd_label,
    "train": cmd_train,
    "calibrate": cmd_calibrate,
    "equalize": cmd_equalize,
    "reconstruct": cmd_reconstruct,
    "eval": cmd_eval,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = load_config(args.config).with_overrides(seed=args.seed, jobs=args.jobs)
        cfg.validate()
        return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"earcardio {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CardioError, OSError) as exc:
        print(f"earcardio {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
