"""Model-backed reconstruction of SCG/GCG cycles from conditioned ear-sound cycles."""

from __future__ import annotations

import logging
import time
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch

from .equalizer import EqualizerProfile, apply_equalizer
from .errors import ShapeMismatch
from .model import ReconstructionModel
from .segmentation import AnchorKind, CardiacCycle
from .waveform import zscore_array

logger = logging.getLogger(__name__)

INFERENCE_CHUNK = 256


def encode_cycles(cycles: Sequence, input_len: int) -> torch.Tensor:
    """Stack cycles (or raw arrays) into a float32 (batch, length) tensor."""
    rows = [np.asarray(getattr(c, "samples", c), dtype=np.float64) for c in cycles]
    for r in rows:
        if r.ndim != 1 or r.size != input_len:
            raise ShapeMismatch(f"expected cycles of {input_len} samples, got shape {r.shape}")
    return torch.from_numpy(np.stack(rows).astype(np.float32))


def forward_batch(model: ReconstructionModel, cycles: Sequence) -> np.ndarray:
    """Inference-mode outputs, shape (len(cycles), input_len)."""
    if not cycles:
        return np.zeros((0, model.config.input_len))
    batch = encode_cycles(cycles, model.config.input_len)
    model.network.eval()
    outputs = []
    with torch.no_grad():
        for start in range(0, batch.shape[0], INFERENCE_CHUNK):
            outputs.append(model.network(batch[start : start + INFERENCE_CHUNK]))
    return torch.cat(outputs).double().numpy()


def forward(model: ReconstructionModel, ear_cycle) -> np.ndarray:
    return forward_batch(model, [ear_cycle])[0]


def prepare_inputs(
    ear_cycles: Sequence[CardiacCycle], profile: Optional[EqualizerProfile] = None
) -> List[CardiacCycle]:
    """Equalize when a profile is given, then re-z-score so the model sees unit-variance cycles."""
    prepared = []
    for cycle in ear_cycles:
        if profile is not None:
            cycle = apply_equalizer(profile, cycle)
        prepared.append(cycle.with_samples(zscore_array(cycle.samples)))
    return prepared


def reconstruct_session(
    model: ReconstructionModel,
    ear_cycles: Sequence[CardiacCycle],
    profile: Optional[EqualizerProfile] = None,
) -> List[CardiacCycle]:
    """One reconstructed target cycle per input cycle.

    The waveform follows the AO-anchored layout the model was trained on, but the
    cycle keeps the input's S1 index and `AnchorKind.S1` tag: the true AO of a
    predicted waveform is unknown, and `pair_cycles` matches these cycles to
    reference AO cycles by that S1 index exactly as it matches ear cycles.
    """
    inputs = prepare_inputs(ear_cycles, profile)
    outputs = forward_batch(model, inputs)
    modality = model.config.target_modality
    result = [
        CardiacCycle(out, cycle.anchor_index_global, AnchorKind.S1, modality)
        for cycle, out in zip(ear_cycles, outputs)
    ]
    logger.info("reconstructed %d %s cycles%s", len(result), modality.value,
                " after equalization" if profile is not None else "")
    return result


def measure_latency(model: ReconstructionModel, n_runs: int = 100, warmup: int = 5) -> Dict[str, float]:
    """Single-cycle inference wall time in milliseconds."""
    rng = np.random.default_rng(0)
    cycle = rng.standard_normal(model.config.input_len)
    for _ in range(warmup):
        forward(model, cycle)
    times = []
    for _ in range(n_runs):
        start = time.perf_counter()
        forward(model, cycle)
        times.append((time.perf_counter() - start) * 1000.0)
    arr = np.asarray(times)
    return {"median_ms": float(np.median(arr)), "p95_ms": float(np.percentile(arr, 95)), "runs": n_runs}
