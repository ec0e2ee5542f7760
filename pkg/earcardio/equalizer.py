"""Cross-device equalization of ear-sound cycles with regularized spectral-ratio weights."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from .errors import (
    DegenerateTarget,
    IncompatibleCycles,
    RecordingNotFound,
    SchemaMismatch,
    ShapeMismatch,
    TooFewCycles,
    ZeroOutput,
)
from .segmentation import CYCLE_LEN, CardiacCycle
from .utils import atomic_write_json
from .waveform import Spectrum, fft, ifft

logger = logging.getLogger(__name__)

PROFILE_SCHEMA = 1
ZERO_OUTPUT_NORM = 1e-12
IDENTITY_EPSILON = 1e-12


@dataclass(frozen=True, eq=False)
class EqualizerProfile:
    """Complex weights H(f) over one cycle length plus the reference energy used for rescaling."""

    weights: np.ndarray
    epsilon: float
    ref_energy: float
    ref_device_id: str = "reference"
    tgt_device_id: str = "target"

    def __post_init__(self) -> None:
        w = np.array(self.weights, dtype=np.complex128).reshape(-1)
        if w.size != CYCLE_LEN or not np.all(np.isfinite(w)):
            raise SchemaMismatch(f"equalizer weights must be {CYCLE_LEN} finite values, got {w.size}")
        if not self.epsilon > 0:
            raise SchemaMismatch(f"epsilon must be positive, got {self.epsilon}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def identity(cls, ref_energy: float = 1.0, device_id: str = "identity") -> "EqualizerProfile":
        return cls(np.ones(CYCLE_LEN, dtype=np.complex128), IDENTITY_EPSILON, ref_energy, device_id, device_id)

    def to_dict(self, provenance: Optional[Mapping[str, Any]] = None) -> dict:
        out = {
            "schema_version": PROFILE_SCHEMA,
            "epsilon": self.epsilon,
            "ref_energy": self.ref_energy,
            "ref_device_id": self.ref_device_id,
            "tgt_device_id": self.tgt_device_id,
            "weights": [[float(z.real), float(z.imag)] for z in self.weights],
        }
        if provenance is not None:
            out["provenance"] = dict(provenance)
        return out

    def save(self, path: str | Path, provenance: Optional[Mapping[str, Any]] = None) -> None:
        atomic_write_json(path, self.to_dict(provenance))

    @classmethod
    def load(cls, path: str | Path) -> "EqualizerProfile":
        p = Path(path)
        if not p.exists():
            raise RecordingNotFound(f"equalizer profile not found: {p}")
        data = json.loads(p.read_text(encoding="utf-8"))
        if data.get("schema_version") != PROFILE_SCHEMA:
            raise SchemaMismatch(f"{p}: unsupported profile schema {data.get('schema_version')!r}")
        pairs = np.asarray(data["weights"], dtype=np.float64)
        return cls(
            weights=pairs[:, 0] + 1j * pairs[:, 1],
            epsilon=float(data["epsilon"]),
            ref_energy=float(data["ref_energy"]),
            ref_device_id=data.get("ref_device_id", "reference"),
            tgt_device_id=data.get("tgt_device_id", "target"),
        )


def mean_cycle(cycles: Sequence[CardiacCycle], n: int = 10) -> CardiacCycle:
    """Elementwise mean of the first `n` cycles."""
    if len(cycles) < n:
        raise TooFewCycles(f"need {n} cycles for a mean waveform, got {len(cycles)}")
    head = list(cycles[:n])
    first = head[0]
    for c in head[1:]:
        if c.modality != first.modality or c.anchor_kind != first.anchor_kind:
            raise IncompatibleCycles("mean cycle needs a single modality and anchor kind")
    return first.with_samples(np.mean([c.samples for c in head], axis=0))


def _check_len(x: np.ndarray, what: str) -> None:
    if x.size != CYCLE_LEN:
        raise ShapeMismatch(f"{what} must have {CYCLE_LEN} samples, got {x.size}")


def compute_equalizer(
    ref_mean: CardiacCycle,
    tgt_mean: CardiacCycle,
    epsilon_rel: float = 1e-6,
    ref_device_id: str = "reference",
    tgt_device_id: str = "target",
) -> EqualizerProfile:
    """H = X_ref * conj(X_tgt) / (|X_tgt|^2 + eps) over the full circular transform."""
    ref = ref_mean.samples
    tgt = tgt_mean.samples
    _check_len(ref, "reference mean")
    _check_len(tgt, "target mean")
    if not np.any(tgt):
        raise DegenerateTarget("target mean cycle is all zeros")
    x_ref = fft(ref).bins
    x_tgt = fft(tgt).bins
    power = np.abs(x_tgt) ** 2
    epsilon = epsilon_rel * float(power.max())
    weights = x_ref * np.conj(x_tgt) / (power + epsilon)
    profile = EqualizerProfile(weights, epsilon, float(np.linalg.norm(ref)), ref_device_id, tgt_device_id)
    logger.debug("equalizer %s -> %s: eps %.3g, ref energy %.3f", tgt_device_id, ref_device_id, epsilon, profile.ref_energy)
    return profile


def build_profile(
    ref_cycles: Sequence[CardiacCycle],
    tgt_cycles: Sequence[CardiacCycle],
    n: int = 10,
    epsilon_rel: float = 1e-6,
    ref_device_id: str = "reference",
    tgt_device_id: str = "target",
) -> EqualizerProfile:
    return compute_equalizer(
        mean_cycle(ref_cycles, n), mean_cycle(tgt_cycles, n), epsilon_rel, ref_device_id, tgt_device_id
    )


def equalize_unscaled(profile: EqualizerProfile, samples: np.ndarray) -> np.ndarray:
    """The linear part of the map, before energy normalization."""
    x = np.asarray(samples, dtype=np.float64)
    _check_len(x, "cycle")
    spectrum = fft(x)
    out = ifft(Spectrum(profile.weights * spectrum.bins, spectrum.rate_hz, spectrum.length_n))
    return out.real


def apply_equalizer(profile: EqualizerProfile, cycle: CardiacCycle) -> CardiacCycle:
    """Equalize one cycle and rescale it so its L2 norm equals the reference energy."""
    x_hat = equalize_unscaled(profile, cycle.samples)
    norm = float(np.linalg.norm(x_hat))
    if norm < ZERO_OUTPUT_NORM:
        raise ZeroOutput(f"equalized cycle at {cycle.anchor_index_global} has zero energy")
    return cycle.with_samples(x_hat * (profile.ref_energy / norm))
