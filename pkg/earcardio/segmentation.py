"""Anchor detection, S1/AO correction, fixed 800 ms cycle extraction, SNR scoring and cycle pairing."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy import signal as sp_signal

from .errors import NoAnchors, NoChannels, NoPeaksFound, RecordingNotFound, SignalTooShort
from .fiducial import local_maxima
from .utils import TARGET_RATE_HZ, atomic_write_bytes, atomic_write_json, ms_to_samples
from .waveform import Modality, SampledSignal

logger = logging.getLogger(__name__)

CYCLE_LEN = 400
CYCLE_PRE = 100
MIN_SPACING_S = 0.55
ENVELOPE_SMOOTH_MS = 50.0
ROLLING_MAX_S = 2.0
PEAK_FRACTION = 0.4
ENERGY_WINDOW_MS = 400.0
S2_SEARCH_MS = (450.0, 150.0)
AO_WINDOW_MS = 200.0
NEIGHBOUR_REACH_MS = 40.0
SNR_REGION_MS = (-50.0, 350.0)
ZERO_NOISE_FLOOR = 1e-15
ZERO_NOISE_SNR_DB = 100.0
PAIR_WINDOW_MS = 200.0


class AnchorKind(str, Enum):
    S1 = "S1"
    AO = "AO"


@dataclass(frozen=True, eq=False)
class CardiacCycle:
    """Fixed 400-sample window with its anchor at local index 100."""

    samples: np.ndarray
    anchor_index_global: int
    anchor_kind: AnchorKind
    modality: Modality

    def __post_init__(self) -> None:
        arr = np.array(self.samples, dtype=np.float64).reshape(-1)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "anchor_kind", AnchorKind(self.anchor_kind))
        object.__setattr__(self, "modality", Modality(self.modality))

    def __len__(self) -> int:
        return int(self.samples.shape[0])

    def with_samples(self, samples: np.ndarray) -> "CardiacCycle":
        return CardiacCycle(samples, self.anchor_index_global, self.anchor_kind, self.modality)


@dataclass(frozen=True)
class SnrReport:
    p_signal: float
    p_noise: float
    snr_db: float


def detection_envelope(signal: SampledSignal) -> np.ndarray:
    """Smoothed energy for ear sounds; the filtered amplitude itself for SCG/GCG."""
    x = signal.samples
    if signal.modality == Modality.EAR_SOUND:
        width = max(1, ms_to_samples(ENVELOPE_SMOOTH_MS, signal.rate_hz))
        return ndimage.uniform_filter1d(x**2, size=width, mode="nearest")
    return x.copy()


def detect_anchor_peaks(signal: SampledSignal, min_spacing_s: float = MIN_SPACING_S) -> List[int]:
    """Envelope maxima above 0.4x the rolling 2 s maximum, greedily spaced by `min_spacing_s`."""
    if signal.duration_s < 2.0:
        raise SignalTooShort(f"need at least 2 s for peak detection, got {signal.duration_s:.2f} s")
    env = detection_envelope(signal)
    rolling = ndimage.maximum_filter1d(env, size=max(1, int(round(ROLLING_MAX_S * signal.rate_hz))), mode="nearest")
    height = np.maximum(PEAK_FRACTION * rolling, np.finfo(np.float64).tiny)
    distance = int(np.ceil(min_spacing_s * signal.rate_hz - 1e-9))
    peaks, _ = sp_signal.find_peaks(env, height=height, distance=max(1, distance))
    if peaks.size == 0:
        raise NoPeaksFound("no envelope peaks above the detection threshold")
    return [int(p) for p in peaks]


def disambiguate_s1(signal: SampledSignal, anchors: Sequence[int]) -> List[int]:
    """Move anchors that locked onto S2 back to the preceding S1; drop anchors near the edges."""
    rate = signal.rate_hz
    x = signal.samples
    win = ms_to_samples(ENERGY_WINDOW_MS, rate)
    far, near = (ms_to_samples(ms, rate) for ms in S2_SEARCH_MS)
    env = detection_envelope(signal)
    corrected: List[int] = []
    for a in anchors:
        if a - win < 0 or a + win > x.size:
            logger.debug("anchor %d dropped: incomplete energy windows", a)
            continue
        left = float(np.mean(x[a - win : a] ** 2))
        right = float(np.mean(x[a : a + win] ** 2))
        if right <= left:
            lo, hi = max(0, a - far), a - near
            a = lo + int(np.argmax(env[lo : hi + 1]))
            logger.debug("S2 lock corrected to %d", a)
        corrected.append(int(a))
    return sorted(set(corrected))


def _refine_once(x: np.ndarray, candidate: int, half: int, reach: int, bounds: Tuple[int, int]) -> int:
    lo = max(0, candidate - half, bounds[0])
    hi = min(x.size - 1, candidate + half, bounds[1])
    peaks = local_maxima(x[lo : hi + 1]) + lo
    if peaks.size == 0:
        return candidate
    scores = []
    for k, p in enumerate(peaks):
        score = x[p]
        if k > 0 and p - peaks[k - 1] <= reach:
            score += x[peaks[k - 1]]
        if k + 1 < peaks.size and peaks[k + 1] - p <= reach:
            score += x[peaks[k + 1]]
        scores.append(score)
    return int(peaks[int(np.argmax(scores))])


def refine_ao(signal: SampledSignal, candidate_index: int, max_iter: int = 8) -> int:
    """Pick the local maximum in a 200 ms window whose summed neighbourhood amplitude is largest.

    Neighbour peaks count only within 40 ms. Each pass re-centres on the current pick but only
    accepts peaks inside the window around `candidate_index`, so the result never leaves it.
    """
    x = signal.samples
    half = ms_to_samples(AO_WINDOW_MS / 2.0, signal.rate_hz)
    reach = ms_to_samples(NEIGHBOUR_REACH_MS, signal.rate_hz)
    current = int(candidate_index)
    bounds = (current - half, current + half)
    seen = {current}
    for _ in range(max_iter):
        nxt = _refine_once(x, current, half, reach, bounds)
        if nxt == current:
            return current
        if nxt in seen:
            logger.warning("AO refinement oscillates near %d; keeping %d", candidate_index, nxt)
            return nxt
        seen.add(nxt)
        current = nxt
    return current


def extract_cycles(
    signal: SampledSignal, anchors: Sequence[int], kind: AnchorKind = AnchorKind.S1
) -> List[CardiacCycle]:
    """One 400-sample cycle per anchor whose [anchor-100, anchor+300) window fits in the signal."""
    x = signal.samples
    cycles = []
    for a in anchors:
        start = int(a) - CYCLE_PRE
        if start < 0 or start + CYCLE_LEN > x.size:
            continue
        cycles.append(CardiacCycle(x[start : start + CYCLE_LEN].copy(), int(a), kind, signal.modality))
    return cycles


def _region_powers(x: np.ndarray, anchors: Sequence[int], rate: float) -> Tuple[float, float]:
    lo_off, hi_off = (ms_to_samples(ms, rate) for ms in SNR_REGION_MS)
    mask = np.zeros(x.size, dtype=bool)
    for a in anchors:
        mask[max(0, a + lo_off) : min(x.size, a + hi_off)] = True
    sq = x**2
    p_signal = float(sq[mask].mean()) if mask.any() else 0.0
    p_noise = float(sq[~mask].mean()) if (~mask).any() else 0.0
    return p_signal, p_noise


def _report(p_signal: float, p_noise: float) -> SnrReport:
    if p_noise < ZERO_NOISE_FLOOR:
        logger.warning("noise power %.3g below floor; reporting %.0f dB", p_noise, ZERO_NOISE_SNR_DB)
        return SnrReport(p_signal, p_noise, ZERO_NOISE_SNR_DB)
    if p_signal <= 0.0:
        return SnrReport(p_signal, p_noise, float("-inf"))
    return SnrReport(p_signal, p_noise, 10.0 * float(np.log10(p_signal / p_noise)))


def compute_snr(signal: SampledSignal, s1_anchors: Sequence[int]) -> SnrReport:
    """Mean-square power of the [S1-50, S1+350] ms regions against everything else."""
    if len(s1_anchors) < 2:
        raise NoAnchors(f"need at least 2 S1 anchors, got {len(s1_anchors)}")
    return _report(*_region_powers(signal.samples, s1_anchors, signal.rate_hz))


def cycle_snr(cycle: CardiacCycle, rate_hz: float = TARGET_RATE_HZ) -> SnrReport:
    """The same region rule applied inside one S1-anchored cycle."""
    return _report(*_region_powers(cycle.samples, [CYCLE_PRE], rate_hz))


def filter_by_snr(
    cycles_with_snr: Sequence[Tuple[CardiacCycle, SnrReport]], threshold_db: float = 7.0
) -> List[CardiacCycle]:
    kept = [c for c, snr in cycles_with_snr if snr.snr_db >= threshold_db]
    logger.info("SNR filter kept %d of %d cycles (>= %.1f dB)", len(kept), len(cycles_with_snr), threshold_db)
    return kept


def select_channel(left: Optional[SnrReport] = None, right: Optional[SnrReport] = None) -> str:
    if left is None and right is None:
        raise NoChannels("no ear channel available")
    if right is None:
        return "left"
    if left is None:
        return "right"
    return "left" if left.snr_db >= right.snr_db else "right"


def pair_cycles(
    ear_cycles: Sequence[CardiacCycle], target_cycles: Sequence[CardiacCycle], rate_hz: float = TARGET_RATE_HZ
) -> List[Tuple[CardiacCycle, CardiacCycle]]:
    """Pair each S1 cycle with the first unused AO cycle whose anchor lies in [S1, S1+200 ms]."""
    window = ms_to_samples(PAIR_WINDOW_MS, rate_hz)
    targets = sorted(target_cycles, key=lambda c: c.anchor_index_global)
    used = [False] * len(targets)
    pairs = []
    for ear in sorted(ear_cycles, key=lambda c: c.anchor_index_global):
        s1 = ear.anchor_index_global
        for j, tgt in enumerate(targets):
            if used[j]:
                continue
            if s1 <= tgt.anchor_index_global <= s1 + window:
                used[j] = True
                pairs.append((ear, tgt))
                break
            if tgt.anchor_index_global > s1 + window:
                break
    return pairs


def segment_ear(signal: SampledSignal) -> List[CardiacCycle]:
    """Detect, S1-correct and cut an already conditioned ear-sound signal."""
    anchors = disambiguate_s1(signal, detect_anchor_peaks(signal))
    return extract_cycles(signal, anchors, AnchorKind.S1)


def segment_target(signal: SampledSignal) -> List[CardiacCycle]:
    """Detect, AO-refine and cut an already conditioned SCG/GCG signal."""
    anchors = sorted({refine_ao(signal, a) for a in detect_anchor_peaks(signal)})
    return extract_cycles(signal, anchors, AnchorKind.AO)


def save_cycles(
    directory: str | Path,
    cycles: Sequence[CardiacCycle],
    snrs: Optional[Sequence[Optional[SnrReport]]] = None,
    extra: Optional[Mapping[str, Any]] = None,
) -> None:
    """Write `cycles.f32` (concatenated little-endian rows) and `cycles.json` (anchors, kinds, SNRs)."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    block = np.stack([c.samples for c in cycles]) if cycles else np.zeros((0, CYCLE_LEN))
    atomic_write_bytes(out / "cycles.f32", block.astype("<f4").tobytes())
    meta: Dict[str, Any] = {
        "cycle_len": CYCLE_LEN,
        "anchors": [c.anchor_index_global for c in cycles],
        "kinds": [c.anchor_kind.value for c in cycles],
        "modality": cycles[0].modality.value if cycles else Modality.OTHER.value,
        "snr_db": [None if s is None else s.snr_db for s in snrs] if snrs is not None else None,
    }
    meta.update(extra or {})
    atomic_write_json(out / "cycles.json", meta)


def load_cycles(directory: str | Path) -> List[CardiacCycle]:
    src = Path(directory)
    if not (src / "cycles.json").exists():
        raise RecordingNotFound(f"no cycle set at {src}")
    meta = json.loads((src / "cycles.json").read_text(encoding="utf-8"))
    block = np.fromfile(src / "cycles.f32", dtype="<f4").reshape(-1, meta.get("cycle_len", CYCLE_LEN))
    modality = Modality(meta["modality"])
    return [
        CardiacCycle(row.astype(np.float64), int(a), AnchorKind(k), modality)
        for row, a, k in zip(block, meta["anchors"], meta["kinds"])
    ]
