"""Synthetic paired ear-sound / SCG / GCG sessions with known beat and fiducial ground truth."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import fft as sp_fft
from scipy import signal as sp_signal

from .errors import InvalidConfig
from .fiducial import FIDUCIAL_NAMES, FiducialSet
from .ingestion import PairedSession
from .segmentation import CYCLE_LEN, CYCLE_PRE
from .utils import TARGET_RATE_HZ, atomic_write_json
from .waveform import Modality, SampledSignal

logger = logging.getLogger(__name__)

DEFAULT_FIDUCIAL_OFFSETS_MS = {"mc": 10.0, "im": 30.0, "ao": 55.0, "ma": 80.0, "re": 110.0}
DEFAULT_USER_CHANNEL = (1.0, 0.55, 0.2, -0.1, -0.05)

# (amplitude, gaussian width in ms) per fiducial; AO dominates |amplitude| in both
SCG_TEMPLATE = {"mc": (0.5, 6.0), "im": (-0.4, 6.0), "ao": (1.0, 6.0), "ma": (-0.5, 6.0), "re": (0.6, 6.0)}
GCG_TEMPLATE = {"mc": (0.6, 7.0), "im": (-0.7, 7.0), "ao": (1.0, 7.0), "ma": (-0.6, 7.0), "re": (0.5, 7.0)}

BURST_FREQ_HZ = 30.0
BURST_WIDTH_MS = 15.0
S2_DELAY_MS = 320.0
RESP_RATE_HZ = 0.25
MUSIC_HIGHPASS_HZ = 60.0
MIN_FIDUCIAL_GAP_MS = 4.0


class MotionKind(str, Enum):
    CHEWING = "chewing"
    WALKING = "walking"
    NODDING = "nodding"
    TALKING = "talking"
    BROW = "brow"


class PerturbDimension(str, Enum):
    SESSION = "Session"
    USER = "User"
    DEVICE = "Device"


@dataclass(frozen=True)
class MotionEvent:
    start_s: float
    duration_s: float
    kind: MotionKind

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", MotionKind(self.kind))


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    duration_s: float = 60.0
    heart_rate_bpm: float = 75.0
    hr_jitter_pct: float = 0.0
    fiducial_offsets_ms: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_FIDUCIAL_OFFSETS_MS))
    user_channel: Tuple[float, ...] = DEFAULT_USER_CHANNEL
    device_response: Tuple[float, ...] = (1.0,)
    noise_db: float = -20.0
    music_db: Optional[float] = None
    motion_events: Tuple[MotionEvent, ...] = ()
    noise_seed: Optional[int] = None
    fiducial_jitter_ms: float = 0.0
    resp_mod_pct: float = 10.0
    scg_coupling: float = 0.5
    s2_ratio: float = 0.6
    imu_noise_db: float = -30.0
    user_shift_ms: Tuple[float, float] = (10.0, 30.0)
    rate_hz: float = TARGET_RATE_HZ

    def validate(self) -> None:
        if not 40.0 <= self.heart_rate_bpm <= 110.0:
            raise InvalidConfig(f"heart_rate_bpm must be in [40, 110], got {self.heart_rate_bpm}")
        if self.duration_s <= 0:
            raise InvalidConfig("duration_s must be positive")
        if self.rate_hz <= 0:
            raise InvalidConfig("rate_hz must be positive")
        if set(self.fiducial_offsets_ms) != set(FIDUCIAL_NAMES):
            raise InvalidConfig(f"fiducial_offsets_ms needs keys {FIDUCIAL_NAMES}")
        offsets = [self.fiducial_offsets_ms[name] for name in FIDUCIAL_NAMES]
        if any(b <= a for a, b in zip(offsets, offsets[1:])):
            raise InvalidConfig(f"fiducial offsets must be strictly ordered MC<IM<AO<MA<RE, got {offsets}")
        if len(self.user_channel) == 0 or len(self.device_response) == 0:
            raise InvalidConfig("user_channel and device_response need at least one tap")
        if self.hr_jitter_pct < 0 or self.fiducial_jitter_ms < 0:
            raise InvalidConfig("jitter must be non-negative")

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["fiducial_offsets_ms"] = dict(self.fiducial_offsets_ms)
        out["user_channel"] = list(self.user_channel)
        out["device_response"] = list(self.device_response)
        out["user_shift_ms"] = list(self.user_shift_ms)
        out["motion_events"] = [
            {"start_s": e.start_s, "duration_s": e.duration_s, "kind": e.kind.value} for e in self.motion_events
        ]
        return out

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(payload) - known
        if unknown:
            raise InvalidConfig(f"unknown synth config keys: {sorted(unknown)}")
        data = dict(payload)
        for key in ("user_channel", "device_response", "user_shift_ms"):
            if key in data:
                data[key] = tuple(float(v) for v in data[key])
        if "motion_events" in data:
            data["motion_events"] = tuple(
                e if isinstance(e, MotionEvent) else MotionEvent(**e) for e in data["motion_events"]
            )
        if "fiducial_offsets_ms" in data:
            data["fiducial_offsets_ms"] = {k: float(v) for k, v in data["fiducial_offsets_ms"].items()}
        return cls(**data)


@dataclass
class GroundTruth:
    beat_times_s: List[float]
    fiducial_times_s: List[Dict[str, float]]
    clean_scg: SampledSignal
    clean_gcg: SampledSignal
    clean_ear: SampledSignal

    def fiducial_set(self, beat: int, cycle_start: int) -> FiducialSet:
        """Ground-truth fiducials of `beat` as indices in a cycle starting at `cycle_start`."""
        rate = self.clean_scg.rate_hz
        idx = {k: int(round(t * rate)) - cycle_start for k, t in self.fiducial_times_s[beat].items()}
        return FiducialSet(**idx)

    def ao_index(self, beat: int) -> int:
        return int(round(self.fiducial_times_s[beat]["ao"] * self.clean_scg.rate_hz))

    def clean_cycles(self, modality: Modality = Modality.SCG) -> List[Tuple[int, np.ndarray]]:
        """(beat, 400-sample clean cycle anchored at the true AO) for every beat with a full window."""
        source = self.clean_scg if modality == Modality.SCG else self.clean_gcg
        out = []
        for beat in range(len(self.beat_times_s)):
            start = self.ao_index(beat) - CYCLE_PRE
            if start >= 0 and start + CYCLE_LEN <= len(source):
                out.append((beat, source.samples[start : start + CYCLE_LEN].copy()))
        return out

    def to_json(self) -> Dict[str, Any]:
        return {
            "beat_times_ms": [round(t * 1000.0, 2) for t in self.beat_times_s],
            "fiducials_ms": [{k: round(v * 1000.0, 2) for k, v in f.items()} for f in self.fiducial_times_s],
        }


def _rngs(config: SynthConfig) -> Tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    beat_seq, morph_seq, noise_seq = np.random.SeedSequence(config.seed).spawn(3)
    noise_rng = (
        np.random.default_rng(config.noise_seed) if config.noise_seed is not None else np.random.default_rng(noise_seq)
    )
    return np.random.default_rng(beat_seq), np.random.default_rng(morph_seq), noise_rng


def _beat_times(config: SynthConfig, rng: np.random.Generator) -> List[float]:
    period = 60.0 / config.heart_rate_bpm
    tail_s = max(config.fiducial_offsets_ms.values()) / 1000.0 + 3 * config.fiducial_jitter_ms / 1000.0
    times: List[float] = []
    t = period / 2.0
    while t + tail_s < config.duration_s:
        times.append(t)
        step = period * (1.0 + config.hr_jitter_pct / 100.0 * rng.standard_normal())
        t += float(np.clip(step, 0.3, 2.0))
    return times


def _beat_fiducials(config: SynthConfig, beat_t: float, rng: np.random.Generator) -> Dict[str, float]:
    offsets = np.array([config.fiducial_offsets_ms[name] for name in FIDUCIAL_NAMES], dtype=np.float64)
    if config.fiducial_jitter_ms > 0:
        # AO stays on the beat clock; the other events move relative to it
        jitter = rng.normal(0.0, config.fiducial_jitter_ms, size=offsets.size)
        jitter[FIDUCIAL_NAMES.index("ao")] = 0.0
        offsets = offsets + jitter
        ao = FIDUCIAL_NAMES.index("ao")
        for i in range(ao - 1, -1, -1):
            offsets[i] = min(offsets[i], offsets[i + 1] - MIN_FIDUCIAL_GAP_MS)
        for i in range(ao + 1, offsets.size):
            offsets[i] = max(offsets[i], offsets[i - 1] + MIN_FIDUCIAL_GAP_MS)
    return {name: beat_t + off / 1000.0 for name, off in zip(FIDUCIAL_NAMES, offsets)}


def _add_gaussian(out: np.ndarray, rate: float, center_s: float, amp: float, width_ms: float) -> None:
    sigma = width_ms / 1000.0 * rate
    c = center_s * rate
    lo = max(0, int(np.floor(c - 6 * sigma)))
    hi = min(out.size, int(np.ceil(c + 6 * sigma)) + 1)
    n = np.arange(lo, hi)
    out[lo:hi] += amp * np.exp(-0.5 * ((n - c) / sigma) ** 2)


def _add_burst(out: np.ndarray, rate: float, center_s: float, amp: float) -> None:
    sigma = BURST_WIDTH_MS / 1000.0 * rate
    c = center_s * rate
    lo = max(0, int(np.floor(c - 5 * sigma)))
    hi = min(out.size, int(np.ceil(c + 5 * sigma)) + 1)
    n = np.arange(lo, hi)
    t = (n - c) / rate
    out[lo:hi] += amp * np.exp(-0.5 * ((n - c) / sigma) ** 2) * np.cos(2 * np.pi * BURST_FREQ_HZ * t)


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x**2))) if x.size else 0.0


def _causal_filter(x: np.ndarray, taps: Sequence[float]) -> np.ndarray:
    return sp_signal.lfilter(np.asarray(taps, dtype=np.float64), [1.0], x)


def pink_noise(n: int, rate: float, rng: np.random.Generator, highpass_hz: float = MUSIC_HIGHPASS_HZ) -> np.ndarray:
    """1/f-power noise, highpassed so it sits above the cardiac band."""
    spectrum = sp_fft.rfft(rng.standard_normal(n))
    freqs = sp_fft.rfftfreq(n, d=1.0 / rate)
    scale = np.zeros_like(freqs)
    scale[1:] = 1.0 / np.sqrt(freqs[1:])
    noise = sp_fft.irfft(spectrum * scale, n=n)
    sos = sp_signal.butter(4, highpass_hz, btype="highpass", fs=rate, output="sos")
    return sp_signal.sosfiltfilt(sos, noise)


def motion_artifact(kind: MotionKind, n: int, rate: float, rng: np.random.Generator, scale: float) -> np.ndarray:
    """Interference shaped after the motion taxonomy: chewing, walking, nodding, talking, brow raising."""
    t = np.arange(n) / rate
    duration = n / rate
    if kind == MotionKind.CHEWING:
        chew = 0.5 * (1 + np.sin(2 * np.pi * rng.uniform(1.2, 1.8) * t + rng.uniform(0, 2 * np.pi)))
        noise = rng.standard_normal(n) * (0.3 + chew)
        return 4.0 * scale * noise
    if kind == MotionKind.WALKING:
        step_hz = rng.uniform(1.6, 2.0)
        phase = rng.uniform(0, 2 * np.pi)
        sway = np.sin(2 * np.pi * step_hz * t + phase) + 0.5 * np.sin(4 * np.pi * step_hz * t + 2 * phase)
        impacts = np.zeros(n)
        for k in np.arange(0.0, duration, 1.0 / step_hz):
            _add_gaussian(impacts, rate, k + rng.uniform(0, 0.05), 1.0, 8.0)
        return 3.0 * scale * (sway + impacts + 0.2 * rng.standard_normal(n))
    if kind == MotionKind.NODDING:
        spikes = np.zeros(n)
        k = rng.uniform(0.1, 0.5)
        while k < duration:
            _add_gaussian(spikes, rate, k, rng.choice([-1.0, 1.0]) * rng.uniform(6.0, 10.0), 3.0)
            k += rng.uniform(0.6, 1.0)
        return scale * (spikes + 0.3 * rng.standard_normal(n))
    if kind == MotionKind.TALKING:
        syllables = 0.5 * (1 + np.sin(2 * np.pi * rng.uniform(3.5, 5.0) * t + rng.uniform(0, 2 * np.pi)))
        return 1.5 * scale * rng.standard_normal(n) * (0.4 + syllables)
    if kind == MotionKind.BROW:
        bumps = np.zeros(n)
        k = rng.uniform(0.2, 0.8)
        while k < duration:
            _add_gaussian(bumps, rate, k, rng.uniform(1.5, 2.5), 120.0)
            k += rng.uniform(1.2, 1.8)
        return scale * (2.0 * bumps + 0.8 * rng.standard_normal(n))
    raise InvalidConfig(f"unknown motion kind {kind!r}")


def generate_session(config: SynthConfig) -> Tuple[PairedSession, GroundTruth]:
    """Render one session and its ground truth; deterministic given the config seeds."""
    config.validate()
    rate = config.rate_hz
    n = int(round(config.duration_s * rate))
    beat_rng, morph_rng, noise_rng = _rngs(config)

    beats = _beat_times(config, beat_rng)
    fiducials = [_beat_fiducials(config, t, morph_rng) for t in beats]

    scg = np.zeros(n)
    gcg = np.zeros(n)
    bursts = np.zeros(n)
    for beat_t, fid in zip(beats, fiducials):
        gain = 1.0 + config.resp_mod_pct / 100.0 * np.sin(2 * np.pi * RESP_RATE_HZ * beat_t)
        for name in FIDUCIAL_NAMES:
            amp, width = SCG_TEMPLATE[name]
            _add_gaussian(scg, rate, fid[name], gain * amp, width)
            amp, width = GCG_TEMPLATE[name]
            _add_gaussian(gcg, rate, fid[name], gain * amp, width)
        _add_burst(bursts, rate, fid["mc"], gain)
        _add_burst(bursts, rate, fid["mc"] + S2_DELAY_MS / 1000.0, gain * config.s2_ratio)

    body = config.scg_coupling * _causal_filter(scg, config.user_channel) + bursts
    clean_ear = _causal_filter(body, config.device_response)
    ear_rms = _rms(clean_ear)

    ear = clean_ear + noise_rng.standard_normal(n) * ear_rms * 10 ** (config.noise_db / 20.0)
    if config.music_db is not None:
        music = pink_noise(n, rate, noise_rng)
        ear = ear + music / max(_rms(music), 1e-12) * ear_rms * 10 ** (config.music_db / 20.0)
    for event in config.motion_events:
        lo = max(0, int(round(event.start_s * rate)))
        hi = min(n, int(round((event.start_s + event.duration_s) * rate)))
        if hi > lo:
            ear[lo:hi] += motion_artifact(event.kind, hi - lo, rate, noise_rng, ear_rms)

    imu_scale = 10 ** (config.imu_noise_db / 20.0)
    scg_meas = scg + noise_rng.standard_normal(n) * _rms(scg) * imu_scale
    gcg_meas = gcg + noise_rng.standard_normal(n) * _rms(gcg) * imu_scale

    session = PairedSession(
        ear=SampledSignal(ear, rate, Modality.EAR_SOUND, "left"),
        scg=SampledSignal(scg_meas, rate, Modality.SCG),
        gcg=SampledSignal(gcg_meas, rate, Modality.GCG),
        offset_ms=0.0,
        meta={"source": "synth", "seed": config.seed, "synth": config.to_dict()},
    )
    truth = GroundTruth(
        beat_times_s=beats,
        fiducial_times_s=fiducials,
        clean_scg=SampledSignal(scg, rate, Modality.SCG),
        clean_gcg=SampledSignal(gcg, rate, Modality.GCG),
        clean_ear=SampledSignal(clean_ear, rate, Modality.EAR_SOUND, "left"),
    )
    logger.debug("synth seed=%d: %d beats over %.1f s", config.seed, len(beats), config.duration_s)
    return session, truth


def random_fir(rng: np.random.Generator, taps: int = 9, spread: float = 0.4) -> Tuple[float, ...]:
    """Decaying FIR with a unit leading tap, used for device and body-path colourations."""
    decay = np.exp(-np.arange(taps) / 2.5)
    h = rng.normal(0.0, spread, size=taps) * decay
    h[0] = 1.0
    return tuple(float(v) for v in h)


def perturb(config: SynthConfig, dimension: PerturbDimension, seed: Optional[int] = None) -> SynthConfig:
    """Derive a config that differs from `config` along one variability factor."""
    dimension = PerturbDimension(dimension)
    entropy = [config.seed, list(PerturbDimension).index(dimension)] + ([seed] if seed is not None else [])
    rng = np.random.default_rng(entropy)
    if dimension == PerturbDimension.SESSION:
        gain = rng.uniform(0.9, 1.1)
        return replace(
            config,
            noise_seed=int(rng.integers(0, 2**31 - 1)),
            user_channel=tuple(float(v) * gain for v in config.user_channel),
        )
    if dimension == PerturbDimension.DEVICE:
        return replace(config, device_response=random_fir(rng))

    offsets = dict(config.fiducial_offsets_ms)
    lo, hi = config.user_shift_ms
    delta = rng.uniform(lo, hi) * rng.choice([-1.0, 1.0])
    old_span = offsets["ao"] - offsets["mc"]
    if old_span + delta <= 2 * MIN_FIDUCIAL_GAP_MS:
        delta = abs(delta)
    new_span = old_span + delta
    offsets["im"] = offsets["mc"] + (offsets["im"] - offsets["mc"]) * new_span / old_span
    for name in ("ao", "ma", "re"):
        offsets[name] += delta
    return replace(config, user_channel=random_fir(rng, taps=5), fiducial_offsets_ms=offsets)


def write_truth(path: str | Path, truth: GroundTruth, provenance: Optional[Mapping[str, Any]] = None) -> None:
    payload = truth.to_json()
    if provenance:
        payload["provenance"] = dict(provenance)
    atomic_write_json(path, payload)


def generate_gate_corpus(
    n_static: int = 132, n_motion: int = 176, seed: int = 0, window_s: float = 10.0
) -> Tuple[List[SampledSignal], List[str]]:
    """Labelled 10 s ear windows: clean static recordings and the five motion kinds in rotation."""
    rng = np.random.default_rng(seed)
    kinds = list(MotionKind)
    windows: List[SampledSignal] = []
    labels: List[str] = []
    for i in range(n_static + n_motion):
        is_motion = i >= n_static
        events: Tuple[MotionEvent, ...] = ()
        if is_motion:
            events = (MotionEvent(0.0, window_s, kinds[(i - n_static) % len(kinds)]),)
        cfg = SynthConfig(
            seed=int(rng.integers(0, 2**31 - 1)),
            duration_s=window_s,
            heart_rate_bpm=float(rng.uniform(55.0, 100.0)),
            noise_db=float(rng.uniform(-25.0, -10.0)),
            motion_events=events,
        )
        session, _ = generate_session(cfg)
        windows.append(session.ear)
        labels.append("Motion" if is_motion else "Static")
    return windows, labels
