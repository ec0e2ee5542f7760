"""Waveform types and conditioning: resampling, Butterworth bandpass, z-score, FFT."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from fractions import Fraction
from typing import Optional, Tuple

import numpy as np
from scipy import fft as sp_fft
from scipy import signal as sp_signal

from .errors import EmptySignal, InvalidBand, NonPositiveRate, SignalTooShort
from .utils import TARGET_RATE_HZ

KAISER_BETA = 8.6
TAPS_PER_PHASE = 64
PAD_SECONDS = 1.0
ZSCORE_FLOOR = 1e-12
MAX_POLYPHASE_FACTOR = 10_000
APPROX_DENOMINATOR = 1000


class Modality(str, Enum):
    EAR_SOUND = "EarSound"
    SCG = "SCG"
    GCG = "GCG"
    OTHER = "Other"


@dataclass(frozen=True, eq=False)
class SampledSignal:
    """Uniformly sampled real waveform tagged with its rate and modality."""

    samples: np.ndarray
    rate_hz: float
    modality: Modality = Modality.OTHER
    channel_id: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.rate_hz > 0:
            raise NonPositiveRate(f"rate_hz must be positive, got {self.rate_hz}")
        arr = np.array(self.samples, dtype=np.float64).reshape(-1)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "modality", Modality(self.modality))

    def __len__(self) -> int:
        return int(self.samples.shape[0])

    @property
    def duration_s(self) -> float:
        return len(self) / self.rate_hz

    def with_samples(self, samples: np.ndarray, rate_hz: Optional[float] = None) -> "SampledSignal":
        return replace(self, samples=samples, rate_hz=self.rate_hz if rate_hz is None else rate_hz)

    def slice(self, start: int, stop: int) -> "SampledSignal":
        return self.with_samples(self.samples[start:stop])


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Full complex transform of a real or complex sequence."""

    bins: np.ndarray
    rate_hz: float
    length_n: int

    @property
    def frequencies_hz(self) -> np.ndarray:
        return sp_fft.fftfreq(self.length_n, d=1.0 / self.rate_hz)


@dataclass(frozen=True)
class BandpassSpec:
    low_hz: float = 5.0
    high_hz: float = 45.0
    prototype_order: int = 4

    def validate(self, rate_hz: float) -> None:
        if not (0 < self.low_hz < self.high_hz < rate_hz / 2):
            raise InvalidBand(
                f"band {self.low_hz}-{self.high_hz} Hz invalid for rate {rate_hz} Hz"
            )
        if self.prototype_order < 1:
            raise InvalidBand(f"prototype_order must be >= 1, got {self.prototype_order}")

    def settling_samples(self, rate_hz: float) -> int:
        """Impulse-response settling length, taken as order / low cutoff seconds."""
        return int(math.ceil(self.prototype_order / self.low_hz * rate_hz))


def _as_array(x: object) -> np.ndarray:
    if isinstance(x, SampledSignal):
        return x.samples
    samples = getattr(x, "samples", x)
    return np.asarray(samples)


def polyphase_factors(source_hz: float, target_hz: float) -> Tuple[int, int]:
    """Exact (up, down) for integer rates; a bounded rational approximation otherwise."""
    if float(source_hz).is_integer() and float(target_hz).is_integer():
        g = math.gcd(int(source_hz), int(target_hz))
        up, down = int(target_hz) // g, int(source_hz) // g
        if max(up, down) <= MAX_POLYPHASE_FACTOR:
            return up, down
    ratio = Fraction(target_hz / source_hz).limit_denominator(APPROX_DENOMINATOR)
    return ratio.numerator, ratio.denominator


def resample(signal: SampledSignal, target_rate_hz: float) -> SampledSignal:
    """Polyphase windowed-sinc resampling (Kaiser window, 64 taps per phase)."""
    if len(signal) == 0:
        raise EmptySignal("cannot resample an empty signal")
    if not target_rate_hz > 0:
        raise NonPositiveRate(f"target_rate_hz must be positive, got {target_rate_hz}")
    if target_rate_hz == signal.rate_hz:
        return signal.with_samples(signal.samples.copy())

    up, down = polyphase_factors(signal.rate_hz, target_rate_hz)
    max_rate = max(up, down)
    half_len = TAPS_PER_PHASE // 2 * max_rate
    taps = sp_signal.firwin(2 * half_len + 1, 1.0 / max_rate, window=("kaiser", KAISER_BETA))
    out = sp_signal.resample_poly(signal.samples, up, down, window=taps, padtype="line")
    return signal.with_samples(out, rate_hz=float(target_rate_hz))


def interpolate_uniform(
    timestamps_s: np.ndarray, values: np.ndarray, rate_hz: float = TARGET_RATE_HZ
) -> np.ndarray:
    """Linearly interpolate irregular samples onto a uniform grid spanning [first, last]."""
    t = np.asarray(timestamps_s, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if t.size == 0:
        raise EmptySignal("no samples to interpolate")
    span = t[-1] - t[0]
    # small tolerance so an exact-rate grid keeps its last sample
    n = int(math.floor(span * rate_hz + 1e-6)) + 1
    grid = t[0] + np.arange(n) / rate_hz
    return np.interp(grid, t, v)


def bandpass(signal: SampledSignal, spec: BandpassSpec = BandpassSpec()) -> SampledSignal:
    """Zero-phase Butterworth bandpass with 1 s reflective padding."""
    spec.validate(signal.rate_hz)
    n = len(signal)
    if n < 3 * spec.settling_samples(signal.rate_hz):
        raise SignalTooShort(
            f"{n} samples is shorter than 3x the filter settling length "
            f"({spec.settling_samples(signal.rate_hz)} samples)"
        )
    sos = sp_signal.butter(
        spec.prototype_order, [spec.low_hz, spec.high_hz], btype="bandpass", fs=signal.rate_hz, output="sos"
    )
    pad = min(int(round(PAD_SECONDS * signal.rate_hz)), n - 1)
    padded = np.pad(signal.samples, pad, mode="reflect")
    filtered = sp_signal.sosfiltfilt(sos, padded, padtype=None)
    return signal.with_samples(filtered[pad : pad + n])


def zscore_array(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise EmptySignal("cannot z-score an empty sequence")
    sigma = x.std()
    if sigma < ZSCORE_FLOOR:
        return np.zeros_like(x)
    return (x - x.mean()) / sigma


def zscore(signal: SampledSignal) -> SampledSignal:
    """Zero mean, unit population variance; silent input maps to zeros."""
    return signal.with_samples(zscore_array(signal.samples))


def fft(x, rate_hz: Optional[float] = None) -> Spectrum:
    """Full complex FFT at the natural length (no zero padding)."""
    arr = _as_array(x)
    if arr.size == 0:
        raise EmptySignal("cannot transform an empty sequence")
    rate = rate_hz if rate_hz is not None else getattr(x, "rate_hz", TARGET_RATE_HZ)
    return Spectrum(bins=sp_fft.fft(arr), rate_hz=float(rate), length_n=int(arr.size))


def ifft(spectrum: Spectrum) -> np.ndarray:
    """Inverse of `fft`; returns the complex sequence."""
    if spectrum.length_n == 0:
        raise EmptySignal("cannot invert an empty spectrum")
    return sp_fft.ifft(spectrum.bins)


def condition(
    signal: SampledSignal,
    spec: BandpassSpec = BandpassSpec(),
    rate_hz: float = TARGET_RATE_HZ,
) -> SampledSignal:
    """Resample, bandpass and z-score: the shared front end of every stage."""
    return zscore(bandpass(resample(signal, rate_hz), spec))
