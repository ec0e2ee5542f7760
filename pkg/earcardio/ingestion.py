"""Read ear audio and IMU recordings, place them on the 500 Hz grid and align them by tap events."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import signal as sp_signal
from scipy.io import wavfile

from .errors import (
    CorruptHeader,
    NonMonotonicTimestamps,
    RecordingNotFound,
    SchemaMismatch,
    SignalTooShort,
    TapsNotFound,
    UnsupportedEncoding,
)
from .utils import TARGET_RATE_HZ, atomic_write_bytes, atomic_write_json, ms_to_samples
from .waveform import BandpassSpec, Modality, SampledSignal, bandpass, interpolate_uniform, resample

logger = logging.getLogger(__name__)

IMU_COLUMNS = ("t_ns", "ax", "ay", "az", "gx", "gy", "gz")
DEFAULT_AXIS_MAP = {"scg": "az", "gcg": "gy"}
CHANNEL_NAMES = ("left", "right")
TAP_SEARCH_S = 10.0
TAP_MIN_SEPARATION_MS = 200.0
TAP_MEDIAN_FACTOR = 8.0
MIN_IMU_SPAN_S = 1.0


@dataclass
class ImuRecord:
    timestamps_ns: np.ndarray
    accel_xyz: Tuple[np.ndarray, np.ndarray, np.ndarray]
    gyro_xyz: Tuple[np.ndarray, np.ndarray, np.ndarray]

    def axis(self, name: str) -> np.ndarray:
        lookup = {
            "ax": self.accel_xyz[0],
            "ay": self.accel_xyz[1],
            "az": self.accel_xyz[2],
            "gx": self.gyro_xyz[0],
            "gy": self.gyro_xyz[1],
            "gz": self.gyro_xyz[2],
        }
        if name not in lookup:
            raise SchemaMismatch(f"unknown IMU axis {name!r}; expected one of {sorted(lookup)}")
        return lookup[name]

    @property
    def span_s(self) -> float:
        return float(self.timestamps_ns[-1] - self.timestamps_ns[0]) / 1e9


@dataclass
class PairedSession:
    """Ear sound, SCG and GCG on a shared 500 Hz timebase."""

    ear: SampledSignal
    scg: SampledSignal
    gcg: SampledSignal
    offset_ms: float = 0.0
    meta: Dict[str, Any] = field(default_factory=dict)
    ear_right: Optional[SampledSignal] = None

    def ear_channels(self) -> Dict[str, SampledSignal]:
        channels = {self.ear.channel_id or "left": self.ear}
        if self.ear_right is not None:
            channels[self.ear_right.channel_id or "right"] = self.ear_right
        return channels

    def save(self, directory: str | Path, provenance: Optional[Mapping[str, Any]] = None) -> None:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        ears = [self.ear] + ([self.ear_right] if self.ear_right is not None else [])
        write_wav(out / "ear.wav", ears)
        atomic_write_bytes(out / "scg.f32", np.asarray(self.scg.samples, dtype="<f4").tobytes())
        atomic_write_bytes(out / "gcg.f32", np.asarray(self.gcg.samples, dtype="<f4").tobytes())
        meta = dict(self.meta)
        meta["offset_ms"] = self.offset_ms
        meta["rate_hz"] = self.ear.rate_hz
        if provenance:
            meta["provenance"] = dict(provenance)
        atomic_write_json(out / "meta.json", meta)

    @classmethod
    def load(cls, directory: str | Path) -> "PairedSession":
        src = Path(directory)
        meta_path = src / "meta.json"
        if not meta_path.exists():
            raise RecordingNotFound(f"no session at {src} (missing meta.json)")
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        ears = read_wav(src / "ear.wav")
        ear = replace_modality(ears[0], Modality.EAR_SOUND)
        ear_right = replace_modality(ears[1], Modality.EAR_SOUND) if len(ears) > 1 else None
        rate = float(meta.get("rate_hz", ear.rate_hz))
        scg = SampledSignal(np.fromfile(src / "scg.f32", dtype="<f4"), rate, Modality.SCG)
        gcg = SampledSignal(np.fromfile(src / "gcg.f32", dtype="<f4"), rate, Modality.GCG)
        offset = float(meta.pop("offset_ms", 0.0))
        meta.pop("rate_hz", None)
        return cls(ear=ear, scg=scg, gcg=gcg, offset_ms=offset, meta=meta, ear_right=ear_right)


def replace_modality(sig: SampledSignal, modality: Modality) -> SampledSignal:
    return SampledSignal(sig.samples, sig.rate_hz, modality, sig.channel_id)


def _scale_pcm(data: np.ndarray) -> np.ndarray:
    if data.dtype == np.uint8:
        return (data.astype(np.float64) - 128.0) / 128.0
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    if data.dtype == np.int32:
        return data.astype(np.float64) / 2147483648.0
    if np.issubdtype(data.dtype, np.floating):
        return data.astype(np.float64)
    raise UnsupportedEncoding(f"unsupported WAV sample type {data.dtype}")


def read_wav(path: str | Path) -> List[SampledSignal]:
    """Read a PCM or IEEE-float WAV file into one signal per channel, scaled to [-1, 1]."""
    p = Path(path)
    if not p.is_file():
        raise RecordingNotFound(f"WAV file not found: {p}")
    with open(p, "rb") as f:
        head = f.read(12)
    if len(head) < 12 or head[:4] != b"RIFF" or head[8:12] != b"WAVE":
        raise CorruptHeader(f"{p} is not a RIFF/WAVE file")
    try:
        rate, data = wavfile.read(p)
    except ValueError as exc:
        raise UnsupportedEncoding(f"{p}: {exc}") from exc
    scaled = _scale_pcm(data)
    if scaled.ndim == 1:
        return [SampledSignal(scaled, float(rate), Modality.EAR_SOUND)]
    if scaled.shape[1] > 2:
        raise UnsupportedEncoding(f"{p}: {scaled.shape[1]} channels; only mono or stereo supported")
    return [
        SampledSignal(scaled[:, i], float(rate), Modality.EAR_SOUND, CHANNEL_NAMES[i])
        for i in range(scaled.shape[1])
    ]


def write_wav(path: str | Path, signals: Sequence[SampledSignal], encoding: str = "float32") -> None:
    """Write one or two equal-length signals as an IEEE-float (default) or 16-bit WAV."""
    rate = signals[0].rate_hz
    data = np.stack([s.samples for s in signals], axis=1) if len(signals) > 1 else signals[0].samples
    if encoding == "float32":
        data = data.astype(np.float32)
    elif encoding == "int16":
        data = np.clip(np.round(data * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise UnsupportedEncoding(f"unknown WAV encoding {encoding!r}")
    buf = io.BytesIO()
    wavfile.write(buf, int(round(rate)), data)
    atomic_write_bytes(path, buf.getvalue())


def parse_imu_csv(path: str | Path) -> ImuRecord:
    p = Path(path)
    if not p.is_file():
        raise RecordingNotFound(f"IMU file not found: {p}")
    with open(p, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != IMU_COLUMNS:
            raise SchemaMismatch(f"{p}: expected header {','.join(IMU_COLUMNS)}, got {header}")
        t_ns: List[int] = []
        cols: List[List[float]] = [[] for _ in range(6)]
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(IMU_COLUMNS):
                raise SchemaMismatch(f"{p}:{lineno}: expected {len(IMU_COLUMNS)} fields, got {len(row)}")
            try:
                t_ns.append(int(row[0]))
                for i in range(6):
                    cols[i].append(float(row[i + 1]))
            except ValueError as exc:
                raise SchemaMismatch(f"{p}:{lineno}: {exc}") from exc
    ts = np.asarray(t_ns, dtype=np.int64)
    if ts.size < 2:
        raise SignalTooShort(f"{p}: fewer than two IMU rows")
    if np.any(np.diff(ts) < 0):
        bad = int(np.argmax(np.diff(ts) < 0)) + 3
        raise NonMonotonicTimestamps(f"{p}: timestamps decrease at line {bad}")
    arrays = [np.asarray(c, dtype=np.float64) for c in cols]
    return ImuRecord(ts, (arrays[0], arrays[1], arrays[2]), (arrays[3], arrays[4], arrays[5]))


def read_imu_csv(
    path: str | Path, axis_map: Optional[Mapping[str, str]] = None, rate_hz: float = TARGET_RATE_HZ
) -> Tuple[SampledSignal, SampledSignal]:
    """Read the IMU CSV and return (SCG, GCG) linearly interpolated onto a uniform grid."""
    record = parse_imu_csv(path)
    if record.span_s < MIN_IMU_SPAN_S:
        raise SignalTooShort(f"{path}: IMU span {record.span_s:.3f} s is below {MIN_IMU_SPAN_S} s")
    axes = dict(DEFAULT_AXIS_MAP)
    axes.update(axis_map or {})
    t_s = (record.timestamps_ns - record.timestamps_ns[0]).astype(np.float64) / 1e9
    scg = interpolate_uniform(t_s, record.axis(axes["scg"]), rate_hz)
    gcg = interpolate_uniform(t_s, record.axis(axes["gcg"]), rate_hz)
    logger.debug("IMU %s: %d rows over %.2f s -> %d samples", path, t_s.size, record.span_s, scg.size)
    return SampledSignal(scg, rate_hz, Modality.SCG), SampledSignal(gcg, rate_hz, Modality.GCG)


def find_taps(stream: SampledSignal, search_s: float = TAP_SEARCH_S) -> np.ndarray:
    """Times (s) of the two largest filtered transients in the first `search_s` seconds, sorted."""
    envelope = np.abs(bandpass(stream, BandpassSpec()).samples)
    head = envelope[: int(round(search_s * stream.rate_hz))]
    threshold = TAP_MEDIAN_FACTOR * float(np.median(envelope))
    distance = max(1, ms_to_samples(TAP_MIN_SEPARATION_MS, stream.rate_hz))
    peaks, props = sp_signal.find_peaks(head, height=threshold, distance=distance)
    if peaks.size < 2:
        raise TapsNotFound(f"found {peaks.size} qualifying transient(s), need 2")
    strongest = np.sort(peaks[np.argsort(props["peak_heights"])[::-1][:2]])
    return strongest / stream.rate_hz


def align_by_taps(ear: SampledSignal, imu: SampledSignal) -> float:
    """Offset (ms) of the IMU stream relative to the ear stream, averaged over two taps."""
    ear_taps = find_taps(ear)
    imu_taps = find_taps(imu)
    offset_ms = float(np.mean(imu_taps - ear_taps) * 1000.0)
    logger.info("tap alignment: ear %s s, imu %s s -> offset %.1f ms", ear_taps, imu_taps, offset_ms)
    return offset_ms


def crop_aligned(
    ear: SampledSignal, others: Sequence[SampledSignal], offset_ms: float
) -> Tuple[SampledSignal, List[SampledSignal]]:
    """Shift by the tap offset and crop all streams to their common interval."""
    shift = ms_to_samples(offset_ms, ear.rate_hz)
    if shift >= 0:
        ear_start, other_start = 0, shift
    else:
        ear_start, other_start = -shift, 0
    length = min([len(ear) - ear_start] + [len(o) - other_start for o in others])
    if length <= 0:
        raise SignalTooShort("aligned streams do not overlap")
    cropped = [o.slice(other_start, other_start + length) for o in others]
    return ear.slice(ear_start, ear_start + length), cropped


def ingest(
    wav_path: str | Path,
    imu_path: str | Path,
    axis_map: Optional[Mapping[str, str]] = None,
    meta: Optional[Mapping[str, Any]] = None,
) -> PairedSession:
    """Read, resample to 500 Hz, tap-align and crop an ear/IMU recording pair."""
    ears = [resample(ch, TARGET_RATE_HZ) for ch in read_wav(wav_path)]
    scg, gcg = read_imu_csv(imu_path, axis_map)
    offset_ms = align_by_taps(ears[0], scg)
    left, (scg_c, gcg_c) = crop_aligned(ears[0], [scg, gcg], offset_ms)
    right = None
    if len(ears) > 1:
        right, _ = crop_aligned(ears[1], [scg, gcg], offset_ms)
    return PairedSession(
        ear=left, scg=scg_c, gcg=gcg_c, offset_ms=offset_ms, meta=dict(meta or {}), ear_right=right
    )
