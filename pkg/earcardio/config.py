"""Pipeline configuration: one JSON file, flag overrides, and a provenance stamp for artifacts."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from . import TOOL_NAME, __version__
from .errors import InvalidConfig, RecordingNotFound
from .ingestion import DEFAULT_AXIS_MAP
from .model import ModelConfig, TrainConfig
from .motion_gate import MfccConfig
from .synth import SynthConfig
from .waveform import BandpassSpec


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 42
    jobs: int = 1
    bandpass: BandpassSpec = field(default_factory=BandpassSpec)
    mfcc: MfccConfig = field(default_factory=MfccConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    snr_threshold_db: float = 7.0
    calibration_cycles: int = 5
    equalizer_cycles: int = 10
    calibration_epochs: int = 50
    calibration_lr: float = 1e-4
    motion_threshold_p: float = 0.5
    axis_map: Mapping[str, str] = field(default_factory=lambda: dict(DEFAULT_AXIS_MAP))
    paths: Mapping[str, str] = field(default_factory=dict)

    def validate(self) -> None:
        self.bandpass.validate(self.synth.rate_hz)
        self.mfcc.validate()
        self.model.validate()
        self.train.validate()
        self.synth.validate()
        if self.jobs < 1:
            raise InvalidConfig(f"jobs must be >= 1, got {self.jobs}")
        if self.calibration_cycles < 0 or self.equalizer_cycles < 1:
            raise InvalidConfig("calibration_cycles must be >= 0 and equalizer_cycles >= 1")
        if self.calibration_epochs < 0 or not self.calibration_lr > 0:
            raise InvalidConfig("calibration needs epochs >= 0 and a positive learning rate")
        if not 0.0 <= self.motion_threshold_p <= 1.0:
            raise InvalidConfig(f"motion_threshold_p must lie in [0, 1], got {self.motion_threshold_p}")
        if set(self.axis_map) != {"scg", "gcg"}:
            raise InvalidConfig(f"axis_map needs exactly the keys scg and gcg, got {sorted(self.axis_map)}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "jobs": self.jobs,
            "bandpass": asdict(self.bandpass),
            "mfcc": self.mfcc.to_dict(),
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "synth": self.synth.to_dict(),
            "snr_threshold_db": self.snr_threshold_db,
            "calibration_cycles": self.calibration_cycles,
            "equalizer_cycles": self.equalizer_cycles,
            "calibration_epochs": self.calibration_epochs,
            "calibration_lr": self.calibration_lr,
            "motion_threshold_p": self.motion_threshold_p,
            "axis_map": dict(self.axis_map),
            "paths": dict(self.paths),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        kwargs: Dict[str, Any] = dict(data)
        try:
            if "bandpass" in kwargs:
                kwargs["bandpass"] = BandpassSpec(**kwargs["bandpass"])
            if "mfcc" in kwargs:
                kwargs["mfcc"] = MfccConfig.from_dict(kwargs["mfcc"])
            if "model" in kwargs:
                kwargs["model"] = ModelConfig.from_dict(kwargs["model"])
            if "train" in kwargs:
                kwargs["train"] = TrainConfig.from_dict(kwargs["train"])
            if "synth" in kwargs:
                kwargs["synth"] = SynthConfig.from_dict(kwargs["synth"])
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from exc
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def with_overrides(self, **overrides: Any) -> "PipelineConfig":
        """Apply command-line values; `None` means the flag was not given."""
        given = {k: v for k, v in overrides.items() if v is not None}
        if "seed" in given:
            given["train"] = replace(self.train, seed=given["seed"])
            given["synth"] = replace(self.synth, seed=given["seed"])
        return replace(self, **given)


def load_config(path: Optional[str | Path] = None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    p = Path(path)
    if not p.exists():
        raise RecordingNotFound(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"{p}: {exc}") from exc
    if not isinstance(data, dict):
        raise InvalidConfig(f"{p}: top level must be a JSON object")
    return PipelineConfig.from_dict(data)


def config_hash(config: PipelineConfig) -> str:
    """SHA-256 of the canonical config; the worker count is left out since it never changes results."""
    payload = {k: v for k, v in config.to_dict().items() if k != "jobs"}
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def provenance(config: PipelineConfig) -> Dict[str, str]:
    return {"tool": TOOL_NAME, "version": __version__, "config_hash": config_hash(config)}
