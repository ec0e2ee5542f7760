"""Two-branch convolutional encoder-decoder mapping ear-sound cycles to SCG or GCG cycles."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import InvalidConfig, RecordingNotFound, SchemaMismatch, ShapeMismatch
from .utils import atomic_write_bytes
from .waveform import Modality

CHECKPOINT_MAGIC = b"EARCKPT\x00"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    input_len: int = 400
    local_kernel: int = 3
    local_dilations: Tuple[int, ...] = (1, 2, 4)
    global_kernel: int = 48
    channels_per_branch: int = 32
    encoder_blocks: int = 3
    dropout_p: float = 0.2
    attention_dim: int = 64
    decoder_blocks: Optional[int] = None
    output_channels: int = 1
    target_modality: Modality = Modality.SCG

    def __post_init__(self) -> None:
        object.__setattr__(self, "local_dilations", tuple(int(d) for d in self.local_dilations))
        object.__setattr__(self, "target_modality", Modality(self.target_modality))
        if self.decoder_blocks is None:
            object.__setattr__(self, "decoder_blocks", self.encoder_blocks)

    def validate(self) -> None:
        dims = (self.input_len, self.local_kernel, self.global_kernel, self.channels_per_branch,
                self.encoder_blocks, self.attention_dim, self.output_channels) + self.local_dilations
        if min(dims) <= 0 or not self.local_dilations:
            raise InvalidConfig("model dimensions must all be positive")
        if self.input_len % (2 ** self.encoder_blocks):
            raise InvalidConfig(f"input_len {self.input_len} not divisible by 2^{self.encoder_blocks}")
        if self.decoder_blocks != self.encoder_blocks:
            raise InvalidConfig("decoder must mirror the encoder block count")
        if not 0.0 <= self.dropout_p < 1.0:
            raise InvalidConfig(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        if self.target_modality not in (Modality.SCG, Modality.GCG):
            raise InvalidConfig(f"target modality must be SCG or GCG, got {self.target_modality.value}")

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["local_dilations"] = list(self.local_dilations)
        out["target_modality"] = self.target_modality.value
        return out

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfig(f"unknown model keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 150
    plateau_factor: float = 0.5
    plateau_patience: int = 10
    min_lr: float = 1e-5
    seed: int = 42

    def validate(self) -> None:
        if not self.lr > 0:
            raise InvalidConfig(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise InvalidConfig("batch_size must be >= 1 and max_epochs >= 0")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfig(f"unknown training keys: {sorted(unknown)}")
        return cls(**data)


class TemporalSelfAttention(nn.Module):
    """Single-head scaled dot-product attention across time, added back residually."""

    def __init__(self, channels: int, dim: int) -> None:
        super().__init__()
        self.query = nn.Conv1d(channels, dim, 1)
        self.key = nn.Conv1d(channels, dim, 1)
        self.value = nn.Conv1d(channels, dim, 1)
        self.proj = nn.Conv1d(dim, channels, 1)
        self.scale = dim ** -0.5
        self.last_weights: Optional[torch.Tensor] = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        q, k, v = self.query(x), self.key(x), self.value(x)
        scores = torch.einsum("bdt,bds->bts", q, k) * self.scale
        weights = torch.softmax(scores, dim=-1)
        self.last_weights = weights.detach()
        attended = torch.einsum("bts,bds->bdt", weights, v)
        return x + self.proj(attended)


class GlobalConv(nn.Module):
    """Wide-kernel convolution padded so the output keeps the input length."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int) -> None:
        super().__init__()
        self.conv = nn.Conv1d(in_ch, out_ch, kernel)
        self.pad = ((kernel - 1) // 2, kernel // 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(F.pad(x, self.pad))


class EncoderBlock(nn.Module):
    def __init__(self, in_ch: int, cfg: ModelConfig) -> None:
        super().__init__()
        c = cfg.channels_per_branch
        layers: List[nn.Module] = []
        ch = in_ch
        for d in cfg.local_dilations:
            pad = d * (cfg.local_kernel - 1) // 2
            layers += [nn.Conv1d(ch, c, cfg.local_kernel, dilation=d, padding=pad), nn.ReLU()]
            ch = c
        self.local = nn.Sequential(*layers[:-1])
        self.wide = GlobalConv(in_ch, c, cfg.global_kernel)
        self.norm = nn.BatchNorm1d(2 * c)
        self.skip = nn.Conv1d(in_ch, 2 * c, 1) if in_ch != 2 * c else nn.Identity()
        self.attention = TemporalSelfAttention(2 * c, cfg.attention_dim)
        self.pool = nn.MaxPool1d(2)
        self.dropout = nn.Dropout(cfg.dropout_p)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        h = torch.cat([self.local(x), self.wide(x)], dim=1)
        h = F.relu(self.norm(h) + self.skip(x))
        h = self.attention(h)
        return self.dropout(self.pool(h)), h


class DecoderBlock(nn.Module):
    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        width = 2 * cfg.channels_per_branch
        self.conv = nn.Conv1d(2 * width, width, cfg.local_kernel, padding=(cfg.local_kernel - 1) // 2)
        self.norm = nn.BatchNorm1d(width)
        self.dropout = nn.Dropout(cfg.dropout_p)

    def forward(self, x: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        up = F.interpolate(x, scale_factor=2, mode="nearest")
        h = F.relu(self.norm(self.conv(torch.cat([up, skip], dim=1))))
        return self.dropout(h)


class CycleReconstructor(nn.Module):
    """Encoder of two-branch blocks, an attention bottleneck, and a mirrored upsampling decoder."""

    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        cfg.validate()
        self.config = cfg
        width = 2 * cfg.channels_per_branch
        self.encoder = nn.ModuleList(
            [EncoderBlock(1 if i == 0 else width, cfg) for i in range(cfg.encoder_blocks)]
        )
        self.bottleneck = nn.Sequential(
            nn.Conv1d(width, width, cfg.local_kernel, padding=(cfg.local_kernel - 1) // 2),
            nn.BatchNorm1d(width),
            nn.ReLU(),
            TemporalSelfAttention(width, cfg.attention_dim),
        )
        self.decoder = nn.ModuleList([DecoderBlock(cfg) for _ in range(cfg.decoder_blocks)])
        self.head = nn.Conv1d(width, cfg.output_channels, cfg.local_kernel, padding=(cfg.local_kernel - 1) // 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 2:
            x = x.unsqueeze(1)
        if x.shape[-1] != self.config.input_len:
            raise ShapeMismatch(f"expected cycles of {self.config.input_len} samples, got {x.shape[-1]}")
        skips = []
        h = x
        for block in self.encoder:
            h, skip = block(h)
            skips.append(skip)
        h = self.bottleneck(h)
        for block, skip in zip(self.decoder, reversed(skips)):
            h = block(h, skip)
        return self.head(h).squeeze(1)

    def attention_layers(self) -> List[TemporalSelfAttention]:
        return [m for m in self.modules() if isinstance(m, TemporalSelfAttention)]


@dataclass
class ReconstructionModel:
    config: ModelConfig
    network: CycleReconstructor
    train_meta: Dict[str, Any] = field(default_factory=dict)

    def parameter_shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: tuple(p.shape) for name, p in self.network.named_parameters()}


def build_model(config: ModelConfig = ModelConfig(), seed: int = 0) -> ReconstructionModel:
    """Fresh model with initial weights drawn from `seed` without touching the global RNG."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        network = CycleReconstructor(config)
    return ReconstructionModel(config, network, {"init_seed": seed})


def save_checkpoint(model: ReconstructionModel, path: str | Path) -> None:
    """Magic, version, JSON header, then every state tensor as little-endian float32 in header order."""
    state = model.network.state_dict()
    entries = [{"name": name, "shape": list(t.shape), "dtype": str(t.dtype).replace("torch.", "")}
               for name, t in state.items()]
    header = json.dumps(
        {"config": model.config.to_dict(), "train_meta": model.train_meta, "tensors": entries},
        sort_keys=True,
    ).encode("utf-8")
    blobs = [t.detach().cpu().numpy().astype("<f4").tobytes() for t in state.values()]
    payload = CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(header)) + header + b"".join(blobs)
    atomic_write_bytes(path, payload)


def load_checkpoint(path: str | Path) -> ReconstructionModel:
    p = Path(path)
    if not p.exists():
        raise RecordingNotFound(f"checkpoint not found: {p}")
    data = p.read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise SchemaMismatch(f"{p}: not a reconstruction checkpoint")
    offset = len(CHECKPOINT_MAGIC)
    version, header_len = struct.unpack_from("<II", data, offset)
    if version != CHECKPOINT_VERSION:
        raise SchemaMismatch(f"{p}: unsupported checkpoint version {version}")
    offset += 8
    header = json.loads(data[offset : offset + header_len].decode("utf-8"))
    offset += header_len

    model = build_model(ModelConfig.from_dict(header["config"]))
    model.train_meta = header.get("train_meta", {})
    state = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(entry["shape"])
        offset += 4 * count
        state[entry["name"]] = torch.from_numpy(arr.copy()).to(getattr(torch, entry["dtype"]))
    if offset != len(data):
        raise SchemaMismatch(f"{p}: {len(data) - offset} trailing bytes after tensors")
    expected = set(model.network.state_dict())
    if set(state) != expected:
        raise SchemaMismatch(f"{p}: tensor names do not match the configured architecture")
    model.network.load_state_dict(state)
    model.network.eval()
    return model
