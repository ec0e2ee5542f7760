"""PyTorch Dataset of paired (ear sound, SCG/GCG) cycles."""

from __future__ import annotations

from typing import Sequence, Tuple

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset

from earcardio.errors import EmptyDataset, InvalidConfig, ShapeMismatch
from earcardio.waveform import zscore_array


def _rows(cycles: Sequence) -> np.ndarray:
    return np.stack([zscore_array(getattr(c, "samples", c)) for c in cycles]).astype(np.float32)


class CyclePairDataset(Dataset):
    """Ear cycles as inputs, target-modality cycles as labels, each row z-scored and stored as float32."""

    def __init__(self, pairs: Sequence[Tuple[object, object]], cycle_len: int = 400) -> None:
        super().__init__()
        if not pairs:
            raise EmptyDataset("no (ear, target) pairs to train on")
        self.inputs = torch.from_numpy(_rows([p[0] for p in pairs]))
        self.targets = torch.from_numpy(_rows([p[1] for p in pairs]))
        if self.inputs.shape[1] != cycle_len or self.targets.shape[1] != cycle_len:
            raise ShapeMismatch(f"cycles must have {cycle_len} samples")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def __getitem__(self, idx: int) -> Tuple[torch.Tensor, torch.Tensor]:
        return self.inputs[idx], self.targets[idx]


def make_loader(dataset: Dataset, batch_size: int, seed: int, shuffle: bool = True) -> DataLoader:
    generator = torch.Generator().manual_seed(seed)
    return DataLoader(dataset, batch_size=batch_size, shuffle=shuffle, generator=generator)



def holdout_split(pairs: Sequence[Tuple[object, object]], val_split: float) -> Tuple[list, list]:
    """Hold out the last `val_split` fraction of pairs, in recording order, for validation."""
    if not 0.0 <= val_split < 1.0:
        raise InvalidConfig(f"val_split must be in [0, 1), got {val_split}")
    n_val = int(len(pairs) * val_split)
    cut = len(pairs) - n_val
    return list(pairs[:cut]), list(pairs[cut:])
