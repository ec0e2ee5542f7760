"""Helpers for sample/time conversions, atomic file output and ordered parallel maps."""

from __future__ import annotations

import json
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Iterable, List, Mapping, Optional, TypeVar

TARGET_RATE_HZ = 500.0
MS_PER_SAMPLE = 1000.0 / TARGET_RATE_HZ

T = TypeVar("T")
R = TypeVar("R")


def ms_to_samples(ms: float, rate_hz: float = TARGET_RATE_HZ) -> int:
    """Convert a duration in milliseconds to the nearest whole sample count."""
    return int(round(ms * rate_hz / 1000.0))


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    """Write to a sibling temp file and rename it over `path`."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_json(path: str | os.PathLike, payload: Any) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def provenance_sidecar(path: str | os.PathLike) -> Path:
    """`out.csv` -> `out.csv.provenance.json`."""
    p = Path(path)
    return p.with_name(p.name + ".provenance.json")


def write_provenance_sidecar(path: str | os.PathLike, provenance: Optional[Mapping[str, Any]]) -> None:
    if provenance:
        atomic_write_json(provenance_sidecar(path), {"artifact": Path(path).name, "provenance": dict(provenance)})


def parallel_map(fn: Callable[[T], R], items: Iterable[T], jobs: int = 1) -> List[R]:
    """Map `fn` over `items` keeping input order, so any `jobs` value gives the same list."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))
