"""Similarity and timing statistics: Pearson r, cycle variability, fiducial spread, error percentiles."""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .errors import ConstantInput, EmptyInput, LengthMismatch, TooFewCycles, TooFewSets
from .fiducial import DISTANCE_NAMES, FIDUCIAL_NAMES, FiducialSet, fiducial_distances, timing_error
from .utils import atomic_write_text, write_provenance_sidecar


class Grouping(str, Enum):
    INTRA_SESSION = "IntraSession"
    INTER_SESSION = "InterSession"
    INTER_USER = "InterUser"
    INTER_DEVICE = "InterDevice"


@dataclass(frozen=True)
class VariabilityReport:
    mean_r: float
    std_r: float
    n_pairs: int
    grouping: Grouping

    def to_dict(self) -> Dict[str, object]:
        out = asdict(self)
        out["grouping"] = self.grouping.value
        return out

    def __str__(self) -> str:
        return f"{self.grouping.value}: {self.mean_r:.2f} ± {self.std_r:.2f} ({self.n_pairs} pairs)"


@dataclass(frozen=True)
class PercentileSummary:
    median: float
    p95: float
    cdf: List[Tuple[float, float]] = field(default_factory=list)


def _values(x) -> np.ndarray:
    return np.asarray(getattr(x, "samples", x), dtype=np.float64).reshape(-1)


def pearson(a, b) -> float:
    x, y = _values(a), _values(b)
    if x.size != y.size:
        raise LengthMismatch(f"cannot correlate lengths {x.size} and {y.size}")
    if x.size < 2:
        raise LengthMismatch("need at least 2 samples to correlate")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ConstantInput("Pearson r is undefined for a constant sequence")
    r, _ = stats.pearsonr(x, y)
    return float(np.clip(r, -1.0, 1.0))


def mean_pearson(predicted: Sequence, reference: Sequence) -> float:
    """Mean r over aligned (prediction, reference) pairs."""
    if len(predicted) != len(reference):
        raise LengthMismatch(f"{len(predicted)} predictions for {len(reference)} references")
    if not predicted:
        raise EmptyInput("no cycles to compare")
    return float(np.mean([pearson(p, r) for p, r in zip(predicted, reference)]))


def cycle_variability(cycles: Sequence, grouping: Grouping = Grouping.INTRA_SESSION) -> VariabilityReport:
    """Mean and population std of r over every unordered pair of cycles."""
    if len(cycles) < 2:
        raise TooFewCycles(f"need at least 2 cycles, got {len(cycles)}")
    rs = [pearson(a, b) for a, b in itertools.combinations(cycles, 2)]
    return VariabilityReport(float(np.mean(rs)), float(np.std(rs)), len(rs), Grouping(grouping))


def fiducial_variability(sets: Sequence[Optional[FiducialSet]]) -> Dict[str, float]:
    """Population std in ms of each AO-anchored interval; rejected (None) entries are skipped."""
    valid = [s for s in sets if s is not None]
    if len(valid) < 2:
        raise TooFewSets(f"need at least 2 labelled cycles, got {len(valid)}")
    distances = [fiducial_distances(s) for s in valid]
    return {name: float(np.std([d[name] for d in distances])) for name in DISTANCE_NAMES}


def error_percentiles(errors_ms: Sequence[float]) -> PercentileSummary:
    """Median and 95th percentile with linear interpolation, plus the empirical CDF."""
    x = np.asarray(errors_ms, dtype=np.float64)
    if x.size == 0:
        raise EmptyInput("no errors to summarize")
    median, p95 = np.percentile(x, [50.0, 95.0])
    values, counts = np.unique(x, return_counts=True)
    cdf = list(zip(values.tolist(), (np.cumsum(counts) / x.size).tolist()))
    return PercentileSummary(float(median), float(p95), cdf)


def timing_errors(
    predicted: Mapping[int, FiducialSet], truth: Mapping[int, FiducialSet]
) -> Dict[str, List[float]]:
    """Absolute per-fiducial errors in ms over the cycle ids present in both tables."""
    common = sorted(set(predicted) & set(truth))
    if not common:
        raise EmptyInput("prediction and truth share no cycle ids")
    per_name: Dict[str, List[float]] = {name: [] for name in FIDUCIAL_NAMES}
    for cid in common:
        for name, err in timing_error(predicted[cid], truth[cid]).items():
            per_name[name].append(err)
    return per_name


def summarize_timing_errors(errors: Mapping[str, Sequence[float]]) -> Dict[str, Dict[str, float]]:
    out = {}
    for name, values in errors.items():
        summary = error_percentiles(values)
        out[name] = {"median_ms": summary.median, "p95_ms": summary.p95, "n": len(values)}
    return out


def write_cdf_csv(
    path: str | Path,
    errors: Mapping[str, Sequence[float]],
    provenance: Optional[Mapping[str, Any]] = None,
) -> None:
    """One row per CDF point: fiducial, error_ms, cdf. Provenance, if given, goes to a JSON sidecar."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["fiducial", "error_ms", "cdf"])
    for name, values in errors.items():
        for value, frac in error_percentiles(values).cdf:
            writer.writerow([name, f"{value:.4f}", f"{frac:.6f}"])
    atomic_write_text(path, buf.getvalue())
    write_provenance_sidecar(path, provenance)
