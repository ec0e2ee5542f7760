"""Fiducial labelling of SCG/GCG cycles: MC, IM, AO, MA, RE."""

from __future__ import annotations

import csv
import io
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import NoLeftPeak, NoRightPeak, SchemaMismatch
from .utils import MS_PER_SAMPLE, atomic_write_text, write_provenance_sidecar

logger = logging.getLogger(__name__)

FIDUCIAL_NAMES = ("mc", "im", "ao", "ma", "re")
DISTANCE_NAMES = ("ao_mc", "ao_im", "ao_ma", "ao_re")
CSV_HEADER = ("cycle_id", "mc_ms", "im_ms", "ao_ms", "ma_ms", "re_ms")


@dataclass(frozen=True)
class FiducialSet:
    """Sample indices of the five events inside one cycle."""

    mc: int
    im: int
    ao: int
    ma: int
    re: int

    def as_tuple(self) -> Tuple[int, int, int, int, int]:
        return (self.mc, self.im, self.ao, self.ma, self.re)

    def is_ordered(self) -> bool:
        v = self.as_tuple()
        return all(a < b for a, b in zip(v, v[1:]))

    def to_ms(self, ms_per_sample: float = MS_PER_SAMPLE) -> Dict[str, float]:
        return {name: idx * ms_per_sample for name, idx in zip(FIDUCIAL_NAMES, self.as_tuple())}


@dataclass
class LabelingReport:
    total: int = 0
    labeled: int = 0
    rejected: Counter = field(default_factory=Counter)


def local_maxima(x: np.ndarray) -> np.ndarray:
    """Indices of samples strictly above both neighbours; a raised plateau reports its leftmost sample."""
    x = np.asarray(x, dtype=np.float64)
    peaks: List[int] = []
    i = 1
    n = x.size
    while i < n - 1:
        if x[i] > x[i - 1]:
            j = i
            while j + 1 < n and x[j + 1] == x[i]:
                j += 1
            if j + 1 < n and x[j + 1] < x[i]:
                peaks.append(i)
            i = j + 1
        else:
            i += 1
    return np.asarray(peaks, dtype=np.int64)


def label_fiducials(cycle) -> FiducialSet:
    """AO at the global maximum, MC/RE the largest peaks either side, IM/MA the minima between."""
    x = np.asarray(getattr(cycle, "samples", cycle), dtype=np.float64)
    ao = int(np.argmax(x))
    peaks = local_maxima(x)
    left = peaks[peaks < ao]
    right = peaks[peaks > ao]
    if left.size == 0:
        raise NoLeftPeak(f"no local maximum left of AO at index {ao}")
    if right.size == 0:
        raise NoRightPeak(f"no local maximum right of AO at index {ao}")
    mc = int(left[np.argmax(x[left])])
    re = int(right[np.argmax(x[right])])
    im = mc + 1 + int(np.argmin(x[mc + 1 : ao]))
    ma = ao + 1 + int(np.argmin(x[ao + 1 : re]))
    return FiducialSet(mc=mc, im=im, ao=ao, ma=ma, re=re)


def label_cycles(cycles: Sequence) -> Tuple[List[Optional[FiducialSet]], LabelingReport]:
    """Label every cycle; malformed cycles yield None and are counted by rejection reason."""
    report = LabelingReport(total=len(cycles))
    sets: List[Optional[FiducialSet]] = []
    for i, cycle in enumerate(cycles):
        try:
            sets.append(label_fiducials(cycle))
            report.labeled += 1
        except (NoLeftPeak, NoRightPeak) as exc:
            report.rejected[type(exc).__name__] += 1
            logger.debug("cycle %d rejected: %s", i, exc)
            sets.append(None)
    if report.rejected:
        logger.warning("fiducial labelling rejected %d of %d cycles: %s",
                       sum(report.rejected.values()), report.total, dict(report.rejected))
    return sets, report


def fiducial_distances(fset: FiducialSet, ms_per_sample: float = MS_PER_SAMPLE) -> Dict[str, float]:
    """AO-anchored distances |AO - X| in milliseconds."""
    return {
        "ao_mc": abs(fset.ao - fset.mc) * ms_per_sample,
        "ao_im": abs(fset.ao - fset.im) * ms_per_sample,
        "ao_ma": abs(fset.ma - fset.ao) * ms_per_sample,
        "ao_re": abs(fset.re - fset.ao) * ms_per_sample,
    }


def timing_error(pred: FiducialSet, truth: FiducialSet, ms_per_sample: float = MS_PER_SAMPLE) -> Dict[str, float]:
    return {
        name: abs(p - t) * ms_per_sample
        for name, p, t in zip(FIDUCIAL_NAMES, pred.as_tuple(), truth.as_tuple())
    }


def write_fiducial_csv(
    path: str | Path,
    sets: Sequence[Tuple[int, FiducialSet]],
    provenance: Optional[Mapping[str, Any]] = None,
) -> None:
    """Fiducial times in ms, one row per cycle. Provenance, if given, goes to a JSON sidecar."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for cycle_id, fset in sets:
        ms = fset.to_ms()
        writer.writerow([cycle_id] + [f"{ms[name]:.2f}" for name in FIDUCIAL_NAMES])
    atomic_write_text(path, buf.getvalue())
    write_provenance_sidecar(path, provenance)


def read_fiducial_csv(path: str | Path, ms_per_sample: float = MS_PER_SAMPLE) -> Dict[int, FiducialSet]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise SchemaMismatch(f"{path}: expected header {','.join(CSV_HEADER)}")
        out: Dict[int, FiducialSet] = {}
        for row in reader:
            if not row:
                continue
            idx = [int(round(float(v) / ms_per_sample)) for v in row[1:]]
            out[int(row[0])] = FiducialSet(*idx)
    return out
