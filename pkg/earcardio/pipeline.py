"""Stage composition shared by the CLI, the training corpus builder and the experiments."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import NoAnchors, NoPeaksFound
from .ingestion import PairedSession
from .motion_gate import WINDOW_S, GateReport, MotionClassifier, gate_stream
from .segmentation import (
    CYCLE_LEN,
    CYCLE_PRE,
    CardiacCycle,
    SnrReport,
    compute_snr,
    cycle_snr,
    detect_anchor_peaks,
    disambiguate_s1,
    extract_cycles,
    filter_by_snr,
    pair_cycles,
    segment_target,
    select_channel,
)
from .utils import TARGET_RATE_HZ
from .waveform import BandpassSpec, Modality, SampledSignal, condition, resample

logger = logging.getLogger(__name__)


@dataclass
class SessionCycles:
    """Cycles of one session after gating, channel selection and SNR filtering."""

    channel: str
    ear_cycles: List[CardiacCycle]
    ear_snr: List[SnrReport]
    targets: Dict[Modality, List[CardiacCycle]]
    channel_snr: Dict[str, Optional[SnrReport]] = field(default_factory=dict)
    gate: Optional[GateReport] = None
    n_extracted: int = 0

    def pairs(self, modality: Modality = Modality.SCG) -> List[Tuple[CardiacCycle, CardiacCycle]]:
        return pair_cycles(self.ear_cycles, self.targets[modality])


def _stored_precision(cycles: Sequence[CardiacCycle]) -> List[CardiacCycle]:
    """Round to the float32 values `save_cycles` writes, so staged and in-process runs see the same cycles."""
    return [c.with_samples(c.samples.astype(np.float32)) for c in cycles]


def _ear_anchors(conditioned: SampledSignal) -> List[int]:
    try:
        return disambiguate_s1(conditioned, detect_anchor_peaks(conditioned))
    except NoPeaksFound:
        logger.warning("no S1 candidates on ear channel %s", conditioned.channel_id)
        return []


def _channel_snr(conditioned: SampledSignal, anchors: Sequence[int]) -> Optional[SnrReport]:
    try:
        return compute_snr(conditioned, anchors)
    except NoAnchors:
        return None


def _outside_dropped(cycle: CardiacCycle, report: GateReport, window: int) -> bool:
    start = cycle.anchor_index_global - CYCLE_PRE
    stop = start + CYCLE_LEN
    if stop > report.n_windows * window:
        return False
    first, last = start // window, (stop - 1) // window
    return all(w in report.kept for w in range(first, last + 1))


def segment_session(
    session: PairedSession,
    spec: BandpassSpec = BandpassSpec(),
    snr_threshold_db: float = 7.0,
    classifier: Optional[MotionClassifier] = None,
    motion_threshold_p: float = 0.5,
    targets: Sequence[Modality] = (Modality.SCG, Modality.GCG),
) -> SessionCycles:
    """Condition every stream, pick the better ear channel, gate motion and keep cycles above the SNR threshold."""
    conditioned: Dict[str, SampledSignal] = {}
    anchors: Dict[str, List[int]] = {}
    reports: Dict[str, Optional[SnrReport]] = {}
    channels = session.ear_channels()
    for name, raw in channels.items():
        conditioned[name] = condition(raw, spec, TARGET_RATE_HZ)
        anchors[name] = _ear_anchors(conditioned[name])
        reports[name] = _channel_snr(conditioned[name], anchors[name])
    channel = select_channel(reports.get("left"), reports.get("right")) if len(reports) > 1 else next(iter(reports))
    ear = conditioned[channel]
    cycles = _stored_precision(extract_cycles(ear, anchors[channel]))
    n_extracted = len(cycles)

    gate = None
    if classifier is not None:
        _, gate = gate_stream(resample(channels[channel], TARGET_RATE_HZ), classifier, motion_threshold_p)
        window = int(round(WINDOW_S * TARGET_RATE_HZ))
        cycles = [c for c in cycles if _outside_dropped(c, gate, window)]

    snrs = [cycle_snr(c) for c in cycles]
    kept = filter_by_snr(list(zip(cycles, snrs)), snr_threshold_db)
    kept_ids = {id(c) for c in kept}
    kept_snr = [s for c, s in zip(cycles, snrs) if id(c) in kept_ids]

    target_cycles: Dict[Modality, List[CardiacCycle]] = {}
    for modality in targets:
        stream = session.scg if modality == Modality.SCG else session.gcg
        try:
            target_cycles[modality] = _stored_precision(segment_target(condition(stream, spec, TARGET_RATE_HZ)))
        except NoPeaksFound:
            logger.warning("no AO candidates in the %s stream", modality.value)
            target_cycles[modality] = []

    logger.info("channel %s: %d cycles extracted, %d kept", channel, n_extracted, len(kept))
    return SessionCycles(channel, kept, kept_snr, target_cycles, reports, gate, n_extracted)
