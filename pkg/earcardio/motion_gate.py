"""MFCC window features and a random-forest gate that drops motion-contaminated 10 s ear windows."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import fft as sp_fft
from sklearn.decomposition import PCA
from sklearn.ensemble import RandomForestClassifier
from sklearn.metrics import confusion_matrix, roc_auc_score
from sklearn.model_selection import StratifiedKFold

from .errors import (
    InconsistentFeatureLength,
    InvalidConfig,
    RecordingNotFound,
    SchemaMismatch,
    SignalTooShort,
    SingleClassDataset,
    TooFewSamples,
    WrongWindowLength,
)
from .utils import atomic_write_json
from .waveform import SampledSignal

logger = logging.getLogger(__name__)

STATIC = "Static"
MOTION = "Motion"
WINDOW_S = 10.0
LOG_FLOOR = 1e-10
CLASSIFIER_SCHEMA = 1
LEAF = -1


@dataclass(frozen=True)
class MfccConfig:
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    n_mel_filters: int = 26
    n_coeffs: int = 13
    fmin_hz: float = 0.0
    fmax_hz: Optional[float] = None

    def validate(self) -> None:
        if not (self.frame_ms > self.hop_ms > 0):
            raise InvalidConfig(f"need frame_ms > hop_ms > 0, got {self.frame_ms}/{self.hop_ms}")
        if not (0 < self.n_coeffs <= self.n_mel_filters):
            raise InvalidConfig(f"need 0 < n_coeffs <= n_mel_filters, got {self.n_coeffs}/{self.n_mel_filters}")

    def upper_hz(self, rate_hz: float) -> float:
        return rate_hz / 2.0 if self.fmax_hz is None else min(self.fmax_hz, rate_hz / 2.0)

    @property
    def n_features(self) -> int:
        return 2 * self.n_coeffs

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MfccConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfig(f"unknown MFCC keys: {sorted(unknown)}")
        return cls(**data)


def _hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz) / 700.0)


def _mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel) / 2595.0) - 1.0)


def mel_filterbank(cfg: MfccConfig, rate_hz: float, n_fft: int) -> np.ndarray:
    """Triangular filters equally spaced on the mel scale, shape (n_mel_filters, n_fft // 2 + 1)."""
    edges = _mel_to_hz(
        np.linspace(_hz_to_mel(cfg.fmin_hz), _hz_to_mel(cfg.upper_hz(rate_hz)), cfg.n_mel_filters + 2)
    )
    freqs = sp_fft.rfftfreq(n_fft, d=1.0 / rate_hz)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def _frames(x: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    n_frames = 1 + (x.size - frame_len) // hop
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    return x[idx]


def mfcc(x: np.ndarray, rate_hz: float, cfg: MfccConfig = MfccConfig()) -> np.ndarray:
    """Per-frame MFCCs, shape (n_frames, n_coeffs)."""
    cfg.validate()
    frame_len = max(2, int(round(cfg.frame_ms * rate_hz / 1000.0)))
    hop = max(1, int(round(cfg.hop_ms * rate_hz / 1000.0)))
    if x.size < frame_len:
        raise SignalTooShort(f"{x.size} samples is shorter than one {frame_len}-sample frame")
    n_fft = max(512, 1 << (frame_len - 1).bit_length())
    frames = _frames(np.asarray(x, dtype=np.float64), frame_len, hop) * np.hamming(frame_len)
    power = np.abs(sp_fft.rfft(frames, n=n_fft, axis=1)) ** 2 / n_fft
    energies = power @ mel_filterbank(cfg, rate_hz, n_fft).T
    log_mel = np.log(np.maximum(energies, LOG_FLOOR))
    return sp_fft.dct(log_mel, type=2, axis=1, norm="ortho")[:, : cfg.n_coeffs]


def mfcc_features(window: SampledSignal, cfg: MfccConfig = MfccConfig(), window_s: float = WINDOW_S) -> np.ndarray:
    """Mean and standard deviation of every coefficient across a 10 s window."""
    expected = window_s * window.rate_hz
    if abs(len(window) - expected) > 1:
        raise WrongWindowLength(f"expected {expected:.0f} +/- 1 samples, got {len(window)}")
    coeffs = mfcc(window.samples, window.rate_hz, cfg)
    return np.concatenate([coeffs.mean(axis=0), coeffs.std(axis=0)])


@dataclass
class TreeArrays:
    """One fitted tree as flat node arrays; `left[i] == -1` marks a leaf."""

    feature_idx: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_prob: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        active = self.left[node] != LEAF
        while active.any():
            n = node[active]
            go_left = X[rows[active], self.feature_idx[n]] <= self.threshold[n]
            node[active] = np.where(go_left, self.left[n], self.right[n])
            active = self.left[node] != LEAF
        return self.leaf_prob[node]

    def to_dict(self) -> Dict[str, List]:
        return {k: getattr(self, k).tolist() for k in ("feature_idx", "threshold", "left", "right", "leaf_prob")}

    @classmethod
    def from_dict(cls, data: Dict[str, List]) -> "TreeArrays":
        return cls(
            feature_idx=np.asarray(data["feature_idx"], dtype=np.int64),
            threshold=np.asarray(data["threshold"], dtype=np.float64),
            left=np.asarray(data["left"], dtype=np.int64),
            right=np.asarray(data["right"], dtype=np.int64),
            leaf_prob=np.asarray(data["leaf_prob"], dtype=np.float64),
        )


def _export_tree(estimator, motion_col: int) -> TreeArrays:
    t = estimator.tree_
    counts = t.value[:, 0, :]
    totals = counts.sum(axis=1)
    prob = np.divide(counts[:, motion_col], totals, out=np.zeros_like(totals), where=totals > 0)
    feature = np.where(t.children_left == LEAF, LEAF, t.feature).astype(np.int64)
    return TreeArrays(feature, t.threshold.astype(np.float64), t.children_left.astype(np.int64),
                      t.children_right.astype(np.int64), prob)


@dataclass
class MotionClassifier:
    trees: List[TreeArrays]
    mfcc_config: MfccConfig = field(default_factory=MfccConfig)
    feature_spec: Dict[str, Any] = field(default_factory=lambda: {"aggregation": ["mean", "std"], "n_features": 26})
    oob_score: Optional[float] = None

    def __post_init__(self) -> None:
        n_features = int(self.feature_spec["n_features"])
        for i, tree in enumerate(self.trees):
            internal = tree.left != LEAF
            if internal.any() and int(tree.feature_idx[internal].max()) >= n_features:
                raise SchemaMismatch(f"tree {i} splits on a feature beyond {n_features}")

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        """Motion probability per row, averaged over trees."""
        X = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if X.shape[1] != self.feature_spec["n_features"]:
            raise InconsistentFeatureLength(f"expected {self.feature_spec['n_features']} features, got {X.shape[1]}")
        # the fitted thresholds were chosen against float32 inputs
        X = X.astype(np.float32).astype(np.float64)
        return np.mean([tree.predict(X) for tree in self.trees], axis=0)

    def save(self, path: str | Path, provenance: Optional[Dict[str, Any]] = None) -> None:
        payload = {
            "schema_version": CLASSIFIER_SCHEMA,
            "mfcc_config": self.mfcc_config.to_dict(),
            "feature_spec": self.feature_spec,
            "oob_score": self.oob_score,
            "trees": [t.to_dict() for t in self.trees],
        }
        if provenance is not None:
            payload["provenance"] = dict(provenance)
        atomic_write_json(path, payload)

    @classmethod
    def load(cls, path: str | Path) -> "MotionClassifier":
        p = Path(path)
        if not p.exists():
            raise RecordingNotFound(f"classifier not found: {p}")
        data = json.loads(p.read_text(encoding="utf-8"))
        if data.get("schema_version") != CLASSIFIER_SCHEMA:
            raise SchemaMismatch(f"{p}: unsupported classifier schema {data.get('schema_version')!r}")
        return cls(
            trees=[TreeArrays.from_dict(t) for t in data["trees"]],
            mfcc_config=MfccConfig.from_dict(data["mfcc_config"]),
            feature_spec=data["feature_spec"],
            oob_score=data.get("oob_score"),
        )


def _check_dataset(features: Sequence[Sequence[float]], labels: Sequence[str]) -> Tuple[np.ndarray, np.ndarray]:
    lengths = {len(f) for f in features}
    if len(lengths) > 1:
        raise InconsistentFeatureLength(f"feature vectors have mixed lengths {sorted(lengths)}")
    if len(features) != len(labels):
        raise InconsistentFeatureLength(f"{len(features)} feature vectors for {len(labels)} labels")
    y = np.asarray([1 if lab == MOTION else 0 for lab in labels], dtype=np.int64)
    if len(set(y.tolist())) < 2:
        raise SingleClassDataset("need both Static and Motion windows to train")
    return np.asarray(features, dtype=np.float64), y


def _forest(n_trees: int, seed: int, jobs: int) -> RandomForestClassifier:
    return RandomForestClassifier(
        n_estimators=n_trees,
        criterion="gini",
        max_depth=None,
        max_features="sqrt",
        bootstrap=True,
        oob_score=True,
        random_state=seed,
        n_jobs=jobs,
    )


def train_motion_classifier(
    features: Sequence[Sequence[float]],
    labels: Sequence[str],
    n_trees: int = 100,
    seed: int = 0,
    mfcc_config: MfccConfig = MfccConfig(),
    jobs: int = 1,
) -> MotionClassifier:
    """Fit a seeded forest and export it to plain node arrays."""
    X, y = _check_dataset(features, labels)
    forest = _forest(n_trees, seed, jobs).fit(X, y)
    motion_col = int(np.flatnonzero(forest.classes_ == 1)[0])
    clf = MotionClassifier(
        trees=[_export_tree(est, motion_col) for est in forest.estimators_],
        mfcc_config=mfcc_config,
        feature_spec={"aggregation": ["mean", "std"], "n_features": int(X.shape[1])},
        oob_score=float(forest.oob_score_),
    )
    logger.info("motion gate trained: %d trees, %d windows, OOB accuracy %.3f", n_trees, len(y), clf.oob_score)
    return clf


class CvResult(NamedTuple):
    auc: float
    accuracy: float
    confusion: np.ndarray


def evaluate_cv(
    features: Sequence[Sequence[float]],
    labels: Sequence[str],
    k: int = 5,
    seed: int = 0,
    n_trees: int = 100,
    threshold_p: float = 0.5,
) -> CvResult:
    """Stratified k-fold with AUC over pooled out-of-fold probabilities.

    The confusion matrix rows are true labels in the order (Static, Motion).
    """
    if k < 2:
        raise TooFewSamples(f"need k >= 2 folds, got {k}")
    X, y = _check_dataset(features, labels)
    if np.bincount(y).min() < k:
        raise TooFewSamples(f"every class needs at least {k} windows, got counts {np.bincount(y).tolist()}")
    probs = np.zeros(y.size, dtype=np.float64)
    folds = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
    for fold, (train_idx, test_idx) in enumerate(folds.split(X, y)):
        clf = train_motion_classifier(X[train_idx], [MOTION if v else STATIC for v in y[train_idx]],
                                      n_trees=n_trees, seed=seed + fold)
        probs[test_idx] = clf.predict_proba(X[test_idx])
    pred = (probs >= threshold_p).astype(np.int64)
    result = CvResult(
        auc=float(roc_auc_score(y, probs)),
        accuracy=float(np.mean(pred == y)),
        confusion=confusion_matrix(y, pred, labels=[0, 1]),
    )
    logger.info("%d-fold CV: AUC %.3f, accuracy %.3f", k, result.auc, result.accuracy)
    return result


@dataclass
class GateReport:
    n_windows: int
    kept: List[int]
    dropped: List[int]
    motion_prob: List[float]
    remainder_samples: int

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def gate_stream(
    signal: SampledSignal, clf: MotionClassifier, threshold_p: float = 0.5, window_s: float = WINDOW_S
) -> Tuple[List[SampledSignal], GateReport]:
    """Classify consecutive non-overlapping windows; drop those at or above `threshold_p`."""
    win = int(round(window_s * signal.rate_hz))
    n_windows = len(signal) // win
    if n_windows == 0:
        raise SignalTooShort(f"need at least {window_s:.0f} s to gate, got {signal.duration_s:.2f} s")
    windows = [signal.slice(i * win, (i + 1) * win) for i in range(n_windows)]
    feats = np.stack([mfcc_features(w, clf.mfcc_config, window_s) for w in windows])
    probs = clf.predict_proba(feats)
    kept = [i for i in range(n_windows) if probs[i] < threshold_p]
    dropped = [i for i in range(n_windows) if probs[i] >= threshold_p]
    report = GateReport(n_windows, kept, dropped, [float(p) for p in probs], len(signal) - n_windows * win)
    if dropped:
        logger.info("motion gate dropped windows %s of %d", dropped, n_windows)
    return [windows[i] for i in kept], report


def pca_projection(features: Sequence[Sequence[float]], n_components: int = 2) -> Tuple[np.ndarray, np.ndarray]:
    """First principal components of the feature matrix and their explained variance ratios."""
    X = np.asarray(features, dtype=np.float64)
    if X.shape[0] < n_components:
        raise TooFewSamples(f"need at least {n_components} windows for PCA, got {X.shape[0]}")
    pca = PCA(n_components=n_components)
    return pca.fit_transform(X), pca.explained_variance_ratio_
