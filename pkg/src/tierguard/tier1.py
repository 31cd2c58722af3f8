"""Per-vehicle edge detection: ensemble scoring, gating, and signatures.

Three lightweight base scorers (bagged trees, a linear max-margin model, and
a small recurrent cell) each map a sensor window to an anomaly probability
plus an uncertainty. Scores combine through a softmax over historical
accuracies; a verdict fires only when both the weighted score and the
ensemble confidence clear their thresholds.
"""

from __future__ import annotations

import hashlib
import math
import struct
import time
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .sensors import SUMMARY_CHANNELS, AttackKind, FeatureWindow, LabeledWindow

SUMMARY_DIM = 3 * len(SUMMARY_CHANNELS)


class ThreatLevel(Enum):
    LOW = "Low"
    MEDIUM = "Medium"
    HIGH = "High"


class ThreatClass(Enum):
    GPS_SPOOF = "GpsSpoof"
    LIDAR_SPOOF = "LidarSpoof"
    CAMERA_PATCH = "CameraPatch"
    IMU_MANIP = "ImuManip"
    COMM_JAM = "CommJam"
    ML_POISON = "MlPoison"
    ACTUATOR_COMPROMISE = "ActuatorCompromise"
    UNKNOWN = "Unknown"


def threat_class_for(kind: AttackKind) -> ThreatClass:
    return ThreatClass(kind.value)


def threat_level_for(severity: float) -> ThreatLevel:
    if severity >= 0.85:
        return ThreatLevel.HIGH
    if severity >= 0.7:
        return ThreatLevel.MEDIUM
    return ThreatLevel.LOW


@dataclass(frozen=True)
class DetectorConfig:
    theta1: float = 0.7   # anomaly-score threshold
    theta2: float = 0.8   # confidence threshold
    temperature: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.theta1 < 1.0 or not 0.0 < self.theta2 < 1.0:
            raise ValueError("thresholds must lie in (0, 1)")
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")


@dataclass(frozen=True)
class AnomalyVerdict:
    anomaly_score: float
    confidence: float
    ensemble_variance: float
    is_anomaly: bool
    severity: float
    threat_level: ThreatLevel
    inference_time_us: int


@dataclass(frozen=True)
class ThreatSignature:
    digest: bytes
    severity: float
    attack_class: ThreatClass
    vehicle_id: str
    region_id: str
    timestamp_ms: int


def summary_features(window: FeatureWindow) -> np.ndarray:
    """Per-channel mean, variance, and mean |first difference| (flattened)."""
    arr = window.as_array
    diffs = np.abs(np.diff(arr, axis=0))
    return np.concatenate([arr.mean(axis=0), arr.var(axis=0), diffs.mean(axis=0)])


# ---------------------------------------------------------------------------
# Base scorers


class _Standardizer:
    def fit(self, x: np.ndarray) -> "_Standardizer":
        self.mean = x.mean(axis=0)
        self.std = np.maximum(x.std(axis=0), 1e-9)
        return self

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std


class _Tree:
    """Depth-limited CART tree with Laplace-smoothed leaf probabilities."""

    __slots__ = ("feature", "threshold", "left", "right", "prob")

    def __init__(self):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.prob: list[float] = []

    def _add_leaf(self, pos: int, total: int, smoothing: float) -> int:
        node = len(self.feature)
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.prob.append((pos + smoothing) / (total + 2.0 * smoothing))
        return node

    def _add_split(self, feature: int, threshold: float) -> int:
        node = len(self.feature)
        self.feature.append(feature)
        self.threshold.append(threshold)
        self.left.append(-1)
        self.right.append(-1)
        self.prob.append(-1.0)
        return node

    def predict(self, x: np.ndarray) -> float:
        node = 0
        feature = self.feature
        while feature[node] >= 0:
            node = self.left[node] if x[feature[node]] <= self.threshold[node] else self.right[node]
        return self.prob[node]


def _best_split(x_col: np.ndarray, y: np.ndarray, min_leaf: int) -> tuple[float, float] | None:
    """Best (gini, threshold) for one feature, or None if no valid split."""
    order = np.argsort(x_col, kind="stable")
    xs = x_col[order]
    ys = y[order]
    n = len(ys)
    pos_prefix = np.cumsum(ys)
    total_pos = pos_prefix[-1]
    # Split after index i (left = [0..i]); only where the value changes.
    idx = np.arange(min_leaf - 1, n - min_leaf)
    if len(idx) == 0:
        return None
    valid = xs[idx] < xs[idx + 1]
    idx = idx[valid]
    if len(idx) == 0:
        return None
    n_left = idx + 1.0
    n_right = n - n_left
    pos_left = pos_prefix[idx]
    pos_right = total_pos - pos_left
    p_l = pos_left / n_left
    p_r = pos_right / n_right
    gini = (n_left * 2.0 * p_l * (1.0 - p_l) + n_right * 2.0 * p_r * (1.0 - p_r)) / n
    best = int(np.argmin(gini))
    threshold = 0.5 * (xs[idx[best]] + xs[idx[best] + 1])
    return float(gini[best]), float(threshold)


class ForestScorer:
    """Bagged depth-limited trees over window summary statistics.

    Uncertainty is the spread of per-tree votes, normalized so the maximal
    possible vote variance (0.25) maps to 1.
    """

    kind = "ForestScorer"

    def __init__(self, n_trees: int = 15, max_depth: int = 5, min_leaf: int = 6,
                 smoothing: float = 2.0):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.smoothing = smoothing
        self.trees: list[_Tree] = []

    def fit(self, summaries: np.ndarray, labels: np.ndarray, rng: np.random.Generator):
        n, d = summaries.shape
        mtry = max(1, int(math.sqrt(d)))
        self.trees = []
        for _ in range(self.n_trees):
            boot = rng.integers(0, n, size=n)
            tree = _Tree()
            self._grow(tree, summaries[boot], labels[boot], 0, rng, mtry)
            self.trees.append(tree)
        return self

    def _grow(self, tree: _Tree, x: np.ndarray, y: np.ndarray, depth: int,
              rng: np.random.Generator, mtry: int) -> int:
        pos = int(y.sum())
        n = len(y)
        if depth >= self.max_depth or n < 2 * self.min_leaf or pos == 0 or pos == n:
            return tree._add_leaf(pos, n, self.smoothing)
        features = rng.choice(x.shape[1], size=mtry, replace=False)
        best = None
        for f in features:
            split = _best_split(x[:, f], y, self.min_leaf)
            if split is not None and (best is None or split[0] < best[0]):
                best = (split[0], int(f), split[1])
        if best is None:
            return tree._add_leaf(pos, n, self.smoothing)
        _, feature, threshold = best
        node = tree._add_split(feature, threshold)
        mask = x[:, feature] <= threshold
        tree.left[node] = self._grow(tree, x[mask], y[mask], depth + 1, rng, mtry)
        tree.right[node] = self._grow(tree, x[~mask], y[~mask], depth + 1, rng, mtry)
        return node

    def predict_summary(self, summary: np.ndarray) -> tuple[float, float]:
        votes = [tree.predict(summary) for tree in self.trees]
        score = float(np.mean(votes))
        uncertainty = min(1.0, 4.0 * float(np.var(votes)))
        return score, uncertainty

    def predict(self, window: FeatureWindow) -> tuple[float, float]:
        return self.predict_summary(summary_features(window))


class MarginScorer:
    """Linear max-margin classifier trained by hinge-loss subgradient descent.

    Score is the logistic of the signed margin; uncertainty is
    1 - logistic(|margin|), so confident margins on either side are certain.
    """

    kind = "MarginScorer"

    def __init__(self, epochs: int = 250, lr: float = 0.1, reg: float = 1e-3,
                 margin_scale: float = 0.8):
        self.epochs = epochs
        self.lr = lr
        self.reg = reg
        self.margin_scale = margin_scale

    def fit(self, summaries: np.ndarray, labels: np.ndarray, rng: np.random.Generator):
        self.scaler = _Standardizer().fit(summaries)
        x = self.scaler.apply(summaries)
        y = np.where(labels > 0, 1.0, -1.0)
        n, d = x.shape
        w = rng.standard_normal(d) * 0.01
        b = 0.0
        for epoch in range(self.epochs):
            margins = y * (x @ w + b)
            active = margins < 1.0
            grad_w = self.reg * w - (y[active, None] * x[active]).sum(axis=0) / n
            grad_b = -y[active].sum() / n
            lr = self.lr / math.sqrt(1.0 + epoch)
            w -= lr * grad_w
            b -= lr * grad_b
        self.w = w
        self.b = b
        return self

    def margin(self, summary: np.ndarray) -> float:
        z = (summary - self.scaler.mean) / self.scaler.std
        return float(z @ self.w + self.b)

    def predict_summary(self, summary: np.ndarray) -> tuple[float, float]:
        m = self.margin(summary) * self.margin_scale
        score = 1.0 / (1.0 + math.exp(-m))
        uncertainty = 1.0 - 1.0 / (1.0 + math.exp(-abs(m)))
        return score, uncertainty

    def predict(self, window: FeatureWindow) -> tuple[float, float]:
        return self.predict_summary(summary_features(window))


class RecurrentScorer:
    """Single fixed recurrent cell over the raw window plus a trained
    sigmoid readout on the (mean, final) hidden state.

    Uncertainty is the binary entropy of the output, normalized to [0, 1].
    """

    kind = "RecurrentScorer"

    def __init__(self, hidden: int = 12, epochs: int = 400, lr: float = 0.6,
                 spectral_radius: float = 0.9):
        self.hidden = hidden
        self.epochs = epochs
        self.lr = lr
        self.spectral_radius = spectral_radius

    def _states(self, seq: np.ndarray) -> np.ndarray:
        z = (seq - self.scaler.mean) / self.scaler.std
        h = np.zeros(self.hidden)
        mean_h = np.zeros(self.hidden)
        for t in range(z.shape[0]):
            h = np.tanh(self.w_in @ z[t] + self.w_rec @ h + self.b_cell)
            mean_h += h
        mean_h /= z.shape[0]
        return np.concatenate([mean_h, h])

    def fit(self, sequences: list[np.ndarray], labels: np.ndarray, rng: np.random.Generator):
        d = sequences[0].shape[1]
        self.scaler = _Standardizer().fit(np.vstack(sequences))
        self.w_in = rng.standard_normal((self.hidden, d)) * 0.4
        w_rec = rng.standard_normal((self.hidden, self.hidden))
        radius = max(abs(np.linalg.eigvals(w_rec)))
        self.w_rec = w_rec * (self.spectral_radius / radius)
        self.b_cell = rng.standard_normal(self.hidden) * 0.1

        feats = np.array([self._states(seq) for seq in sequences])
        self.readout_scaler = _Standardizer().fit(feats)
        phi = self.readout_scaler.apply(feats)
        y = labels.astype(np.float64)
        n, k = phi.shape
        w = np.zeros(k)
        b = 0.0
        for _ in range(self.epochs):
            p = 1.0 / (1.0 + np.exp(-(phi @ w + b)))
            err = p - y
            w -= self.lr * (phi.T @ err) / n
            b -= self.lr * err.mean()
        self.w_out = w
        self.b_out = b
        return self

    def predict_sequence(self, seq: np.ndarray) -> tuple[float, float]:
        phi = self.readout_scaler.apply(self._states(seq)[None, :])[0]
        p = 1.0 / (1.0 + math.exp(-(float(phi @ self.w_out) + self.b_out)))
        eps = 1e-12
        q = min(max(p, eps), 1.0 - eps)
        entropy = -(q * math.log(q) + (1.0 - q) * math.log(1.0 - q)) / math.log(2.0)
        return p, min(1.0, entropy)

    def predict(self, window: FeatureWindow) -> tuple[float, float]:
        return self.predict_sequence(window.as_array)


# ---------------------------------------------------------------------------
# Training and ensemble math


def train_base_scorers(
    training: list[LabeledWindow], seed: int, holdout_fraction: float = 0.3
) -> tuple[list, tuple[float, float, float]]:
    """Fit the three base scorers and measure their holdout accuracies.

    Raises ValueError if the corpus is empty or single-class.
    """
    if not training:
        raise ValueError("training set is empty")
    labels_all = np.array([1.0 if lw.is_attack else 0.0 for lw in training])
    if labels_all.min() == labels_all.max():
        raise ValueError("training set must contain both classes")

    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 0x7131)))
    order = rng.permutation(len(training))
    n_holdout = max(1, int(len(training) * holdout_fraction))
    holdout_idx = order[:n_holdout]
    train_idx = order[n_holdout:]
    if labels_all[train_idx].min() == labels_all[train_idx].max():
        raise ValueError("training split is single-class; provide a larger corpus")

    summaries = np.array([summary_features(lw.window) for lw in training])
    sequences = [lw.window.as_array for lw in training]

    forest = ForestScorer().fit(summaries[train_idx], labels_all[train_idx], rng)
    margin = MarginScorer().fit(summaries[train_idx], labels_all[train_idx], rng)
    recurrent = RecurrentScorer().fit(
        [sequences[i] for i in train_idx], labels_all[train_idx], rng
    )

    def holdout_accuracy(predict) -> float:
        correct = 0
        for i in holdout_idx:
            score, _ = predict(i)
            correct += int((score > 0.5) == bool(labels_all[i]))
        return correct / len(holdout_idx)

    accuracies = (
        holdout_accuracy(lambda i: forest.predict_summary(summaries[i])),
        holdout_accuracy(lambda i: margin.predict_summary(summaries[i])),
        holdout_accuracy(lambda i: recurrent.predict_sequence(sequences[i])),
    )
    return [forest, margin, recurrent], accuracies


@dataclass(frozen=True)
class EnsembleWeights:
    accuracies: tuple[float, ...]
    temperature: float
    weights: tuple[float, ...]


def compute_weights(accuracies: tuple[float, ...] | list[float], temperature: float) -> EnsembleWeights:
    """Softmax of accuracies over the temperature: w_i = exp(a_i/T) / sum_j exp(a_j/T)."""
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    acc = np.asarray(accuracies, dtype=np.float64)
    if acc.size == 0:
        raise ValueError("accuracies must be non-empty")
    logits = acc / temperature
    logits -= logits.max()  # shift invariance keeps exp() in range
    expd = np.exp(logits)
    weights = expd / expd.sum()
    return EnsembleWeights(tuple(float(a) for a in acc), temperature, tuple(float(w) for w in weights))


def update_accuracy(
    state: EnsembleWeights, scorer_index: int, outcome: bool, decay: float = 0.99
) -> EnsembleWeights:
    """EMA accuracy update for one scorer, then weight recomputation."""
    if not 0 <= scorer_index < len(state.accuracies):
        raise IndexError(f"scorer index {scorer_index} out of range")
    acc = list(state.accuracies)
    acc[scorer_index] = decay * acc[scorer_index] + (1.0 - decay) * (1.0 if outcome else 0.0)
    return compute_weights(tuple(acc), state.temperature)


def ensemble_predict(
    window: FeatureWindow,
    scorers: list,
    weights: EnsembleWeights,
    config: DetectorConfig = DetectorConfig(),
) -> AnomalyVerdict:
    """Weighted ensemble verdict with dual-threshold gating.

    anomaly_score = sum_i w_i * f_i; confidence = 1 - mean(uncertainty_i);
    ensemble_variance = sum_i w_i (f_i - score)^2. The verdict is anomalous
    only when score > theta1 AND confidence > theta2.
    """
    if len(scorers) != len(weights.weights):
        raise ValueError(f"{len(scorers)} scorers but {len(weights.weights)} weights")
    start_ns = time.perf_counter_ns()
    scores = np.empty(len(scorers))
    uncertainties = np.empty(len(scorers))
    for i, scorer in enumerate(scorers):
        scores[i], uncertainties[i] = scorer.predict(window)
    w = np.asarray(weights.weights)
    anomaly_score = float(w @ scores)
    confidence = float(1.0 - uncertainties.mean())
    variance = float(w @ (scores - anomaly_score) ** 2)
    is_anomaly = anomaly_score > config.theta1 and confidence > config.theta2
    elapsed_us = (time.perf_counter_ns() - start_ns) // 1000
    return AnomalyVerdict(
        anomaly_score=anomaly_score,
        confidence=confidence,
        ensemble_variance=variance,
        is_anomaly=is_anomaly,
        severity=anomaly_score,
        threat_level=threat_level_for(anomaly_score),
        inference_time_us=int(elapsed_us),
    )


# ---------------------------------------------------------------------------
# Threat classification

_CHANNEL_INDEX = {name: i for i, name in enumerate(SUMMARY_CHANNELS)}
_LIDAR_CHANNELS = [_CHANNEL_INDEX[n] for n in (
    "lidar_point_density", "lidar_mean_distance", "lidar_height_variance", "lidar_spatial_density")]
_CAMERA_CHANNELS = [_CHANNEL_INDEX[n] for n in (
    "cam_brightness", "cam_contrast", "cam_sharpness", "cam_saturation")]
_POS_CHANNELS = [_CHANNEL_INDEX[n] for n in ("pos_x", "pos_y", "pos_z")]
_QUAT_CHANNELS = [_CHANNEL_INDEX[n] for n in ("quat_w", "quat_x", "quat_y", "quat_z")]
_LATENCY_CHANNEL = _CHANNEL_INDEX["actuator_latency_ms"]


class ThreatClassifier:
    """Attributes an anomalous window to the attack family whose feature
    group deviates most from the clean baseline.

    The baseline (per-channel moments of clean windows plus typical motion
    step sizes) is estimated once from a clean training corpus. Returns
    UNKNOWN when no group clears the minimum deviation or dominance margin.
    """

    def __init__(self, min_deviation: float = 4.0, dominance: float = 1.3):
        self.min_deviation = min_deviation
        self.dominance = dominance

    def fit(self, clean_windows: list[FeatureWindow]) -> "ThreatClassifier":
        if not clean_windows:
            raise ValueError("need at least one clean window to fit baselines")
        means = np.array([w.as_array.mean(axis=0) for w in clean_windows])
        self.base_mean = means.mean(axis=0)
        self.base_std = np.maximum(means.std(axis=0), 1e-6)
        steps = []
        for w in clean_windows:
            pos = w.as_array[:, _POS_CHANNELS]
            steps.append(np.linalg.norm(np.diff(pos, axis=0), axis=1))
        self.step_p95 = max(float(np.percentile(np.concatenate(steps), 95)), 1e-6)
        return self

    def group_scores(self, window: FeatureWindow) -> dict[ThreatClass, float]:
        arr = window.as_array
        chan_mean = arr.mean(axis=0)
        z = np.abs(chan_mean - self.base_mean) / self.base_std

        pos = arr[:, _POS_CHANNELS]
        max_step = float(np.linalg.norm(np.diff(pos, axis=0), axis=1).max())
        quat = arr[:, _QUAT_CHANNELS]
        norm_dev = float(np.abs(np.linalg.norm(quat, axis=1) - 1.0).max())

        return {
            ThreatClass.LIDAR_SPOOF: float(z[_LIDAR_CHANNELS].mean()),
            ThreatClass.CAMERA_PATCH: float(z[_CAMERA_CHANNELS].mean()),
            ThreatClass.GPS_SPOOF: max_step / self.step_p95,
            ThreatClass.IMU_MANIP: norm_dev / 0.005,
            ThreatClass.ACTUATOR_COMPROMISE: float(z[_LATENCY_CHANNEL]),
        }

    def classify(self, window: FeatureWindow, anomaly_score: float) -> ThreatClass:
        scores = self.group_scores(window)
        ranked = sorted(scores.items(), key=lambda kv: kv[1], reverse=True)
        top_class, top = ranked[0]
        second = ranked[1][1]
        if top < self.min_deviation or top < self.dominance * second:
            return ThreatClass.UNKNOWN
        return top_class


# ---------------------------------------------------------------------------
# Signatures

_SIGNATURE_MAGIC = b"TGSG"


def _canonical_signature_bytes(
    window: FeatureWindow, threat_level: ThreatLevel, vehicle_id: str, timestamp_ms: int
) -> bytes:
    # Fixed-width little-endian packing; features rounded to 6 decimals so
    # the digest is bit-stable across platforms.
    summary = np.round(summary_features(window), 6)
    parts = [
        _SIGNATURE_MAGIC,
        struct.pack("<H", len(summary)),
        struct.pack(f"<{len(summary)}d", *summary),
        struct.pack("<B", list(ThreatLevel).index(threat_level)),
    ]
    vid = vehicle_id.encode("utf-8")
    parts.append(struct.pack("<H", len(vid)))
    parts.append(vid)
    parts.append(struct.pack("<q", timestamp_ms))
    return b"".join(parts)


def make_signature(
    window: FeatureWindow,
    threat_level: ThreatLevel,
    vehicle_id: str,
    timestamp_ms: int,
    severity: float = 0.0,
    attack_class: ThreatClass = ThreatClass.UNKNOWN,
    region_id: str = "",
) -> ThreatSignature:
    """SHA-256 signature over the canonical (window, level, vehicle, time) encoding."""
    digest = hashlib.sha256(
        _canonical_signature_bytes(window, threat_level, vehicle_id, timestamp_ms)
    ).digest()
    return ThreatSignature(
        digest=digest,
        severity=severity,
        attack_class=attack_class,
        vehicle_id=vehicle_id,
        region_id=region_id,
        timestamp_ms=timestamp_ms,
    )
