"""Regional federated learning: robust aggregation under adversarial clients.

Clients submit gradient-difference updates; the coordinator trims
per-coordinate outliers against the median before averaging, adds Laplace
noise calibrated to sensitivity/epsilon, and tracks the cumulative privacy
budget across rounds. A quadratic convergence oracle with a known optimum
validates the contraction behaviour empirically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np


@dataclass(frozen=True)
class GlobalModel:
    weights: np.ndarray
    round: int = 0

    def __post_init__(self):
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("model weights must be finite")


@dataclass(frozen=True)
class ClientUpdate:
    vehicle_id: str
    delta: np.ndarray
    sample_count: int

    def __post_init__(self):
        if self.sample_count <= 0:
            raise ValueError("sample_count must be positive")

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.delta)))


@dataclass(frozen=True)
class AggregatorConfig:
    trim_ratio: float = 0.3
    learning_rate: float = 0.5
    round_interval_s: float = 30.0
    weighted_survivors: bool = False  # weight trim survivors by sample counts

    def __post_init__(self):
        if not 0.0 <= self.trim_ratio < 0.5:
            raise ValueError("trim_ratio must lie in [0, 0.5)")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")


@dataclass(frozen=True)
class PrivacyConfig:
    epsilon: float = 1.0
    delta_fail: float = 1e-5
    sensitivity: float = 1.0
    zero_noise: bool = False  # test-only escape hatch

    def __post_init__(self):
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if not 0.0 < self.delta_fail < 1.0:
            raise ValueError("delta_fail must lie in (0, 1)")
        if self.sensitivity <= 0.0:
            raise ValueError("sensitivity must be positive")

    @classmethod
    def for_region(cls, vehicle_count: int, epsilon: float = 1.0,
                   delta_fail: float = 1e-5, zero_noise: bool = False) -> "PrivacyConfig":
        """Derive sensitivity 1/|V| from the regional cluster size."""
        if vehicle_count <= 0:
            raise ValueError("vehicle_count must be positive")
        return cls(epsilon=epsilon, delta_fail=delta_fail,
                   sensitivity=1.0 / vehicle_count, zero_noise=zero_noise)

    @property
    def noise_scale(self) -> float:
        return self.sensitivity / self.epsilon


@dataclass
class PrivacyAccountant:
    per_round_epsilon: float
    delta_fail: float = 1e-5
    rounds_used: int = 0

    def charge(self, rounds: int = 1) -> None:
        if rounds < 0:
            raise ValueError("rounds must be >= 0")
        self.rounds_used += rounds

    def budgets(self) -> tuple[float, float]:
        return accountant_charge(self, self.rounds_used)


def accountant_charge(accountant: PrivacyAccountant, rounds: int) -> tuple[float, float]:
    """(basic, advanced) composed privacy cost after `rounds` releases.

    Basic composition is exactly T * eps. Advanced composition uses the
    standard eps*sqrt(2T ln(1/delta)) + T*eps*(e^eps - 1) bound.
    """
    if rounds < 0:
        raise ValueError("rounds must be >= 0")
    eps = accountant.per_round_epsilon
    basic = rounds * eps
    if rounds == 0:
        return 0.0, 0.0
    advanced = eps * math.sqrt(2.0 * rounds * math.log(1.0 / accountant.delta_fail)) \
        + rounds * eps * (math.exp(eps) - 1.0)
    return basic, advanced


class ByzantineKind(Enum):
    SIGN_FLIP = "SignFlip"
    LARGE_NORM = "LargeNorm"
    RANDOM_NOISE = "RandomNoise"
    LABEL_FLIP = "LabelFlip"


@dataclass(frozen=True)
class ByzantineBehavior:
    kind: ByzantineKind
    magnitude: float = 1.0

    def __post_init__(self):
        if not math.isfinite(self.magnitude) or self.magnitude <= 0.0:
            raise ValueError("magnitude must be finite and positive")


# ---------------------------------------------------------------------------
# Local objectives and training


class QuadraticObjective:
    """F(w) = 0.5 * (w - c)^T A (w - c) with diagonal curvature A."""

    def __init__(self, center: np.ndarray, curvature: np.ndarray | None = None,
                 sample_count: int = 1):
        self.center = np.asarray(center, dtype=np.float64)
        self.curvature = (np.ones_like(self.center) if curvature is None
                          else np.asarray(curvature, dtype=np.float64))
        self.sample_count = sample_count

    def gradient(self, w: np.ndarray) -> np.ndarray:
        return self.curvature * (w - self.center)

    def loss(self, w: np.ndarray) -> float:
        diff = w - self.center
        return 0.5 * float(diff @ (self.curvature * diff))


class LogisticObjective:
    """Mean logistic loss over (features, +/-1 labels), optionally L2-regularized."""

    def __init__(self, features: np.ndarray, labels: np.ndarray, reg: float = 0.0):
        features = np.asarray(features, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] == 0:
            raise ValueError("local data must be a non-empty (n, d) matrix")
        if set(np.unique(labels)) - {-1.0, 1.0}:
            raise ValueError("labels must be +/-1")
        self.x = features
        self.y = labels
        self.reg = reg
        self.sample_count = features.shape[0]

    def gradient(self, w: np.ndarray) -> np.ndarray:
        margins = self.y * (self.x @ w)
        sig = 1.0 / (1.0 + np.exp(margins))  # sigma(-m)
        grad = -(self.y * sig) @ self.x / self.sample_count
        return grad + self.reg * w

    def loss(self, w: np.ndarray) -> float:
        margins = self.y * (self.x @ w)
        return float(np.mean(np.logaddexp(0.0, -margins))) + 0.5 * self.reg * float(w @ w)

    def flipped(self) -> "LogisticObjective":
        return LogisticObjective(self.x, -self.y, self.reg)


def local_train(global_model: GlobalModel, local_data, learning_rate: float,
                vehicle_id: str = "") -> ClientUpdate:
    """One full-batch gradient step: delta = -eta * grad F_k(w).

    Equivalently delta = w_k' - w for w_k' = w - eta * grad F_k(w).
    """
    if learning_rate <= 0.0:
        raise ValueError("learning_rate must be positive")
    if local_data.sample_count <= 0:
        raise ValueError("local data is empty")
    delta = -learning_rate * local_data.gradient(global_model.weights)
    return ClientUpdate(vehicle_id=vehicle_id, delta=delta,
                        sample_count=local_data.sample_count)


def byzantine_update(behavior: ByzantineBehavior, honest: ClientUpdate,
                     rng: np.random.Generator, local_data=None,
                     global_model: GlobalModel | None = None,
                     learning_rate: float | None = None) -> ClientUpdate:
    """Corrupt an honest update according to the adversary model.

    LabelFlip recomputes the gradient step on label-inverted local data and
    therefore needs the local objective, model, and learning rate.
    """
    kind = behavior.kind
    if kind is ByzantineKind.SIGN_FLIP:
        delta = -behavior.magnitude * honest.delta
    elif kind is ByzantineKind.LARGE_NORM:
        direction = rng.standard_normal(honest.delta.shape)
        delta = behavior.magnitude * direction / np.linalg.norm(direction)
    elif kind is ByzantineKind.RANDOM_NOISE:
        delta = rng.standard_normal(honest.delta.shape) * behavior.magnitude
    elif kind is ByzantineKind.LABEL_FLIP:
        if local_data is None or global_model is None or learning_rate is None:
            raise ValueError("LabelFlip needs local_data, global_model and learning_rate")
        delta = local_train(global_model, local_data.flipped(), learning_rate,
                            honest.vehicle_id).delta
    else:  # pragma: no cover
        raise ValueError(f"unknown byzantine kind {kind}")
    return replace(honest, delta=delta)


# ---------------------------------------------------------------------------
# Robust aggregation


def trimmed_mean(updates: list[np.ndarray] | np.ndarray, trim_ratio: float) -> np.ndarray:
    """Coordinate-wise deviation-quantile trimmed mean.

    Per coordinate: drop values whose absolute deviation from the median
    exceeds the (1 - trim_ratio) quantile of deviations, then average the
    survivors. The median itself always survives. Values are sorted per
    coordinate first so the result is exactly permutation-invariant.
    """
    if not 0.0 <= trim_ratio < 0.5:
        raise ValueError("trim_ratio must lie in [0, 0.5)")
    if len(updates) < 3:
        raise ValueError(f"trimmed mean needs at least 3 updates, got {len(updates)}")
    first_shape = np.shape(updates[0])
    if any(np.shape(u) != first_shape for u in updates):
        raise ValueError("updates must share one dimension")
    matrix = np.asarray(updates, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix[:, None]

    values = np.sort(matrix, axis=0)
    medians = np.median(values, axis=0)
    deviations = np.abs(values - medians)
    cutoff = np.quantile(deviations, 1.0 - trim_ratio, axis=0)
    mask = deviations <= cutoff
    counts = mask.sum(axis=0)
    sums = np.where(mask, values, 0.0).sum(axis=0)
    result = sums / counts
    original = np.asarray(updates[0])
    return result.reshape(original.shape) if original.ndim else result[0]


def _weighted_trimmed_mean(matrix: np.ndarray, weights: np.ndarray, trim_ratio: float) -> np.ndarray:
    """Trim as above, then weight survivors by (renormalized) client weights."""
    order = np.argsort(matrix, axis=0, kind="stable")
    values = np.take_along_axis(matrix, order, axis=0)
    w_sorted = np.take_along_axis(np.broadcast_to(weights[:, None], matrix.shape), order, axis=0)
    medians = np.median(values, axis=0)
    deviations = np.abs(values - medians)
    cutoff = np.quantile(deviations, 1.0 - trim_ratio, axis=0)
    mask = deviations <= cutoff
    w_masked = np.where(mask, w_sorted, 0.0)
    return (values * w_masked).sum(axis=0) / w_masked.sum(axis=0)


def add_laplace(vector: np.ndarray, sensitivity: float, epsilon: float,
                rng: np.random.Generator, zero_noise: bool = False) -> np.ndarray:
    """Add iid Laplace(0, sensitivity/epsilon) noise via inverse-CDF sampling."""
    if sensitivity <= 0.0 or epsilon <= 0.0:
        raise ValueError("sensitivity and epsilon must be positive")
    vector = np.asarray(vector, dtype=np.float64)
    if zero_noise:
        return vector.copy()
    scale = sensitivity / epsilon
    u = rng.random(vector.shape) - 0.5
    # u = -0.5 has probability 2^-53 but would hit log(0); clamp the argument.
    inner = np.maximum(1.0 - 2.0 * np.abs(u), np.finfo(np.float64).tiny)
    noise = -scale * np.sign(u) * np.log(inner)
    return vector + noise


def privatize_signature(signature_stats: np.ndarray, priv_cfg: PrivacyConfig,
                        rng: np.random.Generator) -> np.ndarray:
    """Laplace-noise regional threat statistics for cross-region sharing."""
    return add_laplace(signature_stats, priv_cfg.sensitivity, priv_cfg.epsilon,
                       rng, zero_noise=priv_cfg.zero_noise)


def aggregate_round(global_model: GlobalModel, received: list[ClientUpdate],
                    agg_cfg: AggregatorConfig, priv_cfg: PrivacyConfig,
                    rng: np.random.Generator,
                    accountant: PrivacyAccountant | None = None,
                    ) -> tuple[GlobalModel, int]:
    """One coordinator round: filter, trim, privatize, apply.

    Returns the updated model and the number of updates that survived the
    finiteness check. Updates with non-finite entries are rejected before
    aggregation; trimming needs at least 3 survivors, otherwise the plain
    mean of survivors is used.
    """
    if not received:
        raise ValueError("no client updates received")
    finite = [u for u in received if u.is_finite()]
    if not finite:
        raise ValueError("all client updates were rejected as non-finite")
    deltas = np.array([u.delta for u in finite])
    if len(finite) < 3:
        aggregated = deltas.mean(axis=0)
    elif agg_cfg.weighted_survivors:
        counts = np.array([u.sample_count for u in finite], dtype=np.float64)
        aggregated = _weighted_trimmed_mean(deltas, counts / counts.sum(), agg_cfg.trim_ratio)
    else:
        aggregated = trimmed_mean(deltas, agg_cfg.trim_ratio)
    private = add_laplace(aggregated, priv_cfg.sensitivity, priv_cfg.epsilon,
                          rng, zero_noise=priv_cfg.zero_noise)
    if accountant is not None:
        accountant.charge(1)
    return GlobalModel(global_model.weights + private, global_model.round + 1), len(finite)


# ---------------------------------------------------------------------------
# Convergence oracle


@dataclass(frozen=True)
class OracleResult:
    suboptimality: list[float]
    mu: float
    lipschitz: float

    def log_slope(self, floor: float = 1e-12) -> float:
        """Least-squares slope of log suboptimality over the decaying phase."""
        values = np.asarray(self.suboptimality)
        keep = values > floor * values[0]
        t = np.arange(len(values))[keep]
        if len(t) < 2:
            return float("-inf")
        logs = np.log(values[keep])
        return float(np.polyfit(t, logs, 1)[0])


def convergence_oracle(
    n_clients: int,
    byz_fraction: float,
    behavior: ByzantineBehavior | None,
    mu: float,
    lipschitz: float,
    rounds: int,
    seed: int,
    dim: int = 10,
    center_spread: float = 0.0,
    gradient_noise: float = 0.0,
    trim_ratio: float = 0.3,
    aggregation: str = "trimmed",
) -> OracleResult:
    """Federated rounds on synthetic strongly-convex quadratics.

    Every client shares the diagonal curvature (eigenvalues spanning
    [mu, lipschitz]) but owns a center c_k = c_bar + spread * z_k, so the
    global optimum w* = mean(c_k) is known and the returned sequence is
    F(w_t) - F*. Byzantine clients corrupt their honest step per `behavior`.
    """
    if not 0.0 <= byz_fraction < 1.0:
        raise ValueError("byz_fraction must lie in [0, 1)")
    if byz_fraction > trim_ratio:
        raise ValueError(
            f"byz_fraction {byz_fraction} exceeds trim capacity {trim_ratio}")
    if mu > lipschitz:
        raise ValueError("mu must not exceed the Lipschitz constant")
    if aggregation not in ("trimmed", "mean"):
        raise ValueError("aggregation must be 'trimmed' or 'mean'")

    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 0x07AC1E)))
    curvature = np.linspace(mu, lipschitz, dim)
    c_bar = rng.standard_normal(dim)
    centers = c_bar + center_spread * rng.standard_normal((n_clients, dim))
    w_star = centers.mean(axis=0)
    objectives = [QuadraticObjective(centers[k], curvature) for k in range(n_clients)]
    n_byz = int(round(byz_fraction * n_clients))
    byz_ids = set(range(n_byz))  # first clients are adversarial; order is irrelevant

    def global_suboptimality(w: np.ndarray) -> float:
        mean_loss = float(np.mean([obj.loss(w) for obj in objectives]))
        optimum = float(np.mean([obj.loss(w_star) for obj in objectives]))
        return mean_loss - optimum

    eta = 1.0 / lipschitz
    model = GlobalModel(np.zeros(dim) + 10.0)
    trajectory = [global_suboptimality(model.weights)]
    for _ in range(rounds):
        updates = []
        for k, obj in enumerate(objectives):
            grad = obj.gradient(model.weights)
            if gradient_noise > 0.0:
                grad = grad + rng.standard_normal(dim) * gradient_noise
            honest = ClientUpdate(f"client-{k}", -eta * grad, 1)
            if k in byz_ids and behavior is not None:
                updates.append(byzantine_update(behavior, honest, rng))
            else:
                updates.append(honest)
        deltas = np.array([u.delta for u in updates])
        if aggregation == "trimmed":
            step = trimmed_mean(deltas, trim_ratio)
        else:
            step = deltas.mean(axis=0)
        model = GlobalModel(model.weights + step, model.round + 1)
        trajectory.append(global_suboptimality(model.weights))
    return OracleResult(trajectory, mu, lipschitz)
