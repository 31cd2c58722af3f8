"""Synthetic multimodal sensor streams, attack injection, and windowing.

Every generator and injector here is a pure function of (seed, config):
identical inputs give bit-identical output streams, which is what makes
full scenario runs reproducible.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.signal import lfilter

DEFAULT_SAMPLE_PERIOD_MS = 10  # 100 Hz
DEFAULT_WINDOW_LEN = 50        # 500 ms of samples
DEFAULT_ACTUATOR_LATENCY_MS = 20.0

# Column order is the wire format for feature CSV files and the canonical
# ordering used when hashing window content.
CSV_COLUMNS = (
    "timestamp_ms",
    "lidar_point_density",
    "lidar_mean_distance",
    "lidar_height_variance",
    "lidar_spatial_density",
    "cam_brightness",
    "cam_contrast",
    "cam_sharpness",
    "cam_saturation",
    "pos_x",
    "pos_y",
    "pos_z",
    "quat_w",
    "quat_x",
    "quat_y",
    "quat_z",
)

FLOAT_FIELDS = CSV_COLUMNS[1:]

# Channels fed into window summaries: the 15 CSV features plus the auxiliary
# actuator response-latency channel (not part of the CSV schema; it exists so
# actuator compromises have something to show up in).
SUMMARY_CHANNELS = FLOAT_FIELDS + ("actuator_latency_ms",)


class AttackKind(Enum):
    GPS_SPOOF = "GpsSpoof"
    LIDAR_SPOOF = "LidarSpoof"
    CAMERA_PATCH = "CameraPatch"
    IMU_MANIP = "ImuManip"
    COMM_JAM = "CommJam"
    ML_POISON = "MlPoison"
    ACTUATOR_COMPROMISE = "ActuatorCompromise"


# Kinds that perturb sensor features directly. CommJam and MlPoison act on
# the network and federated layers instead and leave streams untouched.
FEATURE_ATTACK_KINDS = frozenset(
    {
        AttackKind.GPS_SPOOF,
        AttackKind.LIDAR_SPOOF,
        AttackKind.CAMERA_PATCH,
        AttackKind.IMU_MANIP,
        AttackKind.ACTUATOR_COMPROMISE,
    }
)


@dataclass(frozen=True)
class FeatureVector:
    """One multimodal sample at a single timestep."""

    timestamp_ms: int
    lidar_point_density: float
    lidar_mean_distance: float
    lidar_height_variance: float
    lidar_spatial_density: float
    cam_brightness: float
    cam_contrast: float
    cam_sharpness: float
    cam_saturation: float
    pos_x: float
    pos_y: float
    pos_z: float
    quat_w: float
    quat_x: float
    quat_y: float
    quat_z: float
    actuator_latency_ms: float = DEFAULT_ACTUATOR_LATENCY_MS

    def quat_norm(self) -> float:
        return math.sqrt(
            self.quat_w**2 + self.quat_x**2 + self.quat_y**2 + self.quat_z**2
        )

    def validate(self) -> None:
        """Raise ValueError on any invariant violation (clean-sample rules)."""
        for name in (
            "lidar_point_density",
            "lidar_mean_distance",
            "lidar_height_variance",
            "lidar_spatial_density",
        ):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("cam_brightness", "cam_contrast", "cam_sharpness", "cam_saturation"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        if abs(self.quat_norm() - 1.0) > 1e-6:
            raise ValueError(f"quaternion norm {self.quat_norm()} deviates from 1")

    def channel_values(self) -> tuple[float, ...]:
        return tuple(getattr(self, name) for name in SUMMARY_CHANNELS)


@dataclass(frozen=True)
class LabeledSample:
    sample: FeatureVector
    is_attack: bool = False
    attack_kind: AttackKind | None = None

    def __post_init__(self):
        if self.is_attack != (self.attack_kind is not None):
            raise ValueError("attack_kind must be present iff is_attack is true")


@dataclass(frozen=True)
class FeatureWindow:
    """Fixed-length run of consecutive samples from one vehicle."""

    samples: tuple[FeatureVector, ...]
    vehicle_id: str
    window_start_ms: int

    def __post_init__(self):
        if len(self.samples) < 1:
            raise ValueError("window must contain at least one sample")
        spacing = None
        prev = None
        for s in self.samples:
            if prev is not None:
                step = s.timestamp_ms - prev.timestamp_ms
                if step <= 0:
                    raise ValueError("window timestamps must be strictly increasing")
                if spacing is None:
                    spacing = step
                elif step != spacing:
                    raise ValueError("window timestamps must be evenly spaced")
            prev = s

    def __len__(self) -> int:
        return len(self.samples)

    @cached_property
    def as_array(self) -> np.ndarray:
        """(T, channels) matrix in SUMMARY_CHANNELS order."""
        return np.array([s.channel_values() for s in self.samples], dtype=np.float64)


@dataclass(frozen=True)
class LabeledWindow:
    window: FeatureWindow
    is_attack: bool
    attack_kind: AttackKind | None = None

    def __post_init__(self):
        if self.is_attack != (self.attack_kind is not None):
            raise ValueError("attack_kind must be present iff is_attack is true")


@dataclass(frozen=True)
class AttackScenario:
    kind: AttackKind
    intensity: float
    start_ms: int
    end_ms: int
    target_vehicles: frozenset[str]

    def __post_init__(self):
        if not 0.0 < self.intensity <= 1.0:
            raise ValueError(f"intensity must be in (0, 1], got {self.intensity}")
        if self.start_ms >= self.end_ms:
            raise ValueError("start_ms must be < end_ms")
        if not self.target_vehicles:
            raise ValueError("target_vehicles must be non-empty")


@dataclass(frozen=True)
class DriveProfile:
    """Parameters for the clean-stream generator.

    Channels evolve as mean-reverting AR(1) processes around per-channel
    baselines; positions integrate a smoothly turning heading at
    ``speed_mps``. Only relative anomaly structure matters downstream, so the
    absolute values are calibration constants, not claims.
    """

    speed_mps: float = 12.0
    turn_rate_std: float = 0.02       # rad per step heading jitter
    reversion: float = 0.05           # AR(1) pull toward channel baseline
    noise_scale: float = 1.0          # multiplies per-channel volatility
    sample_period_ms: int = DEFAULT_SAMPLE_PERIOD_MS


DEFAULT_PROFILE = DriveProfile()

# Per-channel (baseline, volatility) for the mean-reverting channels.
_CHANNEL_DYNAMICS = {
    "lidar_point_density": (0.55, 0.012),
    "lidar_mean_distance": (18.0, 0.25),
    "lidar_height_variance": (0.35, 0.010),
    "lidar_spatial_density": (0.45, 0.010),
    "cam_brightness": (0.52, 0.008),
    "cam_contrast": (0.48, 0.008),
    "cam_sharpness": (0.60, 0.008),
    "cam_saturation": (0.50, 0.008),
    "actuator_latency_ms": (DEFAULT_ACTUATOR_LATENCY_MS, 0.35),
}

_NON_NEGATIVE = {
    "lidar_point_density",
    "lidar_mean_distance",
    "lidar_height_variance",
    "lidar_spatial_density",
    "actuator_latency_ms",
}
_UNIT_RANGE = {"cam_brightness", "cam_contrast", "cam_sharpness", "cam_saturation"}


def _vehicle_seed(seed: int, vehicle_id: str) -> np.random.SeedSequence:
    # Stable across processes: derive an integer key from the id bytes.
    key = int.from_bytes(vehicle_id.encode("utf-8").ljust(8, b"\0")[:8], "little")
    return np.random.SeedSequence(entropy=(seed, key, len(vehicle_id)))


def _ar1(rng: np.random.Generator, n: int, baseline: float, vol: float, phi: float) -> np.ndarray:
    noise = rng.standard_normal(n) * vol
    # x_t = baseline + phi * (x_{t-1} - baseline) + noise_t, started at baseline
    deviations = lfilter([1.0], [1.0, -phi], noise)
    return baseline + deviations


def generate_clean_stream(
    seed: int,
    vehicle_id: str,
    duration_ms: int,
    profile: DriveProfile = DEFAULT_PROFILE,
) -> list[FeatureVector]:
    """Generate one vehicle's clean feature stream.

    Returns duration_ms / sample_period samples. Deterministic in
    (seed, vehicle_id, duration, profile).
    """
    if duration_ms <= 0:
        raise ValueError("duration_ms must be positive")
    period = profile.sample_period_ms
    if period <= 0:
        raise ValueError("sample period must be positive")
    if duration_ms % period != 0:
        raise ValueError("sample period must divide duration_ms")

    n = duration_ms // period
    rng = np.random.default_rng(_vehicle_seed(seed, vehicle_id))
    dt = period / 1000.0
    phi = 1.0 - profile.reversion

    channels: dict[str, np.ndarray] = {}
    for name, (baseline, vol) in _CHANNEL_DYNAMICS.items():
        series = _ar1(rng, n, baseline, vol * profile.noise_scale, phi)
        if name in _NON_NEGATIVE:
            series = np.maximum(series, 0.0)
        if name in _UNIT_RANGE:
            series = np.clip(series, 0.0, 1.0)
        channels[name] = series

    # Smooth planar trajectory: heading random-walks, position integrates it.
    heading0 = rng.uniform(0.0, 2.0 * math.pi)
    heading = heading0 + np.cumsum(rng.standard_normal(n) * profile.turn_rate_std)
    step = profile.speed_mps * dt
    origin = rng.uniform(-500.0, 500.0, size=2)
    pos_x = origin[0] + np.cumsum(step * np.cos(heading))
    pos_y = origin[1] + np.cumsum(step * np.sin(heading))
    pos_z = 0.3 * np.sin(np.arange(n) * 0.01 + rng.uniform(0, math.pi)) + rng.standard_normal(n) * 0.01

    # Orientation follows heading (yaw-only), unit-normalized by construction.
    half = heading / 2.0
    quat_w = np.cos(half)
    quat_z = np.sin(half)
    tilt = rng.standard_normal(n) * 0.002
    quat_x = tilt
    quat_y = rng.standard_normal(n) * 0.002
    norm = np.sqrt(quat_w**2 + quat_x**2 + quat_y**2 + quat_z**2)
    quat_w, quat_x, quat_y, quat_z = (q / norm for q in (quat_w, quat_x, quat_y, quat_z))

    samples = []
    for i in range(n):
        samples.append(
            FeatureVector(
                timestamp_ms=i * period,
                lidar_point_density=float(channels["lidar_point_density"][i]),
                lidar_mean_distance=float(channels["lidar_mean_distance"][i]),
                lidar_height_variance=float(channels["lidar_height_variance"][i]),
                lidar_spatial_density=float(channels["lidar_spatial_density"][i]),
                cam_brightness=float(channels["cam_brightness"][i]),
                cam_contrast=float(channels["cam_contrast"][i]),
                cam_sharpness=float(channels["cam_sharpness"][i]),
                cam_saturation=float(channels["cam_saturation"][i]),
                pos_x=float(pos_x[i]),
                pos_y=float(pos_y[i]),
                pos_z=float(pos_z[i]),
                quat_w=float(quat_w[i]),
                quat_x=float(quat_x[i]),
                quat_y=float(quat_y[i]),
                quat_z=float(quat_z[i]),
                actuator_latency_ms=float(channels["actuator_latency_ms"][i]),
            )
        )
    return samples


# Saturating perturbation magnitudes at intensity 1.0. The source material
# never quantifies injected deviations, so these are calibration constants
# chosen to straddle the detectable range at low intensity.
GPS_OFFSET_M = 14.0
GPS_JITTER_M = 2.5
LIDAR_DENSITY_FACTOR = 0.9
LIDAR_DISTANCE_SHIFT_M = 9.0
LIDAR_VARIANCE_FACTOR = 1.6
CAMERA_SHIFT = 0.38
IMU_QUAT_DRIFT = 0.16
IMU_POS_JITTER_M = 1.2
ACTUATOR_LATENCY_BOOST_MS = 90.0


def _clip01(x: float) -> float:
    return min(1.0, max(0.0, x))


def inject_attack(
    stream: Sequence[FeatureVector],
    scenario: AttackScenario,
    seed: int,
    vehicle_id: str | None = None,
) -> list[LabeledSample]:
    """Apply a labeled attack to the samples inside the scenario window.

    Samples outside [start_ms, end_ms) or for non-target vehicles are passed
    through unchanged. Perturbation shape is drawn once per scenario from
    `seed`, then scaled by intensity, so deviation magnitude is monotone in
    intensity under a fixed seed.
    """
    if not stream:
        return []
    first, last = stream[0].timestamp_ms, stream[-1].timestamp_ms
    if scenario.end_ms <= first or scenario.start_ms > last:
        raise ValueError("attack window does not overlap the stream time range")

    targeted = vehicle_id is None or vehicle_id in scenario.target_vehicles
    if scenario.kind not in FEATURE_ATTACK_KINDS or not targeted:
        # Network / model-poisoning attacks are realized elsewhere.
        return [LabeledSample(s) for s in stream]

    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=(seed, hash_attack_kind(scenario.kind)))
    )
    affected = [
        i for i, s in enumerate(stream) if scenario.start_ms <= s.timestamp_ms < scenario.end_ms
    ]
    m = len(affected)
    intensity = scenario.intensity
    out: list[LabeledSample] = [LabeledSample(s) for s in stream]

    if scenario.kind is AttackKind.GPS_SPOOF:
        direction = rng.standard_normal(2)
        direction /= np.linalg.norm(direction)
        jitter = rng.standard_normal((m, 2)) * GPS_JITTER_M
        for j, i in enumerate(affected):
            s = stream[i]
            dx = intensity * (GPS_OFFSET_M * direction[0] + jitter[j, 0])
            dy = intensity * (GPS_OFFSET_M * direction[1] + jitter[j, 1])
            out[i] = LabeledSample(
                replace(s, pos_x=s.pos_x + dx, pos_y=s.pos_y + dy),
                True,
                scenario.kind,
            )
    elif scenario.kind is AttackKind.LIDAR_SPOOF:
        u = rng.uniform(0.35, 1.0, size=(m, 4))
        sign = 1.0 if rng.random() < 0.5 else -1.0
        for j, i in enumerate(affected):
            s = stream[i]
            out[i] = LabeledSample(
                replace(
                    s,
                    lidar_point_density=max(
                        0.0, s.lidar_point_density * (1.0 + sign * intensity * LIDAR_DENSITY_FACTOR * u[j, 0])
                    ),
                    lidar_mean_distance=s.lidar_mean_distance
                    + intensity * LIDAR_DISTANCE_SHIFT_M * u[j, 1],
                    lidar_height_variance=s.lidar_height_variance
                    * (1.0 + intensity * LIDAR_VARIANCE_FACTOR * u[j, 2]),
                    lidar_spatial_density=max(
                        0.0, s.lidar_spatial_density * (1.0 + sign * intensity * LIDAR_DENSITY_FACTOR * u[j, 3])
                    ),
                ),
                True,
                scenario.kind,
            )
    elif scenario.kind is AttackKind.CAMERA_PATCH:
        signs = np.where(rng.random(4) < 0.5, -1.0, 1.0)
        u = rng.uniform(0.5, 1.0, size=(m, 4))
        for j, i in enumerate(affected):
            s = stream[i]
            out[i] = LabeledSample(
                replace(
                    s,
                    cam_brightness=_clip01(s.cam_brightness + signs[0] * intensity * CAMERA_SHIFT * u[j, 0]),
                    cam_contrast=_clip01(s.cam_contrast + signs[1] * intensity * CAMERA_SHIFT * u[j, 1]),
                    cam_sharpness=_clip01(s.cam_sharpness + signs[2] * intensity * CAMERA_SHIFT * u[j, 2]),
                    cam_saturation=_clip01(s.cam_saturation + signs[3] * intensity * CAMERA_SHIFT * u[j, 3]),
                ),
                True,
                scenario.kind,
            )
    elif scenario.kind is AttackKind.IMU_MANIP:
        drift = rng.standard_normal((m, 4)) * IMU_QUAT_DRIFT
        walk = np.cumsum(rng.standard_normal((m, 2)) * IMU_POS_JITTER_M * 0.2, axis=0)
        for j, i in enumerate(affected):
            s = stream[i]
            out[i] = LabeledSample(
                replace(
                    s,
                    quat_w=s.quat_w + intensity * drift[j, 0],
                    quat_x=s.quat_x + intensity * drift[j, 1],
                    quat_y=s.quat_y + intensity * drift[j, 2],
                    quat_z=s.quat_z + intensity * drift[j, 3],
                    pos_x=s.pos_x + intensity * walk[j, 0],
                    pos_y=s.pos_y + intensity * walk[j, 1],
                ),
                True,
                scenario.kind,
            )
    elif scenario.kind is AttackKind.ACTUATOR_COMPROMISE:
        u = rng.uniform(0.4, 1.0, size=m)
        for j, i in enumerate(affected):
            s = stream[i]
            out[i] = LabeledSample(
                replace(
                    s,
                    actuator_latency_ms=s.actuator_latency_ms
                    + intensity * ACTUATOR_LATENCY_BOOST_MS * u[j],
                ),
                True,
                scenario.kind,
            )
    else:  # pragma: no cover - guarded by FEATURE_ATTACK_KINDS membership
        raise ValueError(f"unknown attack kind {scenario.kind}")
    return out


def hash_attack_kind(kind: AttackKind) -> int:
    """Stable small integer for seeding per-kind RNG streams."""
    return list(AttackKind).index(kind)


def make_windows(
    stream: Sequence[LabeledSample] | Sequence[FeatureVector],
    vehicle_id: str,
    window_len: int = DEFAULT_WINDOW_LEN,
    stride: int = DEFAULT_WINDOW_LEN,
) -> list[LabeledWindow]:
    """Slice a stream into overlapping fixed-length windows.

    Yields floor((len - T) / stride) + 1 windows. A window is attack-labeled
    iff any of its samples is.
    """
    if window_len < 1 or stride < 1:
        raise ValueError("window_len and stride must be >= 1")
    if len(stream) < window_len:
        raise ValueError(f"stream of {len(stream)} samples is shorter than T={window_len}")

    labeled: list[LabeledSample] = [
        s if isinstance(s, LabeledSample) else LabeledSample(s) for s in stream
    ]
    windows = []
    for start in range(0, len(labeled) - window_len + 1, stride):
        chunk = labeled[start : start + window_len]
        fw = FeatureWindow(
            samples=tuple(ls.sample for ls in chunk),
            vehicle_id=vehicle_id,
            window_start_ms=chunk[0].sample.timestamp_ms,
        )
        hit_kinds = [ls.attack_kind for ls in chunk if ls.is_attack]
        if hit_kinds:
            windows.append(LabeledWindow(fw, True, hit_kinds[0]))
        else:
            windows.append(LabeledWindow(fw, False, None))
    return windows


def export_feature_csv(stream: Iterable[FeatureVector], path: str | Path) -> None:
    """Write a stream in the documented CSV wire format (UTF-8, '.' decimals)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for s in stream:
            writer.writerow([s.timestamp_ms] + [repr(getattr(s, f)) for f in FLOAT_FIELDS])


def ingest_feature_csv(path: str | Path) -> list[FeatureVector]:
    """Load a per-vehicle feature CSV, validating schema and invariants.

    Rejects missing columns, non-numeric cells, non-monotone timestamps, and
    rows violating FeatureVector invariants; errors name the offending row.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("empty feature CSV") from None
        if tuple(header) != CSV_COLUMNS:
            missing = set(CSV_COLUMNS) - set(header)
            raise ValueError(
                f"feature CSV header mismatch (missing or misordered columns: {sorted(missing) or header})"
            )
        samples: list[FeatureVector] = []
        prev_ts = None
        for row_no, row in enumerate(reader, start=1):
            if len(row) != len(CSV_COLUMNS):
                raise ValueError(f"row {row_no}: expected {len(CSV_COLUMNS)} cells, got {len(row)}")
            try:
                ts = int(row[0])
                values = [float(cell) for cell in row[1:]]
            except ValueError:
                raise ValueError(f"row {row_no}: non-numeric cell") from None
            if prev_ts is not None and ts <= prev_ts:
                raise ValueError(f"row {row_no}: timestamps must be strictly increasing")
            prev_ts = ts
            sample = FeatureVector(ts, *values)
            try:
                sample.validate()
            except ValueError as exc:
                raise ValueError(f"row {row_no}: {exc}") from None
            samples.append(sample)
    return samples
