"""Metrics report: classification math, export formats, round-tripping.

Wall-clock timing observations (tier-1 inference latency, assembly time) are
physically nondeterministic, so they are kept in a separate section that the
canonical export omits; everything in the deterministic section is a pure
function of (seed, config) and exports byte-identically across reruns.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path


def classification_metrics(tp: int, fp: int, tn: int, fn: int) -> tuple[float, float, float, float, list[str]]:
    """(accuracy, precision, recall, f1, notes) with explicit degenerate rules.

    With no predicted positives precision is undefined and reported as 1.0
    (flagged); with no actual positives recall is vacuously 1.0 (flagged).
    """
    total = tp + fp + tn + fn
    notes = []
    accuracy = (tp + tn) / total if total else 1.0
    if tp + fp == 0:
        precision = 1.0
        notes.append("precision degenerate: no predicted positives")
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        recall = 1.0
        notes.append("recall vacuous: no actual positives")
    else:
        recall = tp / (tp + fn)
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return accuracy, precision, recall, f1, notes


@dataclass(frozen=True)
class TimingStats:
    """Wall-clock observations; excluded from deterministic exports."""

    latency_mean_ms: float = 0.0
    latency_p95_ms: float = 0.0
    latency_median_ms: float = 0.0
    tau_max_violations: int = 0
    block_assembly_mean_us: float = 0.0


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    true_positives: int
    false_positives: int
    true_negatives: int
    false_negatives: int
    per_attack_detection_rate: dict[str, float]
    fl_convergence: list[tuple[int, float]]
    rounds_to_converge: int
    blocks_mined: int
    mean_block_time_s: float
    logged_fraction: float
    total_threat_events: int
    logged_threat_events: int
    throughput_threats_per_s_per_region: float
    privacy_budget_basic: float
    privacy_budget_advanced: float
    messages_sent: int
    drop_count: int
    simulated_latency_mean_ms: dict[str, float]
    alpha_min_met: bool
    notes: list[str] = field(default_factory=list)
    timing: TimingStats = field(default_factory=TimingStats)

    # Wall-clock aliases named after the headline quantities.
    @property
    def latency_mean_ms(self) -> float:
        return self.timing.latency_mean_ms

    @property
    def latency_p95_ms(self) -> float:
        return self.timing.latency_p95_ms

    def deterministic_dict(self) -> dict:
        data = asdict(self)
        del data["timing"]
        data["fl_convergence"] = [[int(r), float(v)] for r, v in self.fl_convergence]
        return data

    def timing_dict(self) -> dict:
        return asdict(self.timing)


_CSV_LIST_SEP = ";"


def _flatten_for_csv(report: MetricsReport) -> dict[str, str]:
    row: dict[str, str] = {}
    for key, value in report.deterministic_dict().items():
        if key == "per_attack_detection_rate":
            for kind, rate in sorted(value.items()):
                row[f"det_rate__{kind}"] = repr(rate)
        elif key == "fl_convergence":
            row[key] = _CSV_LIST_SEP.join(f"{r}:{repr(v)}" for r, v in value)
        elif key == "simulated_latency_mean_ms":
            for tier, ms in sorted(value.items()):
                row[f"sim_latency__{tier}"] = repr(ms)
        elif key == "notes":
            row[key] = _CSV_LIST_SEP.join(value)
        elif isinstance(value, bool):
            row[key] = "1" if value else "0"
        elif isinstance(value, float):
            row[key] = repr(value)
        else:
            row[key] = str(value)
    return row


def export_report(report: MetricsReport, path: str | Path, fmt: str = "json",
                  include_timing: bool = False) -> None:
    """Write a report; json mirrors field names, csv is a one-row table.

    The default export contains only deterministic quantities and is
    byte-identical across same-seed reruns; pass include_timing for the
    wall-clock section (json only).
    """
    path = Path(path)
    if fmt == "json":
        data = report.deterministic_dict()
        if include_timing:
            data["timing"] = report.timing_dict()
        path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    elif fmt == "csv":
        row = _flatten_for_csv(report)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(row.keys())
            writer.writerow(row.values())
    else:
        raise ValueError(f"unknown report format {fmt!r} (expected 'csv' or 'json')")


_INT_FIELDS = {
    "true_positives", "false_positives", "true_negatives", "false_negatives",
    "rounds_to_converge", "blocks_mined", "total_threat_events",
    "logged_threat_events", "messages_sent", "drop_count",
}
_FLOAT_FIELDS = {
    "accuracy", "precision", "recall", "f1", "mean_block_time_s",
    "logged_fraction", "throughput_threats_per_s_per_region",
    "privacy_budget_basic", "privacy_budget_advanced",
}


def import_report(path: str | Path, fmt: str = "json") -> MetricsReport:
    """Reconstruct a report from an exported file (deterministic fields)."""
    path = Path(path)
    if fmt == "json":
        data = json.loads(path.read_text(encoding="utf-8"))
        data.pop("timing", None)
        data["fl_convergence"] = [(int(r), float(v)) for r, v in data["fl_convergence"]]
        return MetricsReport(**data)
    if fmt == "csv":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            row = next(reader)
        kwargs: dict = {
            "per_attack_detection_rate": {},
            "simulated_latency_mean_ms": {},
        }
        for key, raw in row.items():
            if key.startswith("det_rate__"):
                kwargs["per_attack_detection_rate"][key[len("det_rate__"):]] = float(raw)
            elif key.startswith("sim_latency__"):
                kwargs["simulated_latency_mean_ms"][key[len("sim_latency__"):]] = float(raw)
            elif key == "fl_convergence":
                pairs = [p for p in raw.split(_CSV_LIST_SEP) if p]
                kwargs[key] = [(int(p.split(":")[0]), float(p.split(":")[1])) for p in pairs]
            elif key == "notes":
                kwargs[key] = [n for n in raw.split(_CSV_LIST_SEP) if n]
            elif key == "alpha_min_met":
                kwargs[key] = raw == "1"
            elif key in _INT_FIELDS:
                kwargs[key] = int(raw)
            elif key in _FLOAT_FIELDS:
                kwargs[key] = float(raw)
            else:
                kwargs[key] = raw
        return MetricsReport(**kwargs)
    raise ValueError(f"unknown report format {fmt!r} (expected 'csv' or 'json')")
