"""Session metrics: per-frame RMSE, accuracy, training time, report export.

Each frame contributes one RMSE sample: the root-mean-square Euclidean
distance between corresponding vertices of the aligned current and target
meshes, head vertices excluded (trainees glance at the screen, so head
placement is not scored).  A session reduces its sample series to

    accuracy R = (RMSE_0 - RMSE_min) / RMSE_0 * 100

with t_min the earliest time the minimum is attained, reported as the
training time.  Reports serialize deterministically to JSON (with a CSV
of the raw series) so identical sessions produce identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .body_model import BodyMesh


class MetricsError(ValueError):
    """Invalid metric input (topology mismatch, empty session, bad sample)."""


@dataclass(frozen=True)
class RmseSample:
    t: float
    value: float

    def __post_init__(self):
        if not np.isfinite(self.t):
            raise MetricsError(f"sample time must be finite, got {self.t}")
        if not np.isfinite(self.value) or self.value < 0:
            raise MetricsError(f"RMSE must be finite and >= 0, got {self.value}")


@dataclass(frozen=True)
class SessionMetrics:
    rmse_0: float
    rmse_min: float
    t_min: float
    accuracy_r: float
    sample_count: int
    n_rmse: int
    degenerate: bool = False  # rmse_0 was zero; R pinned to 0


def compute_rmse(current: BodyMesh, target: BodyMesh, head_mask: np.ndarray) -> float:
    """RMS Euclidean vertex distance over the non-head vertices."""
    if current.vertices.shape != target.vertices.shape:
        raise MetricsError(
            f"topology mismatch: {current.vertices.shape} vs {target.vertices.shape}"
        )
    mask = np.asarray(head_mask, dtype=bool)
    if mask.shape != (current.vertices.shape[0],):
        raise MetricsError("head mask length must match the vertex count")
    keep = ~mask
    n_kept = int(np.count_nonzero(keep))
    if n_kept == 0:
        raise MetricsError("no non-head vertices to score")
    diff = current.vertices[keep] - target.vertices[keep]
    return float(np.sqrt(np.einsum("ij,ij->", diff, diff) / n_kept))


class SessionTracker:
    """Streaming accumulator for one training session's RMSE series."""

    def __init__(self, n_rmse: int):
        self.n_rmse = n_rmse
        self.samples: list[RmseSample] = []
        self._min_value: float | None = None
        self._min_t: float | None = None

    def add(self, sample: RmseSample) -> "SessionTracker":
        if self.samples and sample.t < self.samples[-1].t:
            raise MetricsError(
                f"timestamp regression: {sample.t} after {self.samples[-1].t}"
            )
        self.samples.append(sample)
        # Strict < keeps the earliest time on ties.
        if self._min_value is None or sample.value < self._min_value:
            self._min_value = sample.value
            self._min_t = sample.t
        return self

    def finalize(self) -> SessionMetrics:
        if not self.samples:
            raise MetricsError("session has no samples")
        rmse_0 = self.samples[0].value
        assert self._min_value is not None and self._min_t is not None
        degenerate = rmse_0 == 0.0
        if degenerate:
            accuracy = 0.0
        else:
            accuracy = (rmse_0 - self._min_value) / rmse_0 * 100.0
        return SessionMetrics(
            rmse_0=rmse_0,
            rmse_min=self._min_value,
            t_min=self._min_t,
            accuracy_r=accuracy,
            sample_count=len(self.samples),
            n_rmse=self.n_rmse,
            degenerate=degenerate,
        )


def update_session(state: SessionTracker, sample: RmseSample) -> SessionTracker:
    return state.add(sample)


def finalize_metrics(state: SessionTracker) -> SessionMetrics:
    return state.finalize()


# --- Report export ---------------------------------------------------------

GUIDANCE_MODES = ("skeleton", "markers")


def render_report(metrics: SessionMetrics, samples: list[RmseSample], mode: str) -> str:
    """Deterministic JSON report for one finished session."""
    if mode not in GUIDANCE_MODES:
        raise MetricsError(f"mode must be one of {GUIDANCE_MODES}, got {mode!r}")
    doc = {
        "mode": mode,
        "rmse0": metrics.rmse_0,
        "rmseMin": metrics.rmse_min,
        "tMin": metrics.t_min,
        "accuracyR": metrics.accuracy_r,
        "nRmse": metrics.n_rmse,
        "sampleCount": metrics.sample_count,
        "degenerate": metrics.degenerate,
        "samples": [{"t": s.t, "value": s.value} for s in samples],
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def parse_report(text: str | bytes) -> dict:
    doc = json.loads(text)
    required = {"mode", "rmse0", "rmseMin", "tMin", "accuracyR", "nRmse", "samples"}
    missing = required - doc.keys()
    if missing:
        raise MetricsError(f"report missing fields: {sorted(missing)}")
    return doc


def series_to_csv(samples: list[RmseSample]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["t", "rmse"])
    for s in samples:
        writer.writerow([repr(s.t), repr(s.value)])
    return out.getvalue()


def report_to_csv(report: dict) -> str:
    samples = [RmseSample(s["t"], s["value"]) for s in report["samples"]]
    return series_to_csv(samples)


def export_report(
    metrics: SessionMetrics,
    samples: list[RmseSample],
    mode: str,
    json_path,
    csv_path=None,
) -> None:
    """Write the JSON report (and optionally the CSV series) to disk."""
    with open(json_path, "w", encoding="utf-8") as fh:
        fh.write(render_report(metrics, samples, mode))
    if csv_path is not None:
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write(series_to_csv(samples))


def aggregate_reports(reports: list[dict]) -> dict[str, dict[str, list[float]]]:
    """Group finished-session reports by guidance mode for A/B comparison."""
    grouped: dict[str, dict[str, list[float]]] = {}
    for doc in reports:
        bucket = grouped.setdefault(doc["mode"], {"accuracyR": [], "tMin": []})
        bucket["accuracyR"].append(float(doc["accuracyR"]))
        bucket["tMin"].append(float(doc["tMin"]))
    return grouped
