"""Run evaluation: trajectory error metrics, CDFs and detection scores."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attitude import quat_to_dcm

#: Maximum allowed timestamp skew when pairing estimates with truth.
MAX_TIME_SKEW = 1e-3


class DisjointTimeRangesError(ValueError):
    """Estimate and truth time ranges do not overlap."""


@dataclass
class RunReport:
    """Metrics of one estimation run against ground truth."""

    mode: str
    n_epochs: int
    mean_2d: float
    max_2d: float
    mean_3d: float
    max_3d: float
    mean_inclination_deg: float = float("nan")
    max_inclination_deg: float = float("nan")
    mean_heading_deg: float = float("nan")
    cdf: list = field(default_factory=list)  # (error_3d_m, fraction)
    detection_precision: float = float("nan")
    detection_recall: float = float("nan")
    led_errors: dict = field(default_factory=dict)  # led_id -> planar error m
    runtime_s: float = float("nan")
    n_fix_failures: int = 0

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["cdf"] = [[float(e), float(f)] for e, f in self.cdf]
        d["led_errors"] = {str(k): float(v) for k, v in self.led_errors.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        d = dict(d)
        d["cdf"] = [tuple(x) for x in d.get("cdf", [])]
        d["led_errors"] = {int(k): float(v) for k, v in d.get("led_errors", {}).items()}
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "RunReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _align(est_times, truth_times):
    est_times = np.asarray(est_times, dtype=float)
    truth_times = np.asarray(truth_times, dtype=float)
    if est_times.min() > truth_times.max() or est_times.max() < truth_times.min():
        raise DisjointTimeRangesError("estimate and truth time ranges do not overlap")
    idx = np.clip(np.searchsorted(truth_times, est_times), 1, truth_times.size - 1)
    left = truth_times[idx - 1]
    right = truth_times[idx]
    nearest = np.where(np.abs(est_times - left) <= np.abs(right - est_times),
                       idx - 1, idx)
    keep = np.abs(truth_times[nearest] - est_times) <= MAX_TIME_SKEW
    return nearest, keep


def cdf_table(errors) -> list:
    """Monotone CDF of an error sample; ends at fraction 1.0."""
    errors = np.sort(np.asarray(errors, dtype=float))
    n = errors.size
    if n == 0:
        return []
    return [(float(e), float((i + 1) / n)) for i, e in enumerate(errors)]


def normal_angle_deg(q_est, q_true) -> float:
    """Angle between estimated and true photodiode normals (inclination)."""
    n_e = quat_to_dcm(q_est)[:, 2]
    n_t = quat_to_dcm(q_true)[:, 2]
    return float(np.rad2deg(np.arccos(np.clip(n_e @ n_t, -1.0, 1.0))))


def heading_error_deg(q_est, q_true) -> float:
    R_e = quat_to_dcm(q_est)
    R_t = quat_to_dcm(q_true)
    yaw_e = np.arctan2(R_e[1, 0], R_e[0, 0])
    yaw_t = np.arctan2(R_t[1, 0], R_t[0, 0])
    d = (yaw_e - yaw_t + np.pi) % (2.0 * np.pi) - np.pi
    return float(np.rad2deg(abs(d)))


def evaluate_run(mode: str, est_times, est_positions, truth, est_attitudes=None,
                 runtime_s: float = float("nan"), n_fix_failures: int = 0) -> RunReport:
    """Compare an estimated trajectory against truth arrays.

    ``truth`` is a ``dataio.TruthArrays``; estimates are paired with the
    nearest truth sample (max skew 1 ms).
    """
    est_times = np.asarray(est_times, dtype=float)
    est_positions = np.atleast_2d(np.asarray(est_positions, dtype=float))
    nearest, keep = _align(est_times, truth.timestamps)
    if not keep.any():
        raise DisjointTimeRangesError("no estimate timestamps align with truth")
    pt = truth.position[nearest[keep]]
    pe = est_positions[keep]
    err_vec = pe - pt
    err_2d = np.linalg.norm(err_vec[:, :2], axis=1)
    err_3d = np.linalg.norm(err_vec, axis=1)

    incl = head = []
    if est_attitudes is not None:
        qa = np.atleast_2d(np.asarray(est_attitudes, dtype=float))[keep]
        qt = truth.attitude[nearest[keep]]
        incl = [normal_angle_deg(a, b) for a, b in zip(qa, qt)]
        head = [heading_error_deg(a, b) for a, b in zip(qa, qt)]

    return RunReport(
        mode=mode,
        n_epochs=int(keep.sum()),
        mean_2d=float(err_2d.mean()),
        max_2d=float(err_2d.max()),
        mean_3d=float(err_3d.mean()),
        max_3d=float(err_3d.max()),
        mean_inclination_deg=float(np.mean(incl)) if len(incl) else float("nan"),
        max_inclination_deg=float(np.max(incl)) if len(incl) else float("nan"),
        mean_heading_deg=float(np.mean(head)) if len(head) else float("nan"),
        cdf=cdf_table(err_3d),
        runtime_s=runtime_s,
        n_fix_failures=n_fix_failures,
    )


def detection_scores(flags_est, flags_truth) -> tuple[float, float]:
    """Epoch-level precision/recall of the BLOCKED class.

    Both arguments map (timestamp, led_id) to a flag; truth labels come
    from the simulator schedule, estimates from the detector.
    """
    tp = fp = fn = 0
    for key, truth_flag in flags_truth.items():
        est_blocked = flags_est.get(key) is not None and (
            flags_est[key].value != "los")
        truth_blocked = truth_flag.value != "los"
        if est_blocked and truth_blocked:
            tp += 1
        elif est_blocked and not truth_blocked:
            fp += 1
        elif truth_blocked and not est_blocked:
            fn += 1
    precision = tp / (tp + fp) if (tp + fp) else float("nan")
    recall = tp / (tp + fn) if (tp + fn) else float("nan")
    return precision, recall


def save_cdf_csv(path, report: RunReport) -> None:
    arr = np.asarray(report.cdf, dtype=float)
    if arr.size == 0:
        arr = np.zeros((0, 2))
    np.savetxt(path, arr, fmt="%.9g", delimiter=",", header="error_3d_m,fraction",
               comments="")
