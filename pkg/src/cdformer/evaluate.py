"""Metrics, end-of-life detection, prediction rollout, report emission.

Metrics are computed on denormalized capacities (Ah). End of life is the
first cycle whose capacity falls below 70% of rated capacity.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .data import BatterySeries, NormalizationState
from .errors import ConfigurationError, DataError, DimensionError

EOL_FRACTION = 0.7
ROLLOUT_MODES = ("one_step", "recursive")


@dataclass
class EvalReport:
    battery_id: str
    rmse: float
    mae: float
    re: Optional[float]          # None when either trajectory never crosses EOL
    cycles: list
    true_capacity: list          # Ah, aligned with cycles
    pred_capacity: list
    eol_true: Optional[int]      # absolute cycle index
    eol_pred: Optional[int]
    mode: str


def _check_pair(y_true, y_pred):
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape:
        raise DimensionError(
            f"metric inputs differ in shape: {y_true.shape} vs {y_pred.shape}")
    if y_true.size == 0:
        raise DataError("metric inputs are empty")
    return y_true, y_pred


def rmse(y_true, y_pred) -> float:
    y_true, y_pred = _check_pair(y_true, y_pred)
    return float(np.sqrt(np.mean((y_true - y_pred) ** 2)))


def mae(y_true, y_pred) -> float:
    y_true, y_pred = _check_pair(y_true, y_pred)
    return float(np.mean(np.abs(y_true - y_pred)))


def find_eol(capacities, rated: float) -> Optional[int]:
    """1-based index of the first capacity below 70% of rated, or None."""
    if rated <= 0:
        raise ConfigurationError(f"rated capacity must be > 0, got {rated}")
    threshold = EOL_FRACTION * rated
    for i, value in enumerate(capacities, start=1):
        if value < threshold:
            return i
    return None


def relative_error(true_caps, pred_caps, rated: float,
                   cycles=None) -> Optional[float]:
    """|N_true - N_pred| / N_true over end-of-life positions.

    Positions are 1-based indices into the trajectories, or the
    corresponding entries of ``cycles`` when given. Returns None when either
    trajectory never crosses the threshold.
    """
    n_true = find_eol(true_caps, rated)
    n_pred = find_eol(pred_caps, rated)
    if n_true is None or n_pred is None:
        return None
    if cycles is not None:
        n_true = int(cycles[n_true - 1])
        n_pred = int(cycles[n_pred - 1])
    return abs(n_true - n_pred) / n_true


def rollout(model, battery: BatterySeries, normalizer: NormalizationState,
            feature_names, window_len: int, mode: str = "one_step"):
    """Predict the capacity trajectory of one battery.

    one_step: every window is built from ground-truth history. recursive:
    predicted capacity replaces the true capacity feature in later windows
    (other features stay ground truth). Returns (cycles, true_ah, pred_ah).
    """
    if mode not in ROLLOUT_MODES:
        raise ConfigurationError(f"mode must be one of {ROLLOUT_MODES}, got '{mode}'")
    total = len(battery)
    if total < window_len + 1:
        raise DataError(
            f"battery '{battery.battery_id}' has {total} cycles; "
            f"needs at least {window_len + 1} for rollout")
    matrix = normalizer.transform(battery.feature_matrix(feature_names))
    cap_idx = list(feature_names).index("capacity")
    ends = range(window_len - 1, total - 1)
    if mode == "one_step":
        windows = np.stack([matrix[e - window_len + 1:e + 1].T for e in ends])
        preds = model.predict(windows)
    else:
        work = matrix.copy()
        preds = np.empty(total - window_len)
        for j, e in enumerate(ends):
            window = work[e - window_len + 1:e + 1].T
            value = float(model.predict(window[None])[0])
            preds[j] = value
            work[e + 1, cap_idx] = value
    cycles = [int(r.cycle_index) for r in battery.records[window_len:]]
    true_ah = battery.capacities()[window_len:]
    pred_ah = normalizer.denormalize_feature("capacity", preds)
    return cycles, true_ah, pred_ah


def evaluate_battery(model, battery: BatterySeries, normalizer: NormalizationState,
                     feature_names, window_len: int, mode: str = "one_step") -> EvalReport:
    cycles, true_ah, pred_ah = rollout(model, battery, normalizer, feature_names,
                                       window_len, mode)
    rated = battery.rated_capacity
    eol_true = find_eol(true_ah, rated)
    eol_pred = find_eol(pred_ah, rated)
    re = relative_error(true_ah, pred_ah, rated, cycles=cycles)
    if re is None:
        warnings.warn(
            f"battery '{battery.battery_id}': EOL not crossed "
            f"(true={eol_true}, pred={eol_pred}); relative error undefined")
    return EvalReport(
        battery_id=battery.battery_id,
        rmse=rmse(true_ah, pred_ah),
        mae=mae(true_ah, pred_ah),
        re=re,
        cycles=cycles,
        true_capacity=[float(v) for v in true_ah],
        pred_capacity=[float(v) for v in pred_ah],
        eol_true=cycles[eol_true - 1] if eol_true is not None else None,
        eol_pred=cycles[eol_pred - 1] if eol_pred is not None else None,
        mode=mode,
    )


def aggregate_metrics(reports) -> dict:
    """Arithmetic mean of per-battery metrics; undefined REs are excluded."""
    if not reports:
        raise DataError("no reports to aggregate")
    defined_re = [r.re for r in reports if r.re is not None]
    if len(defined_re) < len(reports):
        warnings.warn(f"{len(reports) - len(defined_re)} of {len(reports)} "
                      "batteries excluded from the RE aggregate (EOL not crossed)")
    return {
        "rmse": float(np.mean([r.rmse for r in reports])),
        "mae": float(np.mean([r.mae for r in reports])),
        "re": float(np.mean(defined_re)) if defined_re else None,
    }


def emit_report(reports, out_dir, dataset: str = "", model_name: str = "",
                config_hash: str = "") -> dict:
    """Write summary.json plus one trajectory CSV per battery.

    Field order and float formatting are fixed so reruns are diffable.
    Returns the written paths.
    """
    if not reports:
        raise DataError("emit_report needs at least one report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {
        "dataset": dataset,
        "model": model_name,
        "config_hash": config_hash,
        "per_battery": [
            {"id": r.battery_id, "rmse": r.rmse, "mae": r.mae, "re": r.re,
             "eol_true": r.eol_true, "eol_pred": r.eol_pred, "mode": r.mode}
            for r in reports
        ],
        "aggregate": aggregate_metrics(reports),
    }
    summary_path = out_dir / "summary.json"
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    trajectory_paths = []
    for report in reports:
        path = out_dir / f"trajectory_{report.battery_id}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["cycle", "true_ah", "pred_ah"])
            for cycle, t, p in zip(report.cycles, report.true_capacity,
                                   report.pred_capacity):
                writer.writerow([cycle, repr(t), repr(p)])
        trajectory_paths.append(path)
    return {"summary": summary_path, "trajectories": trajectory_paths}
