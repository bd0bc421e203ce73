"""Cycle-level battery data: ingestion, synthesis, features, windows, splits.

The canonical CSV schema is
``battery_id,cycle_index,capacity_ah[,voltage_avg_v,current_avg_a,temp_avg_c][,cc_charge_time_s]``
(UTF-8, comma separated, dot decimal); one file per battery or several
batteries grouped by ``battery_id``. Raw .mat/.xlsx exports must be
converted to this schema up front.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DataError, IngestionError

# feature name -> canonical CSV column (soh is derived, not a column)
FEATURE_COLUMNS = {
    "capacity": "capacity_ah",
    "voltage_avg": "voltage_avg_v",
    "current_avg": "current_avg_a",
    "temp_avg": "temp_avg_c",
    "cc_charge_time": "cc_charge_time_s",
}


@dataclass(frozen=True)
class FeatureProfile:
    name: str
    features: tuple              # model input order
    required_columns: tuple      # beyond battery_id/cycle_index/capacity_ah
    rated_capacity: Optional[float]
    output_relu: bool


PROFILES = {
    "nasa": FeatureProfile(
        name="nasa",
        features=("voltage_avg", "current_avg", "temp_avg", "capacity"),
        required_columns=("voltage_avg_v", "current_avg_a", "temp_avg_c"),
        rated_capacity=2.0,
        output_relu=True,
    ),
    "calce": FeatureProfile(
        name="calce",
        features=("capacity", "cc_charge_time", "soh"),
        required_columns=("cc_charge_time_s",),
        rated_capacity=1.1,
        output_relu=False,
    ),
    # Desk-scale stand-in; NASA-shaped feature set, rated capacity taken
    # from the first cycle.
    "synthetic": FeatureProfile(
        name="synthetic",
        features=("voltage_avg", "current_avg", "temp_avg", "capacity"),
        required_columns=("voltage_avg_v", "current_avg_a", "temp_avg_c"),
        rated_capacity=None,
        output_relu=True,
    ),
}


def get_profile(name: str) -> FeatureProfile:
    try:
        return PROFILES[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown profile '{name}', expected one of {sorted(PROFILES)}")


@dataclass
class CycleRecord:
    cycle_index: int
    capacity: float
    voltage_avg: Optional[float] = None
    current_avg: Optional[float] = None
    temp_avg: Optional[float] = None
    cc_charge_time: Optional[float] = None
    soh: Optional[float] = None


@dataclass
class BatterySeries:
    battery_id: str
    rated_capacity: float
    records: list
    profile: str = "synthetic"

    def __len__(self) -> int:
        return len(self.records)

    def capacities(self) -> np.ndarray:
        return np.array([r.capacity for r in self.records])

    def cycles(self) -> np.ndarray:
        return np.array([r.cycle_index for r in self.records], dtype=int)

    def feature_matrix(self, feature_names) -> np.ndarray:
        """Feature values as a (T, C) matrix in the given feature order."""
        columns = []
        for name in feature_names:
            values = [getattr(r, name) for r in self.records]
            if any(v is None for v in values):
                raise DataError(
                    f"battery '{self.battery_id}' is missing feature '{name}'")
            columns.append(values)
        return np.array(columns, dtype=np.float64).T


def compute_soh(series: BatterySeries) -> BatterySeries:
    """Fill state-of-health as percent of first-cycle capacity, in place."""
    initial = series.records[0].capacity
    if initial <= 0:
        raise DataError(
            f"battery '{series.battery_id}': first-cycle capacity {initial} must be > 0")
    for record in series.records:
        record.soh = record.capacity / initial * 100.0
    return series


# ---------------------------------------------------------------------------
# ingestion

def _parse_float(value, row_num, column, path):
    if value is None or value.strip() == "":
        raise IngestionError(f"{path}:{row_num}: missing value for '{column}'")
    try:
        return float(value)
    except ValueError:
        raise IngestionError(f"{path}:{row_num}: '{value}' in '{column}' is not a number")


def ingest_csv(path, profile: str, rated_capacity: Optional[float] = None):
    """Read a canonical cycle CSV into validated, cycle-sorted series.

    Returns one BatterySeries per battery_id in file order. Any malformed
    row aborts ingestion with the offending location; no partial series
    escape.
    """
    spec = get_profile(profile)
    base_columns = ("battery_id", "cycle_index", "capacity_ah")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in base_columns + spec.required_columns if c not in header]
        if missing:
            raise IngestionError(
                f"{path}: missing required columns {missing} for profile '{profile}' "
                f"(features: {', '.join(spec.features)})")
        grouped: dict[str, list[CycleRecord]] = {}
        for row_num, row in enumerate(reader, start=2):
            battery_id = (row.get("battery_id") or "").strip()
            if not battery_id:
                raise IngestionError(f"{path}:{row_num}: empty battery_id")
            raw_cycle = row.get("cycle_index", "")
            try:
                cycle = int(raw_cycle)
            except (TypeError, ValueError):
                raise IngestionError(
                    f"{path}:{row_num}: cycle_index '{raw_cycle}' is not an integer")
            if cycle < 1:
                raise IngestionError(f"{path}:{row_num}: cycle_index must be >= 1")
            capacity = _parse_float(row.get("capacity_ah"), row_num, "capacity_ah", path)
            if capacity <= 0:
                raise IngestionError(
                    f"{path}:{row_num}: capacity_ah must be positive, got {capacity}")
            record = CycleRecord(cycle_index=cycle, capacity=capacity)
            for feature, column in FEATURE_COLUMNS.items():
                if feature == "capacity":
                    continue
                if column in spec.required_columns:
                    setattr(record, feature,
                            _parse_float(row.get(column), row_num, column, path))
                elif column in header and (row.get(column) or "").strip():
                    setattr(record, feature, float(row[column]))
            records = grouped.setdefault(battery_id, [])
            if records and cycle <= records[-1].cycle_index:
                raise IngestionError(
                    f"{path}:{row_num}: cycle_index {cycle} for battery '{battery_id}' "
                    f"does not increase (previous was {records[-1].cycle_index})")
            records.append(record)
    if not grouped:
        raise IngestionError(f"{path}: no data rows")
    series_list = []
    for battery_id, records in grouped.items():
        rated = rated_capacity if rated_capacity is not None else spec.rated_capacity
        if rated is None:
            rated = records[0].capacity
        series = BatterySeries(battery_id=battery_id, rated_capacity=rated,
                               records=records, profile=profile)
        if "soh" in spec.features:
            compute_soh(series)
        series_list.append(series)
    return series_list


def write_series_csv(path, series_list) -> None:
    """Write one or more series back out in the canonical schema."""
    if isinstance(series_list, BatterySeries):
        series_list = [series_list]
    optional = ["voltage_avg_v", "current_avg_a", "temp_avg_c", "cc_charge_time_s"]
    present = [col for col in optional
               if all(getattr(r, _column_feature(col)) is not None
                      for s in series_list for r in s.records)]
    header = ["battery_id", "cycle_index", "capacity_ah"] + present
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for series in series_list:
            for record in series.records:
                row = [series.battery_id, record.cycle_index, repr(record.capacity)]
                row += [repr(getattr(record, _column_feature(col))) for col in present]
                writer.writerow(row)


def _column_feature(column: str) -> str:
    for feature, col in FEATURE_COLUMNS.items():
        if col == column:
            return feature
    raise KeyError(column)


# ---------------------------------------------------------------------------
# synthetic degradation curves

@dataclass
class SynthesisParams:
    c0: float = 2.0            # initial capacity, Ah
    fade_rate: float = 8e-4    # pre-knee fade per cycle, fraction of c0
    knee_cycle: int = 200      # onset of accelerated fade
    knee_factor: float = 3.0   # post-knee fade multiplier
    noise_std: float = 0.0     # capacity noise, Ah
    n_cycles: int = 300
    seed: int = 0
    # Optional capacity-regeneration events (partial recovery after rest,
    # relaxing back over a few cycles), as real NASA curves show. Off by
    # default: amplitude 0 leaves the pure knee trend + noise.
    regen_every: int = 0       # mean cycles between events; 0 disables
    regen_amplitude: float = 0.0  # jump height, fraction of c0
    regen_tau: float = 8.0     # relaxation time constant, cycles

    def validate(self) -> None:
        if self.c0 <= 0:
            raise ConfigurationError(f"c0 must be > 0, got {self.c0}")
        if self.n_cycles < 50:
            raise ConfigurationError(f"n_cycles must be >= 50, got {self.n_cycles}")
        if self.fade_rate < 0 or self.noise_std < 0:
            raise ConfigurationError("fade_rate and noise_std must be >= 0")
        if self.knee_cycle < 1 or self.knee_factor < 1:
            raise ConfigurationError("knee_cycle must be >= 1 and knee_factor >= 1")
        if self.regen_every < 0 or self.regen_amplitude < 0 or self.regen_tau <= 0:
            raise ConfigurationError(
                "regen_every and regen_amplitude must be >= 0 and regen_tau > 0")


def capacity_trend(params: SynthesisParams, t: np.ndarray) -> np.ndarray:
    """Noise-free piecewise-linear fade: rate fade_rate until knee_cycle,
    then knee_factor times faster. t is 1-based; trend(1) == c0."""
    r1 = params.fade_rate * params.c0
    r2 = params.knee_factor * r1
    knee = params.knee_cycle
    pre = params.c0 - r1 * (t - 1)
    post = params.c0 - r1 * (knee - 1) - r2 * (t - knee)
    return np.where(t <= knee, pre, post)


def regeneration_profile(params: SynthesisParams, t: np.ndarray,
                         rng: np.random.Generator) -> np.ndarray:
    """Sum of decaying capacity-recovery bumps at roughly regular intervals."""
    bumps = np.zeros_like(t)
    if params.regen_every <= 0 or params.regen_amplitude <= 0:
        return bumps
    onset = float(params.regen_every)
    while onset < params.n_cycles:
        height = params.regen_amplitude * params.c0 * rng.uniform(0.5, 1.5)
        active = t >= onset
        bumps[active] += height * np.exp(-(t[active] - onset) / params.regen_tau)
        onset += params.regen_every * rng.uniform(0.7, 1.3)
    return bumps


def synthesize_battery(params: SynthesisParams, battery_id: str = "synth_000") -> BatterySeries:
    """Generate one knee-shaped degradation series with smooth auxiliary
    features (voltage/current/temperature/CC-charge-time correlates)."""
    params.validate()
    rng = np.random.default_rng(params.seed)
    t = np.arange(1, params.n_cycles + 1, dtype=np.float64)
    trend = capacity_trend(params, t) + regeneration_profile(params, t, rng)
    capacity = trend + rng.normal(0.0, params.noise_std, size=t.shape)
    nonpositive = np.nonzero(capacity <= 0)[0]
    if nonpositive.size:
        cut = int(nonpositive[0])
        warnings.warn(
            f"{battery_id}: capacity nonpositive at cycle {cut + 1}; truncating")
        t, trend, capacity = t[:cut], trend[:cut], capacity[:cut]
    health = trend / params.c0
    noise = params.noise_std * rng.normal(size=(4, t.size))
    voltage = 3.2 + 0.4 * health + 0.2 * noise[0]
    current = 1.6 + 0.4 * (1.0 - health) + 0.2 * noise[1]
    temperature = 24.0 + 6.0 * (1.0 - health) + 4.0 * noise[2]
    cc_time = 3600.0 * (0.6 + 0.4 * health) + 600.0 * noise[3]
    records = [
        CycleRecord(cycle_index=int(ti), capacity=float(ci), voltage_avg=float(vi),
                    current_avg=float(ii), temp_avg=float(ki), cc_charge_time=float(qi))
        for ti, ci, vi, ii, ki, qi in zip(t, capacity, voltage, current, temperature, cc_time)
    ]
    series = BatterySeries(battery_id=battery_id, rated_capacity=params.c0,
                           records=records, profile="synthetic")
    return compute_soh(series)


# ---------------------------------------------------------------------------
# normalization

@dataclass
class NormalizationState:
    """Per-feature min-max bounds fitted on training batteries only."""

    feature_names: tuple
    mins: np.ndarray
    maxs: np.ndarray

    def transform(self, matrix: np.ndarray) -> np.ndarray:
        return (matrix - self.mins) / (self.maxs - self.mins)

    def inverse(self, matrix: np.ndarray) -> np.ndarray:
        return matrix * (self.maxs - self.mins) + self.mins

    def _index(self, feature: str) -> int:
        try:
            return self.feature_names.index(feature)
        except ValueError:
            raise ConfigurationError(f"feature '{feature}' not in normalizer")

    def normalize_feature(self, feature: str, values):
        i = self._index(feature)
        return (np.asarray(values) - self.mins[i]) / (self.maxs[i] - self.mins[i])

    def denormalize_feature(self, feature: str, values):
        i = self._index(feature)
        return np.asarray(values) * (self.maxs[i] - self.mins[i]) + self.mins[i]

    def to_dict(self) -> dict:
        return {"feature_names": list(self.feature_names),
                "mins": self.mins.tolist(), "maxs": self.maxs.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "NormalizationState":
        return cls(feature_names=tuple(data["feature_names"]),
                   mins=np.array(data["mins"], dtype=np.float64),
                   maxs=np.array(data["maxs"], dtype=np.float64))


def fit_normalizer(train_series, feature_names) -> NormalizationState:
    """Min-max bounds over all cycles of the training batteries.

    Test data is transformed with the same bounds and may leave [0, 1]; a
    constant feature falls back to a unit range so the map stays invertible.
    """
    if not train_series:
        raise DataError("fit_normalizer needs at least one training battery")
    stacked = np.vstack([s.feature_matrix(feature_names) for s in train_series])
    mins = stacked.min(axis=0)
    maxs = stacked.max(axis=0)
    for i, name in enumerate(feature_names):
        if maxs[i] <= mins[i]:
            warnings.warn(f"feature '{name}' is constant; using unit range")
            maxs[i] = mins[i] + 1.0
    return NormalizationState(feature_names=tuple(feature_names), mins=mins, maxs=maxs)


# ---------------------------------------------------------------------------
# windowing and splits

@dataclass
class WindowedSample:
    features: np.ndarray   # (C, L), normalized
    target: float          # normalized capacity at the cycle after the window
    source: tuple          # (battery_id, end cycle_index)


def make_windows(series: BatterySeries, window_len: int,
                 normalizer: NormalizationState, feature_names) -> list:
    """Stride-1 sliding windows; target is the next cycle's capacity."""
    total = len(series)
    if total < window_len + 1:
        raise DataError(
            f"battery '{series.battery_id}' has {total} cycles; "
            f"needs at least {window_len + 1} for window length {window_len}")
    matrix = normalizer.transform(series.feature_matrix(feature_names))
    cap_idx = list(feature_names).index("capacity")
    samples = []
    for end in range(window_len - 1, total - 1):
        samples.append(WindowedSample(
            features=np.ascontiguousarray(matrix[end - window_len + 1:end + 1].T),
            target=float(matrix[end + 1, cap_idx]),
            source=(series.battery_id, series.records[end].cycle_index),
        ))
    return samples


def make_loocv_splits(batteries) -> list:
    """Each battery once as the held-out test set, the rest as training."""
    if len(batteries) < 2:
        raise DataError(f"leave-one-out needs >= 2 batteries, got {len(batteries)}")
    splits = []
    for i, test in enumerate(batteries):
        train = [b for j, b in enumerate(batteries) if j != i]
        splits.append((train, test))
    return splits
