"""Raw-recording processing: downsampling, cleaning, lagged features, dedup.

A recording is a uniformly sampled multichannel series; invalid cells are
``NaN``.  The pipeline that feeds the zone models is::

    downsample -> clean -> build_features -> deduplicate

Cleaning invalidates spike samples and linearly fills short gaps; longer gaps
stay invalid, which splits the series into segments so that no feature row
ever bridges an outage.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .gp import Dataset
from .serialize import fmt_float

CHANNELS = ("T1", "T2", "T3", "theta1", "theta2", "theta3", "T_sup", "T_out", "R_sol")

#: default one-step spike thresholds; valve commands switch legitimately by
#: full range under ON/OFF excitation, so the valve check ships disabled here
#: and is opt-in through `clean(..., thresholds=...)`.
SPIKE_DEFAULTS = {
    "T1": 3.0,
    "T2": 3.0,
    "T3": 3.0,
    "T_sup": 3.0,
    "T_out": 3.0,
}

MAX_INTERP_GAP = 3  # samples; longer invalid runs split the series


@dataclass
class RawSeries:
    """Uniformly sampled channels; ``NaN`` marks an invalid cell."""

    start: np.datetime64
    period_minutes: float
    channels: dict[str, np.ndarray]

    def __post_init__(self):
        lengths = {len(v) for v in self.channels.values()}
        if len(lengths) > 1:
            raise DataError(f"channel lengths differ: {sorted(lengths)}")
        self.channels = {k: np.asarray(v, dtype=float) for k, v in self.channels.items()}

    @property
    def n(self) -> int:
        return len(next(iter(self.channels.values()))) if self.channels else 0

    @property
    def timestamps(self) -> np.ndarray:
        step = np.timedelta64(int(round(self.period_minutes * 60)), "s")
        return np.datetime64(self.start, "s") + np.arange(self.n) * step

    def copy(self) -> "RawSeries":
        return RawSeries(self.start, self.period_minutes, {k: v.copy() for k, v in self.channels.items()})


def downsample(series: RawSeries, factor: int) -> RawSeries:
    """Keep every ``factor``-th sample (indices 0, factor, 2*factor, ...)."""
    if int(factor) != factor or factor < 1:
        raise ValueError(f"downsample factor must be a positive integer, got {factor}")
    factor = int(factor)
    return RawSeries(
        series.start,
        series.period_minutes * factor,
        {k: v[::factor].copy() for k, v in series.channels.items()},
    )


def clean(
    series: RawSeries,
    spike_threshold: float | None = None,
    thresholds: dict[str, float] | None = None,
    max_gap: int = MAX_INTERP_GAP,
) -> RawSeries:
    """Invalidate spike samples, then fill invalid runs of <= ``max_gap``.

    A sample is a spike when its jump from the previous raw sample exceeds
    the channel threshold.  ``spike_threshold`` applies one threshold to every
    channel; ``thresholds`` overrides per channel; the default is
    :data:`SPIKE_DEFAULTS` (temperature channels only).
    """
    if spike_threshold is not None:
        limits = {name: float(spike_threshold) for name in series.channels}
    else:
        limits = dict(SPIKE_DEFAULTS)
        limits.update(thresholds or {})
    out = series.copy()
    for name, values in out.channels.items():
        limit = limits.get(name)
        if limit is not None:
            jumps = np.abs(np.diff(values))
            spikes = np.zeros(len(values), dtype=bool)
            spikes[1:] = jumps > limit  # NaN jumps compare false: no check
            values[spikes] = np.nan
        _interpolate_short_gaps(values, max_gap)
    return out


def _interpolate_short_gaps(values: np.ndarray, max_gap: int) -> None:
    """Linear fill of interior NaN runs of length <= max_gap, in place."""
    n = len(values)
    isnan = np.isnan(values)
    t = 0
    while t < n:
        if not isnan[t]:
            t += 1
            continue
        run_start = t
        while t < n and isnan[t]:
            t += 1
        run_end = t  # exclusive
        if run_start == 0 or run_end == n:
            continue  # edge gap: no bracket to interpolate between
        if run_end - run_start > max_gap:
            continue
        left, right = values[run_start - 1], values[run_end]
        span = run_end - run_start + 1
        for k in range(run_start, run_end):
            frac = (k - run_start + 1) / span
            values[k] = left + frac * (right - left)


@dataclass(frozen=True)
class FeatureSpec:
    """Which channels (and how many lags of each) feed one zone model.

    ``inputs`` is an ordered tuple of ``(channel, delay)``; delay ``l`` expands
    to the values at ``t, t-1, ..., t-l+1``.  The label is ``target`` at
    ``t+1``.
    """

    name: str
    inputs: tuple[tuple[str, int], ...]
    target: str

    def __post_init__(self):
        for channel, delay in self.inputs:
            if delay < 1:
                raise ValueError(f"{self.name}: delay for {channel} must be >= 1")

    @property
    def dim(self) -> int:
        return sum(delay for _, delay in self.inputs)

    @property
    def max_delay(self) -> int:
        return max(delay for _, delay in self.inputs)

    @property
    def feature_names(self) -> list[str]:
        names = []
        for channel, delay in self.inputs:
            for lag in range(delay):
                names.append(channel if lag == 0 else f"{channel}[t-{lag}]")
        return names


#: the three-zone wiring: each zone sees itself (two lags), its neighbours,
#: its own valve and the shared disturbances; solar radiation is never used.
ZONE_SPECS = (
    FeatureSpec("zone1", (("T1", 2), ("T2", 1), ("theta1", 1), ("T_sup", 1), ("T_out", 1)), "T1"),
    FeatureSpec(
        "zone2",
        (("T1", 1), ("T2", 2), ("T3", 1), ("theta2", 1), ("T_sup", 1), ("T_out", 1)),
        "T2",
    ),
    FeatureSpec("zone3", (("T2", 1), ("T3", 2), ("theta3", 1), ("T_sup", 1), ("T_out", 1)), "T3"),
)


def build_features(series: RawSeries, spec: FeatureSpec) -> Dataset:
    """Assemble the lagged feature matrix and next-step labels for one zone.

    Rows that would touch an invalid cell (in any referenced channel, at any
    required lag, or in the label) are dropped, so no row spans a segment
    boundary.
    """
    for channel, _ in spec.inputs:
        if channel not in series.channels:
            raise DataError(f"feature spec references missing channel {channel!r}")
    if spec.target not in series.channels:
        raise DataError(f"feature spec references missing target {spec.target!r}")

    n = series.n
    lead = spec.max_delay - 1
    n_rows = n - lead - 1
    if n_rows <= 0:
        return Dataset(np.empty((0, spec.dim)), np.empty(0))

    cols = []
    for channel, delay in spec.inputs:
        values = series.channels[channel]
        for lag in range(delay):
            cols.append(values[lead - lag : lead - lag + n_rows])
    X = np.column_stack(cols)
    y = series.channels[spec.target][lead + 1 : lead + 1 + n_rows]
    keep = np.all(np.isfinite(X), axis=1) & np.isfinite(y)
    return Dataset(X[keep].reshape(-1, spec.dim), y[keep])


def deduplicate(dataset: Dataset, eps: float) -> Dataset:
    """Greedy forward pass keeping rows at Euclidean distance >= eps.

    The first row is always kept; each later row survives only if it is at
    least ``eps`` away from every row kept so far.  Order is preserved and the
    pass is idempotent.
    """
    if eps < 0:
        raise ValueError("eps must be non-negative")
    if dataset.n == 0 or eps == 0.0:
        return dataset
    X = dataset.X
    kept_idx = [0]
    kept = X[:1]
    for i in range(1, dataset.n):
        dist2 = np.sum((kept - X[i]) ** 2, axis=1)
        if np.min(dist2) >= eps * eps:
            kept_idx.append(i)
            kept = np.vstack([kept, X[i]])
    idx = np.asarray(kept_idx)
    return Dataset(X[idx].reshape(-1, dataset.d), dataset.y[idx])


# ---------------------------------------------------------------------------
# CSV interchange


def series_to_csv(series: RawSeries, path: str | Path, channels: tuple[str, ...] = CHANNELS) -> None:
    """ISO-8601 timestamp column plus one column per channel; NaN -> empty."""
    stamps = series.timestamps
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("time," + ",".join(channels) + "\n")
        for i in range(series.n):
            cells = [str(stamps[i])]
            for name in channels:
                v = series.channels[name][i]
                cells.append("" if np.isnan(v) else fmt_float(v))
            fh.write(",".join(cells) + "\n")


def series_from_csv(path: str | Path) -> RawSeries:
    """Parse a recording CSV; timestamp gaps become runs of invalid samples."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if not header or header[0] != "time":
            raise DataError(f"{path}: first column must be 'time'")
        names = header[1:]
        stamps: list[np.datetime64] = []
        rows: list[list[float]] = []
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            cells = line.split(",")
            if len(cells) != len(header):
                raise DataError(f"{path} line {lineno}: expected {len(header)} cells")
            try:
                stamps.append(np.datetime64(cells[0], "s"))
            except ValueError as exc:
                raise DataError(f"{path} line {lineno}, column time: {exc}") from exc
            row = []
            for name, cell in zip(names, cells[1:]):
                if cell == "":
                    row.append(np.nan)
                else:
                    try:
                        row.append(float(cell))
                    except ValueError as exc:
                        raise DataError(f"{path} line {lineno}, column {name}: {exc}") from exc
            rows.append(row)
    if not rows:
        raise DataError(f"{path}: no data rows")
    times = np.array(stamps)
    diffs = np.diff(times).astype("timedelta64[s]").astype(int)
    if len(diffs) == 0:
        period_s = 120
    else:
        period_s = int(np.min(diffs))
        if period_s <= 0:
            raise DataError(f"{path}: timestamps must be strictly increasing")
    if np.any(diffs % period_s != 0):
        raise DataError(f"{path}: timestamp spacing is not a multiple of the base period")
    steps = np.concatenate([[0], np.cumsum(diffs // period_s)])
    total = int(steps[-1]) + 1
    table = np.full((total, len(names)), np.nan)
    table[steps] = np.asarray(rows)
    return RawSeries(
        start=times[0],
        period_minutes=period_s / 60.0,
        channels={name: table[:, j].copy() for j, name in enumerate(names)},
    )


def dataset_to_csv(dataset: Dataset, path: str | Path, feature_names: list[str] | None = None) -> None:
    names = feature_names or [f"x{i}" for i in range(dataset.d)]
    if len(names) != dataset.d:
        raise DataError("feature_names length must match dataset dim")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join([*names, "label"]) + "\n")
        for i in range(dataset.n):
            fh.write(",".join(fmt_float(v) for v in (*dataset.X[i], dataset.y[i])) + "\n")


def dataset_from_csv(path: str | Path) -> Dataset:
    from .serialize import read_csv

    with open(path, "r", encoding="utf-8") as fh:
        header, table = read_csv(fh)
    if len(header) < 2:
        raise DataError(f"{path}: need at least one feature column and a label")
    d = len(header) - 1
    return Dataset(table[:, :d].reshape(-1, d), table[:, d] if table.size else np.empty(0))
