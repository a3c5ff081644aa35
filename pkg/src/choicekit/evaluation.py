"""Post-estimation analyses: market shares, probability sweep curves, and
heterogeneous value-of-time extraction.

Everything here evaluates a frozen model, works on raw feature units (the
sweep multiplies raw values, the VOT probes step raw values), and reapplies
the dataset's scaling before each forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import ConfigError, DomainError
from .models import ChoiceModel

DEGENERATE_DERIVATIVE = 1e-12


@dataclass
class MarketShareReport:
    split: str
    predicted: np.ndarray  # mean predicted probability per alternative
    observed: np.ndarray  # choice frequency per alternative
    rmse_pct: float  # root mean squared share error, percentage points


def share_rmse_pct(predicted, observed) -> float:
    """RMSE across alternatives between two share vectors, in % points."""
    p = 100.0 * np.asarray(predicted, dtype=np.float64)
    o = 100.0 * np.asarray(observed, dtype=np.float64)
    return float(np.sqrt(np.mean((p - o) ** 2)))


def market_shares(model: ChoiceModel, dataset: Dataset, split: str) -> MarketShareReport:
    rows = dataset.split_indices(split)
    if rows.size == 0:
        raise DomainError(f"split {split!r} is empty")
    probs = model.probabilities(dataset.x_scaled[rows], dataset.avail[rows])
    predicted = probs.mean(axis=0)
    observed = np.bincount(dataset.chosen[rows], minlength=dataset.n_alternatives) / rows.size
    return MarketShareReport(split, predicted, observed, share_rmse_pct(predicted, observed))


def default_sweep_grid() -> np.ndarray:
    """Percent changes -50..+50 in steps of 5."""
    return np.arange(-50.0, 55.0, 5.0)


@dataclass
class SweepCurve:
    feature: int
    feature_name: str
    grid_pct: np.ndarray  # percent changes, ascending, includes 0
    mean_probs: np.ndarray  # [len(grid), C]
    split: str


def probability_sweep(
    model: ChoiceModel,
    dataset: Dataset,
    split: str,
    feature: int,
    grid_pct=None,
) -> SweepCurve:
    """Mean predicted probabilities as one feature is scaled by (1 + q).

    The multiplication happens on raw units in every observation of the
    split, everything else held fixed; scaling is then reapplied.
    """
    desc = dataset.schema.features[feature]
    if desc.kind != "continuous":
        raise ConfigError(f"cannot sweep non-continuous feature {desc.name!r}")
    grid = np.asarray(default_sweep_grid() if grid_pct is None else grid_pct, dtype=np.float64)
    rows = dataset.split_indices(split)
    if rows.size == 0:
        raise DomainError(f"split {split!r} is empty")
    x_raw = dataset.x_raw[rows]
    avail = dataset.avail[rows]
    curves = np.empty((grid.size, dataset.n_alternatives))
    for g, q in enumerate(grid):
        x_mod = x_raw.copy()
        x_mod[:, feature] = x_mod[:, feature] * (1.0 + q / 100.0)
        curves[g] = model.probabilities(dataset.scale(x_mod), avail).mean(axis=0)
    return SweepCurve(feature, desc.name, grid, curves, split)


def expected_sweep_directions(dataset: Dataset, feature: int) -> dict[int, int]:
    """Domain-expected direction of each alternative's curve for one swept
    time/cost feature: the owning alternative falls, the others rise."""
    schema = dataset.schema
    owner = None
    for (alt, _kind), idx in schema.constrained.items():
        if idx == feature:
            owner = alt
    if owner is None:
        raise ConfigError(f"feature {feature} is not a registered time/cost attribute")
    return {j: (-1 if j == owner else 1) for j in range(schema.n_alternatives)}


@dataclass
class CurveViolation:
    alternative: int
    q_from: float
    q_to: float
    change: float  # signed mean-probability change over the segment
    expected: int


@dataclass
class MonotonicityReport:
    curve_feature: str
    violations: list[CurveViolation]
    counts: dict[int, int] = field(default_factory=dict)
    worst: dict[int, float] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return len(self.violations)


def curve_monotonicity_report(
    curve: SweepCurve, expected: dict[int, int], tolerance: float = 1e-9
) -> MonotonicityReport:
    """Flag adjacent grid segments whose change contradicts the expected
    direction by more than the tolerance; ties and zero changes pass."""
    grid = curve.grid_pct
    if np.any(np.diff(grid) <= 0):
        raise ConfigError("sweep grid must be sorted ascending")
    violations = []
    counts = {j: 0 for j in expected}
    worst = {j: 0.0 for j in expected}
    for j, direction in expected.items():
        deltas = np.diff(curve.mean_probs[:, j])
        bad = -direction * deltas > tolerance
        for t in np.flatnonzero(bad):
            violations.append(
                CurveViolation(j, float(grid[t]), float(grid[t + 1]), float(deltas[t]), direction)
            )
            counts[j] += 1
            worst[j] = max(worst[j], float(-direction * deltas[t]))
    return MonotonicityReport(curve.feature_name, violations, counts, worst)


@dataclass
class VotRecord:
    observation: int  # row index into the dataset
    alternative: int
    vot: float  # CHF per hour; nan when degenerate
    d_time: float  # dP/d(raw travel time)
    d_cost: float  # dP/d(raw cost)
    degenerate: bool


def vot_per_observation(
    model: ChoiceModel,
    dataset: Dataset,
    split: str,
    alternative: int,
    step_frac: float = 1e-3,
) -> list[VotRecord]:
    """Heterogeneous value of time from probability derivative ratios.

    Central finite differences of the alternative's choice probability with
    respect to its raw travel time and cost at every observation of the
    split; the probe step is ``step_frac`` of each feature's observed raw
    span. VOT = (dP/dtime) / (dP/dcost) * 60 in CHF/hour. Records whose cost
    derivative is below the degeneracy cutoff are flagged instead of blowing
    up.
    """
    if step_frac <= 0:
        raise ConfigError("step_frac must be positive")
    j = int(alternative)
    t_idx = dataset.schema.time_index(j)
    c_idx = dataset.schema.cost_index(j)
    rows = dataset.split_indices(split)
    if rows.size == 0:
        raise DomainError(f"split {split!r} is empty")
    h_t = step_frac * float(np.ptp(dataset.x_raw[:, t_idx]))
    h_c = step_frac * float(np.ptp(dataset.x_raw[:, c_idx]))
    if h_t <= 0 or h_c <= 0:
        raise DomainError("time/cost feature has zero span; cannot probe derivatives")

    x_raw = dataset.x_raw[rows]
    n = rows.size
    stacked = np.vstack([x_raw, x_raw, x_raw, x_raw])
    stacked[0 * n : 1 * n, t_idx] += h_t
    stacked[1 * n : 2 * n, t_idx] -= h_t
    stacked[2 * n : 3 * n, c_idx] += h_c
    stacked[3 * n : 4 * n, c_idx] -= h_c
    avail = np.vstack([dataset.avail[rows]] * 4)
    p = model.probabilities(dataset.scale(stacked), avail)[:, j]
    d_time = (p[0 * n : 1 * n] - p[1 * n : 2 * n]) / (2.0 * h_t)
    d_cost = (p[2 * n : 3 * n] - p[3 * n : 4 * n]) / (2.0 * h_c)

    records = []
    for i in range(n):
        degenerate = abs(d_cost[i]) < DEGENERATE_DERIVATIVE
        vot = float("nan") if degenerate else float(d_time[i] / d_cost[i] * 60.0)
        records.append(
            VotRecord(int(rows[i]), j, vot, float(d_time[i]), float(d_cost[i]), degenerate)
        )
    return records


@dataclass
class VotStats:
    alternative: int
    n: int  # non-degenerate records
    degenerate: int
    mean: float  # over all non-degenerate records, extremes included
    median: float
    pct_negative: float  # percent of non-degenerate records below zero
    window: tuple[float, float]  # quantile window used for the histogram
    windowed_mean: float  # mean within the window, for comparability
    hist_edges: np.ndarray
    hist_counts: np.ndarray


def vot_stats(
    records: list[VotRecord],
    window: tuple[float, float] = (0.005, 0.995),
    bins: int = 40,
) -> VotStats:
    """Descriptive statistics of heterogeneous VOT records.

    Mean/median/percent-negative use every non-degenerate record; the
    histogram (and its companion mean) clip to the quantile window so a few
    extreme ratios do not flatten the display.
    """
    if not records:
        raise DomainError("no VOT records")
    values = np.array([r.vot for r in records if not r.degenerate])
    degenerate = sum(r.degenerate for r in records)
    if values.size == 0:
        raise DomainError("all VOT records are degenerate")
    lo, hi = np.quantile(values, window[0]), np.quantile(values, window[1])
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    inside = values[(values >= lo) & (values <= hi)]
    counts, edges = np.histogram(inside, bins=bins, range=(float(lo), float(hi)))
    return VotStats(
        alternative=records[0].alternative,
        n=int(values.size),
        degenerate=int(degenerate),
        mean=float(values.mean()),
        median=float(np.median(values)),
        pct_negative=float(100.0 * (values < 0).mean()),
        window=(float(window[0]), float(window[1])),
        windowed_mean=float(inside.mean()) if inside.size else float("nan"),
        hist_edges=edges,
        hist_counts=counts,
    )
