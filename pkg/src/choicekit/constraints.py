"""Directional monotonicity constraints, pseudo sample pairs, and the
violation penalty.

A constraint says the probability of choosing alternative c must move in a
given direction as feature m grows, all else fixed. Pseudo pairs estimate
that derivative numerically: two feature vectors identical except for a
fixed positive increment on m. Pairs carry no labels and never enter the
likelihood term.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Dataset, FeatureSchema
from .errors import ConfigError

#: derivative estimates this close to zero satisfy either direction
AUDIT_TOLERANCE = 1e-9


@dataclass(frozen=True)
class MonotonicityConstraint:
    """(alternative, feature, direction, weight); direction +1 = increasing."""

    alternative: int
    feature: int
    direction: int
    weight: float = 1.0

    def __post_init__(self):
        if self.direction not in (1, -1):
            raise ConfigError(f"direction must be +1 or -1, got {self.direction}")
        if self.weight < 0:
            raise ConfigError(f"weight must be nonnegative, got {self.weight}")


@dataclass(frozen=True)
class ConstraintSet:
    constraints: tuple[MonotonicityConstraint, ...]

    def __post_init__(self):
        seen = set()
        for con in self.constraints:
            key = (con.alternative, con.feature)
            if key in seen:
                raise ConfigError(f"duplicate constraint on (alternative, feature) {key}")
            seen.add(key)

    def __len__(self) -> int:
        return len(self.constraints)

    def __iter__(self) -> Iterator[MonotonicityConstraint]:
        return iter(self.constraints)

    def feature_indices(self) -> list[int]:
        """Distinct constrained feature indices, in first-appearance order."""
        out: list[int] = []
        for con in self.constraints:
            if con.feature not in out:
                out.append(con.feature)
        return out

    def reweighted(self, overrides: dict[tuple[int, int], float]) -> "ConstraintSet":
        """New set with per-(alternative, feature) weight overrides applied."""
        cons = []
        for con in self.constraints:
            w = overrides.get((con.alternative, con.feature), con.weight)
            cons.append(MonotonicityConstraint(con.alternative, con.feature, con.direction, w))
        return ConstraintSet(tuple(cons))


def build_constraint_set(schema: FeatureSchema, weight: float = 1.0) -> ConstraintSet:
    """Own-sensitivities negative, cross-sensitivities positive, for every
    alternative's travel time and cost.

    For C alternatives and both attribute kinds this yields
    2*C + 2*C*(C-1) constraints (18 when C = 3).
    """
    cons: list[MonotonicityConstraint] = []
    c = schema.n_alternatives
    for j in range(c):
        for kind in ("time", "cost"):
            m = schema.constrained[(j, kind)]
            cons.append(MonotonicityConstraint(j, m, -1, weight))
            for i in range(c):
                if i != j:
                    cons.append(MonotonicityConstraint(i, m, +1, weight))
    return ConstraintSet(tuple(cons))


@dataclass
class PseudoPairs:
    """K pair rows for one constraint, in scaled feature space.

    ``x2`` equals ``x1`` except that feature m is shifted by +delta in every
    row. Unlabeled by construction.
    """

    constraint: MonotonicityConstraint
    x1: np.ndarray
    x2: np.ndarray
    delta: float


def feature_span(dataset: Dataset, feature: int) -> tuple[float, float, float]:
    """(min, max, span) of a scaled feature over the training split."""
    rows = dataset.split_indices("train")
    if rows.size == 0:
        raise ConfigError("training split is empty")
    col = dataset.x_scaled[rows, feature]
    lo, hi = float(col.min()), float(col.max())
    return lo, hi, hi - lo


def generate_pseudo_pairs(
    dataset: Dataset,
    constraint: MonotonicityConstraint,
    k: int,
    delta: float | None = None,
    range_extension: float = 0.0,
    rng: int | np.random.Generator = 0,
) -> PseudoPairs:
    """Build K pseudo pairs for one constraint.

    Base vectors copy the non-m features of K training observations drawn
    uniformly with replacement (this keeps realistic feature correlations);
    feature m is overwritten with one stratified-uniform draw per equal-width
    bin across the observed range extended by ``range_extension`` times the
    span on each side. ``delta`` defaults to 1% of the observed span.
    """
    if k < 1:
        raise ConfigError("need at least one pair per constraint")
    if range_extension < 0:
        raise ConfigError("range_extension must be nonnegative")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.Generator(np.random.PCG64(rng))
    m = constraint.feature
    lo, hi, span = feature_span(dataset, m)
    if span <= 0:
        raise ConfigError(f"feature {m} is constant on the training split")
    if delta is None:
        delta = 0.01 * span
    if delta <= 0:
        raise ConfigError("delta must be positive")

    rows = dataset.split_indices("train")
    picks = rng.integers(0, rows.size, size=k)
    x1 = dataset.x_scaled[rows[picks]].copy()
    ext_lo = lo - range_extension * span
    ext_hi = hi + range_extension * span
    width = (ext_hi - ext_lo) / k
    x1[:, m] = ext_lo + (np.arange(k) + rng.random(k)) * width
    x2 = x1.copy()
    x2[:, m] += delta
    return PseudoPairs(constraint, x1, x2, float(delta))


def violation_loss(model, pairs: PseudoPairs, margin: float = 0.0) -> Tensor:
    """Hinge penalty on pair derivatives with the wrong sign (differentiable).

    sum_k max(0, -d * (p_c(x2_k) - p_c(x1_k)) / delta). Zero whenever every
    pair derivative satisfies the constraint direction, including exact
    zeros. Pseudo samples treat all alternatives as available.

    A positive ``margin`` (training-time slack) shifts the hinge so the
    derivative must clear +margin in the constrained direction before the
    penalty releases; audits always use margin 0.
    """
    con = pairs.constraint
    k = pairs.x1.shape[0]
    avail = np.ones((2 * k, model.n_alternatives))
    probs = model.probabilities_t(Tensor(np.vstack([pairs.x1, pairs.x2])), avail)
    p1 = ad.select_col(ad.select_rows(probs, 0, k), con.alternative)
    p2 = ad.select_col(ad.select_rows(probs, k, 2 * k), con.alternative)
    estimate = ad.scale(ad.sub(p2, p1), 1.0 / pairs.delta)
    slack = ad.scale(estimate, -float(con.direction))
    if margin != 0.0:
        slack = ad.add(slack, Tensor(np.full(slack.data.shape, float(margin))))
    return ad.sum_all(ad.hinge(slack))


@dataclass
class ConstraintAudit:
    """Violation statistics for one constraint on fresh pseudo pairs."""

    constraint: MonotonicityConstraint
    n_pairs: int
    violation_fraction: float
    max_violation: float  # largest wrong-sign derivative magnitude, 0 if none
    feature_name: str = ""


def audit_constraints(
    model,
    dataset: Dataset,
    constraint_set: ConstraintSet,
    pairs_per_constraint: int = 1024,
    range_extension: float = 0.0,
    delta: float | None = None,
    seed: int = 104729,
) -> list[ConstraintAudit]:
    """Evaluate every constraint on fresh pairs, without gradients.

    A pair violates when its derivative estimate is on the wrong side of
    zero by more than the audit tolerance, so exact zeros never count.
    """
    if pairs_per_constraint < 2:
        raise ConfigError("audit needs at least 2 pairs per constraint")
    rng = np.random.Generator(np.random.PCG64(seed))
    reports = []
    for con in constraint_set:
        pairs = generate_pseudo_pairs(
            dataset, con, pairs_per_constraint, delta, range_extension, rng
        )
        k = pairs.x1.shape[0]
        avail = np.ones((2 * k, model.n_alternatives))
        probs = model.probabilities(np.vstack([pairs.x1, pairs.x2]), avail)
        estimate = (probs[k:, con.alternative] - probs[:k, con.alternative]) / pairs.delta
        wrong = -con.direction * estimate  # positive where the sign is wrong
        violating = wrong > AUDIT_TOLERANCE
        reports.append(
            ConstraintAudit(
                constraint=con,
                n_pairs=k,
                violation_fraction=float(violating.mean()),
                max_violation=float(np.maximum(wrong, 0.0).max()),
                feature_name=dataset.schema.features[con.feature].name,
            )
        )
    return reports
