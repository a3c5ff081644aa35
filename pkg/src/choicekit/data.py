"""Survey data ingestion, filtering, splitting, scaling, and synthetic data.

The feature layout is fixed by the survey codebook: eight travel time/cost
columns and two headways are continuous; multi-level categoricals are
expanded to one indicator column per level; binary dummies stay single 0/1
columns. A Dataset keeps both raw-unit and standardized feature matrices
(sweeps and value-of-time extraction need raw units), the per-feature
scaling fitted on the training split, and per-observation split labels.
Datasets are immutable after construction and safe for concurrent reads.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DomainError, IngestionError

log = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "validation", "test")

# Survey columns of the Swissmetro stated-preference data.
TIME_COLUMNS = ("TRAIN_TT", "SM_TT", "CAR_TT")
COST_COLUMNS = ("TRAIN_CO", "SM_CO", "CAR_CO")
HEADWAY_COLUMNS = ("TRAIN_HE", "SM_HE")
AVAIL_COLUMNS = ("TRAIN_AV", "SM_AV", "CAR_AV")
REQUIRED_COLUMNS = (
    TIME_COLUMNS
    + COST_COLUMNS
    + HEADWAY_COLUMNS
    + ("SEATS", "GROUP", "PURPOSE", "FIRST", "LUGGAGE", "AGE", "MALE", "INCOME")
    + AVAIL_COLUMNS
    + ("CHOICE",)
)
# The published file names the seats column SM_SEATS.
COLUMN_ALIASES = {"SM_SEATS": "SEATS"}


@dataclass(frozen=True)
class FeatureDescriptor:
    """One encoded feature column.

    ``role`` is "alt" (alternative attribute, with ``alt_index``) or "socio".
    ``kind`` is "continuous" (z-scored) or "dummy" (passes through as 0/1).
    One-hot columns carry the raw codes they stand for in ``levels``.
    """

    name: str
    unit: str
    role: str
    raw_column: str
    kind: str
    alt_index: int | None = None
    levels: tuple[float, ...] | None = None


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature descriptors plus the constrained-feature registry.

    The registry maps (alternative index, "time" | "cost") to the encoded
    feature index carrying that alternative's travel time or cost.
    """

    alternatives: tuple[str, ...]
    features: tuple[FeatureDescriptor, ...]
    constrained: dict[tuple[int, str], int] = field(compare=False)

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate feature names in schema")
        for j in range(len(self.alternatives)):
            for kind in ("time", "cost"):
                if (j, kind) not in self.constrained:
                    raise ConfigError(
                        f"schema registry incomplete: no {kind} feature for alternative {j}"
                    )

    @property
    def n_alternatives(self) -> int:
        return len(self.alternatives)

    @property
    def n_features(self) -> int:
        return len(self.features)

    def index_of(self, name: str) -> int:
        for i, f in enumerate(self.features):
            if f.name == name:
                return i
        raise KeyError(name)

    def alt_attribute_indices(self, j: int) -> list[int]:
        return [i for i, f in enumerate(self.features) if f.role == "alt" and f.alt_index == j]

    def socio_indices(self) -> list[int]:
        return [i for i, f in enumerate(self.features) if f.role == "socio"]

    def continuous_indices(self) -> list[int]:
        return [i for i, f in enumerate(self.features) if f.kind == "continuous"]

    def time_index(self, j: int) -> int:
        return self.constrained[(j, "time")]

    def cost_index(self, j: int) -> int:
        return self.constrained[(j, "cost")]

    def to_jsonable(self) -> dict:
        return {
            "alternatives": list(self.alternatives),
            "features": [
                {
                    "name": f.name,
                    "unit": f.unit,
                    "role": f.role,
                    "raw_column": f.raw_column,
                    "kind": f.kind,
                    "alt_index": f.alt_index,
                    "levels": list(f.levels) if f.levels is not None else None,
                }
                for f in self.features
            ],
            "constrained": sorted(
                [alt, kind, idx] for (alt, kind), idx in self.constrained.items()
            ),
        }

    @staticmethod
    def from_jsonable(obj: dict) -> "FeatureSchema":
        feats = tuple(
            FeatureDescriptor(
                name=f["name"],
                unit=f["unit"],
                role=f["role"],
                raw_column=f["raw_column"],
                kind=f["kind"],
                alt_index=f["alt_index"],
                levels=tuple(f["levels"]) if f["levels"] is not None else None,
            )
            for f in obj["features"]
        )
        constrained = {(alt, kind): idx for alt, kind, idx in obj["constrained"]}
        return FeatureSchema(tuple(obj["alternatives"]), feats, constrained)


def swissmetro_schema() -> FeatureSchema:
    """Fixed encoded-feature layout for the Swissmetro survey columns."""
    feats: list[FeatureDescriptor] = []

    def cont(name, unit, role, raw, alt=None):
        feats.append(FeatureDescriptor(name, unit, role, raw, "continuous", alt_index=alt))

    def dummy(name, raw, role, alt=None, levels=None):
        feats.append(
            FeatureDescriptor(name, "indicator", role, raw, "dummy", alt_index=alt, levels=levels)
        )

    cont("TRAIN_TT", "min", "alt", "TRAIN_TT", alt=0)
    cont("TRAIN_CO", "CHF", "alt", "TRAIN_CO", alt=0)
    cont("TRAIN_HE", "min", "alt", "TRAIN_HE", alt=0)
    cont("SM_TT", "min", "alt", "SM_TT", alt=1)
    cont("SM_CO", "CHF", "alt", "SM_CO", alt=1)
    cont("SM_HE", "min", "alt", "SM_HE", alt=1)
    cont("CAR_TT", "min", "alt", "CAR_TT", alt=2)
    cont("CAR_CO", "CHF", "alt", "CAR_CO", alt=2)
    dummy("SEATS", "SEATS", "alt", alt=1, levels=(1.0,))
    for g in (2, 3):
        dummy(f"GROUP={g}", "GROUP", "socio", levels=(float(g),))
    for p in range(1, 9):
        dummy(f"PURPOSE={p}", "PURPOSE", "socio", levels=(float(p),))
    dummy("FIRST", "FIRST", "socio", levels=(1.0,))
    for lv in (0, 1, 3):
        dummy(f"LUGGAGE={lv}", "LUGGAGE", "socio", levels=(float(lv),))
    for a in range(1, 6):
        dummy(f"AGE={a}", "AGE", "socio", levels=(float(a),))
    dummy("MALE", "MALE", "socio", levels=(1.0,))
    # Income codes 0 and 1 both mean "under 50 kCHF/year".
    dummy("INCOME=under50", "INCOME", "socio", levels=(0.0, 1.0))
    dummy("INCOME=50to100", "INCOME", "socio", levels=(2.0,))
    dummy("INCOME=over100", "INCOME", "socio", levels=(3.0,))

    names = [f.name for f in feats]
    constrained = {}
    for j, alt in enumerate(("TRAIN", "SM", "CAR")):
        constrained[(j, "time")] = names.index(f"{alt}_TT")
        constrained[(j, "cost")] = names.index(f"{alt}_CO")
    return FeatureSchema(("train", "SM", "car"), tuple(feats), constrained)


@dataclass
class RawTable:
    """Header-keyed numeric columns parsed from a delimiter-separated file."""

    columns: dict[str, np.ndarray]
    n_rows: int
    path: str = ""

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]


def load_raw(path: str, delimiter: str | None = None) -> RawTable:
    """Parse a survey file with a header row into numeric columns.

    The delimiter is auto-detected from the header line (tab wins over
    comma) when not given. Every row must provide a parseable number for
    every header column; failures name the row and column.
    """
    if not os.path.exists(path):
        raise IngestionError(f"input file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n").rstrip("\r") for ln in fh]
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        raise IngestionError(f"{path}: empty file")
    if delimiter is None:
        delimiter = "\t" if "\t" in lines[0] else ","
    header = [h.strip() for h in lines[0].split(delimiter)]
    header = [COLUMN_ALIASES.get(h, h) for h in header]
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise IngestionError(f"{path}: missing required column(s) {', '.join(missing)}")

    n = len(lines) - 1
    data = np.empty((n, len(header)), dtype=np.float64)
    for r, line in enumerate(lines[1:]):
        cells = line.split(delimiter)
        if len(cells) != len(header):
            raise IngestionError(
                f"{path}: row {r + 2} has {len(cells)} cells, expected {len(header)}"
            )
        for c, cell in enumerate(cells):
            try:
                data[r, c] = float(cell)
            except ValueError:
                raise IngestionError(
                    f"{path}: row {r + 2}, column {header[c]}: cannot parse {cell.strip()!r}"
                ) from None
    columns = {name: data[:, i].copy() for i, name in enumerate(header)}
    return RawTable(columns, n, path)


@dataclass
class FilterRule:
    """A named row filter; ``dropped`` is filled in by apply_filters."""

    name: str
    description: str
    params: dict = field(default_factory=dict)
    dropped: int | None = None


def default_filter_rules(outlier_percentile: float = 99.9) -> list[FilterRule]:
    return [
        FilterRule("known-choice", "chosen alternative is reported (CHOICE in 1..3)"),
        FilterRule("all-available", "all three alternatives are available"),
        FilterRule(
            "known-features",
            "no unknown/zero codes in used features "
            "(valid AGE/INCOME/PURPOSE/GROUP/LUGGAGE codes, positive times/costs/headways)",
        ),
        FilterRule(
            "outliers",
            "no travel time or cost above its column's percentile cap "
            "(computed once on the unfiltered table)",
            params={"percentile": outlier_percentile},
        ),
    ]


def _rule_mask(rule: FilterRule, raw: RawTable) -> np.ndarray:
    """Boolean keep-mask for one rule, evaluated on the full raw table."""
    cols = raw.columns
    if rule.name == "known-choice":
        return np.isin(cols["CHOICE"], (1.0, 2.0, 3.0))
    if rule.name == "all-available":
        keep = np.ones(raw.n_rows, dtype=bool)
        for av in AVAIL_COLUMNS:
            keep &= cols[av] == 1.0
        return keep
    if rule.name == "known-features":
        keep = np.isin(cols["AGE"], (1.0, 2.0, 3.0, 4.0, 5.0))
        keep &= np.isin(cols["INCOME"], (0.0, 1.0, 2.0, 3.0))
        keep &= np.isin(cols["PURPOSE"], tuple(float(p) for p in range(1, 9)))
        keep &= np.isin(cols["GROUP"], (2.0, 3.0))
        keep &= np.isin(cols["LUGGAGE"], (0.0, 1.0, 3.0))
        for b in ("MALE", "FIRST", "SEATS"):
            keep &= np.isin(cols[b], (0.0, 1.0))
        for c in TIME_COLUMNS + COST_COLUMNS + HEADWAY_COLUMNS:
            keep &= cols[c] > 0.0
        return keep
    if rule.name == "outliers":
        pct = float(rule.params.get("percentile", 99.9))
        keep = np.ones(raw.n_rows, dtype=bool)
        for c in TIME_COLUMNS + COST_COLUMNS:
            cap = np.percentile(cols[c], pct)
            keep &= cols[c] <= cap
        return keep
    raise ConfigError(f"unknown filter rule {rule.name!r}")


@dataclass
class Observation:
    """One choice record: encoded features, chosen alternative, availability."""

    x: np.ndarray  # [D] encoded, raw units
    choice: int  # 1-based alternative code
    avail: np.ndarray  # [C] 0/1
    respondent_id: int


def encode_features(raw: RawTable, schema: FeatureSchema, rows: np.ndarray) -> np.ndarray:
    """Encode selected raw rows into the schema's feature matrix (raw units)."""
    out = np.empty((rows.size, schema.n_features), dtype=np.float64)
    for i, f in enumerate(schema.features):
        col = raw[f.raw_column][rows]
        if f.kind == "continuous":
            out[:, i] = col
        else:
            out[:, i] = np.isin(col, f.levels).astype(np.float64)
    return out


def apply_filters(
    raw: RawTable, rules: Sequence[FilterRule], schema: FeatureSchema | None = None
) -> list[Observation]:
    """Apply filter rules in order and encode the survivors.

    Each rule's drop count (among rows surviving the earlier rules) is
    written back onto the rule and logged. Rules are evaluated row-wise on
    the full table, so permuting input rows permutes the output identically;
    the outlier percentiles are computed once on the unfiltered table.
    """
    if not rules:
        raise ConfigError("filter rule list is empty")
    if schema is None:
        schema = swissmetro_schema()
    keep = np.ones(raw.n_rows, dtype=bool)
    for rule in rules:
        mask = _rule_mask(rule, raw)
        rule.dropped = int((keep & ~mask).sum())
        keep &= mask
        log.info("filter %-15s dropped %5d rows (%d remain)", rule.name, rule.dropped, keep.sum())
    if not keep.any():
        raise ConfigError("all rows were filtered out; relax the filter rules")

    rows = np.flatnonzero(keep)
    x = encode_features(raw, schema, rows)
    choice = raw["CHOICE"][rows].astype(int)
    avail = np.stack([raw[c][rows] for c in AVAIL_COLUMNS], axis=1)
    if "ID" in raw.columns:
        resp = raw["ID"][rows].astype(int)
    else:
        resp = rows.astype(int)
    return [
        Observation(x[i], int(choice[i]), avail[i].copy(), int(resp[i])) for i in range(rows.size)
    ]


def split_counts(n: int, ratios: Sequence[float]) -> tuple[int, ...]:
    """Split sizes via rounded cumulative boundaries; each within 1 of exact."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {tuple(ratios)}")
    bounds = [0]
    acc = 0.0
    for r in ratios[:-1]:
        acc += r
        bounds.append(int(np.floor(n * acc + 0.5)))
    bounds.append(n)
    return tuple(b1 - b0 for b0, b1 in zip(bounds[:-1], bounds[1:]))


@dataclass
class Dataset:
    """Immutable, fully prepared observation collection.

    ``chosen`` stores 0-based alternative indices (raw CHOICE codes are
    1-based). ``x_scaled`` applies the training-split z-scaling to
    continuous features and passes dummy columns through unchanged.
    """

    schema: FeatureSchema
    x_raw: np.ndarray
    x_scaled: np.ndarray
    chosen: np.ndarray
    avail: np.ndarray
    respondent: np.ndarray
    split_labels: np.ndarray
    scaling_mean: np.ndarray
    scaling_std: np.ndarray

    @property
    def n(self) -> int:
        return self.x_raw.shape[0]

    @property
    def n_alternatives(self) -> int:
        return self.schema.n_alternatives

    @property
    def n_features(self) -> int:
        return self.schema.n_features

    def split_indices(self, split: str) -> np.ndarray:
        if split not in SPLIT_NAMES:
            raise ConfigError(f"unknown split {split!r}; use one of {SPLIT_NAMES}")
        return np.flatnonzero(self.split_labels == split)

    def scale(self, x_raw: np.ndarray) -> np.ndarray:
        return (x_raw - self.scaling_mean) / self.scaling_std

    def unscale(self, x_scaled: np.ndarray) -> np.ndarray:
        return x_scaled * self.scaling_std + self.scaling_mean

    def fingerprint(self) -> str:
        """Digest of schema plus scaling; embedded in model files."""
        payload = {
            "schema": self.schema.to_jsonable(),
            "scaling_mean": [float(v) for v in self.scaling_mean],
            "scaling_std": [float(v) for v in self.scaling_std],
        }
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def save(self, path: str) -> None:
        obj = {
            "format": "choicekit-dataset",
            "version": 1,
            "schema": self.schema.to_jsonable(),
            "scaling": {
                "mean": self.scaling_mean.tolist(),
                "std": self.scaling_std.tolist(),
            },
            "observations": {
                "x_raw": self.x_raw.tolist(),
                "chosen": self.chosen.tolist(),
                "avail": self.avail.astype(int).tolist(),
                "respondent": self.respondent.tolist(),
                "split": self.split_labels.tolist(),
            },
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")

    @staticmethod
    def load(path: str) -> "Dataset":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        if obj.get("format") != "choicekit-dataset":
            raise IngestionError(f"{path} is not a choicekit dataset file")
        schema = FeatureSchema.from_jsonable(obj["schema"])
        mean = np.asarray(obj["scaling"]["mean"], dtype=np.float64)
        std = np.asarray(obj["scaling"]["std"], dtype=np.float64)
        o = obj["observations"]
        x_raw = np.asarray(o["x_raw"], dtype=np.float64)
        ds = Dataset(
            schema=schema,
            x_raw=x_raw,
            x_scaled=(x_raw - mean) / std,
            chosen=np.asarray(o["chosen"], dtype=np.intp),
            avail=np.asarray(o["avail"], dtype=np.float64),
            respondent=np.asarray(o["respondent"], dtype=np.intp),
            split_labels=np.asarray(o["split"], dtype="U10"),
            scaling_mean=mean,
            scaling_std=std,
        )
        return ds


def build_dataset(
    schema: FeatureSchema,
    observations: Sequence[Observation],
    ratios: Sequence[float] = (0.60, 0.20, 0.20),
    seed: int = 0,
) -> Dataset:
    """Assemble, split, and scale observations into a ready Dataset."""
    if not observations:
        raise ConfigError("no observations to assemble")
    x_raw = np.stack([o.x for o in observations])
    chosen = np.asarray([o.choice - 1 for o in observations], dtype=np.intp)
    avail = np.stack([o.avail for o in observations]).astype(np.float64)
    resp = np.asarray([o.respondent_id for o in observations], dtype=np.intp)
    c = schema.n_alternatives
    if chosen.min() < 0 or chosen.max() >= c:
        raise DomainError("chosen alternative code outside 1..C")
    if not np.all(avail[np.arange(len(observations)), chosen] == 1.0):
        raise DomainError("an observation chose an unavailable alternative")
    if not np.isfinite(x_raw).all():
        raise DomainError("non-finite feature value in observations")

    labels = _split_labels(len(observations), ratios, seed)
    mean, std = _fit_scaling(schema, x_raw, labels == "train")
    return Dataset(
        schema=schema,
        x_raw=x_raw,
        x_scaled=(x_raw - mean) / std,
        chosen=chosen,
        avail=avail,
        respondent=resp,
        split_labels=labels,
        scaling_mean=mean,
        scaling_std=std,
    )


def _split_labels(n: int, ratios: Sequence[float], seed: int) -> np.ndarray:
    counts = split_counts(n, ratios)
    rng = np.random.Generator(np.random.PCG64(seed))
    perm = rng.permutation(n)
    labels = np.empty(n, dtype="U10")
    start = 0
    for name, count in zip(SPLIT_NAMES, counts):
        labels[perm[start : start + count]] = name
        start += count
    return labels


def _fit_scaling(
    schema: FeatureSchema, x_raw: np.ndarray, train_mask: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Z-scaling statistics from the training rows; dummies pass through."""
    mean = np.zeros(schema.n_features)
    std = np.ones(schema.n_features)
    train = x_raw[train_mask]
    for i in schema.continuous_indices():
        mean[i] = train[:, i].mean()
        s = train[:, i].std()
        std[i] = s if s > 0.0 else 1.0
    return mean, std


def split(dataset: Dataset, ratios: Sequence[float], seed: int) -> Dataset:
    """Re-split a dataset (seeded permutation, contiguous blocks); refits scaling."""
    labels = _split_labels(dataset.n, ratios, seed)
    mean, std = _fit_scaling(dataset.schema, dataset.x_raw, labels == "train")
    return Dataset(
        schema=dataset.schema,
        x_raw=dataset.x_raw,
        x_scaled=(dataset.x_raw - mean) / std,
        chosen=dataset.chosen,
        avail=dataset.avail,
        respondent=dataset.respondent,
        split_labels=labels,
        scaling_mean=mean,
        scaling_std=std,
    )


def fit_apply_scaling(dataset: Dataset) -> Dataset:
    """Refit scaling on the current training split and reapply everywhere."""
    mean, std = _fit_scaling(dataset.schema, dataset.x_raw, dataset.split_labels == "train")
    return Dataset(
        schema=dataset.schema,
        x_raw=dataset.x_raw,
        x_scaled=(dataset.x_raw - mean) / std,
        chosen=dataset.chosen,
        avail=dataset.avail,
        respondent=dataset.respondent,
        split_labels=dataset.split_labels,
        scaling_mean=mean,
        scaling_std=std,
    )


def prepare_survey_dataset(
    path: str,
    rules: Sequence[FilterRule] | None = None,
    ratios: Sequence[float] = (0.60, 0.20, 0.20),
    seed: int = 0,
    delimiter: str | None = None,
) -> tuple[Dataset, list[FilterRule]]:
    """Full ingestion pipeline: load, filter, split, scale."""
    raw = load_raw(path, delimiter)
    rules = list(rules) if rules is not None else default_filter_rules()
    schema = swissmetro_schema()
    observations = apply_filters(raw, rules, schema)
    log.info("prepared %d observations from %d raw rows", len(observations), raw.n_rows)
    return build_dataset(schema, observations, ratios, seed), rules


# ---------------------------------------------------------------------------
# Synthetic data with known truth


@dataclass(frozen=True)
class SyntheticMnl:
    """Generating coefficients for a linear-utility benchmark population.

    One constant per alternative (the first fixed at 0 for identification)
    and per-alternative time and cost coefficients in raw units.
    """

    asc: tuple[float, ...]
    beta_time: tuple[float, ...]
    beta_cost: tuple[float, ...]

    def __post_init__(self):
        if self.asc[0] != 0.0:
            raise ConfigError("first alternative's constant must be 0")
        if not len(self.asc) == len(self.beta_time) == len(self.beta_cost):
            raise ConfigError("coefficient tuples must share one length")

    @property
    def n_alternatives(self) -> int:
        return len(self.asc)


def synthetic_schema(c: int) -> FeatureSchema:
    """Minimal time+cost schema for ``c`` alternatives (all continuous)."""
    feats = []
    constrained = {}
    for j in range(c):
        feats.append(FeatureDescriptor(f"alt{j + 1}_time", "min", "alt", f"alt{j + 1}_time", "continuous", alt_index=j))
        feats.append(FeatureDescriptor(f"alt{j + 1}_cost", "CHF", "alt", f"alt{j + 1}_cost", "continuous", alt_index=j))
        constrained[(j, "time")] = 2 * j
        constrained[(j, "cost")] = 2 * j + 1
    return FeatureSchema(tuple(f"alt{j + 1}" for j in range(c)), tuple(feats), constrained)


def synthetic_scores(truth: SyntheticMnl, x_raw: np.ndarray) -> np.ndarray:
    """Exact utility scores of the generating process on raw features."""
    c = truth.n_alternatives
    scores = np.empty((x_raw.shape[0], c))
    for j in range(c):
        scores[:, j] = (
            truth.asc[j]
            + truth.beta_time[j] * x_raw[:, 2 * j]
            + truth.beta_cost[j] * x_raw[:, 2 * j + 1]
        )
    return scores


def synthetic_probabilities(truth: SyntheticMnl, x_raw: np.ndarray) -> np.ndarray:
    scores = synthetic_scores(truth, x_raw)
    scores -= scores.max(axis=1, keepdims=True)
    e = np.exp(scores)
    return e / e.sum(axis=1, keepdims=True)


def generate_synthetic_mnl(
    truth: SyntheticMnl,
    n: int,
    seed: int,
    time_range: tuple[float, float] = (10.0, 120.0),
    cost_range: tuple[float, float] = (5.0, 100.0),
    ratios: Sequence[float] = (0.60, 0.20, 0.20),
) -> Dataset:
    """Uniform attributes, choices sampled from exact logit probabilities.

    All alternatives are available; the re-estimation oracle for recovery
    tests. Attribute ranges must have positive width.
    """
    if n <= 0:
        raise ConfigError("n must be positive")
    for lo, hi in (time_range, cost_range):
        if not hi > lo:
            raise ConfigError("attribute ranges must have positive width")
    c = truth.n_alternatives
    schema = synthetic_schema(c)
    rng = np.random.Generator(np.random.PCG64(seed))
    x_raw = np.empty((n, 2 * c))
    for j in range(c):
        x_raw[:, 2 * j] = rng.uniform(*time_range, size=n)
        x_raw[:, 2 * j + 1] = rng.uniform(*cost_range, size=n)
    probs = synthetic_probabilities(truth, x_raw)
    u = rng.random(n)
    chosen = (u[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)
    observations = [
        Observation(x_raw[i], int(chosen[i]) + 1, np.ones(c), i) for i in range(n)
    ]
    return build_dataset(schema, observations, ratios=ratios, seed=seed)


# ---------------------------------------------------------------------------
# Swissmetro-format sample survey generator

SURVEY_COLUMN_ORDER = (
    "ID",
    "GROUP",
    "PURPOSE",
    "FIRST",
    "LUGGAGE",
    "AGE",
    "MALE",
    "INCOME",
    "TRAIN_AV",
    "SM_AV",
    "CAR_AV",
    "TRAIN_TT",
    "TRAIN_CO",
    "TRAIN_HE",
    "SM_TT",
    "SM_CO",
    "SM_HE",
    "CAR_TT",
    "CAR_CO",
    "SEATS",
    "CHOICE",
)


def generate_survey_file(
    path: str,
    n_respondents: int = 1192,
    menus_per_respondent: int = 9,
    seed: int = 7,
) -> int:
    """Write a Swissmetro-format stated-preference sample; returns row count.

    Respondent characteristics are constant across that respondent's menus;
    menu attributes vary around a reference trip. Choices come from a
    nonlinear utility process (piecewise time discomfort, income-dependent
    cost sensitivity, age effects) so that a linear-utility model is
    informative but not exact. A small share of rows carries the survey's
    unknown codes (CHOICE 0, AGE 6, INCOME 4) and unavailable alternatives,
    which the default filters remove.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    rows_per = menus_per_respondent
    n = n_respondents * rows_per

    # Respondent-level draws.
    group = rng.choice([2.0, 3.0], size=n_respondents, p=[0.47, 0.53])
    purpose = rng.choice(
        np.arange(1.0, 9.0), size=n_respondents,
        p=[0.28, 0.06, 0.25, 0.12, 0.08, 0.03, 0.1, 0.08],
    )
    first = rng.choice([0.0, 1.0], size=n_respondents, p=[0.68, 0.32])
    luggage = rng.choice([0.0, 1.0, 3.0], size=n_respondents, p=[0.62, 0.32, 0.06])
    age = rng.choice(np.arange(1.0, 6.0), size=n_respondents, p=[0.1, 0.3, 0.3, 0.2, 0.1])
    age[rng.random(n_respondents) < 0.01] = 6.0  # unknown code
    male = rng.choice([0.0, 1.0], size=n_respondents, p=[0.35, 0.65])
    income = rng.choice([0.0, 1.0, 2.0, 3.0], size=n_respondents, p=[0.05, 0.3, 0.45, 0.2])
    income[rng.random(n_respondents) < 0.02] = 4.0  # unknown code
    base_dist = np.exp(rng.normal(4.55, 0.45, size=n_respondents)).clip(25.0, 700.0)

    r = np.repeat(np.arange(n_respondents), rows_per)
    dist = base_dist[r] * rng.uniform(0.85, 1.15, size=n)

    train_tt = np.round(dist * 0.95 + rng.uniform(10, 40, size=n)).clip(min=25)
    sm_tt = np.round(dist * 0.31 + rng.uniform(8, 20, size=n)).clip(min=10)
    car_tt = np.round(dist * 0.88 + rng.uniform(5, 35, size=n)).clip(min=20)
    fare_rate = np.where(first[r] == 1.0, 0.40, 0.27)
    pass_discount = np.where(group[r] == 2.0, rng.uniform(0.45, 0.85, size=n), 1.0)
    train_co = np.round(dist * fare_rate * pass_discount + rng.uniform(2, 10, size=n)).clip(min=2)
    sm_co = np.round(train_co * rng.uniform(1.5, 2.3, size=n)).clip(min=3)
    car_co = np.round(dist * 0.23 + rng.uniform(2, 12, size=n)).clip(min=2)
    train_he = rng.choice([30.0, 60.0, 120.0], size=n, p=[0.45, 0.35, 0.2])
    sm_he = rng.choice([10.0, 20.0, 30.0], size=n, p=[0.45, 0.35, 0.2])
    seats = rng.choice([0.0, 1.0], size=n, p=[0.6, 0.4])

    train_av = (rng.random(n) > 0.012).astype(float)
    car_av = (rng.random(n) > 0.055).astype(float)
    sm_av = (rng.random(n) > 0.006).astype(float)

    # Nonlinear systematic utilities (raw units).
    inc = income[r]
    cost_sens = -0.042 * np.where(inc <= 1.0, 1.45, np.where(inc == 2.0, 1.0, 0.62))
    busy = np.isin(purpose[r], (3.0, 7.0))
    commute = np.isin(purpose[r], (1.0, 5.0))
    time_sens = -0.0165 * np.where(busy, 1.5, np.where(commute, 1.25, 1.0))

    u_train = (
        time_sens * train_tt
        - 0.009 * np.maximum(0.0, train_tt - 180.0)
        + cost_sens * train_co
        - 0.0095 * train_he
        + 0.95 * (group[r] == 2.0)
        + 0.35 * (luggage[r] >= 1.0)
    )
    u_sm = (
        0.75
        + time_sens * 0.9 * sm_tt
        - 0.003 * np.maximum(0.0, sm_tt - 120.0)
        + cost_sens * sm_co
        - 0.0095 * sm_he
        + 0.30 * seats
        + 0.28 * first[r]
        - 0.33 * np.maximum(0.0, np.minimum(age[r], 5.0) - 3.0)
        + 0.22 * (age[r] == 1.0)
    )
    u_car = (
        time_sens * car_tt
        - 0.009 * np.maximum(0.0, car_tt - 180.0)
        + cost_sens * car_co
        + 0.85 * (group[r] == 3.0)
        + 0.5 * (luggage[r] == 3.0)
        + 0.18 * male[r]
    )
    scores = np.stack([u_train, u_sm, u_car], axis=1)
    avail = np.stack([train_av, sm_av, car_av], axis=1)

    # Nudge the constants so all-available market shares land near the
    # published survey's (train 6.8%, SM 56.0%, car 37.3%); simple
    # fixed-point on the constants over all-available rows.
    target = np.array([0.068, 0.560, 0.373])
    all_av = avail.all(axis=1)
    adjust = np.zeros(3)
    sub = scores[all_av]
    for _ in range(80):
        shifted = sub + adjust
        shifted = shifted - shifted.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        share = (e / e.sum(axis=1, keepdims=True)).mean(axis=0)
        adjust += np.log(target / share)
        adjust -= adjust[0]
    scores += adjust

    probs = _masked_probs(scores, avail)
    u = rng.random(n)
    choice = (u[:, None] > np.cumsum(probs, axis=1)).sum(axis=1) + 1.0
    choice[rng.random(n) < 0.004] = 0.0  # unknown-choice code

    cols = {
        "ID": (r + 1).astype(float),
        "GROUP": group[r],
        "PURPOSE": purpose[r],
        "FIRST": first[r],
        "LUGGAGE": luggage[r],
        "AGE": age[r],
        "MALE": male[r],
        "INCOME": income[r],
        "TRAIN_AV": train_av,
        "SM_AV": sm_av,
        "CAR_AV": car_av,
        "TRAIN_TT": train_tt,
        "TRAIN_CO": train_co,
        "TRAIN_HE": train_he,
        "SM_TT": sm_tt,
        "SM_CO": sm_co,
        "SM_HE": sm_he,
        "CAR_TT": car_tt,
        "CAR_CO": car_co,
        "SEATS": seats,
        "CHOICE": choice,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(SURVEY_COLUMN_ORDER) + "\n")
        for i in range(n):
            fh.write("\t".join(str(int(cols[c][i])) for c in SURVEY_COLUMN_ORDER) + "\n")
    return n


def _masked_probs(scores: np.ndarray, avail: np.ndarray) -> np.ndarray:
    masked = np.where(avail > 0.0, scores, -np.inf)
    masked = masked - masked.max(axis=1, keepdims=True)
    e = np.where(avail > 0.0, np.exp(np.where(avail > 0.0, masked, 0.0)), 0.0)
    return e / e.sum(axis=1, keepdims=True)
