"""Choice model families behind one probability interface.

All models map a scaled feature matrix [batch, D] to per-alternative scores
[batch, C]; probabilities are a masked softmax over those scores. Score
evaluation participates in the autodiff graph when a Tape is open, so the
same forward path serves training and analysis.
"""

from __future__ import annotations

import json
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor
from .data import Dataset, FeatureSchema
from .errors import ConfigError, DomainError, IngestionError, StructuralError

MODEL_KINDS = ("mnl", "dnn", "asu_dnn")


class ChoiceModel:
    """Shared scoring/prediction surface; subclasses define the score graph."""

    kind: str = ""

    def __init__(self, schema: FeatureSchema, seed: int):
        self.schema = schema
        self.seed = int(seed)
        self.params = ParameterStore(seed)

    @property
    def n_alternatives(self) -> int:
        return self.schema.n_alternatives

    def architecture(self) -> dict:
        raise NotImplementedError

    def scores_t(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def _check_width(self, x: np.ndarray) -> None:
        if x.ndim != 2 or x.shape[1] != self.schema.n_features:
            raise StructuralError(
                f"feature matrix has shape {x.shape}, schema expects width {self.schema.n_features}"
            )

    def scores(self, x_scaled: np.ndarray) -> np.ndarray:
        self._check_width(x_scaled)
        return self.scores_t(Tensor(x_scaled)).data

    def probabilities_t(self, x: Tensor, avail: np.ndarray) -> Tensor:
        return ad.masked_softmax(self.scores_t(x), avail)

    def probabilities(self, x_scaled: np.ndarray, avail: np.ndarray) -> np.ndarray:
        self._check_width(x_scaled)
        return self.probabilities_t(Tensor(x_scaled), avail).data

    def predict(self, x_scaled: np.ndarray, avail: np.ndarray) -> np.ndarray:
        """Argmax over available alternatives; ties go to the lowest index."""
        probs = self.probabilities(x_scaled, avail)
        masked = np.where(np.asarray(avail, dtype=bool), probs, -1.0)
        return masked.argmax(axis=1)


class MnlModel(ChoiceModel):
    """Linear-in-parameters logit over scaled features.

    Each alternative's score sums its own attributes times per-alternative
    coefficients plus a constant; the first alternative's constant (and, when
    socio-demographics are included, its socio coefficients) are fixed at 0
    for identification. Sparsity is enforced by a constant mask, so masked
    entries receive no gradient and stay at their zero initialization.
    """

    kind = "mnl"

    def __init__(self, schema: FeatureSchema, seed: int = 0, include_socio: bool = False):
        super().__init__(schema, seed)
        self.include_socio = bool(include_socio)
        d, c = schema.n_features, schema.n_alternatives
        mask = np.zeros((d, c))
        for j in range(c):
            for i in schema.alt_attribute_indices(j):
                mask[i, j] = 1.0
        if self.include_socio:
            for i in schema.socio_indices():
                mask[i, 1:] = 1.0
        self._coef_mask = mask
        self._asc_mask = np.concatenate([[0.0], np.ones(c - 1)])
        self.params.add("coef", (d, c), init="zeros")
        self.params.add("asc", (c,), init="zeros")

    def architecture(self) -> dict:
        return {"socio": self.include_socio}

    def scores_t(self, x: Tensor) -> Tensor:
        coef = ad.mul_const(self.params["coef"], self._coef_mask)
        asc = ad.mul_const(self.params["asc"], self._asc_mask)
        return ad.affine(x, coef, asc)

    def raw_coefficients(self, scaling_mean: np.ndarray, scaling_std: np.ndarray) -> dict:
        """Constants and per-feature coefficients mapped back to raw units.

        A scaled-space coefficient b on feature a corresponds to b/sigma_a on
        the raw feature, and each alternative's constant absorbs
        -sum_a b_a * mu_a / sigma_a.
        """
        coef = self.params["coef"].data * self._coef_mask
        asc = self.params["asc"].data * self._asc_mask
        raw_coef = coef / scaling_std[:, None]
        raw_asc = asc - (coef * (scaling_mean / scaling_std)[:, None]).sum(axis=0)
        raw_asc = raw_asc - raw_asc[0]  # renormalize to the asc[0] = 0 convention
        return {
            "asc": raw_asc,
            "coef": raw_coef,
            "feature_names": [f.name for f in self.schema.features],
        }


def extract_mnl_vot(
    model: MnlModel, alternative: int, scaling_mean: np.ndarray, scaling_std: np.ndarray
) -> float:
    """Value of time for one alternative, CHF per hour.

    Ratio of the raw-unit time and cost coefficients, times 60 (times are in
    minutes, costs in CHF).
    """
    if not isinstance(model, MnlModel):
        raise StructuralError("coefficient-ratio VOT is defined for the linear model only")
    raw = model.raw_coefficients(scaling_mean, scaling_std)["coef"]
    j = int(alternative)
    beta_time = raw[model.schema.time_index(j), j]
    beta_cost = raw[model.schema.cost_index(j), j]
    if beta_cost == 0.0:
        raise DomainError(f"alternative {j}: cost coefficient is zero, VOT ratio is degenerate")
    return beta_time / beta_cost * 60.0


class DnnModel(ChoiceModel):
    """Fully connected relu network over all features with C score outputs."""

    kind = "dnn"

    def __init__(self, schema: FeatureSchema, seed: int = 0, hidden: Sequence[int] = (64, 64)):
        super().__init__(schema, seed)
        self.hidden = tuple(int(h) for h in hidden)
        if not self.hidden or min(self.hidden) < 1:
            raise ConfigError(f"hidden widths must be positive, got {self.hidden}")
        widths = [schema.n_features, *self.hidden, schema.n_alternatives]
        for k, (w_in, w_out) in enumerate(zip(widths[:-1], widths[1:])):
            self.params.add(f"layer{k}.weight", (w_in, w_out), init="fan_in_uniform")
            self.params.add(f"layer{k}.bias", (w_out,), init="zeros")
        self._n_layers = len(widths) - 1

    def architecture(self) -> dict:
        return {"hidden": list(self.hidden)}

    def scores_t(self, x: Tensor) -> Tensor:
        h = x
        for k in range(self._n_layers):
            h = ad.affine(h, self.params[f"layer{k}.weight"], self.params[f"layer{k}.bias"])
            if k < self._n_layers - 1:
                h = ad.relu(h)
        return h


class AsuDnnModel(ChoiceModel):
    """Alternative-specific utility network.

    Each alternative's score comes from its own subnet fed that alternative's
    attributes concatenated with a socio-demographic embedding shared across
    alternatives. With the embedding held fixed, alternative j's score cannot
    depend on other alternatives' attributes.
    """

    kind = "asu_dnn"

    def __init__(
        self,
        schema: FeatureSchema,
        seed: int = 0,
        alt_hidden: Sequence[int] = (32, 32),
        socio_hidden: Sequence[int] = (16,),
    ):
        super().__init__(schema, seed)
        self.alt_hidden = tuple(int(h) for h in alt_hidden)
        self.socio_hidden = tuple(int(h) for h in socio_hidden)
        if not self.alt_hidden or not self.socio_hidden:
            raise ConfigError("alt_hidden and socio_hidden must be non-empty")
        self._socio_idx = schema.socio_indices()
        self._alt_idx = [schema.alt_attribute_indices(j) for j in range(schema.n_alternatives)]
        if not self._socio_idx:
            raise ConfigError("schema has no socio-demographic features for the shared subnet")

        widths = [len(self._socio_idx), *self.socio_hidden]
        for k, (w_in, w_out) in enumerate(zip(widths[:-1], widths[1:])):
            self.params.add(f"socio{k}.weight", (w_in, w_out), init="fan_in_uniform")
            self.params.add(f"socio{k}.bias", (w_out,), init="zeros")
        for j in range(schema.n_alternatives):
            widths = [len(self._alt_idx[j]) + self.socio_hidden[-1], *self.alt_hidden, 1]
            for k, (w_in, w_out) in enumerate(zip(widths[:-1], widths[1:])):
                self.params.add(f"alt{j}.layer{k}.weight", (w_in, w_out), init="fan_in_uniform")
                self.params.add(f"alt{j}.layer{k}.bias", (w_out,), init="zeros")

    def architecture(self) -> dict:
        return {"alt_hidden": list(self.alt_hidden), "socio_hidden": list(self.socio_hidden)}

    def scores_t(self, x: Tensor) -> Tensor:
        z = Tensor(x.data[:, self._socio_idx])
        for k in range(len(self.socio_hidden)):
            z = ad.relu(ad.affine(z, self.params[f"socio{k}.weight"], self.params[f"socio{k}.bias"]))
        outputs = []
        n_alt_layers = len(self.alt_hidden) + 1
        for j in range(self.schema.n_alternatives):
            h = ad.concat_cols([Tensor(x.data[:, self._alt_idx[j]]), z])
            for k in range(n_alt_layers):
                h = ad.affine(h, self.params[f"alt{j}.layer{k}.weight"], self.params[f"alt{j}.layer{k}.bias"])
                if k < n_alt_layers - 1:
                    h = ad.relu(h)
            outputs.append(h)
        return ad.concat_cols(outputs)


def build_model(kind: str, schema: FeatureSchema, seed: int, arch: dict | None = None) -> ChoiceModel:
    arch = dict(arch or {})
    if kind == "mnl":
        return MnlModel(schema, seed, include_socio=arch.get("socio", False))
    if kind == "dnn":
        return DnnModel(schema, seed, hidden=arch.get("hidden", (64, 64)))
    if kind == "asu_dnn":
        return AsuDnnModel(
            schema,
            seed,
            alt_hidden=arch.get("alt_hidden", (32, 32)),
            socio_hidden=arch.get("socio_hidden", (16,)),
        )
    raise ConfigError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def save_model(model: ChoiceModel, path: str, dataset: Dataset) -> None:
    """Write kind, architecture, schema fingerprint, scaling, and parameters.

    Floats serialize via repr and round-trip exactly.
    """
    obj = {
        "format": "choicekit-model",
        "version": 1,
        "kind": model.kind,
        "seed": model.seed,
        "architecture": model.architecture(),
        "fingerprint": dataset.fingerprint(),
        "schema": model.schema.to_jsonable(),
        "scaling": {
            "mean": dataset.scaling_mean.tolist(),
            "std": dataset.scaling_std.tolist(),
        },
        "parameters": {
            name: {"shape": list(t.data.shape), "values": t.data.reshape(-1).tolist()}
            for name, t in model.params.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_model(path: str) -> tuple[ChoiceModel, str]:
    """Rebuild a model from file; returns (model, schema fingerprint)."""
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj.get("format") != "choicekit-model":
        raise IngestionError(f"{path} is not a choicekit model file")
    schema = FeatureSchema.from_jsonable(obj["schema"])
    model = build_model(obj["kind"], schema, obj["seed"], obj["architecture"])
    for name, spec in obj["parameters"].items():
        if name not in model.params:
            raise IngestionError(f"{path}: unexpected parameter {name!r}")
        data = np.asarray(spec["values"], dtype=np.float64).reshape(spec["shape"])
        if data.shape != model.params[name].data.shape:
            raise IngestionError(f"{path}: parameter {name!r} has wrong shape {data.shape}")
        model.params[name].data = data
    return model, obj["fingerprint"]
