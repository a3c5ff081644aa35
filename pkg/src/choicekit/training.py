"""Loss assembly and the minibatch training loop.

Each optimizer step sees both loss terms: the batch's summed negative
log-likelihood plus the weighted hinge penalties of a proportional slice of
the epoch's pseudo pairs, all divided by the batch size so the penalty
multiplier means the same thing at any batch size. Pseudo pairs are
regenerated every epoch from a dedicated random stream; shuffling uses
another. With a zero penalty multiplier or no constraints the penalty branch
is skipped outright, so such runs execute the exact float operations of an
unconstrained run.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .constraints import ConstraintSet, generate_pseudo_pairs, violation_loss
from .data import Dataset
from .errors import ConfigError, DomainError, TrainingError
from .models import ChoiceModel

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    max_epochs: int = 500
    batch_size: int = 128
    learning_rate: float = 1e-3
    optimizer: str = "adam"  # "adam" or "sgd"
    penalty_weight: float = 1.0  # global multiplier on constraint weights
    pairs_per_constraint: int = 256
    delta: float | None = None  # pseudo-pair increment; None = 1% of span
    range_extension: float = 0.5
    constraint_margin: float = 0.01  # training-time hinge slack, derivative units
    warmup_epochs: int = 30  # penalty weight ramps linearly over these epochs
    patience: int = 20
    lr_decay: float = 0.1  # multiplier applied when the val objective stalls
    min_learning_rate: float = 1e-5  # stop once stalled at or below this rate
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if self.max_epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ConfigError("max_epochs, batch_size, and patience must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.penalty_weight < 0:
            raise ConfigError("penalty_weight must be nonnegative")
        if self.pairs_per_constraint < 1:
            raise ConfigError("pairs_per_constraint must be positive")
        if self.range_extension < 0:
            raise ConfigError("range_extension must be nonnegative")
        if self.constraint_margin < 0:
            raise ConfigError("constraint_margin must be nonnegative")
        if not 0 < self.lr_decay <= 1 or self.min_learning_rate <= 0:
            raise ConfigError("lr_decay must be in (0, 1] and min_learning_rate positive")
        if self.warmup_epochs < 0:
            raise ConfigError("warmup_epochs must be nonnegative")
        return self


@dataclass
class EpochRecord:
    epoch: int
    train_nll: float  # running average over the epoch's minibatches
    val_nll: float
    val_penalty: float  # weighted hinge sum on the fixed validation pairs, per val obs
    total_loss: float  # epoch average of the per-step objective
    penalty_total: float  # unweighted training hinge sums over all pairs
    per_constraint: dict = field(default_factory=dict)

    @property
    def val_objective(self) -> float:
        return self.val_nll + self.val_penalty


@dataclass
class TrainHistory:
    records: list[EpochRecord]
    best_epoch: int

    def to_table(self) -> str:
        """Delimiter-separated epoch table for external plotting."""
        keys = sorted(self.records[0].per_constraint) if self.records else []
        header = ["epoch", "train_nll", "val_nll", "val_penalty", "total_loss", "penalty_total"]
        header += [f"viol_alt{c}_f{m}" for c, m in keys]
        lines = ["\t".join(header)]
        for r in self.records:
            row = [
                str(r.epoch),
                repr(r.train_nll),
                repr(r.val_nll),
                repr(r.val_penalty),
                repr(r.total_loss),
                repr(r.penalty_total),
            ]
            row += [repr(r.per_constraint[k]) for k in keys]
            lines.append("\t".join(row))
        return "\n".join(lines) + "\n"


def nll_loss(probs: Tensor, chosen) -> Tensor:
    """Summed negative log-likelihood of the chosen alternatives."""
    return ad.nll(probs, chosen)


def total_loss(nll: Tensor, penalties: dict, weights: dict, penalty_weight: float) -> Tensor:
    """nll + penalty_weight * sum of weighted constraint losses."""
    out = nll
    if penalty_weight > 0:
        for key, term in penalties.items():
            out = ad.add(out, ad.scale(term, penalty_weight * weights.get(key, 1.0)))
    return out


@dataclass
class SplitMetrics:
    avg_nll: float
    accuracy: float
    n: int


def evaluate_split(model: ChoiceModel, dataset: Dataset, split: str) -> SplitMetrics:
    """Average NLL and argmax accuracy of a model on one split."""
    rows = dataset.split_indices(split)
    if rows.size == 0:
        raise DomainError(f"split {split!r} is empty")
    x = dataset.x_scaled[rows]
    avail = dataset.avail[rows]
    chosen = dataset.chosen[rows]
    probs = model.probabilities(x, avail)
    p = probs[np.arange(rows.size), chosen]
    if np.any(p == 0.0):
        raise DomainError("a chosen alternative has zero probability")
    avg_nll = float(-np.log(np.maximum(p, 1e-300)).mean())
    accuracy = float((model.predict(x, avail) == chosen).mean())
    return SplitMetrics(avg_nll, accuracy, int(rows.size))


class _Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, store) -> None:
        for name, t in store.items():
            t.data = t.data - self.lr * store.gradient(name)


class _Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, store) -> None:
        self.t += 1
        for name, param in store.items():
            g = store.gradient(name)
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            v = self.v[name]
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            m_hat = m / (1 - self.beta1**self.t)
            v_hat = v / (1 - self.beta2**self.t)
            param.data = param.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _make_optimizer(config: TrainConfig):
    if config.optimizer == "adam":
        return _Adam(config.learning_rate)
    return _Sgd(config.learning_rate)


def train(
    model: ChoiceModel,
    dataset: Dataset,
    constraint_set: ConstraintSet | None,
    config: TrainConfig,
) -> tuple[ChoiceModel, TrainHistory]:
    """Minibatch training with validation-based early stopping.

    Unconstrained runs select the epoch with the best validation NLL.
    Constrained runs select on the validation total objective instead:
    validation NLL plus the weighted penalty on a pair set generated once
    per run, so the returned snapshot is both well-fitting and enforced
    (selecting on NLL alone systematically prefers early epochs whose
    constraints have not settled yet).

    The training-loss penalty weight ramps linearly from 0 to its full value
    over ``warmup_epochs`` (likelihood structure is learned first, then the
    constraints take hold); the selection metric always applies the full
    weight, so only enforced epochs can win selection.

    When the selection metric has not improved for ``patience`` epochs the
    learning rate is multiplied by ``lr_decay``; once that would drop it
    below ``min_learning_rate`` (or at the epoch cap) training stops. The
    parameters of the best epoch are restored into the model.
    """
    config.validate()
    train_rows = dataset.split_indices("train")
    if train_rows.size == 0:
        raise ConfigError("training split is empty")
    seq = np.random.SeedSequence(config.seed)
    shuffle_seq, pairs_seq, val_pairs_seq = seq.spawn(3)
    shuffle_rng = np.random.Generator(np.random.PCG64(shuffle_seq))
    pairs_rng = np.random.Generator(np.random.PCG64(pairs_seq))

    constrained = (
        constraint_set is not None and len(constraint_set) > 0 and config.penalty_weight > 0
    )
    cons = list(constraint_set) if constrained else []
    weights = {(c.alternative, c.feature): c.weight for c in cons}
    val_pairs = []
    if constrained:
        val_rng = np.random.Generator(np.random.PCG64(val_pairs_seq))
        val_pairs = [
            generate_pseudo_pairs(
                dataset, con, config.pairs_per_constraint, config.delta,
                config.range_extension, val_rng,
            )
            for con in cons
        ]

    optimizer = _make_optimizer(config)
    current_lr = config.learning_rate
    last_decay = -1
    n = train_rows.size
    n_batches = max(1, (n + config.batch_size - 1) // config.batch_size)

    records: list[EpochRecord] = []
    best_val = np.inf
    best_epoch = -1
    best_snapshot = model.params.snapshot()

    for epoch in range(config.max_epochs):
        if constrained and config.warmup_epochs > 0:
            ramp = min(1.0, (epoch + 1) / config.warmup_epochs)
        else:
            ramp = 1.0
        step_weight = config.penalty_weight * ramp
        perm = train_rows[shuffle_rng.permutation(n)]
        epoch_pairs = [
            generate_pseudo_pairs(
                dataset,
                con,
                config.pairs_per_constraint,
                config.delta,
                config.range_extension,
                pairs_rng,
            )
            for con in cons
        ]
        k_total = config.pairs_per_constraint

        nll_sum = 0.0
        nll_count = 0
        step_loss_sum = 0.0
        penalty_sums = {(c.alternative, c.feature): 0.0 for c in cons}

        for b in range(n_batches):
            rows = perm[b * config.batch_size : (b + 1) * config.batch_size]
            if rows.size == 0:
                continue
            with Tape() as tape:
                probs = model.probabilities_t(
                    Tensor(dataset.x_scaled[rows]), dataset.avail[rows]
                )
                nll_t = nll_loss(probs, dataset.chosen[rows])
                penalties: dict[tuple[int, int], Tensor] = {}
                if constrained:
                    lo = (k_total * b) // n_batches
                    hi = (k_total * (b + 1)) // n_batches
                    if hi > lo:
                        for con, pairs in zip(cons, epoch_pairs):
                            sliced = type(pairs)(
                                pairs.constraint, pairs.x1[lo:hi], pairs.x2[lo:hi], pairs.delta
                            )
                            penalties[(con.alternative, con.feature)] = violation_loss(
                                model, sliced, margin=config.constraint_margin
                            )
                loss = ad.scale(
                    total_loss(nll_t, penalties, weights, step_weight),
                    1.0 / rows.size,
                )
                loss_value = loss.item()
                if not np.isfinite(loss_value):
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch}, batch {b}: "
                        f"nll={nll_t.item()!r}, "
                        f"penalties={{{', '.join(f'{k}: {v.item()!r}' for k, v in penalties.items())}}}"
                    )
                model.params.zero_grad()
                ad.backward(tape, loss)
            optimizer.step(model.params)

            nll_sum += nll_t.item()
            nll_count += rows.size
            step_loss_sum += loss_value
            for key, term in penalties.items():
                penalty_sums[key] += term.item()

        val = evaluate_split(model, dataset, "validation")
        val_penalty = 0.0
        if constrained:
            for con, pairs in zip(cons, val_pairs):
                val_penalty += (
                    config.penalty_weight
                    * weights.get((con.alternative, con.feature), 1.0)
                    * violation_loss(model, pairs).item()
                )
            val_penalty /= val.n
        record = EpochRecord(
            epoch=epoch,
            train_nll=nll_sum / nll_count,
            val_nll=val.avg_nll,
            val_penalty=val_penalty,
            total_loss=step_loss_sum / n_batches,
            penalty_total=sum(penalty_sums.values()),
            per_constraint=dict(penalty_sums),
        )
        records.append(record)
        if record.val_objective < best_val:
            best_val = record.val_objective
            best_epoch = epoch
            best_snapshot = model.params.snapshot()
        if epoch % 25 == 0 or epoch == config.max_epochs - 1:
            log.info(
                "epoch %4d  train NLL %.4f  val NLL %.4f  val penalty %.4f",
                epoch, record.train_nll, record.val_nll, record.val_penalty,
            )
        if epoch - max(best_epoch, last_decay) >= config.patience:
            next_lr = current_lr * config.lr_decay
            if next_lr < config.min_learning_rate or config.lr_decay == 1.0:
                log.info("early stop at epoch %d (best %d)", epoch, best_epoch)
                break
            current_lr = next_lr
            optimizer.lr = current_lr
            last_decay = epoch
            log.info("epoch %d: no improvement for %d epochs, lr -> %g",
                     epoch, config.patience, current_lr)

    model.params.restore(best_snapshot)
    return model, TrainHistory(records, best_epoch)
