"""Loss arithmetic, trainer reproducibility, early stopping, and the
synthetic-recovery oracle at reduced size (the acceptance suite runs the
full-size version)."""

import numpy as np
import pytest

from choicekit import autodiff as ad
from choicekit import constraints as cs
from choicekit import data as dataio
from choicekit import models as mdl
from choicekit import training as tr
from choicekit.errors import ConfigError, DomainError


@pytest.fixture(scope="module")
def synth_dataset():
    truth = dataio.SyntheticMnl((0.0, 0.5, -0.3), (-0.02, -0.02, -0.02), (-0.01, -0.01, -0.01))
    return dataio.generate_synthetic_mnl(truth, 4000, seed=31)


def test_nll_loss_hand_values():
    probs = ad.Tensor(np.full((3, 3), 1 / 3))
    loss = tr.nll_loss(probs, np.array([0, 1, 2]))
    assert abs(loss.item() - 3 * np.log(3)) < 1e-12
    assert abs(loss.item() / 3 - 1.0986) < 1e-4

    perfect = np.zeros((4, 3))
    perfect[:, 1] = 1.0
    assert tr.nll_loss(ad.Tensor(perfect), np.ones(4, dtype=int)).item() == 0.0

    half = ad.Tensor(np.array([[0.5, 0.5, 0.0]]))
    assert abs(tr.nll_loss(half, np.array([0])).item() - np.log(2)) < 1e-12


def test_total_loss_arithmetic():
    nll = ad.Tensor(1.0)
    pen = {("c", "m"): ad.Tensor(0.2)}
    out = tr.total_loss(nll, pen, {("c", "m"): 5.0}, penalty_weight=1.0)
    assert abs(out.item() - 2.0) < 1e-15

    assert tr.total_loss(nll, pen, {("c", "m"): 5.0}, penalty_weight=0.0).item() == 1.0
    # satisfied constraints contribute exactly nothing
    zero = {("c", "m"): ad.Tensor(0.0)}
    assert tr.total_loss(nll, zero, {("c", "m"): 5.0}, penalty_weight=3.0).item() == 1.0


def test_evaluate_split_uniform_and_perfect(synth_dataset):
    model = mdl.MnlModel(synth_dataset.schema)  # all-zero: uniform probabilities
    metrics = tr.evaluate_split(model, synth_dataset, "test")
    assert abs(metrics.avg_nll - np.log(3)) < 1e-12

    class Oracle(mdl.MnlModel):
        def probabilities(self, x, avail):
            rows = synth_dataset.split_indices("test")
            out = np.zeros((x.shape[0], 3))
            out[np.arange(x.shape[0]), synth_dataset.chosen[rows][: x.shape[0]]] = 1.0
            return out

        def predict(self, x, avail):
            return self.probabilities(x, avail).argmax(axis=1)

    oracle = Oracle(synth_dataset.schema)
    metrics = tr.evaluate_split(oracle, synth_dataset, "test")
    assert metrics.accuracy == 1.0
    assert metrics.avg_nll == 0.0


def test_evaluate_split_accuracy_fraction(synth_dataset):
    model = mdl.build_model("dnn", synth_dataset.schema, seed=0)
    metrics = tr.evaluate_split(model, synth_dataset, "validation")
    n = synth_dataset.split_indices("validation").size
    assert abs(metrics.accuracy * n - round(metrics.accuracy * n)) < 1e-9


def test_train_config_validation():
    with pytest.raises(ConfigError):
        tr.TrainConfig(max_epochs=0).validate()
    with pytest.raises(ConfigError):
        tr.TrainConfig(learning_rate=-1.0).validate()
    with pytest.raises(ConfigError):
        tr.TrainConfig(optimizer="lbfgs").validate()
    with pytest.raises(ConfigError):
        tr.TrainConfig(penalty_weight=-0.1).validate()
    tr.TrainConfig().validate()


def test_training_is_reproducible(synth_dataset):
    def run():
        model = mdl.build_model("mnl", synth_dataset.schema, seed=3)
        model, history = tr.train(
            model, synth_dataset, None, tr.TrainConfig(max_epochs=8, patience=8, seed=3)
        )
        return model, history

    m1, h1 = run()
    m2, h2 = run()
    for name in m1.params.names():
        assert np.array_equal(m1.params[name].data, m2.params[name].data)
    assert [r.val_nll for r in h1.records] == [r.val_nll for r in h2.records]
    assert h1.best_epoch == h2.best_epoch


def test_lambda_zero_equals_no_constraints_bitwise(synth_dataset):
    cset = cs.build_constraint_set(synth_dataset.schema)

    def run(constraint_set, lam):
        model = mdl.build_model("dnn", synth_dataset.schema, seed=5, arch={"hidden": [16]})
        cfg = tr.TrainConfig(max_epochs=6, patience=6, seed=5, penalty_weight=lam)
        model, history = tr.train(model, synth_dataset, constraint_set, cfg)
        return model, history

    m_zero, h_zero = run(cset, 0.0)
    m_none, h_none = run(None, 1.0)
    for name in m_zero.params.names():
        assert np.array_equal(m_zero.params[name].data, m_none.params[name].data)
    assert [r.total_loss for r in h_zero.records] == [r.total_loss for r in h_none.records]


def test_early_stopping_restores_best_epoch(synth_dataset):
    model = mdl.build_model("mnl", synth_dataset.schema, seed=1)
    model, history = tr.train(
        model, synth_dataset, None,
        tr.TrainConfig(max_epochs=40, patience=5, seed=1, learning_rate=0.05, lr_decay=1.0),
    )
    vals = [r.val_nll for r in history.records]
    assert history.best_epoch == int(np.argmin(vals))
    assert vals[history.best_epoch] == min(vals)
    # stopped within patience of the best epoch (plateau decay disabled)
    assert len(history.records) - 1 - history.best_epoch <= 5

    # the restored parameters reproduce the best recorded validation NLL
    metrics = tr.evaluate_split(model, synth_dataset, "validation")
    assert abs(metrics.avg_nll - min(vals)) < 1e-12


def test_plateau_decay_extends_run_then_stops(synth_dataset):
    model = mdl.build_model("mnl", synth_dataset.schema, seed=1)
    model, history = tr.train(
        model, synth_dataset, None,
        tr.TrainConfig(
            max_epochs=60, patience=4, seed=1, learning_rate=0.05,
            lr_decay=0.1, min_learning_rate=1e-4,
        ),
    )
    tail = len(history.records) - 1 - history.best_epoch
    # one stall window per decade 0.05 -> 0.005 -> 0.0005 -> stop
    assert 4 <= tail <= 3 * 4
    vals = [r.val_nll for r in history.records]
    assert history.best_epoch == int(np.argmin(vals))


def test_full_batch_mnl_descends_monotonically(synth_dataset):
    """Convexity smoke test: plain SGD on the full batch with a small step."""
    rows = synth_dataset.split_indices("train")
    model = mdl.build_model("mnl", synth_dataset.schema, seed=0)
    cfg = tr.TrainConfig(
        max_epochs=30, patience=30, seed=0, optimizer="sgd",
        learning_rate=1e-3, batch_size=rows.size,
    )
    model, history = tr.train(model, synth_dataset, None, cfg)
    losses = [r.train_nll for r in history.records]
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_constrained_total_gradient_matches_finite_differences(synth_dataset):
    model = mdl.build_model("dnn", synth_dataset.schema, seed=7, arch={"hidden": [6]})
    cset = list(cs.build_constraint_set(synth_dataset.schema))
    rng = np.random.Generator(np.random.PCG64(4))
    pairs = [cs.generate_pseudo_pairs(synth_dataset, con, 4, rng=rng) for con in cset]
    rows = synth_dataset.split_indices("train")[:16]

    def fn():
        probs = model.probabilities_t(
            ad.Tensor(synth_dataset.x_scaled[rows]), synth_dataset.avail[rows]
        )
        nll = tr.nll_loss(probs, synth_dataset.chosen[rows])
        penalties = {
            (p.constraint.alternative, p.constraint.feature): cs.violation_loss(model, p)
            for p in pairs
        }
        return ad.scale(tr.total_loss(nll, penalties, {}, 1.0), 1.0 / rows.size)

    report = ad.finite_difference_report(fn, model.params, 1e-5)
    assert report.max_rel_error < 1e-4


def test_mnl_recovery_small():
    """Reduced-size estimation recovery; the acceptance suite runs N=50,000.

    Full-batch plain gradient descent gives a deterministic, precise endpoint
    on the convex likelihood; wide attribute ranges keep the slope sampling
    error well inside the tolerance.
    """
    truth = dataio.SyntheticMnl((0.0, 0.9, -0.7), (-0.02, -0.02, -0.02), (-0.01, -0.01, -0.01))
    ds = dataio.generate_synthetic_mnl(
        truth, 8000, seed=31, time_range=(5.0, 295.0), cost_range=(1.0, 349.0)
    )
    n_train = ds.split_indices("train").size
    model = mdl.build_model("mnl", ds.schema, seed=2)
    cfg = tr.TrainConfig(
        max_epochs=600, patience=600, seed=2, optimizer="sgd",
        learning_rate=1.0, batch_size=n_train,
    )
    model, _ = tr.train(model, ds, None, cfg)
    raw = model.raw_coefficients(ds.scaling_mean, ds.scaling_std)
    for j in range(3):
        t, c = ds.schema.time_index(j), ds.schema.cost_index(j)
        # at N=8000 (4,800 fitted) slope sampling noise allows ~10%
        assert abs(raw["coef"][t, j] - truth.beta_time[j]) / abs(truth.beta_time[j]) < 0.10
        assert abs(raw["coef"][c, j] - truth.beta_cost[j]) / abs(truth.beta_cost[j]) < 0.10
    for j in (1, 2):
        assert abs(raw["asc"][j] - truth.asc[j]) < 0.3


def test_train_empty_validation_errors():
    truth = dataio.SyntheticMnl((0.0, 0.0), (-0.01, -0.01), (-0.01, -0.01))
    ds = dataio.generate_synthetic_mnl(truth, 50, seed=0, ratios=(1.0, 0.0, 0.0))
    model = mdl.build_model("mnl", ds.schema, seed=0)
    with pytest.raises(DomainError):
        tr.train(model, ds, None, tr.TrainConfig(max_epochs=2, patience=2, seed=0))


def test_history_table_format(synth_dataset):
    model = mdl.build_model("mnl", synth_dataset.schema, seed=0)
    cset = cs.build_constraint_set(synth_dataset.schema)
    model, history = tr.train(
        model, synth_dataset, cset,
        tr.TrainConfig(max_epochs=3, patience=3, seed=0, pairs_per_constraint=8),
    )
    table = history.to_table()
    lines = table.strip().split("\n")
    assert lines[0].startswith("epoch\ttrain_nll\tval_nll\tval_penalty\ttotal_loss\tpenalty_total")
    assert len(lines) == 1 + len(history.records)
    assert len(lines[0].split("\t")) == 6 + 18
