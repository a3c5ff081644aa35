"""Command-line orchestration driven by one JSON config file.

Commands: prepare, train, experiment, analyze, audit, synth. Flags only pick
the command, the config path, and optionally the output directory and model
file; everything else lives in the config so runs are reproducible. All
outputs are deterministic given identical config and inputs.

Exit status: 0 success, 1 runtime failure, 2 configuration/usage error.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys

import numpy as np

from . import constraints as ck
from . import data as dataio
from . import evaluation as ev
from . import models as mdl
from . import training as tr
from .errors import ChoicekitError, ConfigError, IngestionError, UsageError

log = logging.getLogger("choicekit")

DEFAULT_CONFIG = {
    "data": {
        "input": "",
        "delimiter": None,
        "dataset": None,  # defaults to <output.dir>/dataset.json
        "ratios": [0.60, 0.20, 0.20],
        "seed": 0,
        "filters": {
            "rules": ["known-choice", "all-available", "known-features", "outliers"],
            "outlier_percentile": 99.9,
        },
    },
    "model": {
        "id": None,  # defaults to the kind, plus "c_" when constrained
        "kind": "dnn",
        "hidden": [64, 64],
        "alt_hidden": [32, 32],
        "socio_hidden": [16],
        "mnl_socio": False,
    },
    "constraints": {
        "enabled": False,
        "penalty_weight": 200.0,
        "weight": 1.0,
        "pairs_per_constraint": 512,
        "delta": None,
        "range_extension": 0.5,
        "margin": 0.01,
        "warmup_epochs": 30,
        "overrides": [],
    },
    "training": {
        "max_epochs": 500,
        "batch_size": 128,
        "learning_rate": 1e-3,
        "optimizer": "adam",
        "patience": 20,
        "lr_decay": 0.1,
        "min_learning_rate": 1e-5,
        "seed": 0,
    },
    "evaluation": {
        "split": "train",
        "sweep_min": -50.0,
        "sweep_max": 50.0,
        "sweep_step": 5.0,
        "vot_step_frac": 1e-3,
        "hist_window": [0.005, 0.995],
        "hist_bins": 40,
        "audit_pairs": 1024,
        "audit_seed": 104729,
    },
    "experiment": {
        "runs": [
            {"id": "dnn", "kind": "dnn", "constrained": False},
            {"id": "c_dnn", "kind": "dnn", "constrained": True},
            {"id": "asu_dnn", "kind": "asu_dnn", "constrained": False},
            {"id": "c_asu_dnn", "kind": "asu_dnn", "constrained": True},
            {"id": "mnl", "kind": "mnl", "constrained": False},
        ]
    },
    "synth": {
        "mode": "survey",
        "path": "survey.dat",
        "n_respondents": 1192,
        "menus_per_respondent": 9,
        "n": 50000,
        "seed": 7,
        "asc": [0.0, 0.5, -0.3],
        "beta_time": [-0.02, -0.02, -0.02],
        "beta_cost": [-0.01, -0.01, -0.01],
        "time_range": [10.0, 120.0],
        "cost_range": [5.0, 100.0],
    },
    "output": {"dir": "out"},
}

_LIST_OF_DICTS = {"experiment.runs", "constraints.overrides"}


def _check_keys(user, defaults, path=""):
    """Reject unknown keys anywhere in the config (typo safety)."""
    if not isinstance(user, dict):
        raise ConfigError(f"config section {path or '<root>'} must be an object")
    for key, value in user.items():
        here = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key {here!r}")
        if isinstance(defaults[key], dict):
            _check_keys(value, defaults[key], here)
        elif here in _LIST_OF_DICTS and isinstance(value, list):
            allowed = (
                {"id", "kind", "constrained"}
                if here == "experiment.runs"
                else {"alternative", "feature", "weight", "direction"}
            )
            for i, entry in enumerate(value):
                if not isinstance(entry, dict):
                    raise ConfigError(f"{here}[{i}] must be an object")
                for k in entry:
                    if k not in allowed:
                        raise ConfigError(f"unknown config key {here}[{i}].{k}")


def _merge(user, defaults):
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(value, out[key])
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path: str) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    _check_keys(user, DEFAULT_CONFIG)
    return _merge(user, DEFAULT_CONFIG)


def _out_dir(cfg: dict) -> str:
    d = cfg["output"]["dir"]
    os.makedirs(d, exist_ok=True)
    return d


def _dataset_path(cfg: dict) -> str:
    return cfg["data"]["dataset"] or os.path.join(cfg["output"]["dir"], "dataset.json")


def _write(path: str, content: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(content)


def _load_dataset(cfg: dict) -> dataio.Dataset:
    path = _dataset_path(cfg)
    if not os.path.exists(path):
        raise ConfigError(f"dataset file not found: {path}; run `prepare` first")
    return dataio.Dataset.load(path)


def _train_config(cfg: dict) -> tr.TrainConfig:
    t, c = cfg["training"], cfg["constraints"]
    return tr.TrainConfig(
        max_epochs=t["max_epochs"],
        batch_size=t["batch_size"],
        learning_rate=t["learning_rate"],
        optimizer=t["optimizer"],
        penalty_weight=c["penalty_weight"] if c["enabled"] else 0.0,
        pairs_per_constraint=c["pairs_per_constraint"],
        delta=c["delta"],
        range_extension=c["range_extension"],
        constraint_margin=c["margin"],
        warmup_epochs=c["warmup_epochs"],
        patience=t["patience"],
        lr_decay=t["lr_decay"],
        min_learning_rate=t["min_learning_rate"],
        seed=t["seed"],
    )


def _constraint_set(cfg: dict, schema: dataio.FeatureSchema) -> ck.ConstraintSet | None:
    c = cfg["constraints"]
    if not c["enabled"]:
        return None
    cset = ck.build_constraint_set(schema, weight=c["weight"])
    if c["overrides"]:
        alt_names = {name: j for j, name in enumerate(schema.alternatives)}
        overrides = {}
        for entry in c["overrides"]:
            try:
                alt = alt_names[entry["alternative"]]
                feat = schema.index_of(entry["feature"])
            except KeyError as exc:
                raise ConfigError(f"constraint override names unknown {exc}") from None
            overrides[(alt, feat)] = float(entry["weight"])
        cset = cset.reweighted(overrides)
    return cset


def _model_arch(cfg: dict) -> dict:
    m = cfg["model"]
    return {
        "hidden": m["hidden"],
        "alt_hidden": m["alt_hidden"],
        "socio_hidden": m["socio_hidden"],
        "socio": m["mnl_socio"],
    }


# ---------------------------------------------------------------------------
# Commands


def cmd_prepare(cfg: dict) -> None:
    src = cfg["data"]["input"]
    if not src:
        raise ConfigError("data.input is not set")
    rules = _filter_rules(cfg)
    dataset, rules = dataio.prepare_survey_dataset(
        src,
        rules=rules,
        ratios=tuple(cfg["data"]["ratios"]),
        seed=cfg["data"]["seed"],
        delimiter=cfg["data"]["delimiter"],
    )
    out = _out_dir(cfg)
    dataset.save(_dataset_path(cfg))
    lines = ["rule\tdescription\tdropped"]
    for r in rules:
        lines.append(f"{r.name}\t{r.description}\t{r.dropped}")
    lines.append(f"remaining\t\t{dataset.n}")
    _write(os.path.join(out, "filter_log.tsv"), "\n".join(lines) + "\n")
    for name in dataio.SPLIT_NAMES:
        log.info("%s split: %d observations", name, dataset.split_indices(name).size)
    print(f"prepared {dataset.n} observations -> {_dataset_path(cfg)}")


def _filter_rules(cfg: dict) -> list[dataio.FilterRule]:
    f = cfg["data"]["filters"]
    by_name = {r.name: r for r in dataio.default_filter_rules(f["outlier_percentile"])}
    rules = []
    for name in f["rules"]:
        if name not in by_name:
            raise ConfigError(f"unknown filter rule {name!r}")
        rules.append(by_name[name])
    return rules


def _run_one_training(cfg: dict, dataset: dataio.Dataset, kind: str, constrained: bool, run_id: str):
    model = mdl.build_model(kind, dataset.schema, cfg["training"]["seed"], _model_arch(cfg))
    run_cfg = copy.deepcopy(cfg)
    run_cfg["constraints"]["enabled"] = constrained
    cset = _constraint_set(run_cfg, dataset.schema)
    tconf = _train_config(run_cfg)
    model, history = tr.train(model, dataset, cset, tconf)
    out = _out_dir(cfg)
    mdl.save_model(model, os.path.join(out, f"{run_id}.model.json"), dataset)
    _write(os.path.join(out, f"{run_id}.history.tsv"), history.to_table())
    audits = ck.audit_constraints(
        model,
        dataset,
        ck.build_constraint_set(dataset.schema),
        pairs_per_constraint=cfg["evaluation"]["audit_pairs"],
        range_extension=cfg["constraints"]["range_extension"],
        seed=cfg["evaluation"]["audit_seed"],
    )
    _write(os.path.join(out, f"{run_id}.audit.tsv"), _audit_table(audits))
    return model, history, audits


def _audit_table(audits: list[ck.ConstraintAudit]) -> str:
    lines = ["alternative\tfeature\tdirection\tweight\tpairs\tviolation_fraction\tmax_violation"]
    for a in audits:
        con = a.constraint
        lines.append(
            f"{con.alternative}\t{a.feature_name}\t{con.direction:+d}\t{con.weight!r}"
            f"\t{a.n_pairs}\t{a.violation_fraction!r}\t{a.max_violation!r}"
        )
    return "\n".join(lines) + "\n"


def cmd_train(cfg: dict) -> None:
    dataset = _load_dataset(cfg)
    constrained = cfg["constraints"]["enabled"]
    kind = cfg["model"]["kind"]
    run_id = cfg["model"]["id"] or (f"c_{kind}" if constrained else kind)
    model, history, audits = _run_one_training(cfg, dataset, kind, constrained, run_id)
    for split in dataio.SPLIT_NAMES:
        m = tr.evaluate_split(model, dataset, split)
        log.info("%s: avg NLL %.4f, accuracy %.1f%%", split, m.avg_nll, 100 * m.accuracy)
    print(f"trained {run_id} (best epoch {history.best_epoch}) -> {_out_dir(cfg)}")


def cmd_experiment(cfg: dict) -> None:
    dataset = _load_dataset(cfg)
    runs = cfg["experiment"]["runs"]
    ids = [r["id"] for r in runs]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"duplicate run ids in experiment manifest: {ids}")
    out = _out_dir(cfg)

    results: dict[str, dict] = {}
    for run in runs:
        run_id = run["id"]
        try:
            model, history, audits = _run_one_training(
                cfg, dataset, run["kind"], bool(run["constrained"]), run_id
            )
        except ChoicekitError as exc:
            log.error("run %s failed: %s", run_id, exc)
            results[run_id] = {"kind": run["kind"], "constrained": run["constrained"],
                               "failed": str(exc)}
            continue
        entry = {
            "kind": run["kind"],
            "constrained": bool(run["constrained"]),
            "best_epoch": history.best_epoch,
            "metrics": {},
            "market_shares": {},
            "audit_max_violation_fraction": max(a.violation_fraction for a in audits),
        }
        for split in dataio.SPLIT_NAMES:
            m = tr.evaluate_split(model, dataset, split)
            shares = ev.market_shares(model, dataset, split)
            entry["metrics"][split] = {"avg_nll": m.avg_nll, "accuracy": m.accuracy, "n": m.n}
            entry["market_shares"][split] = {
                "predicted": shares.predicted.tolist(),
                "observed": shares.observed.tolist(),
                "rmse_pct": shares.rmse_pct,
            }
        results[run_id] = entry

    _write(os.path.join(out, "nll_accuracy.tsv"), _metrics_table(results))
    for split in dataio.SPLIT_NAMES:
        _write(
            os.path.join(out, f"market_shares_{split}.tsv"),
            _shares_table(results, dataset, split),
        )
    _write(
        os.path.join(out, "summary.json"),
        json.dumps({"runs": results}, sort_keys=True, indent=1) + "\n",
    )
    print(f"experiment complete: {len(runs)} runs -> {out}")


def _metrics_table(results: dict) -> str:
    header = ["model"]
    for split in dataio.SPLIT_NAMES:
        header += [f"{split}_avg_nll", f"{split}_acc_pct"]
    lines = ["\t".join(header)]
    for run_id, entry in results.items():
        if "failed" in entry:
            lines.append(f"{run_id}\tFAILED: {entry['failed']}")
            continue
        row = [run_id]
        for split in dataio.SPLIT_NAMES:
            m = entry["metrics"][split]
            row += [f"{m['avg_nll']:.2f}", f"{100 * m['accuracy']:.1f}"]
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


def _shares_table(results: dict, dataset: dataio.Dataset, split: str) -> str:
    names = dataset.schema.alternatives
    ok = [rid for rid, e in results.items() if "failed" not in e]
    lines = ["\t".join(["alternative", *ok, "observed"])]
    for j, name in enumerate(names):
        row = [name]
        for rid in ok:
            row.append(f"{100 * results[rid]['market_shares'][split]['predicted'][j]:.1f}")
        row.append(f"{100 * results[ok[0]]['market_shares'][split]['observed'][j]:.1f}" if ok else "")
        lines.append("\t".join(row))
    rmse_row = ["RMSE"]
    for rid in ok:
        rmse_row.append(f"{results[rid]['market_shares'][split]['rmse_pct']:.1f}")
    rmse_row.append("")
    lines.append("\t".join(rmse_row))
    return "\n".join(lines) + "\n"


def cmd_analyze(cfg: dict, model_path: str) -> None:
    dataset = _load_dataset(cfg)
    model, fingerprint = mdl.load_model(model_path)
    if fingerprint != dataset.fingerprint():
        raise ConfigError(
            "model/dataset fingerprint mismatch: model has "
            f"{fingerprint}, dataset has {dataset.fingerprint()}"
        )
    out = _out_dir(cfg)
    run_id = os.path.basename(model_path).split(".")[0]
    e = cfg["evaluation"]
    split = e["split"]
    grid = np.arange(e["sweep_min"], e["sweep_max"] + e["sweep_step"] / 2, e["sweep_step"])
    schema = dataset.schema

    summary: dict = {"model": run_id, "split": split, "sweeps": {}, "vot": {}}
    for (alt, kind), feature in sorted(schema.constrained.items()):
        curve = ev.probability_sweep(model, dataset, split, feature, grid)
        name = curve.feature_name
        _write(os.path.join(out, f"{run_id}.sweep.{name}.tsv"), _sweep_table(curve, schema))
        report = ev.curve_monotonicity_report(curve, ev.expected_sweep_directions(dataset, feature))
        summary["sweeps"][name] = {
            "violations": report.total,
            "worst": {str(j): w for j, w in report.worst.items()},
        }
    mono_lines = ["feature\tviolations\tworst_by_alternative"]
    for name, s in summary["sweeps"].items():
        mono_lines.append(f"{name}\t{s['violations']}\t{json.dumps(s['worst'], sort_keys=True)}")
    _write(os.path.join(out, f"{run_id}.monotonicity.tsv"), "\n".join(mono_lines) + "\n")

    vot_lines = ["alternative\tn\tdegenerate\tmean\tmedian\tpct_negative\twindowed_mean"]
    for j, name in enumerate(schema.alternatives):
        records = ev.vot_per_observation(model, dataset, split, j, e["vot_step_frac"])
        stats = ev.vot_stats(records, tuple(e["hist_window"]), e["hist_bins"])
        rec_lines = ["observation\tvot\td_time\td_cost\tdegenerate"]
        for r in records:
            rec_lines.append(f"{r.observation}\t{r.vot!r}\t{r.d_time!r}\t{r.d_cost!r}\t{int(r.degenerate)}")
        _write(os.path.join(out, f"{run_id}.vot_records.{name}.tsv"), "\n".join(rec_lines) + "\n")
        hist_lines = ["bin_lo\tbin_hi\tcount"]
        for lo, hi, c in zip(stats.hist_edges[:-1], stats.hist_edges[1:], stats.hist_counts):
            hist_lines.append(f"{lo!r}\t{hi!r}\t{int(c)}")
        _write(os.path.join(out, f"{run_id}.vot_hist.{name}.tsv"), "\n".join(hist_lines) + "\n")
        vot_lines.append(
            f"{name}\t{stats.n}\t{stats.degenerate}\t{stats.mean:.1f}\t{stats.median:.1f}"
            f"\t{stats.pct_negative:.1f}\t{stats.windowed_mean:.1f}"
        )
        summary["vot"][name] = {
            "mean": stats.mean,
            "median": stats.median,
            "pct_negative": stats.pct_negative,
            "degenerate": stats.degenerate,
        }
        if isinstance(model, mdl.MnlModel):
            ratio = mdl.extract_mnl_vot(model, j, dataset.scaling_mean, dataset.scaling_std)
            summary["vot"][name]["coefficient_ratio"] = ratio
    _write(os.path.join(out, f"{run_id}.vot_stats.tsv"), "\n".join(vot_lines) + "\n")

    audits = ck.audit_constraints(
        model,
        dataset,
        ck.build_constraint_set(schema),
        pairs_per_constraint=e["audit_pairs"],
        range_extension=cfg["constraints"]["range_extension"],
        seed=e["audit_seed"],
    )
    _write(os.path.join(out, f"{run_id}.audit.tsv"), _audit_table(audits))
    summary["audit_max_violation_fraction"] = max(a.violation_fraction for a in audits)
    _write(
        os.path.join(out, f"{run_id}.analysis.json"),
        json.dumps(summary, sort_keys=True, indent=1) + "\n",
    )
    print(f"analysis of {run_id} -> {out}")


def _sweep_table(curve: ev.SweepCurve, schema: dataio.FeatureSchema) -> str:
    header = ["pct_change"] + [f"P_{name}" for name in schema.alternatives]
    lines = ["\t".join(header)]
    for g, q in enumerate(curve.grid_pct):
        row = [repr(float(q))] + [repr(float(p)) for p in curve.mean_probs[g]]
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


def cmd_audit(cfg: dict, model_path: str) -> None:
    dataset = _load_dataset(cfg)
    model, fingerprint = mdl.load_model(model_path)
    if fingerprint != dataset.fingerprint():
        raise ConfigError(
            "model/dataset fingerprint mismatch: model has "
            f"{fingerprint}, dataset has {dataset.fingerprint()}"
        )
    e = cfg["evaluation"]
    audits = ck.audit_constraints(
        model,
        dataset,
        ck.build_constraint_set(dataset.schema),
        pairs_per_constraint=e["audit_pairs"],
        range_extension=cfg["constraints"]["range_extension"],
        seed=e["audit_seed"],
    )
    run_id = os.path.basename(model_path).split(".")[0]
    path = os.path.join(_out_dir(cfg), f"{run_id}.audit.tsv")
    _write(path, _audit_table(audits))
    worst = max(a.violation_fraction for a in audits)
    print(f"audit of {run_id}: worst violation fraction {worst:.4f} -> {path}")


def cmd_synth(cfg: dict) -> None:
    s = cfg["synth"]
    out = _out_dir(cfg)
    if s["mode"] == "survey":
        path = s["path"] if os.path.isabs(s["path"]) else os.path.join(out, s["path"])
        n = dataio.generate_survey_file(
            path, s["n_respondents"], s["menus_per_respondent"], s["seed"]
        )
        print(f"wrote {n} survey rows -> {path}")
        return
    if s["mode"] == "mnl_oracle":
        truth = dataio.SyntheticMnl(
            tuple(s["asc"]), tuple(s["beta_time"]), tuple(s["beta_cost"])
        )
        dataset = dataio.generate_synthetic_mnl(
            truth, s["n"], s["seed"],
            time_range=tuple(s["time_range"]), cost_range=tuple(s["cost_range"]),
            ratios=tuple(cfg["data"]["ratios"]),
        )
        path = _dataset_path(cfg)
        dataset.save(path)
        _write(
            os.path.join(out, "truth.json"),
            json.dumps(
                {"asc": s["asc"], "beta_time": s["beta_time"], "beta_cost": s["beta_cost"]},
                sort_keys=True,
            ) + "\n",
        )
        print(f"wrote synthetic dataset ({dataset.n} observations) -> {path}")
        return
    raise ConfigError(f"unknown synth mode {s['mode']!r}")


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="choicekit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("prepare", "train", "experiment", "analyze", "audit", "synth"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the JSON run config")
        p.add_argument("--out", default=None, help="override the output directory")
        if name in ("analyze", "audit"):
            p.add_argument("--model", required=True, help="path to a saved model file")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.out:
            cfg["output"]["dir"] = args.out
        if args.command == "prepare":
            cmd_prepare(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "experiment":
            cmd_experiment(cfg)
        elif args.command == "analyze":
            cmd_analyze(cfg, args.model)
        elif args.command == "audit":
            cmd_audit(cfg, args.model)
        elif args.command == "synth":
            cmd_synth(cfg)
        return 0
    except (ConfigError, IngestionError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ChoicekitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
