"""Command-line front end: ``nice {synth,ingest,factorize,train,evaluate,analyze}``.

Every parameter can come from a JSON file given with ``--config``; flags given
on the command line override file values. Each command writes its outputs
into ``--output-dir`` together with ``config.json``, the effective
parameters and tool version. Outputs are staged in a temporary directory and
only moved into place once the command has succeeded.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import fields

import numpy as np

from . import __version__
from .analysis import (CHAMPION_TYPES, UNLABELED, build_profiles, champion_type_activation,
                       classify_generalists_specialists, component_labels, engagement_summary,
                       entropy_histogram, label_counts, performance_by_group, pick_rates,
                       temporal_pick_correlation)
from .data import TARGETS, SplitSpec, ingest, split, target_range
from .decoder import DecoderConfig, DecoderModel, task_for, train
from .factorization import (FitOptions, factorize, heldout_fit_score, holdout_slices, load_factors,
                            save_factors, select_rank)
from .pipeline import prepare, score, training_tensor
from .synth import GeneratorConfig, generate, write_corpus
from .tensor import build_tensor, density

logger = logging.getLogger("nice")


class CommandError(RuntimeError):
    pass


_SPLIT = {"test_fraction": 0.2, "seed": 0, "min_matches": 15}

DEFAULTS = {
    "synth": {**{f.name: f.default for f in fields(GeneratorConfig) if f.name != "performance_archetypes"},
              "output_dir": None},
    "ingest": {"input": None, "output_dir": None, "min_matches": 15},
    "factorize": {**_SPLIT, "input": None, "output_dir": None, "rank": 6, "rank_sweep": None,
                  "restarts": 3, "max_iterations": 500, "tolerance": 1e-8,
                  "optimizer": "quasi-newton-bounded", "sweep_evaluator": "reconstruction",
                  "holdout_fraction": 0.1, "rank_tolerance": 0.005, "target": "win",
                  "max_epochs": 200},
    "train": {**_SPLIT, "input": None, "output_dir": None, "factors": None, "target": "win",
              "baseline": False, "dropout": 0.1, "exclude_performance": False, "max_epochs": 200,
              "patience": 10, "l2_beta": 1e-7, "learning_rate": 1e-3, "batch_size": 2048},
    "evaluate": {**_SPLIT, "input": None, "output_dir": None, "factors": None, "model": None,
                 "baseline": False, "target": None},
    "analyze": {"input": None, "output_dir": None, "factors": None, "label_threshold": 0.4,
                "activation_mode": "cumulative", "coverage": 0.95, "min_matches": 15},
}


# ---------------------------------------------------------------------------
# small helpers


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise CommandError(f"missing file {path}") from None


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def parse_rank_sweep(text) -> list[int]:
    """``"1..10"``, ``"2,4,6"`` or a list of ints."""
    if isinstance(text, (list, tuple)):
        ranks = [int(r) for r in text]
    elif ".." in str(text):
        lo, hi = (int(p) for p in str(text).split(".."))
        ranks = list(range(lo, hi + 1))
    else:
        ranks = [int(p) for p in str(text).split(",") if p.strip()]
    if not ranks or min(ranks) < 1:
        raise CommandError(f"bad rank sweep {text!r}")
    return ranks


def _require(params, *names) -> None:
    missing = [n for n in names if params.get(n) in (None, "")]
    if missing:
        raise CommandError("missing required parameter(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _load_dataset(path):
    if not os.path.exists(path):
        raise CommandError(f"input file {path} does not exist")
    return ingest(path)


def _load_factor_dir(path):
    if not os.path.isdir(path):
        raise CommandError(f"factor directory {path} does not exist")
    return load_factors(path)


def _split_from(params, meta) -> SplitSpec:
    """Split parameters of a factor run; explicit conflicting values are an error."""
    recorded = meta.get("split", {})
    for key in ("test_fraction", "seed", "min_matches"):
        if key in recorded and key in params.get("_explicit", ()) and params[key] != recorded[key]:
            raise CommandError(f"--{key.replace('_', '-')}={params[key]} conflicts with the factor run's {recorded[key]}")
        if key in recorded:
            params[key] = recorded[key]
    return SplitSpec(params["test_fraction"], params["seed"])


# ---------------------------------------------------------------------------
# commands


def cmd_synth(p, out) -> dict:
    _require(p, "output_dir")
    cfg = GeneratorConfig(**{k: (tuple(v) if isinstance(v, list) else v)
                             for k, v in p.items() if k in {f.name for f in fields(GeneratorConfig)}})
    records, _, truth = generate(cfg)
    write_corpus(records, truth, os.path.join(out, "matches.csv"), os.path.join(out, "ground_truth.json"), cfg)
    return {"n_records": len(records), "n_users": cfg.n_users}


def cmd_ingest(p, out) -> dict:
    _require(p, "input", "output_dir")
    ds = _load_dataset(p["input"])
    prep = prepare(ds, SplitSpec(), min_matches=p["min_matches"])
    kept = [inst.record for inst in prep.instances]
    tensor = build_tensor(kept, {u: n for n, u in enumerate(prep.user_ids)}, ds.n_versions, ds.n_champions)
    summary = {
        "n_records": len(ds), "n_users": len(ds.user_ids()), "n_versions": ds.n_versions,
        "n_champions": ds.n_champions, "n_users_kept": len(prep.user_ids),
        "n_records_kept": len(kept), "n_observed_slices": tensor.n_slices,
        "tensor_density": density(tensor),
        "win_rate": float(np.mean([r.win for r in kept])),
        "end_of_session_rate": float(np.mean([inst.end_of_session for inst in prep.instances])),
        "categories": {k: list(v) for k, v in ds.categories.items()},
    }
    tensor.save(os.path.join(out, "tensor.txt"))
    _write_json(os.path.join(out, "summary.json"), summary)
    return summary


def _fit_options(p, rank) -> FitOptions:
    return FitOptions(rank=rank, max_iterations=p["max_iterations"], tolerance=p["tolerance"],
                      restarts=p["restarts"], seed=p["seed"], optimizer=p["optimizer"])


def _decoder_evaluator(prep, p):
    """Validation score of a decoder trained on an inner user-stratified split of the training set."""
    inner_train, inner_val = split(prep.train, SplitSpec(0.1, p["seed"]))
    index = {u: n for n, u in enumerate(prep.user_ids)}
    tensor = build_tensor([inst.record for inst in inner_train], index, prep.n_versions, prep.n_champions)
    target = p["target"]
    config = DecoderConfig(seed=p["seed"], max_epochs=p["max_epochs"])
    value_range = None if task_for(target) == "binary" else target_range(prep.instances, target)

    def evaluate(factors):
        model = train(inner_train, factors, target, config)
        result = score(model, inner_val, factors, value_range)
        return result["auc"] if "auc" in result else result["rmse"]

    return tensor, evaluate, task_for(target) == "binary"


def cmd_factorize(p, out) -> dict:
    _require(p, "input", "output_dir")
    ds = _load_dataset(p["input"])
    prep = prepare(ds, SplitSpec(p["test_fraction"], p["seed"]), min_matches=p["min_matches"])
    full = training_tensor(prep)
    report = {"n_users": len(prep.user_ids), "n_observed_slices": full.n_slices,
              "tensor_density": density(full)}
    rank = int(p["rank"])
    if p.get("rank_sweep"):
        ranks = parse_rank_sweep(p["rank_sweep"])
        if p["sweep_evaluator"] == "reconstruction":
            fit_part, held = holdout_slices(full, p["holdout_fraction"], p["seed"])
            evaluator, greater = heldout_fit_score(held), True
        elif p["sweep_evaluator"] == "decoder":
            fit_part, evaluator, greater = _decoder_evaluator(prep, p)
        else:
            raise CommandError(f"unknown sweep evaluator {p['sweep_evaluator']!r}")
        sel = select_rank(fit_part, ranks, evaluator, _fit_options(p, ranks[0]),
                          tolerance=p["rank_tolerance"], greater_is_better=greater, user_ids=prep.user_ids)
        rank = sel.rank
        _write_csv(os.path.join(out, "rank_sweep.csv"), ["rank", "score", "chosen"],
                   [(r, s, r == rank) for r, s in sorted(sel.scores.items())])
        report["rank_sweep"] = {"evaluator": p["sweep_evaluator"], "scores": {str(r): s for r, s in sel.scores.items()},
                                "chosen_rank": rank}
    factors = factorize(full, _fit_options(p, rank), prep.user_ids)
    meta = save_factors(factors, out, {"split": {"test_fraction": p["test_fraction"], "seed": p["seed"],
                                                 "min_matches": p["min_matches"]}})
    report.update(rank=rank, run_id=meta["run_id"], final_loss=factors.fit.loss,
                  iterations=factors.fit.iterations, converged=factors.fit.converged,
                  restart=factors.fit.restart)
    _write_json(os.path.join(out, "fit_report.json"), report)
    return report


def _decoder_config(p, baseline: bool) -> DecoderConfig:
    return DecoderConfig(dropout=p["dropout"], seed=p["seed"], baseline=baseline,
                         exclude_performance=p["exclude_performance"], max_epochs=p["max_epochs"],
                         patience=p["patience"], l2_beta=p["l2_beta"], learning_rate=p["learning_rate"],
                         batch_size=p["batch_size"])


def cmd_train(p, out) -> dict:
    _require(p, "input", "output_dir", "factors")
    if p["target"] not in TARGETS:
        raise CommandError(f"unknown target {p['target']!r}")
    factors, meta = _load_factor_dir(p["factors"])
    spec = _split_from(p, meta)
    prep = prepare(_load_dataset(p["input"]), spec, min_matches=p["min_matches"])
    if list(factors.user_ids) != prep.user_ids:
        raise CommandError("factor users do not match the users of this dataset")
    result = {}
    runs = [("model.json", False)] + ([("model_baseline.json", True)] if p["baseline"] else [])
    for name, baseline in runs:
        model = train(prep.train, factors, p["target"], _decoder_config(p, baseline))
        model.save(os.path.join(out, name))
        log = os.path.join(out, name.replace("model", "training_log").replace(".json", ".csv"))
        _write_csv(log, ["epoch", "train_loss", "val_loss"],
                   [(h["epoch"], h["train_loss"], h["val_loss"]) for h in model.history])
        result[name] = {"epochs": len(model.history), "factor_run_id": model.factor_run_id}
    _write_json(os.path.join(out, "train_report.json"), {"target": p["target"], "models": result})
    return result


def cmd_evaluate(p, out) -> dict:
    _require(p, "input", "output_dir", "factors", "model")
    factors, meta = _load_factor_dir(p["factors"])
    model_dir = p["model"] if os.path.isdir(p["model"]) else os.path.dirname(p["model"])
    main_path = p["model"] if not os.path.isdir(p["model"]) else os.path.join(model_dir, "model.json")
    paths = [("NICE", main_path)]
    if p["baseline"]:
        paths.append(("DNN", os.path.join(model_dir, "model_baseline.json")))
    models = []
    for method, path in paths:
        if not os.path.exists(path):
            raise CommandError(f"missing model file {path}")
        models.append((method, DecoderModel.load(path)))
    main = models[0][1]
    if main.factor_run_id != factors.run_id():
        raise CommandError(f"model was trained against factors {main.factor_run_id}, "
                           f"but {p['factors']} holds {factors.run_id()}")
    if p.get("target") and p["target"] != main.target:
        raise CommandError(f"model predicts {main.target!r}, not {p['target']!r}")
    spec = _split_from(p, meta)
    prep = prepare(_load_dataset(p["input"]), spec, min_matches=p["min_matches"])
    value_range = None if main.task == "binary" else target_range(prep.instances, main.target)
    rows = []
    for method, model in models:
        if model.target != main.target:
            raise CommandError("NICE and baseline models predict different targets")
        rows.append({"method": method, **score(model, prep.test, factors, value_range)})
    report = {"target": main.target, "task": main.task, "factor_run_id": factors.run_id(),
              "rank": factors.rank, "rows": rows}
    if value_range is not None:
        report["target_range"] = list(value_range)
    _write_json(os.path.join(out, "eval_report.json"), report)
    return report


def cmd_analyze(p, out) -> dict:
    _require(p, "input", "output_dir", "factors")
    factors, _ = _load_factor_dir(p["factors"])
    ds = _load_dataset(p["input"])
    prep = prepare(ds, SplitSpec(), min_matches=p["min_matches"])
    records = [inst.record for inst in prep.instances]
    if list(factors.user_ids) != prep.user_ids:
        raise CommandError("factor users do not match the users of this dataset")

    user_labels = component_labels(factors.U, p["label_threshold"])
    labels = {u: int(l) for u, l in zip(factors.user_ids, user_labels)}
    profiles = classify_generalists_specialists(build_profiles(records, labels))
    _write_csv(os.path.join(out, "user_profiles.csv"),
               ["user_id", "entropy", "class", "component_label", "days_online", *CHAMPION_TYPES],
               [(pr.user_id, pr.entropy, pr.cls, UNLABELED if pr.component_label is None else pr.component_label,
                 pr.days_online, *pr.champion_type_distribution) for pr in profiles])
    edges, counts = entropy_histogram([pr.entropy for pr in profiles])
    _write_csv(os.path.join(out, "entropy_histogram.csv"), ["bin_lo", "bin_hi", "count"],
               zip(edges[:-1], edges[1:], counts))

    champ_types = ds.champion_type_map()
    types = [champ_types.get(k, "Unique") for k in range(len(factors.F))]
    champ_labels = component_labels(factors.F, p["label_threshold"])
    ucount, ccount = label_counts(user_labels, factors.rank), label_counts(champ_labels, factors.rank)
    _write_csv(os.path.join(out, "label_counts.csv"), ["component", "users", "champions"],
               [(k, ucount[k], ccount[k]) for k in ucount])

    table = champion_type_activation(factors.F, types, p["coverage"], p["activation_mode"])
    _write_csv(os.path.join(out, "activation.csv"), ["champion_type", *[f"c{r}" for r in range(factors.rank)]],
               [(name, *row) for name, row in zip(table.rows, table.values.tolist())])

    rates = pick_rates(records, len(factors.F), len(factors.T))
    _write_csv(os.path.join(out, "pick_rates.csv"), ["champion_id", *[f"v{j}" for j in range(rates.shape[1])]],
               [(k, *row) for k, row in enumerate(rates.tolist())])
    _write_csv(os.path.join(out, "temporal_activation.csv"), ["version", *[f"c{r}" for r in range(factors.rank)]],
               [(j, *row) for j, row in enumerate(factors.T.tolist())])
    corr = temporal_pick_correlation(factors.T, factors.F, records, p["label_threshold"])
    _write_csv(os.path.join(out, "temporal_correlation.csv"), ["component", "pearson_r"], sorted(corr.items()))

    eng = engagement_summary(records, labels, len(factors.T))
    _write_csv(os.path.join(out, "engagement.csv"), ["component", *[f"v{j}" for j in range(len(factors.T))]],
               [(g, *s.tolist()) for g, s in eng.matches_per_user.items()])
    perf = performance_by_group(records, lambda r: r.champion_type, len(factors.T))
    rows = []
    for ctype in sorted(perf):
        for j, vals in enumerate(perf[ctype].tolist()):
            rows.append((ctype, j, *vals))
    _write_csv(os.path.join(out, "performance_by_type.csv"),
               ["champion_type", "version", "kills", "deaths", "assists", "kda"], rows)

    summary = {
        "n_users": len(profiles), "rank": factors.rank,
        "generalists": sum(pr.cls == "generalist" for pr in profiles),
        "specialists": sum(pr.cls == "specialist" for pr in profiles),
        "user_label_counts": ucount, "champion_label_counts": ccount,
        "mean_days_online": {str(g): v for g, v in eng.mean_days_online.items()},
        "temporal_correlation": {str(r): v for r, v in corr.items()},
    }
    _write_json(os.path.join(out, "analysis_summary.json"), summary)
    return summary


COMMANDS = {"synth": cmd_synth, "ingest": cmd_ingest, "factorize": cmd_factorize,
            "train": cmd_train, "evaluate": cmd_evaluate, "analyze": cmd_analyze}


# ---------------------------------------------------------------------------
# argument handling


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nice", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    def common(sp, inp=True):
        sp.add_argument("--config", default=S, help="JSON file of parameters; flags override it")
        sp.add_argument("--output-dir", default=S)
        if inp:
            sp.add_argument("--input", default=S, help="match CSV")
        sp.add_argument("--seed", type=int, default=S)

    sp = sub.add_parser("synth", help="generate a synthetic corpus")
    common(sp, inp=False)
    for name in ("n_users", "n_versions", "n_champions", "rank"):
        sp.add_argument("--" + name.replace("_", "-"), type=int, default=S)
    sp.add_argument("--interaction-strength", type=float, default=S)
    sp.add_argument("--activity-prob", type=float, default=S)

    sp = sub.add_parser("ingest", help="validate a corpus and report its tensor")
    common(sp)
    sp.add_argument("--min-matches", type=int, default=S)

    sp = sub.add_parser("factorize", help="fit user/version/champion embeddings")
    common(sp)
    sp.add_argument("--rank", type=int, default=S)
    sp.add_argument("--rank-sweep", default=S, help='candidate ranks, e.g. "1..10" or "2,4,6"')
    sp.add_argument("--sweep-evaluator", choices=("reconstruction", "decoder"), default=S)
    sp.add_argument("--target", choices=TARGETS, default=S, help="decoder sweep target")
    sp.add_argument("--test-fraction", type=float, default=S)
    sp.add_argument("--restarts", type=int, default=S)
    sp.add_argument("--max-iterations", type=int, default=S)
    sp.add_argument("--optimizer", choices=("quasi-newton-bounded", "projected-gradient"), default=S)
    sp.add_argument("--min-matches", type=int, default=S)

    sp = sub.add_parser("train", help="train the decoder")
    common(sp)
    sp.add_argument("--factors", default=S, help="factorize output directory")
    sp.add_argument("--target", choices=TARGETS, default=S)
    sp.add_argument("--baseline", action="store_true", default=S, help="also train the one-hot baseline")
    sp.add_argument("--dropout", type=float, default=S)
    sp.add_argument("--test-fraction", type=float, default=S)
    sp.add_argument("--exclude-performance", action="store_true", default=S)
    sp.add_argument("--max-epochs", type=int, default=S)

    sp = sub.add_parser("evaluate", help="score trained decoders on the test split")
    common(sp)
    sp.add_argument("--factors", default=S)
    sp.add_argument("--model", default=S, help="train output directory or model file")
    sp.add_argument("--target", choices=TARGETS, default=S)
    sp.add_argument("--baseline", action="store_true", default=S, help="also report the baseline row")
    sp.add_argument("--test-fraction", type=float, default=S)

    sp = sub.add_parser("analyze", help="write behavior-analysis tables")
    common(sp)
    sp.add_argument("--factors", default=S)
    sp.add_argument("--label-threshold", type=float, default=S)
    sp.add_argument("--activation-mode", choices=("cumulative", "squared"), default=S)
    return parser


def resolve_params(command: str, flags: dict) -> dict:
    """Defaults, then the ``--config`` file, then explicit flags."""
    params = dict(DEFAULTS[command])
    config_path = flags.pop("config", None)
    if config_path:
        file_params = _read_json(config_path)
        unknown = sorted(set(file_params) - set(params))
        if unknown:
            raise CommandError(f"{config_path}: unknown parameter(s) {', '.join(unknown)}")
        params.update(file_params)
    params.update(flags)
    params["_explicit"] = sorted(set(flags) | set(file_params if config_path else ()))
    return params


def run(command: str, params: dict) -> dict:
    out = params.get("output_dir")
    if not out:
        raise CommandError("missing required parameter: --output-dir")
    parent = os.path.dirname(os.path.abspath(out))
    os.makedirs(parent, exist_ok=True)
    staging = tempfile.mkdtemp(prefix=".nice-staging-", dir=parent)
    try:
        result = COMMANDS[command](params, staging)
        snapshot = {k: v for k, v in params.items() if not k.startswith("_")}
        _write_json(os.path.join(staging, "config.json"),
                    {"command": command, "tool": "nice", "version": __version__, "params": snapshot})
        os.makedirs(out, exist_ok=True)
        for name in sorted(os.listdir(staging)):
            os.replace(os.path.join(staging, name), os.path.join(out, name))
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    return result


def main(argv=None) -> int:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    logging.basicConfig(level=logging.INFO if args.pop("verbose") else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        params = resolve_params(command, args)
        result = run(command, params)
    except Exception as exc:  # noqa: BLE001 - report any failure as a non-zero exit
        print(f"nice {command}: error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(result, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
