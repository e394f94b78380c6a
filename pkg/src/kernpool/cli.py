"""Command-line batch runs: simulate, fit, combine, recalibrate, evaluate, report.

Settings come from built-in defaults, then an optional INI ``--config`` file
(``[run]`` section, plus ``[scenario]`` for ``simulate``), then flags.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import sys
from pathlib import Path

import numpy as np

from . import data, evaluation, qp, recalibration
from .kernels import format_kernel, parse_kernel, resolve_bandwidth
from .pooling import Strategy, combine_panel, model_contributions

EXIT_USAGE = 2
EXIT_SOLVER = 3

DEFAULTS = {
    "kernel": "energy",
    "strategy": "lp-discrete",
    "lambda": "1.0",
    "group_by": "",
    "seed": "0",
    "kkt_tol": "1e-8",
    "max_iter": "50000",
    "ridge": "1e-10",
    "threads": "1",
    "all_strategies": "false",
    "verbose": "false",
    "mbm": "false",
    "mbm_group_by": "lead_time,location",
    "mbm_transform": "sqrt",
    "preset": "biased-underdispersed",
    "score": "",
    "bins": "10",
    "reference": "equal",
}


class UsageError(Exception):
    pass


def _global_options(parser: argparse.ArgumentParser) -> None:
    s = argparse.SUPPRESS
    parser.add_argument("--config", default=s, help="INI file with a [run] section")
    parser.add_argument("--seed", default=s, help="unsigned 64-bit seed")
    parser.add_argument("--kernel", default=s, help="energy | gaussian:<sigma> | gaussian:median | chained:threshold=<t>:<inner>")
    parser.add_argument("--strategy", default=s, help="equal | lp-discrete | lp-point | lp-ordered")
    parser.add_argument("--lambda", dest="lambda", default=s, help="case weight decay in (0, 1]")
    parser.add_argument("--group-by", dest="group_by", default=s, help="comma-separated meta keys")
    parser.add_argument("--threads", default=s, help="worker threads for kernel matrix assembly")
    parser.add_argument("--all-strategies", dest="all_strategies", action="store_const", const="true", default=s)
    parser.add_argument("--verbose", action="store_const", const="true", default=s)


def _panel_options(parser) -> None:
    parser.add_argument("--data", help="directory with <split>_forecasts.csv and <split>_obs.csv")
    parser.add_argument("--forecasts", help="forecast CSV (overrides --data)")
    parser.add_argument("--obs", help="observation CSV (overrides --data)")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _global_options(common)
    parser = argparse.ArgumentParser(prog="kernpool", parents=[common],
                                     description="Optimal pooling of ensemble forecasts with kernel scores.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="write synthetic train/test panels")
    p.add_argument("--preset", choices=data.PRESETS, default=argparse.SUPPRESS)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit", parents=[common], help="fit pooling weights on a training panel")
    _panel_options(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--mbm", action="store_const", const="true", default=argparse.SUPPRESS,
                   help="recalibrate each model member-by-member before pooling")
    p.add_argument("--mbm-group-by", dest="mbm_group_by", default=argparse.SUPPRESS)
    p.add_argument("--mbm-transform", dest="mbm_transform", choices=("sqrt", "identity"), default=argparse.SUPPRESS)

    p = sub.add_parser("combine", parents=[common], help="write pooled forecasts for a panel")
    _panel_options(p)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="output CSV")

    p = sub.add_parser("recalibrate", parents=[common], help="fit MBM on train, apply to train and test")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mbm-group-by", dest="mbm_group_by", default=argparse.SUPPRESS)
    p.add_argument("--mbm-transform", dest="mbm_transform", choices=("sqrt", "identity"), default=argparse.SUPPRESS)

    p = sub.add_parser("evaluate", parents=[common], help="score fitted models on a test panel")
    _panel_options(p)
    p.add_argument("--model-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--score", choices=("crps", "energy"), default=argparse.SUPPRESS)
    p.add_argument("--bins", default=argparse.SUPPRESS)
    p.add_argument("--reference", default=argparse.SUPPRESS, help="reference method for skill")

    p = sub.add_parser("report", parents=[common], help="print a comparison table from evaluate output")
    p.add_argument("--reports", required=True)
    return parser


def _settings(args) -> dict:
    cfg = dict(DEFAULTS)
    explicit = set()
    config_path = getattr(args, "config", None)
    ini = configparser.ConfigParser()
    if config_path:
        if not ini.read(config_path):
            raise UsageError(f"cannot read config file {config_path}")
        if "run" in ini:
            for key, value in ini["run"].items():
                cfg[key.replace("-", "_")] = value
                explicit.add(key.replace("-", "_"))
    for key, value in vars(args).items():
        if key not in ("command", "config"):
            cfg[key] = value
            explicit.add(key)
    cfg["_ini"] = ini
    cfg["_explicit"] = explicit
    return cfg


def _bool(value) -> bool:
    return str(value).strip().lower() in ("1", "true", "yes", "on")


def _keys(text) -> tuple:
    return tuple(k.strip() for k in str(text or "").split(",") if k.strip())


def _mbm_keys(cfg, panel) -> tuple:
    # The default grouping skips meta columns the panel does not carry.
    keys = _keys(cfg["mbm_group_by"])
    if "mbm_group_by" in cfg["_explicit"]:
        return keys
    return tuple(k for k in keys if k in panel.meta)


def _strategies(cfg) -> list:
    if _bool(cfg["all_strategies"]):
        return list(Strategy)
    return [Strategy.parse(cfg["strategy"])]


def _solver(cfg) -> qp.SolverConfig:
    return qp.SolverConfig(kkt_tol=float(cfg["kkt_tol"]), max_iter=int(cfg["max_iter"]), ridge=float(cfg["ridge"]))


def _seed(cfg) -> int:
    seed = int(cfg["seed"])
    if not 0 <= seed < 2**64:
        raise UsageError("seed must be an unsigned 64-bit integer")
    return seed


def _load(args, split: str):
    if args.forecasts and args.obs:
        return data.load_panel(args.forecasts, args.obs)
    if not args.data:
        raise UsageError("pass --data DIR or both --forecasts and --obs")
    root = Path(args.data)
    return data.load_panel(root / f"{split}_forecasts.csv", root / f"{split}_obs.csv")


def _say(msg: str = "") -> None:
    print(msg, file=sys.stdout)


# -- subcommands -------------------------------------------------------------

def cmd_simulate(args, cfg) -> int:
    ini = cfg["_ini"]
    seed = _seed(cfg) if "seed" in cfg["_explicit"] else None
    if ini.has_section("scenario"):
        buf = ["[scenario]"] + [f"{k} = {v}" for k, v in ini["scenario"].items()]
        scenario = data.scenario_from_ini("\n".join(buf), seed=seed)
    else:
        scenario = data.load_preset(cfg["preset"], seed=seed)
    train, test = data.generate_scenario(scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, panel in (("train", train), ("test", test)):
        data.save_panel(panel, out / f"{name}_forecasts.csv", out / f"{name}_obs.csv")
    _say(f"seed = {scenario.seed}")
    _say(f"n_train = {train.n}")
    _say(f"n_test = {test.n}")
    _say(f"d = {train.d}")
    for j, mid in enumerate(train.model_ids):
        X = train.members[j]
        bias = float(np.mean(X.mean(axis=1) - train.obs))
        spread = float(np.mean(X.std(axis=1, ddof=1)))
        _say(f"model {mid}: members = {X.shape[1]}, mean error = {bias:.4f}, mean spread = {spread:.4f}")
    return 0


def _fit_one(spec, panel, strategy, cfg, verbose) -> tuple:
    lam = float(cfg["lambda"])
    group_by = _keys(cfg["group_by"])
    solutions = {}
    totals = {}
    ok = True
    for label, idx in panel.groups(group_by).items():
        sub = panel.subset(idx)
        alphas = sub.alphas * qp.alpha_decay(sub.n, lam)
        sol = qp.fit(spec, sub, strategy, alphas, _solver(cfg), n_jobs=int(cfg["threads"]))
        solutions[label] = sol
        totals[label] = float(np.sum(alphas))
        ok = ok and sol.converged
        if verbose or not sol.converged:
            print(f"[{strategy.value} {label}]", file=sys.stderr)
            print(qp.format_diagnostics(sol), file=sys.stderr)
    return solutions, totals, ok


def _weight_rows(model: data.FittedModel) -> list:
    rows = []
    kind = {"lp-ordered": "order", "lp-point": "member"}.get(model.strategy.value, "model")
    for label, sol in model.solutions.items():
        contrib = model_contributions(sol.w, model.member_counts)
        for mid, v in zip(model.model_ids, contrib):
            rows.append({"method": model.strategy.value, "group": label, "value": float(v), "n": "",
                         "model": mid, "index": "", "kind": "model"})
        if sol.w.space == "member":
            k = 0
            for mid, m in zip(model.model_ids, model.member_counts):
                for idx in range(m):
                    rows.append({"method": model.strategy.value, "group": label, "value": float(sol.w.weights[k]),
                                 "n": "", "model": mid, "index": idx + 1 if kind == "order" else idx, "kind": kind})
                    k += 1
    return rows


def cmd_fit(args, cfg) -> int:
    train = _load(args, "train")
    verbose = _bool(cfg["verbose"])
    strategies = _strategies(cfg)
    for s in strategies:
        if s is Strategy.ORDERED and train.d != 1:
            raise UsageError("lp-ordered needs univariate forecasts (d = 1)")
    mbm = {}
    mbm_group_by = _mbm_keys(cfg, train)
    transform = cfg["mbm_transform"]
    if _bool(cfg["mbm"]):
        mbm = recalibration.fit_panel(train, mbm_group_by, transform)
        train = recalibration.apply_panel(train, mbm, mbm_group_by, transform)
    spec = parse_kernel(cfg["kernel"])
    spec = resolve_bandwidth(spec, np.concatenate([train.flat_members().reshape(-1, train.d), train.obs]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    all_ok = True
    seed = _seed(cfg)
    for strategy in strategies:
        solutions, totals, ok = _fit_one(spec, train, strategy, cfg, verbose)
        all_ok = all_ok and ok
        model = data.FittedModel(strategy, format_kernel(spec), train.model_ids, train.member_counts, train.d,
                                 solutions, _keys(cfg["group_by"]), mbm, mbm_group_by if mbm else (), transform)
        data.save_model(model, out / f"model-{strategy.value}.txt")
        evaluation.write_report(out / f"weights-{strategy.value}.csv", _weight_rows(model), seed,
                                extra=("model", "index", "kind"))
        for label, sol in solutions.items():
            contrib = ", ".join(f"{m}={v:.4f}" for m, v in zip(train.model_ids, model_contributions(sol.w, train.member_counts)))
            _say(f"{strategy.value} [{label}] mean training score = {sol.score / totals[label]:.6f} ({contrib})")
    if not all_ok:
        print("error: solver did not converge", file=sys.stderr)
        return EXIT_SOLVER
    return 0


def _pooled(model: data.FittedModel, panel):
    """Pooled (atoms, weights) per case, choosing each case's group weights."""
    groups = panel.groups(model.group_by)
    atoms = panel.sorted_members() if model.strategy is Strategy.ORDERED else panel.flat_members()
    weights = np.empty(atoms.shape[:2])
    for label, idx in groups.items():
        sol = model.solution_for(label)
        _, w = combine_panel(panel.subset(idx[:1]), model.strategy, sol.w)
        weights[idx] = w
    return atoms, weights


def _prepare(model: data.FittedModel, panel):
    model.check_panel(panel)
    if model.mbm:
        panel = recalibration.apply_panel(panel, model.mbm, model.mbm_group_by, model.mbm_transform)
    return panel


def cmd_combine(args, cfg) -> int:
    model = data.load_model(args.model)
    panel = _prepare(model, _load(args, "test"))
    atoms, weights = _pooled(model, panel)
    owners = [(mid, m) for mid, M in zip(model.model_ids, model.member_counts) for m in range(M)]
    label = "order" if model.strategy is Strategy.ORDERED else "member"
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case_id", "atom", "model_id", label, "dim_index", "value", "weight"])
        for i, cid in enumerate(panel.case_ids):
            for k, (mid, m) in enumerate(owners):
                for dim in range(panel.d):
                    w.writerow([cid, k, mid, m + 1 if label == "order" else m, dim,
                                repr(float(atoms[i, k, dim])), repr(float(weights[i, k]))])
    return 0


def cmd_recalibrate(args, cfg) -> int:
    root = Path(args.data)
    train = data.load_panel(root / "train_forecasts.csv", root / "train_obs.csv")
    group_by = _mbm_keys(cfg, train)
    transform = cfg["mbm_transform"]
    params = recalibration.fit_panel(train, group_by, transform)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for split in ("train", "test"):
        f, o = root / f"{split}_forecasts.csv", root / f"{split}_obs.csv"
        if not f.exists():
            continue
        panel = recalibration.apply_panel(data.load_panel(f, o), params, group_by, transform)
        data.save_panel(panel, out / f"{split}_forecasts.csv", out / f"{split}_obs.csv")
    with open(out / "mbm.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"format_version = {data.FORMAT_VERSION}\n")
        fh.write(f"mbm_group_by = {','.join(group_by)}\nmbm_transform = {transform}\n")
        for (mid, label), p in params.items():
            fh.write(f"{mid} [{label}] = {' '.join(repr(v) for v in p.as_tuple())}\n")
    for (mid, label), p in params.items():
        _say(f"{mid} [{label}]: a = {p.a:.4f}, b = {p.b:.4f}, c = {p.c:.4f}, d = {p.d:.4f}")
    return 0


def _model_files(model_dir: Path, cfg) -> list:
    if _bool(cfg["all_strategies"]) or "strategy" not in cfg["_explicit"]:
        files = list(model_dir.glob("model-*.txt"))
    else:
        files = [model_dir / f"model-{Strategy.parse(cfg['strategy']).value}.txt"]
    order = {s.value: k for k, s in enumerate(Strategy)}
    files = sorted(files, key=lambda p: order.get(p.stem[len("model-"):], len(order)))
    if not files:
        raise UsageError(f"no fitted model files in {model_dir}")
    for f in files:
        if not f.exists():
            raise UsageError(f"missing model file {f}")
    return files


def cmd_evaluate(args, cfg) -> int:
    raw = _load(args, "test")
    models = [data.load_model(f) for f in _model_files(Path(args.model_dir), cfg)]
    seed = _seed(cfg)
    score = cfg["score"] or ("crps" if raw.d == 1 else "energy")
    group_by = _keys(cfg["group_by"])
    bins = int(cfg["bins"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    outputs = {}
    prepared = {}
    for j, mid in enumerate(raw.model_ids):
        X = raw.members[j]
        outputs[mid] = (X, np.full(X.shape[1], 1.0 / X.shape[1]))
    for model in models:
        panel = _prepare(model, raw)
        prepared[model.strategy.value] = (model, panel)
        outputs[model.strategy.value] = _pooled(model, panel)

    reports = evaluation.score_by_group(raw, outputs, score, group_by)
    overall = evaluation.score_by_group(raw, outputs, score, ())
    rows = [{"method": r.method, "group": r.group, "value": r.value, "n": r.n} for r in reports]
    if group_by:
        rows += [{"method": r.method, "group": r.group, "value": r.value, "n": r.n} for r in overall]
    evaluation.write_report(out / "scores.csv", rows, seed, extra=())

    reference = cfg["reference"]
    skill_rows = []
    by_key = {(r["group"], r["method"]): r for r in rows}
    if any(m == reference for _, m in by_key):
        for (group, method), r in by_key.items():
            ref = by_key[(group, reference)]["value"]
            skill_rows.append({"method": method, "group": group, "value": evaluation.skill(r["value"], ref),
                               "n": r["n"], "reference": reference})
    evaluation.write_report(out / "skill.csv", skill_rows, seed, extra=("reference",))

    if raw.d == 1:
        pit_rows = []
        for method, (atoms, weights) in outputs.items():
            u = evaluation.pit_batch(atoms, weights, raw.obs, seed)
            counts = evaluation.pit_histogram(u, bins)
            for b, cnt in enumerate(counts):
                pit_rows.append({"method": method, "group": f"{b / bins!r}-{(b + 1) / bins!r}", "value": int(cnt),
                                 "n": raw.n, "ks": evaluation.ks_statistic(u) if b == 0 else ""})
        evaluation.write_report(out / "pit_histogram.csv", pit_rows, seed, extra=("ks",))

    mse_rows = []
    for method, (model, panel) in prepared.items():
        mse = evaluation.member_mse(panel)
        sol = next(iter(model.solutions.values())) if len(model.solutions) == 1 else None
        k = 0
        for j, mid in enumerate(panel.model_ids):
            for m in range(panel.member_counts[j]):
                if sol is None:
                    weight = ""
                elif sol.w.space == "member":
                    weight = float(sol.w.weights[k])
                else:
                    weight = float(sol.w.weights[j] / panel.member_counts[j])
                mse_rows.append({"method": method, "group": f"{mid}:{m}", "value": float(mse[j][m]),
                                 "n": panel.n, "weight": weight})
                k += 1
    evaluation.write_report(out / "member_mse.csv", mse_rows, seed, extra=("weight",))
    for r in overall:
        _say(f"{r.method}: mean {score} = {r.value:.6f} (n = {r.n})")
    return 0


def cmd_report(args, cfg) -> int:
    root = Path(args.reports)
    path = root / "scores.csv"
    if not path.exists():
        raise UsageError(f"no scores.csv in {root}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    skills = {}
    if (root / "skill.csv").exists():
        with open(root / "skill.csv", newline="", encoding="utf-8") as fh:
            skills = {(r["group"], r["method"]): float(r["value"]) for r in csv.DictReader(fh)}
    width = max(len(r["method"]) for r in rows)
    current = None
    for r in rows:
        if r["group"] != current:
            current = r["group"]
            _say(f"[{current}]")
        s = skills.get((r["group"], r["method"]))
        extra = "" if s is None else f"  skill {s:+.4f}"
        _say(f"  {r['method']:<{width}}  {float(r['value']):.6f}  n={r['n']}{extra}")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "combine": cmd_combine,
    "recalibrate": cmd_recalibrate,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _settings(args)
        Strategy.parse(cfg["strategy"])
        lam = float(cfg["lambda"])
        if not 0 < lam <= 1:
            raise UsageError("--lambda must lie in (0, 1]")
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
