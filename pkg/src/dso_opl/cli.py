"""Command-line entry point: single-run stages, config-driven sweeps and reports.

Results CSV (``results.csv``), one row per (config point, method, seed)::

    method,n,num_actions,reward_std,tau,kernel,density,seed,optimality,policy_value,seconds,status

Rows are sorted by ``(n, num_actions, reward_std, tau, kernel, density, seed,
method)``; floats use the shortest round-trip representation. ``seconds`` is
left blank unless ``record_timing = true`` so that reruns are byte-identical.
``status`` is ``ok``, ``diverged`` (optimality/value are ``nan``) or ``error``.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import itertools
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, fields, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import checkpoint
from .data_io import read_jsonl, write_jsonl
from .experiment import (
    ALL_METHODS,
    RESULT_COLUMNS,
    TRAINED_METHODS,
    ResultRow,
    RunPoint,
    Settings,
    build_fixture,
    run_point,
    train_method,
)
from .learner import fit_regression
from .density import fit_density_model
from .policies import UniformPolicy
from .synthetic import LoggingPolicySpec

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

logger = logging.getLogger("dso_opl")

SEED_ENV = "DSO_OPL_SEED"
AXES = ("n", "num_actions", "reward_std", "tau", "kernel", "density")
SWEEP_MODES = ("one-at-a-time", "grid")
SUMMARY_COLUMNS = AXES + (
    "method",
    "count",
    "failed",
    "mean_optimality",
    "std_optimality",
    "mean_policy_value",
    "std_policy_value",
)
PLOT_COLUMNS = AXES + ("method", "metric", "mean", "std", "count")


class ConfigError(ValueError):
    """Schema violation; the message starts with the offending key path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


# ---------------------------------------------------------------------------
# config schema

_EXPERIMENT_KEYS = {
    "methods": (list, list(ALL_METHODS[:6]), f"methods to run, any of {', '.join(ALL_METHODS)}"),
    "seeds": ((int, list), 20, "number of seeds (master_seed + 0..k-1) or an explicit list of seeds"),
    "master_seed": (int, None, f"first seed; falls back to ${SEED_ENV}, then 0"),
    "out": (str, "results", "output directory"),
    "mode": (str, "one-at-a-time", "sweep layout: 'one-at-a-time' (vary each axis around the defaults) or 'grid'"),
    "record_timing": (bool, False, "write wall-clock seconds into results.csv (breaks byte-identical reruns)"),
    "jobs": (int, 1, "worker processes; each (config point, seed) is one job"),
}
_AXIS_DOCS = {
    "n": (int, "logged sample size"),
    "num_actions": (int, "number of candidate actions (prompts)"),
    "reward_std": (float, "reward noise standard deviation"),
    "tau": (float, "kernel bandwidth"),
    "kernel": (str, "kernel family: gaussian | uniform"),
    "density": (str, "logging marginal density estimator: fa | mc"),
}
_SETTINGS_DOCS = {
    "steps": "policy-gradient steps per method",
    "batch_size": "minibatch size",
    "policy_lr": "Adam learning rate for policies",
    "n_eval": "evaluation contexts",
    "n_augment": "augmented (action, sentence) draws per record for DSO",
    "weight_clip": "importance-weight clipping threshold",
    "mc_samples": "Monte-Carlo samples per density query (density = mc)",
    "density_extra_m": "extra logging sentences per record for the fa density fit",
    "density_epochs": "training epochs of the fa density model",
    "regression_epochs": "training epochs of the reward model",
    "model_lr": "Adam learning rate for reward and density models",
    "hidden": "hidden units of every MLP",
    "n_clusters": "action clusters for POTEC",
    "use_noisy_embedding": "kernel distances on noisy sentence embeddings",
    "embedding_noise": "std of the noisy sentence embedding",
}
_LOGGING_DOCS = {
    "n_pretrain": "uniform-policy samples used to fit the logging policy's base model",
    "beta": "logging softmax inverse temperature",
    "lr": "learning rate of the base model",
    "epochs": "epochs of the base model",
    "batch_size": "batch size of the base model",
    "hidden": "hidden units of the base model",
}


def _default_point() -> RunPoint:
    return RunPoint()


def config_help() -> str:
    lines = ["configuration keys (TOML):", "", "[experiment]"]
    for k, (_, default, doc) in _EXPERIMENT_KEYS.items():
        lines.append(f"  {k:<20} {doc} (default {default!r})")
    p = _default_point()
    lines += ["", "[defaults]        value of each axis when it is not being swept"]
    for k, (_, doc) in _AXIS_DOCS.items():
        lines.append(f"  {k:<20} {doc} (default {getattr(p, k)!r})")
    lines += ["", "[sweep]           list of values per axis, e.g. n = [500, 1000, 2000]"]
    lines += ["  " + ", ".join(AXES)]
    s = Settings()
    lines += ["", "[settings]"]
    for k, doc in _SETTINGS_DOCS.items():
        lines.append(f"  {k:<20} {doc} (default {getattr(s, k)!r})")
    lines += ["", "[settings.logging]"]
    for k, doc in _LOGGING_DOCS.items():
        lines.append(f"  {k:<20} {doc} (default {getattr(s.logging, k)!r})")
    lines += ["", f"any key may be overridden with --set section.key=VALUE (TOML value syntax)."]
    return "\n".join(lines)


def _typed(value, expected, path):
    """Check ``value`` against a python type; ints are accepted where floats are."""
    types = expected if isinstance(expected, tuple) else (expected,)
    if isinstance(value, bool) and bool not in types:
        raise ConfigError(path, f"expected {'/'.join(t.__name__ for t in types)}, got a boolean")
    if float in types and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if not isinstance(value, types):
        raise ConfigError(path, f"expected {'/'.join(t.__name__ for t in types)}, got {type(value).__name__} {value!r}")
    return value


def _reject_unknown(table: dict, known, path: str):
    for k in table:
        if k not in known:
            raise ConfigError(f"{path}.{k}" if path else k, f"unknown key (expected one of {', '.join(known)})")


@dataclass
class ExperimentConfig:
    points: List[RunPoint]
    methods: List[str]
    seeds: List[int]
    out: str = "results"
    record_timing: bool = False
    jobs: int = 1
    settings: Settings = field(default_factory=Settings)


def _set_path(raw: dict, dotted: str, value):
    parts = dotted.split(".")
    node = raw
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(dotted, "cannot set a key inside a non-table value")
    node[parts[-1]] = value


def parse_override(text: str) -> Tuple[str, object]:
    if "=" not in text:
        raise ConfigError(text, "override must look like section.key=VALUE")
    key, val = text.split("=", 1)
    key = key.strip()
    try:
        value = tomllib.loads(f"v = {val.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = val.strip()  # bare strings need no quotes on the command line
    return key, value


def build_config(raw: dict, env: Optional[Dict[str, str]] = None) -> ExperimentConfig:
    """Validate a parsed TOML document; every error names its key path."""
    env = os.environ if env is None else env
    _reject_unknown(raw, ("experiment", "defaults", "sweep", "settings"), "")
    exp = raw.get("experiment", {})
    _reject_unknown(exp, _EXPERIMENT_KEYS, "experiment")
    vals = {}
    for k, (typ, default, _) in _EXPERIMENT_KEYS.items():
        vals[k] = _typed(exp[k], typ, f"experiment.{k}") if k in exp else default

    methods = vals["methods"]
    if not methods:
        raise ConfigError("experiment.methods", "must be nonempty")
    for i, m in enumerate(methods):
        if m not in ALL_METHODS:
            raise ConfigError(f"experiment.methods[{i}]", f"unknown method {m!r}; expected one of {', '.join(ALL_METHODS)}")
    if len(set(methods)) != len(methods):
        raise ConfigError("experiment.methods", "contains duplicates")

    master = vals["master_seed"]
    if master is None:
        text = env.get(SEED_ENV)
        try:
            master = int(text) if text not in (None, "") else 0
        except ValueError:
            raise ConfigError(SEED_ENV, f"environment variable must be an integer, got {text!r}") from None
    seeds = vals["seeds"]
    if isinstance(seeds, list):
        for i, s in enumerate(seeds):
            _typed(s, int, f"experiment.seeds[{i}]")
        if not seeds:
            raise ConfigError("experiment.seeds", "must contain at least one seed")
        seed_list = list(seeds)
    else:
        if seeds < 1:
            raise ConfigError("experiment.seeds", "must be at least 1")
        seed_list = [master + i for i in range(seeds)]
    if vals["mode"] not in SWEEP_MODES:
        raise ConfigError("experiment.mode", f"must be one of {', '.join(SWEEP_MODES)}")
    if vals["jobs"] < 1:
        raise ConfigError("experiment.jobs", "must be at least 1")

    defaults = raw.get("defaults", {})
    _reject_unknown(defaults, AXES, "defaults")
    base = {k: getattr(_default_point(), k) for k in AXES}
    for k, v in defaults.items():
        base[k] = _typed(v, _AXIS_DOCS[k][0], f"defaults.{k}")
    sweep = raw.get("sweep", {})
    _reject_unknown(sweep, AXES, "sweep")
    axes = {}
    for k, v in sweep.items():
        if not isinstance(v, list):
            v = [v]
        if not v:
            raise ConfigError(f"sweep.{k}", "axis must be nonempty")
        axes[k] = [_typed(x, _AXIS_DOCS[k][0], f"sweep.{k}[{i}]") for i, x in enumerate(v)]

    combos: List[dict] = []
    if vals["mode"] == "grid":
        names = list(axes)
        for prod in itertools.product(*(axes[k] for k in names)):
            combos.append({**base, **dict(zip(names, prod))})
        if not names:
            combos.append(dict(base))
    else:
        combos.append(dict(base))
        for k, values in axes.items():
            combos.extend({**base, k: v} for v in values)
    points: List[RunPoint] = []
    for c in combos:
        try:
            p = RunPoint(**c)
        except ValueError as err:
            raise ConfigError("sweep", f"invalid config point {c}: {err}") from None
        if p not in points:
            points.append(p)

    settings = _build_settings(raw.get("settings", {}))
    return ExperimentConfig(points, list(methods), seed_list, vals["out"], vals["record_timing"], vals["jobs"], settings)


def _build_settings(table: dict) -> Settings:
    known = [f.name for f in fields(Settings)]
    _reject_unknown(table, known, "settings")
    base = Settings()
    kw = {}
    for k, v in table.items():
        if k == "logging":
            if not isinstance(v, dict):
                raise ConfigError("settings.logging", "must be a table")
            lk = [f.name for f in fields(LoggingPolicySpec)]
            _reject_unknown(v, lk, "settings.logging")
            lkw = {name: _typed(x, type(getattr(base.logging, name)), f"settings.logging.{name}") for name, x in v.items()}
            try:
                kw["logging"] = replace(base.logging, **lkw)
            except ValueError as err:
                raise ConfigError("settings.logging", str(err)) from None
            continue
        kw[k] = _typed(v, type(getattr(base, k)), f"settings.{k}")
        if isinstance(kw[k], (int, float)) and not isinstance(kw[k], bool) and kw[k] <= 0 and k != "steps":
            raise ConfigError(f"settings.{k}", "must be positive")
        if k == "steps" and kw[k] < 0:
            raise ConfigError("settings.steps", "must be nonnegative")
    return replace(base, **kw)


def load_config(path: Optional[str], overrides: Sequence[str] = (), env=None) -> ExperimentConfig:
    raw: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as err:
            raise ConfigError(str(path), f"not valid TOML: {err}") from None
    for text in overrides:
        key, value = parse_override(text)
        _set_path(raw, key, value)
    return build_config(raw, env)


# ---------------------------------------------------------------------------
# results CSV


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_results(rows: Sequence[ResultRow], record_timing: bool = False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in sort_rows(rows):
        d = r.as_dict()
        if not record_timing or d["seconds"] is None or (isinstance(d["seconds"], float) and math.isnan(d["seconds"])):
            d["seconds"] = ""
        w.writerow([_fmt(d[c]) for c in RESULT_COLUMNS])
    return buf.getvalue()


def _sort_key(r: ResultRow):
    return (r.n, r.num_actions, float(r.reward_std), float(r.tau), r.kernel, r.density, r.seed, r.method)


def sort_rows(rows: Sequence[ResultRow]) -> List[ResultRow]:
    return sorted(rows, key=_sort_key)


def _parse_float(text: str) -> float:
    return float("nan") if text == "" else float(text)


def read_results(path) -> List[ResultRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULT_COLUMNS:
            raise ValueError(f"{path}: header must be {','.join(RESULT_COLUMNS)}")
        return [
            ResultRow(
                d["method"], int(d["n"]), int(d["num_actions"]), float(d["reward_std"]), float(d["tau"]),
                d["kernel"], d["density"], int(d["seed"]), _parse_float(d["optimality"]),
                _parse_float(d["policy_value"]), _parse_float(d["seconds"]), d["status"],
            )
            for d in reader
        ]


def _write_text(path, text: str):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def summarize(rows: Sequence[ResultRow]) -> List[dict]:
    """Mean and sample std (ddof=1; 0 for a single row) per config point and method over ``ok`` rows."""
    groups: Dict[tuple, List[ResultRow]] = {}
    for r in sort_rows(rows):
        groups.setdefault((r.n, r.num_actions, r.reward_std, r.tau, r.kernel, r.density, r.method), []).append(r)
    out = []
    for key, members in groups.items():
        ok = [r for r in members if r.status == "ok"]
        opt = np.array([r.optimality for r in ok])
        val = np.array([r.policy_value for r in ok])

        def stats(a):
            if a.size == 0:
                return float("nan"), float("nan")
            return float(a.mean()), float(a.std(ddof=1)) if a.size > 1 else 0.0

        mo, so = stats(opt)
        mv, sv = stats(val)
        out.append(dict(zip(AXES + ("method",), key), count=len(ok), failed=len(members) - len(ok),
                        mean_optimality=mo, std_optimality=so, mean_policy_value=mv, std_policy_value=sv))
    return out


def format_summary(summary: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for d in summary:
        w.writerow([_fmt(d[c]) for c in SUMMARY_COLUMNS])
    return buf.getvalue()


def format_plot_data(summary: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PLOT_COLUMNS)
    for d in summary:
        for metric in ("optimality", "policy_value"):
            w.writerow([_fmt(d[a]) for a in AXES] + [d["method"], metric, _fmt(d[f"mean_{metric}"]), _fmt(d[f"std_{metric}"]), d["count"]])
    return buf.getvalue()


def write_reports(rows: Sequence[ResultRow], out_dir: str) -> Tuple[str, str]:
    summary = summarize(rows)
    s_path = os.path.join(out_dir, "summary.csv")
    p_path = os.path.join(out_dir, "plot_data.csv")
    _write_text(s_path, format_summary(summary))
    _write_text(p_path, format_plot_data(summary))
    return s_path, p_path


# ---------------------------------------------------------------------------
# sweep


def _run_job(point: RunPoint, seed: int, methods: Tuple[str, ...], settings: Settings) -> List[ResultRow]:
    try:
        return run_point(point, seed, methods, settings)
    except Exception as err:  # noqa: BLE001 - a failed job must not stop the sweep
        logger.error("job %s seed %d failed: %s", point, seed, err)
        return [
            ResultRow(m, point.n, point.num_actions, float(point.reward_std), float(point.tau), point.kernel,
                      point.density, seed, float("nan"), float("nan"), float("nan"), "error")
            for m in methods
        ]


class _ResultsWriter:
    """Append-only writer; only the coordinating process touches the file."""

    def __init__(self, path: str, record_timing: bool):
        self.path = path
        self.record_timing = record_timing
        if not os.path.exists(path):
            _write_text(path, format_results([], record_timing))

    def append(self, rows: Sequence[ResultRow]):
        text = format_results(rows, self.record_timing).split("\n", 1)[1]
        with open(self.path, "a", encoding="utf-8", newline="") as fh:
            fh.write(text)
            fh.flush()


def run_experiment(config: ExperimentConfig) -> Tuple[List[ResultRow], int]:
    """Run every missing (point, seed, method); returns ``(all rows, number of new rows)``."""
    os.makedirs(config.out, exist_ok=True)
    path = os.path.join(config.out, "results.csv")
    existing: List[ResultRow] = read_results(path) if os.path.exists(path) else []
    done = {r.key for r in existing if r.status != "error"}
    kept = [r for r in existing if r.status != "error"]
    writer = _ResultsWriter(path, config.record_timing)
    jobs = []
    for point in config.points:
        for seed in config.seeds:
            todo = tuple(m for m in config.methods if (m, *_point_key(point), seed) not in done)
            if todo:
                jobs.append((point, seed, todo))
    new: List[ResultRow] = []
    if config.jobs == 1 or len(jobs) <= 1:
        for point, seed, todo in jobs:
            rows = _run_job(point, seed, todo, config.settings)
            writer.append(rows)
            new.extend(rows)
    else:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
            os.environ.setdefault(var, "1")  # inherited by workers: each runs single-threaded
        import multiprocessing

        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=config.jobs, mp_context=ctx) as pool:
            futures = [pool.submit(_run_job, p, s, t, config.settings) for p, s, t in jobs]
            for fut in as_completed(futures):
                rows = fut.result()
                writer.append(rows)
                new.extend(rows)
    rows = sort_rows(kept + new)
    _write_text(path, format_results(rows, config.record_timing))
    write_reports(rows, config.out)
    return rows, len(new)


def _point_key(p: RunPoint):
    return (p.n, p.num_actions, float(p.reward_std), float(p.tau), p.kernel, p.density)


# ---------------------------------------------------------------------------
# subcommands


def _master_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    text = os.environ.get(SEED_ENV, "")
    return int(text) if text else 0


def _point_and_settings(args) -> Tuple[RunPoint, Settings]:
    cfg = load_config(args.config, args.set)
    point = cfg.points[0]
    over = {k: getattr(args, k) for k in AXES if getattr(args, k, None) is not None}
    return replace(point, **over), cfg.settings


def _fixture(args, need_support=True):
    point, settings = _point_and_settings(args)
    fx = build_fixture(point, _master_seed(args), settings, need_support=need_support)
    if getattr(args, "data", None):
        fx = replace(fx, data=read_jsonl(args.data))
    return fx


def cmd_collect(args) -> int:
    point, settings = _point_and_settings(args)
    if args.support_m is not None:
        settings = replace(settings, density_extra_m=args.support_m)
    fx = build_fixture(point, _master_seed(args), settings, need_support=settings.density_extra_m > 0)
    if point.density != "fa" and settings.density_extra_m > 0:
        from .synthetic import collect_logged_data
        from .experiment import _S_DATA, _rng

        data = collect_logged_data(fx.env, fx.logging_policy, point.n, _rng(fx.seed, _S_DATA), settings.density_extra_m, fx.seed)
    else:
        data = fx.data
    n = write_jsonl(data, args.out)
    print(f"wrote {n} records to {args.out}")
    return 0


def cmd_fit_regression(args) -> int:
    point, settings = _point_and_settings(args)
    data = read_jsonl(args.data)
    model, report = fit_regression(
        data, lr=settings.model_lr, epochs=settings.regression_epochs, hidden=settings.hidden,
        rng=np.random.default_rng([_master_seed(args), 5]),
    )
    checkpoint.save(model, args.out)
    print(json.dumps({"out": args.out, **dataclasses.asdict(report)}))
    return 0


def cmd_fit_density(args) -> int:
    point, settings = _point_and_settings(args)
    data = read_jsonl(args.data)
    from .kernels import KernelConfig

    kernel = KernelConfig(point.kernel, point.tau, settings.use_noisy_embedding)
    model = fit_density_model(
        data, kernel, lr=settings.model_lr, epochs=settings.density_epochs, hidden=settings.hidden,
        rng=np.random.default_rng([_master_seed(args), 6]),
    )
    checkpoint.save(model, args.out)
    print(json.dumps({"out": args.out, **dataclasses.asdict(model.report)}))
    return 0


def cmd_train(args) -> int:
    fx = _fixture(args, need_support=args.method == "dso")
    if args.reward_model:
        fx._reward_model = checkpoint.load(args.reward_model)
    if args.density_model:
        fx._density = checkpoint.load(args.density_model)
    if args.steps is not None:
        fx.settings = replace(fx.settings, steps=args.steps)
    policy, log = train_method(fx, args.method)
    checkpoint.save(policy, args.out)
    if args.log:
        _write_text(args.log, log.to_csv())
    rep = fx.eval_set.evaluate(policy)
    print(json.dumps({"method": args.method, "out": args.out, "optimality": rep.optimality, "policy_value": rep.policy_value}))
    return 0


def cmd_evaluate(args) -> int:
    fx = _fixture(args, need_support=False)
    if args.policy == "uniform":
        policy = UniformPolicy(len(fx.action_set))
    elif args.policy == "logging":
        policy = fx.logging_policy
    else:
        policy = checkpoint.load(args.policy)
    print(json.dumps(dataclasses.asdict(fx.eval_set.evaluate(policy))))
    return 0


def cmd_sweep(args) -> int:
    overrides = list(args.set)
    if args.seeds is not None:
        overrides.append(f"experiment.seeds={args.seeds}")
    if args.out is not None:
        overrides.append(f"experiment.out={json.dumps(args.out)}")
    if args.jobs is not None:
        overrides.append(f"experiment.jobs={args.jobs}")
    cfg = load_config(args.config, overrides)
    rows, n_new = run_experiment(cfg)
    failed = sum(r.status != "ok" for r in rows)
    print(f"{n_new} new rows, {len(rows)} total ({failed} not ok) in {os.path.join(cfg.out, 'results.csv')}")
    return 0


def cmd_verify_theory(args) -> int:
    from .oracle import verify_theory

    report = verify_theory(args.instances, args.tol, seed=args.seed if args.seed is not None else 0)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 1


def cmd_report(args) -> int:
    rows = read_results(args.results)
    out = args.out or os.path.dirname(os.path.abspath(args.results))
    os.makedirs(out, exist_ok=True)
    s, p = write_reports(rows, out)
    print(f"wrote {s} and {p}")
    return 0


def _add_point_args(p):
    p.add_argument("--config", help="TOML config; [defaults] and [settings] apply")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--seed", type=int, help=f"seed (default ${SEED_ENV} or 0)")
    p.add_argument("--n", type=int, help="logged sample size")
    p.add_argument("--num-actions", dest="num_actions", type=int, help="number of actions")
    p.add_argument("--reward-std", dest="reward_std", type=float, help="reward noise std")
    p.add_argument("--tau", type=float, help="kernel bandwidth")
    p.add_argument("--kernel", choices=("gaussian", "uniform"))
    p.add_argument("--density", choices=("fa", "mc"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dso-opl",
        description="Off-policy learning of prompt policies on a synthetic benchmark.",
        epilog=config_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="roll out the logging policy and write JSONL logged data")
    _add_point_args(p)
    p.add_argument("--support-m", dest="support_m", type=int, help="extra logging sentences per record")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("fit-regression", help="fit the reward model on logged data")
    _add_point_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_regression)

    p = sub.add_parser("fit-density", help="fit the function-approximation density model")
    _add_point_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_density)

    p = sub.add_parser("train", help="train one method and save the policy checkpoint")
    _add_point_args(p)
    p.add_argument("--method", required=True, choices=TRAINED_METHODS)
    p.add_argument("--data", help="logged JSONL (default: regenerate from the seed)")
    p.add_argument("--reward-model", dest="reward_model", help="reward model checkpoint")
    p.add_argument("--density-model", dest="density_model", help="density model checkpoint")
    p.add_argument("--steps", type=int)
    p.add_argument("--log", help="write the training log CSV here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a policy checkpoint (or 'uniform' / 'logging')")
    _add_point_args(p)
    p.add_argument("--policy", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="run a config-driven experiment (resumable)",
                       epilog=config_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--seeds", type=int, help="number of seeds")
    p.add_argument("--out", help="output directory")
    p.add_argument("--jobs", type=int, help="worker processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify-theory", help="check the bias/variance identities on random discrete instances")
    p.add_argument("--instances", type=int, default=50)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_verify_theory)

    p = sub.add_parser("report", help="summary and plot-ready CSVs from a results CSV")
    p.add_argument("--results", required=True)
    p.add_argument("--out", help="output directory (default: next to the results)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
