"""Command-line entry point: ``springcast {generate,train,evaluate,sweep,report}``.

Settings come from three layers, later ones winning: built-in defaults, an
optional ``--config`` file, and command-line flags. The config file is flat
``key = value`` text grouped in sections (``[data]``, ``[synthetic]``,
``[train]``, ``[svr]``, ``[experiment]``); values are read as JSON where
possible (so TOML-style ``"quoted"`` strings and ``[1, 2]`` lists work) and as
bare strings otherwise. A ``manifest.json`` from an earlier run is also
accepted as ``--config`` and reproduces that run.

Exit status: 0 on success, 1 on invalid input (bad flags or config, missing
or malformed files, untrained models), 2 on runtime failures such as
training divergence or solver non-convergence.
"""

from __future__ import annotations

import argparse
import configparser
import copy
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .data import DataError, SyntheticSpec, TimeSeriesTable, generate_synthetic, load_csv, make_supervised, \
    prepare, split_contiguous
from .experiment import ExperimentSpec, build_model, compare_methods, default_variants, emit_plot_data, \
    export_report, fit_variant, load_report, reference_table, render_csv, run_sweep, variant_seed
from .metrics import evaluate
from .optim import LrSchedule, TrainConfig, TrainingDivergedError
from .persist import ModelFileError, load_model, save_model
from .svr import ConvergenceError, Kernel, SvrConfig

log = logging.getLogger("springcast")

OUTPUT_ROOT_ENV = "SPRINGCAST_OUTPUT_ROOT"
EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- configuration --------------------------------------------------------

def default_config() -> dict:
    return {
        "data": {"source": None, "spec_file": None, "train_len": 311, "lag_n": 1, "lag_m": 1},
        "synthetic": SyntheticSpec().to_dict(),
        "train": {"epochs": 1000, "batch_size": None, "initial_rate": 1e-4, "decay_rate": 0.99,
                  "decay_steps": 1, "shuffle_each_epoch": False},
        "svr": {"C": 1.0, "epsilon": 0.01, "degree": 3, "gamma": None, "coef0": 0.0,
                "tol": 1e-6, "max_iter": 200000},
        "experiment": {"method": "mlp", "variants": None, "seed": 7, "jobs": 1,
                       "seq_len": 1, "num_layers": 1},
    }


def _coerce(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def read_config_file(path) -> dict:
    """Sections of a key/value config file, or the ``config`` of a manifest."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: malformed JSON ({exc})") from exc
        return doc.get("config", doc)
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise UsageError(f"{path}: malformed config ({exc})") from exc
    out = {name: {k: _coerce(v) for k, v in parser[name].items()} for name in parser.sections()}
    if parser.defaults():
        raise UsageError(f"{path}: keys must live inside a [section]")
    return out


def merge_config(base: dict, overlay: dict, origin: str) -> dict:
    out = copy.deepcopy(base)
    for section, values in overlay.items():
        if section not in out:
            raise UsageError(f"{origin}: unknown section [{section}]")
        if not isinstance(values, dict):
            raise UsageError(f"{origin}: section [{section}] must hold key/value pairs")
        for key, value in values.items():
            if key not in out[section]:
                raise UsageError(f"{origin}: unknown key {key!r} in [{section}]")
            out[section][key] = value
    return out


# flag dest -> (section, key)
FLAG_MAP = {
    "data": ("data", "source"), "train_len": ("data", "train_len"),
    "lag_n": ("data", "lag_n"), "lag_m": ("data", "lag_m"),
    "months": ("synthetic", "months"), "data_seed": ("synthetic", "seed"),
    "autocorrelation": ("synthetic", "autocorrelation"),
    "epochs": ("train", "epochs"), "batch_size": ("train", "batch_size"), "lr": ("train", "initial_rate"),
    "decay_rate": ("train", "decay_rate"), "decay_steps": ("train", "decay_steps"),
    "shuffle": ("train", "shuffle_each_epoch"),
    "C": ("svr", "C"), "epsilon": ("svr", "epsilon"), "degree": ("svr", "degree"), "gamma": ("svr", "gamma"),
    "coef0": ("svr", "coef0"),
    "method": ("experiment", "method"), "variants": ("experiment", "variants"), "seed": ("experiment", "seed"),
    "jobs": ("experiment", "jobs"), "seq_len": ("experiment", "seq_len"),
    "num_layers": ("experiment", "num_layers"),
}


def resolve_config(args) -> dict:
    cfg = default_config()
    if getattr(args, "config", None):
        cfg = merge_config(cfg, read_config_file(args.config), str(args.config))
    flags = {}
    for dest, (section, key) in FLAG_MAP.items():
        value = getattr(args, dest, None)
        if value is not None:
            flags.setdefault(section, {})[key] = value
    cfg = merge_config(cfg, flags, "command line")
    src = cfg["data"]["source"]
    if src is not None and Path(src).suffix.lower() != ".csv":
        # a synthetic-generator spec file: its [synthetic] keys, then flags again on top
        spec_cfg = read_config_file(src)
        cfg = merge_config(cfg, {"synthetic": spec_cfg.get("synthetic", {})}, str(src))
        cfg = merge_config(cfg, {"synthetic": flags.get("synthetic", {})}, "command line")
        cfg["data"]["source"] = None
        cfg["data"]["spec_file"] = str(src)
    if cfg["train"]["batch_size"] is None:
        cfg["train"]["batch_size"] = 16 if cfg["experiment"]["method"] == "mlp" else 1
    method = cfg["experiment"]["method"]
    if cfg["experiment"]["variants"] is None:
        cfg["experiment"]["variants"] = list(default_variants(method)) if method in ("mlp", "lstm", "svr") else []
    return cfg


def synthetic_spec(cfg: dict) -> SyntheticSpec:
    try:
        return SyntheticSpec.from_dict(cfg["synthetic"])
    except TypeError as exc:
        raise UsageError(f"bad [synthetic] settings: {exc}") from exc


def train_config(cfg: dict) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(epochs=int(t["epochs"]), batch_size=int(t["batch_size"]),
                       schedule=LrSchedule(float(t["initial_rate"]), float(t["decay_rate"]), int(t["decay_steps"])),
                       seed=int(cfg["experiment"]["seed"]), shuffle_each_epoch=bool(t["shuffle_each_epoch"]))


def svr_config(cfg: dict, kernel: str = "rbf") -> SvrConfig:
    s = cfg["svr"]
    return SvrConfig(C=float(s["C"]), epsilon=float(s["epsilon"]),
                     kernel=Kernel(kernel, degree=int(s["degree"]),
                                   gamma=None if s["gamma"] is None else float(s["gamma"]),
                                   coef0=float(s["coef0"])),
                     tol=float(s["tol"]), max_iter=int(s["max_iter"]))


def experiment_spec(cfg: dict, table: TimeSeriesTable) -> ExperimentSpec:
    e, d = cfg["experiment"], cfg["data"]
    method = e["method"]
    variants = tuple(str(v) if method == "svr" else int(v) for v in e["variants"])
    return ExperimentSpec(method=method, variants=variants,
                          train_config=None if method == "svr" else train_config(cfg),
                          svr_config=svr_config(cfg), data=table, train_len=int(d["train_len"]),
                          seed=int(e["seed"]), lag_n=int(d["lag_n"]), lag_m=int(d["lag_m"]),
                          seq_len=int(e["seq_len"]), num_layers=int(e["num_layers"]))


def load_data(cfg: dict) -> tuple[TimeSeriesTable, str]:
    """The dataset named by the config and the SHA-256 of its CSV form."""
    src = cfg["data"]["source"]
    if src is not None:
        path = Path(src)
        if not path.is_file():
            raise FileNotFoundError(f"data file not found: {path}")
        return load_csv(path), hashlib.sha256(path.read_bytes()).hexdigest()
    table = generate_synthetic(synthetic_spec(cfg))
    return table, table_fingerprint(table)


def table_fingerprint(table: TimeSeriesTable) -> str:
    with tempfile.TemporaryDirectory() as tmp:
        p = Path(tmp) / "t.csv"
        table.to_csv(p)
        return hashlib.sha256(p.read_bytes()).hexdigest()


# -- run bookkeeping ------------------------------------------------------

def output_dir(args, command: str) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
        out = root / f"{command}-{time.strftime('%Y%m%d-%H%M%S')}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(path: Path, command: str, cfg: dict, fingerprint: str | None, artifacts: dict) -> Path:
    manifest = {"tool": "springcast", "version": __version__, "command": command, "config": cfg,
                "seed": cfg["experiment"]["seed"], "data_sha256": fingerprint,
                "artifacts": {k: str(v) for k, v in artifacts.items()}}
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- commands -------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = resolve_config(args)
    spec = synthetic_spec(cfg)
    out = Path(args.out) if args.out else output_dir(argparse.Namespace(out=None), "generate") / "data.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    manifest = out.with_name(out.name + ".manifest.json")
    table = generate_synthetic(spec)
    write_manifest(manifest, "generate", cfg, table_fingerprint(table), {"data": out.name})
    table.to_csv(out)
    print(out)
    return EXIT_OK


def _build_single(cfg: dict, method: str, args):
    if method == "svr":
        variant = args.kernel or "rbf"
        if variant not in default_variants("svr"):
            raise UsageError(f"unknown kernel {variant!r}")
    else:
        variant = int(args.hidden) if args.hidden is not None else 32
    cfg["experiment"]["variants"] = [variant]
    return variant


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    method = cfg["experiment"]["method"]
    _build_single(cfg, method, args)
    out = output_dir(args, "train")
    table, fingerprint = load_data(cfg)
    spec = experiment_spec(cfg, table)
    train_set, test_set = prepare(table, spec.train_len, spec.lag_n, spec.lag_m)
    artifacts = {"model": "model.npz"}
    if not args.init_only:
        artifacts["metrics"] = "metrics.json"
        if method != "svr":
            artifacts["history"] = "history.csv"
    write_manifest(out / "manifest.json", "train", cfg, fingerprint, artifacts)
    extra = {"train_len": spec.train_len, "lag_n": spec.lag_n, "lag_m": spec.lag_m, "seq_len": spec.seq_len,
             "data_sha256": fingerprint}
    if args.init_only:
        if method == "svr":
            raise UsageError("--init-only applies to neural models")
        model = build_model(spec, spec.variants[0], np.random.default_rng(variant_seed(spec.seed, 0)))
        save_model(out / "model.npz", model, train_set.norm, extra)
        print(out)
        return EXIT_OK
    model, history = fit_variant(spec, 0, train_set)
    save_model(out / "model.npz", model, train_set.norm, extra)
    if history is not None:
        history.to_csv(out / "history.csv")
    report = evaluate(model, {"train": train_set, "test": test_set}, seq_len=spec.seq_len)
    _write_json(out / "metrics.json", report.to_dict())
    print(out)
    return EXIT_OK


def _splits_for_model(cfg: dict, meta: dict, norm):
    extra = meta.get("extra", {})
    table, fingerprint = load_data(cfg)
    train_len = int(extra.get("train_len", cfg["data"]["train_len"]))
    n, m = int(extra.get("lag_n", 1)), int(extra.get("lag_m", 1))
    ds = make_supervised(table, n, m, norm) if norm is not None else None
    splits = split_contiguous(ds, train_len) if ds is not None else prepare(table, train_len, n, m)
    return splits, fingerprint, int(extra.get("seq_len", 1))


def cmd_evaluate(args) -> int:
    cfg = resolve_config(args)
    model, norm, meta = load_model(args.model)
    if not model.trained:
        raise UsageError(f"{args.model}: model has not been trained")
    out = output_dir(args, "evaluate")
    (train_set, test_set), fingerprint, seq_len = _splits_for_model(cfg, meta, norm)
    write_manifest(out / "manifest.json", "evaluate", cfg, fingerprint,
                   {"model": str(args.model), "metrics": "metrics.json"})
    wanted = {"train": train_set, "test": test_set}
    if args.split != "both":
        wanted = {args.split: wanted[args.split]}
    report = evaluate(model, wanted, seq_len=seq_len)
    _write_json(out / "metrics.json", report.to_dict())
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = resolve_config(args)
    out = output_dir(args, "sweep")
    table, fingerprint = load_data(cfg)
    spec = experiment_spec(cfg, table)
    jobs = int(cfg["experiment"]["jobs"])
    artifacts = {"report_csv": "report.csv", "report_json": "report.json", "report_md": "report.md"}
    if jobs == 1:
        artifacts.update(best_model="best_model.npz", hydrograph="test_hydrograph.csv",
                         scatter="test_scatter.csv")
    write_manifest(out / "manifest.json", "sweep", cfg, fingerprint, artifacts)
    t0 = time.perf_counter()
    if jobs == 1:
        report, models = run_sweep(spec, return_models=True)
    else:
        report, models = run_sweep(spec, jobs=jobs), None
    log.info("sweep finished in %.1f s", time.perf_counter() - t0)
    export_report(report, "csv", out / "report.csv")
    export_report(report, "json", out / "report.json")
    export_report(report, "markdown", out / "report.md", reference=reference_table(spec.method))
    best = next((k for k, r in enumerate(report.rows) if r.best), None)
    if models is not None and best is not None:
        train_set, test_set = prepare(table, spec.train_len, spec.lag_n, spec.lag_m)
        save_model(out / "best_model.npz", models[best], train_set.norm,
                   {"train_len": spec.train_len, "lag_n": spec.lag_n, "lag_m": spec.lag_m,
                    "seq_len": spec.seq_len, "data_sha256": fingerprint})
        emit_plot_data(models[best], test_set, out, "test", spec.seq_len)
    sys.stdout.write(render_csv(report))
    failed = [r.structure for r in report.rows if r.status != "ok"]
    if failed:
        log.error("variants failed: %s", ", ".join(failed))
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_report(args) -> int:
    modes = [bool(args.table), bool(args.compare), bool(args.model)]
    if sum(modes) != 1:
        raise UsageError("report needs exactly one of --table, --compare or --model")
    out = output_dir(args, "report")
    if args.table:
        table = load_report(args.table)
        ref = reference_table(table.method) if args.reference else None
        suffix = {"csv": "csv", "json": "json", "markdown": "md"}[args.format]
        path = export_report(table, args.format, out / f"report.{suffix}", reference=ref)
        print(path)
    elif args.compare:
        if len(args.compare) < 2:
            raise UsageError("--compare needs at least two report.json files")
        summary = compare_methods([load_report(p) for p in args.compare])
        _write_json(out / "comparison.json", summary)
        print(json.dumps(summary, indent=2, sort_keys=True))
    else:
        cfg = resolve_config(args)
        model, norm, meta = load_model(args.model)
        if not model.trained:
            raise UsageError(f"{args.model}: model has not been trained")
        (train_set, test_set), _, seq_len = _splits_for_model(cfg, meta, norm)
        ds = test_set if args.split == "test" else train_set
        for p in emit_plot_data(model, ds, out, args.split, seq_len):
            print(p)
    return EXIT_OK


# -- parser ---------------------------------------------------------------

def _add_data_flags(p):
    p.add_argument("--data", help="dataset CSV, or a synthetic-generator spec (.toml/.ini)")
    p.add_argument("--train-len", type=int, help="supervised rows in the training split (default 311)")
    p.add_argument("--lag-n", type=int, help=argparse.SUPPRESS)
    p.add_argument("--lag-m", type=int, help=argparse.SUPPRESS)
    p.add_argument("--data-seed", type=int, help="seed of the synthetic generator")


def _add_train_flags(p):
    p.add_argument("--method", choices=("mlp", "lstm", "svr"))
    p.add_argument("--seed", type=int, help="master seed (default 7)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float, help="initial learning rate")
    p.add_argument("--decay-rate", type=float)
    p.add_argument("--decay-steps", type=int, help="epochs per learning-rate decay")
    p.add_argument("--shuffle", action="store_const", const=True, help="reshuffle rows every epoch")
    p.add_argument("--seq-len", type=int, help="LSTM input window length")
    p.add_argument("--num-layers", type=int, help="stacked LSTM layers")
    p.add_argument("--C", type=float, dest="C")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--degree", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--coef0", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="springcast", description="Spring-discharge forecasting experiments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    common = _Parser(add_help=False)
    common.add_argument("--config", help="key/value config file or a manifest.json")
    common.add_argument("--out", help="output directory (file for generate)")

    p = sub.add_parser("generate", parents=[common], help="write a synthetic dataset CSV")
    p.add_argument("--months", type=int)
    p.add_argument("--seed", type=int, dest="data_seed", help="generator seed")
    p.add_argument("--autocorrelation", type=float)
    p.add_argument("--spec", dest="data", help="synthetic-generator spec file")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", parents=[common], help="train one model")
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--hidden", type=int, help="hidden units (default 32)")
    p.add_argument("--kernel", choices=default_variants("svr"), help="SVR kernel (default rbf)")
    p.add_argument("--init-only", action="store_true", help="save the initialised, untrained model")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="score a saved model")
    p.add_argument("--model", required=True)
    _add_data_flags(p)
    p.add_argument("--split", choices=("train", "test", "both"), default="both")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", parents=[common], help="structure or kernel sweep")
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--variants", type=lambda s: [v.strip() for v in s.split(",") if v.strip()],
                   help="comma-separated hidden sizes or kernels")
    p.add_argument("--jobs", type=int, help="parallel worker processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", parents=[common], help="export tables, compare methods, emit plot data")
    p.add_argument("--table", help="report.json from a sweep")
    p.add_argument("--format", choices=("csv", "json", "markdown"), default="markdown")
    p.add_argument("--reference", action="store_true", help="append the published reference values")
    p.add_argument("--compare", nargs="+", help="two or more report.json files")
    p.add_argument("--model", help="model file for plot data")
    p.add_argument("--split", choices=("train", "test"), default="test")
    _add_data_flags(p)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (TrainingDivergedError, ConvergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (UsageError, DataError, ModelFileError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
