"""Structure/kernel sweeps, result tables, method comparison and plot-data export."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .data import SupervisedDataset, SyntheticSpec, TimeSeriesTable, denormalize, generate_synthetic, \
    load_csv, make_sequences, prepare
from .metrics import Metrics, UntrainedModelError, evaluate, predict_dataset
from .nn import LstmModel, MlpModel
from .optim import LrSchedule, TrainConfig, TrainingDivergedError, train
from .svr import ConvergenceError, SvrConfig, svr_fit

log = logging.getLogger(__name__)

METHODS = ("mlp", "lstm", "svr")
HIDDEN_SIZES = (32, 64, 128, 256)
KERNEL_VARIANTS = ("linear", "polynomial", "rbf", "sigmoid")
CSV_COLUMNS = ("structure", "train_mse", "train_mae", "train_rmse",
               "test_mse", "test_mae", "test_rmse", "status")
TRAIN_LEN = 311


def default_variants(method: str) -> tuple:
    return KERNEL_VARIANTS if method == "svr" else HIDDEN_SIZES


def default_train_config(method: str, seed: int = 0) -> TrainConfig:
    """1000 epochs, Adam at 1e-4 decayed by 0.99 per epoch; batch 16 (MLP) or 1 (LSTM)."""
    return TrainConfig(epochs=1000, batch_size=16 if method == "mlp" else 1,
                       schedule=LrSchedule(1e-4, 0.99, 1), seed=seed)


@dataclass(frozen=True)
class ExperimentSpec:
    method: str
    variants: tuple = ()
    train_config: TrainConfig | None = None
    svr_config: SvrConfig = field(default_factory=SvrConfig)
    data: object = field(default_factory=SyntheticSpec)  # CSV path or SyntheticSpec
    train_len: int = TRAIN_LEN
    seed: int = 7
    lag_n: int = 1
    lag_m: int = 1
    seq_len: int = 1
    num_layers: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if not self.variants:
            object.__setattr__(self, "variants", default_variants(self.method))
        object.__setattr__(self, "variants", tuple(self.variants))
        if self.method == "svr":
            bad = [v for v in self.variants if v not in KERNEL_VARIANTS]
        else:
            bad = [v for v in self.variants if not (isinstance(v, (int, np.integer)) and v >= 1)]
        if bad:
            raise ValueError(f"invalid variants for {self.method}: {bad}")
        if self.train_config is None and self.method != "svr":
            object.__setattr__(self, "train_config", default_train_config(self.method))
        if self.seq_len < 1 or (self.seq_len > 1 and self.method != "lstm"):
            raise ValueError("seq_len > 1 is only meaningful for the LSTM")

    def variant_label(self, variant) -> str:
        if self.method == "svr":
            return str(variant).capitalize()
        return f"{9 * self.lag_n + self.lag_m}-{variant}-1"


def load_table(source) -> TimeSeriesTable:
    if isinstance(source, TimeSeriesTable):
        return source
    if isinstance(source, SyntheticSpec):
        return generate_synthetic(source)
    return load_csv(source)


def variant_seed(master: int, index: int) -> int:
    """Independent per-variant seed derived from (master seed, variant index)."""
    return int(np.random.SeedSequence([int(master), int(index)]).generate_state(1)[0])


# -- tables ---------------------------------------------------------------

@dataclass
class ReportRow:
    structure: str
    train: Metrics | None = None
    test: Metrics | None = None
    status: str = "ok"
    best: bool = False
    size: int = 0  # ordering key for tie-breaks (hidden units or variant index)

    def to_dict(self) -> dict:
        return {"structure": self.structure, "size": self.size, "status": self.status, "best": self.best,
                "train": self.train.to_dict() if self.train else None,
                "test": self.test.to_dict() if self.test else None}

    @classmethod
    def from_dict(cls, d: dict) -> "ReportRow":
        return cls(structure=d["structure"], size=int(d["size"]), status=d["status"], best=bool(d["best"]),
                   train=Metrics.from_dict(d["train"]) if d["train"] else None,
                   test=Metrics.from_dict(d["test"]) if d["test"] else None)


@dataclass
class ReportTable:
    method: str
    rows: list = field(default_factory=list)

    def __post_init__(self):
        if not self.rows:
            raise ValueError("a report table needs at least one variant row")

    @property
    def best_row(self) -> ReportRow | None:
        return next((r for r in self.rows if r.best), None)

    def to_dict(self) -> dict:
        return {"method": self.method, "rows": [r.to_dict() for r in self.rows]}

    @classmethod
    def from_dict(cls, d: dict) -> "ReportTable":
        return cls(method=d["method"], rows=[ReportRow.from_dict(r) for r in d["rows"]])


def mark_best(rows: list) -> None:
    """Flag the row with the lowest testing MSE (ties: testing RMSE, then smaller structure)."""
    for r in rows:
        r.best = False
    scored = [r for r in rows if r.test is not None]
    if scored:
        min(scored, key=lambda r: (r.test.mse, r.test.rmse, r.size)).best = True


# -- running --------------------------------------------------------------

def build_model(spec: ExperimentSpec, variant, rng):
    if spec.method == "mlp":
        return MlpModel.init(int(variant), rng, n_inputs=9 * spec.lag_n + spec.lag_m)
    if spec.method == "lstm":
        return LstmModel.init(int(variant), rng, n_inputs=9 * spec.lag_n + spec.lag_m,
                              num_layers=spec.num_layers)
    raise ValueError("SVR models are fitted, not initialised")


def fit_variant(spec: ExperimentSpec, index: int, train_set: SupervisedDataset):
    """Fresh seeded model for one variant, fitted on ``train_set``; returns ``(model, history)``."""
    variant = spec.variants[index]
    seed = variant_seed(spec.seed, index)
    if spec.method == "svr":
        cfg = replace(spec.svr_config, kernel=replace(spec.svr_config.kernel, kind=variant))
        return svr_fit(train_set.inputs, train_set.targets, cfg), None
    model = build_model(spec, variant, np.random.default_rng(seed))
    cfg = replace(spec.train_config, seed=seed)
    if spec.seq_len > 1:
        X = make_sequences(train_set.inputs, spec.seq_len)
        data = (X, train_set.targets[spec.seq_len - 1:])
    else:
        data = train_set
    return train(model, data, cfg)


def run_variant(spec: ExperimentSpec, index: int, splits=None):
    """Train and score one variant; failures become flagged rows. Returns ``(row, model)``."""
    if splits is None:
        splits = prepare(load_table(spec.data), spec.train_len, spec.lag_n, spec.lag_m)
    train_set, test_set = splits
    variant = spec.variants[index]
    size = int(variant) if spec.method != "svr" else index
    row = ReportRow(structure=spec.variant_label(variant), size=size)
    try:
        model, _ = fit_variant(spec, index, train_set)
    except (TrainingDivergedError, ConvergenceError) as exc:
        log.warning("variant %s failed: %s", row.structure, exc)
        row.status = f"failed: {exc}"
        return row, None
    report = evaluate(model, {"train": train_set, "test": test_set}, seq_len=spec.seq_len, physical=False)
    row.train, row.test = report.splits["train"], report.splits["test"]
    if not (math.isfinite(row.test.mse) and math.isfinite(row.train.mse)):
        row.status = "failed: non-finite predictions"
        row.train = row.test = None
    return row, model


def _run_variant_row(args):
    spec, index = args
    return run_variant(spec, index)[0]


def run_sweep(spec: ExperimentSpec, jobs: int = 1, return_models: bool = False):
    """One row per variant, in variant order, with the best row marked.

    With ``jobs > 1`` variants train in separate processes; results do not
    depend on ``jobs``. ``return_models`` (serial only) also returns the
    fitted models, ``None`` for failed rows.
    """
    if jobs > 1 and len(spec.variants) > 1 and not return_models:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_variant_row, [(spec, k) for k in range(len(spec.variants))]))
        models = None
    else:
        splits = prepare(load_table(spec.data), spec.train_len, spec.lag_n, spec.lag_m)
        rows, models = [], []
        for k in range(len(spec.variants)):
            row, model = run_variant(spec, k, splits)
            log.info("%s %s: %s", spec.method, row.structure, row.status)
            rows.append(row)
            models.append(model)
    mark_best(rows)
    table = ReportTable(spec.method, rows)
    return (table, models) if return_models else table


def compare_methods(tables: list) -> dict:
    """Rank methods by their best testing MSE; pairwise testing-RMSE ratios."""
    if len(tables) < 2:
        raise ValueError("need at least two tables to compare")
    entries = []
    for t in tables:
        best = t.best_row
        if best is None:
            mark_best(t.rows)
            best = t.best_row
        if best is None:
            raise ValueError(f"table {t.method!r} has no successful rows")
        entries.append({"method": t.method, "structure": best.structure,
                        "test_mse": best.test.mse, "test_rmse": best.test.rmse})
    ranking = sorted(entries, key=lambda e: (e["test_mse"], e["test_rmse"]))
    ratios = {}
    for a in entries:
        for b in entries:
            if a is not b:
                ratios[f"{a['method']}/{b['method']}"] = (
                    a["test_rmse"] / b["test_rmse"] if b["test_rmse"] > 0 else math.inf)
    ties = []
    for k in range(1, len(ranking)):
        prev, cur = ranking[k - 1], ranking[k]
        if prev["test_mse"] == cur["test_mse"] and prev["test_rmse"] == cur["test_rmse"]:
            ties.append((prev["method"], cur["method"]))
    return {"ranking": ranking, "rmse_ratios": ratios, "ties": ties}


# -- export ---------------------------------------------------------------

def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def render_csv(table: ReportTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in table.rows:
        tr, te = r.train, r.test
        w.writerow([r.structure,
                    _fmt(tr and tr.mse), _fmt(tr and tr.mae), _fmt(tr and tr.rmse),
                    _fmt(te and te.mse), _fmt(te and te.mae), _fmt(te and te.rmse),
                    "best" if r.best and r.status == "ok" else r.status])
    return buf.getvalue()


def render_json(table: ReportTable) -> str:
    return json.dumps(table.to_dict(), indent=2, sort_keys=True) + "\n"


def render_markdown(table: ReportTable, reference: ReportTable | None = None) -> str:
    def block(t: ReportTable, title: str) -> list:
        lines = [f"**{title}**", "",
                 "| Structure | Training MSE | Training MAE | Training RMSE "
                 "| Testing MSE | Testing MAE | Testing RMSE |",
                 "|---|---|---|---|---|---|---|"]
        for r in t.rows:
            name = f"{r.structure} (best)" if r.best else r.structure
            cells = []
            for m in (r.train, r.test):
                cells += ["n/a"] * 3 if m is None else [f"{m.mse:.4f}", f"{m.mae:.4f}", f"{m.rmse:.4f}"]
            lines.append(f"| {name} | " + " | ".join(cells) + " |")
        return lines

    lines = block(table, f"{table.method.upper()} results")
    if reference is not None:
        lines += [""] + block(reference, f"{reference.method.upper()} reference values")
    return "\n".join(lines) + "\n"


def export_report(table: ReportTable, fmt: str, path, reference: ReportTable | None = None) -> Path:
    renderers = {"csv": render_csv, "json": render_json}
    if fmt == "markdown":
        text = render_markdown(table, reference)
    elif fmt in renderers:
        text = renderers[fmt](table)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def load_report(path) -> ReportTable:
    with open(path, encoding="utf-8") as fh:
        return ReportTable.from_dict(json.load(fh))


def reference_table(method: str) -> ReportTable:
    """Published reference results, bundled for side-by-side display only."""
    raw = json.loads(resources.files(__package__).joinpath("reference_results.json").read_text())
    entry = raw["tables"][method]
    rows = [ReportRow(structure=r["structure"], size=k, status="reference",
                      train=Metrics(*r["train"]), test=Metrics(*r["test"]))
            for k, r in enumerate(entry)]
    mark_best(rows)
    return ReportTable(method, rows)


# -- plot data ------------------------------------------------------------

def emit_plot_data(model, dataset: SupervisedDataset, out_dir, prefix: str = "test", seq_len: int = 1):
    """Write ``<prefix>_hydrograph.csv`` (month, observed, predicted) and
    ``<prefix>_scatter.csv`` (observed, predicted), both in m^3/s."""
    if not getattr(model, "trained", False):
        raise UntrainedModelError("cannot emit plot data for an untrained model")
    pred, obs = predict_dataset(model, dataset, seq_len)
    lo, hi = dataset.norm.discharge
    pred, obs = denormalize(pred, lo, hi), denormalize(obs, lo, hi)
    months = dataset.target_months[len(dataset) - len(obs):] if dataset.target_months else \
        [str(k) for k in range(len(obs))]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    hydro, scatter = out_dir / f"{prefix}_hydrograph.csv", out_dir / f"{prefix}_scatter.csv"
    with open(hydro, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["month", "observed", "predicted"])
        w.writerows([m, repr(float(o)), repr(float(p))] for m, o, p in zip(months, obs, pred))
    with open(scatter, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["observed", "predicted"])
        w.writerows([repr(float(o)), repr(float(p))] for o, p in zip(obs, pred))
    return hydro, scatter
