"""Monthly spring-discharge forecasting with hand-written MLP, LSTM and epsilon-SVR models."""

from .data import (NormalizationParams, SupervisedDataset, SyntheticSpec, TimeSeriesTable,
                   generate_synthetic, load_csv, make_supervised, normalize, denormalize, prepare,
                   split_contiguous)
from .experiment import ExperimentSpec, ReportTable, compare_methods, emit_plot_data, export_report, \
    load_report, run_sweep
from .metrics import Metrics, compute_metrics, evaluate
from .nn import LstmModel, MlpModel, lstm_backward, lstm_cell_step, lstm_forward, mlp_backward, \
    mlp_forward
from .optim import AdamState, LrSchedule, TrainConfig, adam_step, lr_at, train
from .persist import load_model, save_model
from .svr import Kernel, SvrConfig, SvrModel, qp_oracle_fit, svr_fit, svr_predict

__version__ = "0.1.0"

__all__ = [
    "NormalizationParams", "SupervisedDataset", "SyntheticSpec", "TimeSeriesTable",
    "generate_synthetic", "load_csv", "make_supervised", "normalize", "denormalize", "prepare",
    "split_contiguous", "ExperimentSpec", "ReportTable", "compare_methods", "emit_plot_data",
    "export_report", "load_report", "run_sweep", "Metrics", "compute_metrics", "evaluate",
    "LstmModel", "MlpModel", "lstm_backward", "lstm_cell_step", "lstm_forward", "mlp_backward",
    "mlp_forward", "AdamState", "LrSchedule", "TrainConfig", "adam_step", "lr_at", "train",
    "load_model", "save_model", "Kernel", "SvrConfig", "SvrModel", "qp_oracle_fit", "svr_fit",
    "svr_predict",
]
