"""MSE loss, Adam with stepwise exponential learning-rate decay, and the mini-batch training loop."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .nn import LstmModel, MlpModel, ShapeError, lstm_backward, lstm_forward, make_rng, \
    mlp_backward, mlp_forward


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"non-finite training loss {loss} at epoch {epoch}, batch {batch}")
        self.epoch, self.batch, self.loss = epoch, batch, loss


def mse_loss(predictions, observations):
    """Returns ``(loss, dloss/dpredictions)`` with loss = mean((p - o)^2)."""
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    o = np.asarray(observations, dtype=np.float64).reshape(-1)
    if p.shape != o.shape:
        raise ShapeError(f"length mismatch: {p.shape[0]} predictions vs {o.shape[0]} observations")
    if p.size == 0:
        raise ShapeError("mse of an empty batch")
    r = p - o
    return float(np.mean(r * r)), 2.0 * r / r.size


@dataclass(frozen=True)
class LrSchedule:
    initial_rate: float = 1e-4
    decay_rate: float = 0.99
    decay_steps: int = 1  # epochs per decay application

    def __post_init__(self):
        if not self.initial_rate > 0:
            raise ValueError("initial_rate must be positive")
        if not 0 < self.decay_rate <= 1:
            raise ValueError("decay_rate must lie in (0, 1]")
        if self.decay_steps < 1:
            raise ValueError("decay_steps must be >= 1")


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return schedule.initial_rate * schedule.decay_rate ** (epoch // schedule.decay_steps)


@dataclass
class AdamState:
    """First/second moment accumulators keyed by parameter name."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def copy(self) -> "AdamState":
        return AdamState(self.beta1, self.beta2, self.eps, self.t,
                         {k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()})

    def update(self, params: dict, grads: dict, rate: float) -> None:
        """Apply one Adam step to ``params`` in place.

        A tensor whose gradient has been identically zero since the start has
        m = v = 0, so its update is exactly zero; such tensors are skipped.
        """
        if not rate > 0:
            raise ValueError("learning rate must be positive")
        if set(params) != set(grads):
            raise ShapeError(f"parameter/gradient names differ: {sorted(params)} vs {sorted(grads)}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        step = rate / (1.0 - b1 ** self.t)
        inv_bc2 = 1.0 / math.sqrt(1.0 - b2 ** self.t)
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ShapeError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
            m = self.m.get(name)
            if m is None:
                if _all_zero(g):
                    continue
                m = self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            denom = np.sqrt(v)
            denom *= inv_bc2
            denom += self.eps
            p -= step * m / denom


def _all_zero(g: np.ndarray) -> bool:
    if g.size and g.ndim and not any(g.strides):
        return g.flat[0] == 0  # broadcast constant
    return not g.any()


def adam_step(params: dict, grads: dict, state: AdamState, rate: float):
    """Functional Adam step: returns ``(new_params, new_state)``, inputs untouched."""
    new_params = {k: np.array(p, dtype=np.float64) for k, p in params.items()}
    new_grads = {k: np.asarray(g, dtype=np.float64) for k, g in grads.items()}
    new_state = state.copy()
    new_state.update(new_params, new_grads, rate)
    return new_params, new_state


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 16
    schedule: LrSchedule = field(default_factory=LrSchedule)
    seed: int = 0
    shuffle_each_epoch: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        sched = d.pop("schedule", {})
        if not isinstance(sched, LrSchedule):
            sched = LrSchedule(**sched)
        return cls(schedule=sched, **d)


@dataclass
class TrainingHistory:
    losses: list = field(default_factory=list)
    rates: list = field(default_factory=list)
    wall_time: float = 0.0
    best_epoch: int = -1

    @property
    def best_loss(self) -> float:
        return self.losses[self.best_epoch]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss", "lr"])
            for k, (loss, lr) in enumerate(zip(self.losses, self.rates)):
                w.writerow([k, repr(loss), repr(lr)])


def forward(model, X):
    if isinstance(model, MlpModel):
        return mlp_forward(model, X)
    if isinstance(model, LstmModel):
        return lstm_forward(model, X)
    raise TypeError(f"not a neural model: {type(model).__name__}")


def backward(model, cache, dy):
    if isinstance(model, MlpModel):
        return mlp_backward(model, cache, dy)
    if isinstance(model, LstmModel):
        return lstm_backward(model, cache, dy)
    raise TypeError(f"not a neural model: {type(model).__name__}")


def as_training_arrays(model, data):
    """(X, y) from a dataset or pair, reshaped to the model's input convention."""
    if hasattr(data, "inputs"):
        X, y = data.inputs, data.targets
    else:
        X, y = data
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if isinstance(model, LstmModel) and X.ndim == 2:
        X = X[:, None, :]
    if X.shape[0] != y.shape[0]:
        raise ShapeError("inputs and targets differ in row count")
    if X.shape[-1] != model.n_inputs:
        raise ShapeError(f"model expects {model.n_inputs} features, data has {X.shape[-1]}")
    return X, y


def train(model, train_set, config: TrainConfig, callback=None):
    """Fit ``model`` in place with mini-batch Adam; returns ``(model, history)``.

    Runs exactly ``config.epochs`` epochs. Batches are contiguous slices of the
    (optionally reshuffled) rows, the last one possibly short. The learning rate
    of epoch ``e`` is ``lr_at(schedule, e)``. The recorded epoch loss is the
    row-weighted mean of the batch MSEs seen during that epoch; parameters from
    the epoch with the lowest such loss are restored at the end.

    ``callback(epoch, batch_index, loss)`` is called after each batch if given.
    """
    X, y = as_training_arrays(model, train_set)
    N = y.shape[0]
    if N == 0:
        raise ValueError("empty training set")
    rng = make_rng(config.seed)
    params = model.params()
    state = AdamState()
    history = TrainingHistory()
    best, best_loss = None, math.inf
    bs = config.batch_size
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        rate = lr_at(config.schedule, epoch)
        if config.shuffle_each_epoch:
            order = rng.permutation(N)
            Xe, ye = X[order], y[order]
        else:
            Xe, ye = X, y
        sse = 0.0
        for b, start in enumerate(range(0, N, bs)):
            Xb, yb = Xe[start:start + bs], ye[start:start + bs]
            pred, cache = forward(model, Xb)
            loss, dy = mse_loss(pred, yb)
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch, b, loss)
            grads = backward(model, cache, dy)
            state.update(params, grads, rate)
            model.touch()
            sse += loss * yb.shape[0]
            if callback is not None:
                callback(epoch, b, loss)
        epoch_loss = sse / N
        history.losses.append(epoch_loss)
        history.rates.append(rate)
        if epoch_loss < best_loss:
            best_loss, best = epoch_loss, model.snapshot()
            history.best_epoch = epoch
    model.set_params(best)
    model.trained = True
    history.wall_time = time.perf_counter() - t0
    return model, history


def finite_diff_grad(model, batch, step: float = 1e-6) -> dict[str, np.ndarray]:
    """Central-difference estimate of d loss / d params for ``model.loss(X, y)``.

    ``model`` only needs ``params()`` (arrays perturbed in place and restored)
    and ``loss(X, y)``.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    X, y = batch
    out = {}
    for name, p in model.params().items():
        g = np.zeros_like(p, dtype=np.float64)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = model.loss(X, y)
            flat[k] = orig - step
            down = model.loss(X, y)
            flat[k] = orig
            gflat[k] = (up - down) / (2.0 * step)
        out[name] = g
    return out
