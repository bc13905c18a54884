"""Dense primitives and the two neural architectures (10-h-1 MLP, LSTM + dense readout).

Arrays are float64 numpy arrays. Shapes are checked explicitly at every public
entry point; nothing relies on implicit broadcasting between model and data.
Forward passes return a cache that the matching backward pass consumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

N_INPUTS = 10
GATES = ("g", "i", "f", "o")


class ShapeError(ValueError):
    pass


class StaleCacheError(ValueError):
    """A backward pass was given a cache from another model or an older parameter state."""


def _check(arr: np.ndarray, shape: tuple, what: str) -> None:
    if arr.shape != shape:
        raise ShapeError(f"{what}: expected shape {shape}, got {arr.shape}")


# -- activations --------------------------------------------------------------

def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def apply_activation(kind: str, z):
    z = np.asarray(z, dtype=np.float64)
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "identity":
        return z.copy()
    if kind == "tanh":
        return np.tanh(z)
    if kind == "sigmoid":
        return sigmoid(z)
    raise ValueError(f"unknown activation {kind!r}")


def activation_derivative(kind: str, z, a=None):
    """d a / d z evaluated at ``z`` (``a`` may be passed to avoid recomputation).

    The ReLU derivative at exactly zero is taken as 0.
    """
    z = np.asarray(z, dtype=np.float64)
    if kind == "relu":
        return (z > 0).astype(np.float64)
    if kind == "identity":
        return np.ones_like(z)
    if a is None:
        a = apply_activation(kind, z)
    if kind == "tanh":
        return 1.0 - a * a
    if kind == "sigmoid":
        return a * (1.0 - a)
    raise ValueError(f"unknown activation {kind!r}")


# -- initialisation -----------------------------------------------------------

def make_rng(seed) -> np.random.Generator:
    """Seeded stream; a ``Generator`` is passed through untouched."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def init_weights(scheme: str, shape, rng: np.random.Generator) -> np.ndarray:
    """Draw a weight array of ``shape`` = (fan_out, fan_in).

    ``he`` is N(0, 2/fan_in), ``xavier`` is N(0, 2/(fan_in + fan_out)).
    """
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    if not shape or any(s <= 0 for s in shape):
        raise ShapeError(f"shape dimensions must be positive, got {shape}")
    if scheme == "zeros":
        return np.zeros(shape)
    fan_out = shape[0]
    fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
    if scheme == "he":
        std = np.sqrt(2.0 / fan_in)
    elif scheme == "xavier":
        std = np.sqrt(2.0 / (fan_in + fan_out))
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    return rng.normal(0.0, std, size=shape)


class _Model:
    """Bookkeeping shared by every trainable model."""

    kind = ""
    trained: bool
    version: int

    def params(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def touch(self) -> None:
        """Mark parameters as modified; outstanding forward caches become stale."""
        self.version += 1

    def set_params(self, values: dict[str, np.ndarray]) -> None:
        for name, arr in self.params().items():
            src = np.asarray(values[name], dtype=np.float64)
            _check(src, arr.shape, name)
            arr[...] = src
        self.touch()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params().items()}

    def n_params(self) -> int:
        return sum(p.size for p in self.params().values())

    def loss(self, X, y) -> float:
        """Mean squared error of the model over a batch."""
        pred = self.predict(X)
        y = np.asarray(y, dtype=np.float64).reshape(pred.shape)
        return float(np.mean((pred - y) ** 2))

    def predict(self, X) -> np.ndarray:
        raise NotImplementedError


# -- MLP ----------------------------------------------------------------------

@dataclass(eq=False)
class MlpModel(_Model):
    """One ReLU hidden layer, identity output: y = W2 relu(W1 x + b1) + b2."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    trained: bool = False
    version: int = field(default=0, compare=False)

    kind = "mlp"

    def __post_init__(self):
        for name in ("W1", "b1", "W2", "b2"):
            setattr(self, name, np.array(getattr(self, name), dtype=np.float64))
        h, d = self.W1.shape
        if h < 1:
            raise ShapeError("hidden size must be >= 1")
        _check(self.b1, (h,), "b1")
        _check(self.W2, (1, h), "W2")
        _check(self.b2, (1,), "b2")

    @classmethod
    def init(cls, hidden: int, rng, n_inputs: int = N_INPUTS) -> "MlpModel":
        """He weights into the hidden layer, Xavier into the output, zero biases."""
        rng = make_rng(rng)
        return cls(W1=init_weights("he", (hidden, n_inputs), rng),
                   b1=np.zeros(hidden),
                   W2=init_weights("xavier", (1, hidden), rng),
                   b2=np.zeros(1))

    @classmethod
    def zeros(cls, hidden: int, n_inputs: int = N_INPUTS) -> "MlpModel":
        return cls(np.zeros((hidden, n_inputs)), np.zeros(hidden), np.zeros((1, hidden)), np.zeros(1))

    @property
    def hidden_size(self) -> int:
        return self.W1.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.W1.shape[1]

    @property
    def label(self) -> str:
        return f"{self.n_inputs}-{self.hidden_size}-1"

    def config(self) -> dict:
        return {"hidden_size": self.hidden_size, "n_inputs": self.n_inputs}

    def params(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        y, _ = mlp_forward(self, X if X.ndim == 2 else X[None, :])
        return y


@dataclass
class MlpCache:
    x: np.ndarray
    z: np.ndarray
    a: np.ndarray
    batched: bool
    owner: int
    version: int


def mlp_forward(model: MlpModel, x):
    """Returns ``(y_hat, cache)``; ``x`` is one input vector or a (B, d) batch."""
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    xb = x if batched else x[None, :]
    if xb.ndim != 2 or xb.shape[1] != model.n_inputs:
        raise ShapeError(f"input must have {model.n_inputs} features, got shape {x.shape}")
    z = xb @ model.W1.T + model.b1
    a = np.maximum(z, 0.0)
    y = a @ model.W2[0] + model.b2[0]
    cache = MlpCache(xb, z, a, batched, id(model), model.version)
    return (y if batched else float(y[0])), cache


def _check_cache(model, cache) -> None:
    if cache.owner != id(model) or cache.version != model.version:
        raise StaleCacheError("cache does not belong to the current model parameters")


def mlp_backward(model: MlpModel, cache: MlpCache, dy) -> dict[str, np.ndarray]:
    """Parameter gradients given dL/dy_hat (scalar, or one value per batch row)."""
    _check_cache(model, cache)
    B = cache.x.shape[0]
    dy = np.asarray(dy, dtype=np.float64).reshape(-1)
    if dy.shape != (B,):
        raise ShapeError(f"dL/dy must have {B} entries, got {dy.shape}")
    dW2 = (dy @ cache.a)[None, :]
    db2 = np.array([dy.sum()])
    dz = np.outer(dy, model.W2[0]) * (cache.z > 0)
    return {"W1": dz.T @ cache.x, "b1": dz.sum(axis=0), "W2": dW2, "b2": db2}


# -- LSTM ---------------------------------------------------------------------

@dataclass(eq=False)
class LstmLayer:
    """Gate weights stacked in (g, i, f, o) order: U is (4h, d_in), V is (4h, h), b is (4h,)."""

    U: np.ndarray
    V: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.U = np.array(self.U, dtype=np.float64)
        self.V = np.array(self.V, dtype=np.float64)
        self.b = np.array(self.b, dtype=np.float64)
        four_h, h = self.V.shape
        if four_h != 4 * h or h < 1:
            raise ShapeError(f"V must be (4h, h) with h >= 1, got {self.V.shape}")
        if self.U.ndim != 2 or self.U.shape[0] != 4 * h:
            raise ShapeError(f"U must be (4h, d), got {self.U.shape}")
        _check(self.b, (4 * h,), "b")

    @property
    def hidden_size(self) -> int:
        return self.V.shape[1]

    def gate(self, name: str, kind: str) -> np.ndarray:
        """View of one gate's block of U, V or b."""
        h = self.hidden_size
        k = GATES.index(kind)
        return getattr(self, name)[k * h:(k + 1) * h]


@dataclass(eq=False)
class LstmModel(_Model):
    layers: list
    W_d: np.ndarray
    b_d: np.ndarray
    trained: bool = False
    version: int = 0

    kind = "lstm"

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("an LSTM needs at least one layer")
        self.W_d = np.array(self.W_d, dtype=np.float64)
        self.b_d = np.array(self.b_d, dtype=np.float64)
        h = self.layers[-1].hidden_size
        for lower, upper in zip(self.layers, self.layers[1:]):
            if upper.U.shape[1] != lower.hidden_size:
                raise ShapeError("stacked layer input width must equal the lower layer's hidden size")
        _check(self.W_d, (1, h), "W_d")
        _check(self.b_d, (1,), "b_d")

    @classmethod
    def init(cls, hidden: int, rng, n_inputs: int = N_INPUTS, num_layers: int = 1) -> "LstmModel":
        """Xavier-normal weights (drawn per gate), zero biases."""
        rng = make_rng(rng)
        layers, d = [], n_inputs
        for _ in range(num_layers):
            U = np.vstack([init_weights("xavier", (hidden, d), rng) for _ in GATES])
            V = np.vstack([init_weights("xavier", (hidden, hidden), rng) for _ in GATES])
            layers.append(LstmLayer(U, V, np.zeros(4 * hidden)))
            d = hidden
        return cls(layers, init_weights("xavier", (1, hidden), rng), np.zeros(1))

    @classmethod
    def zeros(cls, hidden: int, n_inputs: int = N_INPUTS, num_layers: int = 1) -> "LstmModel":
        layers, d = [], n_inputs
        for _ in range(num_layers):
            layers.append(LstmLayer(np.zeros((4 * hidden, d)), np.zeros((4 * hidden, hidden)),
                                    np.zeros(4 * hidden)))
            d = hidden
        return cls(layers, np.zeros((1, hidden)), np.zeros(1))

    @property
    def hidden_size(self) -> int:
        return self.layers[-1].hidden_size

    @property
    def n_inputs(self) -> int:
        return self.layers[0].U.shape[1]

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def label(self) -> str:
        return f"{self.n_inputs}-{self.hidden_size}-1"

    def config(self) -> dict:
        return {"hidden_size": self.hidden_size, "n_inputs": self.n_inputs,
                "num_layers": self.num_layers}

    @staticmethod
    def _suffix(layer: int) -> str:
        return "" if layer == 0 else f"_{layer}"

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for k, layer in enumerate(self.layers):
            s = self._suffix(k)
            out["U" + s], out["V" + s], out["b" + s] = layer.U, layer.V, layer.b
        out["W_d"], out["b_d"] = self.W_d, self.b_d
        return out

    def gate_params(self) -> dict[str, np.ndarray]:
        """The fourteen per-gate tensors (U_g, V_g, b_g, ..., W_d, b_d) as views; suffixed per extra layer."""
        return split_gates(self.params(), self.num_layers)

    def predict(self, X) -> np.ndarray:
        """``X`` is (N, d) for one-step sequences or (N, T, d)."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[:, None, :]
        y, _ = lstm_forward(self, X)
        return y


def split_gates(stacked: dict[str, np.ndarray], num_layers: int = 1) -> dict[str, np.ndarray]:
    """Turn stacked U/V/b entries (parameters or gradients) into per-gate views."""
    out = {}
    for k in range(num_layers):
        s = LstmModel._suffix(k)
        h = stacked["V" + s].shape[1]
        for j, g in enumerate(GATES):
            for name in ("U", "V", "b"):
                out[f"{name}_{g}{s}"] = stacked[name + s][j * h:(j + 1) * h]
    out["W_d"], out["b_d"] = stacked["W_d"], stacked["b_d"]
    return out


@dataclass
class StepCache:
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    g: np.ndarray
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray
    h: np.ndarray
    zero_state: bool


def _cell(layer: LstmLayer, x, h_prev, c_prev, zero_state: bool) -> StepCache:
    z = x @ layer.U.T
    z += layer.b
    if not zero_state:
        z += h_prev @ layer.V.T
    h = layer.hidden_size
    g = np.tanh(z[:, :h])
    ifo = sigmoid(z[:, h:])
    i, f, o = ifo[:, :h], ifo[:, h:2 * h], ifo[:, 2 * h:]
    c = c_prev * f + g * i
    tanh_c = np.tanh(c)
    return StepCache(x, h_prev, c_prev, g, i, f, o, c, tanh_c, tanh_c * o, zero_state)


def lstm_cell_step(model: LstmModel, x_t, h_prev, c_prev, layer: int = 0):
    """One cell update; returns ``(h_t, c_t, cache)``.

    g = tanh(U_g x + V_g h + b_g), i/f/o = sigmoid(...), c_t = c_prev*f + g*i,
    h_t = tanh(c_t)*o. Inputs may be single vectors or (B, .) row batches.
    """
    cell = model.layers[layer]
    x_t, h_prev, c_prev = (np.asarray(a, dtype=np.float64) for a in (x_t, h_prev, c_prev))
    batched = x_t.ndim == 2
    xb, hb, cb = (a if batched else a[None, :] for a in (x_t, h_prev, c_prev))
    B, H = xb.shape[0], cell.hidden_size
    _check(xb, (B, cell.U.shape[1]), "x_t")
    _check(hb, (B, H), "h_prev")
    _check(cb, (B, H), "c_prev")
    st = _cell(cell, xb, hb, cb, zero_state=False)
    if batched:
        return st.h, st.c, st
    return st.h[0], st.c[0], st


@dataclass
class LstmCache:
    steps: list  # steps[layer][t] -> StepCache
    batched: bool
    owner: int
    version: int


def lstm_forward(model: LstmModel, sequence):
    """Run the stack over ``sequence`` ((T, d) or (B, T, d)) from zero state.

    Returns ``(y_hat, cache)`` with y_hat = W_d h_T + b_d of the top layer.
    """
    seq = np.asarray(sequence, dtype=np.float64)
    batched = seq.ndim == 3
    sb = seq if batched else seq[None]
    if sb.ndim != 3 or sb.shape[2] != model.n_inputs:
        raise ShapeError(f"sequence must be (T, {model.n_inputs}) or (B, T, {model.n_inputs}), got {seq.shape}")
    B, T, _ = sb.shape
    if T < 1:
        raise ShapeError("sequence must contain at least one step")
    steps = []
    layer_in = [sb[:, t, :] for t in range(T)]
    for layer in model.layers:
        H = layer.hidden_size
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        caches = []
        for t in range(T):
            st = _cell(layer, layer_in[t], h, c, zero_state=(t == 0))
            h, c = st.h, st.c
            caches.append(st)
        steps.append(caches)
        layer_in = [st.h for st in caches]
    y = layer_in[-1] @ model.W_d[0] + model.b_d[0]
    cache = LstmCache(steps, batched, id(model), model.version)
    return (y if batched else float(y[0])), cache


def lstm_backward(model: LstmModel, cache: LstmCache, dy) -> dict[str, np.ndarray]:
    """Backpropagation through time; gradients keyed like ``model.params()``."""
    _check_cache(model, cache)
    if len(cache.steps) != model.num_layers:
        raise StaleCacheError("cache layer count does not match the model")
    top = cache.steps[-1]
    B = top[0].x.shape[0]
    dy = np.asarray(dy, dtype=np.float64).reshape(-1)
    if dy.shape != (B,):
        raise ShapeError(f"dL/dy must have {B} entries, got {dy.shape}")

    grads = {"W_d": (dy @ top[-1].h)[None, :], "b_d": np.array([dy.sum()])}
    T = len(top)
    dh_in = [None] * T  # gradient arriving at each step's output h from above
    dh_in[-1] = np.outer(dy, model.W_d[0])

    for k in range(model.num_layers - 1, -1, -1):
        layer, steps = model.layers[k], cache.steps[k]
        H = layer.hidden_size
        dU = np.zeros_like(layer.U)
        dV = None
        db = np.zeros_like(layer.b)
        dz = np.empty((B, 4 * H))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        dx = [None] * T
        for t in range(T - 1, -1, -1):
            st = steps[t]
            dh = dh_next if dh_in[t] is None else dh_next + dh_in[t]
            dc = dc_next + dh * st.o * (1.0 - st.tanh_c ** 2)
            dz[:, :H] = dc * st.i * (1.0 - st.g ** 2)
            dz[:, H:2 * H] = dc * st.g * st.i * (1.0 - st.i)
            dz[:, 2 * H:3 * H] = dc * st.c_prev * st.f * (1.0 - st.f)
            dz[:, 3 * H:] = dh * st.tanh_c * st.o * (1.0 - st.o)
            dU += dz.T @ st.x
            db += dz.sum(axis=0)
            if st.zero_state:
                dh_next = np.zeros((B, H))
            else:
                if dV is None:
                    dV = dz.T @ st.h_prev
                else:
                    dV += dz.T @ st.h_prev
                dh_next = dz @ layer.V
            dc_next = dc * st.f
            if k > 0:
                dx[t] = dz @ layer.U
        if dV is None:
            # no step saw a non-zero previous state: read-only zero view, no allocation
            dV = np.broadcast_to(0.0, layer.V.shape)
        s = LstmModel._suffix(k)
        grads["U" + s], grads["V" + s], grads["b" + s] = dU, dV, db
        dh_in = dx
    return {name: grads[name] for name in model.params()}
