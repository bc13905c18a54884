r"""Epsilon-insensitive support vector regression.

The fit solves the dual

.. math:: \min_\beta \tfrac12 \beta^\top K \beta + \varepsilon \sum_i |\beta_i| - y^\top \beta
          \quad\text{s.t.}\quad \sum_i \beta_i = 0,\; -C \le \beta_i \le C

with :math:`\beta_i = \alpha_i - \alpha_i^*`, written in the usual 2N-variable
form (``alpha`` and ``alpha*`` each boxed in ``[0, C]``) and solved by
two-coefficient sequential minimal optimisation with second-order working-set
selection. Predictions are :math:`f(x) = \sum_i \beta_i K(x_i, x) + b`.

``qp_oracle_fit`` solves the same dual by enumerating every active set; it
is exponential in N and only meant for cross-checking on tiny problems.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field, replace

import numpy as np

KERNELS = ("linear", "polynomial", "rbf", "sigmoid")
_TAU = 1e-12


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, duality_gap: float, violation: float):
        super().__init__(f"{message} (duality gap {duality_gap:.3e}, KKT violation {violation:.3e})")
        self.duality_gap = duality_gap
        self.violation = violation


@dataclass(frozen=True)
class Kernel:
    """``gamma=None`` means 1 / (n_features * Var(X)), resolved at fit time."""

    kind: str = "rbf"
    degree: int = 3
    gamma: float | None = None
    coef0: float = 0.0

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise ValueError(f"unknown kernel {self.kind!r}; choose from {KERNELS}")
        if self.degree < 1:
            raise ValueError("degree must be >= 1")
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError("gamma must be positive")

    def resolve(self, X: np.ndarray) -> "Kernel":
        if self.gamma is not None:
            return self
        var = float(np.var(X))
        gamma = 1.0 / (X.shape[1] * var) if var > 0 else 1.0
        return replace(self, gamma=gamma)

    def _gamma(self) -> float:
        if self.gamma is None:
            raise ValueError("kernel gamma is unresolved; call resolve(X) first")
        return self.gamma

    def matrix(self, A, B) -> np.ndarray:
        A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        B = np.atleast_2d(np.asarray(B, dtype=np.float64))
        if A.shape[1] != B.shape[1]:
            raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
        if self.kind == "rbf":
            sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * (A @ B.T)
            return np.exp(-self._gamma() * np.maximum(sq, 0.0))
        dot = A @ B.T
        if self.kind == "linear":
            return dot
        if self.kind == "polynomial":
            return (self._gamma() * dot + self.coef0) ** self.degree
        return np.tanh(self._gamma() * dot + self.coef0)

    def to_dict(self) -> dict:
        return asdict(self)


def kernel_eval(kernel: Kernel, x, x2) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    x2 = np.asarray(x2, dtype=np.float64).reshape(-1)
    if x.shape != x2.shape:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {x2.shape[0]}")
    if kernel.kind == "rbf":
        d = x - x2
        return float(np.exp(-kernel._gamma() * (d @ d)))
    dot = float(x @ x2)
    if kernel.kind == "linear":
        return dot
    if kernel.kind == "polynomial":
        return (kernel._gamma() * dot + kernel.coef0) ** kernel.degree
    return float(np.tanh(kernel._gamma() * dot + kernel.coef0))


def eps_loss(z, epsilon: float):
    """max(0, |z| - epsilon), elementwise."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    return np.maximum(np.abs(np.asarray(z, dtype=np.float64)) - epsilon, 0.0)


@dataclass(frozen=True)
class SvrConfig:
    C: float = 1.0
    epsilon: float = 0.01
    kernel: Kernel = field(default_factory=lambda: Kernel("rbf"))
    tol: float = 1e-6
    max_iter: int = 200_000

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be positive")
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be >= 0")
        if not self.tol > 0 or self.max_iter < 1:
            raise ValueError("tol must be positive and max_iter >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SvrConfig":
        d = dict(d)
        k = d.pop("kernel", {})
        if not isinstance(k, Kernel):
            k = Kernel(**k) if isinstance(k, dict) else Kernel(str(k))
        return cls(kernel=k, **d)


@dataclass(eq=False)
class SvrModel:
    """Support inputs with signed dual coefficients (alpha - alpha*) and bias."""

    support_vectors: np.ndarray
    coef: np.ndarray
    bias: float
    kernel: Kernel
    C: float
    epsilon: float
    support: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    n_train: int = 0
    dual_objective: float = float("nan")
    n_iter: int = 0
    trained: bool = True

    kind = "svr"

    def __post_init__(self):
        self.support_vectors = np.atleast_2d(np.asarray(self.support_vectors, dtype=np.float64))
        self.coef = np.asarray(self.coef, dtype=np.float64).reshape(-1)
        self.support = np.asarray(self.support, dtype=int).reshape(-1)
        if self.coef.size == 0:
            self.support_vectors = self.support_vectors.reshape(0, self.support_vectors.shape[-1])
        if self.support_vectors.shape[0] != self.coef.shape[0]:
            raise ValueError("one coefficient per support vector required")

    @property
    def label(self) -> str:
        return self.kernel.kind.capitalize()

    def config(self) -> dict:
        return {"kernel": self.kernel.to_dict(), "C": self.C, "epsilon": self.epsilon}

    def dual_coef(self) -> np.ndarray:
        """Coefficient for every training row (zero off the support)."""
        out = np.zeros(self.n_train)
        out[self.support] = self.coef
        return out

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.coef.size == 0:
            return np.full(X.shape[0], self.bias)
        return self.kernel.matrix(X, self.support_vectors) @ self.coef + self.bias


def svr_predict(model: SvrModel, x) -> float:
    return float(model.predict(np.asarray(x, dtype=np.float64).reshape(1, -1))[0])


def dual_objective(K: np.ndarray, y: np.ndarray, beta: np.ndarray, epsilon: float) -> float:
    return float(0.5 * beta @ K @ beta + epsilon * np.abs(beta).sum() - y @ beta)


def duality_gap(K, y, beta, bias, C, epsilon) -> float:
    f = K @ beta + bias
    primal = 0.5 * beta @ K @ beta + C * eps_loss(f - y, epsilon).sum()
    return float(primal + dual_objective(K, y, beta, epsilon))


def _check_xy(X, y):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y differ in row count")
    if X.shape[0] < 2:
        raise ValueError("need at least 2 training rows")
    return X, y


def _build_model(X, y, K, beta, bias, kernel, config, n_iter):
    sv = np.flatnonzero(beta != 0.0)
    return SvrModel(support_vectors=X[sv], coef=beta[sv], bias=float(bias), kernel=kernel,
                    C=config.C, epsilon=config.epsilon, support=sv, n_train=len(y),
                    dual_objective=dual_objective(K, y, beta, config.epsilon), n_iter=n_iter)


def svr_fit(X, y, config: SvrConfig) -> SvrModel:
    X, y = _check_xy(X, y)
    kernel = config.kernel.resolve(X)
    K = kernel.matrix(X, X)
    n = y.shape[0]
    C, eps = config.C, config.epsilon

    s = np.concatenate([np.ones(n), -np.ones(n)])
    a = np.zeros(2 * n)
    G = np.concatenate([eps - y, eps + y])  # gradient of the 2n-variable dual at a = 0
    diagK = np.diag(K)
    QD = np.concatenate([diagK, diagK])

    def q_row(t: int) -> np.ndarray:
        k = K[t % n]
        return s[t] * s * np.concatenate([k, k])

    n_iter = 0
    violation = np.inf
    while True:
        yG = s * G
        up = ((s > 0) & (a < C)) | ((s < 0) & (a > 0))
        low = ((s > 0) & (a > 0)) | ((s < 0) & (a < C))
        score_up = np.where(up, -yG, -np.inf)
        i = int(np.argmax(score_up))
        gmax = score_up[i]
        gmax2 = np.max(np.where(low, yG, -np.inf))
        violation = gmax + gmax2
        if violation < config.tol:
            break
        if n_iter >= config.max_iter:
            beta = a[:n] - a[n:]
            bias = _bias(a, s, G, C)
            raise ConvergenceError(f"SMO did not converge in {config.max_iter} iterations",
                                   duality_gap(K, y, beta, bias, C, eps), float(violation))
        Qi = q_row(i)
        grad_diff = gmax + yG
        cand = low & (grad_diff > 0)
        quad = QD[i] + QD - 2.0 * s[i] * s * Qi
        quad = np.where(quad > 0, quad, _TAU)
        obj = np.where(cand, -(grad_diff ** 2) / quad, np.inf)
        j = int(np.argmin(obj))
        Qj = q_row(j)

        ai_old, aj_old = a[i], a[j]
        if s[i] != s[j]:
            qc = QD[i] + QD[j] + 2.0 * Qi[j]
            qc = qc if qc > 0 else _TAU
            delta = (-G[i] - G[j]) / qc
            diff = a[i] - a[j]
            a[i] += delta
            a[j] += delta
            if diff > 0:
                if a[j] < 0:
                    a[j], a[i] = 0.0, diff
            elif a[i] < 0:
                a[i], a[j] = 0.0, -diff
            if diff > 0:
                if a[i] > C:
                    a[i], a[j] = C, C - diff
            elif a[j] > C:
                a[j], a[i] = C, C + diff
        else:
            qc = QD[i] + QD[j] - 2.0 * Qi[j]
            qc = qc if qc > 0 else _TAU
            delta = (G[i] - G[j]) / qc
            total = a[i] + a[j]
            a[i] -= delta
            a[j] += delta
            if total > C:
                if a[i] > C:
                    a[i], a[j] = C, total - C
            elif a[j] < 0:
                a[j], a[i] = 0.0, total
            if total > C:
                if a[j] > C:
                    a[j], a[i] = C, total - C
            elif a[i] < 0:
                a[i], a[j] = 0.0, total
        G += Qi * (a[i] - ai_old) + Qj * (a[j] - aj_old)
        n_iter += 1

    bias = _bias(a, s, G, C)
    beta = a[:n] - a[n:]
    return _build_model(X, y, K, beta, bias, kernel, config, n_iter)


def _bias(a, s, G, C) -> float:
    """b = -y_t G_t averaged over free variables, else the midpoint of the feasible interval."""
    yG = s * G
    free = (a > 0) & (a < C)
    if free.any():
        return float(-yG[free].mean())
    up = ((s > 0) & (a < C)) | ((s < 0) & (a > 0))
    low = ((s > 0) & (a > 0)) | ((s < 0) & (a < C))
    lb = np.max(np.where(up, -yG, -np.inf))
    ub = np.min(np.where(low, -yG, np.inf))
    return float(0.5 * (lb + ub))


MAX_ORACLE_ROWS = 10


def qp_oracle_fit(X, y, config: SvrConfig, tol: float = 1e-9) -> SvrModel:
    """Exact dual solution by exhaustive active-set enumeration (N <= 10).

    Every row is assigned one of five states (beta = 0, beta = +C, beta = -C,
    free positive on the lower tube wall, free negative on the upper wall).
    For each assignment the free coefficients and the bias follow from a
    linear system; assignments satisfying all KKT conditions are kept and the
    lowest dual objective among them is returned.
    """
    X, y = _check_xy(X, y)
    n = y.shape[0]
    if n > MAX_ORACLE_ROWS:
        raise ValueError(f"oracle refuses N={n} > {MAX_ORACLE_ROWS}: cost grows as 5^N")
    kernel = config.kernel.resolve(X)
    K = kernel.matrix(X, X)
    C, eps = config.C, config.epsilon
    scale = max(1.0, float(np.abs(y).max()), float(np.abs(K).max()) * C)
    atol = tol * scale

    best = None
    idx = np.arange(n)
    for k in range(n + 1):
        fixed_vals = _patterns((0.0, C, -C), n - k)
        signs = _patterns((1.0, -1.0), k)
        for F in itertools.combinations(range(n), k):
            F = np.array(F, dtype=int)
            R = np.setdiff1d(idx, F)
            # candidates: every (sign pattern on F) x (bound pattern on R)
            S = np.repeat(signs, len(fixed_vals), axis=0)
            B_R = np.tile(fixed_vals, (len(signs), 1))
            if k == 0:
                cands = _oracle_no_free(K, y, B_R, R, eps, atol)
            else:
                cands = _oracle_free(K, y, B_R, S, F, R, C, eps, atol)
            if cands is None:
                continue
            beta, bias = cands
            objs = 0.5 * np.einsum("ci,ij,cj->c", beta, K, beta) + eps * np.abs(beta).sum(1) - beta @ y
            c = int(np.argmin(objs))
            if best is None or objs[c] < best[0] - atol:
                best = (objs[c], beta[c], bias[c])
    if best is None:
        raise ConvergenceError("no KKT point found by enumeration", np.nan, np.nan)
    _, beta, bias = best
    return _build_model(X, y, K, beta, bias, kernel, config, 0)


def _patterns(values, k: int) -> np.ndarray:
    rows = list(itertools.product(values, repeat=k))
    return np.array(rows, dtype=np.float64).reshape(len(rows), k)


def _oracle_no_free(K, y, B_R, R, eps, atol):
    beta = np.zeros((len(B_R), len(y)))
    beta[:, R] = B_R
    ok = np.abs(beta.sum(1)) <= atol
    Kb = beta @ K.T
    lo_state = y - eps - Kb  # b >= y - eps - Kb  when beta = 0 or -C ; b <= ... when +C
    hi_state = y + eps - Kb
    lower = np.where(beta < 0, hi_state, np.where(beta > 0, -np.inf, lo_state))
    upper = np.where(beta > 0, lo_state, np.where(beta < 0, np.inf, hi_state))
    lb, ub = lower.max(1), upper.min(1)
    ok &= lb <= ub + atol
    if not ok.any():
        return None
    lb, ub = lb[ok], ub[ok]
    bias = np.where(np.isfinite(lb) & np.isfinite(ub), 0.5 * (lb + ub), np.where(np.isfinite(lb), lb, ub))
    return beta[ok], bias


def _oracle_free(K, y, B_R, S, F, R, C, eps, atol):
    k = len(F)
    A = np.zeros((k + 1, k + 1))
    A[:k, :k] = K[np.ix_(F, F)]
    A[:k, k] = 1.0
    A[k, :k] = 1.0
    rhs = np.empty((len(S), k + 1))
    rhs[:, :k] = y[F] - S * eps - B_R @ K[np.ix_(R, F)] if len(R) else y[F] - S * eps
    rhs[:, k] = -B_R.sum(1)
    sol = rhs @ np.linalg.pinv(A).T
    ok = np.abs(sol @ A.T - rhs).max(1) <= atol
    bF, bias = sol[:, :k], sol[:, k]
    sb = S * bF
    ok &= np.all((sb >= -atol) & (sb <= C + atol), axis=1)
    beta = np.zeros((len(S), len(y)))
    beta[:, F] = bF
    beta[:, R] = B_R
    r = beta @ K.T + bias[:, None] - y
    if len(R):
        rR = r[:, R]
        okR = np.where(B_R > 0, rR <= -eps + atol,
                       np.where(B_R < 0, rR >= eps - atol, np.abs(rR) <= eps + atol))
        ok &= okR.all(1)
    if not ok.any():
        return None
    beta = beta[ok]
    beta[np.abs(beta) <= atol] = 0.0
    return beta, bias[ok]
