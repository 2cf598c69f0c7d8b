"""Discrete-time stochastic control systems x+ = f(x, u, v).

Arrays follow one convention throughout the package: the last axis is the
vector dimension, leading axes are batch axes. ``SystemSpec.dynamics`` and
``SystemSpec.cost`` broadcast over batch axes; ``step`` and ``stage_cost``
are the checked single-point entry points.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ContractError, DimensionError

_PROB_TOL = 1e-12


def _as_matrix(a, name):
    a = np.array(a, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2:
        raise DimensionError(name, "2-d matrix", a.shape)
    return a


def _as_vector(a, name):
    a = np.array(a, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1)
    if a.ndim != 1:
        raise DimensionError(name, "1-d vector", a.shape)
    return a


def _frozen(a):
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """Distribution of the i.i.d. random input v.

    ``kind`` is one of ``"gaussian"``, ``"uniform_box"``, ``"discrete"``.
    Build instances through the classmethods.
    """

    kind: str
    mean: np.ndarray
    covariance: Optional[np.ndarray] = None
    half_widths: Optional[np.ndarray] = None
    support: Optional[np.ndarray] = None
    probs: Optional[np.ndarray] = None

    @classmethod
    def gaussian(cls, mean, covariance):
        cov = _as_matrix(covariance, "covariance")
        mean = _as_vector(mean, "mean")
        if cov.shape != (mean.size, mean.size):
            raise DimensionError("covariance", (mean.size, mean.size), cov.shape)
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise ContractError("covariance must be symmetric")
        if cov.size and np.linalg.eigvalsh(cov).min() < -1e-12:
            raise ContractError("covariance must be positive semi-definite")
        return cls("gaussian", _frozen(mean), covariance=_frozen(0.5 * (cov + cov.T)))

    @classmethod
    def uniform_box(cls, center, half_widths):
        center = _as_vector(center, "center")
        hw = _as_vector(half_widths, "half_widths")
        if hw.shape != center.shape:
            raise DimensionError("half_widths", center.shape, hw.shape)
        if np.any(hw < 0):
            raise ContractError("half_widths must be nonnegative")
        return cls("uniform_box", _frozen(center), half_widths=_frozen(hw))

    @classmethod
    def discrete(cls, support, probs):
        support = np.array(support, dtype=float)
        if support.ndim == 1:
            support = support[:, None]
        probs = _as_vector(probs, "probs")
        if support.ndim != 2 or support.shape[0] != probs.size:
            raise DimensionError("support", (probs.size, "q"), support.shape)
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > _PROB_TOL:
            raise ContractError("discrete probabilities must be nonnegative and sum to 1")
        mean = probs @ support
        return cls("discrete", _frozen(mean), support=_frozen(support), probs=_frozen(probs))

    @classmethod
    def zero(cls, q):
        return cls.discrete(np.zeros((1, q)), [1.0])

    @property
    def dim(self):
        return self.mean.size

    @property
    def covariance_matrix(self):
        if self.kind == "gaussian":
            return self.covariance
        if self.kind == "uniform_box":
            return np.diag(self.half_widths ** 2 / 3.0)
        centered = self.support - self.mean
        return (centered * self.probs[:, None]).T @ centered

    @property
    def second_moment(self):
        """E[v v^T]."""
        return self.covariance_matrix + np.outer(self.mean, self.mean)

    def is_zero_mean(self, atol=1e-12):
        return bool(np.all(np.abs(self.mean) <= atol))

    def to_dict(self):
        if self.kind == "gaussian":
            return {"kind": "gaussian", "mean": self.mean.tolist(),
                    "covariance": self.covariance.tolist()}
        if self.kind == "uniform_box":
            return {"kind": "uniform_box", "center": self.mean.tolist(),
                    "half_widths": self.half_widths.tolist()}
        return {"kind": "discrete", "support": self.support.tolist(),
                "probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, d):
        kind = d.get("kind")
        if kind == "gaussian":
            return cls.gaussian(d["mean"], d["covariance"])
        if kind == "uniform_box":
            return cls.uniform_box(d["center"], d["half_widths"])
        if kind == "discrete":
            return cls.discrete(d["support"], d["probs"])
        raise ContractError(f"unknown noise kind {kind!r}")


@dataclass(frozen=True, eq=False)
class SigmaMetric:
    """State-space metric the recurrence statements revolve around."""

    kind: str = "euclidean"
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None
    func: Optional[Callable] = None

    @classmethod
    def euclidean(cls):
        return cls("euclidean")

    @classmethod
    def distance_to_box(cls, lo, hi):
        lo = _as_vector(lo, "lo")
        hi = _as_vector(hi, "hi")
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ContractError("box needs lo <= hi with matching shapes")
        return cls("distance_to_box", _frozen(lo), _frozen(hi))

    @classmethod
    def custom(cls, func):
        return cls("custom", func=func)

    def __call__(self, x):
        return sigma(self, x)


def sigma(metric: SigmaMetric, x):
    x = np.asarray(x, dtype=float)
    if metric.kind == "euclidean":
        return np.linalg.norm(x, axis=-1)
    if metric.kind == "distance_to_box":
        gap = np.maximum(metric.lo - x, 0.0) + np.maximum(x - metric.hi, 0.0)
        return np.linalg.norm(gap, axis=-1)
    out = np.asarray(metric.func(x), dtype=float)
    if np.any(out < 0):
        raise ContractError("sigma must be nonnegative")
    return out


def matvec(M, X):
    """M x for every row x of X. Unlike ``X @ M.T`` the result for a row does
    not depend on how many rows are stacked with it, which keeps single
    rollouts and batched ensembles bitwise identical."""
    X = np.asarray(X, dtype=float)
    return (X[..., None, :] * M).sum(axis=-1)


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """A stochastic control system with its stage cost and noise model.

    Linear systems carry ``A, B, L``; nonlinear ones carry a batched callable
    ``f(X, U, V)``. Quadratic costs carry ``Q, R``; otherwise a batched
    callable ``cost_fn(X, U)``. ``state_box`` is informational only and is
    never enforced on the dynamics.
    """

    n: int
    m: int
    q: int
    noise: NoiseSpec
    A: Optional[np.ndarray] = None
    B: Optional[np.ndarray] = None
    L: Optional[np.ndarray] = None
    f: Optional[Callable] = None
    Q: Optional[np.ndarray] = None
    R: Optional[np.ndarray] = None
    cost_fn: Optional[Callable] = None
    state_box: Optional[tuple] = None
    name: str = ""
    params: dict = field(default_factory=dict)

    @property
    def is_linear(self):
        return self.A is not None

    @property
    def is_quadratic(self):
        return self.Q is not None

    def dynamics(self, X, U, V):
        if self.is_linear:
            return matvec(self.A, X) + matvec(self.B, U) + matvec(self.L, V)
        return np.asarray(self.f(X, U, V), dtype=float)

    def cost(self, X, U):
        if self.is_quadratic:
            return (np.einsum("...i,ij,...j->...", X, self.Q, X)
                    + np.einsum("...i,ij,...j->...", U, self.R, U))
        return np.asarray(self.cost_fn(X, U), dtype=float)


def linear_system(A, B, L, Q, R, noise, state_box=None, name="linear"):
    A = _as_matrix(A, "A")
    n = A.shape[0]
    if A.shape != (n, n):
        raise DimensionError("A", (n, n), A.shape)
    B = np.array(B, dtype=float)
    if B.ndim < 2:
        B = B.reshape(n, -1)
    L = np.array(L, dtype=float)
    if L.ndim < 2:
        L = L.reshape(n, -1)
    if B.shape[0] != n:
        raise DimensionError("B", (n, "m"), B.shape)
    if L.shape[0] != n:
        raise DimensionError("L", (n, "q"), L.shape)
    m, q = B.shape[1], L.shape[1]
    Q = _as_matrix(Q, "Q")
    R = np.array(R, dtype=float).reshape(m, m)
    if Q.shape != (n, n):
        raise DimensionError("Q", (n, n), Q.shape)
    if noise.dim != q:
        raise DimensionError("noise", q, noise.dim)
    check_quadratic_cost(Q, R)
    return SystemSpec(n=n, m=m, q=q, noise=noise, A=_frozen(A), B=_frozen(B), L=_frozen(L),
                      Q=_frozen(Q), R=_frozen(R), state_box=state_box, name=name)


def check_quadratic_cost(Q, R):
    if not np.allclose(Q, Q.T, atol=1e-12):
        raise ContractError("Q must be symmetric")
    if Q.size and np.linalg.eigvalsh(Q).min() < -1e-12:
        raise ContractError("Q must be positive semi-definite")
    if not np.allclose(R, R.T, atol=1e-12):
        raise ContractError("R must be symmetric")
    if R.size and np.linalg.eigvalsh(R).min() <= 0:
        raise ContractError("R must be positive definite")


def nonlinear_system(f, n, m, noise, Q=None, R=None, cost_fn=None, state_box=None,
                     name="nonlinear", params=None):
    if (Q is None) == (cost_fn is None):
        raise ContractError("give either (Q, R) or cost_fn")
    if Q is not None:
        Q = _frozen(_as_matrix(Q, "Q"))
        R = _frozen(np.array(R, dtype=float).reshape(m, m))
        check_quadratic_cost(Q, R)
    return SystemSpec(n=n, m=m, q=noise.dim, noise=noise, f=f, Q=Q, R=R, cost_fn=cost_fn,
                      state_box=state_box, name=name, params=dict(params or {}))


def _check_point(spec, x, u, v=None):
    x = _as_vector(x, "x") if np.ndim(x) else np.array([float(x)])
    u = np.array(u, dtype=float).reshape(-1)
    if x.size != spec.n:
        raise DimensionError("x", spec.n, x.size)
    if u.size != spec.m:
        raise DimensionError("u", spec.m, u.size)
    if v is None:
        return x, u
    v = np.array(v, dtype=float).reshape(-1)
    if v.size != spec.q:
        raise DimensionError("v", spec.q, v.size)
    return x, u, v


def step(spec: SystemSpec, x, u, v):
    x, u, v = _check_point(spec, x, u, v)
    return spec.dynamics(x, u, v)


def stage_cost(spec: SystemSpec, x, u):
    x, u = _check_point(spec, x, u)
    val = float(spec.cost(x, u))
    if val < 0:
        raise ContractError(f"stage cost must be nonnegative, got {val}")
    return val


def batch_stage_cost(spec, X, U):
    val = spec.cost(X, U)
    if np.any(val < 0):
        raise ContractError("stage cost must be nonnegative")
    return val


def spec_to_dict(spec: SystemSpec):
    """Config-format dictionary (matrices as row-major nested lists)."""
    d = {"noise": spec.noise.to_dict()}
    if spec.is_linear:
        d.update(type="linear", A=spec.A.tolist(), B=spec.B.tolist(), L=spec.L.tolist())
    elif spec.name and spec.name.startswith("benchmark:"):
        d.update(type="benchmark", name=spec.name.split(":", 1)[1], params=dict(spec.params))
    else:
        raise ContractError("callable dynamics cannot be serialized; register a benchmark")
    if spec.is_quadratic:
        d["cost"] = {"type": "quadratic", "Q": spec.Q.tolist(), "R": spec.R.tolist()}
    if spec.state_box is not None:
        d["state_box"] = [list(map(float, b)) for b in spec.state_box]
    return d


def spec_from_dict(d):
    from .benchmarks import make_benchmark

    noise = NoiseSpec.from_dict(d["noise"])
    box = d.get("state_box")
    if box is not None:
        box = tuple(tuple(map(float, b)) for b in box)
    kind = d.get("type", "linear")
    if kind == "linear":
        cost = d["cost"]
        return linear_system(d["A"], d["B"], d["L"], cost["Q"], cost["R"], noise, state_box=box)
    if kind == "benchmark":
        return make_benchmark(d["name"], noise, state_box=box, **d.get("params", {}))
    raise ContractError(f"unknown system type {kind!r}")
