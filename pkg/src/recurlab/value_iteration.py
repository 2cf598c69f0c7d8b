"""Grid dynamic programming for low-dimensional (n, m <= 2) systems."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss

from .errors import ContractError, GridExitError, NumericalError

MAX_DIM = 2
_EDGE_TOL = 1e-12
_CHUNK = 2_000_000


@dataclass(frozen=True, eq=False)
class StateGrid:
    lo: np.ndarray
    hi: np.ndarray
    counts: tuple

    @classmethod
    def uniform(cls, bounds, counts):
        bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
        counts = tuple(int(c) for c in np.atleast_1d(counts))
        if len(counts) == 1 and bounds.shape[0] > 1:
            counts = counts * bounds.shape[0]
        if bounds.shape != (len(counts), 2):
            raise ContractError("bounds must be (n, 2) matching counts")
        if len(counts) > MAX_DIM:
            raise ContractError(f"grid DP supports n <= {MAX_DIM}")
        if not np.all(np.isfinite(bounds)) or np.any(bounds[:, 0] >= bounds[:, 1]):
            raise ContractError("grid bounds must be finite with lo < hi")
        if min(counts) < 2:
            raise ContractError("each axis needs at least 2 points")
        return cls(bounds[:, 0].copy(), bounds[:, 1].copy(), counts)

    @property
    def n(self):
        return len(self.counts)

    @property
    def axes(self):
        return [np.linspace(l, h, c) for l, h, c in zip(self.lo, self.hi, self.counts)]

    @property
    def nodes(self):
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    @property
    def size(self):
        return int(np.prod(self.counts))

    def outside(self, X):
        X = np.asarray(X, dtype=float)
        return np.any((X < self.lo - _EDGE_TOL) | (X > self.hi + _EDGE_TOL), axis=-1)

    def interpolate(self, values, X):
        """Multilinear interpolation with clamping to the grid hull."""
        X = np.asarray(X, dtype=float)
        values = np.asarray(values, dtype=float)
        if self.n == 1:
            return np.interp(X[..., 0], self.axes[0], values)
        shape = X.shape[:-1]
        Xf = np.clip(X.reshape(-1, self.n), self.lo, self.hi)
        idx, wts = [], []
        for d, (l, h, c) in enumerate(zip(self.lo, self.hi, self.counts)):
            t = (Xf[:, d] - l) / (h - l) * (c - 1)
            i = np.minimum(np.floor(t).astype(int), c - 2)
            idx.append(i)
            wts.append(t - i)
        V = values.reshape(self.counts)
        out = np.zeros(Xf.shape[0])
        for corner in itertools.product((0, 1), repeat=self.n):
            w = np.ones(Xf.shape[0])
            for d, bit in enumerate(corner):
                w = w * (wts[d] if bit else 1.0 - wts[d])
            out += w * V[tuple(i + bit for i, bit in zip(idx, corner))]
        return out.reshape(shape)


@dataclass(frozen=True, eq=False)
class NoiseQuadrature:
    nodes: np.ndarray
    weights: np.ndarray

    def expect(self, values):
        """Weighted sum over the last axis."""
        return values @ self.weights


def make_quadrature(noise, order=8):
    """Gauss-Hermite for Gaussian noise, Gauss-Legendre for uniform boxes,
    the exact support for discrete noise (tensor products across axes)."""
    q = noise.dim
    if noise.kind == "discrete":
        return NoiseQuadrature(np.array(noise.support), np.array(noise.probs))
    if q == 0:
        return NoiseQuadrature(np.zeros((1, 0)), np.ones(1))
    if noise.kind == "gaussian":
        z, w = hermegauss(order)
        w = w / w.sum()
    else:
        z, w = leggauss(order)
        w = w / w.sum()
    Z = np.array(list(itertools.product(z, repeat=q)))
    W = np.prod(np.array(list(itertools.product(w, repeat=q))), axis=1)
    if noise.kind == "gaussian":
        ev, U = np.linalg.eigh(noise.covariance)
        S = U * np.sqrt(np.clip(ev, 0.0, None))
        nodes = noise.mean + Z @ S.T
    else:
        nodes = noise.mean + Z * noise.half_widths
    return NoiseQuadrature(nodes, W / W.sum())


def control_grid(box, points=51):
    """Uniform control grid over a box, ordered by (|u|, lexicographic) so that
    a first-occurrence argmin implements the tie-break rule."""
    box = np.atleast_2d(np.asarray(box, dtype=float))
    m = box.shape[0]
    if m > MAX_DIM:
        raise ContractError(f"control grids support m <= {MAX_DIM}")
    axes = [np.linspace(l, h, points) for l, h in box]
    U = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)
    return order_controls(U)


def order_controls(U):
    U = np.asarray(U, dtype=float)
    keys = [U[:, j] for j in reversed(range(U.shape[1]))] + [np.linalg.norm(U, axis=1)]
    return U[np.lexsort(keys)]


@dataclass(frozen=True, eq=False)
class GridValueFunction:
    grid: StateGrid
    values: np.ndarray
    gamma: float
    sup_residual: float = np.inf
    boundary_policy: str = "clamp"
    clamped: Optional[np.ndarray] = None
    iterations: int = 0

    def __post_init__(self):
        if self.boundary_policy not in ("clamp", "extrapolation-forbidden"):
            raise ContractError(f"unknown boundary policy {self.boundary_policy!r}")

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        if self.boundary_policy != "clamp" and np.any(self.grid.outside(X)):
            raise GridExitError(node=None, control=None, noise_node=None)
        return self.grid.interpolate(self.values, X)

    @property
    def domain(self):
        return self.grid

    def expected_next_value(self, spec, X, U, quad):
        X, U = np.asarray(X, dtype=float), np.asarray(U, dtype=float)
        succ = spec.dynamics(X[..., None, :], U[..., None, :], quad.nodes)
        return quad.expect(self(succ))

    def to_text(self):
        lines = ["# recurlab grid value function", f"dims {self.grid.n}",
                 f"gamma {float(self.gamma)!r}", f"sup_residual {float(self.sup_residual)!r}",
                 f"boundary {self.boundary_policy}", f"iterations {self.iterations}"]
        for d in range(self.grid.n):
            lines.append(f"axis {d} {float(self.grid.lo[d])!r} {float(self.grid.hi[d])!r} {self.grid.counts[d]}")
        lines.append(f"values {self.values.size}")
        lines.extend(f"{v:.17g}" for v in self.values)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        rows = [r for r in text.splitlines() if r and not r.startswith("#")]
        header, bounds, counts = {}, [], []
        i = 0
        while not rows[i].startswith("values"):
            key, *rest = rows[i].split()
            if key == "axis":
                bounds.append((float(rest[1]), float(rest[2])))
                counts.append(int(rest[3]))
            else:
                header[key] = rest[0]
            i += 1
        size = int(rows[i].split()[1])
        values = np.array([float(v) for v in rows[i + 1:i + 1 + size]])
        return cls(StateGrid.uniform(bounds, counts), values, float(header["gamma"]),
                   float(header["sup_residual"]), header["boundary"],
                   iterations=int(header.get("iterations", 0)))


def bellman_backup(V: GridValueFunction, spec, controls, quad):
    """One application of the discretized Bellman operator at every node."""
    U = order_controls(np.atleast_2d(controls))
    if U.shape[0] == 0:
        raise ContractError("control grid is empty")
    X = V.grid.nodes
    G, K = U.shape[0], quad.weights.size
    chunk = max(1, _CHUNK // (G * K))
    out = np.empty(X.shape[0])
    clamped = np.zeros(X.shape[0], dtype=bool)
    forbid = V.boundary_policy != "clamp"
    for s in range(0, X.shape[0], chunk):
        Xc = X[s:s + chunk]
        succ = spec.dynamics(Xc[:, None, None, :], U[None, :, None, :], quad.nodes[None, None])
        exits = V.grid.outside(succ)
        if exits.any():
            if forbid:
                i, g, k = np.argwhere(exits)[0]
                raise GridExitError(node=Xc[i].tolist(), control=U[g].tolist(),
                                    noise_node=quad.nodes[k].tolist())
            clamped[s:s + chunk] = exits.any(axis=(1, 2))
        ev = quad.expect(V.grid.interpolate(V.values, succ))
        qv = spec.cost(Xc[:, None, :], U[None, :, :]) + V.gamma * ev
        out[s:s + chunk] = qv[np.arange(qv.shape[0]), np.argmin(qv, axis=1)]
    return replace(V, values=out, clamped=clamped)


def value_iterate(spec, grid, controls, quad, gamma, tol=1e-10, max_iter=100_000,
                  boundary_policy="clamp"):
    """Backups from V0 = 0 until the sup-norm change is at most ``tol``."""
    if tol <= 0:
        raise ContractError("tol must be positive")
    if not 0.0 <= gamma < 1.0:
        raise ContractError("gamma must lie in [0,1)")
    if spec.n > MAX_DIM or spec.m > MAX_DIM:
        raise ContractError(f"grid DP supports n, m <= {MAX_DIM}")
    V = GridValueFunction(grid, np.zeros(grid.size), float(gamma), boundary_policy=boundary_policy)
    change = np.inf
    for it in range(1, max_iter + 1):
        Vn = bellman_backup(V, spec, controls, quad)
        change = float(np.abs(Vn.values - V.values).max())
        V = replace(Vn, sup_residual=change, iterations=it)
        if change <= tol:
            return V
    raise NumericalError(f"value iteration did not converge in {max_iter} iterations "
                         f"(last change {change:.3e})", change)


def bellman_residual(V, spec, quad, gamma, x, u):
    """l(x,u) + gamma E[V(f(x,u,v))] - V(x). With ``quad=None`` the oracle's
    own exact expectation is used."""
    X, U = np.asarray(x, dtype=float), np.asarray(u, dtype=float)
    if quad is None:
        ev = V.expected_next_value(spec, X, U)
    else:
        succ = spec.dynamics(X[..., None, :], U[..., None, :], quad.nodes)
        ev = quad.expect(V(succ))
    return spec.cost(X, U) + gamma * ev - V(X)


def grid_eta(V: GridValueFunction, margin=0.0):
    """Constant near-optimality bound covering the iterate-vs-fixed-point gap."""
    from .policy import EtaBound

    return EtaBound.constant(V.sup_residual * (1 + V.gamma) / (1 - V.gamma) + margin)
