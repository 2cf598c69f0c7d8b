"""Near-optimal set-valued feedback: membership, selection, level bounds."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractError, EmptyFeasibleSet
from .riccati_lqr import ValueOracleLQR, lqr_oracle
from .system_model import SigmaMetric, matvec, sigma
from .value_iteration import GridValueFunction, bellman_residual, order_controls

MEMBERSHIP_SLACK = 1e-12
_ROUNDING = 64 * np.finfo(float).eps

SELECTORS = ("greedy", "adversarial", "fixed-gain")


@dataclass(frozen=True)
class EtaBound:
    """eta(x) = eta0 + eta1 * sigma(x)^2 (eta1 = 0 for the constant variant)."""

    eta0: float = 0.0
    eta1: float = 0.0

    def __post_init__(self):
        if self.eta0 < 0 or self.eta1 < 0:
            raise ContractError("eta coefficients must be nonnegative")

    @classmethod
    def constant(cls, eta0):
        return cls(float(eta0), 0.0)

    @classmethod
    def proportional(cls, eta0, eta1):
        return cls(float(eta0), float(eta1))

    @property
    def kind(self):
        return "constant" if self.eta1 == 0 else "proportional"

    def __call__(self, X, metric: SigmaMetric = SigmaMetric()):
        X = np.asarray(X, dtype=float)
        if self.eta1 == 0:
            return np.full(X.shape[:-1], self.eta0)
        return self.eta0 + self.eta1 * sigma(metric, X) ** 2

    def sup_over(self, sigma_max):
        return self.eta0 + self.eta1 * sigma_max ** 2

    def label(self):
        if self.eta1 == 0:
            return f"const({self.eta0:g})"
        return f"prop({self.eta0:g},{self.eta1:g})"


@dataclass(frozen=True, eq=False)
class PolicyOracle:
    """Everything needed to evaluate and select from U_gamma^eta(x).

    ``value`` is either an exact LQR oracle or a grid value function (the
    latter needs ``quad``). ``controls`` is the candidate grid used by
    the adversarial selector and by greedy selection on grid oracles.
    """

    spec: object
    value: object
    gamma: float
    eta: EtaBound = EtaBound()
    selector: str = "greedy"
    controls: Optional[np.ndarray] = None
    quad: object = None
    K: Optional[np.ndarray] = None
    metric: SigmaMetric = SigmaMetric()

    def __post_init__(self):
        if self.selector not in SELECTORS:
            raise ContractError(f"unknown selector {self.selector!r}")
        if self.controls is not None:
            object.__setattr__(self, "controls", order_controls(self.controls))
        if isinstance(self.value, GridValueFunction) and self.quad is None:
            raise ContractError("grid value oracles need a noise quadrature")
        if self.selector == "fixed-gain" and self.gain is None:
            raise ContractError("fixed-gain selector needs K")
        if self.selector == "adversarial" and self.controls is None:
            raise ContractError("adversarial selector needs a control grid")
        if not self.is_lqr and self.controls is None:
            raise ContractError("grid oracles need a control grid")

    @property
    def is_lqr(self):
        return isinstance(self.value, ValueOracleLQR)

    @property
    def gain(self):
        if self.K is not None:
            return np.atleast_2d(self.K)
        return self.value.K if self.is_lqr else None

    @property
    def domain(self):
        """StateGrid for grid oracles, None (all of R^n) for LQR."""
        return getattr(self.value, "domain", None)

    def residual(self, X, U):
        if self.is_lqr:
            return self.value.residual(self.spec, X, U)
        return bellman_residual(self.value, self.spec, self.quad, self.gamma, X, U)

    def _slack(self, X, U):
        if self.is_lqr:
            scale = self.value.rounding_scale(self.spec, X, U)
        else:
            scale = np.abs(self.spec.cost(X, U)) + np.abs(self.value(X)) * (1 + self.gamma)
        return MEMBERSHIP_SLACK + _ROUNDING * scale

    def members(self, X, U):
        X, U = np.asarray(X, dtype=float), np.asarray(U, dtype=float)
        return self.residual(X, U) <= self.eta(X, self.metric) + self._slack(X, U)

    def membership(self, x, u):
        x = np.asarray(x, dtype=float).reshape(self.spec.n)
        u = np.asarray(u, dtype=float).reshape(self.spec.m)
        return bool(self.members(x, u))

    def _greedy(self, X):
        if self.is_lqr:
            return -matvec(self.value.K, X)
        res = self.residual(X[:, None, :], self.controls[None, :, :])
        return self.controls[np.argmin(res, axis=1)]

    def select(self, X):
        """Controls for a batch of states (B, n) -> (B, m). Uses the states only."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.selector == "fixed-gain":
            U = -matvec(self.gain, X)
            if not np.all(self.members(X, U)):
                raise ContractError("fixed-gain control violates near-optimality membership")
            return U
        greedy = self._greedy(X)
        if self.selector == "greedy":
            return greedy
        return self._adversarial(X, greedy)

    def _adversarial(self, X, greedy):
        B = X.shape[0]
        cand = np.concatenate(
            [np.broadcast_to(self.controls, (B,) + self.controls.shape), greedy[:, None, :]], axis=1)
        Xb = X[:, None, :]
        ok = self.members(Xb, cand)
        if not np.all(ok.any(axis=1)):
            raise EmptyFeasibleSet("no grid control passes membership; enlarge eta or refine the grid")
        mean_v = np.broadcast_to(self.spec.noise.mean, cand.shape[:2] + (self.spec.q,))
        push = np.einsum("bgi,bi->bg", self.spec.dynamics(np.broadcast_to(Xb, cand.shape[:2] + (self.spec.n,)),
                                                          cand, mean_v), X)
        score = np.where(ok, push, -np.inf)
        best = score.max(axis=1, keepdims=True)
        tie_key = np.where(score == best, np.linalg.norm(cand, axis=2), np.inf)
        return cand[np.arange(B), np.argmin(tie_key, axis=1)]


def select(oracle: PolicyOracle, x):
    return oracle.select(np.asarray(x, dtype=float).reshape(1, -1))[0]


def membership(oracle: PolicyOracle, x, u):
    return oracle.membership(x, u)


def lqr_policy(spec, gamma, eta=None, selector="greedy", controls=None, K=None):
    return PolicyOracle(spec, lqr_oracle(spec, gamma), gamma, eta or EtaBound(), selector,
                        controls, None, K)


def grid_policy(spec, V: GridValueFunction, quad, controls, eta=None, selector="greedy"):
    return PolicyOracle(spec, V, V.gamma, eta or EtaBound(), selector, controls, quad)


@dataclass(frozen=True)
class LevelBoundReport:
    sup_u: float
    sup_by_radius: tuple
    stabilized: bool
    analytic_cap: Optional[float]


def check_level_boundedness(make_oracle, box, gamma_grid, n_samples=200, seed=0, bundle=None,
                            radii=(1.0, 2.0, 4.0, 8.0, 16.0), points_per_axis=41):
    """Empirical sup |u| over members of U_gamma^eta(x), x in the box, on
    expanding control grids. ``make_oracle`` maps gamma to a PolicyOracle."""
    box = np.atleast_2d(np.asarray(box, dtype=float))
    if box.size == 0 or np.any(box[:, 0] > box[:, 1]) or n_samples <= 0:
        warnings.warn("empty state box: level bound is vacuous (0)")
        return LevelBoundReport(0.0, tuple(0.0 for _ in radii), True, 0.0 if bundle else None)
    rng = np.random.default_rng(seed)
    n = box.shape[0]
    corners = np.array(np.meshgrid(*box, indexing="ij")).reshape(n, -1).T
    X = np.vstack([corners, rng.uniform(box[:, 0], box[:, 1], size=(n_samples, n))])
    by_radius = np.zeros(len(radii))
    oracle = None
    for g in gamma_grid:
        oracle = make_oracle(g)
        m = oracle.spec.m
        greedy = oracle.select(X) if oracle.selector != "fixed-gain" else -X @ oracle.gain.T
        for j, rho in enumerate(radii):
            axes = [np.linspace(-rho, rho, points_per_axis)] * m
            U = np.stack([a.ravel() for a in np.meshgrid(*axes, indexing="ij")], axis=-1)
            cand = np.concatenate([np.broadcast_to(U, (X.shape[0],) + U.shape), greedy[:, None, :]], axis=1)
            ok = oracle.members(X[:, None, :], cand)
            norms = np.where(ok, np.linalg.norm(cand, axis=2), 0.0)
            by_radius[j] = max(by_radius[j], norms.max())
    stabilized = bool(len(radii) >= 2 and abs(by_radius[-1] - by_radius[-2]) <= 1e-12 * (1 + by_radius[-1])
                      and by_radius[-1] < radii[-2])
    cap = None
    if bundle is not None and oracle is not None and oracle.spec.is_quadratic:
        smax = float(sigma(oracle.metric, X).max())
        bound = (bundle.c + bundle.e1 + bundle.e2 + bundle.alphabar_V(smax)
                 + oracle.eta.sup_over(smax))
        cap = float(np.sqrt(bound / np.linalg.eigvalsh(oracle.spec.R).min()))
    return LevelBoundReport(float(by_radius.max()), tuple(float(v) for v in by_radius), stabilized, cap)
