"""Recurrence sets, Monte Carlo certificates and the theoretical horizon,
discount and reachable-set bounds."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import stats

from . import rng
from .errors import ContractError
from .policy import EtaBound
from .riccati_lqr import DEFAULT_GAMMA_GRID, detectability_for_spec, sweep_for_spec
from .simulator import map_ensemble
from .system_model import SigmaMetric, sigma
from .value_iteration import make_quadrature


@dataclass(frozen=True)
class Monomial:
    """s -> a * s**b."""

    a: float
    b: float = 2.0

    def __call__(self, s):
        return self.a * np.power(s, self.b)

    def inverse(self, y):
        if self.a == 0:
            return np.inf
        return np.power(np.maximum(y, 0.0) / self.a, 1.0 / self.b)


@dataclass(frozen=True, eq=False)
class AssumptionBundle:
    """Constants and comparison functions of the cost-controllability and
    detectability conditions. ``c_gamma`` maps a discount factor to c_gamma."""

    alpha_W: Monomial
    alphabar_W: Monomial
    alphabar_V: Monomial
    c_gamma: Callable[[float], float]
    c: float
    d: float
    e1: float = 0.0
    e2: float = 0.0
    sigma: SigmaMetric = SigmaMetric()
    W_M: Optional[np.ndarray] = None
    notes: tuple = ()

    def __post_init__(self):
        errors = []
        for name in ("alpha_W", "alphabar_V"):
            fn = getattr(self, name)
            if not (fn.a > 0 and fn.b > 0):
                errors.append(f"{name} must be class-K-infinity (a > 0, b > 0)")
        if not (self.alphabar_W.a >= 0 and self.alphabar_W.b > 0):
            errors.append("alphabar_W needs a >= 0, b > 0")
        for name in ("c", "d", "e1", "e2"):
            if getattr(self, name) < 0:
                errors.append(f"{name} must be nonnegative")
        if errors:
            raise ContractError("; ".join(errors))

    @property
    def e(self):
        return self.e1 + self.e2

    def alphabar_Y(self, s):
        return self.alphabar_V(s) + 2.0 * self.alphabar_W(s)

    def W(self, X):
        X = np.asarray(X, dtype=float)
        if self.W_M is None:
            return np.zeros(X.shape[:-1])
        return np.einsum("...i,ij,...j->...", X, self.W_M, X)

    def c_gamma_bounded(self, gammas):
        return all(self.c_gamma(g) <= self.c * (1 + 1e-12) for g in gammas)


def auto_bundle(spec, gamma_grid=DEFAULT_GAMMA_GRID):
    """Bundle for a linear-quadratic system: Riccati sweep + detectability.

    Returns (bundle, sweep, certificate)."""
    sweep = sweep_for_spec(spec, tuple(sorted(set(DEFAULT_GAMMA_GRID) | set(gamma_grid))))
    cert = detectability_for_spec(spec)
    notes = ["alphabar_V and c are sups over a finite gamma grid, not over all of (0,1)"]
    if sweep.growing:
        notes.append("||P_gamma|| still growing at the top of the grid")
    bundle = AssumptionBundle(alpha_W=Monomial(cert.a_W), alphabar_W=Monomial(cert.alphabar_W_coef),
                              alphabar_V=Monomial(sweep.alphabar_V_coef), c_gamma=sweep.c_gamma,
                              c=sweep.c, d=cert.d, W_M=cert.M, notes=tuple(notes))
    return bundle, sweep, cert


@dataclass(frozen=True, eq=False)
class RecurrenceSetParams:
    gamma: float
    delta: float
    eta: EtaBound
    bundle: AssumptionBundle

    def __post_init__(self):
        if self.delta <= 0:
            raise ContractError("delta must be positive")

    def threshold(self, X):
        return (self.bundle.c_gamma(self.gamma) + self.bundle.d
                + self.eta(X, self.bundle.sigma) + self.delta)

    def contains(self, X):
        X = np.asarray(X, dtype=float)
        return self.bundle.alpha_W(sigma(self.bundle.sigma, X)) <= self.threshold(X)

    @property
    def radius(self):
        """sigma-radius of the set when it is a sublevel ball (inf if unbounded)."""
        b = self.bundle
        base = b.c_gamma(self.gamma) + b.d + self.eta.eta0 + self.delta
        if self.eta.eta1 == 0:
            return float(b.alpha_W.inverse(base))
        if b.alpha_W.b != 2:
            return float("nan")
        if b.alpha_W.a <= self.eta.eta1:
            return float("inf")
        return float(np.sqrt(base / (b.alpha_W.a - self.eta.eta1)))


def recurrence_set_contains(params: RecurrenceSetParams, x):
    return bool(params.contains(np.asarray(x, dtype=float)))


def clopper_pearson(successes, trials, alpha=0.05):
    S, N = int(successes), int(trials)
    if not 0 <= S <= N or N < 1:
        raise ContractError("need 0 <= S <= N and N >= 1")
    lo = 0.0 if S == 0 else float(stats.beta.ppf(alpha / 2, S, N - S + 1))
    hi = 1.0 if S == N else float(stats.beta.ppf(1 - alpha / 2, S + 1, N - S))
    return lo, hi


@dataclass(frozen=True)
class CertificateEstimate:
    trials: int
    successes: int
    estimate: float
    ci_low: float
    ci_high: float
    alpha_ci: float
    seed: int
    config_hash: str = ""
    horizon: int = 0
    extras: dict = field(default_factory=dict)

    @classmethod
    def from_counts(cls, S, N, alpha_ci, seed, config_hash="", horizon=0, **extras):
        lo, hi = clopper_pearson(S, N, alpha_ci)
        return cls(int(N), int(S), S / N, lo, hi, alpha_ci, int(seed), config_hash, int(horizon),
                   dict(extras))

    def exceeds(self, level):
        return self.ci_low > level


def initial_states(x0_set, N, n, seed=0):
    """Initial states for N trajectories.

    ``x0_set`` is an array of points (cycled), or ``("ball", r)`` for uniform
    draws in the open Euclidean ball, or ``("sphere", r)`` for points just
    inside its boundary.
    """
    if isinstance(x0_set, tuple) and isinstance(x0_set[0], str):
        kind, r = x0_set
        if kind == "ball":
            return rng.ball_points(seed, N, n, r)
        if kind == "sphere":
            if n == 1:
                return (r * (1 - 1e-9) * np.where(np.arange(N) % 2 == 0, 1.0, -1.0))[:, None]
            Z = rng.ball_points(seed, N, n, 1.0)
            Z /= np.linalg.norm(Z, axis=1, keepdims=True)
            return Z * r * (1 - 1e-9)
        raise ContractError(f"unknown initial set kind {kind!r}")
    pts = np.atleast_2d(np.asarray(x0_set, dtype=float))
    if pts.shape[1] != n:
        raise ContractError(f"initial states have dimension {pts.shape[1]}, system has {n}")
    return pts[np.arange(N) % pts.shape[0]]


def estimate_boundedness(spec, oracle, x0_set, Delta, T, N, seed=0, pert=None, alpha_ci=0.05,
                         workers=1, config_hash=""):
    """Fraction of trajectories with sigma(x_k) < Delta for all k <= T."""
    X0 = initial_states(x0_set, N, spec.n, seed)
    metric = oracle.metric

    def reduce(blk):
        s = sigma(metric, np.nan_to_num(blk.states, nan=np.inf))
        return int(np.sum(~blk.exited & np.all(s < Delta, axis=1)))

    S = sum(map_ensemble(spec, oracle, X0, T, seed, reduce, pert, workers))
    return CertificateEstimate.from_counts(S, N, alpha_ci, seed, config_hash, T, Delta=float(Delta),
                                           epsilon=pert.epsilon if pert else 0.0)


def estimate_recurrence(spec, oracle, params: RecurrenceSetParams, x0_set, T, N, seed=0, pert=None,
                        alpha_ci=0.05, workers=1, config_hash=""):
    """Fraction of trajectories that visit the recurrence set at some k <= T.
    A trajectory truncated by a domain exit counts only if it hit before."""
    X0 = initial_states(x0_set, N, spec.n, seed)

    def reduce(blk):
        return int(np.sum(np.any(params.contains(blk.states), axis=1)))

    S = sum(map_ensemble(spec, oracle, X0, T, seed, reduce, pert, workers))
    return CertificateEstimate.from_counts(S, N, alpha_ci, seed, config_hash, T,
                                           gamma=params.gamma, delta=params.delta,
                                           epsilon=pert.epsilon if pert else 0.0)


def _round_guard(val):
    r = round(val)
    return r if abs(val - r) <= 1e-12 * max(1.0, abs(val)) else math.ceil(val)


def theoretical_horizon(Delta0, delta, p, bundle: AssumptionBundle):
    if min(Delta0, delta, p) <= 0:
        raise ContractError("Delta0, delta and p must be positive")
    val = 4.0 * (bundle.alphabar_Y(Delta0) + bundle.c + bundle.d + bundle.e) / (p * delta)
    return int(_round_guard(float(val)))


def theoretical_gamma_star(Delta, delta, bundle: AssumptionBundle):
    """Smallest gamma in (1/2, 1) with (1-gamma)/gamma * (alphabar_V(Delta) + e2) <= delta/2."""
    if Delta <= 0 or delta <= 0:
        raise ContractError("Delta and delta must be positive")
    C = float(bundle.alphabar_V(Delta) + bundle.e2)
    if not np.isfinite(C):
        return float(np.nextafter(1.0, 0.0))
    g = C / (C + delta / 2.0)
    return float(min(max(g, 0.5 + 1e-9), np.nextafter(1.0, 0.0)))


def noise_radius(noise, tail):
    """Radius v_max with P[|v| > v_max] < tail."""
    if noise.kind == "gaussian":
        if noise.dim == 0:
            return 0.0
        lam = float(np.linalg.eigvalsh(noise.covariance).max())
        chi = stats.chi.isf(tail * (1 - 1e-9), noise.dim)
        return float(np.linalg.norm(noise.mean) + np.sqrt(max(lam, 0.0)) * chi)
    if noise.kind == "uniform_box":
        return float(np.linalg.norm(np.abs(noise.mean) + noise.half_widths))
    return float(np.linalg.norm(noise.support, axis=1).max())


def reachable_delta(Delta0, T, p, spec, kappa, kappa0=0.0, tail_level=None, metric=SigmaMetric(),
                    v_max=None, epsilon=0.0):
    """Over-approximate sup sigma over the first T reachable sets under noise
    truncated to a ball of tail mass < p/T, using the norm recursion
    r_{i+1} = ||A|| r_i + ||B|| (kappa r_i + kappa0) + ||L|| v_max.

    With ``epsilon > 0`` the recursion also absorbs the four perturbation
    channels: r_{i+1} = ||A|| (r_i + eps) + ||B|| (kappa (r_i + eps) + kappa0 + eps)
    + ||L|| v_max + eps."""
    if metric.kind != "euclidean":
        raise ContractError("the norm recursion is only valid for the Euclidean sigma")
    if not spec.is_linear:
        raise ContractError("reachable_delta needs a linear system; use empirical_delta")
    if v_max is None:
        tail = tail_level if tail_level is not None else (p / T if T > 0 else p)
        v_max = noise_radius(spec.noise, tail)
    nA = np.linalg.norm(spec.A, 2)
    nB = np.linalg.norm(spec.B, 2) if spec.B.size else 0.0
    nL = np.linalg.norm(spec.L, 2) if spec.L.size else 0.0
    r = best = float(Delta0)
    with np.errstate(over="ignore"):
        for _ in range(int(T)):
            r = (nA * (r + epsilon) + nB * (kappa * (r + epsilon) + kappa0 + epsilon)
                 + nL * v_max + epsilon)
            best = max(best, r)
    return (1 + 1e-6) * best


def lqr_control_envelope(spec, sweep, eta: EtaBound):
    """(kappa, kappa0) with |u| <= kappa |x| + kappa0 for every member of
    U_gamma^eta(x), gamma on the sweep grid: |u + Kx|^2 <= eta(x) / lambda_min(R)."""
    lam = float(np.linalg.eigvalsh(spec.R).min())
    return (float(sweep.k_norms.max()) + np.sqrt(eta.eta1 / lam), float(np.sqrt(eta.eta0 / lam)))


def empirical_delta(spec, oracle, x0_set, T, p, N=1000, seed=0, pert=None, workers=1):
    """(1 - p) quantile of sup_k sigma(x_k) over a pilot ensemble. Empirical,
    not certified."""
    X0 = initial_states(x0_set, N, spec.n, seed)

    def reduce(blk):
        s = sigma(oracle.metric, np.nan_to_num(blk.states, nan=np.inf))
        return np.max(s, axis=1)

    sups = np.concatenate(map_ensemble(spec, oracle, X0, T, seed, reduce, pert, workers))
    q = np.quantile(sups, 1 - p, method="higher")
    # never below the initial level itself
    floor = x0_set[1] if isinstance(x0_set, tuple) else sigma(oracle.metric, X0).max()
    return float((1 + 1e-6) * max(q, floor))


@dataclass(frozen=True)
class SandwichReport:
    max_violation: float
    max_scaled_violation: float
    worst_gamma: float
    worst_state: tuple


def lyapunov_Y(bundle, value, gamma, X):
    """Y_gamma(x) = V(x) + W(x)/gamma - gamma c_gamma/(1-gamma) + d + e1."""
    cg = bundle.c_gamma(gamma)
    return value(X) + bundle.W(X) / gamma - gamma * cg / (1 - gamma) + bundle.d + bundle.e1


def check_sandwich(bundle: AssumptionBundle, value_for_gamma, gamma_grid, states):
    """Largest violation of alpha_W(sigma) <= Y_gamma <= alphabar_Y(sigma) + c + d + e.

    The scaled violation divides by 1 + |Y_gamma(x)|."""
    if any(g < 0.5 or g >= 1 for g in gamma_grid):
        raise ContractError("the sandwich bounds need gamma in [1/2, 1)")
    X = np.atleast_2d(np.asarray(states, dtype=float))
    s = sigma(bundle.sigma, X)
    worst = (-np.inf, -np.inf, None, None)
    for g in gamma_grid:
        Y = lyapunov_Y(bundle, value_for_gamma(g), g, X)
        viol = np.maximum(bundle.alpha_W(s) - Y,
                          Y - bundle.alphabar_Y(s) - bundle.c - bundle.d - bundle.e)
        scaled = viol / (1 + np.abs(Y))
        i = int(np.argmax(scaled))
        if scaled[i] > worst[1]:
            worst = (float(viol.max()), float(scaled[i]), float(g), tuple(X[i].tolist()))
        else:
            worst = (max(worst[0], float(viol.max())),) + worst[1:]
    return SandwichReport(*worst)


def check_dissipation(cert, spec, n_samples=10_000, seed=0, scale=10.0, quad_order=8):
    """Sampled check of E[W(f(x,u,v))] - W(x) <= -alpha_W(|x|) + l(x,u) + d.

    The expectation is computed by quadrature, independently of the trace
    formula that defines ``cert.d``. Returns the largest violation divided by
    1 + |x|^2 + |u|^2."""
    gen = np.random.default_rng(seed)
    X = gen.normal(scale=scale, size=(n_samples, spec.n))
    U = gen.normal(scale=scale, size=(n_samples, spec.m))
    quad = make_quadrature(spec.noise, quad_order)
    succ = spec.dynamics(X[:, None, :], U[:, None, :], quad.nodes)
    EW = quad.expect(cert.W(succ))
    viol = (EW - cert.W(X) + cert.alpha_W(np.linalg.norm(X, axis=1)) - spec.cost(X, U) - cert.d)
    return float(np.max(viol / (1 + np.sum(X ** 2, axis=1) + np.sum(U ** 2, axis=1))))
