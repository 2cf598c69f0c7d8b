"""Discounted LQR: Riccati fixed point, exact value oracle, gains and
quadratic detectability certificates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .errors import ContractError, DetectabilityError, NumericalError
from .system_model import check_quadratic_cost

DEFAULT_GAMMA_GRID = (0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99, 0.999)
_DIVERGED = 1e150


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    P: np.ndarray
    gamma: float
    residual: float
    iterations: int


def riccati_rhs(P, A, B, Q, R, gamma):
    BtPA = B.T @ P @ A
    S = R + gamma * B.T @ P @ B
    return Q + gamma * A.T @ P @ A - gamma ** 2 * BtPA.T @ np.linalg.solve(S, BtPA)


_POLISH_STEPS = 10_000
_STALL_STEPS = 8


def _tail_factor(step, prev_step):
    """rho / (1 - rho) for the observed contraction rate rho of the steps."""
    if not np.isfinite(prev_step) or prev_step <= 0:
        return np.inf
    rho = step / prev_step
    return rho / (1 - rho) if rho < 1 else np.inf


def solve_discounted_riccati(A, B, Q, R, gamma, tol=1e-12, max_iter=10 ** 6):
    """Fixed-point iteration P <- RHS(P) from P0 = Q.

    Convergence is declared when the distance to the fixed point, estimated
    from the observed contraction rate, is below ``tol``. Slow contractions
    (rate near 1) therefore run well past the point where the step alone
    drops below ``tol``. After that the iteration keeps going while
    the step still shrinks, so the returned P sits at the floating-point
    fixed point rather than merely within ``tol`` of it.
    """
    A, B, Q, R = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, Q, R))
    if not 0.0 < gamma < 1.0:
        raise ContractError("gamma must lie in (0,1)")
    if tol <= 0:
        raise ContractError("tol must be positive")
    check_quadratic_cost(Q, R)
    P = Q.copy()
    diff = np.inf
    it = 0
    converged = False
    polish = stalls = 0
    while it < max_iter:
        try:
            Pn = riccati_rhs(P, A, B, Q, R, gamma)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"R + gamma B'PB is singular: {exc}", diff) from exc
        Pn = 0.5 * (Pn + Pn.T)
        it += 1
        new_diff = np.linalg.norm(Pn - P)
        if not np.all(np.isfinite(Pn)) or np.abs(Pn).max() > _DIVERGED:
            raise NumericalError(
                f"Riccati iteration diverged at gamma={gamma} (is (A,B) stabilizable "
                f"for this discount?)", new_diff)
        floor = 64 * np.finfo(float).eps * max(1.0, np.linalg.norm(Pn))
        if converged:
            stalls = stalls + 1 if new_diff >= diff else 0
            if new_diff > diff or new_diff == 0 or stalls >= _STALL_STEPS or polish >= _POLISH_STEPS:
                if new_diff < diff:
                    P = Pn
                break
            polish += 1
        elif new_diff <= floor or new_diff * _tail_factor(new_diff, diff) <= tol:
            converged = True
        P, diff = Pn, new_diff
    if not converged:
        raise NumericalError(
            f"Riccati iteration did not converge in {max_iter} iterations "
            f"(last step {diff:.3e})", diff)
    residual = float(np.linalg.norm(P - riccati_rhs(P, A, B, Q, R, gamma)))
    return RiccatiSolution(P=P, gamma=float(gamma), residual=residual, iterations=it)


def optimal_gain(A, B, R, riccati: RiccatiSolution):
    A, B, R = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, R))
    g, P = riccati.gamma, riccati.P
    if B.shape[1] == 0:
        return np.zeros((0, A.shape[0]))
    return g * np.linalg.solve(R + g * B.T @ P @ B, B.T @ P @ A)


@dataclass(frozen=True, eq=False)
class ValueOracleLQR:
    """Exact value function x'Px + c_gamma/(1-gamma) of a zero-mean linear
    system with quadratic cost."""

    riccati: RiccatiSolution
    K: np.ndarray
    A: np.ndarray
    B: np.ndarray
    L: np.ndarray
    noise_cov: np.ndarray
    c_gamma: float
    noise_offset: float

    @property
    def gamma(self):
        return self.riccati.gamma

    @property
    def P(self):
        return self.riccati.P

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        return np.einsum("...i,ij,...j->...", X, self.P, X) + self.noise_offset

    def expected_next_value(self, spec, X, U):
        """E[V(Ax + Bu + Lv)] by the quadratic-form plus trace identity."""
        Y = X @ self.A.T + U @ self.B.T
        return (np.einsum("...i,ij,...j->...", Y, self.P, Y)
                + self.c_gamma / self.gamma + self.noise_offset)

    def residual(self, spec, X, U):
        """l(x,u) + gamma E[V(f)] - V(x) with the constant offsets cancelled
        analytically (they sum to zero exactly)."""
        Y = X @ self.A.T + U @ self.B.T
        return (spec.cost(X, U) + self.gamma * np.einsum("...i,ij,...j->...", Y, self.P, Y)
                - np.einsum("...i,ij,...j->...", X, self.P, X))

    def rounding_scale(self, spec, X, U):
        Y = X @ self.A.T + U @ self.B.T
        return (np.abs(spec.cost(X, U)) + np.einsum("...i,ij,...j->...", Y, self.P, Y)
                + np.einsum("...i,ij,...j->...", X, self.P, X))


def noise_trace(L, P, cov):
    L = np.atleast_2d(L)
    if L.shape[1] == 0:
        return 0.0
    return float(np.trace(L.T @ P @ L @ cov))


def make_value_oracle(A, B, L, R, noise_cov, riccati):
    A, B, L = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, L))
    g = riccati.gamma
    c_gamma = g * noise_trace(L, riccati.P, noise_cov)
    return ValueOracleLQR(riccati=riccati, K=optimal_gain(A, B, R, riccati), A=A, B=B, L=L,
                          noise_cov=np.asarray(noise_cov, dtype=float), c_gamma=c_gamma,
                          noise_offset=c_gamma / (1.0 - g))


def _require_lq(spec):
    if not (spec.is_linear and spec.is_quadratic):
        raise ContractError("LQR constructions need a linear system with quadratic cost")
    if not spec.noise.is_zero_mean():
        raise ContractError("LQR moment formulas assume zero-mean noise; fold the mean into the dynamics")


def lqr_oracle(spec, gamma, tol=1e-12, max_iter=10 ** 6):
    _require_lq(spec)
    sol = solve_discounted_riccati(spec.A, spec.B, spec.Q, spec.R, gamma, tol, max_iter)
    return make_value_oracle(spec.A, spec.B, spec.L, spec.R, spec.noise.second_moment, sol)


def lqr_value(oracle: ValueOracleLQR, x):
    return float(oracle(np.asarray(x, dtype=float).reshape(-1)))


@dataclass(frozen=True, eq=False)
class DetectabilityCertificate:
    """W(x) = x'Mx, alpha_W(s) = a_W s^2, alphabar_W(s) = ||M||_2 s^2."""

    M: np.ndarray
    a_W: float
    d: float

    def W(self, X):
        X = np.asarray(X, dtype=float)
        return np.einsum("...i,ij,...j->...", X, self.M, X)

    def alpha_W(self, s):
        return self.a_W * np.square(s)

    @property
    def alphabar_W_coef(self):
        return float(np.linalg.norm(self.M, 2)) if self.M.size else 0.0

    def alphabar_W(self, s):
        return self.alphabar_W_coef * np.square(s)


def certificate_block(M, a_W, A, B, Q, R):
    A, B, Q, R = (np.atleast_2d(np.asarray(X, dtype=float)) for X in (A, B, Q, R))
    n = A.shape[0]
    top = np.hstack([A.T @ M @ A - M + a_W * np.eye(n) - Q, A.T @ M @ B])
    bot = np.hstack([B.T @ M @ A, B.T @ M @ B - R])
    blk = np.vstack([top, bot])
    return 0.5 * (blk + blk.T)


def verify_detectability(cert: DetectabilityCertificate, A, B, Q, R):
    """Largest eigenvalue of the certificate block matrix; <= 0 certifies the
    dissipation inequality for every (x, u)."""
    return float(np.linalg.eigvalsh(certificate_block(cert.M, cert.a_W, A, B, Q, R)).max())


def is_detectable(A, C, tol=1e-9):
    """PBH test: no eigenvalue with |lambda| >= 1 is unobservable through C."""
    A, C = np.atleast_2d(A), np.atleast_2d(C)
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if abs(lam) >= 1.0 - tol:
            pencil = np.vstack([A - lam * np.eye(n), C])
            if np.linalg.matrix_rank(pencil, tol=tol * max(1.0, np.abs(pencil).max())) < n:
                return False
    return True


def _largest_a_W(M, A, B, Q, R, iters=100):
    def lam(a):
        return np.linalg.eigvalsh(certificate_block(M, a, A, B, Q, R)).max()

    if lam(0.0) >= 0.0:
        return 0.0
    lo = 0.0
    hi = np.linalg.norm(M, 2) + np.linalg.norm(Q, 2) + 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if lam(mid) <= 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    return lo


def synthesize_detectability(A, B, Q, R, noise_cov, L, mu_grid=None):
    """Quadratic storage function for the dissipation inequality.

    Positive definite Q needs no storage (M = 0). Otherwise M = mu * M0 where
    M0 solves the output-injection Lyapunov equation, and for every mu on a
    log grid the largest feasible a_W is found by bisection; the best pair wins.
    """
    A, B, Q, R, L = (np.atleast_2d(np.asarray(X, dtype=float)) for X in (A, B, Q, R, L))
    n = A.shape[0]
    check_quadratic_cost(Q, R)
    q_eigs, q_vecs = np.linalg.eigh(Q)
    if q_eigs.min() > 0:
        return DetectabilityCertificate(M=np.zeros((n, n)), a_W=float(q_eigs.min()), d=0.0)
    C = (q_vecs * np.sqrt(np.clip(q_eigs, 0.0, None))) @ q_vecs.T
    if not is_detectable(A, C):
        raise DetectabilityError("stage cost not detectable: an unstable mode of A is invisible to Q")
    S = la.solve_discrete_are(A.T, C.T, np.eye(n), np.eye(n))
    G = A @ S @ C.T @ np.linalg.inv(np.eye(n) + C @ S @ C.T)
    Acl = A - G @ C
    M0 = la.solve_discrete_lyapunov(Acl.T, np.eye(n))
    M0 = 0.5 * (M0 + M0.T)
    if mu_grid is None:
        mu_grid = np.logspace(-6, 6, 121)
    best = None
    for mu in mu_grid:
        a = _largest_a_W(mu * M0, A, B, Q, R)
        if a > 0 and (best is None or a > best[1]):
            best = (mu, a)
    if best is None:
        raise DetectabilityError("no feasible (mu, a_W) on the grid; supply M explicitly")
    M = best[0] * M0
    return DetectabilityCertificate(M=M, a_W=float(best[1]), d=noise_trace(L, M, noise_cov))


@dataclass(frozen=True, eq=False)
class SweepTable:
    """Per-gamma ||P_gamma||_2, c_gamma and ||K_gamma||_2 on a finite grid.

    ``alphabar_V_coef`` and ``c`` are sups over the grid only, an empirical
    stand-in for the sup over all gamma in (0,1).
    """

    gammas: np.ndarray
    p_norms: np.ndarray
    c_gammas: np.ndarray
    k_norms: np.ndarray
    alphabar_V_coef: float
    c: float
    growing: bool

    def c_gamma(self, gamma):
        """Exact at grid points; between them the next larger grid point."""
        idx = np.searchsorted(self.gammas, gamma - 1e-15, side="left")
        if idx >= self.gammas.size:
            return float(self.c)
        return float(self.c_gammas[idx])

    def as_rows(self):
        return [dict(gamma=float(g), p_norm=float(p), c_gamma=float(c), k_norm=float(k))
                for g, p, c, k in zip(self.gammas, self.p_norms, self.c_gammas, self.k_norms)]


def gamma_sweep_p_bound(A, B, Q, R, gamma_grid=DEFAULT_GAMMA_GRID, L=None, noise_cov=None,
                        tol=1e-12, max_iter=10 ** 6):
    A, B, Q, R = (np.atleast_2d(np.asarray(X, dtype=float)) for X in (A, B, Q, R))
    gammas = np.array(sorted(set(float(g) for g in gamma_grid)))
    if gammas.size == 0 or gammas[0] <= 0 or gammas[-1] >= 1:
        raise ContractError("gamma grid must be a nonempty subset of (0,1)")
    p_norms, c_gammas, k_norms = [], [], []
    for g in gammas:
        sol = solve_discounted_riccati(A, B, Q, R, g, tol, max_iter)
        p_norms.append(np.linalg.norm(sol.P, 2))
        k = optimal_gain(A, B, R, sol)
        k_norms.append(np.linalg.norm(k, 2) if k.size else 0.0)
        c_gammas.append(g * noise_trace(L, sol.P, noise_cov) if L is not None else 0.0)
    p_norms = np.array(p_norms)
    growing = bool(p_norms.size >= 3 and p_norms[-1] > p_norms[-2] * (1 + 1e-3)
                   and p_norms[-2] > p_norms[-3] * (1 + 1e-3)
                   and (p_norms[-1] - p_norms[-2]) > (p_norms[-2] - p_norms[-3]))
    return SweepTable(gammas=gammas, p_norms=p_norms, c_gammas=np.array(c_gammas),
                      k_norms=np.array(k_norms), alphabar_V_coef=float(p_norms.max()),
                      c=float(max(c_gammas)), growing=growing)


def sweep_for_spec(spec, gamma_grid=DEFAULT_GAMMA_GRID):
    _require_lq(spec)
    return gamma_sweep_p_bound(spec.A, spec.B, spec.Q, spec.R, gamma_grid, L=spec.L,
                               noise_cov=spec.noise.second_moment)


def detectability_for_spec(spec):
    _require_lq(spec)
    return synthesize_detectability(spec.A, spec.B, spec.Q, spec.R, spec.noise.second_moment, spec.L)
