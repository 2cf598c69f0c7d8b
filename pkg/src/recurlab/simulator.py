"""Strictly causal closed-loop rollouts, with and without perturbations.

Per step k the engine runs, in this order:

1. pre-noise perturbations p2 (controller input) and p3 (controller output),
2. u_k = select(x_k + p2) + p3, a function of the state only,
3. the noise draw v_k,
4. post-noise perturbations p1 (state before f) and p4 (state after f),
5. x_{k+1} = f(x_k + p1, u_k, v_k) + p4.

Noise values are pre-generated per trajectory from counter-based streams,
but they are only handed out at step 3; a ``CausalityAudit`` records the
order in which the engine asks for each ingredient.
"""
from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import rng
from .errors import ContractError
from .system_model import matvec

STRATEGIES = ("zero", "uniform-ball", "adversarial-radial")
PRE_NOISE = ("p2", "p3")
POST_NOISE = ("p1", "p4")
_CHANNELS = {"p1": rng.CHANNEL_P1, "p2": rng.CHANNEL_P2, "p3": rng.CHANNEL_P3, "p4": rng.CHANNEL_P4}
BLOCK = 1024


@dataclass(frozen=True)
class PerturbationSpec:
    epsilon: float = 0.0
    p1: str = "zero"
    p2: str = "zero"
    p3: str = "zero"
    p4: str = "zero"

    def __post_init__(self):
        if self.epsilon < 0:
            raise ContractError("epsilon must be nonnegative")
        for ch in ("p1", "p2", "p3", "p4"):
            if getattr(self, ch) not in STRATEGIES:
                raise ContractError(f"unknown perturbation strategy {getattr(self, ch)!r} for {ch}")

    @classmethod
    def uniform(cls, epsilon, channels=("p1", "p2", "p3", "p4")):
        return cls(epsilon, **{c: "uniform-ball" for c in channels})

    @classmethod
    def adversarial(cls, epsilon, channels=("p1", "p2", "p3", "p4")):
        return cls(epsilon, **{c: "adversarial-radial" for c in channels})

    @property
    def active(self):
        return self.epsilon > 0 and any(getattr(self, c) != "zero" for c in _CHANNELS)


class CausalityAudit:
    """Event log of (block, step, event) in the order the engine emitted them."""

    def __init__(self):
        self.events = []
        self.trajectories = 0

    def record(self, block, k, event):
        self.events.append((block, k, event))

    def violations(self):
        pos = {}
        for i, (b, k, e) in enumerate(self.events):
            pos.setdefault((b, k), {}).setdefault(e, i)
        bad = []
        for key, ev in pos.items():
            if "noise" not in ev:
                continue
            for pre in ("select",) + PRE_NOISE:
                if pre in ev and ev[pre] > ev["noise"]:
                    bad.append((key, pre, "noise"))
            if "select" not in ev:
                bad.append((key, "select", "missing"))
            for post in POST_NOISE:
                if post in ev and ev[post] < ev["noise"]:
                    bad.append((key, "noise", post))
        return bad

    def verify(self):
        bad = self.violations()
        if bad:
            raise ContractError(f"strict causality violated at {len(bad)} step(s), first: {bad[0]}")
        return True


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    """One closed-loop trajectory of horizon T.

    ``states`` holds x_0..x_T (fewer after a domain exit), ``controls``
    u_0..u_T, ``noise`` v_0..v_{T-1}; perturbations are keyed by channel.
    """

    states: np.ndarray
    controls: np.ndarray
    noise: np.ndarray
    perturbations: dict
    sigma: np.ndarray
    stage_cost: np.ndarray
    horizon: int
    seed: int
    traj: int
    exited: bool = False

    @property
    def length(self):
        return self.states.shape[0]


@dataclass
class _Block:
    states: np.ndarray
    controls: np.ndarray
    noise: np.ndarray
    perts: dict
    n_states: np.ndarray      # valid states per trajectory
    n_controls: np.ndarray
    exited: np.ndarray


def _unit(Z):
    nrm = np.linalg.norm(Z, axis=-1, keepdims=True)
    return np.divide(Z, nrm, out=np.zeros_like(Z), where=nrm > 0)


def _control_push_direction(spec, X, U):
    """Direction in u that increases <f(x,u,E v), x> (finite differences)."""
    if spec.is_linear:
        return _unit(matvec(spec.B.T, X))
    h = 1e-6
    V = np.broadcast_to(spec.noise.mean, X.shape[:-1] + (spec.q,))
    g = np.zeros_like(U)
    for j in range(spec.m):
        e = np.zeros(spec.m)
        e[j] = h
        fp = np.einsum("bi,bi->b", spec.dynamics(X, U + e, V), X)
        fm = np.einsum("bi,bi->b", spec.dynamics(X, U - e, V), X)
        g[:, j] = (fp - fm) / (2 * h)
    return _unit(g)


def _outside(domain, X):
    bad = ~np.all(np.isfinite(X), axis=-1)
    if domain is not None:
        bad |= domain.outside(np.nan_to_num(X))
    return bad


def _run_block(spec, oracle, X0, T, seed, trajs, pert, audit, block_id, check_membership,
               reverse_order):
    B, n, m, q = X0.shape[0], spec.n, spec.m, spec.q
    pert = pert or PerturbationSpec()
    eps = pert.epsilon
    noise = (np.stack([rng.noise_block(spec.noise, seed, t, T) for t in trajs])
             if T > 0 else np.zeros((B, 0, q)))
    dims = {"p1": n, "p2": n, "p3": m, "p4": n}
    rows = {"p1": T, "p2": T + 1, "p3": T + 1, "p4": T}
    perts = {c: np.zeros((B, rows[c], dims[c])) for c in _CHANNELS}
    draws = {}
    for c, ch in _CHANNELS.items():
        if getattr(pert, c) == "uniform-ball" and eps > 0 and rows[c] > 0:
            draws[c] = np.stack([rng.ball_block(seed, t, ch, rows[c], dims[c], eps) for t in trajs])

    def perturb(c, k, Xref, U=None):
        strat = getattr(pert, c)
        if strat == "zero" or eps == 0:
            return np.zeros((B, dims[c]))
        if strat == "uniform-ball":
            return draws[c][:, k]
        if c == "p3":
            return 0.5 * eps * _control_push_direction(spec, Xref, U)
        sign = -1.0 if c == "p2" else 1.0
        return sign * 0.5 * eps * _unit(Xref)

    states = np.full((B, T + 1, n), np.nan)
    controls = np.full((B, T + 1, m), np.nan)
    states[:, 0] = X0
    alive = ~_outside(oracle.domain, X0)
    n_states = np.ones(B, dtype=int)
    n_controls = np.zeros(B, dtype=int)
    X = X0.copy()
    for k in range(T + 1):
        if reverse_order and k < T:
            if audit is not None:
                audit.record(block_id, k, "noise")
            V = noise[:, k]
        p2 = perturb("p2", k, X)
        if audit is not None:
            audit.record(block_id, k, "p2")
        Xin = X + p2
        alive &= ~_outside(oracle.domain, Xin)
        U = np.zeros((B, m))
        if alive.any():
            U[alive] = oracle.select(Xin[alive])
        p3 = perturb("p3", k, Xin, U)
        if audit is not None:
            audit.record(block_id, k, "p3")
            audit.record(block_id, k, "select")
        U = U + p3
        if check_membership and alive.any():
            ok = oracle.members(Xin[alive], (U - p3)[alive])
            if not np.all(ok):
                raise ContractError(f"selected control fails membership at step {k}")
        controls[alive, k] = U[alive]
        n_controls[alive] = k + 1
        perts["p2"][:, k], perts["p3"][:, k] = p2, p3
        if k == T:
            break
        if not reverse_order:
            if audit is not None:
                audit.record(block_id, k, "noise")
            V = noise[:, k]
        p1 = perturb("p1", k, X)
        if audit is not None:
            audit.record(block_id, k, "p1")
        Xp = X + p1
        alive &= ~_outside(oracle.domain, Xp)
        Z = spec.dynamics(Xp, U, V)
        p4 = perturb("p4", k, Z)
        if audit is not None:
            audit.record(block_id, k, "p4")
        Xn = Z + p4
        perts["p1"][:, k], perts["p4"][:, k] = p1, p4
        alive &= np.all(np.isfinite(Xn), axis=-1)
        states[alive, k + 1] = Xn[alive]
        n_states[alive] = k + 2
        X = np.where(alive[:, None], Xn, X)
        if not alive.any():
            break
    exited = n_states < T + 1
    exited |= n_controls < T + 1
    return _Block(states, controls, noise, perts, n_states, n_controls, exited)


def _record_from_block(spec, oracle, blk, i, T, seed, traj):
    ns, nc = blk.n_states[i], blk.n_controls[i]
    X = blk.states[i, :ns]
    U = blk.controls[i, :nc]
    cost = spec.cost(X[:nc], U) if nc else np.zeros(0)
    perts = {c: v[i, :(nc if c in PRE_NOISE else max(ns - 1, 0))] for c, v in blk.perts.items()}
    sig = oracle.metric(X) if X.size else np.zeros(0)
    return TrajectoryRecord(states=X, controls=U, noise=blk.noise[i, :max(ns - 1, 0)],
                            perturbations=perts, sigma=sig, stage_cost=cost, horizon=T,
                            seed=seed, traj=traj, exited=bool(blk.exited[i]))


def _x0(spec, x0):
    x0 = np.asarray(x0, dtype=float).reshape(1, -1)
    if x0.shape[1] != spec.n:
        raise ContractError(f"x0 has dimension {x0.shape[1]}, system has {spec.n}")
    return x0


def rollout(spec, oracle, x0, T, seed=0, traj=0, audit=None, check_membership=False,
            _reverse_order=False):
    """Unperturbed strictly causal closed-loop trajectory."""
    return rollout_perturbed(spec, oracle, x0, T, None, seed, traj, audit, check_membership,
                             _reverse_order)


def rollout_perturbed(spec, oracle, x0, T, pert, seed=0, traj=0, audit=None,
                      check_membership=False, _reverse_order=False):
    if T < 0:
        raise ContractError("horizon must be nonnegative")
    blk = _run_block(spec, oracle, _x0(spec, x0), int(T), seed, [traj], pert, audit, traj,
                     check_membership, _reverse_order)
    if audit is not None:
        audit.trajectories += 1
    return _record_from_block(spec, oracle, blk, 0, int(T), seed, traj)


def map_ensemble(spec, oracle, x0s, T, seed, reducer, pert=None, workers=1, block=BLOCK,
                 audit=None, check_membership=False, traj_offset=0, _reverse_order=False):
    """Run trajectories traj_offset.. in fixed-size blocks and apply
    ``reducer(block_result)`` to each; results come back in block order.

    The block split does not depend on ``workers`` so the output is the same
    for any worker count.
    """
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    N = x0s.shape[0]
    starts = list(range(0, N, block))

    def job(s):
        trajs = list(range(traj_offset + s, traj_offset + min(s + block, N)))
        blk = _run_block(spec, oracle, x0s[s:s + block], int(T), seed, trajs, pert, audit,
                         traj_offset + s, check_membership, _reverse_order)
        return reducer(blk)

    if workers <= 1 or len(starts) == 1 or audit is not None:
        out = [job(s) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(job, starts))
    if audit is not None:
        audit.trajectories += N
    return out


def simulate_ensemble(spec, oracle, x0s, T, seed=0, pert=None, workers=1, block=BLOCK):
    """All trajectory records of an ensemble (memory grows with N*T)."""
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))

    def to_records(blk):
        return blk

    blocks = map_ensemble(spec, oracle, x0s, T, seed, to_records, pert, workers, block)
    records = []
    for b, blk in enumerate(blocks):
        for i in range(blk.states.shape[0]):
            traj = b * block + i
            records.append(_record_from_block(spec, oracle, blk, i, int(T), seed, traj))
    return records


def discounted_cost(record: TrajectoryRecord, gamma, stage_cost_envelope=None):
    """Partial discounted sum over k = 0..T and, given an upper bound on the
    stage cost along the continuation, the geometric tail bound."""
    if record.exited or record.stage_cost.size != record.horizon + 1:
        raise ContractError("discounted cost needs a complete (non-truncated) record")
    k = np.arange(record.stage_cost.size)
    partial = float(np.sum(gamma ** k * record.stage_cost))
    tail = None
    if stage_cost_envelope is not None:
        tail = float(gamma ** (record.horizon + 1) * stage_cost_envelope / (1 - gamma))
    return partial, tail


def first_hit_time(record: TrajectoryRecord, predicate) -> Optional[int]:
    if record.length == 0:
        return None
    hits = np.asarray(predicate(record.states), dtype=bool)
    idx = np.flatnonzero(hits)
    return int(idx[0]) if idx.size else None


def record_to_csv(record: TrajectoryRecord, predicate=None):
    n = record.states.shape[1]
    m = record.controls.shape[1] if record.controls.ndim == 2 else 0
    q = record.noise.shape[1] if record.noise.ndim == 2 else 0
    header = (["k"] + [f"x{i}" for i in range(n)] + [f"u{j}" for j in range(m)]
              + [f"v{j}" for j in range(q)] + ["sigma", "stage_cost", "hit_flag"])
    hits = (np.asarray(predicate(record.states), dtype=bool) if predicate is not None
            else np.zeros(record.length, dtype=bool))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for k in range(record.length):
        row = [k] + [repr(float(v)) for v in record.states[k]]
        row += ([repr(float(v)) for v in record.controls[k]] if k < record.controls.shape[0]
                else [""] * m)
        row += ([repr(float(v)) for v in record.noise[k]] if k < record.noise.shape[0]
                else [""] * q)
        row += [repr(float(record.sigma[k])),
                repr(float(record.stage_cost[k])) if k < record.stage_cost.size else "",
                int(hits[k])]
        w.writerow(row)
    return buf.getvalue()
