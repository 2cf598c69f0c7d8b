"""Experiment configuration: TOML text -> validated ExperimentConfig.

Validation collects every problem it finds and raises a single ConfigError
carrying the full list.
"""
from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, RecurlabError
from .policy import SELECTORS, EtaBound
from .simulator import STRATEGIES, PerturbationSpec
from .system_model import SigmaMetric, spec_from_dict

SCHEMA = {
    "": {"system", "assumptions", "policy", "certification", "output"},
    "system": {"type", "name", "A", "B", "L", "params", "noise", "cost", "state_box"},
    "system.noise": {"kind", "mean", "covariance", "center", "half_widths", "support", "probs"},
    "system.cost": {"type", "Q", "R"},
    "assumptions": {"mode", "sigma", "sigma_box", "a_W", "abar_W", "abar_V", "exponent", "c",
                    "c_gamma", "d", "e1", "e2", "M"},
    "policy": {"oracle", "selector", "eta", "control_box", "control_points", "K", "grid"},
    "policy.eta": {"eta0", "eta1"},
    "policy.grid": {"bounds", "counts", "tol", "quad_order", "margin", "boundary"},
    "certification": {"estimand", "Delta0", "Delta", "delta", "p", "T", "T_cap", "gammas",
                      "epsilons", "perturbation", "channels", "epsilon_margin", "N", "seed",
                      "alpha_ci", "x0", "pilot_N"},
    "output": {"dir", "stem", "formats"},
}
FORMATS = ("csv", "json", "svg")


@dataclass(frozen=True, eq=False)
class GridSettings:
    bounds: tuple
    counts: tuple
    tol: float = 1e-10
    quad_order: int = 8
    margin: float = 0.0
    boundary: str = "clamp"


@dataclass(frozen=True, eq=False)
class PolicyConfig:
    oracle: str = "lqr"
    selector: str = "greedy"
    etas: tuple = (EtaBound(),)
    control_box: Optional[tuple] = None
    control_points: int = 51
    K: Optional[np.ndarray] = None
    grid: Optional[GridSettings] = None

    def controls(self):
        from .value_iteration import control_grid

        return None if self.control_box is None else control_grid(self.control_box, self.control_points)


@dataclass(frozen=True, eq=False)
class AssumptionsConfig:
    mode: str = "auto"
    sigma: SigmaMetric = SigmaMetric()
    a_W: float = 0.0
    abar_W: float = 0.0
    abar_V: float = 0.0
    exponent: float = 2.0
    c: float = 0.0
    c_gamma: object = 0.0
    d: float = 0.0
    e1: float = 0.0
    e2: float = 0.0
    M: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class CertificationConfig:
    estimand: str = "recurrence"
    Delta0: float = 1.0
    Delta: object = "auto"
    delta: float = 0.5
    p: float = 0.1
    T: object = "theoretical"
    T_cap: Optional[int] = None
    gammas: tuple = (0.9,)
    epsilons: tuple = (0.0,)
    perturbation: str = "adversarial-radial"
    channels: tuple = ("p1", "p2", "p3", "p4")
    epsilon_margin: bool = True
    N: int = 1000
    seed: int = 0
    alpha_ci: float = 0.05
    x0: object = "ball"
    pilot_N: int = 1000

    def perturbation_for(self, eps):
        if eps == 0:
            return None
        return PerturbationSpec(eps, **{c: self.perturbation for c in self.channels})


@dataclass(frozen=True, eq=False)
class OutputConfig:
    dir: str = "results"
    stem: str = "results"
    formats: tuple = ("csv", "json")


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    system: object
    assumptions: AssumptionsConfig
    policy: PolicyConfig
    certification: CertificationConfig
    output: OutputConfig
    raw: dict = field(default_factory=dict)

    @property
    def config_hash(self):
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_overrides(self, seed=None, out_dir=None):
        from dataclasses import replace

        cert = self.certification if seed is None else replace(self.certification, seed=int(seed))
        out = self.output if out_dir is None else replace(self.output, dir=str(out_dir))
        raw = json.loads(json.dumps(self.raw, default=str))
        raw.setdefault("certification", {})["seed"] = cert.seed
        return replace(self, certification=cert, output=out, raw=raw)


class _Collector:
    def __init__(self):
        self.errors = []

    def add(self, msg):
        self.errors.append(msg)

    def table(self, d, section):
        if d is None:
            return {}
        if not isinstance(d, dict):
            self.add(f"[{section}] must be a table")
            return {}
        for key in d:
            if key not in SCHEMA[section]:
                where = f"section [{section}]" if section else "top level"
                self.add(f"unknown key '{key}' in {where}")
        return d

    def number(self, d, key, section, default, lo=None, hi=None, strict=(False, False), integer=False):
        if key not in d:
            return default
        v = d[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or (integer and not isinstance(v, int)):
            self.add(f"{section}.{key} must be {'an integer' if integer else 'a number'}")
            return default
        if lo is not None and (v < lo or (strict[0] and v == lo)):
            self.add(f"{section}.{key} must be {'>' if strict[0] else '>='} {lo}")
            return default
        if hi is not None and (v > hi or (strict[1] and v == hi)):
            self.add(f"{section}.{key} must be {'<' if strict[1] else '<='} {hi}")
            return default
        return int(v) if integer else float(v)

    def choice(self, d, key, section, options, default):
        v = d.get(key, default)
        if v not in options:
            self.add(f"{section}.{key} must be one of {list(options)}, got {v!r}")
            return default
        return v


def _matrix(c, v, name):
    try:
        a = np.array(v, dtype=float)
    except (TypeError, ValueError):
        c.add(f"{name} must be a numeric (nested) array")
        return None
    if not np.all(np.isfinite(a)):
        c.add(f"{name} has non-finite entries")
        return None
    return a


def _check_system(c, s):
    s = c.table(s, "system")
    c.table(s.get("noise"), "system.noise")
    c.table(s.get("cost"), "system.cost")
    kind = c.choice(s, "type", "system", ("linear", "benchmark"), "linear")
    if "noise" not in s:
        c.add("system.noise is required")
        return None
    if kind == "linear":
        for key in ("A", "B", "L"):
            if key not in s:
                c.add(f"system.{key} is required for a linear system")
        cost = s.get("cost") or {}
        if cost.get("type", "quadratic") != "quadratic":
            c.add("system.cost.type must be 'quadratic'")
        for key in ("Q", "R"):
            if key not in cost:
                c.add(f"system.cost.{key} is required")
        if any(k not in s for k in ("A", "B", "L")) or any(k not in cost for k in ("Q", "R")):
            return None
        A, B, L = (_matrix(c, s[k], k) for k in ("A", "B", "L"))
        Q, R = (_matrix(c, cost[k], k) for k in ("Q", "R"))
        if any(x is None for x in (A, B, L, Q, R)):
            return None
        A, B, L, Q, R = (np.atleast_2d(x) for x in (A, B, L, Q, R))
        n, ok = A.shape[0], True
        if A.shape != (n, n):
            c.add(f"A must be square, got {A.shape[0]}x{A.shape[1]}")
            ok = False
        for name, M in (("B", B), ("L", L)):
            if M.shape[0] != n:
                c.add(f"{name} has {M.shape[0]} rows but A is {n}x{n}")
                ok = False
        if Q.shape != (n, n):
            c.add(f"Q is {Q.shape[0]}x{Q.shape[1]} but the state dimension is {n}")
            ok = False
        m = B.shape[1]
        if R.shape != (m, m):
            c.add(f"R is {R.shape[0]}x{R.shape[1]} but the control dimension is {m}")
            ok = False
        elif not np.allclose(R, R.T, atol=1e-12) or np.linalg.eigvalsh((R + R.T) / 2).min() <= 0:
            c.add("R must be symmetric positive definite")
            ok = False
        if Q.shape == (n, n) and (not np.allclose(Q, Q.T, atol=1e-12)
                                  or np.linalg.eigvalsh((Q + Q.T) / 2).min() < -1e-12):
            c.add("Q must be symmetric positive semi-definite")
            ok = False
        noise = s.get("noise") or {}
        q = L.shape[1]
        for key in ("mean", "center", "covariance", "half_widths"):
            if key in noise:
                arr = _matrix(c, noise[key], f"noise.{key}")
                if arr is not None and arr.shape[:1] != (q,):
                    c.add(f"noise.{key} has dimension {arr.shape[0] if arr.ndim else 0} "
                          f"but L has {q} columns")
                    ok = False
        if not ok:
            return None
    try:
        return spec_from_dict(s)
    except (RecurlabError, KeyError, TypeError, ValueError) as exc:
        c.add(f"system: {exc}")
        return None


def _check_gamma_list(c, vals, name):
    if not isinstance(vals, list) or not vals:
        c.add(f"{name} must be a nonempty list")
        return ()
    out = []
    for g in vals:
        if isinstance(g, bool) or not isinstance(g, (int, float)) or not 0 < g < 1:
            c.add(f"gamma must lie in (0,1), got {g!r}")
        else:
            out.append(float(g))
    return tuple(out)


def _parse_assumptions(c, a, spec):
    a = c.table(a, "assumptions")
    mode = c.choice(a, "mode", "assumptions", ("auto", "manual"), "auto")
    sig = SigmaMetric()
    if a.get("sigma", "euclidean") == "distance_to_box":
        box = _matrix(c, a.get("sigma_box"), "assumptions.sigma_box")
        if box is None or box.ndim != 2 or box.shape[1] != 2:
            c.add("assumptions.sigma_box must be a list of [lo, hi] pairs")
        else:
            sig = SigmaMetric.distance_to_box(box[:, 0], box[:, 1])
    elif a.get("sigma", "euclidean") != "euclidean":
        c.add("assumptions.sigma must be 'euclidean' or 'distance_to_box'")
    if mode == "auto":
        if spec is not None and not (spec.is_linear and spec.is_quadratic):
            c.add("auto assumptions need a linear system with quadratic cost")
        return AssumptionsConfig(mode="auto", sigma=sig)
    num = lambda k, lo=0.0, strict=False: c.number(a, k, "assumptions", 0.0, lo=lo, strict=(strict, False))
    for k in ("a_W", "abar_V"):
        if k not in a:
            c.add(f"assumptions.{k} is required in manual mode")
    cg = a.get("c_gamma", a.get("c", 0.0))
    if isinstance(cg, list):
        cg = tuple(float(v) for v in cg)
    M = None
    if "M" in a:
        M = _matrix(c, a["M"], "assumptions.M")
        if M is not None and spec is not None and M.shape != (spec.n, spec.n):
            c.add(f"assumptions.M is {M.shape} but the state dimension is {spec.n}")
    return AssumptionsConfig(mode="manual", sigma=sig, a_W=num("a_W", strict=True), abar_W=num("abar_W"),
                             abar_V=num("abar_V", strict=True),
                             exponent=c.number(a, "exponent", "assumptions", 2.0, lo=0, strict=(True, False)),
                             c=num("c"), c_gamma=cg, d=num("d"), e1=num("e1"), e2=num("e2"), M=M)


def _parse_policy(c, p, spec):
    p = c.table(p, "policy")
    oracle = c.choice(p, "oracle", "policy", ("lqr", "grid"), "lqr")
    selector = c.choice(p, "selector", "policy", SELECTORS, "greedy")
    etas = []
    raw = p.get("eta", [{}])
    if isinstance(raw, dict):
        raw = [raw]
    if not isinstance(raw, list) or not raw:
        c.add("policy.eta must be a table or a nonempty array of tables")
        raw = []
    for e in raw:
        e = c.table(e, "policy.eta")
        etas.append(EtaBound(c.number(e, "eta0", "policy.eta", 0.0, lo=0.0),
                             c.number(e, "eta1", "policy.eta", 0.0, lo=0.0)))
    box = None
    if "control_box" in p:
        box = _matrix(c, p["control_box"], "policy.control_box")
        if box is not None:
            box = np.atleast_2d(box)
            if box.shape[1] != 2 or (spec is not None and box.shape[0] != spec.m):
                c.add(f"policy.control_box must have one [lo, hi] pair per control "
                      f"(got {box.shape[0]}, control dimension {spec.m if spec else '?'})")
                box = None
            else:
                box = tuple(map(tuple, box))
    if selector == "adversarial" and box is None:
        c.add("adversarial selector needs policy.control_box")
    if oracle == "grid" and box is None:
        c.add("grid oracle needs policy.control_box")
    K = None
    if "K" in p:
        K = _matrix(c, p["K"], "policy.K")
        if K is not None and spec is not None and np.atleast_2d(K).shape != (spec.m, spec.n):
            c.add(f"policy.K must be {spec.m}x{spec.n}")
    if oracle == "lqr" and spec is not None and not (spec.is_linear and spec.is_quadratic):
        c.add("policy.oracle 'lqr' needs a linear system with quadratic cost")
    grid = None
    if oracle == "grid":
        g = c.table(p.get("grid"), "policy.grid")
        if "bounds" not in g or "counts" not in g:
            c.add("policy.grid needs bounds and counts")
        else:
            grid = GridSettings(tuple(map(tuple, np.atleast_2d(np.array(g["bounds"], dtype=float)))),
                                tuple(np.atleast_1d(g["counts"]).tolist()),
                                c.number(g, "tol", "policy.grid", 1e-10, lo=0, strict=(True, False)),
                                c.number(g, "quad_order", "policy.grid", 8, lo=1, integer=True),
                                c.number(g, "margin", "policy.grid", 0.0, lo=0.0),
                                c.choice(g, "boundary", "policy.grid", ("clamp", "extrapolation-forbidden"),
                                         "clamp"))
    return PolicyConfig(oracle, selector, tuple(etas) or (EtaBound(),), box,
                        c.number(p, "control_points", "policy", 51, lo=2, integer=True), K, grid)


def _parse_certification(c, d, spec):
    d = c.table(d, "certification")
    sec = "certification"
    T = d.get("T", "theoretical")
    if not (T == "theoretical" or (isinstance(T, int) and not isinstance(T, bool) and T >= 0)):
        c.add("certification.T must be 'theoretical' or a nonnegative integer")
        T = "theoretical"
    Delta = d.get("Delta", "auto")
    if not (Delta in ("auto", "reachable", "empirical")
            or (isinstance(Delta, (int, float)) and not isinstance(Delta, bool) and Delta > 0)):
        c.add("certification.Delta must be 'auto', 'reachable', 'empirical' or a positive number")
        Delta = "auto"
    eps = d.get("epsilons", [0.0])
    if not isinstance(eps, list) or not eps or any(
            isinstance(e, bool) or not isinstance(e, (int, float)) or e < 0 for e in eps):
        c.add("certification.epsilons must be a nonempty list of nonnegative numbers")
        eps = [0.0]
    channels = d.get("channels", ["p1", "p2", "p3", "p4"])
    if not isinstance(channels, list) or any(ch not in ("p1", "p2", "p3", "p4") for ch in channels):
        c.add("certification.channels must be a subset of p1..p4")
        channels = ["p1", "p2", "p3", "p4"]
    x0 = d.get("x0", "ball")
    if isinstance(x0, list):
        pts = _matrix(c, x0, "certification.x0")
        if pts is not None and spec is not None and np.atleast_2d(pts).shape[1] != spec.n:
            c.add(f"certification.x0 points have dimension {np.atleast_2d(pts).shape[1]}, "
                  f"state dimension is {spec.n}")
        x0 = None if pts is None else np.atleast_2d(pts)
    elif x0 not in ("ball", "sphere"):
        c.add("certification.x0 must be 'ball', 'sphere' or a list of points")
        x0 = "ball"
    T_cap = d.get("T_cap")
    if T_cap is not None and (isinstance(T_cap, bool) or not isinstance(T_cap, int) or T_cap < 0):
        c.add("certification.T_cap must be a nonnegative integer")
        T_cap = None
    return CertificationConfig(
        estimand=c.choice(d, "estimand", sec, ("recurrence", "boundedness"), "recurrence"),
        Delta0=c.number(d, "Delta0", sec, 1.0, lo=0, strict=(True, False)),
        Delta=Delta,
        delta=c.number(d, "delta", sec, 0.5, lo=0, strict=(True, False)),
        p=c.number(d, "p", sec, 0.1, lo=0, hi=1, strict=(True, True)),
        T=T, T_cap=T_cap,
        gammas=_check_gamma_list(c, d.get("gammas", [0.9]), "certification.gammas"),
        epsilons=tuple(float(e) for e in eps),
        perturbation=c.choice(d, "perturbation", sec, STRATEGIES, "adversarial-radial"),
        channels=tuple(channels),
        epsilon_margin=bool(d.get("epsilon_margin", True)),
        N=c.number(d, "N", sec, 1000, lo=1, integer=True),
        seed=c.number(d, "seed", sec, 0, lo=0, integer=True),
        alpha_ci=c.number(d, "alpha_ci", sec, 0.05, lo=0, hi=1, strict=(True, True)),
        x0=x0,
        pilot_N=c.number(d, "pilot_N", sec, 1000, lo=1, integer=True))


def _parse_output(c, d):
    d = c.table(d, "output")
    fmts = d.get("formats", ["csv", "json"])
    if not isinstance(fmts, list) or any(f not in FORMATS for f in fmts):
        c.add(f"output.formats must be a subset of {list(FORMATS)}")
        fmts = ["csv", "json"]
    return OutputConfig(str(d.get("dir", "results")), str(d.get("stem", "results")), tuple(fmts))


def parse_config(text) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"config is not valid TOML: {exc}"]) from None
    c = _Collector()
    c.table(raw, "")
    if "system" not in raw:
        c.add("section [system] is required")
    spec = _check_system(c, raw.get("system", {})) if "system" in raw else None
    assumptions = _parse_assumptions(c, raw.get("assumptions"), spec)
    policy = _parse_policy(c, raw.get("policy"), spec)
    cert = _parse_certification(c, raw.get("certification"), spec)
    output = _parse_output(c, raw.get("output"))
    if (cert.Delta == "reachable" and spec is not None and not spec.is_linear):
        c.add("certification.Delta = 'reachable' needs a linear system")
    if c.errors:
        raise ConfigError(c.errors)
    return ExperimentConfig(spec, assumptions, policy, cert, output, raw)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError([f"cannot read config {path}: {exc.strerror}"]) from None
    return parse_config(text)
