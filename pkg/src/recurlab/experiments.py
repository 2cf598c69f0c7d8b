"""Experiment orchestration: sweeps over (gamma, epsilon, eta), result tables
and their CSV / JSON / SVG renderings."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional
from xml.sax.saxutils import escape

import numpy as np

from .certification import (AssumptionBundle, Monomial, RecurrenceSetParams, auto_bundle,
                            empirical_delta, estimate_boundedness, estimate_recurrence,
                            lqr_control_envelope, reachable_delta, theoretical_gamma_star,
                            theoretical_horizon)
from .errors import ContractError, RecurlabError
from .policy import EtaBound, PolicyOracle
from .riccati_lqr import DEFAULT_GAMMA_GRID, lqr_oracle, sweep_for_spec
from .value_iteration import StateGrid, grid_eta, make_quadrature, value_iterate


@dataclass
class ResultRow:
    gamma: float
    epsilon: float
    eta: str
    estimand: str
    N: Optional[int] = None
    S: Optional[int] = None
    estimate: Optional[float] = None
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None
    T_theoretical: Optional[int] = None
    T_used: Optional[int] = None
    gamma_star: Optional[float] = None
    Delta: Optional[float] = None
    radius: Optional[float] = None
    delta_eff: Optional[float] = None
    seed: Optional[int] = None
    config_hash: str = ""
    error: str = ""
    notes: str = ""
    wall_time: float = 0.0


CSV_COLUMNS = tuple(f.name for f in fields(ResultRow) if f.name != "wall_time")
_INT_COLUMNS = {"N", "S", "T_theoretical", "T_used", "seed"}
_STR_COLUMNS = {"eta", "estimand", "config_hash", "error", "notes"}


@dataclass
class ResultTable:
    rows: list = field(default_factory=list)
    config_hash: str = ""

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        return [getattr(r, name) for r in self.rows]


class ExperimentContext:
    """Per-config caches: the assumption bundle, the Riccati sweep and grid
    value functions are computed once and shared by all rows."""

    def __init__(self, cfg, workers=1):
        self.cfg = cfg
        self.spec = cfg.system
        self.workers = workers
        self._bundle = None
        self._sweep = None
        self._grid_V = {}

    @property
    def gamma_grid(self):
        return tuple(sorted(set(DEFAULT_GAMMA_GRID) | set(self.cfg.certification.gammas)))

    def sweep(self):
        if self._sweep is None:
            self._sweep = sweep_for_spec(self.spec, self.gamma_grid)
        return self._sweep

    def bundle(self) -> AssumptionBundle:
        if self._bundle is not None:
            return self._bundle
        a = self.cfg.assumptions
        if a.mode == "auto":
            b, self._sweep, _ = auto_bundle(self.spec, self.gamma_grid)
        else:
            gammas = self.cfg.certification.gammas
            cg = a.c_gamma
            if isinstance(cg, tuple):
                if len(cg) != len(gammas):
                    raise ContractError("assumptions.c_gamma list must match certification.gammas")
                table = dict(zip(gammas, cg))
                c_gamma = lambda g: table[min((x for x in table if x >= g), default=max(table))]
                c = max(a.c, max(cg))
            else:
                c_gamma = lambda g, v=float(cg): v
                c = max(a.c, float(cg))
            b = AssumptionBundle(alpha_W=Monomial(a.a_W, a.exponent), alphabar_W=Monomial(a.abar_W, a.exponent),
                                 alphabar_V=Monomial(a.abar_V, a.exponent), c_gamma=c_gamma, c=c, d=a.d,
                                 e1=a.e1, e2=a.e2, W_M=a.M, notes=("user-supplied assumption constants",))
        self._bundle = replace(b, sigma=a.sigma)
        return self._bundle

    def grid_value(self, gamma):
        if gamma not in self._grid_V:
            g = self.cfg.policy.grid
            grid = StateGrid.uniform(g.bounds, g.counts)
            quad = make_quadrature(self.spec.noise, g.quad_order)
            V = value_iterate(self.spec, grid, self.cfg.policy.controls(), quad, gamma, tol=g.tol,
                              boundary_policy=g.boundary)
            self._grid_V[gamma] = (V, quad)
        return self._grid_V[gamma]

    def oracle(self, gamma, eta: EtaBound) -> PolicyOracle:
        p = self.cfg.policy
        metric = self.cfg.assumptions.sigma
        if p.oracle == "lqr":
            return PolicyOracle(self.spec, lqr_oracle(self.spec, gamma), gamma, eta, p.selector,
                                p.controls(), None, p.K, metric)
        V, quad = self.grid_value(gamma)
        extra = grid_eta(V, p.grid.margin).eta0
        return PolicyOracle(self.spec, V, gamma, EtaBound(eta.eta0 + extra, eta.eta1), p.selector,
                            p.controls(), quad, p.K, metric)

    def control_envelope(self, oracle):
        p = self.cfg.policy
        if oracle.is_lqr and p.selector == "greedy" and p.K is None:
            return lqr_control_envelope(self.spec, self.sweep(), oracle.eta)
        if p.control_box is not None:
            box = np.asarray(p.control_box)
            return 0.0, float(np.linalg.norm(np.abs(box).max(axis=1)))
        if oracle.gain is not None:
            return float(np.linalg.norm(oracle.gain, 2)), 0.0
        raise ContractError("no control envelope available; give policy.control_box")

    def delta_kind(self, oracle):
        cert = self.cfg.certification
        if isinstance(cert.Delta, (int, float)):
            return "fixed"
        linear_ok = self.spec.is_linear and oracle.metric.kind == "euclidean"
        if cert.Delta == "reachable" or (cert.Delta == "auto" and linear_ok):
            return "reachable"
        return "empirical"

    def delta_for(self, oracle, T, pert=None):
        cert = self.cfg.certification
        kind = self.delta_kind(oracle)
        if kind == "fixed":
            return float(cert.Delta), "fixed"
        if kind == "reachable":
            k, k0 = self.control_envelope(oracle)
            eps = pert.epsilon if pert is not None else 0.0
            D = reachable_delta(cert.Delta0, T, cert.p, self.spec, k, k0, metric=oracle.metric,
                                epsilon=eps)
            return D, "reachable"
        D = empirical_delta(self.spec, oracle, self._x0(), T, cert.p, cert.pilot_N, cert.seed + 1,
                            pert, self.workers)
        return D, "empirical"

    def _x0(self):
        x0 = self.cfg.certification.x0
        if isinstance(x0, str):
            return (x0, self.cfg.certification.Delta0)
        return x0

    def horizons(self):
        cert = self.cfg.certification
        T_th = theoretical_horizon(cert.Delta0, cert.delta, cert.p, self.bundle())
        if cert.T == "theoretical":
            T_used = T_th if cert.T_cap is None else min(T_th, cert.T_cap)
        else:
            T_used = int(cert.T)
        return T_th, T_used

    def recurrence_params(self, gamma, eta, epsilon):
        cert = self.cfg.certification
        base = RecurrenceSetParams(gamma, cert.delta, eta, self.bundle())
        if epsilon > 0 and cert.epsilon_margin:
            return inflate_for_epsilon(base, epsilon)
        return base


def inflate_for_epsilon(params: RecurrenceSetParams, epsilon):
    """Grow delta so the sigma-radius of the set grows by epsilon."""
    r = params.radius
    if not np.isfinite(r):
        return params
    aw = params.bundle.alpha_W
    extra = float(aw(r + epsilon) - aw(r))
    return RecurrenceSetParams(params.gamma, params.delta + extra, params.eta, params.bundle)


def _run_row(ctx: ExperimentContext, gamma, eps, eta):
    cfg = ctx.cfg
    cert = cfg.certification
    row = ResultRow(gamma=gamma, epsilon=eps, eta=eta.label(), estimand=cert.estimand,
                    seed=cert.seed, config_hash=cfg.config_hash)
    t0 = time.perf_counter()
    try:
        bundle = ctx.bundle()
        row.notes = " | ".join(bundle.notes)
        T_th, T_used = ctx.horizons()
        row.T_theoretical, row.T_used = T_th, T_used
        oracle = ctx.oracle(gamma, eta)
        pert = cert.perturbation_for(eps)
        if pert is not None and pert.active:
            row.notes += " | equi-continuity of the near-optimal set map is not tested"
        params = ctx.recurrence_params(gamma, oracle.eta, eps)
        row.radius, row.delta_eff = params.radius, params.delta
        # an empirical Delta needs a pilot run, so it is only taken at the simulated horizon
        T_star = T_used if ctx.delta_kind(oracle) == "empirical" else T_th
        if T_star != T_th:
            row.notes += f" | gamma_star uses the empirical Delta at T={T_used}"
        D_th, _ = ctx.delta_for(oracle, T_star, pert)
        row.gamma_star = theoretical_gamma_star(D_th, cert.delta, bundle)
        if cert.estimand == "boundedness":
            D, _ = ctx.delta_for(oracle, T_used, pert)
            row.Delta = D
            est = estimate_boundedness(cfg.system, oracle, ctx._x0(), D, T_used, cert.N, cert.seed, pert,
                                       cert.alpha_ci, ctx.workers, cfg.config_hash)
        else:
            row.Delta = D_th
            est = estimate_recurrence(cfg.system, oracle, params, ctx._x0(), T_used, cert.N, cert.seed,
                                      pert, cert.alpha_ci, ctx.workers, cfg.config_hash)
        row.N, row.S = est.trials, est.successes
        row.estimate, row.ci_low, row.ci_high = est.estimate, est.ci_low, est.ci_high
    except (RecurlabError, ArithmeticError, ValueError) as exc:
        row.error = f"{type(exc).__name__}: {exc}"
    row.wall_time = time.perf_counter() - t0
    return row


def run_experiment(cfg, workers=1) -> ResultTable:
    """One row per (gamma, epsilon, eta) in the config's declared order.
    Failures are recorded in the row and the sweep continues."""
    ctx = ExperimentContext(cfg, workers)
    table = ResultTable(config_hash=cfg.config_hash)
    for gamma in cfg.certification.gammas:
        for eps in cfg.certification.epsilons:
            for eta in cfg.policy.etas:
                table.rows.append(_run_row(ctx, gamma, eps, eta))
    return table


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def table_to_csv(table: ResultTable):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in table.rows:
        w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def parse_csv(text):
    """Rows of an emitted CSV back as ResultRow objects (wall time is not stored)."""
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        kw = {}
        for c in CSV_COLUMNS:
            s = rec[c]
            if c in _STR_COLUMNS:
                kw[c] = s
            elif s == "":
                kw[c] = None
            elif c in _INT_COLUMNS:
                kw[c] = int(s)
            else:
                kw[c] = float(s)
        rows.append(ResultRow(**kw))
    return rows


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def table_to_json(table: ResultTable):
    return json.dumps([{k: _json_safe(v) for k, v in asdict(r).items()} for r in table.rows], indent=2)


def table_to_svg(table: ResultTable, width=640, height=400):
    """Estimate vs gamma (axis in -log10(1-gamma)) with CI whiskers, one
    series per (epsilon, eta)."""
    pad = 60
    pts = [r for r in table.rows if r.estimate is not None]
    xs = [-math.log10(1 - r.gamma) for r in table.rows] or [0.0]
    x0, x1 = min(xs), max(xs)
    if x1 - x0 < 1e-12:
        x0, x1 = x0 - 0.5, x1 + 0.5
    lo = min([r.ci_low for r in pts] + [1.0]) if pts else 0.0
    y0, y1 = min(lo, 0.9) - 0.02, 1.0 + 0.02
    sx = lambda g: pad + (-math.log10(1 - g) - x0) / (x1 - x0) * (width - 2 * pad)
    sy = lambda p: height - pad - (p - y0) / (y1 - y0) * (height - 2 * pad)
    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           '<rect width="100%" height="100%" fill="white"/>',
           f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
           f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
           f'<text x="{width / 2}" y="{height - 15}" text-anchor="middle" font-size="12">gamma</text>',
           f'<text x="15" y="{height / 2}" font-size="12" transform="rotate(-90 15 {height / 2})" '
           f'text-anchor="middle">estimate</text>']
    for g in sorted({r.gamma for r in table.rows}):
        out.append(f'<text x="{sx(g):.2f}" y="{height - pad + 15}" text-anchor="middle" '
                   f'font-size="10">{g:g}</text>')
    for p in (y0 + 0.02, 1.0):
        out.append(f'<text x="{pad - 5}" y="{sy(p):.2f}" text-anchor="end" font-size="10">{p:.3g}</text>')
    series = {}
    for r in pts:
        series.setdefault((r.epsilon, r.eta), []).append(r)
    for i, ((eps, eta), rows) in enumerate(sorted(series.items())):
        col = colors[i % len(colors)]
        rows = sorted(rows, key=lambda r: r.gamma)
        path = " ".join(f"{sx(r.gamma):.2f},{sy(r.estimate):.2f}" for r in rows)
        out.append(f'<polyline points="{path}" fill="none" stroke="{col}"/>')
        for r in rows:
            x = sx(r.gamma)
            out.append(f'<line x1="{x:.2f}" y1="{sy(r.ci_low):.2f}" x2="{x:.2f}" y2="{sy(r.ci_high):.2f}" '
                       f'stroke="{col}"/>')
            out.append(f'<circle cx="{x:.2f}" cy="{sy(r.estimate):.2f}" r="3" fill="{col}"/>')
        label = escape(f"eps={eps:g}, eta={eta}")
        out.append(f'<text x="{width - pad}" y="{pad + 14 * i}" text-anchor="end" font-size="10" '
                   f'fill="{col}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_outputs(table: ResultTable, out_dir, formats=("csv", "json"), stem="results"):
    """Write the table in each requested format; returns the written paths."""
    if not table.rows:
        raise ContractError("cannot emit an empty result table")
    render = {"csv": table_to_csv, "json": table_to_json, "svg": table_to_svg}
    paths = []
    try:
        os.makedirs(out_dir, exist_ok=True)
        for fmt in formats:
            path = os.path.join(out_dir, f"{stem}.{fmt}")
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(render[fmt](table))
            paths.append(path)
    except OSError as exc:
        raise RecurlabError(f"cannot write outputs to {exc.filename or out_dir}: {exc.strerror}") from None
    return paths
