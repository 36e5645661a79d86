"""Event-driven curve optimization: smooth constraint residuals with analytic
gradients, an augmented Lagrangian outer loop, projected-gradient inner
solves and randomized restarts for the initial plan.

The decision variable is the packed Fourier parameter vector. The cost is the
traversal time of the curve under the active exploration law; the constraints
require the curve to observe every uncovered cell, pass through every pending
pick-up, join the previous curve smoothly after a replan, end at the depot,
and stay clear of known obstacle cells (a bump penalty folded into the
multiplier scheme as one extra entry).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels, curve_traversal, fourier_curve
from .curve_traversal import SegmentLayout, StopSchedule, VelocityProfile
from .fourier_curve import CurveParams
from .hybrid_core import EPS_POS, EPS_VEL


@dataclass(frozen=True)
class OptimizerConfig:
    nu: float = 2.0
    eps: float = 1e-3
    inner_eps: float = 1e-6
    n_s: int = 800               # traversal profile grid
    n_seed: int = 400            # curve samples seeding the 1-D minimizations
    refine_iters: int = 60
    max_outer: int = 30
    max_inner: int = 60
    armijo_c: float = 1e-4
    armijo_rho: float = 0.5
    max_backtracks: int = 45
    restarts: int = 12
    restart_outer: int = 8
    restart_inner: int = 30
    mu_cap: float = 1e8
    workspace_weight: float = 20.0
    gamma1: int = 3
    gamma2: int = 3
    f1_low: float = 0.5          # multiples of f2
    f1_high: float = 2.0
    amp_frac: float = 0.5        # amplitude range as a fraction of y_max
    divergence_window: int = 20
    u_max: float = 0.95          # control headroom left for execution tracking


@dataclass
class ReplanContext:
    """Snapshot of everything a single replan depends on."""

    y: np.ndarray
    v: np.ndarray
    s_minus: float
    prev: CurveParams | None
    uncovered: np.ndarray          # (K, 2); empty when all objects are detected
    pending: list                  # [(object_id, position, mass)]
    obstacle_cells: np.ndarray     # (Ko, 2)
    d_s: float
    r: float
    y_max: float
    m_nominal: float
    carried_mass: float
    law_kind: str                  # "worst" | "prob"

    @property
    def moving(self) -> bool:
        return float(np.linalg.norm(self.v)) > EPS_VEL


@dataclass
class ConstraintEval:
    residuals: np.ndarray          # (b,)
    s_star: np.ndarray             # (b,) inner minimizer (nan for fixed-point entries)
    grads: np.ndarray | None       # (b, a)
    labels: list
    j_obstacle: float
    grad_obstacle: np.ndarray | None

    @property
    def max_residual(self) -> float:
        m = float(self.residuals.max()) if self.residuals.size else 0.0
        return max(m, self.j_obstacle)


@dataclass
class LagrangianState:
    mu: float = 1.0
    lam: np.ndarray | None = None
    z: int = 0


def _seed_samples(params: CurveParams, n_seed: int):
    s = np.linspace(0.0, 1.0, n_seed)
    c, cp, _ = fourier_curve.eval(params, s)
    return s, c, cp


def _nearest(params, targets, seed_s, seed_c, refine_mask, iters):
    return _kernels.nearest_on_curve(
        np.ascontiguousarray(targets, dtype=float).reshape(-1, 2),
        seed_s, np.ascontiguousarray(seed_c.T), refine_mask,
        params.f1, params.f2, params.a1, params.a2,
        params.phi1, params.phi2, iters)


def _rows_from_points(params, s_pts, coeff_dirs):
    """Gradient rows coeff^T * grad_theta(c)(s) for a batch of (s, coeff)."""
    gc, _, _ = fourier_curve.grad_theta(params, np.asarray(s_pts, dtype=float))
    return np.einsum("ni,ian->na", coeff_dirs, gc)


def coverage_residual(params: CurveParams, w_k, r: float, cfg: OptimizerConfig | None = None):
    """Observability residual of one grid cell: 1 - exp(-(D-r)^2) past the
    sensor range, 0 inside it; returns (value, s_star, gradient)."""
    cfg = cfg or OptimizerConfig()
    seed_s, seed_c, _ = _seed_samples(params, cfg.n_seed)
    s_star, d = _nearest(params, [w_k], seed_s, seed_c,
                         np.ones(1, dtype=bool), cfg.refine_iters)
    s_star, d = float(s_star[0]), float(d[0])
    if d <= r:
        return 0.0, s_star, np.zeros(params.size)
    val = 1.0 - math.exp(-((d - r) ** 2))
    c, _, _ = fourier_curve.eval(params, s_star)
    coeff = 2.0 * (d - r) * math.exp(-((d - r) ** 2)) / d * (c - np.asarray(w_k, dtype=float))
    grad = _rows_from_points(params, [s_star], coeff[None, :])[0]
    return val, s_star, grad


def residual_margin(eps: float) -> float:
    """Distance implied by a residual at the convergence threshold:
    1 - exp(-m^2) = eps."""
    return math.sqrt(-math.log(1.0 - eps))


def point_scale(eps: float, tol: float) -> float:
    """Sharpness making the composite point residual imply distance <= tol
    once the residual clears eps (the sharp term carries weight 1/2)."""
    return tol * math.sqrt((0.5 - eps) / eps)


def _point_residual(d, sigma, reach: float = 5.0):
    """Composite pass-through residual: workspace-scale and unit-scale
    exponential terms keep a usable gradient at any distance, a sharp
    rational term makes the eps level imply the geometric tolerance.
    Returns (value, d value / d distance)."""
    d = np.asarray(d, dtype=float)
    z = (d / sigma) ** 2
    e1 = np.exp(-d * d)
    e2 = np.exp(-((d / reach) ** 2))
    val = 0.25 * (1.0 - e2) + 0.25 * (1.0 - e1) + 0.5 * z / (1.0 + z)
    dval = 0.5 * d / reach ** 2 * e2 + 0.5 * d * e1 \
        + (d / sigma ** 2) / (1.0 + z) ** 2
    return val, dval


def pickup_residual(params: CurveParams, p, cfg: OptimizerConfig | None = None,
                    scale: float | None = None, reach: float = 5.0):
    """Pass-through residual of a pending pick-up: zero exactly when the
    curve meets the point, smooth and bounded below one elsewhere; the sharp
    component makes the eps level imply the pick-up tolerance."""
    cfg = cfg or OptimizerConfig()
    sigma = scale if scale is not None else point_scale(cfg.eps, EPS_POS)
    seed_s, seed_c, _ = _seed_samples(params, cfg.n_seed)
    s_star, d = _nearest(params, [p], seed_s, seed_c,
                         np.ones(1, dtype=bool), cfg.refine_iters)
    s_star, d = float(s_star[0]), float(d[0])
    val, dval = _point_residual(d, sigma, reach)
    c, _, _ = fourier_curve.eval(params, s_star)
    coeff = (float(dval) / max(d, 1e-12)) * (c - np.asarray(p, dtype=float))
    grad = _rows_from_points(params, [s_star], coeff[None, :])[0]
    return float(val), s_star, grad


def continuity_residuals(prev: CurveParams, s_minus: float, params: CurveParams,
                         moving: bool, scale_y: float = 1.0, scale_v: float = 1.0):
    """Residuals tying the new curve's start to the old curve's state at
    s_minus: position always, tangent only while moving."""
    c_prev, cp_prev, _ = fourier_curve.eval(prev, s_minus)
    return _continuity_from_state(c_prev, cp_prev if moving else None, params,
                                  scale_y, scale_v)


def _continuity_from_state(anchor_pos, anchor_tan, params: CurveParams,
                           scale_y: float = 1.0, scale_v: float = 1.0,
                           reach: float = 5.0):
    c0, cp0, _ = fourier_curve.eval(params, 0.0)
    gc, gcp, _ = fourier_curve.grad_theta(params, 0.0)
    out = []
    dy = np.asarray(anchor_pos, dtype=float) - c0
    dn = float(np.linalg.norm(dy))
    val, dval = _point_residual(dn, scale_y, reach)
    grad = (-float(dval) / max(dn, 1e-12)) * (dy @ gc)
    out.append(("cont_y", float(val), grad))
    if anchor_tan is not None:
        dv = np.asarray(anchor_tan, dtype=float) - cp0
        dn = float(np.linalg.norm(dv))
        val, dval = _point_residual(dn, scale_v, reach * 10.0)
        grad = (-float(dval) / max(dn, 1e-12)) * (dv @ gcp)
        out.append(("cont_v", float(val), grad))
    return out


def terminal_residual(params: CurveParams, depot=None, scale: float = 1.0,
                      reach: float = 5.0):
    """Depot-arrival residual at the end of the curve: zero exactly at the
    depot, sharp at the pick-up tolerance, with pull at workspace range."""
    depot = np.zeros(2) if depot is None else np.asarray(depot, dtype=float)
    c1, _, _ = fourier_curve.eval(params, 1.0)
    gc, _, _ = fourier_curve.grad_theta(params, 1.0)
    d = c1 - depot
    dn = float(np.linalg.norm(d))
    val, dval = _point_residual(dn, scale, reach)
    grad = (float(dval) / max(dn, 1e-12)) * (d @ gc)
    return float(val), grad


def obstacle_penalty(params: CurveParams, cells, d_s: float,
                     cfg: OptimizerConfig | None = None, want_grad: bool = True):
    """Bump penalty of known obstacle cells: sum of max(0, 1-(D/d_s)^2)^2 over
    per-cell nearest distances; zero (with zero gradient) off the obstacle."""
    cfg = cfg or OptimizerConfig()
    cells = np.asarray(cells, dtype=float).reshape(-1, 2)
    if cells.shape[0] == 0:
        return 0.0, np.zeros(params.size) if want_grad else None, np.empty(0)
    seed_s, seed_c, _ = _seed_samples(params, cfg.n_seed)
    margin = float(np.max(np.linalg.norm(np.diff(seed_c, axis=1), axis=0))) if seed_c.shape[1] > 1 else 1.0
    d_seed = np.min(np.linalg.norm(seed_c.T[None, :, :] - cells[:, None, :], axis=2), axis=1)
    refine = d_seed < d_s + margin
    s_star, d = _nearest(params, cells, seed_s, seed_c, refine, cfg.refine_iters)
    h = np.clip(1.0 - (d / d_s) ** 2, 0.0, None)
    val = float(np.sum(h ** 2))
    if not want_grad:
        return val, None, s_star
    active = np.flatnonzero(h > 0)
    grad = np.zeros(params.size)
    if active.size:
        c_at, _, _ = fourier_curve.eval(params, s_star[active])
        coeff = (-4.0 / d_s ** 2) * h[active][:, None] * (c_at.T - cells[active])
        grad = _rows_from_points(params, s_star[active], coeff).sum(axis=0)
    return val, grad, s_star


def inner_minimize(f, df, eps_inner: float = 1e-6, max_iter: int = 500,
                   n_samples: int = 50, n_starts: int = 5, rng=None):
    """Multi-start projected gradient descent of a scalar residual over
    s in [0, 1]: seed from the best of uniform samples, Armijo backtracking,
    stop when the projected gradient is below eps_inner."""
    rng = rng or np.random.default_rng(0)
    samples = np.sort(rng.uniform(0.0, 1.0, n_samples))
    vals = np.array([f(s) for s in samples])
    starts = samples[np.argsort(vals)[:n_starts]]
    best_s, best_f = float(starts[0]), float(vals.min())

    def projected_grad(s, g):
        if s <= 0.0 and g > 0.0:
            return 0.0
        if s >= 1.0 and g < 0.0:
            return 0.0
        return g

    for s0 in starts:
        s = float(s0)
        fs = f(s)
        eta = 0.1
        for _ in range(max_iter // n_starts):
            g = projected_grad(s, df(s))
            if abs(g) < eps_inner:
                break
            step = eta
            for _ in range(30):
                s_try = min(1.0, max(0.0, s - step * g))
                f_try = f(s_try)
                if f_try <= fs - 1e-4 * step * g * g:
                    break
                step *= 0.5
            if s_try == s:
                break
            s, fs = s_try, f_try
            eta = min(step * 2.0, 0.5)
        if fs < best_f:
            best_s, best_f = s, fs
    return best_s, best_f


def evaluate_constraints(params: CurveParams, ctx: ReplanContext,
                         cfg: OptimizerConfig, want_grad: bool = True) -> ConstraintEval:
    """Full residual vector in block order [coverage, pick-ups, continuity,
    terminal] plus the obstacle penalty; gradients use the frozen inner
    minimizers (Danskin rule)."""
    seed_s, seed_c, _ = _seed_samples(params, cfg.n_seed)
    margin = float(np.max(np.linalg.norm(np.diff(seed_c, axis=1), axis=0))) if seed_c.shape[1] > 1 else 1.0
    a_dim = params.size
    residuals, s_stars, rows, labels = [], [], [], []
    # clearing a residual at the eps threshold must imply the geometric
    # condition itself: plan coverage against a tightened radius and sharpen
    # the point residuals to the pick-up tolerance
    slack = residual_margin(cfg.eps)
    r_plan = ctx.r - slack
    sigma_p = point_scale(cfg.eps, EPS_POS)
    reach = max(2.0, ctx.y_max)

    uncovered = ctx.uncovered.reshape(-1, 2)
    if uncovered.shape[0]:
        d2 = ((seed_c.T[None, :, :] - uncovered[:, None, :]) ** 2).sum(-1)
        d_seed = np.sqrt(d2.min(axis=1))
        refine = d_seed > r_plan - margin
        s_star, d = _nearest(params, uncovered, seed_s, seed_c, refine, cfg.refine_iters)
        over = d > r_plan
        res = np.where(over, 1.0 - np.exp(-((d - r_plan) ** 2)), 0.0)
        residuals.append(res)
        s_stars.append(s_star)
        labels.extend(["cover"] * uncovered.shape[0])
        if want_grad:
            block = np.zeros((uncovered.shape[0], a_dim))
            act = np.flatnonzero(over)
            if act.size:
                c_at, _, _ = fourier_curve.eval(params, s_star[act])
                dd = d[act]
                coeff = (2.0 * (dd - r_plan) * np.exp(-((dd - r_plan) ** 2)) / dd)[:, None] \
                    * (c_at.T - uncovered[act])
                block[act] = _rows_from_points(params, s_star[act], coeff)
            rows.append(block)

    if ctx.pending:
        pts = np.array([p[1] for p in ctx.pending], dtype=float).reshape(-1, 2)
        s_star, d = _nearest(params, pts, seed_s, seed_c,
                             np.ones(pts.shape[0], dtype=bool), cfg.refine_iters)
        val, dval = _point_residual(d, sigma_p, reach)
        residuals.append(val)
        s_stars.append(s_star)
        labels.extend(["pickup"] * pts.shape[0])
        if want_grad:
            c_at, _, _ = fourier_curve.eval(params, s_star)
            coeff = (dval / np.maximum(d, 1e-12))[:, None] * (c_at.T - pts)
            rows.append(_rows_from_points(params, s_star, coeff))

    if ctx.prev is not None:
        c_prev, cp_prev, _ = fourier_curve.eval(ctx.prev, ctx.s_minus)
        sigma_v = point_scale(cfg.eps, max(1e-3 * float(np.linalg.norm(cp_prev)), 1e-6))
        cont = _continuity_from_state(
            c_prev, cp_prev if ctx.moving else None, params, sigma_p, sigma_v, reach)
    else:
        cont = _continuity_from_state(ctx.y, None, params, sigma_p, reach)
    for name, val, grad in cont:
        residuals.append(np.array([val]))
        s_stars.append(np.array([np.nan]))
        labels.append(name)
        if want_grad:
            rows.append(grad[None, :])

    t_val, t_grad = terminal_residual(params, scale=sigma_p, reach=reach)
    residuals.append(np.array([t_val]))
    s_stars.append(np.array([np.nan]))
    labels.append("terminal")
    if want_grad:
        rows.append(t_grad[None, :])

    j_o, g_o, _ = obstacle_penalty(params, ctx.obstacle_cells, ctx.d_s, cfg, want_grad)
    return ConstraintEval(
        residuals=np.concatenate(residuals),
        s_star=np.concatenate(s_stars),
        grads=np.vstack(rows) if want_grad else None,
        labels=labels,
        j_obstacle=j_o,
        grad_obstacle=g_o,
    )


def workspace_penalty(params: CurveParams, y_max: float, weight: float,
                      n: int = 200, want_grad: bool = True):
    """Soft projection of the curve into the workspace: mean squared
    exceedance of |c_i(s)| over y_max, sampled along s."""
    s = np.linspace(0.0, 1.0, n)
    c, _, _ = fourier_curve.eval(params, s)
    exc = np.clip(np.abs(c) - y_max, 0.0, None)
    val = weight * float(np.mean(exc ** 2))
    if not want_grad:
        return val, None
    if not np.any(exc > 0):
        return val, np.zeros(params.size)
    gc, _, _ = fourier_curve.grad_theta(params, s)
    coeff = 2.0 * weight * exc * np.sign(c) / n
    grad = np.einsum("in,ian->a", coeff, gc)
    return val, grad


def augmented_value(j1: float, residuals: np.ndarray, mu: float, lam: np.ndarray) -> float:
    """The augmented Lagrangian J1 + (mu/2) J2'J2 + lambda'J2."""
    return float(j1 + 0.5 * mu * residuals @ residuals + lam @ residuals)


def update_multipliers(lam: np.ndarray, mu: float, residuals: np.ndarray) -> np.ndarray:
    return lam + mu * residuals


def compute_spans(params: CurveParams, ctx: ReplanContext, cfg: OptimizerConfig) -> SegmentLayout:
    return curve_traversal.exploration_spans(
        params, ctx.uncovered, ctx.r, n_s=max(cfg.n_seed, 300))


def _traversal(params: CurveParams, ctx: ReplanContext, cfg: OptimizerConfig,
               spans: SegmentLayout, want_grad: bool,
               schedule: StopSchedule | None = None):
    law = (curve_traversal.worst_case_law(spans) if ctx.law_kind == "worst"
           else curve_traversal.probabilistic_law(spans))
    if schedule is None:
        schedule = plan_schedule(params, ctx, cfg)
    profile = curve_traversal.solve_tpbvp(params, schedule, law, cfg.n_s, want_grad,
                                          u_max=cfg.u_max)
    return profile


def plan_schedule(params: CurveParams, ctx: ReplanContext,
                  cfg: OptimizerConfig) -> StopSchedule:
    v_start = 0.0
    if ctx.moving:
        _, cp0, _ = fourier_curve.eval(params, 0.0)
        v_start = float(np.linalg.norm(ctx.v) / max(np.linalg.norm(cp0), 1e-9))
    return curve_traversal.build_schedule(
        params, ctx.pending, ctx.m_nominal, ctx.carried_mass, v_start, cfg.n_seed)


def ipa_cost_gradient(params: CurveParams, profile: VelocityProfile) -> np.ndarray:
    """Gradient of the traversal time with respect to the curve parameters,
    propagated along the solved profile (stop positions and spans frozen)."""
    if profile.d_times is not None:
        return profile.d_times
    solved = curve_traversal.solve_tpbvp(
        params, profile.schedule, profile.law,
        max(profile.s.shape[0] - 1, 100), want_grad=True)
    return solved.d_times


@dataclass
class _Objective:
    ctx: ReplanContext
    cfg: OptimizerConfig
    spans: SegmentLayout
    mu: float
    lam: np.ndarray
    schedule: StopSchedule | None = None   # frozen within one inner solve
    evals: int = 0

    def __call__(self, params: CurveParams, want_grad: bool):
        self.evals += 1
        profile = _traversal(params, self.ctx, self.cfg, self.spans, want_grad,
                             self.schedule)
        ce = evaluate_constraints(params, self.ctx, self.cfg, want_grad)
        p_ws, g_ws = workspace_penalty(params, self.ctx.y_max,
                                       self.cfg.workspace_weight,
                                       want_grad=want_grad)
        resid = np.append(ce.residuals, ce.j_obstacle)
        value = augmented_value(profile.total_time, resid, self.mu, self.lam) + p_ws
        if not want_grad:
            return value, ce, profile
        grad = profile.d_times.copy()
        w = self.mu * ce.residuals + self.lam[:-1]
        grad += w @ ce.grads
        grad += (self.mu * ce.j_obstacle + self.lam[-1]) * ce.grad_obstacle
        grad += g_ws
        return value, ce, profile, grad


def _project_anchor(params: CurveParams, anchor) -> CurveParams:
    """Offsets chosen so the curve starts exactly at the anchor position:
    the position-continuity constraint holds by construction and the
    optimizer never has to fight it."""
    a1 = params.a1.copy()
    a2 = params.a2.copy()
    a1[0] = anchor[0] - float(np.sum(a1[1:] * np.sin(params.phi1)))
    a2[0] = anchor[1] - float(np.sum(a2[1:] * np.sin(params.phi2)))
    return replace(params, a1=a1, a2=a2)


def _preconditioner(params: CurveParams, y_max: float) -> np.ndarray:
    """Diagonal scaling of the packed parameter space: a unit step should
    move the curve by a comparable amount in every coordinate. The base
    frequency enters through large chain factors (4 pi^2 gamma s) and needs
    a much smaller raw step than amplitudes or phases."""
    d = np.ones(params.size)
    d[0] = (params.f2 / 20.0) ** 2
    i = 1 + params.a1.shape[0] + params.a2.shape[0]
    d[1:i] = (max(y_max, 1.0) / 5.0) ** 2
    d[i:] = 0.3 ** 2
    return d


def augmented_step(params: CurveParams, lag: LagrangianState, ctx: ReplanContext,
                   cfg: OptimizerConfig, spans: SegmentLayout,
                   eta0: float = 1.0, max_inner: int | None = None):
    """One inner solve of the augmented problem at fixed (mu, lambda):
    preconditioned gradient descent with Barzilai-Borwein step warm starts
    and Armijo backtracking on the packed parameter vector."""
    obj = _Objective(ctx, cfg, spans, lag.mu, lag.lam,
                     schedule=plan_schedule(params, ctx, cfg))
    theta = params.pack()
    precond = _preconditioner(params, ctx.y_max)
    value, ce, profile, grad = obj(params, True)
    eta = eta0
    max_inner = max_inner or cfg.max_inner
    prev_theta = None
    prev_grad = None
    it = 0
    for it in range(max_inner):
        gnorm = float(np.linalg.norm(grad))
        if gnorm < cfg.eps:
            break
        direction = precond * grad
        slope = float(grad @ direction)
        if slope <= 0:
            break
        if prev_grad is not None:
            dth = theta - prev_theta
            dg = grad - prev_grad
            denom = float(dg @ (precond * dg))
            if denom > 1e-300 and float(dth @ dth) > 1e-24:
                bb = abs(float(dth @ dg)) / denom
                if np.isfinite(bb) and bb > 0:
                    eta = min(max(bb, 1e-10), 1e3)
        step = eta
        accepted = False
        for _ in range(cfg.max_backtracks):
            trial_theta = theta - step * direction
            trial = CurveParams.unpack(trial_theta, params.gamma1,
                                       params.gamma2, params.f2)
            try:
                t_value, t_ce, t_profile = obj(trial, False)
            except (curve_traversal.InfeasibleProfileError,
                    fourier_curve.DegenerateCurveError):
                step *= cfg.armijo_rho
                continue
            if t_value <= value - cfg.armijo_c * step * slope:
                accepted = True
                break
            step *= cfg.armijo_rho
        if not accepted or step * slope < 1e-11 * max(1.0, abs(value)):
            break
        prev_theta, prev_grad = theta, grad
        theta = trial_theta
        eta = step
        value, ce, profile, grad = obj(trial, True)
    out = CurveParams.unpack(theta, params.gamma1, params.gamma2, params.f2)
    info = {"value": value, "grad_norm": float(np.linalg.norm(grad)),
            "inner_iters": it + 1, "evals": obj.evals, "eta": eta,
            "j1": profile.total_time, "max_residual": ce.max_residual}
    return out, ce, profile, info


def _dense_min_distances(params: CurveParams, targets: np.ndarray,
                         n_dense: int = 1500, iters: int = 70) -> np.ndarray:
    """Independent audit minimizer: dense seeding plus vectorized golden
    section, implemented apart from the optimizer's kernels."""
    targets = targets.reshape(-1, 2)
    s = np.linspace(0.0, 1.0, n_dense)
    c, _, _ = fourier_curve.eval(params, s)
    d2 = ((c.T[None, :, :] - targets[:, None, :]) ** 2).sum(-1)
    best = np.argmin(d2, axis=1)
    lo = s[np.maximum(best - 1, 0)]
    hi = s[np.minimum(best + 1, n_dense - 1)]
    invphi = (math.sqrt(5.0) - 1.0) / 2.0

    def d2_at(sv):
        cc, _, _ = fourier_curve.eval(params, sv)
        return ((cc.T - targets) ** 2).sum(-1)

    for _ in range(iters):
        x1 = hi - invphi * (hi - lo)
        x2 = lo + invphi * (hi - lo)
        take = d2_at(x1) < d2_at(x2)
        hi = np.where(take, x2, hi)
        lo = np.where(take, lo, x1)
    mid = 0.5 * (lo + hi)
    return np.sqrt(np.minimum(d2_at(mid), d2[np.arange(targets.shape[0]), best]))


def audit_plan(params: CurveParams, ctx: ReplanContext, cfg: OptimizerConfig):
    """Post-convergence geometric audit by dense sampling, independent of the
    optimizer's own minimizers."""
    report = {}
    ok = True
    if ctx.uncovered.size:
        d = _dense_min_distances(params, ctx.uncovered)
        report["coverage_max_dist"] = float(d.max())
        ok &= bool(d.max() <= ctx.r + 1e-7)
    if ctx.pending:
        pts = np.array([p[1] for p in ctx.pending], dtype=float)
        d = _dense_min_distances(params, pts)
        report["pickup_max_dist"] = float(d.max())
        ok &= bool(d.max() <= EPS_POS)
    c1, _, _ = fourier_curve.eval(params, 1.0)
    report["terminal_dist"] = float(np.linalg.norm(c1))
    ok &= report["terminal_dist"] <= EPS_POS
    c0, cp0, _ = fourier_curve.eval(params, 0.0)
    if ctx.prev is not None:
        c_prev, cp_prev, _ = fourier_curve.eval(ctx.prev, ctx.s_minus)
    else:
        c_prev, cp_prev = ctx.y, None
    report["continuity_pos"] = float(np.linalg.norm(np.asarray(c_prev) - c0))
    ok &= report["continuity_pos"] <= EPS_POS
    if ctx.moving and cp_prev is not None:
        tol = max(1e-3 * float(np.linalg.norm(cp_prev)), 1e-6)
        report["continuity_tan"] = float(np.linalg.norm(cp_prev - cp0))
        ok &= report["continuity_tan"] <= tol
    if ctx.obstacle_cells.size:
        d = _dense_min_distances(params, ctx.obstacle_cells)
        report["obstacle_min_dist"] = float(d.min())
        ok &= bool(d.min() > ctx.d_s * (1.0 - math.sqrt(cfg.eps)))
    report["ok"] = bool(ok)
    return bool(ok), report


@dataclass
class ReplanResult:
    params: CurveParams
    schedule: StopSchedule
    profile: VelocityProfile
    telemetry: list
    converged: bool
    audit: dict
    outer_iters: int


def replan_on_detection(ctx: ReplanContext, cfg: OptimizerConfig,
                        theta0: CurveParams | None = None,
                        max_outer: int | None = None,
                        max_inner: int | None = None) -> ReplanResult:
    """The event-driven double loop: alternate traversal solves and
    augmented-Lagrangian parameter updates until every residual clears the
    threshold and the independent audit passes."""
    if theta0 is not None:
        params = theta0
    elif ctx.prev is not None:
        params = fourier_curve.reinitialize(ctx.prev, ctx.s_minus, c_target=ctx.y)
    else:
        raise ValueError("an initial parameter vector is required at t=0")
    max_outer = max_outer or cfg.max_outer
    lag = LagrangianState(mu=1.0, lam=None)
    telemetry = []
    converged = False
    audit_rep = {}
    spans = compute_spans(params, ctx, cfg)
    for z in range(max_outer):
        if lag.lam is None:
            ce0 = evaluate_constraints(params, ctx, cfg, want_grad=False)
            lag.lam = np.zeros(ce0.residuals.size + 1)
        params, ce, profile, info = augmented_step(
            params, lag, ctx, cfg, spans, 1.0, max_inner)
        telemetry.append({
            "z": z, "mu": lag.mu, "max_residual": info["max_residual"],
            "j1": info["j1"], "inner_iters": info["inner_iters"],
            "grad_norm": info["grad_norm"],
        })
        if ce.max_residual <= cfg.eps:
            ok, audit_rep = audit_plan(params, ctx, cfg)
            if ok:
                converged = True
                break
        resid = np.append(ce.residuals, ce.j_obstacle)
        lag.lam = update_multipliers(lag.lam, lag.mu, resid)
        lag.mu = min(lag.mu * cfg.nu, cfg.mu_cap)
        lag.z = z + 1
        spans = compute_spans(params, ctx, cfg)
    if not converged:
        _, audit_rep = audit_plan(params, ctx, cfg)
    spans = compute_spans(params, ctx, cfg)
    profile = _traversal(params, ctx, cfg, spans, want_grad=False)
    return ReplanResult(params, profile.schedule, profile, telemetry,
                        converged, audit_rep, len(telemetry))


def sample_params(rng: np.random.Generator, cfg: OptimizerConfig, y_max: float,
                  anchor: np.ndarray) -> CurveParams:
    """Random curve parameters anchored to start at the given position."""
    amp = cfg.amp_frac * y_max
    f1 = rng.uniform(cfg.f1_low, cfg.f1_high) * fourier_curve.F2_DEFAULT
    a1 = rng.uniform(-amp, amp, cfg.gamma1 + 1)
    a2 = rng.uniform(-amp, amp, cfg.gamma2 + 1)
    phi1 = rng.uniform(0.0, 2.0 * np.pi, cfg.gamma1)
    phi2 = rng.uniform(0.0, 2.0 * np.pi, cfg.gamma2)
    params = CurveParams(f1, a1, a2, phi1, phi2)
    a1 = params.a1.copy()
    a2 = params.a2.copy()
    c0, _, _ = fourier_curve.eval(params, 0.0)
    a1[0] += anchor[0] - c0[0]
    a2[0] += anchor[1] - c0[1]
    return replace(params, a1=a1, a2=a2)


def initial_guess(ctx: ReplanContext, cfg: OptimizerConfig,
                  rng: np.random.Generator) -> CurveParams:
    """Randomized-restart selection of the first exploration curve: each
    sample gets a capped optimization budget; the feasible candidate with the
    least traversal time wins (best residual otherwise)."""
    best_key, best_params = None, None
    for _ in range(max(cfg.restarts, 1)):
        params = sample_params(rng, cfg, ctx.y_max, ctx.y)
        try:
            res = replan_on_detection(
                ctx, cfg, theta0=params,
                max_outer=cfg.restart_outer, max_inner=cfg.restart_inner)
        except (curve_traversal.InfeasibleProfileError,
                fourier_curve.DegenerateCurveError):
            continue
        max_res = res.telemetry[-1]["max_residual"] if res.telemetry else np.inf
        key = (0 if res.converged else 1,
               res.profile.total_time if res.converged else max_res)
        if best_key is None or key < best_key:
            best_key, best_params = key, res.params
    if best_params is None:
        best_params = sample_params(rng, cfg, ctx.y_max, ctx.y)
    return best_params
