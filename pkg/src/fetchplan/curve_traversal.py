"""Minimum-time traversal of a fixed curve with stop constraints.

The 2-D motion reduces along the curve to a scalar double integrator in the
normalized position s with effective gain 1/(alpha*m). Rest-to-rest intervals
between scheduled stops are solved by the forward/backward envelope method:
accelerate at +1, decelerate at -1, cap the speed by the curvature limit of
the full parameterized dynamics, and take the pointwise minimum. Exploration
caution enters as extra structure per unexplored span: the worst-case law
inserts a rest at each span's far end (midpoint bang-bang per span), the
probabilistic law rides the singular arc -1/(2*(1+sqrt(2))) into it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels, fourier_curve

CG = 1.0 + math.sqrt(2.0)          # detection-to-pickup constant of the line OCP
SINGULAR_U = -1.0 / (2.0 * CG)     # singular-arc control value
CAP_SENTINEL = 1e18


class InfeasibleProfileError(RuntimeError):
    """A positive-length interval admits no motion (zero speed throughout)."""


def theorem2_switch(s2: float = 1.0) -> float:
    """Accelerate/singular switch point for a fresh span [0, s2]."""
    return s2 / (2.0 * CG + 1.0)


def appendix_d_sdprime(s1: float, s2: float) -> float:
    """Deceleration onset for a span [0, s2] with a marked point s1 < span end.

    Closed form of the two-object analysis; real only for s1 <= s2/(2cg+1).
    Mass cancels.
    """
    disc = s2 - (2.0 * CG + 1.0) * s1
    if disc < -1e-12:
        raise ValueError("s'' is only defined for s1 <= s2/(2*cg+1)")
    rad = 2.0 ** 1.5 * math.sqrt(max(s2 - s1, 0.0)) * math.sqrt(max(disc, 0.0))
    return -(rad - 3.0 * s2 + (2.0 * CG + 3.0) * s1) / (4.0 * CG)


def two_object_switch_points(s1: float, s2: float) -> tuple[float, float]:
    """(s_sw1, s_sw2) of the three-phase law for a span [0, s2] containing a
    known pick-up at s1: s_sw1 = max(s', s1); s_sw2 is the radical expression
    where it is real, otherwise s'.
    """
    sp = theorem2_switch(s2)
    s_sw1 = max(sp, s1)
    s_sw2 = appendix_d_sdprime(s1, s2) if s1 < sp else sp
    return s_sw1, s_sw2


def pickup_time_after_detection(v: float, alpha: float, m: float) -> float:
    """Time of the optimal stop-and-return maneuver after detecting an object
    at the current position while moving at speed v: (1+sqrt(2))*alpha*m*v.
    """
    if v < 0:
        raise ValueError("speed must be non-negative")
    return CG * alpha * m * v


@dataclass(frozen=True)
class SegmentLayout:
    """Disjoint, sorted unexplored s-intervals of the current curve."""

    spans: tuple

    def __post_init__(self):
        prev = -1.0
        for a, b in self.spans:
            if not (0.0 <= a < b <= 1.0 + 1e-12) or a < prev:
                raise ValueError("spans must be disjoint, sorted and inside [0, 1]")
            prev = b


@dataclass(frozen=True)
class TraversalLaw:
    kind: str          # "worst" | "prob"
    spans: tuple


def worst_case_law(layout: SegmentLayout) -> TraversalLaw:
    """Bang-bang per sub-segment, at rest at every unexplored span's far end
    (the adversarial object location)."""
    return TraversalLaw("worst", layout.spans)


def probabilistic_law(layout: SegmentLayout) -> TraversalLaw:
    """Accelerate into each unexplored span, then ride the singular arc
    -1/(2cg) so the span's far end is reached exactly at rest."""
    return TraversalLaw("prob", layout.spans)


@dataclass
class StopSchedule:
    """Mandatory rest points along the curve with per-interval mass.

    ``stops`` are strictly increasing values in (0, 1]; interval i runs from
    the previous stop (or s=0) to stops[i] under mass masses[i]. ``stop_ids``
    holds the object ids collected at each stop (empty tuple for the
    terminal depot stop). ``v_start`` is the inherited s-speed at s=0 after a
    replan on the move.
    """

    stops: np.ndarray
    masses: np.ndarray
    stop_ids: tuple
    v_start: float = 0.0

    def __post_init__(self):
        self.stops = np.asarray(self.stops, dtype=float)
        self.masses = np.asarray(self.masses, dtype=float)
        if self.stops.size == 0 or np.any(np.diff(self.stops) <= 0):
            raise ValueError("stops must be non-empty and strictly increasing")
        if self.stops[-1] > 1.0 + 1e-9 or self.stops[0] <= 0.0:
            raise ValueError("stops must lie in (0, 1]")
        if self.masses.shape[0] != self.stops.shape[0]:
            raise ValueError("one mass per interval required")


def build_schedule(params, pending, m_nominal: float, carried_mass: float = 0.0,
                   v_start: float = 0.0, n_seed: int = 400) -> StopSchedule:
    """Schedule the pending pick-ups at their nearest-point s-coordinates,
    ordered along the curve, with the terminal depot stop at s=1.

    ``pending`` is a list of (object_id, position, mass).
    """
    base = m_nominal + carried_mass
    if not pending:
        return StopSchedule(np.array([1.0]), np.array([base]), ((),), v_start)
    targets = np.array([p[1] for p in pending], dtype=float).reshape(-1, 2)
    seed_s = np.linspace(0.0, 1.0, n_seed)
    seed_c, _, _ = fourier_curve.eval(params, seed_s)
    s_star, _ = _kernels.nearest_on_curve(
        targets, seed_s, np.ascontiguousarray(seed_c.T),
        np.ones(targets.shape[0], dtype=bool),
        params.f1, params.f2, params.a1, params.a2,
        params.phi1, params.phi2, 60)
    order = np.argsort(s_star)
    stops, masses, ids = [], [], []
    mass = base
    for k in order:
        s_k = float(np.clip(s_star[k], 1e-6, 1.0 - 1e-6))
        if stops and s_k - stops[-1] < 1e-8:
            ids[-1] = ids[-1] + (pending[k][0],)
            mass += pending[k][2]
            continue
        stops.append(s_k)
        masses.append(mass)
        ids.append((pending[k][0],))
        mass += pending[k][2]
    stops.append(1.0)
    masses.append(mass)
    ids.append(())
    return StopSchedule(np.array(stops), np.array(masses), tuple(ids), v_start)


@dataclass
class CurveGeometry:
    """Curve quantities sampled on the profile grid."""

    s: np.ndarray
    c: np.ndarray     # (2, n)
    cp: np.ndarray
    cpp: np.ndarray
    alpha: float

    @property
    def cross(self) -> np.ndarray:
        return self.cpp[0] * self.cp[1] - self.cp[0] * self.cpp[1]


def speed_limit(params, s, m: float, alpha: float | None = None):
    """Largest feasible s-speed at s under unit input: curvature-limited,
    a large sentinel on straight stretches."""
    if alpha is None:
        alpha = fourier_curve.arc_table(params).alpha
    _, cp, cpp = fourier_curve.eval(params, s)
    cross = np.abs(cpp[0] * cp[1] - cp[0] * cpp[1])
    with np.errstate(divide="ignore"):
        lim = np.sqrt(np.where(cross > 1e-15, alpha / (m * np.maximum(cross, 1e-15)),
                               CAP_SENTINEL ** 2))
    return np.minimum(lim, CAP_SENTINEL)


@dataclass
class VelocityProfile:
    s: np.ndarray
    v: np.ndarray
    u: np.ndarray              # per-cell control in [-1, 1]
    schedule: StopSchedule
    law: TraversalLaw
    interval_times: np.ndarray
    alpha: float
    total_time: float
    relaxed: bool = False
    dv2: np.ndarray | None = None       # (n, a) envelope gradient, if requested
    d_times: np.ndarray | None = None   # (a,) gradient of total_time

    @property
    def law_kind(self) -> str:
        return self.law.kind

    def time_at(self) -> np.ndarray:
        """Cumulative time at every grid node."""
        va, vb = self.v[:-1], self.v[1:]
        ds = np.diff(self.s)
        dt = np.where(va + vb > 0, 2.0 * ds / np.where(va + vb > 0, va + vb, 1.0), 0.0)
        return np.concatenate([[0.0], np.cumsum(dt)])


def _profile_grid(n_s: int, schedule: StopSchedule, spans) -> np.ndarray:
    critical = np.unique(np.concatenate(
        [[0.0], schedule.stops] + [[a, b] for a, b in spans]))
    # midpoints guarantee an interior node between any two critical points
    mids = 0.5 * (critical[:-1] + critical[1:])
    s = np.unique(np.concatenate([np.linspace(0.0, 1.0, n_s + 1), critical, mids]))
    s = s[(s >= 0.0) & (s <= 1.0)]
    keep = np.concatenate([[True], np.diff(s) > 1e-12])
    s = s[keep]
    if s[-1] < 1.0:
        s = np.append(s, 1.0)
    return s


def _nearest_idx(s: np.ndarray, values) -> np.ndarray:
    """Grid indices closest to each requested value."""
    idx = np.clip(np.searchsorted(s, values), 0, s.shape[0] - 1)
    idx_lo = np.maximum(idx - 1, 0)
    use_lo = np.abs(s[idx_lo] - values) < np.abs(s[idx] - values)
    return np.where(use_lo, idx_lo, idx)


def solve_tpbvp(params, schedule: StopSchedule, law: TraversalLaw,
                n_s: int = 1000, want_grad: bool = False,
                geom: CurveGeometry | None = None,
                u_max: float = 1.0) -> VelocityProfile:
    """Velocity profile meeting every stop at rest under the given law.

    Per interval, integrates the reduced dynamics forward from the start
    speed and backward from rest at the stop, capped by the curvature speed
    limit and the law's exploration structure; interval time is the cell-wise
    exact constant-acceleration quadrature of ds/v. With ``want_grad`` the
    parameter gradient of the total time is propagated through the same
    construction (stop positions and spans held fixed).
    """
    s = _profile_grid(n_s, schedule, law.spans)
    if geom is None:
        alpha = fourier_curve.arc_table(params, max(n_s, 100)).alpha
        c, cp, cpp = fourier_curve.eval(params, s)
        geom = CurveGeometry(s, c, cp, cpp, alpha)
    alpha = geom.alpha
    cross = geom.cross
    a_dim = params.size if want_grad else 0

    if want_grad:
        d_alpha = fourier_curve.grad_alpha(params, max(n_s, 100))
        gc, gcp, gcpp = fourier_curve.grad_theta(params, s)
        # d cross / d theta, shape (n, a)
        d_cross = (np.einsum("an,n->na", gcpp[0], geom.cp[1])
                   + np.einsum("an,n->na", gcp[1], geom.cpp[0])
                   - np.einsum("an,n->na", gcp[0], geom.cpp[1])
                   - np.einsum("an,n->na", gcpp[1], geom.cp[0]))

    stop_idx = _nearest_idx(s, schedule.stops)
    rest_nodes = np.zeros(s.shape[0], dtype=bool)
    rest_nodes[stop_idx] = True
    if schedule.v_start == 0.0:
        rest_nodes[0] = True
    worst_rest = np.zeros_like(rest_nodes)
    if law.kind == "worst":
        for a, b in law.spans:
            worst_rest[_nearest_idx(s, np.array([min(b, 1.0)]))[0]] = True

    n = s.shape[0]
    v2 = np.zeros(n)
    dv2 = np.zeros((n, a_dim)) if want_grad else None
    u = np.zeros(n - 1)
    interval_times = np.zeros(schedule.stops.shape[0])
    d_total = np.zeros(a_dim) if want_grad else None
    relaxed = False

    lo = 0
    v0_sq = schedule.v_start ** 2
    for i, hi in enumerate(stop_idx):
        m_i = schedule.masses[i]
        g = u_max / (alpha * m_i)
        two_g = 2.0 * g
        sl = slice(lo, hi + 1)
        s_sl = s[sl]
        if s_sl.shape[0] < 2:
            interval_times[i] = 0.0
            lo = hi
            v0_sq = 0.0
            continue
        abs_cross = np.abs(cross[sl])
        cap = np.where(abs_cross > 1e-15,
                       u_max * alpha / (m_i * np.maximum(abs_cross, 1e-15)),
                       CAP_SENTINEL)
        cap = np.minimum(cap, CAP_SENTINEL)
        if want_grad:
            # d(cap)/d(theta) = cap * (d_alpha/alpha - sgn(cross)*d_cross/|cross|)
            sgn = np.sign(cross[sl])
            active = abs_cross > 1e-15
            cap_grad = np.where(
                (active & (cap < CAP_SENTINEL))[:, None],
                cap[:, None] * (d_alpha[None, :] / alpha
                                - sgn[:, None] * d_cross[sl] / np.maximum(abs_cross, 1e-15)[:, None]),
                0.0,
            )
        if law.kind == "prob":
            for a, b in law.spans:
                mask = (s_sl >= a - 1e-12) & (s_sl <= b + 1e-12)
                if not mask.any():
                    continue
                sing = g * np.clip(b - s_sl[mask], 0.0, None) / CG
                if want_grad:
                    sel = np.flatnonzero(mask)
                    tighter = sing < cap[sel]
                    cap_grad[sel[tighter]] = (
                        -sing[tighter, None] * d_alpha[None, :] / alpha)
                cap[mask] = np.minimum(cap[mask], sing)
        rest_sl = (rest_nodes[sl] | worst_rest[sl]).copy()
        rest_sl[-1] = True
        if i > 0 or schedule.v_start == 0.0:
            rest_sl[0] = True
            v0 = 0.0
        else:
            rest_sl[0] = False
            v0 = v0_sq
            if v0 > cap[0] + 1e-12:
                relaxed = True
        if want_grad:
            grad_two_g = -two_g * d_alpha / alpha
            v2_sl, dv2_sl = _kernels.velocity_envelope_grad(
                s_sl, cap, cap_grad, rest_sl, two_g, grad_two_g, v0, CAP_SENTINEL)
            dv2[sl] = dv2_sl
        else:
            v2_sl = _kernels.velocity_envelope(s_sl, cap, rest_sl, two_g, v0, CAP_SENTINEL)
        if relaxed and i == 0:
            brake = np.clip(v0_sq - two_g * (s_sl - s_sl[0]), 0.0, None)
            brake[rest_sl] = 0.0
            v2_sl = np.maximum(v2_sl, brake)
        v2[sl] = v2_sl

        v_sl = np.sqrt(v2_sl)
        ds = np.diff(s_sl)
        vsum = v_sl[:-1] + v_sl[1:]
        if np.any((vsum <= 1e-12) & (ds > 1e-12)):
            raise InfeasibleProfileError(
                f"interval {i} has zero speed over positive length")
        dt = np.where(vsum > 1e-12, 2.0 * ds / np.where(vsum > 1e-12, vsum, 1.0), 0.0)
        interval_times[i] = dt.sum()
        u[lo:hi] = np.where(ds > 1e-15,
                            alpha * m_i * np.diff(v2_sl) / (2.0 * np.maximum(ds, 1e-15)),
                            0.0)
        if want_grad:
            dv = np.where(v_sl[:, None] > 1e-9, dv2[sl] / (2.0 * np.maximum(v_sl, 1e-9)[:, None]), 0.0)
            coeff = np.where(vsum > 1e-12, -2.0 * ds / np.maximum(vsum, 1e-12) ** 2, 0.0)
            d_total += np.einsum("n,na->a", coeff, dv[:-1] + dv[1:])
        lo = hi
        v0_sq = 0.0

    total = float(interval_times.sum())
    return VelocityProfile(
        s=s, v=np.sqrt(v2), u=np.clip(u, -1.0 - 1e-9, 1.0 + 1e-9),
        schedule=schedule, law=law, interval_times=interval_times,
        alpha=alpha, total_time=total, relaxed=relaxed,
        dv2=dv2, d_times=d_total,
    )


def traversal_time(profile: VelocityProfile) -> float:
    """Total traversal time J1 of a solved profile."""
    return profile.total_time


def exploration_spans(params, uncovered_points: np.ndarray, r: float,
                      n_s: int = 600) -> SegmentLayout:
    """Unexplored s-intervals: points of the curve whose footprint still
    touches an uncovered cell center."""
    if uncovered_points.size == 0:
        return SegmentLayout(())
    s = np.linspace(0.0, 1.0, n_s + 1)
    c, _, _ = fourier_curve.eval(params, s)
    near = np.zeros(s.shape[0], dtype=bool)
    chunk = 512
    pts = uncovered_points.reshape(-1, 2)
    for k0 in range(0, pts.shape[0], chunk):
        blk = pts[k0:k0 + chunk]
        d2 = ((c.T[:, None, :] - blk[None, :, :]) ** 2).sum(-1)
        near |= (d2 <= r * r).any(axis=1)
        if near.all():
            break
    spans = []
    i = 0
    n = near.shape[0]
    while i < n:
        if near[i]:
            j = i
            while j + 1 < n and near[j + 1]:
                j += 1
            spans.append((float(s[i]), float(s[j])))
            i = j + 1
        else:
            i += 1
    spans = [(a, b) for a, b in spans if b > a + 1e-9]
    return SegmentLayout(tuple(spans))
