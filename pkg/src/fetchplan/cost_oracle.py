"""Closed-form cost-to-go machinery over pick-up/drop-off action strings.

A string is an ordered plan of pick-ups and drop-offs finishing the task from
a given discrete state. Each rest-to-rest leg of length d under mass m costs
2*sqrt(m*d) (time-optimal double integrator), so string costs have a closed
form once all positions are known. Undetected objects are handled by placing
hypotheses on the uncovered grid-cell centers: the worst case maximizes the
string lower bound over the hypothesis product grid, the probabilistic case
averages each string over it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .hybrid_core import DiscreteState
from .world import CoverageGrid, unexplored_region

STRING_CAP = 6

DROPOFF = -1  # waypoint code for a depot visit


class ComplexityError(RuntimeError):
    """String enumeration requested beyond the hard cap."""


class InconsistentStateError(RuntimeError):
    """No placement hypotheses available for remaining undetected objects."""


@dataclass
class PlanString:
    """Ordered actions; each entry is an object id (pick-up) or DROPOFF."""

    actions: tuple
    cost: float | None = None

    def __iter__(self):
        return iter(self.actions)


def enumerate_strings(q: DiscreteState, remaining) -> list[PlanString]:
    """All action strings collecting ``remaining`` and depositing everything.

    Pick-ups are interleaved with drop-offs (a drop-off deposits the whole
    carried set); the last action is always a drop-off. Starting with a
    non-empty carried set allows an immediate drop-off. For k fresh objects
    from empty hands the count is k! * 2^(k-1).
    """
    remaining = sorted(set(remaining) - set(q.carried) - set(q.deposited))
    if len(remaining) > STRING_CAP:
        raise ComplexityError(
            f"{len(remaining)} objects exceed the string enumeration cap of {STRING_CAP} "
            f"({math.factorial(len(remaining))}*2^{len(remaining) - 1} strings)"
        )
    out: list[PlanString] = []

    def recurse(prefix, left, carrying):
        if not left:
            if carrying:
                out.append(PlanString(tuple(prefix + [DROPOFF])))
            elif prefix:
                out.append(PlanString(tuple(prefix)))
            else:
                out.append(PlanString(()))
            return
        if carrying and (not prefix or prefix[-1] != DROPOFF):
            recurse(prefix + [DROPOFF], left, False)
        for i, oid in enumerate(left):
            recurse(prefix + [oid], left[:i] + left[i + 1:], True)

    recurse([], remaining, bool(q.carried))
    return out


def _leg_masses(sigma: PlanString, q: DiscreteState, masses: dict, m_nominal: float) -> list[float]:
    """Mass in effect during each leg of the string."""
    m = m_nominal + sum(masses[oid] for oid in q.carried)
    out = []
    for act in sigma.actions:
        out.append(m)
        if act == DROPOFF:
            m = m_nominal
        else:
            m += masses[act]
    return out


def string_cost(sigma: PlanString, y_start, positions: dict, masses: dict,
                m_nominal: float, q: DiscreteState | None = None) -> float:
    """Closed-form optimal time of a string: sum of 2*sqrt(m_leg * d_leg).

    An empty string prices the bare return to the depot.
    """
    q = q or DiscreteState()
    y = np.asarray(y_start, dtype=float)
    if not sigma.actions:
        return 2.0 * math.sqrt(m_nominal * float(np.linalg.norm(y)))
    legs = _leg_masses(sigma, q, masses, m_nominal)
    cost = 0.0
    p = y
    for act, m in zip(sigma.actions, legs):
        target = np.zeros(2) if act == DROPOFF else np.asarray(positions[act], dtype=float)
        cost += 2.0 * math.sqrt(m * float(np.linalg.norm(target - p)))
        p = target
    return cost


def lower_bound(q: DiscreteState, y_start, positions: dict, masses: dict,
                m_nominal: float) -> tuple[float, PlanString]:
    """Cost-to-go lower bound: min string cost over all completions.

    Ties break lexicographically on the action tuple so the argmin is
    deterministic.
    """
    remaining = set(positions) - set(q.deposited) - set(q.carried)
    strings = enumerate_strings(q, remaining)
    best = None
    for sigma in strings:
        c = string_cost(sigma, y_start, positions, masses, m_nominal, q)
        key = (c, sigma.actions)
        if best is None or key < best[0]:
            best = (key, PlanString(sigma.actions, c))
    return best[1].cost, best[1]


def _compile_strings(q: DiscreteState, undetected, known: dict, masses: dict, m_nominal: float):
    """Integer/float encoding of all strings for the placement-scan kernels.

    Waypoint codes: 0..k-1 index the undetected objects (in the given order),
    k.. index the known pending positions, -1 is the depot.
    """
    undetected = list(undetected)
    known_ids = sorted(known)
    slot = {oid: j for j, oid in enumerate(undetected)}
    slot.update({oid: len(undetected) + j for j, oid in enumerate(known_ids)})
    remaining = set(undetected) | set(known_ids)
    strings = enumerate_strings(q, remaining)
    if not strings:
        raise InconsistentStateError("no strings to evaluate")
    d_max = max(len(s.actions) for s in strings) or 1
    wp = np.full((len(strings), d_max), -2, dtype=np.int64)
    ms = np.zeros((len(strings), d_max))
    ln = np.zeros(len(strings), dtype=np.int64)
    for i, s in enumerate(strings):
        legs = _leg_masses(s, q, masses, m_nominal)
        ln[i] = len(s.actions)
        for j, (act, m) in enumerate(zip(s.actions, legs)):
            wp[i, j] = DROPOFF if act == DROPOFF else slot[act]
            ms[i, j] = m
    known_pos = np.array([known[oid] for oid in known_ids]).reshape(-1, 2)
    return strings, wp, ln, ms, known_pos, undetected


def _hypothesis_grid(grid: CoverageGrid, n_undetected: int, stride: int):
    idx, kappa = unexplored_region(grid)
    if idx.size == 0:
        raise InconsistentStateError("undetected objects remain but no cell is uncovered")
    if n_undetected >= 2 and stride > 1:
        idx = idx[::stride]
    return grid.points[idx], kappa


def worst_case_positions(q: DiscreteState, y_start, grid: CoverageGrid,
                         objects: dict, m_nominal: float, stride: int = 3):
    """Adversarial placement p*: uncovered cell centers maximizing the bound.

    Exhaustively evaluates the (strided) product grid of candidate centers,
    scoring each hypothesis by the min-over-strings cost.
    """
    undetected = sorted(set(objects) - set(q.detected))
    if not undetected:
        raise InconsistentStateError("no undetected objects")
    known = {oid: objects[oid].position for oid in q.pending()}
    masses = {oid: objects[oid].mass for oid in objects}
    strings, wp, ln, ms, known_pos, undetected = _compile_strings(
        q, undetected, known, masses, m_nominal)
    cand_pts, _ = _hypothesis_grid(grid, len(undetected), stride)
    k = len(undetected)
    cand = np.broadcast_to(cand_pts[None, :, :], (k, cand_pts.shape[0], 2)).copy()
    n_cand = np.full(k, cand_pts.shape[0], dtype=np.int64)
    flat, value = _kernels.worst_case_scan(
        cand, n_cand, wp, ln, ms, known_pos, np.asarray(y_start, dtype=float))
    placement = {}
    rem = int(flat)
    for j, oid in enumerate(undetected):
        placement[oid] = cand_pts[rem % cand_pts.shape[0]].copy()
        rem //= cand_pts.shape[0]
    return placement, float(value)


def expected_remaining_cost(q: DiscreteState, y_start, grid: CoverageGrid,
                            objects: dict, m_nominal: float, stride: int = 3):
    """String minimizing the mean cost over uniform placements of undetected
    objects on uncovered cell centers.

    The mean of a string factorizes over its legs (each leg touches at most
    two independent uniform positions), which evaluates the full product-grid
    midpoint quadrature without enumerating it.
    """
    undetected = sorted(set(objects) - set(q.detected))
    if not undetected:
        raise InconsistentStateError("no undetected objects")
    known = {oid: objects[oid].position for oid in q.pending()}
    masses = {oid: objects[oid].mass for oid in objects}
    strings, wp, ln, ms, known_pos, undetected = _compile_strings(
        q, undetected, known, masses, m_nominal)
    cand_pts, _ = _hypothesis_grid(grid, len(undetected), stride)
    k = len(undetected)
    y0 = np.asarray(y_start, dtype=float)

    def point_of(code):
        if code == DROPOFF:
            return np.zeros(2)
        if code >= k:
            return known_pos[code - k]
        return None  # undetected slot

    best = None
    for i, sigma in enumerate(strings):
        mean = 0.0
        prev = -3  # start marker
        for j in range(ln[i]):
            a = prev
            b = int(wp[i, j])
            m = ms[i, j]
            pa = y0 if a == -3 else point_of(a)
            pb = point_of(b)
            if pa is not None and pb is not None:
                d = np.linalg.norm(pb - pa)
                mean += 2.0 * math.sqrt(m * d)
            elif pa is None and pb is None:
                diff = cand_pts[:, None, :] - cand_pts[None, :, :]
                d = np.sqrt(np.sum(diff * diff, axis=2))
                mean += float(np.mean(2.0 * np.sqrt(m * d)))
            else:
                fixed = pa if pa is not None else pb
                d = np.linalg.norm(cand_pts - fixed[None, :], axis=1)
                mean += float(np.mean(2.0 * np.sqrt(m * d)))
            prev = b
        key = (mean, sigma.actions)
        if best is None or key < best[0]:
            best = (key, PlanString(sigma.actions, mean))
    return best[1], best[1].cost
