"""Hybrid automaton of the fetch mission: discrete state, guarded events and
an event-detecting simulator for the double-integrator robot.

The discrete state tracks which objects are carried, deposited and detected.
Detection fires when the distance to an undetected object crosses the sensor
radius; pick-up and drop-off require (numerically) zero velocity at the
object position or the depot, after which the continuous state is snapped
exactly onto the guard.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

EPS_POS = 1e-3     # position tolerance for pick-up / drop-off guards (m)
EPS_VEL = 1e-3     # velocity tolerance (m/s)
EPS_GUARD = 1e-6   # detection-time bisection tolerance (m)
EPS_INPUT = 1e-9


class GuardViolation(RuntimeError):
    """Event applied in a discrete state where its guard does not hold."""


class EventKind(enum.Enum):
    DETECTION = "detection"
    PICKUP = "pickup"
    DROPOFF = "dropoff"


@dataclass(frozen=True)
class DiscreteState:
    carried: frozenset = frozenset()
    deposited: frozenset = frozenset()
    detected: frozenset = frozenset()

    def __post_init__(self):
        if not self.carried <= self.detected or not self.deposited <= self.detected:
            raise GuardViolation("carried/deposited objects must be detected")
        if self.carried & self.deposited:
            raise GuardViolation("an object cannot be both carried and deposited")

    def pending(self) -> frozenset:
        """Detected objects still to be picked up."""
        return self.detected - self.carried - self.deposited


@dataclass
class RobotState:
    y: np.ndarray
    v: np.ndarray

    def copy(self) -> "RobotState":
        return RobotState(self.y.copy(), self.v.copy())


@dataclass
class HybridState:
    q: DiscreteState
    x: RobotState
    grid: object          # CoverageGrid
    t: float = 0.0


@dataclass(frozen=True)
class EventRecord:
    kind: EventKind
    object_ids: frozenset
    time: float
    position: np.ndarray


def current_mass(q: DiscreteState, objects: dict, m_nominal: float) -> float:
    """Robot mass plus the mass of everything currently carried."""
    total = m_nominal
    for oid in q.carried:
        if oid not in objects:
            raise KeyError(f"unknown object id {oid}")
        total += objects[oid].mass
    return total


def step_dynamics(x: RobotState, u, m: float, dt: float) -> RobotState:
    """Exact zero-order-hold update of the double integrator."""
    u = np.asarray(u, dtype=float)
    if np.linalg.norm(u) > 1.0 + EPS_INPUT:
        raise ValueError(f"input magnitude {np.linalg.norm(u):.6g} outside the unit disc")
    if dt <= 0:
        raise ValueError("dt must be positive")
    a = u / m
    return RobotState(x.y + x.v * dt + 0.5 * a * dt * dt, x.v + a * dt)


def _crossing_time(x0: RobotState, u, m: float, dt: float, p: np.ndarray, r: float) -> float | None:
    """Earliest time in (0, dt] at which |y(t) - p| crosses r, by bisection."""
    a = np.asarray(u, dtype=float) / m

    def dist(t):
        y = x0.y + x0.v * t + 0.5 * a * t * t
        return np.linalg.norm(y - p) - r

    n_scan = 8
    ts = np.linspace(0.0, dt, n_scan + 1)
    d_prev = dist(0.0)
    for i in range(1, n_scan + 1):
        d_now = dist(ts[i])
        if d_prev > 0.0 >= d_now:
            lo, hi = ts[i - 1], ts[i]
            while hi - lo > 1e-15 and abs(dist(0.5 * (lo + hi))) > EPS_GUARD:
                mid = 0.5 * (lo + hi)
                if dist(mid) > 0.0:
                    lo = mid
                else:
                    hi = mid
            return 0.5 * (lo + hi)
        d_prev = d_now
    return None


def detect_events(segment, state: HybridState, objects: dict,
                  eps_pos: float = EPS_POS, eps_vel: float = EPS_VEL) -> list[EventRecord]:
    """Events fired along one integration segment (x_before, u, m, dt).

    Detections are located by bisecting the distance-r crossing; pick-up and
    drop-off are tested at the segment end. Simultaneous guards resolve in
    the order detection -> pickup -> dropoff, detections ordered by crossing
    time then object id.
    """
    x0, u, m, dt = segment
    x1 = step_dynamics(x0, u, m, dt)
    q = state.q
    events: list[tuple[float, int, EventRecord]] = []
    for oid, spec in objects.items():
        if oid in q.detected:
            continue
        tc = _crossing_time(x0, u, m, dt, spec.position, state.grid.sensor_radius)
        if tc is not None:
            a = np.asarray(u, dtype=float) / m
            y = x0.y + x0.v * tc + 0.5 * a * tc * tc
            events.append(
                (tc, oid, EventRecord(EventKind.DETECTION, frozenset([oid]), state.t + tc, y))
            )
    events.sort(key=lambda e: (e[0], e[1]))
    out = [e[2] for e in events]

    at_rest = np.linalg.norm(x1.v) <= eps_vel
    if at_rest:
        for oid in sorted(q.pending()):
            if np.linalg.norm(x1.y - objects[oid].position) <= eps_pos:
                out.append(
                    EventRecord(EventKind.PICKUP, frozenset([oid]), state.t + dt, objects[oid].position)
                )
        if q.carried and np.linalg.norm(x1.y) <= eps_pos:
            out.append(
                EventRecord(EventKind.DROPOFF, frozenset(q.carried), state.t + dt, np.zeros(2))
            )
    return out


def apply_event(q: DiscreteState, e: EventRecord) -> DiscreteState:
    """Discrete transition for a detection, pick-up or drop-off."""
    if e.kind is EventKind.DETECTION:
        (oid,) = e.object_ids
        if oid in q.detected:
            raise GuardViolation(f"object {oid} already detected")
        return replace(q, detected=q.detected | {oid})
    if e.kind is EventKind.PICKUP:
        (oid,) = e.object_ids
        if oid not in q.detected:
            raise GuardViolation(f"pick-up of undetected object {oid}")
        if oid in q.carried or oid in q.deposited:
            raise GuardViolation(f"object {oid} already collected")
        return replace(q, carried=q.carried | {oid})
    if e.kind is EventKind.DROPOFF:
        if not q.carried:
            raise GuardViolation("drop-off with empty hands")
        return DiscreteState(frozenset(), q.deposited | q.carried, q.detected)
    raise GuardViolation(f"unknown event kind {e.kind}")


def is_final(state: HybridState, objects: dict) -> bool:
    """Task complete: everything deposited, robot at rest at the depot."""
    all_ids = frozenset(objects)
    return (
        state.q.carried == frozenset()
        and state.q.deposited == all_ids
        and state.q.detected == all_ids
        and np.linalg.norm(state.x.y) <= EPS_POS
        and np.linalg.norm(state.x.v) <= EPS_VEL
    )


def initial_state(grid, objects: dict | None = None) -> HybridState:
    """Init: robot at rest at the depot, nothing detected, depot footprint covered."""
    from . import world

    world.update_coverage(grid, np.zeros(2))
    return HybridState(
        q=DiscreteState(),
        x=RobotState(np.zeros(2), np.zeros(2)),
        grid=grid,
        t=0.0,
    )


def snap_to(x: RobotState, position) -> RobotState:
    """Exact state after a pick-up/drop-off guard: at the point, at rest."""
    return RobotState(np.asarray(position, dtype=float).copy(), np.zeros(2))


def replay_events(events) -> DiscreteState:
    """Re-apply an event log from Init; returns the final discrete state."""
    q = DiscreteState()
    for e in events:
        q = apply_event(q, e)
    return q
