"""Time-driven receding-horizon planner over a discretized input set.

Every sampling period the robot re-solves a short-horizon minimum-time
problem toward the current goal set (worst-case placement components, pending
pick-ups, uncovered cells or the depot) by best-first branch-and-bound over
input sequences drawn from the polygon-vertex action set. An admissible
per-axis double-integrator time bound orders the search, so the first goal
node popped is optimal; when no goal is reachable inside the horizon, the
leaf minimizing the bound is executed instead.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import cost_oracle, world
from .hybrid_core import HybridState, RobotState, step_dynamics


class PlanningDone(RuntimeError):
    """receding_step called although the task is already complete."""


@dataclass(frozen=True)
class InputPolygon:
    """Discrete input set: magnitude levels along the vertices of a regular
    polygon inscribed in the unit disc, plus the zero action."""

    sides: int = 4
    levels: tuple = (0.0, 1.0)

    def actions(self) -> np.ndarray:
        acts = [np.zeros(2)]
        for lvl in self.levels:
            if lvl == 0.0:
                continue
            for z in range(1, self.sides + 1):
                ang = 2.0 * math.pi * z / self.sides
                acts.append(lvl * np.array([math.sin(ang), math.cos(ang)]))
        return np.array(acts)


@dataclass(frozen=True)
class HorizonConfig:
    t_s: float = 0.2
    n_max: int = 8
    sides: int = 4
    levels: tuple = (0.0, 1.0)
    node_budget: int = 200000
    goal_pos_tol: float = 1e-3
    goal_vel_tol: float = 1e-3

    def __post_init__(self):
        if self.t_s <= 0 or self.n_max < 2:
            raise ValueError("t_s must be positive and n_max at least 2")


@dataclass
class Goal:
    position: np.ndarray
    pos_tol: float
    vel_tol: float | None      # None: terminal velocity free (observation goal)


@dataclass
class DiscretePlan:
    inputs: np.ndarray          # (n, 2)
    cost: float                 # t_s * goal step index, or horizon fallback value
    reached_goal: bool
    b_d: np.ndarray             # first at-rest depot visit flags per step
    b_f: np.ndarray             # terminal flags per step
    heuristic_end: float


def sampled_step(x: RobotState, u, m_carry: float, m_nominal: float,
                 t_s: float, depot_visited: bool):
    """One step of the sampled planning model; mass switches permanently to
    the nominal value after the first at-rest depot visit."""
    m = m_nominal if depot_visited else m_carry
    x1 = step_dynamics(x, u, m, t_s)
    visited = depot_visited or (
        np.linalg.norm(x1.y) <= 1e-3 and np.linalg.norm(x1.v) <= 1e-3)
    return x1, visited


def _axis_time_to_rest(d: float, v: float, a: float, vel_slack: float) -> float:
    """Minimum time of a 1-D double integrator from (0, v) to (d, ~0)."""
    if abs(d) < 1e-12 and abs(v) <= vel_slack:
        return 0.0
    q = v * abs(v) / (2.0 * a)
    sigma = 1.0 if d - q >= 0 else -1.0
    vp_sq = sigma * a * d + 0.5 * v * v
    vp = math.sqrt(max(vp_sq, 0.0))
    t = (2.0 * vp - sigma * v) / a
    return max(t - vel_slack / a, 0.0)


def _axis_time_free(d: float, v: float, a: float) -> float:
    """Minimum time to reach displacement d with free terminal velocity."""
    if abs(d) < 1e-12:
        return 0.0
    sigma = 1.0 if d > 0 else -1.0
    w = math.sqrt(v * v + 2.0 * a * abs(d))
    return (w - sigma * v) / a


def min_time_bound(x: RobotState, goal: Goal, m: float) -> float:
    """Admissible arrival-time bound: per-axis exact 1-D minimum times under
    unit input, relaxed by the goal tolerances, combined by max."""
    a = 1.0 / m
    t = 0.0
    for i in range(2):
        d = float(goal.position[i] - x.y[i])
        d = math.copysign(max(abs(d) - goal.pos_tol, 0.0), d)
        if goal.vel_tol is None:
            t = max(t, _axis_time_free(d, float(x.v[i]), a))
        else:
            t = max(t, _axis_time_to_rest(d, float(x.v[i]), a, goal.vel_tol))
    return t


def _at_goal(x: RobotState, goal: Goal) -> bool:
    if np.linalg.norm(x.y - goal.position) > goal.pos_tol:
        return False
    if goal.vel_tol is not None and np.linalg.norm(x.v) > goal.vel_tol:
        return False
    return True


def _heuristic(x: RobotState, goals: list, m: float) -> float:
    return min(min_time_bound(x, g, m) for g in goals)


def plan_to_goals(x0: RobotState, goals: list, grid, cfg: HorizonConfig,
                  m_carry: float, m_nominal: float,
                  depot_visited: bool = False) -> DiscretePlan:
    """Best-first branch-and-bound over input sequences toward any goal.

    Positions inside known obstacle cells are forbidden waypoints. With no
    goal inside the horizon, returns the input sequence whose end state
    minimizes the heuristic (receding-horizon fallback).
    """
    if not goals:
        raise ValueError("at least one goal is required")
    actions = InputPolygon(cfg.sides, cfg.levels).actions()
    m_h = m_nominal if depot_visited else m_carry

    if _at_goal(x0, goals[0]) or any(_at_goal(x0, g) for g in goals):
        return DiscretePlan(np.zeros((0, 2)), 0.0, True,
                            np.zeros(0, dtype=bool), np.zeros(0, dtype=bool), 0.0)

    counter = itertools.count()
    h0 = _heuristic(x0, goals, m_h)
    heap = [(h0, next(counter), 0, x0, depot_visited, ())]
    best_leaf = None   # (h_end, f, inputs)
    expanded = 0
    while heap and expanded < cfg.node_budget:
        f, _, steps, x, visited, inputs = heapq.heappop(heap)
        expanded += 1
        if steps >= cfg.n_max:
            h_end = f - steps * cfg.t_s
            if best_leaf is None or h_end < best_leaf[0]:
                best_leaf = (h_end, f, inputs)
            continue
        for ai, u in enumerate(actions):
            x1, visited1 = sampled_step(x, u, m_carry, m_nominal, cfg.t_s, visited)
            if grid is not None and world.in_known_obstacle(grid, x1.y):
                continue
            seq = inputs + (ai,)
            if any(_at_goal(x1, g) for g in goals):
                n = steps + 1
                b_d = np.zeros(n, dtype=bool)
                b_f = np.zeros(n, dtype=bool)
                b_f[-1] = True
                if visited1 and not visited:
                    b_d[-1] = True
                return DiscretePlan(actions[list(seq)], n * cfg.t_s, True,
                                    b_d, b_f, 0.0)
            m_next = m_nominal if visited1 else m_carry
            h = _heuristic(x1, goals, m_next)
            heapq.heappush(heap, ((steps + 1) * cfg.t_s + h, next(counter),
                                  steps + 1, x1, visited1, seq))
    if best_leaf is None:
        # budget exhausted before any leaf: fall back to the best frontier node
        f, _, steps, x, visited, inputs = heap[0] if heap else (h0, 0, 0, x0, depot_visited, ())
        best_leaf = (f - steps * cfg.t_s, f, inputs)
    h_end, f, inputs = best_leaf
    seq = actions[list(inputs)] if inputs else np.zeros((0, 2))
    n = seq.shape[0]
    return DiscretePlan(seq, n * cfg.t_s + h_end, False,
                        np.zeros(n, dtype=bool), np.zeros(n, dtype=bool), h_end)


def _goal_set_worst(state: HybridState, objects: dict, m_nominal: float,
                    cfg: HorizonConfig, stride: int):
    goals = []
    undetected = set(objects) - set(state.q.detected)
    if undetected:
        placement, _ = cost_oracle.worst_case_positions(
            state.q, state.x.y, state.grid, objects, m_nominal, stride)
        for p in placement.values():
            goals.append(Goal(p, cfg.goal_pos_tol, cfg.goal_vel_tol))
    for oid in sorted(state.q.pending()):
        goals.append(Goal(objects[oid].position, cfg.goal_pos_tol, cfg.goal_vel_tol))
    if state.q.carried:
        goals.append(Goal(np.zeros(2), cfg.goal_pos_tol, cfg.goal_vel_tol))
    return goals


def _goal_set_prob(state: HybridState, objects: dict, m_nominal: float,
                   cfg: HorizonConfig, stride: int):
    goals = []
    undetected = set(objects) - set(state.q.detected)
    if undetected:
        idx, _ = world.unexplored_region(state.grid)
        thresh = state.grid.cover_threshold
        for w in state.grid.points[idx]:
            goals.append(Goal(w, max(thresh, cfg.goal_pos_tol), None))
    else:
        positions = {oid: objects[oid].position for oid in objects}
        masses = {oid: objects[oid].mass for oid in objects}
        _, sigma = cost_oracle.lower_bound(
            state.q, state.x.y, positions, masses, m_nominal)
        if sigma.actions:
            first = sigma.actions[0]
            target = np.zeros(2) if first == cost_oracle.DROPOFF else objects[first].position
            goals.append(Goal(target, cfg.goal_pos_tol, cfg.goal_vel_tol))
    for oid in sorted(state.q.pending()):
        goals.append(Goal(objects[oid].position, cfg.goal_pos_tol, cfg.goal_vel_tol))
    if not goals and state.q.carried:
        goals.append(Goal(np.zeros(2), cfg.goal_pos_tol, cfg.goal_vel_tol))
    return goals


def plan_worst_case(state: HybridState, objects: dict, cfg: HorizonConfig,
                    m_nominal: float, stride: int = 3) -> DiscretePlan:
    """Horizon plan toward the adversarial placement components, pending
    pick-ups, or the depot while carrying."""
    goals = _goal_set_worst(state, objects, m_nominal, cfg, stride)
    m_carry = m_nominal + sum(objects[o].mass for o in state.q.carried)
    return plan_to_goals(state.x, goals, state.grid, cfg, m_carry, m_nominal)


def plan_probabilistic(state: HybridState, objects: dict, cfg: HorizonConfig,
                       m_nominal: float, stride: int = 3) -> DiscretePlan:
    """Horizon plan toward the nearest unexplored observability disc, or the
    remaining collection string once everything is detected."""
    goals = _goal_set_prob(state, objects, m_nominal, cfg, stride)
    m_carry = m_nominal + sum(objects[o].mass for o in state.q.carried)
    return plan_to_goals(state.x, goals, state.grid, cfg, m_carry, m_nominal)


def receding_step(state: HybridState, objects: dict, mode: str,
                  cfg: HorizonConfig, m_nominal: float, stride: int = 3):
    """First input of a fresh horizon plan (the receding-horizon control)."""
    from . import hybrid_core

    if hybrid_core.is_final(state, objects):
        raise PlanningDone("task already complete")
    plan = (plan_worst_case if mode == "worst" else plan_probabilistic)(
        state, objects, cfg, m_nominal, stride)
    if plan.inputs.shape[0] == 0:
        return np.zeros(2), plan
    return plan.inputs[0], plan
