"""Closed-loop mission execution for all four planning methods, with
deterministic seeding, structured JSON-Lines logging, Monte Carlo batches and
plot-ready snapshot export.

Event-driven methods follow the optimized curve through a tracking controller
and replan on detections (plus the initial plan, newly sensed obstacle cells
that intrude on the remaining curve, and plan exhaustion). Time-driven
methods re-solve the horizon problem every sampling period and execute its
first input.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import cost_oracle, curve_traversal, fourier_curve, hybrid_core, param_optimizer, time_driven, world
from .fourier_curve import CurveParams
from .hybrid_core import EventKind, EventRecord, HybridState, RobotState
from .param_optimizer import OptimizerConfig, ReplanContext
from .time_driven import HorizonConfig

METHODS = ("time-worst", "time-prob", "event-worst", "event-prob")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_BUDGET = 2


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    exec_dt: float = 0.05
    time_budget: float = 400.0
    step_budget: int = 400000
    kp: float = 10.0
    kd: float = 8.0
    control_margin: float = 0.95
    placement_stride: int = 3


@dataclass
class ScenarioConfig:
    env: world.Environment
    objects: list
    m_nominal: float
    method: str
    seed: int
    horizon: HorizonConfig = field(default_factory=HorizonConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    out_dir: str = "."

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {METHODS}")
        world.validate_objects(self.env, self.objects)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        try:
            obstacles = tuple(
                world.Rectangle(np.array(o["center"], dtype=float),
                                np.array(o["half_extents"], dtype=float))
                for o in d.get("obstacles", ()))
            env = world.Environment(
                y_max=float(d["y_max"]),
                sensor_radius=float(d["sensor_radius"]),
                grid_spacing=float(d["grid_spacing"]),
                obstacles=obstacles)
            objects = [
                world.ObjectSpec(int(o["id"]), np.array(o["position"], dtype=float),
                                 float(o["mass"]))
                for o in d["objects"]]
            return cls(
                env=env,
                objects=objects,
                m_nominal=float(d.get("robot_mass", 2.0)),
                method=d.get("method", "event-prob"),
                seed=int(d.get("seed", 0)),
                horizon=HorizonConfig(**d.get("horizon", {})),
                optimizer=OptimizerConfig(**d.get("optimizer", {})),
                sim=SimConfig(**d.get("sim", {})),
                out_dir=d.get("out_dir", "."),
            )
        except (KeyError, TypeError, ValueError, world.WorldError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path: str) -> "ScenarioConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "y_max": self.env.y_max,
            "sensor_radius": self.env.sensor_radius,
            "grid_spacing": self.env.grid_spacing,
            "obstacles": [
                {"center": obs.center.tolist(), "half_extents": obs.half_extents.tolist()}
                for obs in self.env.obstacles],
            "objects": [
                {"id": o.id, "position": o.position.tolist(), "mass": o.mass}
                for o in self.objects],
            "robot_mass": self.m_nominal,
            "method": self.method,
            "seed": self.seed,
            "horizon": asdict(self.horizon),
            "optimizer": asdict(self.optimizer),
            "sim": asdict(self.sim),
        }


class RunLog:
    """Append-only structured record list; one JSON object per line on disk."""

    def __init__(self, records=None):
        self.records = list(records or [])

    def add(self, **rec):
        self.records.append(rec)

    def write(self, path: str):
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path: str) -> "RunLog":
        with open(path) as fh:
            return cls([json.loads(line) for line in fh if line.strip()])

    def of_type(self, kind: str):
        return [r for r in self.records if r["type"] == kind]

    def events(self):
        out = []
        for r in self.of_type("event"):
            out.append(EventRecord(
                EventKind(r["kind"]), frozenset(r["ids"]), r["t"],
                np.array(r["position"])))
        return out

    @property
    def footer(self):
        return self.records[-1] if self.records and self.records[-1]["type"] == "footer" else None


def _mass_of(state: HybridState, objects: dict, m_nominal: float) -> float:
    return hybrid_core.current_mass(state.q, objects, m_nominal)


def _log_state(log: RunLog, state: HybridState, objects, m_nominal, s_ref=None):
    log.add(type="state", t=state.t, y=state.x.y.tolist(), v=state.x.v.tolist(),
            carried=sorted(state.q.carried), deposited=sorted(state.q.deposited),
            detected=sorted(state.q.detected),
            mass=_mass_of(state, objects, m_nominal),
            **({"s_ref": s_ref} if s_ref is not None else {}))


def _log_coverage(log: RunLog, state: HybridState, new_cells, new_obstacles):
    if len(new_cells) == 0 and len(new_obstacles) == 0:
        return
    _, kappa = world.unexplored_region(state.grid)
    log.add(type="coverage", t=state.t,
            new_cells=[int(i) for i in new_cells],
            new_obstacle_cells=[int(i) for i in new_obstacles],
            kappa=kappa)


def _log_event(log: RunLog, e: EventRecord):
    log.add(type="event", t=e.time, kind=e.kind.value,
            ids=sorted(e.object_ids), position=np.asarray(e.position).tolist())


def _sense(log, state, env):
    new_cov = world.update_coverage(state.grid, state.x.y)
    new_obs = world.register_obstacle_cells(state.grid, env, state.x.y)
    _log_coverage(log, state, new_cov, new_obs)
    return new_obs


def _initial_detections(log, state, objects, r):
    for oid in sorted(objects):
        if np.linalg.norm(objects[oid].position - state.x.y) <= r:
            e = EventRecord(EventKind.DETECTION, frozenset([oid]), state.t,
                            state.x.y.copy())
            state.q = hybrid_core.apply_event(state.q, e)
            _log_event(log, e)


class _ProfileRef:
    """Time-parameterized reference along a solved velocity profile."""

    def __init__(self, params: CurveParams, profile):
        self.params = params
        self.profile = profile
        self.node_t = profile.time_at()
        self.duration = float(self.node_t[-1])
        idx = curve_traversal._nearest_idx(profile.s, profile.schedule.stops)
        self.stop_times = self.node_t[idx]
        self.stop_s = profile.s[idx]
        self.stop_ids = profile.schedule.stop_ids

    def sv_at(self, tau: float):
        tau = min(max(tau, 0.0), self.duration)
        i = int(np.clip(np.searchsorted(self.node_t, tau, side="right") - 1,
                        0, self.node_t.shape[0] - 2))
        dt_cell = self.node_t[i + 1] - self.node_t[i]
        if dt_cell <= 1e-15:
            return float(self.profile.s[i + 1]), float(self.profile.v[i + 1]), 0.0
        a = (self.profile.v[i + 1] - self.profile.v[i]) / dt_cell
        tr = tau - self.node_t[i]
        s = self.profile.s[i] + self.profile.v[i] * tr + 0.5 * a * tr * tr
        return float(s), float(self.profile.v[i] + a * tr), float(a)

    def phys(self, tau: float):
        s, vs, a_s = self.sv_at(tau)
        c, cp, cpp = fourier_curve.eval(self.params, s)
        return c, cp * vs, cpp * vs * vs + cp * a_s, s, vs

    def next_breakpoint(self, tau: float) -> float:
        cand = [t for t in self.stop_times if t > tau + 1e-9]
        cand.append(self.duration)
        return min(c for c in cand if c > tau + 1e-9) if any(
            c > tau + 1e-9 for c in cand) else self.duration


class _BrakeRef:
    """Reference that decelerates along the current curve to a stop."""

    def __init__(self, params: CurveParams, s0: float, vs0: float, g: float):
        self.params = params
        self.s0 = s0
        self.vs0 = vs0
        self.g = max(g, 1e-9)
        self.duration = vs0 / self.g
        self.stop_times = []
        self.stop_ids = ()

    def sv_at(self, tau: float):
        tau = min(max(tau, 0.0), self.duration)
        s = self.s0 + self.vs0 * tau - 0.5 * self.g * tau * tau
        return float(min(s, 1.0)), float(self.vs0 - self.g * tau), -self.g

    def phys(self, tau: float):
        s, vs, a_s = self.sv_at(tau)
        c, cp, cpp = fourier_curve.eval(self.params, s)
        return c, cp * vs, cpp * vs * vs + cp * a_s, s, vs

    def next_breakpoint(self, tau: float) -> float:
        return self.duration


def _make_ctx(state: HybridState, env, objects, cfg: ScenarioConfig,
              prev, s_minus, v_exec) -> ReplanContext:
    all_detected = state.q.detected == frozenset(objects)
    if all_detected:
        uncovered = np.empty((0, 2))
    else:
        idx, _ = world.unexplored_region(state.grid)
        uncovered = state.grid.points[idx]
    pending = [(oid, objects[oid].position, objects[oid].mass)
               for oid in sorted(state.q.pending())]
    carried = sum(objects[o].mass for o in state.q.carried)
    law_kind = "worst" if cfg.method.endswith("worst") else "prob"
    return ReplanContext(
        y=state.x.y.copy(), v=np.asarray(v_exec, dtype=float).copy(),
        s_minus=s_minus, prev=prev,
        uncovered=uncovered, pending=pending,
        obstacle_cells=world.obstacle_cells(state.grid),
        d_s=env.grid_spacing / math.sqrt(2.0),
        r=env.sensor_radius, y_max=env.y_max,
        m_nominal=cfg.m_nominal, carried_mass=carried,
        law_kind=law_kind)


def _log_replan(log, state, res, reason):
    log.add(type="replan", t=state.t, reason=reason,
            theta=res.params.pack().tolist(),
            gamma1=res.params.gamma1, gamma2=res.params.gamma2,
            f2=res.params.f2,
            stops=res.schedule.stops.tolist(),
            stop_ids=[list(ids) for ids in res.schedule.stop_ids],
            masses=res.schedule.masses.tolist(),
            j1=res.profile.total_time,
            alpha=res.profile.alpha,
            converged=bool(res.converged),
            outer_iters=res.outer_iters,
            telemetry=res.telemetry,
            audit=res.audit)


def _curve_intrudes(params: CurveParams, s_from: float, obstacle_pts, d_s: float) -> bool:
    if obstacle_pts.size == 0:
        return False
    s = np.linspace(min(s_from, 1.0), 1.0, 200)
    c, _, _ = fourier_curve.eval(params, s)
    d2 = ((c.T[:, None, :] - obstacle_pts[None, :, :]) ** 2).sum(-1)
    return bool(np.min(d2) < d_s * d_s)


def _run_event_driven(cfg: ScenarioConfig, log: RunLog) -> int:
    env = cfg.env
    objects = {o.id: o for o in cfg.objects}
    grid = world.build_grid(env)
    state = hybrid_core.initial_state(grid)
    rng = np.random.default_rng(cfg.seed)
    opt = cfg.optimizer

    _sense(log, state, env)
    _initial_detections(log, state, objects, env.sensor_radius)
    _log_state(log, state, objects, cfg.m_nominal, s_ref=0.0)

    def solve(prev, s_minus, v_exec, reason, theta0=None):
        ctx = _make_ctx(state, env, objects, cfg, prev, s_minus, v_exec)
        if theta0 is None and prev is None:
            theta0 = param_optimizer.initial_guess(ctx, opt, rng)
        res = param_optimizer.replan_on_detection(ctx, opt, theta0=theta0)
        _log_replan(log, state, res, reason)
        return res

    res = solve(None, 0.0, np.zeros(2), "initial")
    ref = _ProfileRef(res.params, res.profile)
    plan_t0 = state.t
    params = res.params
    braking = False
    steps = 0

    while steps < cfg.sim.step_budget:
        steps += 1
        if hybrid_core.is_final(state, objects):
            log.add(type="footer", t_f=state.t, completed=True, exit=EXIT_OK,
                    events=len(log.of_type("event")))
            return EXIT_OK
        if state.t > cfg.sim.time_budget:
            break

        tau = state.t - plan_t0
        if tau >= ref.duration - 1e-9:
            if braking:
                braking = False
                res = solve(params, ref.sv_at(ref.duration)[0], np.zeros(2), "obstacle")
            else:
                res = solve(params, 1.0, np.zeros(2), "exhausted")
            params = res.params
            ref = _ProfileRef(params, res.profile)
            plan_t0 = state.t
            continue

        t_next = ref.next_breakpoint(tau)
        dt = min(cfg.sim.exec_dt, max(t_next - tau, 1e-6))
        m = _mass_of(state, objects, cfg.m_nominal)

        y_ref0, v_ref0, _, _, _ = ref.phys(tau)
        y_ref1, v_ref1, _, s1, vs1 = ref.phys(tau + dt)
        a_mean = (v_ref1 - v_ref0) / dt
        u = m * (a_mean + cfg.sim.kp * (y_ref0 - state.x.y)
                 + cfg.sim.kd * (v_ref0 - state.x.v))
        nu = np.linalg.norm(u)
        if nu > 1.0:
            u = u / nu

        x0 = state.x
        events = hybrid_core.detect_events((x0, u, m, dt), state, objects)
        detections = [e for e in events if e.kind is EventKind.DETECTION]
        if detections:
            dt_c = max(detections[0].time - state.t, 1e-9)
            state.x = hybrid_core.step_dynamics(x0, u, m, dt_c)
            state.t += dt_c
            _sense(log, state, env)
            fired = [e for e in detections if e.time <= state.t + 1e-12]
            for e in fired or detections[:1]:
                state.q = hybrid_core.apply_event(state.q, e)
                _log_event(log, e)
            _log_state(log, state, objects, cfg.m_nominal)
            s_now, vs_now, _ = ref.sv_at(state.t - plan_t0)
            braking = False
            res = solve(params, s_now, state.x.v, "detection")
            params = res.params
            ref = _ProfileRef(params, res.profile)
            plan_t0 = state.t
            continue

        state.x = hybrid_core.step_dynamics(x0, u, m, dt)
        state.t += dt
        new_obs = _sense(log, state, env)
        _log_state(log, state, objects, cfg.m_nominal, s_ref=ref.sv_at(state.t - plan_t0)[0])

        for e in events:
            if e.kind is EventKind.DETECTION:
                continue
            state.q = hybrid_core.apply_event(state.q, e)
            state.x = hybrid_core.snap_to(state.x, e.position)
            _log_event(log, e)

        if new_obs.size and not braking:
            s_now, vs_now, _ = ref.sv_at(state.t - plan_t0)
            if _curve_intrudes(params, s_now, world.obstacle_cells(state.grid),
                               env.grid_spacing / math.sqrt(2.0)):
                if vs_now > 1e-6:
                    alpha = ref.profile.alpha if isinstance(ref, _ProfileRef) else 1.0
                    g = cfg.sim.control_margin / (alpha * m)
                    ref = _BrakeRef(params, s_now, vs_now, g)
                    plan_t0 = state.t
                    braking = True
                    log.add(type="brake", t=state.t, s=s_now)
                else:
                    braking = False
                    res = solve(params, s_now, np.zeros(2), "obstacle")
                    params = res.params
                    ref = _ProfileRef(params, res.profile)
                    plan_t0 = state.t

    log.add(type="footer", t_f=state.t, completed=False, exit=EXIT_BUDGET,
            events=len(log.of_type("event")))
    return EXIT_BUDGET


def _run_time_driven(cfg: ScenarioConfig, log: RunLog) -> int:
    env = cfg.env
    objects = {o.id: o for o in cfg.objects}
    grid = world.build_grid(env)
    state = hybrid_core.initial_state(grid)
    mode = "worst" if cfg.method.endswith("worst") else "prob"
    hz = cfg.horizon

    _sense(log, state, env)
    _initial_detections(log, state, objects, env.sensor_radius)
    _log_state(log, state, objects, cfg.m_nominal)

    max_steps = int(cfg.sim.time_budget / hz.t_s) + 1
    for _ in range(max_steps):
        if hybrid_core.is_final(state, objects):
            log.add(type="footer", t_f=state.t, completed=True, exit=EXIT_OK,
                    events=len(log.of_type("event")))
            return EXIT_OK
        u0, plan = time_driven.receding_step(
            state, objects, mode, hz, cfg.m_nominal, cfg.sim.placement_stride)
        log.add(type="plan_td", t=state.t, u0=np.asarray(u0).tolist(),
                cost=plan.cost, reached_goal=bool(plan.reached_goal),
                depth=int(plan.inputs.shape[0]))
        m = _mass_of(state, objects, cfg.m_nominal)
        speed = float(np.linalg.norm(state.x.v)) + hz.t_s / m
        n_sub = max(1, int(math.ceil(speed * hz.t_s / (env.grid_spacing / 2.0))))
        dt_sub = hz.t_s / n_sub
        for _ in range(n_sub):
            x0 = state.x
            events = hybrid_core.detect_events(
                (x0, u0, m, dt_sub), state, objects,
                eps_pos=hz.goal_pos_tol, eps_vel=hz.goal_vel_tol)
            state.x = hybrid_core.step_dynamics(x0, u0, m, dt_sub)
            state.t += dt_sub
            _sense(log, state, env)
            for e in events:
                state.q = hybrid_core.apply_event(state.q, e)
                if e.kind is not EventKind.DETECTION:
                    state.x = hybrid_core.snap_to(state.x, e.position)
                    m = _mass_of(state, objects, cfg.m_nominal)
                _log_event(log, e)
            _log_state(log, state, objects, cfg.m_nominal)

    log.add(type="footer", t_f=state.t, completed=False, exit=EXIT_BUDGET,
            events=len(log.of_type("event")))
    return EXIT_BUDGET


def run_mission(cfg: ScenarioConfig) -> RunLog:
    """Execute the configured method to completion or budget; returns the log."""
    log = RunLog()
    log.add(type="header", config=cfg.to_dict(), version=1)
    if cfg.method.startswith("event"):
        _run_event_driven(cfg, log)
    else:
        _run_time_driven(cfg, log)
    return log


def sample_placements(env: world.Environment, n: int, rng: np.random.Generator,
                      max_tries: int = 10000) -> list:
    """Uniform object positions in the workspace, rejected inside obstacles
    and inside the initial depot footprint."""
    out = []
    for _ in range(max_tries):
        if len(out) == n:
            break
        p = rng.uniform(-env.y_max, env.y_max, 2)
        if env.in_obstacle(p) or np.linalg.norm(p - env.depot) <= env.sensor_radius:
            continue
        out.append(p)
    if len(out) < n:
        raise RuntimeError("could not sample object placements")
    return out


def _mc_single(args):
    cfg_dict, method, run_seed, entropy = args
    cfg = ScenarioConfig.from_dict(cfg_dict)
    rng = np.random.default_rng(entropy)
    placements = sample_placements(cfg.env, len(cfg.objects), rng)
    objects = [replace(o, position=placements[i]) for i, o in enumerate(cfg.objects)]
    run_cfg = replace(cfg, objects=objects, method=method, seed=run_seed)
    log = run_mission(run_cfg)
    foot = log.footer
    return {
        "seed": run_seed,
        "positions": [p.tolist() for p in placements],
        "t_f": foot["t_f"],
        "completed": foot["completed"],
    }


def monte_carlo(cfg: ScenarioConfig, n_runs: int, seed: int, workers: int = 1) -> dict:
    """Repeated missions over random object placements with per-run derived
    seeds; placements depend only on (seed, run index), never on the method.
    """
    ss = np.random.SeedSequence(seed)
    children = ss.spawn(n_runs)
    jobs = [(cfg.to_dict(), cfg.method, int(seed) * 100003 + i, children[i])
            for i in range(n_runs)]
    if workers > 1:
        import multiprocessing as mp

        with mp.Pool(workers) as pool:
            rows = pool.map(_mc_single, jobs)
    else:
        rows = [_mc_single(j) for j in jobs]
    tf = np.array([r["t_f"] for r in rows if r["completed"]])
    return {
        "method": cfg.method,
        "n_runs": n_runs,
        "seed": seed,
        "completion_rate": float(np.mean([r["completed"] for r in rows])),
        "mean_tf": float(tf.mean()) if tf.size else float("nan"),
        "median_tf": float(np.median(tf)) if tf.size else float("nan"),
        "min_tf": float(tf.min()) if tf.size else float("nan"),
        "max_tf": float(tf.max()) if tf.size else float("nan"),
        "runs": rows,
    }


def export_snapshots(log: RunLog, times, out_dir: str = ".") -> list:
    """Per requested time: executed path split by carry mode, active planned
    curve, coverage state and scene geometry, as plot-ready JSON files."""
    header = log.records[0]
    if header["type"] != "header":
        raise ValueError("log has no header")
    cfgd = header["config"]
    states = log.of_type("state")
    if not states:
        raise ValueError("log has no state records")
    t_max = states[-1]["t"]
    paths = []
    os.makedirs(out_dir, exist_ok=True)
    for t_req in times:
        if t_req < 0 or t_req > t_max + 1e-9:
            raise ValueError(f"time {t_req} outside the log range [0, {t_max:.3f}]")
        upto = [s for s in states if s["t"] <= t_req + 1e-9]
        segments = []
        current = {"mass": upto[0]["mass"], "points": []}
        for srec in upto:
            if srec["mass"] != current["mass"]:
                segments.append(current)
                current = {"mass": srec["mass"], "points": []}
            current["points"].append(srec["y"])
        segments.append(current)
        planned = None
        for r in log.of_type("replan"):
            if r["t"] <= t_req + 1e-9:
                planned = r
        curve_pts = None
        if planned is not None:
            params = CurveParams.unpack(np.array(planned["theta"]),
                                        planned["gamma1"], planned["gamma2"],
                                        planned["f2"])
            c, _, _ = fourier_curve.eval(params, np.linspace(0, 1, 400))
            curve_pts = c.T.tolist()
        covered = set()
        obstacle_known = set()
        kappa = None
        for r in log.of_type("coverage"):
            if r["t"] <= t_req + 1e-9:
                covered.update(r["new_cells"])
                covered.update(r["new_obstacle_cells"])
                obstacle_known.update(r["new_obstacle_cells"])
                kappa = r["kappa"]
        events = [r for r in log.of_type("event") if r["t"] <= t_req + 1e-9]
        snap = {
            "t": t_req,
            "executed_segments": segments,
            "planned_curve": curve_pts,
            "covered_cells": sorted(covered),
            "known_obstacle_cells": sorted(obstacle_known),
            "kappa": kappa,
            "events": events,
            "objects": cfgd["objects"],
            "obstacles": cfgd["obstacles"],
            "y_max": cfgd["y_max"],
            "grid_spacing": cfgd["grid_spacing"],
        }
        path = os.path.join(out_dir, f"snapshot_t{t_req:g}.json")
        with open(path, "w") as fh:
            json.dump(snap, fh, sort_keys=True)
        paths.append(path)
    return paths
