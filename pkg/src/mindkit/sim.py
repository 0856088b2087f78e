"""Deterministic synchronous closed-loop simulator."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .contingency.dynamics import Control, VehicleState, bicycle_step
from .planner import VARIANTS, Planner, tree_digest
from .world import (LaneGraph, ObservationHistory, PolicySpec, ScenarioFile, Track, candidate_routes)

LOOKAHEAD = 6.0  # m, pure pursuit
SPEED_GAIN = 1.5  # 1/s
A_TRACK = (-4.0, 2.0)  # acceleration limits of scripted drivers
KAPPA_MAX = 0.3


@dataclass(frozen=True)
class SimOptions:
    radius: float = 1.0
    goal_margin: float = 5.0  # m before the end of the ego route
    trigger_jitter: float = 0.5  # s, uniform half-width applied per seed
    speed_jitter: float = 0.1  # relative, uniform half-width applied per seed
    timing: bool = False  # wall-clock in logs breaks byte determinism, so off by default

    def __post_init__(self):
        if self.radius <= 0 or self.goal_margin < 0 or self.trigger_jitter < 0 or not 0 <= self.speed_jitter < 1:
            raise ValueError("invalid simulator options")


# ---------------------------------------------------------------------------
# scripted agents

class AgentPolicy:
    """Playback, lane following, or lane following with a timed adversarial action."""

    KINDS = ("playback", "lane-follow", "adversarial-trigger")

    def __init__(self, spec: PolicySpec, lane_graph: LaneGraph, start_state, dt: float):
        if spec.kind not in self.KINDS:
            raise ValueError(f"unknown policy kind {spec.kind!r}")
        self.kind = spec.kind
        self.params = dict(spec.params)
        self.dt = dt
        if self.kind == "playback":
            if not self.params.get("states"):
                raise ValueError(f"playback policy for {spec.agent_id} needs 'states'")
            self.script = np.asarray(self.params["states"], dtype=float)
            return
        self.target_speed = float(self.params.get("target_speed", start_state[3]))
        self.path = self._path(lane_graph, self.params.get("route"), start_state)
        self.trigger_step = None
        if self.kind == "adversarial-trigger":
            for key in ("trigger_time", "action"):
                if key not in self.params:
                    raise ValueError(f"adversarial policy for {spec.agent_id} needs {key!r}")
            self.trigger_step = int(round(float(self.params["trigger_time"]) / dt))
            if self.params["action"] == "route-switch":
                self.switch_path = self._path(lane_graph, self.params["switch_route"], start_state)

    @staticmethod
    def _path(graph, route, state):
        if route:
            return graph.route_path(tuple(route)).polyline
        routes = candidate_routes(graph, state)
        return graph.route_path(routes[0].lane_ids).polyline

    def jittered(self, rng, opts: SimOptions) -> "AgentPolicy":
        if self.kind == "playback":
            return self
        self.target_speed *= 1.0 + rng.uniform(-opts.speed_jitter, opts.speed_jitter)
        if self.trigger_step is not None:
            self.trigger_step = max(0, self.trigger_step + int(round(rng.uniform(-1, 1) * opts.trigger_jitter / self.dt)))
        return self

    def triggered(self, k: int) -> bool:
        return self.trigger_step is not None and k >= self.trigger_step

    def step(self, k: int, state: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Next state and the control used (zero for playback) at step k."""
        if self.kind == "playback":
            nxt = self.script[min(k, len(self.script) - 1)].copy()
            return nxt, np.zeros(2)
        path = self.path
        accel = SPEED_GAIN * (self.target_speed - state[3])
        if self.triggered(k):
            action = self.params["action"]
            value = float(self.params.get("value", 0.0))
            if action == "accelerate":
                cap = float(self.params.get("speed_cap", math.inf))
                accel = value if state[3] < cap else SPEED_GAIN * (cap - state[3])
            elif action == "brake":
                accel = -abs(value)
            elif action == "route-switch":
                path = self.switch_path
            else:
                raise ValueError(f"unknown adversarial action {action!r}")
        accel = min(max(accel, A_TRACK[0]), max(A_TRACK[1], float(self.params.get("value", 0.0))))
        kappa = pure_pursuit(path, state)
        nxt = bicycle_step(VehicleState(*state), Control(accel, kappa), self.dt).as_array()
        nxt[3] = max(nxt[3], 0.0)
        return nxt, np.array([accel, kappa])


def pure_pursuit(path, state, lookahead: float = LOOKAHEAD) -> float:
    s, _, _ = path.project(state[:2])
    target = path.point_at(s + lookahead)
    dx, dy = target[0] - state[0], target[1] - state[1]
    alpha = math.atan2(dy, dx) - state[2]
    dist = max(math.hypot(dx, dy), 1e-6)
    return min(max(2.0 * math.sin(alpha) / dist, -KAPPA_MAX), KAPPA_MAX)


# ---------------------------------------------------------------------------
# world state

@dataclass
class WorldState:
    k: int
    dt: float
    histories: dict  # id -> (H, 4) array, oldest first
    roles: dict
    ego_control: np.ndarray = field(default_factory=lambda: np.zeros(2))

    @classmethod
    def from_observation(cls, obs: ObservationHistory) -> "WorldState":
        return cls(0, obs.dt, {t.id: np.array(t.states) for t in obs.tracks}, {t.id: t.role for t in obs.tracks})

    def current(self, eid: str) -> np.ndarray:
        return self.histories[eid][-1]

    @property
    def ego_id(self) -> str:
        return next(i for i, r in self.roles.items() if r == "ego")

    def observation(self) -> ObservationHistory:
        return ObservationHistory(self.dt, tuple(Track(i, self.roles[i], h) for i, h in self.histories.items()))

    def advanced(self, new_states: dict, ego_control) -> "WorldState":
        hist = {i: np.concatenate([h[1:], new_states[i][None]], axis=0) for i, h in self.histories.items()}
        return WorldState(self.k + 1, self.dt, hist, self.roles, np.asarray(ego_control, dtype=float))


def collisions(states: dict, radius: float) -> list:
    ids = sorted(states)
    hits = []
    for a in range(len(ids)):
        for b in range(a + 1, len(ids)):
            pa, pb = states[ids[a]], states[ids[b]]
            if math.hypot(pa[0] - pb[0], pa[1] - pb[1]) < 2.0 * radius:
                hits.append((ids[a], ids[b]))
    return hits


def step(world: WorldState, policies: dict, planner: Planner | None, seed: int = 0,
         opts: SimOptions = SimOptions()) -> tuple[WorldState, dict]:
    """Advance every entity by one step; the ego runs one planning cycle unless ``planner`` is None."""
    ego_id = world.ego_id
    record = {"step": world.k + 1, "t": round((world.k + 1) * world.dt, 6)}
    t0 = time.perf_counter()
    new_states = {}
    ego_u = np.zeros(2)
    if planner is not None:
        res = planner.plan(world.observation(), tuple(world.ego_control), seed=seed * 100_003 + world.k)
        ego_u = np.array(res.best.first_control)
        ego = world.current(ego_id)
        nxt = bicycle_step(VehicleState(*ego), Control(*ego_u), world.dt).as_array()
        new_states[ego_id] = nxt
        record.update(policy=int(res.best.policy_node), tree=tree_digest(res.tree),
                      leaves=len(res.tree.leaves), degraded=bool(res.degraded))
    elif ego_id in policies:
        new_states[ego_id], ego_u = policies[ego_id].step(world.k, world.current(ego_id))
    else:
        ego = world.current(ego_id)
        new_states[ego_id] = bicycle_step(VehicleState(*ego), Control(0.0, 0.0), world.dt).as_array()
    for eid in world.histories:
        if eid == ego_id:
            continue
        if eid in policies:
            new_states[eid], _ = policies[eid].step(world.k, world.current(eid))
        else:
            cur = world.current(eid)
            new_states[eid] = bicycle_step(VehicleState(*cur), Control(0.0, 0.0), world.dt).as_array()
    record["states"] = {eid: [float(v) for v in new_states[eid]] for eid in sorted(new_states)}
    record["ego_control"] = [float(ego_u[0]), float(ego_u[1])]
    record["wall_ms"] = round(1000.0 * (time.perf_counter() - t0), 3) if opts.timing else 0.0
    return world.advanced(new_states, ego_u), record


# ---------------------------------------------------------------------------
# episodes and metrics

@dataclass
class Metrics:
    avg_speed: float
    max_abs_acc: float
    rms_acc: float
    collision: bool
    goal_reached: bool
    steps: int

    def to_dict(self) -> dict:
        return {"avgSpd": self.avg_speed, "maxAbsAcc": self.max_abs_acc, "rmsAcc": self.rms_acc,
                "collision": self.collision, "goal": self.goal_reached, "steps": self.steps}


@dataclass
class EpisodeLog:
    records: list
    reason: str
    ego_id: str

    def to_jsonl(self) -> str:
        lines = [json.dumps(r, sort_keys=True) for r in self.records]
        lines.append(json.dumps({"event": "end", "reason": self.reason, "ego": self.ego_id}, sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "EpisodeLog":
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        end = rows[-1]
        return cls(rows[:-1], end["reason"], end["ego"])


def metrics_from_log(log: EpisodeLog) -> Metrics:
    speeds = np.array([r["states"][log.ego_id][3] for r in log.records])
    acc = np.array([r["ego_control"][0] for r in log.records])
    if len(speeds) == 0:
        return Metrics(0.0, 0.0, 0.0, log.reason == "collision", log.reason == "goal", 0)
    return Metrics(
        avg_speed=float(max(speeds.mean(), 0.0)),
        max_abs_acc=float(np.abs(acc).max()),
        rms_acc=float(math.sqrt(np.mean(acc * acc))),
        collision=log.reason == "collision",
        goal_reached=log.reason == "goal",
        steps=len(log.records),
    )


def build_policies(scenario: ScenarioFile, seed: int, opts: SimOptions) -> dict:
    rng = np.random.default_rng(seed)
    obs = scenario.history
    out = {}
    for spec in sorted(scenario.policies, key=lambda p: p.agent_id):
        start = obs.track(spec.agent_id).current
        out[spec.agent_id] = AgentPolicy(spec, scenario.lane_graph, start, obs.dt).jittered(rng, opts)
    return out


def run_episode(scenario: ScenarioFile, planner: Planner | None, seed: int = 0,
                opts: SimOptions = SimOptions(), horizon: int | None = None) -> tuple[EpisodeLog, Metrics]:
    world = WorldState.from_observation(scenario.history)
    policies = build_policies(scenario, seed, opts)
    route = scenario.lane_graph.route_path(scenario.ego_route.lane_ids).polyline
    n_steps = horizon or scenario.sim.horizon_steps
    records = []
    reason = "horizon"
    for _ in range(n_steps):
        world, rec = step(world, policies, planner, seed, opts)
        hits = collisions(rec["states"], opts.radius)
        ego_hits = [h for h in hits if world.ego_id in h]
        if ego_hits:
            rec["collision"] = [list(h) for h in ego_hits]
        records.append(rec)
        if ego_hits:
            reason = "collision"
            break
        s, _, _ = route.project(world.current(world.ego_id)[:2])
        if s >= route.length - opts.goal_margin:
            reason = "goal"
            break
    log = EpisodeLog(records, reason, world.ego_id)
    return log, metrics_from_log(log)


def make_planner(scenario: ScenarioFile, variant: str, run_cfg=None) -> Planner | None:
    if variant == "none":
        return None
    from .config import RunConfig

    cfg = run_cfg or RunConfig()
    return Planner(scenario.lane_graph, scenario.ego_route, VARIANTS[variant], cfg.aime, cfg.predictor,
                   cfg.planner, cfg.reward, cfg.horizon, cfg.chance_samples)


def compare_planners(scenario: ScenarioFile, variants=("MIND", "NN+CP", "MB+CP"), seeds=range(10),
                     run_cfg=None, jobs: int = 1) -> dict:
    """Per-variant, per-seed metrics plus means over seeds."""
    from .config import RunConfig

    cfg = run_cfg or RunConfig()
    tasks = [(scenario, v, s, cfg) for v in variants for s in seeds]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_episode_task, tasks))
    else:
        results = [_episode_task(t) for t in tasks]
    table = {v: {"seeds": {}, "mean": {}} for v in variants}
    for (_, v, s, _), m in zip(tasks, results):
        table[v]["seeds"][s] = m
    for v in variants:
        ms = list(table[v]["seeds"].values())
        table[v]["mean"] = {
            "avgSpd": float(np.mean([m.avg_speed for m in ms])),
            "maxAbsAcc": float(np.mean([m.max_abs_acc for m in ms])),
            "rmsAcc": float(np.mean([m.rms_acc for m in ms])),
            "collisions": int(sum(m.collision for m in ms)),
        }
    return table


def _episode_task(task):
    scenario, variant, seed, cfg = task
    _, metrics = run_episode(scenario, make_planner(scenario, variant, cfg), seed, cfg.sim)
    return metrics
