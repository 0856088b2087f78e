"""Scene predictors producing K weighted joint Gaussian futures.

``IntentionPredictor`` enumerates explicit intentions (route plus longitudinal mode per
agent), keeps the jointly consistent ones, rolls each out deterministically along the
lane graph and wraps the means in positional Gaussians grown by single-integrator
propagation.  Action noise has two parts: a slow growth with prediction time and a bump
around contested conflict points whose size depends on how ambiguous the right of way
looks from the current observation.

Any callable with the same ``__call__`` signature (observation, command, horizon) that
returns a ``ScenePrediction`` can replace it in tree search and planning.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import segment_intersections
from .gmm import PredictedScenario, ScenePrediction, propagate_sequence
from .world import (
    LaneGraph,
    ObservationHistory,
    RouteCommand,
    RoutePath,
    candidate_routes,
)

MODES = ("yield", "maintain", "assert")


@dataclass(frozen=True)
class PredictorConfig:
    K: int = 6
    horizon: int = 60
    dt: float = 0.1
    sigma_a: float = 0.4  # velocity noise growth, (m/s) per s of prediction time
    sigma_int: float = 5.0  # peak extra velocity noise at a fully ambiguous conflict, m/s
    ambiguity_tau: float = 1.5  # s; arrival-time gap at which ambiguity falls to 1/e
    bump_length: float = 6.0  # m; spatial extent of the conflict noise bump
    modes: tuple = MODES
    assert_penalty: float = 0.6
    accel_evidence: float = 1.0  # per m/s^2 of observed speed change; reweights assert/yield priors
    evidence_window: int = 5  # history steps used to estimate the observed acceleration
    evidence_deadband: float = 0.3  # m/s^2 of observed acceleration treated as noise
    yield_decel: float = 2.0
    assert_accel: float = 1.5
    free_accel: float = 1.0
    ego_accel: float = 2.0  # the ego is predicted to close its speed gap faster than agents
    stop_margin: float = 4.0  # m before the conflict point where a yielding entity stops
    commit_decel: float = 3.0  # m/s^2; an entity that cannot stop at this rate is committed to go first
    clear_dist: float = 4.0  # m past the conflict point after which it counts as cleared
    idm_accel: float = 1.5
    idm_decel: float = 2.0
    idm_headway: float = 1.2  # s
    idm_min_gap: float = 2.0  # m
    entity_radius: float = 1.0
    lateral_tau: float = 1.0  # s; decay time of the lateral offset to the centerline
    route_max_len: float = 80.0
    style_scales: tuple = (1.0, 0.85, 1.15, 0.7, 1.3, 0.55, 1.45)

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.sigma_a < 0 or self.sigma_int < 0:
            raise ValueError("noise scales must be non-negative")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        for m in self.modes:
            if m not in MODES:
                raise ValueError(f"unknown longitudinal mode {m!r}")


@dataclass(frozen=True)
class IntentionHypothesis:
    """Ego route plus one (route, mode) pair per agent, in agent id order."""

    ego_route: RouteCommand
    agents: tuple  # ((agent_id, RouteCommand, mode), ...)
    prior: float
    style: float = 1.0

    def __post_init__(self):
        if self.prior <= 0:
            raise ValueError("prior weight must be positive")

    def label(self) -> dict:
        return {
            "ego_route": list(self.ego_route.lane_ids),
            "agents": {aid: {"route": list(r.lane_ids), "mode": m} for aid, r, m in self.agents},
            "style": self.style,
        }


@dataclass
class _Route:
    command: RouteCommand
    path: RoutePath
    s0: float
    e0: float


@dataclass
class _Entity:
    id: str
    index: int
    x0: np.ndarray
    v0: float
    a0: float = 0.0
    routes: list = field(default_factory=list)


class IntentionPredictor:
    """Analytic intention-mixture scene predictor over a lane graph."""

    def __init__(self, lane_graph: LaneGraph, cfg: PredictorConfig = PredictorConfig()):
        self.graph = lane_graph
        self.cfg = cfg
        self.calls = 0
        self._lane_x: dict = {}
        self._route_rel: dict = {}

    @property
    def dt(self) -> float:
        return self.cfg.dt

    # -- geometry caches -------------------------------------------------

    def _lane_crossings(self, a: str, b: str):
        key = (a, b)
        hit = self._lane_x.get(key)
        if hit is None:
            pa = np.asarray(self.graph[a].centerline, dtype=float)
            pb = np.asarray(self.graph[b].centerline, dtype=float)
            hit = segment_intersections(pa, pb)
            self._lane_x[key] = hit
        return hit

    def _relation(self, ra: RoutePath, rb: RoutePath):
        """Route-pair relation: (first conflict (s_a, s_b) or None, following offset info or None)."""
        key = (ra.lane_ids, rb.lane_ids)
        rel = self._route_rel.get(key)
        if rel is not None:
            return rel
        conflicts = []
        for ia, la in enumerate(ra.lane_ids):
            for ib, lb in enumerate(rb.lane_ids):
                if la == lb:
                    continue
                for sa, sb in self._lane_crossings(la, lb):
                    ga = ra.lane_starts[ia] + sa
                    gb = rb.lane_starts[ib] + sb
                    before_a = ra.lane_ids[ra.lane_index_at(ga - 0.05)] if ga > 0.05 else None
                    before_b = rb.lane_ids[rb.lane_index_at(gb - 0.05)] if gb > 0.05 else None
                    if before_a is not None and before_a == before_b:
                        continue  # paths diverge here
                    if before_a is None and before_b is None:
                        continue
                    conflicts.append((ga, gb))
        conflicts.sort()
        follow = None
        shared = [l for l in ra.lane_ids if l in rb.lane_ids]
        if shared:
            first = shared[0]
            ia, ib = ra.lane_ids.index(first), rb.lane_ids.index(first)
            n = 0
            while (ia + n < len(ra.lane_ids) and ib + n < len(rb.lane_ids)
                   and ra.lane_ids[ia + n] == rb.lane_ids[ib + n]):
                n += 1
            off = float(ra.lane_starts[ia] - rb.lane_starts[ib])
            b_lo = float(rb.lane_starts[ib])
            last = ib + n - 1
            b_hi = float(rb.lane_starts[last] + self.graph[rb.lane_ids[last]].length)
            if ib + n == len(rb.lane_ids) and ia + n == len(ra.lane_ids):
                b_hi = math.inf
            follow = (off, b_lo, b_hi)
        rel = (conflicts, follow)
        self._route_rel[key] = rel
        return rel

    # -- entities --------------------------------------------------------

    def _entities(self, obs: ObservationHistory, command: RouteCommand | None):
        ents = []
        for idx, tr in enumerate(obs.entities):
            st = tr.current
            ent = _Entity(tr.id, idx, np.array(st[:2]), float(max(st[3], 0.0)),
                          _observed_accel(tr.states[:, 3], obs.dt, self.cfg.evidence_window))
            if tr.role == "ego" and command is not None:
                cmds = [command]
            else:
                cmds = candidate_routes(self.graph, st, max_len=self.cfg.route_max_len)
            for c in cmds:
                path = self.graph.route_path(c.lane_ids)
                s0, e0, _ = path.polyline.project(st[:2])
                ent.routes.append(_Route(c, path, s0, e0))
            ents.append(ent)
        return ents

    def _pair_conflict(self, ei, ri: _Route, ej, rj: _Route):
        """First conflict ahead of both entities, as (s_i, s_j), or None."""
        conflicts, _ = self._relation(ri.path, rj.path)
        for si, sj in conflicts:
            if ri.s0 > si + self.cfg.clear_dist or rj.s0 > sj + self.cfg.clear_dist:
                continue
            return si, sj
        return None

    # -- intentions ------------------------------------------------------

    def enumerate_intentions(self, obs: ObservationHistory, command: RouteCommand | None = None,
                             _ents=None) -> list[IntentionHypothesis]:
        cfg = self.cfg
        ents = _ents if _ents is not None else self._entities(obs, command)
        ego, agents = ents[0], ents[1:]
        per_agent = [[(ri, m) for ri in range(len(a.routes)) for m in cfg.modes] for a in agents]
        hyps = []
        for ego_ri in range(len(ego.routes)):
            for combo in itertools.product(*per_agent):
                if not self._consistent(agents, combo):
                    continue
                n_assert = sum(1 for _, m in combo if m == "assert")
                prior = cfg.assert_penalty ** n_assert
                for a, (_, m) in zip(agents, combo):
                    prior *= _mode_likelihood(m, a.a0, cfg.accel_evidence, cfg.evidence_deadband)
                hyps.append((ego_ri, combo, prior))
        # stable sort keeps enumeration order among equal priors
        hyps.sort(key=lambda h: -h[2])
        hyps = hyps[: cfg.K]
        out = []
        for ego_ri, combo, w in hyps:
            out.append(IntentionHypothesis(
                ego_route=ego.routes[ego_ri].command,
                agents=tuple((a.id, a.routes[ri].command, m) for a, (ri, m) in zip(agents, combo)),
                prior=w,
            ))
        return out

    def _consistent(self, agents, combo) -> bool:
        for i in range(len(agents)):
            if combo[i][1] != "assert":
                continue
            for j in range(i + 1, len(agents)):
                if combo[j][1] != "assert":
                    continue
                if self._pair_conflict(agents[i], agents[i].routes[combo[i][0]],
                                       agents[j], agents[j].routes[combo[j][0]]) is not None:
                    return False
        return True

    # -- rollout ---------------------------------------------------------

    def __call__(self, obs: ObservationHistory, command: RouteCommand | None = None,
                 horizon: int | None = None) -> ScenePrediction:
        self.calls += 1
        cfg = self.cfg
        T = cfg.horizon if horizon is None else int(horizon)
        if T < 1:
            raise ValueError("horizon must be >= 1")
        ents = self._entities(obs, command)
        hyps = self.enumerate_intentions(obs, command, _ents=ents)
        plan = _pad(hyps, cfg.K, cfg.style_scales)
        total = sum(w for _, _, w in plan)
        ids = tuple(e.id for e in ents)
        start = np.stack([e.x0 for e in ents])
        scenarios = []
        for hyp, style, w in plan:
            means, covs = self._rollout(ents, hyp, style, T)
            label = hyp.label()
            label["style"] = style
            scenarios.append(PredictedScenario(
                weight=w / total, means=means, covs=covs, entity_ids=ids,
                start_means=start.copy(), start_covs=np.zeros((len(ents), 2, 2)), label=label))
        return ScenePrediction(scenarios, cfg.dt)

    def _committed(self, ent, route: _Route, s_conflict: float) -> bool:
        """Too close and too fast to stop before the conflict point at a comfortable rate."""
        d = s_conflict - self.cfg.stop_margin - route.s0
        return ent.v0 > 0.5 and d < ent.v0 * ent.v0 / (2.0 * self.cfg.commit_decel)

    def _rollout(self, ents, hyp: IntentionHypothesis, style: float, T: int):
        cfg = self.cfg
        dt = cfg.dt
        E = len(ents)
        routes = [ents[0].routes[[r.command for r in ents[0].routes].index(hyp.ego_route)]]
        modes = ["ego"]
        for ent, (_, cmd, mode) in zip(ents[1:], hyp.agents):
            routes.append(ent.routes[[r.command for r in ent.routes].index(cmd)])
            modes.append(mode)

        # pairwise relations for this hypothesis
        eta = lambda ent, r, sc: (sc - r.s0) / max(ent.v0, 0.5)
        conflicts = [[] for _ in range(E)]  # (other, s_self, s_other, has_priority)
        ambig = [[] for _ in range(E)]  # (s_conflict_self, ambiguity)
        leaders = [[] for _ in range(E)]  # (other, offset, lo, hi)
        for i in range(E):
            for j in range(i + 1, E):
                c = self._pair_conflict(ents[i], routes[i], ents[j], routes[j])
                if c is not None:
                    si, sj = c
                    ti, tj = eta(ents[i], routes[i], si), eta(ents[j], routes[j], sj)
                    ci = self._committed(ents[i], routes[i], si)
                    cj = self._committed(ents[j], routes[j], sj)
                    if ci != cj:
                        i_first = ci
                    else:
                        i_first = _priority(modes[i], modes[j], ti, tj)
                    conflicts[i].append((j, si, sj, i_first))
                    conflicts[j].append((i, sj, si, not i_first))
                    a = math.exp(-((ti - tj) / cfg.ambiguity_tau) ** 2)
                    ambig[i].append((si, a))
                    ambig[j].append((sj, a))
                for a_, b_ in ((i, j), (j, i)):
                    _, follow = self._relation(routes[a_].path, routes[b_].path)
                    if follow is not None:
                        leaders[a_].append((b_,) + follow)

        s = np.array([r.s0 for r in routes])
        v = np.array([e.v0 for e in ents])
        v_style = np.array([e.v0 * (1.0 if k == 0 else style) for k, e in enumerate(ents)])
        s_hist = np.empty((T, E))
        gap0 = cfg.idm_min_gap + 2 * cfg.entity_radius
        sqrt_ab = 2.0 * math.sqrt(cfg.idm_accel * cfg.idm_decel)
        for t in range(T):
            acc = np.empty(E)
            for i in range(E):
                vi = v[i]
                limit = routes[i].path.speed_limit_at(s[i])
                if modes[i] == "ego":
                    a = min(max(2.0 * (limit - vi), -2.0), cfg.ego_accel)
                elif modes[i] == "assert":
                    a = cfg.assert_accel * style if vi < limit else 0.0
                else:
                    a = min(max(v_style[i] - vi, -cfg.free_accel), cfg.free_accel)
                for j, s_self, s_other, first in conflicts[i]:
                    if first or s[j] > s_other + cfg.clear_dist:
                        continue
                    d = s_self - cfg.stop_margin - s[i]
                    if d < -0.5:
                        continue  # committed past the stop point
                    d = max(d, 0.05)
                    if d <= vi * vi / (2.0 * cfg.yield_decel) + vi * dt:
                        a = min(a, -vi * vi / (2.0 * d))
                    elif vi < 0.5 and d < 1.0:
                        a = min(a, 0.0)
                for j, off, lo, hi in leaders[i]:
                    if s[j] < lo - 1e-6 or s[j] > hi:
                        continue
                    gap = s[j] + off - s[i]
                    if gap <= 0.0:
                        continue
                    dv = vi - v[j]
                    s_star = gap0 + vi * cfg.idm_headway + vi * dv / sqrt_ab
                    a = min(a, cfg.idm_accel * (1.0 - (max(s_star, 0.0) / max(gap, 0.1)) ** 2))
                acc[i] = max(a, -8.0)
            v = np.maximum(v + acc * dt, 0.0)
            s = s + v * dt
            s_hist[t] = s

        tt = np.arange(1, T + 1) * dt
        means = np.empty((T, E, 2))
        sig = np.empty((T, E))
        for i in range(E):
            lat = routes[i].e0 * np.exp(-tt / cfg.lateral_tau)
            means[:, i] = routes[i].path.polyline.point_at(s_hist[:, i], lat)
            bump = np.zeros(T)
            for sc, a in ambig[i]:
                bump = np.maximum(bump, a * np.exp(-((sc - s_hist[:, i]) / cfg.bump_length) ** 2))
            sig[:, i] = cfg.sigma_a * tt + cfg.sigma_int * bump
        start = np.stack([e.x0 for e in ents])
        vel = np.diff(np.concatenate([start[None], means]), axis=0) / dt
        act_cov = sig[..., None, None] ** 2 * np.eye(2)
        _, covs = propagate_sequence(np.zeros((E, 2)), np.zeros((E, 2, 2)), vel, act_cov, dt)
        return means, covs


def _observed_accel(speeds: np.ndarray, dt: float, window: int) -> float:
    n = min(window, len(speeds) - 1)
    if n < 1:
        return 0.0
    return float(speeds[-1] - speeds[-1 - n]) / (n * dt)


def _mode_likelihood(mode: str, accel: float, gain: float, deadband: float) -> float:
    """Evidence from the observed acceleration: speeding up favours assert, slowing favours yield."""
    if mode == "assert":
        return math.exp(gain * max(accel - deadband, 0.0))
    if mode == "yield":
        return math.exp(gain * max(-accel - deadband, 0.0))
    return 1.0


def _priority(mode_i: str, mode_j: str, eta_i: float, eta_j: float) -> bool:
    """True when entity i passes the shared conflict point before j."""
    rank = {"assert": 2, "ego": 1, "maintain": 1, "yield": 0}
    if rank[mode_i] != rank[mode_j]:
        return rank[mode_i] > rank[mode_j]
    return eta_i <= eta_j


def _pad(hyps, K: int, scales):
    """Repeat hypotheses with driving-style variants until K rollouts exist."""
    n = len(hyps)
    if n >= K:
        return [(h, 1.0, h.prior) for h in hyps[:K]]
    copies = [0] * n
    for k in range(K):
        copies[k % n] += 1
    out = []
    for k in range(K):
        h = hyps[k % n]
        out.append((h, scales[(k // n) % len(scales)], h.prior / copies[k % n]))
    return out


def enumerate_intentions(obs: ObservationHistory, lane_graph: LaneGraph, cfg: PredictorConfig = PredictorConfig(),
                         command: RouteCommand | None = None) -> list[IntentionHypothesis]:
    return IntentionPredictor(lane_graph, cfg).enumerate_intentions(obs, command)


def predict_scene(obs: ObservationHistory, lane_graph: LaneGraph, command: RouteCommand | None = None,
                  cfg: PredictorConfig = PredictorConfig()) -> ScenePrediction:
    if command is not None:
        command.validate(lane_graph)
    return IntentionPredictor(lane_graph, cfg)(obs, command)


class ConstantVelocityPredictor:
    """Single-mode model-based predictor: every entity keeps its current velocity."""

    def __init__(self, cfg: PredictorConfig = PredictorConfig()):
        self.cfg = cfg
        self.calls = 0

    @property
    def dt(self) -> float:
        return self.cfg.dt

    def __call__(self, obs: ObservationHistory, command: RouteCommand | None = None,
                 horizon: int | None = None) -> ScenePrediction:
        self.calls += 1
        cfg = self.cfg
        T = cfg.horizon if horizon is None else int(horizon)
        ents = obs.entities
        E = len(ents)
        start = np.stack([t.current[:2] for t in ents])
        vel = np.stack([t.current[3] * np.array([math.cos(t.current[2]), math.sin(t.current[2])]) for t in ents])
        tt = np.arange(1, T + 1) * cfg.dt
        vel_seq = np.broadcast_to(vel, (T, E, 2))
        sig = np.broadcast_to((cfg.sigma_a * tt)[:, None], (T, E))
        act_cov = sig[..., None, None] ** 2 * np.eye(2)
        means, covs = propagate_sequence(start, np.zeros((E, 2, 2)), vel_seq, act_cov, cfg.dt)
        sc = PredictedScenario(1.0, means, covs, tuple(t.id for t in ents), start.copy(),
                               np.zeros((E, 2, 2)), {"kind": "constant-velocity"})
        return ScenePrediction([sc], cfg.dt)
