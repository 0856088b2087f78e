"""Scenario-tree construction by adaptive interaction-modality exploration (AIME),
plus the single-shot (SS) and brute-force fixed-interval (BF-SRCH) reference strategies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .gmm import PredictedScenario, ScenePrediction
from .world import LaneGraph, ObservationHistory, RouteCommand

END = None
STRATEGIES = ("ss", "aime", "bf")


class BudgetExceeded(RuntimeError):
    """Brute-force search would exceed its node budget."""


@dataclass(frozen=True)
class AimeConfig:
    beta: float = 0.15  # m/step
    delta: float = math.pi
    d_max: int = 3
    alpha_min: float = 0.05
    route_dev_max: float = 3.0
    t_min: int = 5
    bf_levels: int = 5
    bf_node_budget: int = 100_000

    def __post_init__(self):
        if self.beta <= 0 or self.delta <= 0:
            raise ValueError("beta and delta must be positive")
        if self.d_max < 0 or self.t_min < 1:
            raise ValueError("d_max must be >= 0 and t_min >= 1")
        if not 0.0 <= self.alpha_min < 1.0:
            raise ValueError("alpha_min must be in [0, 1)")


# ---------------------------------------------------------------------------
# branching decision

def uncertainty_rates(scenario: PredictedScenario) -> np.ndarray:
    """U(t) for t = 1..len: largest per-step growth of sqrt(trace cov) over entities."""
    covs = scenario.full_covs()
    spread = np.sqrt(np.clip(covs[..., 0, 0] + covs[..., 1, 1], 0.0, None))
    return np.max(np.diff(spread, axis=0), axis=1)


def uncertainty_rate(scenario: PredictedScenario, t: int) -> float:
    if not 1 <= t <= len(scenario):
        raise ValueError(f"step {t} outside 1..{len(scenario)}")
    return float(uncertainty_rates(scenario)[t - 1])


def branch_time_from_rates(rates, beta: float, t_min: int, T: int):
    """Last step before the rate first reaches beta, clamped to t_min; END when >= T."""
    rates = np.asarray(rates, dtype=float)
    over = np.nonzero(rates >= beta)[0]
    t = int(over[0]) if len(over) else len(rates)
    t = max(t, t_min)
    return END if t >= T else t


def branch_time(scenario: PredictedScenario, beta: float, t_min: int, T: int):
    return branch_time_from_rates(uncertainty_rates(scenario), beta, t_min, T)


# ---------------------------------------------------------------------------
# homotopy and interaction modality

def _bearings(ego: np.ndarray, other: np.ndarray) -> np.ndarray:
    rel = other - ego
    ang = np.arctan2(rel[..., 1], rel[..., 0])
    coincident = np.hypot(rel[..., 0], rel[..., 1]) < 1e-12
    if np.any(coincident):
        # an agent nudged 1e-6 m along the previous bearing keeps that bearing
        ang = ang.copy()
        for t in range(ang.shape[0]):
            prev = ang[t - 1] if t > 0 else 0.0
            ang[t] = np.where(coincident[t], prev, ang[t])
    return ang


def winding(ego_means, agent_means) -> np.ndarray:
    """Accumulated wrapped change of the ego->agent bearing along axis 0."""
    d = _bearings(np.asarray(ego_means, dtype=float), np.asarray(agent_means, dtype=float))
    step = np.diff(d, axis=0)
    step = np.mod(step + np.pi, 2.0 * np.pi) - np.pi
    step = np.where(step == -np.pi, np.pi, step)
    return step.sum(axis=0)


def homotopy(ego_means, agent_means, delta: float) -> int:
    ego_means = np.asarray(ego_means, dtype=float)
    if len(ego_means) < 2 or len(ego_means) != len(agent_means):
        raise ValueError("homotopy needs two equal-length sequences of at least 2 positions")
    return int(math.floor(float(winding(ego_means, agent_means)) / delta + 0.5))


def modality_of_means(means: np.ndarray, delta: float) -> tuple:
    """Modality of a (T, E, 2) mean path with the ego in column 0."""
    if means.shape[1] < 2:
        return ()
    w = winding(means[:, :1, :], means[:, 1:, :])
    return tuple(int(h) for h in np.floor(w / delta + 0.5))


def modality(scenario: PredictedScenario, delta: float, prefix: np.ndarray | None = None) -> tuple:
    """Interaction modality of a scenario's mean trajectories (agents in id order).

    ``prefix`` holds earlier path means ending at the scenario's start state.
    """
    means = scenario.full_means()
    if prefix is not None:
        means = np.concatenate([prefix[:-1], means], axis=0)
    return modality_of_means(means, delta)


# ---------------------------------------------------------------------------
# pruning and merging

def ego_route_deviation(scenario: PredictedScenario, lane_graph: LaneGraph, command: RouteCommand) -> float:
    pl = lane_graph.route_path(command.lane_ids).polyline
    return max(abs(pl.project(p)[1]) for p in scenario.means[:, 0, :])


def prune_and_merge(pred: ScenePrediction, command: RouteCommand | None, cfg: AimeConfig,
                    lane_graph: LaneGraph | None = None, prefix: np.ndarray | None = None) -> ScenePrediction:
    scen = list(pred.scenarios)
    keep = [s for s in scen if s.weight >= cfg.alpha_min]
    if command is not None and lane_graph is not None:
        keep = [s for s in keep if ego_route_deviation(s, lane_graph, command) <= cfg.route_dev_max]
    if not keep:
        best = max(scen, key=lambda s: s.weight)
        return ScenePrediction([best.with_weight(1.0)], pred.dt)
    groups: dict[tuple, list] = {}
    for s in keep:
        groups.setdefault(modality(s, cfg.delta, prefix), []).append(s)
    merged = []
    for mod, members in groups.items():
        rep = max(members, key=lambda s: s.weight)  # first wins on ties
        merged.append((mod, rep, sum(s.weight for s in members)))
    total = sum(w for _, _, w in merged)
    merged.sort(key=lambda m: (-m[2], m[0]))
    out = []
    for mod, rep, w in merged:
        s = rep.with_weight(w / total)
        s.label = dict(s.label, modality=list(mod))
        out.append(s)
    _fix_sum(out)
    return ScenePrediction(out, pred.dt)


def _fix_sum(scenarios):
    err = 1.0 - sum(s.weight for s in scenarios)
    if scenarios and err != 0.0:
        scenarios[0].weight += err


# ---------------------------------------------------------------------------
# pseudo observations

def update_pseudo_observation(obs: ObservationHistory, scenario: PredictedScenario, upto: int) -> ObservationHistory:
    """Advance the history by ``upto`` steps along the scenario means, keeping window length H."""
    if upto < 0 or upto > len(scenario):
        raise ValueError(f"upto={upto} outside 0..{len(scenario)}")
    if upto == 0:
        return obs
    from .world import Track  # local to keep the import graph flat

    dt = obs.dt
    idx = {eid: i for i, eid in enumerate(scenario.entity_ids)}
    tracks = []
    for tr in obs.tracks:
        i = idx[tr.id]
        pts = np.concatenate([scenario.start_means[None, i], scenario.means[:upto, i]], axis=0)
        diff = np.diff(pts, axis=0)
        speed = np.hypot(diff[:, 0], diff[:, 1]) / dt
        heading = np.empty(upto)
        prev = float(tr.states[-1, 2])
        for k in range(upto):
            if speed[k] > 1e-6:
                prev = math.atan2(diff[k, 1], diff[k, 0])
            heading[k] = prev
        new = np.column_stack([pts[1:], heading, speed])
        states = np.concatenate([tr.states, new], axis=0)[-obs.H:]
        tracks.append(Track(tr.id, tr.role, states))
    return ObservationHistory(dt, tuple(tracks))


# ---------------------------------------------------------------------------
# scenario tree

@dataclass
class TreeNode:
    id: int
    parent: int | None
    depth: int
    entry_step: int
    observation: ObservationHistory | None
    segment: PredictedScenario | None = None
    t_b: int | None = END
    mass: float = 1.0
    children: list = field(default_factory=list)
    modality: tuple = ()
    path_means: np.ndarray | None = None  # root start .. end of this segment, (n+1, E, 2)

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def end_step(self) -> int:
        return self.entry_step + (len(self.segment) if self.segment is not None else 0)


@dataclass
class ScenarioTree:
    nodes: list
    horizon: int
    strategy: str = "aime"
    predictor_calls: int = 0

    @property
    def root(self) -> TreeNode:
        return self.nodes[0]

    @property
    def leaves(self) -> list:
        return [n for n in self.nodes if n.is_leaf and n.parent is not None]

    @property
    def depth(self) -> int:
        return max(n.depth for n in self.nodes)

    def path(self, node_id: int) -> list:
        """Nodes from the first root child down to ``node_id``."""
        out = []
        n = self.nodes[node_id]
        while n.parent is not None:
            out.append(n)
            n = self.nodes[n.parent]
        return out[::-1]

    def descendants(self, node_id: int) -> list:
        out, stack = [], [node_id]
        while stack:
            n = self.nodes[stack.pop()]
            out.append(n.id)
            stack.extend(reversed(n.children))
        return sorted(out)

    def leaf_modalities(self) -> set:
        return {n.modality for n in self.leaves}


def build_tree(obs: ObservationHistory, lane_graph: LaneGraph, command: RouteCommand | None, predictor,
               cfg: AimeConfig = AimeConfig(), T: int = 60, strategy: str = "aime") -> ScenarioTree:
    """Expand a scenario tree breadth-first.

    ``aime``: adaptive branch times, pruning and merging, depth cap ``cfg.d_max``.
    ``ss``: one prediction, every scenario an end node.
    ``bf``: no pruning or merging, fixed branch interval T / bf_levels.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if strategy == "ss":
        d_max, interval, merge = 0, None, False
    elif strategy == "bf":
        d_max, interval, merge = cfg.bf_levels - 1, max(T // cfg.bf_levels, 1), False
    else:
        d_max, interval, merge = cfg.d_max, None, True

    calls0 = getattr(predictor, "calls", 0)
    root = TreeNode(0, None, 0, 0, obs, mass=1.0)
    root.path_means = np.stack([t.current[:2] for t in obs.entities])[None]
    nodes = [root]
    frontier = [root]
    while frontier:
        next_frontier = []
        for node in frontier:
            if node.depth > d_max:
                continue
            remaining = T - node.end_step
            pred = predictor(node.observation, command, horizon=remaining)
            if node.segment is not None:
                pred = _continue_covariance(pred, node.segment.covs[-1])
            if merge:
                pred = prune_and_merge(pred, command, cfg, lane_graph, prefix=node.path_means)
            ordered = sorted(pred.scenarios, key=lambda s: (-s.weight, modality(s, cfg.delta, node.path_means)))
            for sc in ordered:
                if strategy == "bf":
                    t_b = interval if interval < remaining else END
                else:
                    t_b = branch_time(sc, cfg.beta, cfg.t_min, remaining)
                if node.depth + 1 > d_max:
                    t_b = END
                seg = sc.truncated(remaining if t_b is END else t_b)
                child = TreeNode(
                    id=len(nodes), parent=node.id, depth=node.depth + 1, entry_step=node.end_step,
                    observation=None, segment=seg, t_b=t_b, mass=node.mass * sc.weight,
                )
                child.path_means = np.concatenate([node.path_means, seg.means], axis=0)
                child.modality = modality_of_means(child.path_means, cfg.delta)
                if t_b is not END:
                    child.observation = update_pseudo_observation(node.observation, sc, t_b)
                    next_frontier.append(child)
                nodes.append(child)
                node.children.append(child.id)
                if strategy == "bf" and len(nodes) > cfg.bf_node_budget:
                    raise BudgetExceeded(f"brute-force search exceeded {cfg.bf_node_budget} nodes")
        frontier = next_frontier
    for n in nodes:
        # branch nodes keep their pseudo observation only while expanding
        if n.parent is not None and n.children:
            n.observation = None
    return ScenarioTree(nodes, T, strategy, getattr(predictor, "calls", 0) - calls0)


def _continue_covariance(pred: ScenePrediction, cov_end: np.ndarray) -> ScenePrediction:
    """Shift a prediction made from a pseudo observation onto the parent's uncertainty."""
    out = []
    for s in pred.scenarios:
        out.append(PredictedScenario(s.weight, s.means, s.covs + cov_end[None], s.entity_ids,
                                     s.start_means, s.start_covs + cov_end, dict(s.label)))
    return ScenePrediction(out, pred.dt)


def enumerate_policies(tree: ScenarioTree) -> list:
    """One policy per root child: that child's node ids and all descendants."""
    return [tree.descendants(c) for c in tree.root.children]


# ---------------------------------------------------------------------------
# effectiveness benchmark

@dataclass
class StrategyRow:
    strategy: str
    coverage: float
    scenarios: int
    calls: int
    cost_ratio: float
    modalities: set = field(default_factory=set, repr=False)


def bench_strategies(obs: ObservationHistory, lane_graph: LaneGraph, command: RouteCommand | None,
                     predictor_factory, cfg: AimeConfig = AimeConfig(), T: int = 60) -> dict:
    """Coverage / scenario count / predictor-call ratio for SS, AIME and BF-SRCH.

    ``predictor_factory`` returns a fresh predictor for each strategy so call counts are separate.
    """
    trees = {}
    for strat in ("ss", "aime", "bf"):
        trees[strat] = build_tree(obs, lane_graph, command, predictor_factory(), cfg, T, strategy=strat)
    oracle = trees["bf"].leaf_modalities()
    ss_calls = trees["ss"].predictor_calls
    rows = {}
    for strat, tree in trees.items():
        mods = tree.leaf_modalities()
        cov = 100.0 * len(mods & oracle) / len(oracle)
        rows[strat] = StrategyRow(strat, cov, len(tree.leaves), tree.predictor_calls,
                                  tree.predictor_calls / ss_calls, mods)
    return rows


# ---------------------------------------------------------------------------
# serialisation

def tree_to_dict(tree: ScenarioTree, include_gaussians: bool = True) -> dict:
    nodes = []
    for n in tree.nodes:
        d = {
            "id": n.id,
            "parent": n.parent,
            "depth": n.depth,
            "entry_step": n.entry_step,
            "t_b": "END" if n.t_b is END else n.t_b,
            "weight": n.mass,
            "modality": list(n.modality),
        }
        if include_gaussians and n.segment is not None:
            seg = n.segment
            d["entities"] = {
                eid: {"mean": seg.means[:, i].tolist(),
                      "cov": [[c[0, 0], c[0, 1], c[1, 1]] for c in seg.covs[:, i]]}
                for i, eid in enumerate(seg.entity_ids)
            }
        nodes.append(d)
    return {"strategy": tree.strategy, "horizon": tree.horizon, "predictor_calls": tree.predictor_calls,
            "leaf_count": len(tree.leaves), "depth": tree.depth, "nodes": nodes}
