"""One planning cycle: scenario tree, policies, per-policy tree iLQR, chance check, selection."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .aime import AimeConfig, ScenarioTree, build_tree, enumerate_policies
from .contingency.chance import check_chance
from .contingency.costs import PlannerConfig
from .contingency.ilqr import TrajectoryTree, ilqr_solve_tree
from .policy import Candidate, RewardWeights, evaluate, report, select
from .predictor import ConstantVelocityPredictor, IntentionPredictor, PredictorConfig
from .world import LaneGraph, ObservationHistory, RouteCommand


@dataclass(frozen=True)
class Variant:
    name: str
    strategy: str
    predictor: str  # "intention" or "constant-velocity"


VARIANTS = {
    "MIND": Variant("MIND", "aime", "intention"),
    "NN+CP": Variant("NN+CP", "ss", "intention"),
    "MB+CP": Variant("MB+CP", "ss", "constant-velocity"),
}


def make_predictor(kind: str, lane_graph: LaneGraph, cfg: PredictorConfig):
    if kind == "intention":
        return IntentionPredictor(lane_graph, cfg)
    if kind == "constant-velocity":
        return ConstantVelocityPredictor(cfg)
    raise ValueError(f"unknown predictor {kind!r}")


@dataclass
class PlanResult:
    tree: ScenarioTree
    trajectories: list
    candidates: list
    evaluations: list
    selected: int
    degraded: bool
    chance: list = field(default_factory=list)

    @property
    def best(self) -> TrajectoryTree:
        return self.trajectories[self.selected]

    def report(self) -> dict:
        out = report(self.candidates, self.evaluations, self.selected, self.degraded)
        for row, traj, ch in zip(out["candidates"], self.trajectories, self.chance):
            row["cost"] = traj.cost
            row["converged"] = traj.converged
            row["chance_max_estimate"] = ch.max_estimate
        return out


def tree_digest(tree: ScenarioTree) -> str:
    """Short hash of the tree's shape, masses and modalities."""
    summary = [(n.parent, n.depth, n.entry_step, -1 if n.t_b is None else n.t_b, round(n.mass, 9),
                list(n.modality)) for n in tree.nodes]
    return hashlib.sha256(json.dumps(summary).encode()).hexdigest()[:16]


class Planner:
    def __init__(self, lane_graph: LaneGraph, command: RouteCommand, variant: Variant = VARIANTS["MIND"],
                 aime: AimeConfig = AimeConfig(), predictor: PredictorConfig = PredictorConfig(),
                 planner: PlannerConfig = PlannerConfig(), reward: RewardWeights = RewardWeights(),
                 horizon: int = 60, chance_samples: int = 2000):
        self.lane_graph = lane_graph
        self.command = command
        self.variant = variant
        self.aime = aime
        self.planner = planner
        self.reward = reward
        self.horizon = horizon
        self.chance_samples = chance_samples
        self.predictor = make_predictor(variant.predictor, lane_graph, predictor)
        self.route = lane_graph.route_path(command.lane_ids)

    def plan(self, obs: ObservationHistory, prev_control=(0.0, 0.0), seed: int = 0) -> PlanResult:
        tree = build_tree(obs, self.lane_graph, self.command, self.predictor, self.aime, self.horizon,
                          strategy=self.variant.strategy)
        ego = obs.ego.current
        x0 = np.array([ego[0], ego[1], ego[2], ego[3], prev_control[0], prev_control[1]], dtype=float)
        trajs, cands, evals, chances = [], [], [], []
        for idx, nodes in enumerate(enumerate_policies(tree)):
            traj = ilqr_solve_tree(tree, nodes, x0, self.route.polyline, self.route.speed_limit_at, self.planner)
            ch = check_chance(traj, tree, self.planner.p, self.chance_samples, seed + idx,
                              self.planner.radius_sum, screen=True)
            ev = evaluate(traj, self.reward)
            feasible = ch.passed and not traj.diverged
            trajs.append(traj)
            chances.append(ch)
            evals.append(ev)
            cands.append(Candidate(traj.policy_node, ev.q, traj.policy_mass, feasible, ch.max_estimate))
        selected, degraded = select(cands)
        return PlanResult(tree, trajs, cands, evals, selected, degraded, chances)
