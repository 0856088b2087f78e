"""Reward-based evaluation and selection of candidate trajectory trees."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SAFETY_CAP = 6.0


@dataclass(frozen=True)
class RewardWeights:
    likelihood_exponent: float = 1.0
    safety: float = 1.0
    efficiency: float = 1.0
    comfort: float = 1.0
    target_speed: float = 10.0
    a_max: float = 3.0
    ay_max: float = 3.0

    def __post_init__(self):
        if min(self.safety, self.efficiency, self.comfort) < 0:
            raise ValueError("reward weights must be >= 0")
        if self.target_speed <= 0 or self.a_max <= 0 or self.ay_max <= 0:
            raise ValueError("target_speed, a_max and ay_max must be positive")


@dataclass(frozen=True)
class StepContext:
    probability: float
    min_mahalanobis: float = math.inf
    target_speed: float | None = None


def safety_score(min_distance: float) -> float:
    return min(max(min_distance, 0.0), SAFETY_CAP)


def efficiency_score(v: float, target: float) -> float:
    return min(max(1.0 - abs(v - target) / target, 0.0), 1.0)


def comfort_score(a: float, kappa: float, v: float, w: RewardWeights) -> float:
    return min(max(1.0 - (a / w.a_max) ** 2 - (kappa * v * v / w.ay_max) ** 2, 0.0), 1.0)


def reward_terms(x, u, ctx: StepContext, w: RewardWeights):
    """(R, likelihood weight, F_s, F_e, F_c) for one step."""
    target = w.target_speed if ctx.target_speed is None else min(w.target_speed, ctx.target_speed)
    lam = ctx.probability ** w.likelihood_exponent
    fs = safety_score(ctx.min_mahalanobis)
    fe = efficiency_score(float(x[3]), target)
    fc = comfort_score(float(u[0]), float(u[1]), float(x[3]), w)
    return lam * (w.safety * fs + w.efficiency * fe + w.comfort * fc), lam, fs, fe, fc


def reward(x, u, ctx: StepContext, w: RewardWeights = RewardWeights()) -> float:
    return reward_terms(x, u, ctx, w)[0]


def step_contexts(traj) -> list:
    """Per-step reward context from a solved trajectory tree.

    Probabilities are scenario-tree masses; distances use the footprint-inflated covariances.
    """
    ctx = traj.context
    pos = traj.states[1:, :2]
    if ctx.agent_mean.shape[1]:
        r = pos[:, None, :] - ctx.agent_mean
        d = np.sqrt(np.clip(np.einsum("nai,naij,naj->na", r, ctx.agent_prec, r), 0.0, None)).min(axis=1)
    else:
        d = np.full(len(pos), math.inf)
    probs = ctx.weight * traj.policy_mass
    return [StepContext(float(p), float(di), float(v)) for p, di, v in zip(probs, d, ctx.target_speed)]


@dataclass
class Evaluation:
    q: float
    safety: float
    efficiency: float
    comfort: float


def evaluate(traj, w: RewardWeights = RewardWeights(), contexts=None) -> Evaluation:
    """Q = sum of step rewards over every segment of the tree; term totals are likelihood-weighted."""
    contexts = step_contexts(traj) if contexts is None else contexts
    q = fs_t = fe_t = fc_t = 0.0
    for i, c in enumerate(contexts):
        r, lam, fs, fe, fc = reward_terms(traj.states[i + 1], traj.controls[i], c, w)
        q += r
        fs_t += lam * w.safety * fs
        fe_t += lam * w.efficiency * fe
        fc_t += lam * w.comfort * fc
    return Evaluation(q, fs_t, fe_t, fc_t)


@dataclass
class Candidate:
    policy_id: int
    q: float
    mass: float
    feasible: bool
    violation: float = 0.0


def select(candidates) -> tuple[int, bool]:
    """Index of the best candidate and whether selection fell back to degraded mode."""
    if not candidates:
        raise ValueError("select needs at least one candidate")
    feasible = [i for i, c in enumerate(candidates) if c.feasible]
    if feasible:
        best = min(feasible, key=lambda i: (-candidates[i].q, -candidates[i].mass, i))
        return best, False
    best = min(range(len(candidates)), key=lambda i: (candidates[i].violation, -candidates[i].q, i))
    return best, True


def report(candidates, evaluations, selected: int, degraded: bool) -> dict:
    rows = []
    for i, (c, ev) in enumerate(zip(candidates, evaluations)):
        rows.append({
            "policy_id": c.policy_id, "q": ev.q, "safety": ev.safety, "efficiency": ev.efficiency,
            "comfort": ev.comfort, "mass": c.mass, "feasible": c.feasible, "violation": c.violation,
            "selected": i == selected,
        })
    out = {"candidates": rows, "selected": selected, "degraded": degraded}
    if degraded:
        out["warning"] = "no candidate passed the chance check; picked the lowest estimated violation"
    return out
