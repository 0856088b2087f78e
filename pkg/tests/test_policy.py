import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mindkit.policy import (SAFETY_CAP, Candidate, Evaluation, RewardWeights, StepContext, comfort_score,
                            efficiency_score, evaluate, report, reward, safety_score, select, step_contexts)

from test_chance import mirrored_plan  # noqa: F401  (module fixture)


@given(d=st.floats(-10, 100), v=st.floats(0, 30), a=st.floats(-8, 4), k=st.floats(-0.5, 0.5))
def test_scores_stay_in_range(d, v, a, k):
    w = RewardWeights()
    assert 0.0 <= safety_score(d) <= SAFETY_CAP
    assert 0.0 <= efficiency_score(v, 10.0) <= 1.0
    assert 0.0 <= comfort_score(a, k, v, w) <= 1.0


def test_score_shapes():
    w = RewardWeights()
    assert efficiency_score(10.0, 10.0) == 1.0
    assert efficiency_score(5.0, 10.0) == pytest.approx(0.5)
    assert efficiency_score(25.0, 10.0) == 0.0
    assert comfort_score(0.0, 0.0, 10.0, w) == 1.0
    assert comfort_score(1.5, 0.0, 0.0, w) == pytest.approx(0.75)
    assert safety_score(math.inf) == SAFETY_CAP
    assert safety_score(2.5) == 2.5


def test_reward_is_likelihood_weighted():
    w = RewardWeights(likelihood_exponent=2.0)
    x, u = np.array([0, 0, 0, 10.0, 0, 0]), np.zeros(2)
    assert reward(x, u, StepContext(0.5, 3.0), w) == pytest.approx(0.25 * (3.0 + 1.0 + 1.0))
    assert reward(x, u, StepContext(0.5, 3.0, target_speed=5.0), w) == pytest.approx(0.25 * 4.0)


def test_q_is_the_hand_summed_tree_reward(mirrored_plan):
    _, traj = mirrored_plan
    w = RewardWeights()
    ctxs = step_contexts(traj)
    total = 0.0
    for i, c in enumerate(ctxs):
        x, u = traj.states[i + 1], traj.controls[i]
        target = min(w.target_speed, c.target_speed)
        fs = min(max(c.min_mahalanobis, 0.0), SAFETY_CAP)
        fe = max(0.0, 1.0 - abs(x[3] - target) / target)
        fc = max(0.0, 1.0 - (u[0] / w.a_max) ** 2 - (u[1] * x[3] ** 2 / w.ay_max) ** 2)
        total += c.probability * (fs + fe + fc)
    ev = evaluate(traj, w)
    assert ev.q == pytest.approx(total, abs=1e-9)
    assert ev.safety + ev.efficiency + ev.comfort == pytest.approx(ev.q, abs=1e-9)


def test_step_probabilities_are_tree_masses(mirrored_plan):
    tree, traj = mirrored_plan
    probs = np.array([c.probability for c in step_contexts(traj)])
    a, b = traj.layout.segments[0][2:]
    assert np.all(probs[a:b] == 1.0)
    assert np.allclose(probs[b:], 0.5)


def test_feasible_candidate_beats_higher_scoring_violator():
    cands = [Candidate(1, 50.0, 0.6, False, 0.2), Candidate(2, 30.0, 0.4, True)]
    assert select(cands) == (1, False)


def test_ties_break_on_mass_then_order():
    cands = [Candidate(1, 10.0, 0.3, True), Candidate(2, 10.0, 0.5, True), Candidate(3, 10.0, 0.5, True)]
    assert select(cands) == (1, False)


def test_degraded_mode_picks_least_violation():
    cands = [Candidate(1, 50.0, 0.5, False, 0.3), Candidate(2, 10.0, 0.5, False, 0.1)]
    idx, degraded = select(cands)
    assert (idx, degraded) == (1, True)
    rep = report(cands, [Evaluation(c.q, c.q, 0.0, 0.0) for c in cands], idx, degraded)
    assert rep["degraded"] and "warning" in rep
    assert [r["selected"] for r in rep["candidates"]] == [False, True]


def test_select_needs_candidates():
    with pytest.raises(ValueError):
        select([])


def test_weights_validation():
    with pytest.raises(ValueError):
        RewardWeights(safety=-1)
    with pytest.raises(ValueError):
        RewardWeights(target_speed=0)
