import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mindkit.aime import (END, AimeConfig, branch_time, branch_time_from_rates, build_tree, enumerate_policies,
                          homotopy, modality, modality_of_means, prune_and_merge, tree_to_dict,
                          uncertainty_rate, uncertainty_rates, update_pseudo_observation)
from mindkit.gmm import PredictedScenario, ScenePrediction
from mindkit.predictor import IntentionPredictor

from oracles import homotopy_oracle, smooth_pair


def scenario_from_paths(paths, weight=1.0, covs=None, start_covs=None):
    """Build a scenario from (T+1, 2) per-entity paths; the first row is the start state."""
    means = np.stack(paths, axis=1)
    T, E = len(means) - 1, means.shape[1]
    if covs is None:
        covs = np.broadcast_to(np.eye(2) * 0.01, (T, E, 2, 2)).copy()
    if start_covs is None:
        start_covs = np.zeros((E, 2, 2))
    return PredictedScenario(weight, means[1:], covs, tuple(f"e{i}" for i in range(E)), means[0].copy(), start_covs)


# -- uncertainty rate and branch time --------------------------------------

def test_first_step_rate_measures_from_start_covariance():
    T = 5
    traces = 0.04 + 0.01 * np.arange(1, T + 1)
    covs = (traces / 2)[:, None, None, None] * np.eye(2)
    s = scenario_from_paths([np.zeros((T + 1, 2))], covs=covs, start_covs=np.eye(2)[None] * 0.02)
    assert uncertainty_rate(s, 1) == pytest.approx(math.sqrt(0.05) - math.sqrt(0.04), abs=1e-12)
    assert uncertainty_rate(s, 1) == pytest.approx(0.02361, abs=1e-5)
    with pytest.raises(ValueError):
        uncertainty_rate(s, 0)


def test_branch_time_scans_for_first_crossing():
    assert branch_time_from_rates([0.05, 0.10, 0.15, 0.25, 0.3], 0.2, 1, 60) == 3


def test_branch_time_respects_minimum_and_horizon():
    assert branch_time_from_rates([0.5, 0.5, 0.5], 0.2, 2, 60) == 2
    assert branch_time_from_rates([0.0] * 10, 0.2, 1, 10) is END
    assert branch_time_from_rates([0.0, 0.0, 0.0, 0.9], 0.2, 1, 3) is END


def test_rates_are_nonnegative_for_growing_covariance(scenarios):
    sc = scenarios["t_intersection"]
    pred = IntentionPredictor(sc.lane_graph)(sc.history, sc.ego_route)
    for s in pred.scenarios:
        assert np.all(uncertainty_rates(s) >= -1e-12)
        tb = branch_time(s, 0.15, 5, 60)
        assert tb is END or 5 <= tb < 60


# -- homotopy ----------------------------------------------------------------

def _bearing_path(total, n=50, radius=5.0):
    ang = np.linspace(0.0, total, n)
    return np.zeros((n, 2)), radius * np.column_stack([np.cos(ang), np.sin(ang)])


def test_homotopy_rounds_half_turns():
    assert homotopy(*_bearing_path(2.0), math.pi) == 1
    assert homotopy(*_bearing_path(-2.0), math.pi) == -1
    assert homotopy(*_bearing_path(0.5), math.pi) == 0


def test_homotopy_rejects_short_or_mismatched():
    with pytest.raises(ValueError):
        homotopy(np.zeros((1, 2)), np.zeros((1, 2)), math.pi)
    with pytest.raises(ValueError):
        homotopy(np.zeros((3, 2)), np.zeros((4, 2)), math.pi)


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1))
def test_homotopy_matches_oracle(seed):
    ego, agent = smooth_pair(np.random.default_rng(seed))
    assert homotopy(ego, agent, math.pi) == homotopy_oracle(ego, agent, math.pi)


@given(st.integers(0, 2**32 - 1), st.floats(-math.pi, math.pi), st.floats(-100, 100), st.floats(-100, 100))
def test_modality_invariant_under_rigid_motion(seed, angle, dx, dy):
    rng = np.random.default_rng(seed)
    means = np.stack([smooth_pair(rng)[0], *smooth_pair(rng)], axis=1)
    rot = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
    moved = means @ rot.T + np.array([dx, dy])
    w = [homotopy_oracle(means[:, 0], means[:, k], math.pi) for k in (1, 2)]
    assert modality_of_means(moved, math.pi) == modality_of_means(means, math.pi)
    assert list(modality_of_means(means, math.pi)) == w


def test_coincident_positions_keep_previous_bearing():
    ego = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
    agent = np.array([[0.0, 2.0], [1.0, 1.0], [2.0, 0.0], [3.0, 0.0]])
    assert homotopy(ego, agent, math.pi) == homotopy_oracle(ego, agent, math.pi)


def test_opposite_side_passes_differ():
    x = np.linspace(0.0, 20.0, 21)
    ego = np.column_stack([x, np.zeros_like(x)])
    left = np.column_stack([20.0 - x, np.full_like(x, 2.0)])
    right = np.column_stack([20.0 - x, np.full_like(x, -2.0)])
    a = modality(scenario_from_paths([ego, left]), math.pi)
    b = modality(scenario_from_paths([ego, right]), math.pi)
    assert a != b and a == (1,) and b == (-1,)


# -- pruning and merging -------------------------------------------------------

def _passing_scenarios(weights, sides):
    x = np.linspace(0.0, 20.0, 21)
    ego = np.column_stack([x, np.zeros_like(x)])
    out = []
    for w, side in zip(weights, sides):
        if side == 0:
            agent = np.column_stack([np.full_like(x, 40.0), np.full_like(x, 30.0)])
        else:
            agent = np.column_stack([20.0 - x, np.full_like(x, 2.0 * side)])
        out.append(scenario_from_paths([ego, agent], weight=w))
    return ScenePrediction(out, 0.1)


def test_merge_sums_mass_and_keeps_heaviest_representative():
    pred = _passing_scenarios([0.3, 0.2, 0.2, 0.1, 0.1, 0.1], [1, 1, -1, -1, 0, 0])
    out = prune_and_merge(pred, None, AimeConfig())
    weights = {tuple(s.label["modality"]): s.weight for s in out.scenarios}
    assert weights == pytest.approx({(1,): 0.5, (-1,): 0.3, (0,): 0.2})
    assert out.scenarios[0] is not pred.scenarios[0]
    np.testing.assert_array_equal(out.scenarios[0].means, pred.scenarios[0].means)


def test_prune_drops_unlikely_and_falls_back():
    pred = _passing_scenarios([0.96, 0.04], [1, -1])
    out = prune_and_merge(pred, None, AimeConfig(alpha_min=0.05))
    assert len(out) == 1 and out.scenarios[0].weight == 1.0
    out = prune_and_merge(pred, None, AimeConfig(alpha_min=0.99))
    assert len(out) == 1 and out.scenarios[0].weight == 1.0


@given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=8), st.data())
def test_prune_and_merge_properties(raw, data):
    sides = data.draw(st.lists(st.sampled_from([-1, 0, 1]), min_size=len(raw), max_size=len(raw)))
    w = np.asarray(raw) / sum(raw)
    w[0] += 1.0 - w.sum()
    out = prune_and_merge(_passing_scenarios(list(w), sides), None, AimeConfig())
    assert sum(s.weight for s in out.scenarios) == pytest.approx(1.0, abs=1e-12)
    mods = [tuple(s.label["modality"]) for s in out.scenarios]
    assert len(mods) == len(set(mods))
    assert [s.weight for s in out.scenarios] == sorted((s.weight for s in out.scenarios), reverse=True)


# -- pseudo observations ----------------------------------------------------

def test_pseudo_observation_advances_window(scenarios):
    sc = scenarios["merge"]
    pred = IntentionPredictor(sc.lane_graph)(sc.history, sc.ego_route, horizon=30)
    s = pred.scenarios[0]
    obs = update_pseudo_observation(sc.history, s, 7)
    assert all(len(t.states) == len(sc.history.ego.states) for t in obs.tracks)
    for i, tr in enumerate(obs.tracks):
        np.testing.assert_allclose(tr.current[:2], s.means[6, i])
    step = s.means[6, 0] - s.means[5, 0]
    assert obs.ego.current[3] == pytest.approx(np.hypot(*step) / sc.history.dt)
    assert update_pseudo_observation(sc.history, s, 0) is sc.history
    with pytest.raises(ValueError):
        update_pseudo_observation(sc.history, s, 31)


# -- tree construction ------------------------------------------------------

def _tree(sc, strategy="aime", cfg=AimeConfig(), T=60):
    return build_tree(sc.history, sc.lane_graph, sc.ego_route, IntentionPredictor(sc.lane_graph), cfg, T, strategy)


def check_tree_invariants(tree, cfg, T):
    for n in tree.nodes:
        if n.children:
            assert sum(tree.nodes[c].mass for c in n.children) == pytest.approx(n.mass, abs=1e-9)
            for c in n.children:
                assert tree.nodes[c].entry_step == n.end_step
    assert sum(l.mass for l in tree.leaves) == pytest.approx(1.0, abs=1e-9)
    for leaf in tree.leaves:
        assert leaf.end_step == T
        assert len(leaf.path_means) == T + 1
    if tree.strategy == "aime":
        assert tree.depth <= cfg.d_max + 1
        for n in tree.nodes:
            # siblings come out of one merge, so their full-horizon modalities differ
            mods = [tuple(tree.nodes[c].segment.label["modality"]) for c in n.children]
            assert len(mods) == len(set(mods))
            leaf_mods = [tree.nodes[c].modality for c in n.children if tree.nodes[c].is_leaf]
            assert len(leaf_mods) == len(set(leaf_mods))


@pytest.mark.parametrize("name", ["straight_road", "merge", "t_intersection", "intersection_4way"])
@pytest.mark.parametrize("strategy", ["ss", "aime"])
def test_tree_invariants_on_fixtures(scenarios, name, strategy):
    tree = _tree(scenarios[name], strategy)
    check_tree_invariants(tree, AimeConfig(), 60)


@settings(max_examples=12)
@given(st.floats(0.05, 0.5), st.integers(0, 3), st.integers(1, 15), st.integers(20, 60))
def test_tree_invariants_over_configs(scenarios, beta, d_max, t_min, T):
    cfg = AimeConfig(beta=beta, d_max=d_max, t_min=t_min)
    tree = _tree(scenarios["t_intersection"], "aime", cfg, T)
    check_tree_invariants(tree, cfg, T)


def test_single_shot_is_one_prediction(scenarios):
    tree = _tree(scenarios["t_intersection"], "ss")
    assert tree.predictor_calls == 1
    assert len(tree.leaves) == 6 and tree.depth == 1


def test_aime_sits_between_single_shot_and_brute_force(scenarios):
    sc = scenarios["t_intersection"]
    ss, aime = _tree(sc, "ss"), _tree(sc, "aime")
    assert 6 <= len(aime.leaves) < 6 ** 5
    assert ss.leaf_modalities() <= aime.leaf_modalities()


def test_policies_partition_the_leaves(scenarios):
    tree = _tree(scenarios["t_intersection"], "aime")
    policies = enumerate_policies(tree)
    assert len(policies) == len(tree.root.children)
    leaf_sets = [{i for i in p if tree.nodes[i].is_leaf} for p in policies]
    union = set().union(*leaf_sets)
    assert union == {l.id for l in tree.leaves}
    assert sum(len(s) for s in leaf_sets) == len(union)


def test_single_chain_tree_has_one_policy(scenarios):
    sc = scenarios["single_lane"]
    tree = _tree(sc, "aime")
    assert len(enumerate_policies(tree)) == 1


def test_tree_dict_shape(scenarios):
    tree = _tree(scenarios["merge"], "aime")
    d = tree_to_dict(tree)
    assert d["leaf_count"] == len(tree.leaves)
    assert all("entities" in n for n in d["nodes"][1:])
    assert "entities" not in tree_to_dict(tree, include_gaussians=False)["nodes"][1]


def test_config_validation():
    with pytest.raises(ValueError):
        AimeConfig(beta=0.0)
    with pytest.raises(ValueError):
        AimeConfig(t_min=0)
    with pytest.raises(ValueError):
        build_tree(None, None, None, None, strategy="dfs")
