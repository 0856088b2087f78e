import math

import numpy as np
import pytest

from mindkit.aime import AimeConfig, ScenarioTree, TreeNode, build_tree, enumerate_policies
from mindkit.contingency import dynamics
from mindkit.contingency.costs import PlannerConfig
from mindkit.contingency.dynamics import Control, VehicleState, bicycle_step
from mindkit.contingency.ilqr import LinearQuadraticTree, ilqr_solve_tree, layout_policy, solve_tree
from mindkit.geometry import Polyline
from mindkit.gmm import PredictedScenario
from mindkit.planner import make_predictor
from mindkit.predictor import PredictorConfig

from oracles import riccati_lqr


def random_lq(rng, nx=4, nu=2):
    A = np.eye(nx) + 0.1 * rng.standard_normal((nx, nx))
    B = 0.5 * rng.standard_normal((nx, nu))
    M = rng.standard_normal((nx, nx))
    Q = M @ M.T / nx + 0.1 * np.eye(nx)
    M = rng.standard_normal((nu, nu))
    R = M @ M.T / nu + 0.1 * np.eye(nu)
    return A, B, Q, R, rng.standard_normal(nx) * 3.0


def lq_instance(seed, N=30):
    rng = np.random.default_rng(seed)
    A, B, Q, R, x0 = random_lq(rng)
    problem = LinearQuadraticTree(A, B, Q, R, x0, np.arange(N))
    U0 = rng.standard_normal((N, B.shape[1]))
    return problem, U0, riccati_lqr(A, B, Q, R, x0, N)


# -- linear-quadratic sanity ------------------------------------------------

@pytest.mark.parametrize("seed", range(10))
def test_chain_matches_riccati(seed):
    problem, U0, (xs, us) = lq_instance(seed)
    res = solve_tree(problem, U0, max_iter=50, tol=1e-14)
    assert np.max(np.abs(res.controls - us)) < 1e-6
    assert np.max(np.abs(res.states - xs)) < 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_accepted_iterations_never_increase_cost(seed):
    problem, U0, _ = lq_instance(seed)
    res = solve_tree(problem, U0, max_iter=50, tol=1e-14)
    hist = np.asarray(res.cost_history)
    assert len(hist) >= 2
    assert np.all(np.diff(hist) <= 1e-12 * np.abs(hist[:-1]))


def test_branched_tree_matches_direct_quadratic_minimum():
    # trunk of 4 steps, then two branches of 5 and 3 steps, one of which forks again
    prev = [0, 1, 2, 3, 4, 5, 6, 7, 8, 4, 10, 11, 12, 13, 12, 15]
    rng = np.random.default_rng(7)
    A, B, Q, R, x0 = random_lq(rng)
    x_ref = rng.standard_normal((len(prev), len(x0)))
    problem = LinearQuadraticTree(A, B, Q, R, x0, prev, x_ref)
    n, nu = len(prev), B.shape[1]

    # J(U) is quadratic in U; recover its Hessian and gradient at zero by probing
    def J(u):
        U = u.reshape(n, nu)
        return problem.cost(problem.rollout(U), U)

    dim = n * nu
    I = np.eye(dim)
    j0 = J(np.zeros(dim))
    jp = np.array([J(e) for e in I])
    jm = np.array([J(-e) for e in I])
    g = (jp - jm) / 2.0
    H = np.empty((dim, dim))
    diag = jp + jm - 2.0 * j0
    for a in range(dim):
        for b in range(dim):
            H[a, b] = diag[a] if a == b else J(I[a] + I[b]) - jp[a] - jp[b] + j0
    u_star = -np.linalg.solve(H, g)

    res = solve_tree(problem, np.zeros((n, nu)), max_iter=50, tol=1e-14)
    assert np.max(np.abs(res.controls.ravel() - u_star)) < 1e-6


# -- bicycle ------------------------------------------------------------------

def test_constant_curvature_turns_heading_linearly():
    s = VehicleState(0.0, 0.0, 0.3, 1.0)
    N, dt = 25, 0.1
    for _ in range(N):
        s = bicycle_step(s, Control(0.0, 0.1), dt)
    assert s.heading == pytest.approx(0.3 + 0.1 * N * dt, abs=1e-12)
    assert s.speed == pytest.approx(1.0)


def test_augmented_step_matches_plain_bicycle():
    out = np.empty(6)
    x = np.array([1.0, 2.0, 0.4, 5.0, 0.0, 0.0])
    dynamics.step_aug(x, np.array([0.7, -0.05]), 0.1, out)
    s = bicycle_step(VehicleState(1.0, 2.0, 0.4, 5.0), Control(0.7, -0.05), 0.1)
    np.testing.assert_allclose(out[:4], s.as_array(), atol=1e-14)
    np.testing.assert_allclose(out[4:], [0.7, -0.05])


def test_bicycle_rejects_bad_dt():
    with pytest.raises(ValueError):
        bicycle_step(VehicleState(0, 0, 0, 1), Control(0, 0), 0.0)


# -- planning trees -------------------------------------------------------------

@pytest.fixture(scope="module")
def solved_fixture_trees(scenarios):
    out = []
    for name in ("straight_road", "t_intersection", "merge"):
        sc = scenarios[name]
        predictor = make_predictor("intention", sc.lane_graph, PredictorConfig())
        tree = build_tree(sc.history, sc.lane_graph, sc.ego_route, predictor, AimeConfig(), 60)
        route = sc.lane_graph.route_path(sc.ego_route.lane_ids)
        ego = sc.history.ego.current
        x0 = np.array([ego[0], ego[1], ego[2], ego[3], 0.0, 0.0])
        for nodes in enumerate_policies(tree):
            traj = ilqr_solve_tree(tree, nodes, x0, route.polyline, route.speed_limit_at, PlannerConfig())
            out.append((name, tree, nodes, traj))
    return out


def test_solved_trees_are_dynamically_consistent(solved_fixture_trees):
    for name, _, _, traj in solved_fixture_trees:
        assert traj.continuity_residual < 1e-9, name
        assert not traj.diverged, name
        hist = np.asarray(traj.cost_history)
        assert np.all(np.diff(hist) <= 1e-9 * np.abs(hist[:-1])), name


def test_branches_start_from_the_parent_end_state(solved_fixture_trees):
    for _, tree, nodes, traj in solved_fixture_trees:
        lay = traj.layout
        ends = {nid: b for nid, _, _, b in lay.segments}
        for nid, parent, a, b in lay.segments:
            if parent is None:
                assert lay.prev[a] == 0
            else:
                assert lay.prev[a] == ends[parent]
            assert lay.step_time[a] == tree.nodes[nid].entry_step + 1


def test_layout_covers_every_step_once(solved_fixture_trees):
    for _, tree, nodes, traj in solved_fixture_trees:
        lay = traj.layout
        assert lay.n_steps == sum(len(tree.nodes[n].segment) for n in nodes)
        assert np.all(lay.prev <= np.arange(lay.n_steps))


def mirrored_tree(trunk=10, T=40, speed=8.0, offset=2.5, dt=0.1):
    """Ego on the x axis; after the trunk an agent appears either left or right with equal mass."""
    ts = np.arange(T + 1) * dt
    ego = np.stack([speed * ts, np.zeros_like(ts)], axis=1)
    covs = np.broadcast_to(np.eye(2) * 0.05, (T, 2, 2, 2)).copy()

    def scenario(side, lo, hi):
        agent = np.stack([20.0 + 2.0 * ts, side * offset * np.ones_like(ts)], axis=1)
        means = np.stack([ego, agent], axis=1)
        return PredictedScenario(1.0, means[lo + 1:hi + 1], covs[lo:hi], ("ego", "a"), means[lo], covs[lo])

    root = TreeNode(0, None, 0, 0, None, mass=1.0)
    trunk_sc = scenario(1.0, 0, trunk)
    n1 = TreeNode(1, 0, 1, 0, None, trunk_sc, trunk, 1.0, [2, 3])
    n1.path_means = np.stack([ego, ego], axis=1)[:trunk + 1]
    nodes = [root, n1]
    for nid, side in ((2, 1.0), (3, -1.0)):
        seg = scenario(side, trunk, T)
        node = TreeNode(nid, 1, 2, trunk, None, seg, None, 0.5)
        agent = np.stack([20.0 + 2.0 * ts, side * offset * np.ones_like(ts)], axis=1)
        node.path_means = np.stack([ego, agent], axis=1)
        nodes.append(node)
    root.children = [1]
    # the trunk agent sits on the centreline so the shared part is symmetric
    trunk_sc.means[:, 1, 1] = 0.0
    trunk_sc.start_means[1, 1] = 0.0
    return ScenarioTree(nodes, T)


def test_symmetric_branches_keep_the_shared_trunk_straight():
    tree = mirrored_tree()
    route = Polyline([[-10.0, 0.0], [200.0, 0.0]])
    x0 = np.array([0.0, 0.0, 0.0, 8.0, 0.0, 0.0])
    traj = ilqr_solve_tree(tree, [1, 2, 3], x0, route, lambda s: 10.0, PlannerConfig())
    trunk = traj.segment_states(1)
    assert np.max(np.abs(trunk[:, 1])) < 1e-6
    assert np.max(np.abs(trunk[:, 2])) < 1e-6
    left, right = traj.segment_states(2), traj.segment_states(3)
    # each branch leans away from its agent while passing it, mirroring the other
    passing = np.argmin(np.abs(left[:, 0] - tree.nodes[2].segment.means[:, 1, 0]))
    assert left[passing, 1] < -0.3 and right[passing, 1] > 0.3
    np.testing.assert_allclose(left[:, 1], -right[:, 1], atol=1e-5)
    assert traj.continuity_residual < 1e-9


def test_layout_ignores_nodes_outside_the_policy():
    tree = mirrored_tree()
    lay = layout_policy(tree, [1, 2])
    assert [s[0] for s in lay.segments] == [1, 2]
    assert lay.n_steps == 40
    assert math.isclose(tree.nodes[2].mass, 0.5)
