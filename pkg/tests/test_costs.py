import math

import numpy as np
import pytest

from mindkit.contingency.costs import (TERMS, CostContext, PlannerConfig, agent_precision, collision_cost,
                                       decision_precision, inflate_covariance, stage_cost)
from mindkit.gmm import chi2_threshold, inv2


def random_spd(rng, lo=0.05, hi=4.0):
    q, _ = np.linalg.qr(rng.normal(size=(2, 2)))
    return q @ np.diag(rng.uniform(lo, hi, 2)) @ q.T


def random_point(rng, cfg=PlannerConfig(), n_agents=2):
    """A state/control pair plus a one-step context with every cost term active somewhere nearby."""
    ref = rng.uniform(-5, 5, 2)
    heading = rng.uniform(-math.pi, math.pi)
    normal = np.array([-math.sin(heading), math.cos(heading)])
    x = np.array([*(ref + rng.uniform(-3.5, 3.5) * normal + rng.uniform(-2, 2, 2)),
                  heading + rng.uniform(-0.5, 0.5), rng.uniform(-1.0, 22.0),
                  rng.uniform(-7, 4), rng.uniform(-0.4, 0.4)])
    u = np.array([rng.uniform(-7, 4), rng.uniform(-0.4, 0.4)])
    agents, precs = [], []
    for _ in range(n_agents):
        cov = random_spd(rng)
        offset = rng.normal(size=2)
        offset *= rng.uniform(0.5, 4.0) / np.linalg.norm(offset)
        agents.append(x[:2] + offset)
        precs.append(agent_precision(cov, cfg.radius_sum, cfg.d_bnd))
    ctx = CostContext(
        weight=np.array([rng.uniform(0.1, 1.0)]),
        dec_mean=(x[:2] + rng.normal(size=2))[None],
        dec_prec=decision_precision(random_spd(rng), cfg.decision_sigma_floor)[None],
        agent_mean=np.array(agents)[None],
        agent_prec=np.array(precs)[None],
        target_speed=np.array([rng.uniform(3, 12)]),
        ref_point=ref[None],
        ref_normal=normal[None],
    )
    return x, u, ctx


def value(x, u, ctx, cfg):
    return stage_cost(x, u, ctx, cfg)[0]


def central_grad(f, z, h=1e-6):
    g = np.zeros_like(z)
    for k in range(len(z)):
        e = np.zeros_like(z)
        e[k] = h
        g[k] = (f(z + e) - f(z - e)) / (2 * h)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1.0)


def fd_errors(x, u, ctx, cfg):
    val, lx, lu, lxx, luu, lux, _ = stage_cost(x, u, ctx, cfg)
    gx = central_grad(lambda z: value(z, u, ctx, cfg), x)
    gu = central_grad(lambda z: value(x, z, ctx, cfg), u)
    hxx = np.array([central_grad(lambda z: stage_cost(z, u, ctx, cfg)[1][k], x) for k in range(6)])
    huu = np.array([central_grad(lambda z: stage_cost(x, z, ctx, cfg)[2][k], u) for k in range(2)])
    hux = np.array([central_grad(lambda z: stage_cost(z, u, ctx, cfg)[2][k], x) for k in range(2)])
    return [rel_err(lx, gx), rel_err(lu, gu), rel_err(lxx, hxx), rel_err(luu, huu), rel_err(lux, hux)]


def test_gradients_and_hessians_match_central_differences():
    rng = np.random.default_rng(2024)
    cfg = PlannerConfig()
    worst = 0.0
    for _ in range(100):
        x, u, ctx = random_point(rng, cfg)
        worst = max(worst, max(fd_errors(x, u, ctx, cfg)))
    assert worst < 1e-5


def test_terms_are_reported_by_name():
    rng = np.random.default_rng(0)
    x, u, ctx = random_point(rng)
    val, *_, terms = stage_cost(x, u, ctx)
    assert len(terms) == len(TERMS)
    assert val == pytest.approx(terms.sum())
    assert np.all(terms >= 0)


def test_gauss_newton_hessian_is_psd_for_collision():
    rng = np.random.default_rng(5)
    cfg = PlannerConfig(w_safe=0, w_speed=0, w_kin=0, w_acc=0, w_curv=0, w_dacc=0, w_dcurv=0, gamma=0)
    for _ in range(50):
        x, u, ctx = random_point(rng, cfg)
        lxx = stage_cost(x, u, ctx, cfg, exact=False)[3]
        assert np.linalg.eigvalsh(lxx)[0] >= -1e-9


def test_collision_hinge_at_half_threshold():
    p, w = 0.05, 3.0
    d_bnd = chi2_threshold(p)
    cov = np.diag([4.0, 1.0])
    point = np.array([2.0 * d_bnd / 2, 0.0])  # D = x / sigma_x = d_bnd / 2
    assert collision_cost(point, [[0.0, 0.0]], [cov], p, w_col=w) == pytest.approx(w * (d_bnd / 2) ** 2)


def test_collision_cost_zero_outside_threshold():
    assert collision_cost([10.0, 0.0], [[0.0, 0.0]], [np.eye(2)], 0.05, w_col=50.0) == 0.0


def test_inflation_is_exact_for_isotropic_covariance():
    d_bnd = chi2_threshold(0.05)
    infl = inflate_covariance(np.eye(2) * 0.25, 2.0, d_bnd)
    # the D_bnd ellipse of the inflated Gaussian grows by exactly the footprint radius
    assert math.sqrt(infl[0, 0]) * d_bnd == pytest.approx(0.5 * d_bnd + 2.0)


def test_decision_precision_has_floor():
    P = decision_precision(np.zeros((2, 2)), 0.5)
    np.testing.assert_allclose(P, np.eye(2) * 4.0)
    np.testing.assert_allclose(inv2(P), np.eye(2) * 0.25)


def test_zero_cost_when_every_term_is_satisfied():
    cfg = PlannerConfig()
    x = np.array([0.0, 0.0, 0.0, 8.0, 0.0, 0.0])
    ctx = CostContext(np.ones(1), np.zeros((1, 2)), np.zeros((1, 2, 2)), np.zeros((1, 0, 2)),
                      np.zeros((1, 0, 2, 2)), np.array([8.0]), np.zeros((1, 2)), np.array([[0.0, 1.0]]))
    assert stage_cost(x, np.zeros(2), ctx, cfg)[0] == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("kw", [{"w_col": -1.0}, {"gamma": -0.1}, {"p": 0.0}, {"a_min": 1.0}, {"dt": 0.0}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        PlannerConfig(**kw)
