"""Tree-structured iLQR.

A tree of n steps is flattened so that step ``i`` maps state ``prev[i]`` to state ``i + 1``
(state 0 is the fixed root). Steps are ordered parents-first, so a reverse sweep sees
every child before its parent and the value functions of sibling branches simply add
up at the shared state. Each step carries exactly one control, which makes pre-branch
control sharing structural.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from . import dynamics
from .costs import (TERMS, CostContext, PlannerConfig, agent_precision, decision_precision,
                    tree_cost, tree_derivatives)

ALPHAS = tuple(0.5 ** i for i in range(10))


@nb.njit(cache=True)
def backward_pass(prev, FX, FU, SX, SXX, CX, CU, CXX, CUU, CUX, mu):
    """Returns (ok, K, k, dV1, dV2); value terms of sibling branches accumulate at the shared state."""
    n = FX.shape[0]
    nx = FX.shape[1]
    nu = FU.shape[2]
    Vx = SX.copy()
    Vxx = SXX.copy()
    K = np.zeros((n, nu, nx))
    k = np.zeros((n, nu))
    dV1 = 0.0
    dV2 = 0.0
    Qx = np.empty(nx)
    Qu = np.empty(nu)
    Qxx = np.empty((nx, nx))
    Quu = np.empty((nu, nu))
    Qux = np.empty((nu, nx))
    VF = np.empty((nx, nx))  # Vxx @ fx
    VU = np.empty((nx, nu))  # Vxx @ fu
    Qreg = np.empty((nu, nu))
    Qux_r = np.empty((nu, nx))
    for i in range(n - 1, -1, -1):
        so = i + 1
        si = prev[i]
        fx = FX[i]
        fu = FU[i]
        V = Vxx[so]
        vx = Vx[so]
        for a in range(nx):
            for b in range(nx):
                acc = 0.0
                for c in range(nx):
                    acc += V[a, c] * fx[c, b]
                VF[a, b] = acc
            for b in range(nu):
                acc = 0.0
                for c in range(nx):
                    acc += V[a, c] * fu[c, b]
                VU[a, b] = acc
        for a in range(nx):
            acc = CX[i, a]
            for c in range(nx):
                acc += fx[c, a] * vx[c]
            Qx[a] = acc
            for b in range(nx):
                acc = CXX[i, a, b]
                for c in range(nx):
                    acc += fx[c, a] * VF[c, b]
                Qxx[a, b] = acc
        for a in range(nu):
            acc = CU[i, a]
            for c in range(nx):
                acc += fu[c, a] * vx[c]
            Qu[a] = acc
            for b in range(nu):
                acc = CUU[i, a, b]
                reg = 0.0
                for c in range(nx):
                    acc += fu[c, a] * VU[c, b]
                    reg += fu[c, a] * fu[c, b]
                Quu[a, b] = acc
                Qreg[a, b] = acc + mu * reg
            for b in range(nx):
                acc = CUX[i, a, b]
                reg = 0.0
                for c in range(nx):
                    acc += fu[c, a] * VF[c, b]
                    reg += fu[c, a] * fx[c, b]
                Qux[a, b] = acc
                Qux_r[a, b] = acc + mu * reg
        Qsym = 0.5 * (Qreg + Qreg.T)
        if np.linalg.eigvalsh(Qsym)[0] <= 0.0:
            return False, K, k, 0.0, 0.0
        Qinv = np.linalg.inv(Qsym)
        for a in range(nu):
            acc = 0.0
            for b in range(nu):
                acc -= Qinv[a, b] * Qu[b]
            k[i, a] = acc
            for c in range(nx):
                acc = 0.0
                for b in range(nu):
                    acc -= Qinv[a, b] * Qux_r[b, c]
                K[i, a, c] = acc
        Ki = K[i]
        ki = k[i]
        for a in range(nu):
            dV1 += ki[a] * Qu[a]
            for b in range(nu):
                dV2 += 0.5 * ki[a] * Quu[a, b] * ki[b]
        # Vx += Qx + K'Quu k + K'Qu + Qux'k ; Vxx += Qxx + K'Quu K + K'Qux + Qux'K
        for a in range(nx):
            acc = Qx[a]
            for b in range(nu):
                tmp = 0.0
                for c in range(nu):
                    tmp += Quu[b, c] * ki[c]
                acc += Ki[b, a] * (tmp + Qu[b]) + Qux[b, a] * ki[b]
            Vx[si, a] += acc
            for d in range(nx):
                acc = Qxx[a, d]
                for b in range(nu):
                    tmp = 0.0
                    for c in range(nu):
                        tmp += Quu[b, c] * Ki[c, d]
                    acc += Ki[b, a] * (tmp + Qux[b, d]) + Qux[b, a] * Ki[b, d]
                Vxx[si, a, d] += acc
        for a in range(nx):
            for d in range(a + 1, nx):
                m = 0.5 * (Vxx[si, a, d] + Vxx[si, d, a])
                Vxx[si, a, d] = m
                Vxx[si, d, a] = m
    return True, K, k, dV1, dV2


# ---------------------------------------------------------------------------
# generic solver

@dataclass
class SolveResult:
    states: np.ndarray
    controls: np.ndarray
    cost: float
    iterations: int
    converged: bool
    cost_history: list = field(default_factory=list)
    diverged: bool = False


def solve_tree(problem, U0: np.ndarray, max_iter: int = 60, tol: float = 1e-6,
               mu_min: float = 1e-6, mu_max: float = 1e10) -> SolveResult:
    """Levenberg-regularized iLQR with a backtracking line search.

    ``problem`` supplies ``prev``, ``rollout(U)``, ``forward(X, U, K, k, alpha)``, ``cost(X, U)``
    and ``derivatives(X, U)``. Accepted iterations never increase the cost.
    """
    U = np.array(U0, dtype=float)
    X = problem.rollout(U)
    J = problem.cost(X, U)
    history = [J]
    if not math.isfinite(J):
        return SolveResult(X, U, J, 0, False, history, diverged=True)
    mu = mu_min
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        derivs = problem.derivatives(X, U)
        ok, K, k, dV1, dV2 = backward_pass(problem.prev, *derivs, mu)
        if not ok:
            mu = max(mu * 10.0, mu_min)
            if mu > mu_max:
                break
            continue
        accepted = False
        for alpha in ALPHAS:
            Xn, Un = problem.forward(X, U, K, k, alpha)
            Jn = problem.cost(Xn, Un)
            expected = -(alpha * dV1 + alpha * alpha * dV2)
            if math.isfinite(Jn) and Jn <= J and (J - Jn >= 1e-4 * expected or expected <= 0):
                accepted = True
                break
        if not accepted:
            mu *= 10.0
            if mu > mu_max:
                break
            continue
        decrease = J - Jn
        X, U, J = Xn, Un, Jn
        history.append(J)
        mu = max(mu / 2.0, mu_min)
        if decrease <= tol * (1.0 + abs(J)):
            converged = True
            break
    return SolveResult(X, U, J, it, converged, history)


class LinearQuadraticTree:
    """x' = A x + B u with cost (x - x_ref)' Q (x - x_ref) on produced states and u' R u per step."""

    def __init__(self, A, B, Q, R, x0, prev, x_ref=None):
        self.A, self.B, self.Q, self.R = (np.asarray(m, dtype=float) for m in (A, B, Q, R))
        self.x0 = np.asarray(x0, dtype=float)
        self.prev = np.asarray(prev, dtype=np.int64)
        n = len(self.prev)
        self.x_ref = np.zeros((n, len(self.x0))) if x_ref is None else np.asarray(x_ref, dtype=float)

    def rollout(self, U):
        X = np.empty((len(U) + 1, len(self.x0)))
        X[0] = self.x0
        for i, p in enumerate(self.prev):
            X[i + 1] = self.A @ X[p] + self.B @ U[i]
        return X

    def forward(self, Xr, Ur, K, k, alpha):
        X = np.empty_like(Xr)
        U = np.empty_like(Ur)
        X[0] = self.x0
        for i, p in enumerate(self.prev):
            U[i] = Ur[i] + alpha * k[i] + K[i] @ (X[p] - Xr[p])
            X[i + 1] = self.A @ X[p] + self.B @ U[i]
        return X, U

    def cost(self, X, U):
        r = X[1:] - self.x_ref
        return float(np.einsum("ni,ij,nj->", r, self.Q, r) + np.einsum("ni,ij,nj->", U, self.R, U))

    def derivatives(self, X, U):
        n, nx, nu = len(U), len(self.x0), U.shape[1]
        SX = np.zeros((n + 1, nx))
        SXX = np.zeros((n + 1, nx, nx))
        SX[1:] = 2.0 * (X[1:] - self.x_ref) @ self.Q
        SXX[1:] = 2.0 * self.Q
        return (np.broadcast_to(self.A, (n, nx, nx)).copy(), np.broadcast_to(self.B, (n, nx, nu)).copy(),
                SX, SXX, np.zeros((n, nx)), 2.0 * U @ self.R, np.zeros((n, nx, nx)),
                np.broadcast_to(2.0 * self.R, (n, nu, nu)).copy(), np.zeros((n, nu, nx)))


# ---------------------------------------------------------------------------
# planning problem on a policy sub-tree

@dataclass
class TreeLayout:
    """Flattened steps of a policy: which scenario-tree node and global time each step belongs to."""

    prev: np.ndarray
    step_node: np.ndarray
    step_local: np.ndarray
    step_time: np.ndarray
    segments: list  # (node id, parent node id or None, first step, last step + 1)

    @property
    def n_steps(self) -> int:
        return len(self.prev)


def layout_policy(tree, node_ids) -> TreeLayout:
    ids = sorted(node_ids)
    in_policy = set(ids)
    last_state = {}
    prev, step_node, step_local, step_time, segments = [], [], [], [], []
    for nid in ids:
        node = tree.nodes[nid]
        parent = node.parent if node.parent in in_policy else None
        p = last_state[parent] if parent is not None else 0
        start = len(prev)
        for t in range(len(node.segment)):
            prev.append(p)
            step_node.append(nid)
            step_local.append(t)
            step_time.append(node.entry_step + t + 1)
            p = len(prev)  # state index produced by this step
        last_state[nid] = p
        segments.append((nid, parent, start, len(prev)))
    return TreeLayout(np.asarray(prev, dtype=np.int64), np.asarray(step_node), np.asarray(step_local),
                      np.asarray(step_time), segments)


def build_context(tree, layout: TreeLayout, route_polyline, speed_limit_at, cfg: PlannerConfig) -> CostContext:
    """Per-step cost data from the scenario segments along a policy.

    ``speed_limit_at(s)`` maps route arc length to the lane speed limit.
    """
    n = layout.n_steps
    root_id = layout.segments[0][0]
    root_mass = tree.nodes[root_id].mass
    n_agents = tree.nodes[root_id].segment.n_entities - 1
    weight = np.empty(n)
    dec_mean = np.empty((n, 2))
    dec_cov = np.empty((n, 2, 2))
    ag_mean = np.empty((n, n_agents, 2))
    ag_cov = np.empty((n, n_agents, 2, 2))
    for nid, _, a, b in layout.segments:
        node = tree.nodes[nid]
        seg = node.segment
        weight[a:b] = node.mass / root_mass
        dec_mean[a:b] = seg.means[:, 0]
        dec_cov[a:b] = seg.covs[:, 0]
        ag_mean[a:b] = seg.means[:, 1:]
        ag_cov[a:b] = seg.covs[:, 1:]
    d_bnd = cfg.d_bnd
    ag_prec = agent_precision(ag_cov.reshape(-1, 2, 2), cfg.radius_sum, d_bnd).reshape(ag_cov.shape) \
        if n_agents else np.zeros((n, 0, 2, 2))
    ref_point = np.empty((n, 2))
    ref_normal = np.empty((n, 2))
    target = np.empty(n)
    for i in range(n):
        s, _, _ = route_polyline.project(dec_mean[i])
        ref_point[i] = route_polyline.point_at(s)
        h = route_polyline.heading_at(s)
        ref_normal[i] = (-math.sin(h), math.cos(h))
        target[i] = min(cfg.target_speed, speed_limit_at(s))
    return CostContext(weight, dec_mean, decision_precision(dec_cov, cfg.decision_sigma_floor),
                       ag_mean, ag_prec, target, ref_point, ref_normal)


class BicycleTreeProblem:
    def __init__(self, x0, layout: TreeLayout, ctx: CostContext, cfg: PlannerConfig):
        self.x0 = np.asarray(x0, dtype=float)
        self.prev = layout.prev
        self.ctx = ctx
        self.cfg = cfg
        self.dt = cfg.dt
        self.prm = cfg.params()
        self.lo = np.array([cfg.a_min, -cfg.kappa_max])
        self.hi = np.array([cfg.a_max, cfg.kappa_max])
        self._arrays = (ctx.weight, ctx.dec_mean, ctx.dec_prec, ctx.agent_mean, ctx.agent_prec,
                        ctx.target_speed, ctx.ref_point, ctx.ref_normal)

    def rollout(self, U):
        return dynamics.rollout(self.x0, self.prev, U, self.dt)

    def forward(self, X, U, K, k, alpha):
        return dynamics.forward(X, U, K, k, alpha, self.prev, self.dt, self.lo, self.hi, False)

    def clamp(self, U):
        n = len(U)
        zeros_k = np.zeros((n, 2))
        zeros_K = np.zeros((n, 2, 6))
        X0 = self.rollout(U)
        return dynamics.forward(X0, U, zeros_K, zeros_k, 0.0, self.prev, self.dt, self.lo, self.hi, True)

    def cost(self, X, U):
        return float(tree_cost(X, U, self.prev, self.prm, *self._arrays)[0])

    def breakdown(self, X, U):
        return tree_cost(X, U, self.prev, self.prm, *self._arrays)[1]

    def derivatives(self, X, U):
        FX, FU = dynamics.all_jacobians(X, U, self.prev, self.dt)
        return (FX, FU) + tree_derivatives(X, U, self.prev, self.prm, *self._arrays)


def warm_start(x0, layout: TreeLayout, tree, cfg: PlannerConfig, lookahead: int = 8) -> np.ndarray:
    """Pure-pursuit toward the ego decision means, one control per step."""
    n = layout.n_steps
    U = np.zeros((n, 2))
    X = np.empty((n + 1, len(x0)))
    X[0] = x0
    dt = cfg.dt
    for i in range(n):
        node = tree.nodes[layout.step_node[i]]
        path = node.path_means[:, 0]
        t = layout.step_time[i]
        x = X[layout.prev[i]]
        tgt = path[min(t - 1 + lookahead, len(path) - 1)]
        dx, dy = tgt[0] - x[0], tgt[1] - x[1]
        dist = math.hypot(dx, dy)
        kappa = 0.0
        if dist > 1e-3:
            alpha = math.atan2(dy, dx) - x[2]
            kappa = 2.0 * math.sin(alpha) / max(dist, 1.0)
        lo_t, hi_t = max(t - 1, 0), min(t, len(path) - 1)
        v_dec = float(np.hypot(*(path[hi_t] - path[lo_t]))) / dt if hi_t > lo_t else x[3]
        accel = (v_dec - x[3]) / 0.5
        U[i] = (min(max(accel, cfg.a_min), cfg.a_max), min(max(kappa, -cfg.kappa_max), cfg.kappa_max))
        dynamics.step_aug(x, U[i], dt, X[i + 1])
    return U


# ---------------------------------------------------------------------------
# trajectory tree

@dataclass
class TrajectoryTree:
    states: np.ndarray  # (n+1, 6); state 0 is the root
    controls: np.ndarray  # (n, 2)
    layout: TreeLayout
    weights: np.ndarray
    cost: float
    terms: dict
    converged: bool
    iterations: int
    cost_history: list
    continuity_residual: float
    diverged: bool = False
    policy_node: int = -1
    policy_mass: float = 1.0
    context: CostContext | None = None

    @property
    def first_control(self) -> np.ndarray:
        return self.controls[0]

    def segment_states(self, node_id: int) -> np.ndarray:
        for nid, _, a, b in self.layout.segments:
            if nid == node_id:
                return self.states[a + 1:b + 1]
        raise KeyError(node_id)

    def to_dict(self) -> dict:
        segs = []
        for nid, parent, a, b in self.layout.segments:
            steps = [
                {"t": int(self.layout.step_time[i]), "x": float(self.states[i + 1, 0]),
                 "y": float(self.states[i + 1, 1]), "theta": float(self.states[i + 1, 2]),
                 "v": float(self.states[i + 1, 3]), "a": float(self.controls[i, 0]),
                 "kappa": float(self.controls[i, 1])}
                for i in range(a, b)
            ]
            segs.append({"scenario_id": int(nid), "parent": None if parent is None else int(parent),
                         "weight": float(self.weights[a]) if b > a else 0.0, "steps": steps})
        return {
            "root": {"x": float(self.states[0, 0]), "y": float(self.states[0, 1]),
                     "theta": float(self.states[0, 2]), "v": float(self.states[0, 3])},
            "segments": segs,
            "cost": float(self.cost),
            "cost_breakdown": {k: float(v) for k, v in self.terms.items()},
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "continuity_residual": float(self.continuity_residual),
        }


def ilqr_solve_tree(tree, node_ids, x0, route_polyline, speed_limit_at,
                    cfg: PlannerConfig = PlannerConfig(), U0: np.ndarray | None = None) -> TrajectoryTree:
    """Optimize a trajectory tree over one policy sub-tree of a scenario tree.

    ``x0`` is the augmented root state (x, y, heading, speed, a_prev, kappa_prev).
    """
    layout = layout_policy(tree, node_ids)
    ctx = build_context(tree, layout, route_polyline, speed_limit_at, cfg)
    problem = BicycleTreeProblem(x0, layout, ctx, cfg)
    if U0 is None:
        U0 = warm_start(problem.x0, layout, tree, cfg)
    res = solve_tree(problem, U0, cfg.max_iter, cfg.tol, cfg.mu_min, cfg.mu_max)
    X, U = problem.clamp(res.controls)
    terms = problem.breakdown(X, U)
    cost = float(terms.sum())
    root = tree.nodes[layout.segments[0][0]]
    return TrajectoryTree(
        states=X, controls=U, layout=layout, weights=ctx.weight, cost=cost,
        terms=dict(zip(TERMS, map(float, terms))), converged=res.converged, iterations=res.iterations,
        cost_history=res.cost_history, continuity_residual=dynamics.continuity_residual(X, U, layout.prev, cfg.dt),
        diverged=res.diverged or not math.isfinite(cost), policy_node=root.id, policy_mass=root.mass,
        context=ctx,
    )

