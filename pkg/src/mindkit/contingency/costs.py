"""Stage costs for tree iLQR with exact first and second derivatives.

A step's cost splits into a state part, evaluated on the state the step produces, and a
control part, evaluated on the state the control is applied from (which carries the
previous control). Terms: corridor safety, target speed, kinematic bounds, comfort,
decision NLL and the Mahalanobis collision hinge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numba as nb
import numpy as np

from ..gmm import chi2_threshold, inv2, sqrtm_psd

TERMS = ("safe", "tar", "kin", "comf", "dec", "col")
N_TERMS = len(TERMS)

# slots of the packed parameter vector handed to the kernels
(P_W_SAFE, P_HALF_WIDTH, P_W_SPEED, P_W_KIN, P_V_MIN, P_V_MAX, P_A_MIN, P_A_MAX, P_K_MAX,
 P_AY_MAX, P_W_ACC, P_W_CURV, P_W_DACC, P_W_DCURV, P_GAMMA, P_W_COL, P_D_BND, P_GN) = range(18)
N_PARAMS = 18


@dataclass(frozen=True)
class PlannerConfig:
    dt: float = 0.1
    w_safe: float = 10.0
    corridor_half_width: float = 2.0  # m of free lateral play around the route centerline
    w_speed: float = 1.0
    target_speed: float = 10.0  # m/s, capped by the lane speed limit
    w_kin: float = 100.0
    v_min: float = 0.0
    v_max: float = 20.0
    a_min: float = -6.0
    a_max: float = 3.0
    kappa_max: float = 0.3
    ay_max: float = 4.0
    w_acc: float = 0.2
    w_curv: float = 2.0
    w_dacc: float = 2.0
    w_dcurv: float = 200.0
    gamma: float = 0.1
    decision_sigma_floor: float = 0.5  # m
    p: float = 0.05
    w_col: float = 50.0
    ego_radius: float = 1.0
    agent_radius: float = 1.0
    max_iter: int = 60
    tol: float = 1e-6  # relative cost decrease treated as converged
    mu_min: float = 1e-6
    mu_max: float = 1e10
    gauss_newton: bool = True  # drop indefinite collision curvature in the solver

    def __post_init__(self):
        for f in fields(self):
            if f.name.startswith("w_") and getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be >= 0")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not 0.0 < self.p < 1.0:
            raise ValueError("p must be in (0, 1)")
        if self.dt <= 0 or self.max_iter < 1:
            raise ValueError("dt must be positive and max_iter >= 1")
        if not (self.a_min < 0 < self.a_max and self.kappa_max > 0 and self.v_min < self.v_max):
            raise ValueError("inconsistent control/state bounds")

    @property
    def d_bnd(self) -> float:
        return chi2_threshold(self.p)

    @property
    def radius_sum(self) -> float:
        return self.ego_radius + self.agent_radius

    def params(self, gauss_newton: bool | None = None) -> np.ndarray:
        gn = self.gauss_newton if gauss_newton is None else gauss_newton
        return np.array([
            self.w_safe, self.corridor_half_width, self.w_speed, self.w_kin, self.v_min, self.v_max,
            self.a_min, self.a_max, self.kappa_max, self.ay_max, self.w_acc, self.w_curv, self.w_dacc,
            self.w_dcurv, self.gamma, self.w_col, self.d_bnd, 1.0 if gn else 0.0,
        ])


@dataclass
class CostContext:
    """Per-step data for a flattened tree of n steps (step i produces state i + 1)."""

    weight: np.ndarray  # (n,)
    dec_mean: np.ndarray  # (n, 2)
    dec_prec: np.ndarray  # (n, 2, 2)
    agent_mean: np.ndarray  # (n, A, 2)
    agent_prec: np.ndarray  # (n, A, 2, 2), inverse of the footprint-inflated covariance
    target_speed: np.ndarray  # (n,)
    ref_point: np.ndarray  # (n, 2)
    ref_normal: np.ndarray  # (n, 2)

    def __len__(self) -> int:
        return len(self.weight)

    def at(self, i: int) -> "CostContext":
        s = slice(i, i + 1)
        return CostContext(*(getattr(self, f.name)[s] for f in fields(self)))


def decision_precision(cov: np.ndarray, sigma_floor: float) -> np.ndarray:
    """Inverse of the ego decision covariance after adding a variance floor."""
    cov = np.asarray(cov, dtype=float)
    return inv2(cov + (sigma_floor ** 2) * np.eye(2))


def inflate_covariance(cov: np.ndarray, radius_sum: float, d_bnd: float) -> np.ndarray:
    """(sqrt(cov) + r/D_bnd I)^2: D >= D_bnd keeps the footprint outside the cov ellipse (exact if isotropic)."""
    root = sqrtm_psd(cov) + (radius_sum / d_bnd) * np.eye(2)
    return root @ root


def agent_precision(cov: np.ndarray, radius_sum: float, d_bnd: float) -> np.ndarray:
    return inv2(inflate_covariance(cov, radius_sum, d_bnd))


# ---------------------------------------------------------------------------
# kernels

@nb.njit(cache=True)
def _hinge_sq(z):
    return z * z if z > 0.0 else 0.0


@nb.njit(cache=True)
def state_cost(x, i, prm, w, dec_mean, dec_prec, ag_mean, ag_prec, v_t, ref_pt, ref_n, g, H, terms, want_derivs):
    """Weighted state cost at step context i; adds into g (6,), H (6, 6) and terms (6,)."""
    wi = w[i]
    px = x[0]
    py = x[1]
    v = x[3]
    # corridor
    e = ref_n[i, 0] * (px - ref_pt[i, 0]) + ref_n[i, 1] * (py - ref_pt[i, 1])
    hw = prm[P_HALF_WIDTH]
    ws = prm[P_W_SAFE] * wi
    for sign in (1.0, -1.0):
        ex = sign * e - hw
        if ex > 0.0:
            terms[0] += ws * ex * ex
            if want_derivs:
                for a in range(2):
                    g[a] += 2.0 * ws * ex * sign * ref_n[i, a]
                    for b in range(2):
                        H[a, b] += 2.0 * ws * ref_n[i, a] * ref_n[i, b]
    # target speed
    dv = v - v_t[i]
    wt = prm[P_W_SPEED] * wi
    terms[1] += wt * dv * dv
    if want_derivs:
        g[3] += 2.0 * wt * dv
        H[3, 3] += 2.0 * wt
    # speed bounds
    wk = prm[P_W_KIN] * wi
    lo = prm[P_V_MIN] - v
    hi = v - prm[P_V_MAX]
    if lo > 0.0:
        terms[2] += wk * lo * lo
        if want_derivs:
            g[3] -= 2.0 * wk * lo
            H[3, 3] += 2.0 * wk
    if hi > 0.0:
        terms[2] += wk * hi * hi
        if want_derivs:
            g[3] += 2.0 * wk * hi
            H[3, 3] += 2.0 * wk
    # decision NLL (squared Mahalanobis)
    wd = prm[P_GAMMA] * wi
    r0 = px - dec_mean[i, 0]
    r1 = py - dec_mean[i, 1]
    P = dec_prec[i]
    pr0 = P[0, 0] * r0 + P[0, 1] * r1
    pr1 = P[1, 0] * r0 + P[1, 1] * r1
    terms[4] += wd * (r0 * pr0 + r1 * pr1)
    if want_derivs:
        g[0] += 2.0 * wd * pr0
        g[1] += 2.0 * wd * pr1
        for a in range(2):
            for b in range(2):
                H[a, b] += wd * (P[a, b] + P[b, a])
    # collision hinge on the Mahalanobis distance to each agent
    d_bnd = prm[P_D_BND]
    wc = prm[P_W_COL] * wi
    for j in range(ag_mean.shape[1]):
        r0 = px - ag_mean[i, j, 0]
        r1 = py - ag_mean[i, j, 1]
        Q = ag_prec[i, j]
        q0 = Q[0, 0] * r0 + Q[0, 1] * r1
        q1 = Q[1, 0] * r0 + Q[1, 1] * r1
        D = math.sqrt(max(r0 * q0 + r1 * q1, 0.0))
        if D >= d_bnd:
            continue
        s = d_bnd - D
        terms[5] += wc * s * s
        if want_derivs and D > 1e-9:
            g0 = q0 / D
            g1 = q1 / D
            g[0] -= 2.0 * wc * s * g0
            g[1] -= 2.0 * wc * s * g1
            gd = (g0, g1)
            for a in range(2):
                for b in range(2):
                    H[a, b] += 2.0 * wc * gd[a] * gd[b]
                    if prm[P_GN] == 0.0:
                        H[a, b] -= 2.0 * wc * s * (0.5 * (Q[a, b] + Q[b, a]) - gd[a] * gd[b]) / D


@nb.njit(cache=True)
def control_cost(x, u, i, prm, w, gx, gu, Hxx, Huu, Hux, terms, want_derivs):
    """Weighted control cost of step i applied from state x; adds into the derivative buffers."""
    wi = w[i]
    a = u[0]
    k = u[1]
    v = x[3]
    # comfort
    wa = prm[P_W_ACC] * wi
    wkap = prm[P_W_CURV] * wi
    wda = prm[P_W_DACC] * wi
    wdk = prm[P_W_DCURV] * wi
    da = a - x[4]
    dk = k - x[5]
    terms[3] += wa * a * a + wkap * k * k + wda * da * da + wdk * dk * dk
    if want_derivs:
        gu[0] += 2.0 * wa * a + 2.0 * wda * da
        gu[1] += 2.0 * wkap * k + 2.0 * wdk * dk
        gx[4] -= 2.0 * wda * da
        gx[5] -= 2.0 * wdk * dk
        Huu[0, 0] += 2.0 * (wa + wda)
        Huu[1, 1] += 2.0 * (wkap + wdk)
        Hxx[4, 4] += 2.0 * wda
        Hxx[5, 5] += 2.0 * wdk
        Hux[0, 4] -= 2.0 * wda
        Hux[1, 5] -= 2.0 * wdk
    # control bounds
    wk = prm[P_W_KIN] * wi
    for idx, val, lo, hi in ((0, a, prm[P_A_MIN], prm[P_A_MAX]), (1, k, -prm[P_K_MAX], prm[P_K_MAX])):
        over = val - hi
        under = lo - val
        if over > 0.0:
            terms[2] += wk * over * over
            if want_derivs:
                gu[idx] += 2.0 * wk * over
                Huu[idx, idx] += 2.0 * wk
        if under > 0.0:
            terms[2] += wk * under * under
            if want_derivs:
                gu[idx] -= 2.0 * wk * under
                Huu[idx, idx] += 2.0 * wk
    # lateral acceleration kappa * v^2
    lat = k * v * v
    for sign in (1.0, -1.0):
        h = sign * lat - prm[P_AY_MAX]
        if h > 0.0:
            terms[2] += wk * h * h
            if want_derivs:
                dk_ = sign * v * v
                dv_ = sign * 2.0 * k * v
                gu[1] += 2.0 * wk * h * dk_
                gx[3] += 2.0 * wk * h * dv_
                Huu[1, 1] += 2.0 * wk * dk_ * dk_
                Hxx[3, 3] += 2.0 * wk * (dv_ * dv_ + h * sign * 2.0 * k)
                Hux[1, 3] += 2.0 * wk * (dk_ * dv_ + h * sign * 2.0 * v)


@nb.njit(cache=True)
def tree_cost(Xs, Us, prev, prm, w, dec_mean, dec_prec, ag_mean, ag_prec, v_t, ref_pt, ref_n):
    """Total weighted cost and per-term breakdown of a flattened trajectory tree."""
    terms = np.zeros(6)
    g = np.zeros(6)
    H = np.zeros((6, 6))
    gu = np.zeros(2)
    Huu = np.zeros((2, 2))
    Hux = np.zeros((2, 6))
    for i in range(Us.shape[0]):
        state_cost(Xs[i + 1], i, prm, w, dec_mean, dec_prec, ag_mean, ag_prec, v_t, ref_pt, ref_n,
                   g, H, terms, False)
        control_cost(Xs[prev[i]], Us[i], i, prm, w, g, gu, H, Huu, Hux, terms, False)
    return terms.sum(), terms


@nb.njit(cache=True)
def tree_derivatives(Xs, Us, prev, prm, w, dec_mean, dec_prec, ag_mean, ag_prec, v_t, ref_pt, ref_n):
    n = Us.shape[0]
    SX = np.zeros((n + 1, 6))
    SXX = np.zeros((n + 1, 6, 6))
    CX = np.zeros((n, 6))
    CU = np.zeros((n, 2))
    CXX = np.zeros((n, 6, 6))
    CUU = np.zeros((n, 2, 2))
    CUX = np.zeros((n, 2, 6))
    terms = np.zeros(6)
    for i in range(n):
        state_cost(Xs[i + 1], i, prm, w, dec_mean, dec_prec, ag_mean, ag_prec, v_t, ref_pt, ref_n,
                   SX[i + 1], SXX[i + 1], terms, True)
        control_cost(Xs[prev[i]], Us[i], i, prm, w, CX[i], CU[i], CXX[i], CUU[i], CUX[i], terms, True)
    return SX, SXX, CX, CU, CXX, CUU, CUX


# ---------------------------------------------------------------------------
# single-point wrappers

def _ctx_arrays(ctx: CostContext):
    return (ctx.weight, ctx.dec_mean, ctx.dec_prec, ctx.agent_mean, ctx.agent_prec,
            ctx.target_speed, ctx.ref_point, ctx.ref_normal)


def stage_cost(x, u, ctx: CostContext, cfg: PlannerConfig = PlannerConfig(), i: int = 0, exact: bool = True):
    """Value, gradient and Hessian of state cost(x) + control cost(x, u) for step context i.

    Returns ``(value, lx (6,), lu (2,), lxx (6,6), luu (2,2), lux (2,6), terms (6,))``.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    prm = cfg.params(gauss_newton=not exact)
    arrays = _ctx_arrays(ctx)
    terms = np.zeros(N_TERMS)
    lx = np.zeros(6)
    lxx = np.zeros((6, 6))
    lu = np.zeros(2)
    luu = np.zeros((2, 2))
    lux = np.zeros((2, 6))
    state_cost(x, i, prm, *arrays, lx, lxx, terms, True)
    control_cost(x, u, i, prm, arrays[0], lx, lu, lxx, luu, lux, terms, True)
    return float(terms.sum()), lx, lu, lxx, luu, lux, terms


def collision_cost(position, agent_means, agent_covs, p: float, w_col: float = 1.0,
                   radius_sum: float = 0.0) -> float:
    """Sum over agents of w_col * max(D_bnd - D, 0)^2 with D measured under the inflated covariance."""
    d_bnd = chi2_threshold(p)
    pos = np.asarray(position, dtype=float)
    total = 0.0
    for mean, cov in zip(np.asarray(agent_means, dtype=float), np.asarray(agent_covs, dtype=float)):
        cov = inflate_covariance(cov, radius_sum, d_bnd) if radius_sum > 0 else cov
        r = pos - mean
        D = math.sqrt(max(float(r @ inv2(cov) @ r), 0.0))
        total += w_col * max(d_bnd - D, 0.0) ** 2
    return total
