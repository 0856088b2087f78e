"""Discrete kinematic bicycle, plain and augmented with the previous control.

Augmented state layout: ``(x, y, heading, speed, a_prev, kappa_prev)``; control ``(a, kappa)``.
Storing the previous control in the state lets comfort terms on control differences
stay ordinary stage costs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

NX = 6
NU = 2
X, Y, TH, V, AP, KP = range(6)


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    heading: float
    speed: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.heading, self.speed])


@dataclass(frozen=True)
class Control:
    accel: float
    curvature: float


def bicycle_step(state: VehicleState, control: Control, dt: float) -> VehicleState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    x, y, th, v = state.x, state.y, state.heading, state.speed
    return VehicleState(
        x + dt * v * np.cos(th),
        y + dt * v * np.sin(th),
        th + dt * v * control.curvature,
        v + dt * control.accel,
    )


@nb.njit(cache=True)
def step_aug(x, u, dt, out):
    th = x[2]
    v = x[3]
    out[0] = x[0] + dt * v * np.cos(th)
    out[1] = x[1] + dt * v * np.sin(th)
    out[2] = th + dt * v * u[1]
    out[3] = v + dt * u[0]
    out[4] = u[0]
    out[5] = u[1]


@nb.njit(cache=True)
def jacobians(x, u, dt, fx, fu):
    th = x[2]
    v = x[3]
    c = np.cos(th)
    s = np.sin(th)
    fx[:, :] = 0.0
    fu[:, :] = 0.0
    fx[0, 0] = 1.0
    fx[1, 1] = 1.0
    fx[2, 2] = 1.0
    fx[3, 3] = 1.0
    fx[0, 2] = -dt * v * s
    fx[0, 3] = dt * c
    fx[1, 2] = dt * v * c
    fx[1, 3] = dt * s
    fx[2, 3] = dt * u[1]
    fu[2, 1] = dt * v
    fu[3, 0] = dt
    fu[4, 0] = 1.0
    fu[5, 1] = 1.0


@nb.njit(cache=True)
def rollout(x0, prev, U, dt):
    """States for a flattened tree: step i maps state prev[i] to state i + 1."""
    n = U.shape[0]
    Xs = np.empty((n + 1, x0.shape[0]))
    Xs[0] = x0
    for i in range(n):
        step_aug(Xs[prev[i]], U[i], dt, Xs[i + 1])
    return Xs


@nb.njit(cache=True)
def forward(Xref, Uref, K, k, alpha, prev, dt, lo, hi, clamp):
    n = Uref.shape[0]
    Xs = np.empty_like(Xref)
    Us = np.empty_like(Uref)
    Xs[0] = Xref[0]
    dx = np.empty(Xref.shape[1])
    for i in range(n):
        p = prev[i]
        for j in range(Xref.shape[1]):
            dx[j] = Xs[p, j] - Xref[p, j]
        for a in range(Uref.shape[1]):
            val = Uref[i, a] + alpha * k[i, a]
            for j in range(Xref.shape[1]):
                val += K[i, a, j] * dx[j]
            if clamp:
                val = min(max(val, lo[a]), hi[a])
            Us[i, a] = val
        step_aug(Xs[p], Us[i], dt, Xs[i + 1])
    return Xs, Us


@nb.njit(cache=True)
def all_jacobians(Xs, Us, prev, dt):
    n = Us.shape[0]
    FX = np.empty((n, NX, NX))
    FU = np.empty((n, NX, NU))
    for i in range(n):
        jacobians(Xs[prev[i]], Us[i], dt, FX[i], FU[i])
    return FX, FU


def continuity_residual(Xs: np.ndarray, Us: np.ndarray, prev: np.ndarray, dt: float) -> float:
    """Largest gap between each stored state and the dynamics applied to its predecessor."""
    if len(Us) == 0:
        return 0.0
    out = np.empty(NX)
    worst = 0.0
    for i in range(len(Us)):
        step_aug(Xs[prev[i]], Us[i], dt, out)
        worst = max(worst, float(np.max(np.abs(out - Xs[i + 1]))))
    return worst
