"""Positional Gaussians and Gaussian-mixture scene predictions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

REG_EIG_MIN = 1e-12
REG_JITTER = 1e-9
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Gaussian2:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mean, dtype=float).reshape(2)
        c = np.asarray(self.cov, dtype=float).reshape(2, 2)
        if abs(c[0, 1] - c[1, 0]) > 1e-12:
            raise ValueError("covariance must be symmetric")
        if np.linalg.eigvalsh(c)[0] < -1e-12:
            raise ValueError("covariance must be positive semi-definite")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov", c)


def regularize(cov: np.ndarray) -> np.ndarray:
    """Add REG_JITTER * I where the smallest eigenvalue is below REG_EIG_MIN."""
    cov = np.asarray(cov, dtype=float)
    a, b, d = cov[..., 0, 0], cov[..., 0, 1], cov[..., 1, 1]
    lam_min = 0.5 * (a + d) - np.sqrt(0.25 * (a - d) ** 2 + b * b)
    bad = lam_min < REG_EIG_MIN
    if not np.any(bad):
        return cov
    out = cov.copy()
    out[..., 0, 0] = np.where(bad, a + REG_JITTER, a)
    out[..., 1, 1] = np.where(bad, d + REG_JITTER, d)
    return out


def inv2(cov: np.ndarray) -> np.ndarray:
    """Closed-form inverse of (batched) 2x2 matrices."""
    a, b, c, d = cov[..., 0, 0], cov[..., 0, 1], cov[..., 1, 0], cov[..., 1, 1]
    det = a * d - b * c
    out = np.empty_like(cov)
    out[..., 0, 0] = d / det
    out[..., 0, 1] = -b / det
    out[..., 1, 0] = -c / det
    out[..., 1, 1] = a / det
    return out


def propagate_linear(pos: Gaussian2, action: Gaussian2, dt: float) -> Gaussian2:
    """One single-integrator step: position plus dt times an independent velocity Gaussian."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return Gaussian2(pos.mean + dt * action.mean, pos.cov + dt * dt * action.cov)


def propagate_sequence(mean0, cov0, action_means, action_covs, dt: float):
    """Apply propagate_linear recursively along axis 0 of the action arrays.

    Returns (means, covs) for steps 1..T; extra leading dims (e.g. entities) broadcast.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    means = np.asarray(mean0, dtype=float) + dt * np.cumsum(action_means, axis=0)
    covs = np.asarray(cov0, dtype=float) + (dt * dt) * np.cumsum(action_covs, axis=0)
    return means, covs


def mahalanobis_sq_batch(points, means, covs) -> np.ndarray:
    r = np.asarray(points, dtype=float) - np.asarray(means, dtype=float)
    P = inv2(regularize(covs))
    return np.einsum("...i,...ij,...j->...", r, P, r)


def mahalanobis(point, g: Gaussian2) -> float:
    return float(np.sqrt(max(mahalanobis_sq_batch(point, g.mean, g.cov), 0.0)))


def nll(point, g: Gaussian2) -> float:
    """Negative log density of a 2-D Gaussian."""
    cov = regularize(g.cov)
    d2 = mahalanobis_sq_batch(point, g.mean, cov)
    return float(0.5 * d2 + LOG_2PI + 0.5 * math.log(np.linalg.det(cov)))


def entropy(g: Gaussian2) -> float:
    return 1.0 + LOG_2PI + 0.5 * math.log(np.linalg.det(regularize(g.cov)))


def chi2_threshold(p: float) -> float:
    """Mahalanobis radius D with P{D <= radius} = 1 - p for a 2-D Gaussian."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"violation probability must be in (0, 1), got {p}")
    return math.sqrt(-2.0 * math.log(p))


def sqrtm_psd(cov: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(np.asarray(cov, dtype=float))
    return (V * np.sqrt(np.clip(w, 0.0, None))[..., None, :]) @ np.swapaxes(V, -1, -2)


def sample(g: Gaussian2, n: int, seed) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, 2))
    return g.mean + z @ sqrtm_psd(g.cov).T


# ---------------------------------------------------------------------------
# Scene prediction containers

@dataclass(frozen=True)
class ScenarioNode:
    """One time step of one predicted scenario: weight plus a Gaussian per entity."""

    weight: float
    gaussians: dict


@dataclass
class PredictedScenario:
    """K-th joint future: per-step, per-entity positional Gaussians sharing one weight.

    ``means`` is (T, E, 2) and ``covs`` (T, E, 2, 2) for steps 1..T; ``start_means`` and
    ``start_covs`` hold the step-0 state the prediction was rolled out from.
    """

    weight: float
    means: np.ndarray
    covs: np.ndarray
    entity_ids: tuple
    start_means: np.ndarray
    start_covs: np.ndarray
    label: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.weight <= 1.0 + 1e-12:
            raise ValueError(f"scenario weight {self.weight} outside [0, 1]")
        if self.means.ndim != 3 or len(self.means) < 1:
            raise ValueError("scenario needs at least one step")

    def __len__(self) -> int:
        return len(self.means)

    @property
    def n_entities(self) -> int:
        return len(self.entity_ids)

    def node(self, t: int) -> ScenarioNode:
        """Scenario node at step t (1-based)."""
        return ScenarioNode(self.weight, {
            eid: Gaussian2(self.means[t - 1, i], self.covs[t - 1, i]) for i, eid in enumerate(self.entity_ids)
        })

    def full_means(self) -> np.ndarray:
        """(T+1, E, 2) means including the start state."""
        return np.concatenate([self.start_means[None], self.means], axis=0)

    def full_covs(self) -> np.ndarray:
        return np.concatenate([self.start_covs[None], self.covs], axis=0)

    def truncated(self, n: int) -> "PredictedScenario":
        return PredictedScenario(self.weight, self.means[:n], self.covs[:n], self.entity_ids,
                                 self.start_means, self.start_covs, dict(self.label))

    def with_weight(self, w: float) -> "PredictedScenario":
        return PredictedScenario(w, self.means, self.covs, self.entity_ids,
                                 self.start_means, self.start_covs, dict(self.label))


@dataclass
class ScenePrediction:
    scenarios: list
    dt: float

    def __post_init__(self):
        total = sum(s.weight for s in self.scenarios)
        if not self.scenarios or abs(total - 1.0) > 1e-9:
            raise ValueError(f"scenario weights must sum to 1, got {total}")

    def __len__(self) -> int:
        return len(self.scenarios)

    @property
    def weights(self) -> np.ndarray:
        return np.asarray([s.weight for s in self.scenarios])

    @property
    def entity_ids(self) -> tuple:
        return self.scenarios[0].entity_ids


def normalized(scenarios: Sequence[PredictedScenario]) -> list:
    total = sum(s.weight for s in scenarios)
    return [s.with_weight(s.weight / total) for s in scenarios]
