"""Planar polyline helpers shared by the map, predictor and cost modules."""

from __future__ import annotations

import math

import numpy as np


def wrap_angle(a):
    """Wrap an angle (scalar or array) into (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    if np.ndim(w) == 0:
        return float(w)
    return w


class Polyline:
    """Arc-length parameterised polyline. Extrapolates linearly past both ends."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError("polyline needs at least two 2-D points")
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len <= 0.0):
            raise ValueError("polyline has coincident consecutive points")
        self.points = pts
        self.seg_len = seg_len
        self.tangents = seg / seg_len[:, None]
        self.normals = np.stack([-self.tangents[:, 1], self.tangents[:, 0]], axis=1)
        self.cum = np.concatenate([[0.0], np.cumsum(seg_len)])
        self.length = float(self.cum[-1])

    def _segment_index(self, s):
        idx = np.searchsorted(self.cum, s, side="right") - 1
        return np.clip(idx, 0, len(self.seg_len) - 1)

    def point_at(self, s, lateral=0.0):
        s = np.asarray(s, dtype=float)
        i = self._segment_index(s)
        ds = s - self.cum[i]
        p = self.points[i] + ds[..., None] * self.tangents[i]
        return p + np.asarray(lateral, dtype=float)[..., None] * self.normals[i]

    def heading_at(self, s):
        i = self._segment_index(np.asarray(s, dtype=float))
        t = self.tangents[i]
        return np.arctan2(t[..., 1], t[..., 0])

    def project(self, point, extend: bool = True):
        """Return (s, signed lateral offset, distance) of the closest point.

        Lateral offset is positive to the left of the direction of travel.
        With ``extend`` the end segments are treated as rays.
        """
        p = np.asarray(point, dtype=float)
        rel = p - self.points[:-1]
        t = np.einsum("ij,ij->i", rel, self.tangents)
        n_seg = len(self.seg_len)
        lo = np.zeros(n_seg)
        hi = self.seg_len.copy()
        if extend:
            lo[0] = -np.inf
            hi[-1] = np.inf
        tc = np.clip(t, lo, hi)
        closest = self.points[:-1] + tc[:, None] * self.tangents
        d = np.hypot(p[0] - closest[:, 0], p[1] - closest[:, 1])
        i = int(np.argmin(d))
        lat = float(np.dot(p - closest[i], self.normals[i]))
        if abs(abs(lat) - d[i]) > 1e-9:
            # closest point is a vertex: keep the sign from the cross product
            v = p - closest[i]
            cross = self.tangents[i][0] * v[1] - self.tangents[i][1] * v[0]
            lat = math.copysign(d[i], float(cross))
        return float(self.cum[i] + tc[i]), lat, float(d[i])

    def distance(self, point):
        return self.project(point)[2]


def segment_intersections(a: np.ndarray, b: np.ndarray, tol: float = 1e-9):
    """All intersections of two polylines as (s_a, s_b) arc-length pairs, sorted by s_a."""
    out = []
    ca = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(a, axis=0).T))])
    cb = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(b, axis=0).T))])
    for i in range(len(a) - 1):
        p, r = a[i], a[i + 1] - a[i]
        for j in range(len(b) - 1):
            q, s = b[j], b[j + 1] - b[j]
            denom = r[0] * s[1] - r[1] * s[0]
            if abs(denom) < 1e-12:
                continue
            qp = q - p
            t = (qp[0] * s[1] - qp[1] * s[0]) / denom
            u = (qp[0] * r[1] - qp[1] * r[0]) / denom
            if -tol <= t <= 1 + tol and -tol <= u <= 1 + tol:
                t = min(max(t, 0.0), 1.0)
                u = min(max(u, 0.0), 1.0)
                out.append((ca[i] + t * (ca[i + 1] - ca[i]), cb[j] + u * (cb[j + 1] - cb[j])))
    out.sort()
    return out
