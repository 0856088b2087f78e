"""Static SVG rendering of lanes, predicted Gaussians and planned trajectories."""

from __future__ import annotations

import math

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")


class Canvas:
    def __init__(self, points: np.ndarray, scale: float = 6.0, pad: float = 5.0):
        lo = points.min(axis=0) - pad
        hi = points.max(axis=0) + pad
        self.lo, self.hi, self.scale = lo, hi, scale
        self.items = []

    def xy(self, p):
        return (p[0] - self.lo[0]) * self.scale, (self.hi[1] - p[1]) * self.scale

    def polyline(self, pts, color, width=1.0, opacity=1.0, dash=None):
        coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in (self.xy(p) for p in pts))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.items.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                          f'stroke-width="{width}" stroke-opacity="{opacity:.3f}"{extra}/>')

    def ellipse(self, mean, cov, color, n_sigma=2.0, opacity=0.25):
        w, V = np.linalg.eigh(np.asarray(cov))
        w = np.sqrt(np.clip(w, 1e-12, None)) * n_sigma * self.scale
        angle = -math.degrees(math.atan2(V[1, 1], V[0, 1]))
        cx, cy = self.xy(mean)
        self.items.append(f'<ellipse cx="{cx:.2f}" cy="{cy:.2f}" rx="{w[1]:.2f}" ry="{w[0]:.2f}" '
                          f'transform="rotate({angle:.2f} {cx:.2f} {cy:.2f})" fill="{color}" '
                          f'fill-opacity="{opacity:.3f}" stroke="none"/>')

    def circle(self, p, r, color):
        cx, cy = self.xy(p)
        self.items.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{r * self.scale:.2f}" fill="{color}"/>')

    def render(self) -> str:
        w = (self.hi[0] - self.lo[0]) * self.scale
        h = (self.hi[1] - self.lo[1]) * self.scale
        body = "\n".join(self.items)
        return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0f}" height="{h:.0f}" '
                f'viewBox="0 0 {w:.2f} {h:.2f}">\n<rect width="100%" height="100%" fill="white"/>\n'
                f"{body}\n</svg>\n")


def _canvas(lane_graph, extra_points):
    pts = [np.asarray(l.centerline) for l in lane_graph.lanes]
    pts.extend(np.asarray(p).reshape(-1, 2) for p in extra_points)
    return Canvas(np.concatenate(pts, axis=0))


def _lanes(canvas, lane_graph):
    for lane in lane_graph.lanes:
        canvas.polyline(lane.centerline, "#bbbbbb", width=2.0)


def render_prediction(lane_graph, pred, ellipse_every: int = 10) -> str:
    c = _canvas(lane_graph, [s.means for s in pred.scenarios])
    _lanes(c, lane_graph)
    for k, sc in enumerate(pred.scenarios):
        color = PALETTE[k % len(PALETTE)]
        for e in range(sc.n_entities):
            for t in range(ellipse_every - 1, len(sc), ellipse_every):
                c.ellipse(sc.means[t, e], sc.covs[t, e], color, opacity=0.15)
            c.polyline(sc.full_means()[:, e], color, width=1.5, opacity=max(sc.weight, 0.3))
    for e in range(pred.scenarios[0].n_entities):
        c.circle(pred.scenarios[0].start_means[e], 1.0, "#000000" if e == 0 else "#555555")
    return c.render()


def render_tree(lane_graph, tree) -> str:
    c = _canvas(lane_graph, [n.path_means for n in tree.leaves])
    _lanes(c, lane_graph)
    for k, leaf in enumerate(tree.leaves):
        color = PALETTE[k % len(PALETTE)]
        for e in range(leaf.path_means.shape[1]):
            c.polyline(leaf.path_means[:, e], color, width=1.0, opacity=0.6)
    return c.render()


def render_plan(lane_graph, tree, traj) -> str:
    c = _canvas(lane_graph, [traj.states[:, :2]] + [n.path_means for n in tree.leaves])
    _lanes(c, lane_graph)
    for leaf in tree.leaves:
        for e in range(1, leaf.path_means.shape[1]):
            c.polyline(leaf.path_means[:, e], "#d62728", width=1.0, opacity=0.4, dash="3,2")
    for nid, parent, a, b in traj.layout.segments:
        start = traj.states[traj.layout.prev[a]][None, :2] if b > a else traj.states[:1, :2]
        c.polyline(np.concatenate([start, traj.states[a + 1:b + 1, :2]]), "#1f77b4", width=2.0)
    c.circle(traj.states[0, :2], 1.0, "#000000")
    return c.render()
