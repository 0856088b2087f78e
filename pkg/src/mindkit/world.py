"""Scenario data model: lane graph, observation history, route commands and the
scenario JSON format."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .geometry import Polyline, wrap_angle

LATERAL_ATTACH_MAX = 5.0
ROUTE_MAX_LEN = 80.0
HEADING_WEIGHT = 2.0  # m of lateral distance per rad of heading mismatch when attaching


class ScenarioError(Exception):
    """Invalid scenario input."""


class ScenarioParseError(ScenarioError):
    pass


class ScenarioSchemaError(ScenarioError):
    pass


class ScenarioReferenceError(ScenarioError):
    pass


class NoLaneError(ScenarioError):
    """Raised when a position cannot be attached to any lane."""


@dataclass(frozen=True)
class Lane:
    id: str
    centerline: tuple
    speed_limit: float
    successors: tuple = ()
    left: str | None = None
    right: str | None = None

    @cached_property
    def polyline(self) -> Polyline:
        return Polyline(self.centerline)

    @property
    def length(self) -> float:
        return self.polyline.length


class LaneGraph:
    """Flat lane-polyline graph. Immutable once built."""

    def __init__(self, lanes: Iterable[Lane]):
        self._lanes: dict[str, Lane] = {}
        for lane in lanes:
            if lane.id in self._lanes:
                raise ScenarioSchemaError(f"duplicate lane id {lane.id!r}")
            self._lanes[lane.id] = lane
        for lane in self._lanes.values():
            if len(lane.centerline) < 2:
                raise ScenarioSchemaError(f"lane {lane.id!r} needs at least 2 centerline points")
            try:
                lane.polyline
            except ValueError as exc:
                raise ScenarioSchemaError(f"lane {lane.id!r}: {exc}") from None
            for ref in (*lane.successors, lane.left, lane.right):
                if ref is not None and ref not in self._lanes:
                    raise ScenarioReferenceError(f"lane {lane.id!r} references unknown lane {ref!r}")
        self._route_cache: dict[tuple, "RoutePath"] = {}
        pts = [np.asarray(l.centerline) for l in self._lanes.values()]
        self._bbox = np.asarray([[p[:, 0].min(), p[:, 1].min(), p[:, 0].max(), p[:, 1].max()] for p in pts])

    def __contains__(self, lane_id: str) -> bool:
        return lane_id in self._lanes

    def __getitem__(self, lane_id: str) -> Lane:
        return self._lanes[lane_id]

    @property
    def lanes(self) -> list[Lane]:
        return list(self._lanes.values())

    def route_path(self, lane_ids: Sequence[str]) -> "RoutePath":
        key = tuple(lane_ids)
        path = self._route_cache.get(key)
        if path is None:
            path = RoutePath(self, key)
            self._route_cache[key] = path
        return path

    def attach(self, position, heading: float | None = None,
               lateral_attach_max: float = LATERAL_ATTACH_MAX) -> tuple[Lane, float]:
        """Pick the lane an agent is driving on; returns (lane, arc length on it)."""
        best = None
        x, y = float(position[0]), float(position[1])
        bb = self._bbox
        near = ((bb[:, 0] - lateral_attach_max <= x) & (x <= bb[:, 2] + lateral_attach_max)
                & (bb[:, 1] - lateral_attach_max <= y) & (y <= bb[:, 3] + lateral_attach_max))
        for lane, ok in zip(self._lanes.values(), near):
            if not ok:
                continue
            s, _, d = lane.polyline.project(position, extend=False)
            if d > lateral_attach_max:
                continue
            mismatch = 0.0
            if heading is not None:
                mismatch = abs(wrap_angle(heading - float(lane.polyline.heading_at(s))))
            at_start = s <= 1e-6
            key = (round(d + HEADING_WEIGHT * mismatch, 6), at_start, lane.id)
            if best is None or key < best[0]:
                best = (key, lane, s)
        if best is None:
            raise NoLaneError(
                f"position ({position[0]:.2f}, {position[1]:.2f}) is farther than "
                f"{lateral_attach_max} m from every lane")
        return best[1], best[2]


class RoutePath:
    """Centerline of a lane sequence as a single polyline."""

    def __init__(self, graph: LaneGraph, lane_ids: tuple):
        pts: list = []
        starts = []
        total = 0.0
        for lid in lane_ids:
            lane = graph[lid]
            starts.append(total)
            c = np.asarray(lane.centerline, dtype=float)
            if pts and np.allclose(pts[-1], c[0]):
                c = c[1:]
            pts.extend(c)
            total += lane.length
        self.lane_ids = lane_ids
        self.polyline = Polyline(np.asarray(pts))
        self.lane_starts = np.asarray(starts)
        self.speed_limits = np.asarray([graph[l].speed_limit for l in lane_ids])

    @property
    def length(self) -> float:
        return self.polyline.length

    def lane_index_at(self, s: float) -> int:
        return int(np.clip(np.searchsorted(self.lane_starts, s, side="right") - 1, 0, len(self.lane_ids) - 1))

    def speed_limit_at(self, s: float) -> float:
        return float(self.speed_limits[self.lane_index_at(s)])


@dataclass(frozen=True)
class RouteCommand:
    lane_ids: tuple

    def __post_init__(self):
        object.__setattr__(self, "lane_ids", tuple(self.lane_ids))
        if not self.lane_ids:
            raise ScenarioSchemaError("route command must name at least one lane")

    def validate(self, graph: LaneGraph) -> None:
        for lid in self.lane_ids:
            if lid not in graph:
                raise ScenarioReferenceError(f"route references unknown lane {lid!r}")
        for a, b in zip(self.lane_ids, self.lane_ids[1:]):
            if b not in graph[a].successors:
                raise ScenarioReferenceError(f"route lanes {a!r} -> {b!r} are not connected")


@dataclass(frozen=True)
class Track:
    """Observed states of one entity, rows are (x, y, heading, speed)."""

    id: str
    role: str
    states: np.ndarray

    def __post_init__(self):
        st = np.array(self.states, dtype=float)
        if st.ndim != 2 or st.shape[1] != 4 or len(st) < 1:
            raise ScenarioSchemaError(f"agent {self.id!r}: states must be an (H, 4) array with H >= 1")
        if not np.all(np.isfinite(st)):
            raise ScenarioSchemaError(f"agent {self.id!r}: non-finite state")
        st.setflags(write=False)
        object.__setattr__(self, "states", st)
        if self.role not in ("ego", "agent"):
            raise ScenarioSchemaError(f"agent {self.id!r}: unknown role {self.role!r}")

    @property
    def current(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True)
class ObservationHistory:
    dt: float
    tracks: tuple

    def __post_init__(self):
        object.__setattr__(self, "tracks", tuple(self.tracks))
        if self.dt <= 0:
            raise ScenarioSchemaError("history dt must be positive")
        egos = [t for t in self.tracks if t.role == "ego"]
        if len(egos) != 1:
            raise ScenarioSchemaError(f"history needs exactly one ego, found {len(egos)}")
        lengths = {len(t.states) for t in self.tracks}
        if len(lengths) != 1:
            raise ScenarioSchemaError("all agents must share the same history length")
        ids = [t.id for t in self.tracks]
        if len(set(ids)) != len(ids):
            raise ScenarioSchemaError("duplicate agent ids in history")

    @property
    def H(self) -> int:
        return len(self.tracks[0].states)

    @property
    def ego(self) -> Track:
        return next(t for t in self.tracks if t.role == "ego")

    @property
    def agents(self) -> list[Track]:
        """Non-ego tracks in id order."""
        return sorted((t for t in self.tracks if t.role != "ego"), key=lambda t: t.id)

    @property
    def n_agents(self) -> int:
        return len(self.tracks) - 1

    @property
    def entities(self) -> list[Track]:
        """Ego first, then agents in id order; the order used by predictions."""
        return [self.ego, *self.agents]

    def track(self, agent_id: str) -> Track:
        for t in self.tracks:
            if t.id == agent_id:
                return t
        raise KeyError(agent_id)


@dataclass(frozen=True)
class PolicySpec:
    agent_id: str
    kind: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SimSettings:
    horizon_steps: int
    dt: float


@dataclass(frozen=True)
class ScenarioFile:
    lane_graph: LaneGraph
    history: ObservationHistory
    ego_route: RouteCommand
    policies: tuple
    sim: SimSettings
    name: str | None = None

    @property
    def n_agents(self) -> int:
        return self.history.n_agents

    def policy_for(self, agent_id: str) -> PolicySpec | None:
        for p in self.policies:
            if p.agent_id == agent_id:
                return p
        return None


# ---------------------------------------------------------------------------
# JSON I/O

POLICY_KINDS = ("playback", "lane-follow", "adversarial-trigger")


def _require(d: dict, key: str, where: str):
    if not isinstance(d, dict):
        raise ScenarioSchemaError(f"{where}: expected an object")
    if key not in d:
        raise ScenarioSchemaError(f"{where}: missing field {key!r}")
    return d[key]


def scenario_from_dict(data: dict) -> ScenarioFile:
    if not isinstance(data, dict):
        raise ScenarioSchemaError("scenario must be a JSON object")
    m = _require(data, "map", "scenario")
    lanes_raw = _require(m, "lanes", "map")
    lanes = []
    for i, ld in enumerate(lanes_raw):
        where = f"map.lanes[{i}]"
        try:
            centerline = tuple((float(p[0]), float(p[1])) for p in _require(ld, "centerline", where))
            lanes.append(Lane(
                id=str(_require(ld, "id", where)),
                centerline=centerline,
                speed_limit=float(_require(ld, "speed_limit", where)),
                successors=tuple(str(s) for s in _require(ld, "successors", where)),
                left=None if ld.get("left") is None else str(ld["left"]),
                right=None if ld.get("right") is None else str(ld["right"]),
            ))
        except (TypeError, IndexError, ValueError) as exc:
            raise ScenarioSchemaError(f"{where}: {exc}") from None
    graph = LaneGraph(lanes)

    h = _require(data, "history", "scenario")
    tracks = []
    for i, ad in enumerate(_require(h, "agents", "history")):
        where = f"history.agents[{i}]"
        try:
            tracks.append(Track(
                id=str(_require(ad, "id", where)),
                role=str(_require(ad, "role", where)),
                states=np.asarray(_require(ad, "states", where), dtype=float),
            ))
        except (TypeError, ValueError) as exc:
            raise ScenarioSchemaError(f"{where}: {exc}") from None
    history = ObservationHistory(dt=float(_require(h, "dt", "history")), tracks=tuple(tracks))

    route = RouteCommand(tuple(str(x) for x in _require(data, "ego_route", "scenario")))
    route.validate(graph)

    ids = {t.id for t in tracks}
    policies = []
    for i, pd in enumerate(_require(data, "policies", "scenario")):
        where = f"policies[{i}]"
        agent_id = str(_require(pd, "agent_id", where))
        kind = str(_require(pd, "kind", where))
        if agent_id not in ids:
            raise ScenarioReferenceError(f"{where}: unknown agent id {agent_id!r}")
        if kind not in POLICY_KINDS:
            raise ScenarioSchemaError(f"{where}: unknown policy kind {kind!r}")
        params = pd.get("params", {})
        for key in ("route", "new_route"):
            if key in params:
                RouteCommand(tuple(params[key])).validate(graph)
        policies.append(PolicySpec(agent_id, kind, dict(params)))

    s = _require(data, "sim", "scenario")
    sim = SimSettings(horizon_steps=int(_require(s, "horizon_steps", "sim")), dt=float(_require(s, "dt", "sim")))
    if sim.horizon_steps < 1 or sim.dt <= 0:
        raise ScenarioSchemaError("sim: horizon_steps must be >= 1 and dt > 0")
    return ScenarioFile(graph, history, route, tuple(policies), sim, name=data.get("name"))


def scenario_to_dict(sc: ScenarioFile) -> dict:
    lanes = []
    for lane in sc.lane_graph.lanes:
        d: dict[str, Any] = {
            "id": lane.id,
            "centerline": [[x, y] for x, y in lane.centerline],
            "speed_limit": lane.speed_limit,
            "successors": list(lane.successors),
        }
        if lane.left is not None:
            d["left"] = lane.left
        if lane.right is not None:
            d["right"] = lane.right
        lanes.append(d)
    out = {
        "map": {"lanes": lanes},
        "history": {
            "dt": sc.history.dt,
            "agents": [{"id": t.id, "role": t.role, "states": t.states.tolist()} for t in sc.history.tracks],
        },
        "ego_route": list(sc.ego_route.lane_ids),
        "policies": [{"agent_id": p.agent_id, "kind": p.kind, "params": p.params} for p in sc.policies],
        "sim": {"horizon_steps": sc.sim.horizon_steps, "dt": sc.sim.dt},
    }
    if sc.name is not None:
        out["name"] = sc.name
    return out


def _round_floats(obj):
    if isinstance(obj, bool) or obj is None:
        return obj
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValueError("non-finite float in canonical JSON")
        return float(f"{obj:.9g}")
    if isinstance(obj, (np.floating,)):
        return _round_floats(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, dict):
        return {str(k): _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _round_floats(obj.tolist())
    return obj


def canonical_json(obj) -> str:
    """Sorted keys, floats at 9 significant digits, trailing newline."""
    return json.dumps(_round_floats(obj), sort_keys=True, indent=1, ensure_ascii=False) + "\n"


def serialize(sc: ScenarioFile) -> str:
    return canonical_json(scenario_to_dict(sc))


def load_scenario(path) -> ScenarioFile:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ScenarioError(f"scenario file not found: {path}") from None
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"{path}: malformed JSON ({exc})") from None
    return scenario_from_dict(data)


def save_scenario(sc: ScenarioFile, path) -> None:
    Path(path).write_text(serialize(sc), encoding="utf-8")


# ---------------------------------------------------------------------------
# Route enumeration

def candidate_routes(graph: LaneGraph, state, max_len: float = ROUTE_MAX_LEN,
                     lateral_attach_max: float = LATERAL_ATTACH_MAX) -> list[RouteCommand]:
    """Every successor-linked lane sequence from the attached lane reaching ``max_len``
    metres ahead (or a dead end), sorted lexicographically by lane ids."""
    x, y = float(state[0]), float(state[1])
    heading = float(state[2]) if len(state) > 2 else None
    start, s0 = graph.attach((x, y), heading, lateral_attach_max)
    routes: set[tuple] = set()
    stack = [((start.id,), start.length - s0)]
    while stack:
        ids, ahead = stack.pop()
        succ = graph[ids[-1]].successors
        if ahead >= max_len or not succ:
            routes.add(ids)
            continue
        for nxt in succ:
            if nxt in ids:  # loop guard
                routes.add(ids)
                continue
            stack.append((ids + (nxt,), ahead + graph[nxt].length))
    return [RouteCommand(r) for r in sorted(routes)]


def route_turn(graph: LaneGraph, route: RouteCommand) -> str:
    """Classify a route as 'left', 'straight' or 'right' by its net heading change."""
    path = graph.route_path(route.lane_ids).polyline
    dh = wrap_angle(float(path.heading_at(path.length)) - float(path.heading_at(0.0)))
    if dh > math.pi / 4:
        return "left"
    if dh < -math.pi / 4:
        return "right"
    return "straight"


def resolve_command(graph: LaneGraph, ego_state, spec: str, max_len: float = ROUTE_MAX_LEN) -> RouteCommand:
    """Turn a CLI command ('left'/'straight'/'right' or comma separated lane ids) into a route."""
    spec = spec.strip()
    if spec in ("left", "straight", "right"):
        for r in candidate_routes(graph, ego_state, max_len):
            if route_turn(graph, r) == spec:
                return r
        raise ScenarioReferenceError(f"no {spec!r} route available for the ego")
    route = RouteCommand(tuple(s.strip() for s in spec.split(",") if s.strip()))
    route.validate(graph)
    return route
