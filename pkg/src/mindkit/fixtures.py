"""Builders for the bundled scenario fixtures (written to ``mindkit/data``)."""

from __future__ import annotations

import math
from importlib import resources
from pathlib import Path

import numpy as np

from .world import (
    Lane,
    LaneGraph,
    ObservationHistory,
    PolicySpec,
    RouteCommand,
    ScenarioFile,
    SimSettings,
    Track,
    load_scenario,
    save_scenario,
)

W = 1.75  # half lane width
DT = 0.1
H = 10

BENCH_FIXTURES = ("straight_road", "merge", "t_intersection")


def _arc(center, radius, a0, a1, step=1.0):
    n = max(int(abs(a1 - a0) * radius / step), 4)
    a = np.linspace(a0, a1, n + 1)
    return [(center[0] + radius * math.cos(t), center[1] + radius * math.sin(t)) for t in a]


def _line(p0, p1):
    return [tuple(map(float, p0)), tuple(map(float, p1))]


def _lane(lid, pts, speed, succ=()):
    pts = [(round(x, 6), round(y, 6)) for x, y in pts]
    return Lane(lid, tuple(pts), float(speed), tuple(succ))


def _track(aid, role, x, y, heading, v, accel=0.0):
    """Constant-acceleration history of H states ending at (x, y, heading, v)."""
    c, s = math.cos(heading), math.sin(heading)
    rows = []
    for k in range(H - 1, -1, -1):
        t = k * DT
        vk = max(v - accel * t, 0.0)
        back = v * t - 0.5 * accel * t * t
        rows.append([x - back * c, y - back * s, heading, vk])
    return Track(aid, role, np.asarray(rows))


def _on_lane(graph, lane_id, s):
    pl = graph[lane_id].polyline
    p = pl.point_at(s)
    return float(p[0]), float(p[1]), float(pl.heading_at(s))


def _scenario(name, lanes, tracks, route, policies=(), horizon=80):
    graph = LaneGraph(lanes)
    return ScenarioFile(graph, ObservationHistory(DT, tuple(tracks)), RouteCommand(route),
                        tuple(policies), SimSettings(horizon, DT), name=name)


# ---------------------------------------------------------------------------
# maps

def straight_road_map(length=300.0, speed=10.0):
    return [
        _lane("E", _line((0, 0), (length, 0)), speed),
        _lane("X", _line((60, -40), (60, 40)), 4.0),
    ]


def merge_map():
    ramp = [(-100.0, -22.0), (-40.0, -12.0), (0.0, -5.0), (20.0, -1.8), (40.0, 0.0)]
    return [
        _lane("M1", _line((-150, 0), (40, 0)), 12.0, ["M2"]),
        _lane("M2", _line((40, 0), (260, 0)), 12.0),
        _lane("R", ramp, 12.0, ["M2"]),
    ]


def t_intersection_map(speed=10.0, turn_speed=7.0):
    L = 90.0
    e = 6.0
    return [
        _lane("S_in", _line((W, -L), (W, -e)), speed, ["c_SN", "c_SW"]),
        _lane("N_out", _line((W, e), (W, L)), speed),
        _lane("N_in", _line((-W, L), (-W, e)), speed, ["c_NS", "c_NW"]),
        _lane("S_out", _line((-W, -e), (-W, -L)), speed),
        _lane("W_in", _line((-L, -W), (-e, -W)), speed, ["c_WN", "c_WS"]),
        _lane("W_out", _line((-e, W), (-L, W)), speed),
        _lane("c_SN", _line((W, -e), (W, e)), speed, ["N_out"]),
        _lane("c_SW", _arc((-e, -e), e + W, 0.0, math.pi / 2), turn_speed, ["W_out"]),
        _lane("c_NS", _line((-W, e), (-W, -e)), speed, ["S_out"]),
        _lane("c_NW", _arc((-e, e), e - W, 0.0, -math.pi / 2), turn_speed, ["W_out"]),
        _lane("c_WN", _arc((-e, e), e + W, -math.pi / 2, 0.0), turn_speed, ["N_out"]),
        _lane("c_WS", _arc((-e, -e), e - W, math.pi / 2, 0.0), turn_speed, ["S_out"]),
    ]


def four_way_map(speed=10.0, turn_speed=7.0, L=60.0, movements=None):
    """Four-armed intersection; approaches S, N, W, E with left/straight/right connectors.

    ``movements`` optionally restricts connectors per approach, e.g. {"W": ("s", "l")}.
    """
    e = 8.0
    # per approach: inbound lane end point, heading unit vector, left unit vector
    arms = {
        "S": (np.array([W, -e]), np.array([0.0, 1.0])),
        "N": (np.array([-W, e]), np.array([0.0, -1.0])),
        "W": (np.array([-e, -W]), np.array([1.0, 0.0])),
        "E": (np.array([e, W]), np.array([-1.0, 0.0])),
    }
    # outbound lane start per arm: the lane leaving the intersection towards that arm
    out_start = {"N": np.array([W, e]), "S": np.array([-W, -e]), "W": np.array([-e, W]), "E": np.array([e, -W])}
    out_dir = {"N": np.array([0.0, 1.0]), "S": np.array([0.0, -1.0]), "W": np.array([-1.0, 0.0]), "E": np.array([1.0, 0.0])}
    left_of = {"S": "W", "W": "N", "N": "E", "E": "S"}
    right_of = {v: k for k, v in left_of.items()}
    opposite = {"S": "N", "N": "S", "W": "E", "E": "W"}
    lanes = []
    for arm, (end, d) in arms.items():
        moves = (movements or {}).get(arm, ("l", "s", "r"))
        succ = []
        for m in moves:
            tgt = {"l": left_of[arm], "s": opposite[arm], "r": right_of[arm]}[m]
            cid = f"c_{arm}{tgt}"
            succ.append(cid)
            p1 = out_start[tgt]
            if m == "s":
                pts = _line(end, p1)
            else:
                left = np.array([-d[1], d[0]])
                sign = 1.0 if m == "l" else -1.0
                # centre lies on the turning side, level with the exit lane
                radius = abs(np.dot(p1 - end, left))
                center = end + sign * left * radius
                a0 = math.atan2(end[1] - center[1], end[0] - center[0])
                a1 = math.atan2(p1[1] - center[1], p1[0] - center[0])
                da = (a1 - a0 + math.pi) % (2 * math.pi) - math.pi
                pts = _arc(center, radius, a0, a0 + da)
            lanes.append(_lane(cid, pts, speed if m == "s" else turn_speed, [f"{tgt}_out"]))
        lanes.append(_lane(f"{arm}_in", _line(end - d * L, end), speed, sorted(succ)))
    for arm in ("N", "S", "W", "E"):
        p0 = out_start[arm]
        lanes.append(_lane(f"{arm}_out", _line(p0, p0 + out_dir[arm] * L), speed))
    lanes.sort(key=lambda l: l.id)
    return lanes


# ---------------------------------------------------------------------------
# scenarios

def straight_road():
    lanes = straight_road_map()
    g = LaneGraph(lanes)
    tracks = [
        _track("ego", "ego", 10.0, 0.0, 0.0, 8.0),
        _track("a1", "agent", 30.0, 0.0, 0.0, 6.5),
        _track("a2", "agent", *_on_lane(g, "X", 24.0), 3.0),
    ]
    pol = [PolicySpec("a1", "lane-follow", {"target_speed": 6.5}),
           PolicySpec("a2", "lane-follow", {"target_speed": 3.0})]
    return _scenario("straight_road", lanes, tracks, ("E",), pol)


def merge():
    lanes = merge_map()
    g = LaneGraph(lanes)
    ramp_len = g["R"].length
    tracks = [
        _track("ego", "ego", -12.0, 0.0, 0.0, 9.0),
        _track("a1", "agent", *_on_lane(g, "R", ramp_len - 46.0), 8.5),
        _track("a2", "agent", 14.0, 0.0, 0.0, 8.0),
    ]
    pol = [PolicySpec("a1", "lane-follow", {"target_speed": 8.5}),
           PolicySpec("a2", "lane-follow", {"target_speed": 8.0})]
    return _scenario("merge", lanes, tracks, ("M1", "M2"), pol)


def t_intersection():
    lanes = t_intersection_map()
    tracks = [
        _track("ego", "ego", W, -30.0, math.pi / 2, 6.0),
        _track("a1", "agent", -W, 30.0, -math.pi / 2, 7.0),
        _track("a2", "agent", -30.0, -W, 0.0, 6.0),
    ]
    pol = [PolicySpec("a1", "lane-follow", {"target_speed": 7.0}),
           PolicySpec("a2", "lane-follow", {"target_speed": 6.0})]
    return _scenario("t_intersection", lanes, tracks, ("S_in", "c_SW", "W_out"), pol)


def intersection_4way():
    lanes = four_way_map()
    tracks = [
        _track("ego", "ego", W, -38.0, math.pi / 2, 7.0),
        _track("a1", "agent", -W, 34.0, -math.pi / 2, 7.0),
    ]
    pol = [PolicySpec("a1", "lane-follow", {"target_speed": 7.0, "route": ["N_in", "c_NS", "S_out"]})]
    return _scenario("intersection_4way", lanes, tracks, ("S_in", "c_SN", "N_out"), pol)


def adversarial_intersection():
    """Unprotected left turn against an oncoming car that speeds up sharply two seconds in.

    The oncoming approach has no turn connectors, so the only open question is timing.
    """
    lanes = four_way_map(speed=8.0, turn_speed=6.0, movements={"N": ("s",), "W": ("s",)})
    tracks = [
        _track("ego", "ego", W, -30.0, math.pi / 2, 6.0),
        _track("a1", "agent", -W, 45.0, -math.pi / 2, 5.0),
    ]
    pol = [
        PolicySpec("a1", "adversarial-trigger", {
            "route": ["N_in", "c_NS", "S_out"], "target_speed": 5.0,
            "trigger_time": 2.0, "action": "accelerate", "value": 2.5, "speed_cap": 10.0}),
    ]
    return _scenario("adversarial_intersection", lanes, tracks, ("S_in", "c_SW", "W_out"), pol, horizon=90)


def single_lane():
    lanes = [_lane("L", _line((0, 0), (500, 0)), 8.0)]
    tracks = [_track("ego", "ego", 5.0, 0.0, 0.0, 5.0)]
    return _scenario("single_lane", lanes, tracks, ("L",), (), horizon=60)


def playback():
    """Planner-free fixture: ego cruises at 5 m/s, one agent replays a scripted path."""
    lanes = [_lane("L", _line((0, 0), (500, 0)), 8.0), _lane("L2", _line((0, 4), (500, 4)), 8.0)]
    tracks = [_track("ego", "ego", 5.0, 0.0, 0.0, 5.0), _track("a1", "agent", 20.0, 4.0, 0.0, 4.0)]
    states = [[20.0 + 0.4 * (k + 1), 4.0, 0.0, 4.0] for k in range(60)]
    pol = [PolicySpec("ego", "lane-follow", {"target_speed": 5.0}),
           PolicySpec("a1", "playback", {"states": states})]
    return _scenario("playback", lanes, tracks, ("L",), pol, horizon=50)


def collision():
    """A stopped ego and a crossing agent that drives straight through it."""
    lanes = [_lane("L", _line((0, 0), (500, 0)), 8.0), _lane("X", _line((5, -40), (5, 40)), 8.0)]
    tracks = [_track("ego", "ego", 5.0, 0.0, 0.0, 0.0), _track("a1", "agent", 5.0, -20.0, math.pi / 2, 5.0)]
    states = [[5.0, -20.0 + 0.5 * (k + 1), math.pi / 2, 5.0] for k in range(80)]
    pol = [PolicySpec("ego", "lane-follow", {"target_speed": 0.0}),
           PolicySpec("a1", "playback", {"states": states})]
    return _scenario("collision", lanes, tracks, ("L",), pol, horizon=80)


BUILDERS = {
    "straight_road": straight_road,
    "merge": merge,
    "t_intersection": t_intersection,
    "intersection_4way": intersection_4way,
    "adversarial_intersection": adversarial_intersection,
    "single_lane": single_lane,
    "playback": playback,
    "collision": collision,
}


def data_dir() -> Path:
    return Path(str(resources.files("mindkit") / "data"))


def fixture_path(name: str) -> Path:
    return data_dir() / f"{name}.json"


def load_fixture(name: str) -> ScenarioFile:
    return load_scenario(fixture_path(name))


def write_all(directory=None) -> list[Path]:
    directory = Path(directory) if directory is not None else data_dir()
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, build in BUILDERS.items():
        p = directory / f"{name}.json"
        save_scenario(build(), p)
        paths.append(p)
    return paths
