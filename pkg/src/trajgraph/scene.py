"""Scenario data model and the neutral line-delimited scenario format.

One scene per line, JSON-encoded, fields:
  scene_id, t_obs, t_f, dt, origin_rule,
  tracks[{agent_id, is_ego, past[[t,x,y,vx,vy,heading]], future[[x,y]]}],
  lanes[{lane_id, left_lane_id?, right_lane_id?, centerline[[x,y]]}]
Units are meters, seconds, radians; encoding UTF-8.

Lane centerlines are resampled into fixed-length segments at load time;
normalization translates a scene into its local frame and crops it to the
160 m x 160 m region of interest.
"""

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ParseError, ValidationError

CROP_HALF_EXTENT = 80.0  # meters; the region of interest is a 160 m square
DEFAULT_SEGMENT_LEN = 3.0

ORIGIN_EGO_LAST_STEP = "ego-last-step"
ORIGIN_GEOMETRIC_CENTER = "geometric-center"
ORIGIN_RULES = (ORIGIN_EGO_LAST_STEP, ORIGIN_GEOMETRIC_CENTER)


@dataclass
class AgentState:
    x: float
    y: float
    vx: float
    vy: float
    heading: float


@dataclass
class AgentTrack:
    agent_id: str
    past: list  # list of (timestep, AgentState), timesteps strictly increasing
    future: list  # list of (x, y) of length t_f, or None
    is_ego: bool = False

    def last_observed(self):
        return self.past[-1]

    def state_at(self, t):
        for step, state in self.past:
            if step == t:
                return state
        return None


@dataclass
class Lane:
    lane_id: str
    centerline: list  # list of (x, y), at least two points
    left_lane_id: str = None
    right_lane_id: str = None


@dataclass
class MapSegment:
    x: float
    y: float
    dx: float
    dy: float
    lane_id: str
    index_in_lane: int
    left_lane_id: str = None
    right_lane_id: str = None

    def start(self):
        return (self.x - 0.5 * self.dx, self.y - 0.5 * self.dy)

    def end(self):
        return (self.x + 0.5 * self.dx, self.y + 0.5 * self.dy)


@dataclass
class Scene:
    scene_id: str
    t_obs: int
    t_f: int
    dt: float
    origin_rule: str
    tracks: list = field(default_factory=list)
    lanes: list = field(default_factory=list)
    segments: list = field(default_factory=list)


def _require(cond, scene_id, field_name, message):
    if not cond:
        raise ValidationError(f"scene {scene_id!r}, field {field_name!r}: {message}")


def _finite(*values):
    return all(math.isfinite(v) for v in values)


def validate_scene(scene):
    """Enforce the data-model invariants; raises ValidationError."""
    _require(scene.t_obs >= 1, scene.scene_id, "t_obs", "must be >= 1")
    _require(scene.t_f >= 0, scene.scene_id, "t_f", "must be >= 0")
    _require(scene.dt > 0 and math.isfinite(scene.dt), scene.scene_id, "dt", "must be positive")
    _require(scene.origin_rule in ORIGIN_RULES, scene.scene_id, "origin_rule",
             f"must be one of {ORIGIN_RULES}")
    seen_agents = set()
    for track in scene.tracks:
        fld = f"tracks[{track.agent_id}]"
        _require(track.agent_id not in seen_agents, scene.scene_id, fld, "duplicate agent_id")
        seen_agents.add(track.agent_id)
        _require(len(track.past) >= 1, scene.scene_id, fld, "past must have at least one state")
        prev = -1
        for t, state in track.past:
            _require(isinstance(t, int) and 0 <= t < scene.t_obs, scene.scene_id, fld,
                     f"timestep {t} outside [0, {scene.t_obs})")
            _require(t > prev, scene.scene_id, fld, "past timesteps must be strictly increasing")
            prev = t
            _require(_finite(state.x, state.y, state.vx, state.vy, state.heading),
                     scene.scene_id, fld, "non-finite state")
            _require(-math.pi < state.heading <= math.pi, scene.scene_id, fld,
                     f"heading {state.heading} outside (-pi, pi]")
        if track.future is not None:
            _require(len(track.future) == scene.t_f, scene.scene_id, fld,
                     f"future length {len(track.future)} != t_f {scene.t_f}")
            for x, y in track.future:
                _require(_finite(x, y), scene.scene_id, fld, "non-finite future position")
    seen_lanes = set()
    for lane in scene.lanes:
        fld = f"lanes[{lane.lane_id}]"
        _require(lane.lane_id not in seen_lanes, scene.scene_id, fld, "duplicate lane_id")
        seen_lanes.add(lane.lane_id)
        _require(len(lane.centerline) >= 2, scene.scene_id, fld, "centerline needs >= 2 points")
        for x, y in lane.centerline:
            _require(_finite(x, y), scene.scene_id, fld, "non-finite centerline point")
    for seg in scene.segments:
        _require((seg.dx, seg.dy) != (0.0, 0.0), scene.scene_id,
                 f"segments[{seg.lane_id}:{seg.index_in_lane}]", "zero direction vector")


def segment_centerline(polyline, target_len, lane_id="", left_lane_id=None, right_lane_id=None):
    """Resample a polyline by arc length into chords of ~target_len meters.

    Cut points sit every target_len meters of arc length; the last chord
    takes whatever remains (and may be shorter). Each chord becomes one
    MapSegment with the chord midpoint and the chord vector as direction.
    """
    if len(polyline) < 2:
        raise ValidationError(f"lane {lane_id!r}: polyline needs >= 2 points")
    if target_len <= 0:
        raise ValidationError(f"lane {lane_id!r}: target_len must be positive")
    pts = np.asarray(polyline, dtype=np.float64)
    deltas = np.diff(pts, axis=0)
    lengths = np.hypot(deltas[:, 0], deltas[:, 1])
    cumulative = np.concatenate([[0.0], np.cumsum(lengths)])
    total = float(cumulative[-1])
    if total <= 0.0:
        raise ValidationError(f"lane {lane_id!r}: degenerate polyline (zero length)")

    def point_at(s):
        i = int(np.searchsorted(cumulative, s, side="right")) - 1
        i = min(max(i, 0), len(lengths) - 1)
        if lengths[i] == 0.0:
            return pts[i]
        frac = (s - cumulative[i]) / lengths[i]
        return pts[i] + frac * deltas[i]

    cut_points = [pts[0]]
    s = target_len
    while s < total - 1e-9:
        cut_points.append(point_at(s))
        s += target_len
    cut_points.append(pts[-1])

    segments = []
    for idx in range(len(cut_points) - 1):
        a, b = cut_points[idx], cut_points[idx + 1]
        segments.append(MapSegment(
            x=float((a[0] + b[0]) / 2.0), y=float((a[1] + b[1]) / 2.0),
            dx=float(b[0] - a[0]), dy=float(b[1] - a[1]),
            lane_id=lane_id, index_in_lane=idx,
            left_lane_id=left_lane_id, right_lane_id=right_lane_id))
    return segments


def build_segments(scene, segment_len=DEFAULT_SEGMENT_LEN):
    segs = []
    for lane in scene.lanes:
        segs.extend(segment_centerline(
            lane.centerline, segment_len, lane.lane_id,
            lane.left_lane_id, lane.right_lane_id))
    return segs


# --- scenario file IO -----------------------------------------------------

def _track_to_record(track):
    rec = {
        "agent_id": track.agent_id,
        "is_ego": track.is_ego,
        "past": [[t, s.x, s.y, s.vx, s.vy, s.heading] for t, s in track.past],
    }
    rec["future"] = [[x, y] for x, y in track.future] if track.future is not None else None
    return rec


def _lane_to_record(lane):
    rec = {"lane_id": lane.lane_id}
    if lane.left_lane_id is not None:
        rec["left_lane_id"] = lane.left_lane_id
    if lane.right_lane_id is not None:
        rec["right_lane_id"] = lane.right_lane_id
    rec["centerline"] = [[x, y] for x, y in lane.centerline]
    return rec


def scene_to_record(scene):
    return {
        "scene_id": scene.scene_id,
        "t_obs": scene.t_obs,
        "t_f": scene.t_f,
        "dt": scene.dt,
        "origin_rule": scene.origin_rule,
        "tracks": [_track_to_record(t) for t in scene.tracks],
        "lanes": [_lane_to_record(l) for l in scene.lanes],
    }


def _record_to_scene(rec, line_no, segment_len):
    try:
        tracks = []
        for tr in rec["tracks"]:
            past = []
            for row in tr["past"]:
                if len(row) != 6 or row[0] != int(row[0]):
                    raise ParseError(f"line {line_no}: bad past row {row!r}")
                past.append((int(row[0]), AgentState(*map(float, row[1:]))))
            future = tr.get("future")
            if future is not None:
                future = [(float(x), float(y)) for x, y in future]
            tracks.append(AgentTrack(
                agent_id=str(tr["agent_id"]), past=past, future=future,
                is_ego=bool(tr["is_ego"])))
        lanes = [Lane(
            lane_id=str(ln["lane_id"]),
            centerline=[(float(x), float(y)) for x, y in ln["centerline"]],
            left_lane_id=ln.get("left_lane_id"),
            right_lane_id=ln.get("right_lane_id")) for ln in rec["lanes"]]
        scene = Scene(
            scene_id=str(rec["scene_id"]), t_obs=int(rec["t_obs"]), t_f=int(rec["t_f"]),
            dt=float(rec["dt"]), origin_rule=str(rec["origin_rule"]),
            tracks=tracks, lanes=lanes)
    except (KeyError, TypeError, IndexError) as exc:
        raise ParseError(f"line {line_no}: malformed scene record ({exc})") from exc
    validate_scene(scene)
    scene.segments = build_segments(scene, segment_len)
    validate_scene(scene)
    return scene


def load_scenes(path, segment_len=DEFAULT_SEGMENT_LEN):
    """Read a scenario file; raises ParseError/ValidationError on bad input."""
    scenes = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            scenes.append(_record_to_scene(rec, line_no, segment_len))
    return scenes


def save_scenes(scenes, path):
    with open(path, "w", encoding="utf-8") as fh:
        for scene in scenes:
            fh.write(json.dumps(scene_to_record(scene), allow_nan=False))
            fh.write("\n")


# --- normalization --------------------------------------------------------

def _scene_origin(scene, rule):
    if rule == ORIGIN_EGO_LAST_STEP:
        egos = [t for t in scene.tracks if t.is_ego]
        if len(egos) != 1:
            raise ConfigError(
                f"scene {scene.scene_id!r}: ego-last-step needs exactly one ego track, "
                f"found {len(egos)}")
        state = egos[0].state_at(scene.t_obs - 1)
        if state is None:
            raise ConfigError(
                f"scene {scene.scene_id!r}: ego track has no state at t_obs-1")
        return state.x, state.y
    if rule == ORIGIN_GEOMETRIC_CENTER:
        xs, ys, count = 0.0, 0.0, 0
        for track in scene.tracks:
            for _, state in track.past:
                xs += state.x
                ys += state.y
                count += 1
        if count == 0:
            return 0.0, 0.0
        return xs / count, ys / count
    raise ConfigError(f"unknown origin rule {rule!r}")


def _inside_crop(x, y):
    return abs(x) <= CROP_HALF_EXTENT and abs(y) <= CROP_HALF_EXTENT


def normalize_scene(scene, rule=None):
    """Translate the scene so the rule's origin is (0,0), then crop.

    Pure translation: velocities, headings and direction vectors are
    untouched. A track is dropped only if its state at t_obs-1 lies outside
    the crop square; map segments are dropped by midpoint.
    """
    rule = rule or scene.origin_rule
    ox, oy = _scene_origin(scene, rule)
    # sub-nanometer origins are noise from re-averaging an already-centered
    # scene; snapping keeps normalization exactly idempotent
    if abs(ox) < 1e-9:
        ox = 0.0
    if abs(oy) < 1e-9:
        oy = 0.0

    tracks = []
    for track in scene.tracks:
        past = [(t, AgentState(s.x - ox, s.y - oy, s.vx, s.vy, s.heading))
                for t, s in track.past]
        future = None
        if track.future is not None:
            future = [(x - ox, y - oy) for x, y in track.future]
        moved = AgentTrack(track.agent_id, past, future, track.is_ego)
        last = moved.state_at(scene.t_obs - 1)
        if last is not None and not _inside_crop(last.x, last.y):
            continue
        tracks.append(moved)

    segments = []
    for seg in scene.segments:
        moved = replace(seg, x=seg.x - ox, y=seg.y - oy)
        if _inside_crop(moved.x, moved.y):
            segments.append(moved)

    lanes = [Lane(l.lane_id, [(x - ox, y - oy) for x, y in l.centerline],
                  l.left_lane_id, l.right_lane_id) for l in scene.lanes]

    return Scene(scene.scene_id, scene.t_obs, scene.t_f, scene.dt, rule,
                 tracks=tracks, lanes=lanes, segments=segments)
