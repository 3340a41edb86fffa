import json
import math

import numpy as np
import pytest

from trajgraph.errors import ConfigError, ParseError, ValidationError
from trajgraph.scene import (
    AgentState, AgentTrack, Lane, Scene, build_segments, load_scenes,
    normalize_scene, save_scenes, segment_centerline,
)
from trajgraph.synthetic import SyntheticSpec, generate_synthetic

from oracles import polyline_arc_length


def make_scene(tracks, lanes=(), scene_id="s0", t_obs=3, t_f=2, dt=0.1,
               origin_rule="geometric-center"):
    scene = Scene(scene_id, t_obs, t_f, dt, origin_rule,
                  tracks=list(tracks), lanes=list(lanes))
    scene.segments = build_segments(scene)
    return scene


def straight_track(agent_id, x0=0.0, y0=0.0, vx=1.0, vy=0.0, t_obs=3, t_f=2,
                   dt=0.1, is_ego=False):
    past = [(t, AgentState(x0 + vx * dt * t, y0 + vy * dt * t, vx, vy, 0.0))
            for t in range(t_obs)]
    lx, ly = past[-1][1].x, past[-1][1].y
    future = [(lx + vx * dt * k, ly + vy * dt * k) for k in range(1, t_f + 1)]
    return AgentTrack(agent_id, past, future, is_ego)


# --- file format ----------------------------------------------------------

def test_empty_file_gives_empty_list(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    assert load_scenes(path) == []


def test_round_trip_identity(tmp_path):
    spec = SyntheticSpec(scenes=3, agents=2, lanes=2, t_obs=4, t_f=5, dt=0.1, noise=0.1)
    scenes = generate_synthetic(spec, seed=9)
    path = tmp_path / "scenes.jsonl"
    save_scenes(scenes, path)
    reloaded = load_scenes(path, segment_len=spec.segment_len)
    assert reloaded == scenes


def test_future_length_mismatch_rejected(tmp_path):
    track = straight_track("a0", t_f=2)
    track.future = track.future[:1]
    scene = Scene("bad", 3, 2, 0.1, "geometric-center", tracks=[track])
    path = tmp_path / "bad.jsonl"
    save_scenes([scene], path)
    with pytest.raises(ValidationError, match="bad.*future"):
        load_scenes(path)


def test_malformed_json_names_line(tmp_path):
    path = tmp_path / "broken.jsonl"
    path.write_text("{ not json }\n")
    with pytest.raises(ParseError, match="line 1"):
        load_scenes(path)


def test_missing_field_is_parse_error(tmp_path):
    path = tmp_path / "missing.jsonl"
    path.write_text(json.dumps({"scene_id": "x"}) + "\n")
    with pytest.raises(ParseError, match="line 1"):
        load_scenes(path)


def test_non_finite_position_rejected(tmp_path):
    scene = make_scene([straight_track("a0")])
    rec = json.loads(json.dumps({
        "scene_id": "s0", "t_obs": 3, "t_f": 2, "dt": 0.1,
        "origin_rule": "geometric-center",
        "tracks": [{"agent_id": "a0", "is_ego": False,
                    "past": [[0, 0.0, 0.0, 1.0, 0.0, 0.0]], "future": None}],
        "lanes": []}))
    rec["tracks"][0]["past"][0][1] = float("nan")
    path = tmp_path / "nan.jsonl"
    path.write_text(json.dumps(rec) + "\n")
    with pytest.raises(ValidationError, match="non-finite"):
        load_scenes(path)
    del scene


def test_duplicate_agent_id_rejected(tmp_path):
    scene = make_scene([straight_track("a0"), straight_track("a0", y0=5.0)])
    path = tmp_path / "dup.jsonl"
    save_scenes([scene], path)
    with pytest.raises(ValidationError, match="duplicate agent_id"):
        load_scenes(path)


# --- normalization --------------------------------------------------------

def test_centered_scene_unchanged():
    tracks = [straight_track("a0", x0=-5.0, y0=-5.0),
              straight_track("a1", x0=5.0 - 0.2, y0=10.0)]
    # shift a1 so the mean of all past positions is exactly zero
    sum_x = sum(s.x for t in tracks for _, s in t.past)
    sum_y = sum(s.y for t in tracks for _, s in t.past)
    n = sum(len(t.past) for t in tracks)
    tracks[1] = straight_track("a1", x0=tracks[1].past[0][1].x - sum_x / n * n / len(tracks[1].past),
                               y0=tracks[1].past[0][1].y - sum_y / n * n / len(tracks[1].past))
    scene = make_scene(tracks)
    norm = normalize_scene(scene)
    ox = sum(s.x for t in norm.tracks for _, s in t.past)
    oy = sum(s.y for t in norm.tracks for _, s in t.past)
    assert abs(ox) < 1e-9 and abs(oy) < 1e-9


def test_single_agent_translated_to_origin():
    track = straight_track("a0", x0=500.0, y0=0.0, vx=0.0, vy=0.0, t_obs=1, t_f=0)
    scene = make_scene([track], t_obs=1, t_f=0)
    norm = normalize_scene(scene)
    assert len(norm.tracks) == 1
    state = norm.tracks[0].past[0][1]
    assert (state.x, state.y) == (0.0, 0.0)


def test_segment_outside_crop_dropped():
    lane = Lane("l0", [(78.0, 0.0), (84.0, 0.0)])  # one 6 m lane, midpoint 81
    track = straight_track("a0", x0=0.0, t_obs=1, t_f=0, vx=0.0)
    scene = make_scene([track], [lane], t_obs=1, t_f=0)
    scene.segments = build_segments(scene, segment_len=6.0)
    assert len(scene.segments) == 1 and scene.segments[0].x == 81.0
    norm = normalize_scene(scene)
    assert norm.segments == []


def test_track_outside_crop_dropped():
    near = straight_track("a0", x0=0.0, vx=0.0)
    far = straight_track("a1", x0=300.0, vx=0.0)
    scene = make_scene([near, far], origin_rule="ego-last-step")
    scene.tracks[0].is_ego = True
    norm = normalize_scene(scene)
    assert [t.agent_id for t in norm.tracks] == ["a0"]


def test_ego_rule_requires_single_ego():
    scene = make_scene([straight_track("a0")], origin_rule="ego-last-step")
    with pytest.raises(ConfigError, match="ego"):
        normalize_scene(scene)


def test_normalization_is_pure_translation():
    rng = np.random.default_rng(4)
    tracks = [straight_track(f"a{i}", x0=rng.uniform(-30, 30), y0=rng.uniform(-30, 30),
                             vx=rng.uniform(-5, 5), vy=rng.uniform(-5, 5))
              for i in range(4)]
    scene = make_scene(tracks)
    norm = normalize_scene(scene)
    before = [(s.x, s.y) for t in scene.tracks for _, s in t.past]
    after = [(s.x, s.y) for t in norm.tracks for _, s in t.past]
    for (x1, y1), (x2, y2) in zip(before, after):
        for (x3, y3), (x4, y4) in zip(before, after):
            d_before = math.hypot(x1 - x3, y1 - y3)
            d_after = math.hypot(x2 - x4, y2 - y4)
            assert abs(d_before - d_after) < 1e-9
    for t_old, t_new in zip(scene.tracks, norm.tracks):
        for (_, s_old), (_, s_new) in zip(t_old.past, t_new.past):
            assert (s_old.vx, s_old.vy, s_old.heading) == (s_new.vx, s_new.vy, s_new.heading)


def test_normalize_idempotent():
    spec = SyntheticSpec(scenes=4, agents=3, lanes=2, t_obs=5, t_f=4, dt=0.1, noise=0.2)
    for scene in generate_synthetic(spec, seed=2):
        once = normalize_scene(scene)
        twice = normalize_scene(once)
        assert twice == once


# --- centerline segmentation ----------------------------------------------

def test_straight_line_uniform_chords():
    segs = segment_centerline([(0.0, 0.0), (10.0, 0.0)], 2.0, "l")
    assert len(segs) == 5
    for i, seg in enumerate(segs):
        assert seg.dx == pytest.approx(2.0, abs=1e-12)
        assert seg.dy == 0.0
        assert seg.index_in_lane == i


def test_short_polyline_single_chord():
    segs = segment_centerline([(0.0, 0.0), (1.0, 0.0)], 2.0, "l")
    assert len(segs) == 1
    assert (segs[0].dx, segs[0].dy) == (1.0, 0.0)


def test_quarter_circle_chord_length():
    arc = [(10.0 * math.cos(a), 10.0 * math.sin(a))
           for a in np.linspace(0.0, math.pi / 2.0, 200)]
    segs = segment_centerline(arc, 1.0, "arc")
    chord_sum = sum(math.hypot(s.dx, s.dy) for s in segs)
    true_len = 10.0 * math.pi / 2.0
    assert abs(chord_sum - true_len) / true_len < 0.01
    assert abs(polyline_arc_length(arc) - true_len) / true_len < 0.01


def test_segmentation_covers_polyline():
    pts = [(0.0, 0.0), (3.0, 4.0), (9.0, 4.0)]
    segs = segment_centerline(pts, 2.5, "l")
    assert segs[0].start() == (0.0, 0.0)
    end = segs[-1].end()
    assert abs(end[0] - 9.0) < 1e-9 and abs(end[1] - 4.0) < 1e-9
    for a, b in zip(segs, segs[1:]):
        assert a.end() == b.start()


def test_degenerate_polyline_rejected():
    with pytest.raises(ValidationError, match="degenerate"):
        segment_centerline([(1.0, 1.0), (1.0, 1.0)], 2.0, "l")


# --- synthetic generation ---------------------------------------------------

def test_synthetic_deterministic():
    spec = SyntheticSpec(scenes=2, agents=3, lanes=2, t_obs=4, t_f=3, dt=0.1, noise=0.3)
    assert generate_synthetic(spec, seed=5) == generate_synthetic(spec, seed=5)


def test_synthetic_counts():
    spec = SyntheticSpec(scenes=8, agents=4, lanes=2, t_obs=4, t_f=3, dt=0.1)
    scenes = generate_synthetic(spec, seed=1)
    assert len(scenes) == 8
    assert sum(len(s.tracks) for s in scenes) == 32


def test_synthetic_constant_velocity_future():
    spec = SyntheticSpec(scenes=2, agents=3, lanes=2, t_obs=5, t_f=6, dt=0.1,
                         noise=0.0, curved=False)
    for scene in generate_synthetic(spec, seed=3):
        for track in scene.tracks:
            last = track.past[-1][1]
            for k, (x, y) in enumerate(track.future, start=1):
                assert x == last.x + k * spec.dt * last.vx
                assert y == last.y + k * spec.dt * last.vy


def test_synthetic_curved_scenes_validate():
    spec = SyntheticSpec(scenes=3, agents=2, lanes=3, t_obs=4, t_f=3, dt=0.1,
                         noise=0.1, curved=True)
    scenes = generate_synthetic(spec, seed=11)
    assert all(s.segments for s in scenes)
    names = {l.lane_id for s in scenes for l in s.lanes}
    assert len(names) == sum(len(s.lanes) for s in scenes)
