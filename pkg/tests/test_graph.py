import numpy as np
import pytest

from trajgraph.errors import ValidationError
from trajgraph.graph import (
    REL_AGENT_PRE, REL_AGENT_SUC, REL_DRIVES_ON, REL_MAP_LEFT, REL_MAP_RIGHT,
    REL_MERGE, REL_SOCIAL, REL_TRAFFIC_INFO, GraphConfig, build_graph,
    dump_graph, map_pre_relation, map_suc_relation, relation_names,
)
from trajgraph.scene import AgentState, AgentTrack, Scene, normalize_scene
from trajgraph.synthetic import SyntheticSpec, generate_synthetic

from helpers import make_scene, straight_lane, straight_track
from oracles import (
    dilated_edges_by_matrix_power, fusion_edges_by_scan,
    social_edges_by_enumeration,
)

CFG = GraphConfig()


def edge_set(graph, name):
    return {(int(s), int(d)) for s, d in graph.edges[name]}


def test_empty_scene():
    scene = make_scene([], t_obs=1, t_f=0)
    graph = build_graph(scene, CFG)
    assert graph.n_agent_nodes == 0 and graph.n_map_nodes == 0
    for name in relation_names(CFG.dilation):
        assert graph.edges[name].shape == (0, 2)


def test_single_agent_counts():
    scene = make_scene([straight_track("a0", t_obs=3)], t_obs=3)
    graph = build_graph(scene, CFG)
    assert graph.n_agent_nodes == 3
    assert len(graph.edges[REL_AGENT_PRE]) == 2
    assert len(graph.edges[REL_AGENT_SUC]) == 2
    assert len(graph.edges[REL_SOCIAL]) == 0
    assert len(graph.edges[REL_MERGE]) == 2


def test_single_step_track_degenerate():
    scene = make_scene([straight_track("a0", t_obs=1, t_f=0)], t_obs=1, t_f=0)
    graph = build_graph(scene, CFG)
    for name in (REL_AGENT_PRE, REL_AGENT_SUC, REL_MERGE):
        assert len(graph.edges[name]) == 0
    assert graph.readout_index.tolist() == [0]


def test_track_counts_t10():
    scene = make_scene([straight_track("a0", t_obs=10, t_f=0)], t_obs=10, t_f=0)
    graph = build_graph(scene, CFG)
    assert len(graph.edges[REL_AGENT_PRE]) == 9
    assert len(graph.edges[REL_AGENT_SUC]) == 9
    assert len(graph.edges[REL_MERGE]) == 9


def test_merge_edge_features_point_at_readout():
    scene = make_scene([straight_track("a0", t_obs=4, t_f=0, vx=2.0)], t_obs=4, t_f=0)
    graph = build_graph(scene, CFG)
    readout = graph.readout_index[0]
    rx, ry = graph.agent_feats[readout, :2]
    for (s, d), (fx, fy) in zip(graph.edges[REL_MERGE], graph.edge_feats[REL_MERGE]):
        assert d == readout
        sx, sy = graph.agent_feats[s, :2]
        assert (fx, fy) == (rx - sx, ry - sy)


def test_two_agents_two_steps_social_count():
    # per ordered pair: each of the 2 target nodes sees the other track at
    # t-1, t, t+1 clipped to [0, 2) -> 2 sources each; 2 pairs -> 8 edges
    tracks = [straight_track("a0", t_obs=2, t_f=0),
              straight_track("a1", y0=5.0, t_obs=2, t_f=0)]
    graph = build_graph(make_scene(tracks, t_obs=2, t_f=0), CFG)
    assert len(graph.edges[REL_SOCIAL]) == 8
    expected = social_edges_by_enumeration([[0, 1], [0, 1]])
    got = {(graph.agent_meta[s], graph.agent_meta[d]) for s, d in graph.edges[REL_SOCIAL]}
    assert got == expected


def test_two_agents_single_step_social():
    tracks = [straight_track("a0", t_obs=1, t_f=0),
              straight_track("a1", y0=5.0, t_obs=1, t_f=0)]
    graph = build_graph(make_scene(tracks, t_obs=1, t_f=0), CFG)
    assert len(graph.edges[REL_SOCIAL]) == 2


def test_three_agents_social_matches_enumeration():
    tracks = [straight_track(f"a{i}", y0=4.0 * i, t_obs=10, t_f=0) for i in range(3)]
    scene = make_scene(tracks, t_obs=10, t_f=0)
    graph = build_graph(scene, CFG)
    assert len(graph.edges[REL_SOCIAL]) == 168
    expected = social_edges_by_enumeration([[t for t, _ in tr.past] for tr in tracks])
    got = {((graph.agent_meta[s]), (graph.agent_meta[d]))
           for s, d in graph.edges[REL_SOCIAL]}
    assert got == expected


def test_partial_history_social_matches_enumeration():
    t0 = straight_track("a0", t_obs=6, t_f=0)
    t1 = straight_track("a1", y0=5.0, t_obs=6, t_f=0)
    t1.past = t1.past[2:]  # observed only from t=2
    scene = make_scene([t0, t1], t_obs=6, t_f=0)
    graph = build_graph(scene, CFG)
    expected = social_edges_by_enumeration([[t for t, _ in tr.past] for tr in scene.tracks])
    got = {(graph.agent_meta[s], graph.agent_meta[d]) for s, d in graph.edges[REL_SOCIAL]}
    assert got == expected


def test_lane_dilation_counts():
    scene = make_scene([], [straight_lane("l0", 15.0)], t_obs=1, t_f=0)
    graph = build_graph(scene, GraphConfig(dilation=2))
    assert graph.n_map_nodes == 5
    assert len(graph.edges[map_pre_relation(1)]) == 4
    assert len(graph.edges[map_pre_relation(2)]) == 3


def test_parallel_lanes_left_right():
    lanes = [straight_lane("a", 9.0, y=0.0, left="b"),
             straight_lane("b", 9.0, y=3.5, right="a")]
    graph = build_graph(make_scene([], lanes, t_obs=1, t_f=0), CFG)
    assert len(graph.edges[REL_MAP_LEFT]) == 3
    assert len(graph.edges[REL_MAP_RIGHT]) == 3
    for s, d in graph.edges[REL_MAP_LEFT]:
        assert graph.map_meta[s][0] == "b" and graph.map_meta[d][0] == "a"
        assert graph.map_meta[s][1] == graph.map_meta[d][1]


def test_mismatched_lane_lengths_pair_to_shorter():
    lanes = [straight_lane("a", 9.0, y=0.0, left="b"),
             straight_lane("b", 15.0, y=3.5, right="a")]
    graph = build_graph(make_scene([], lanes, t_obs=1, t_f=0), CFG)
    assert len(graph.edges[REL_MAP_LEFT]) == 3
    assert len(graph.edges[REL_MAP_RIGHT]) == 3


def test_dilation_matches_matrix_power_oracle():
    scene = make_scene([], [straight_lane("l0", 30.0)], t_obs=1, t_f=0)
    graph = build_graph(scene, GraphConfig(dilation=4))
    assert graph.n_map_nodes == 10
    base = edge_set(graph, map_pre_relation(1))
    assert len(base) == 9
    for i in range(1, 5):
        expected = dilated_edges_by_matrix_power(base, graph.n_map_nodes, i)
        assert edge_set(graph, map_pre_relation(i)) == expected
        assert len(expected) == 10 - 1 - (i - 1)
        assert edge_set(graph, map_suc_relation(i)) == {(d, s) for s, d in expected}


def test_cross_lane_links():
    # two lanes joined end-to-start behave like one 30 m lane
    a = straight_lane("a", 15.0, x0=0.0)
    b = straight_lane("b", 15.0, x0=15.0)
    graph = build_graph(make_scene([], [a, b], t_obs=1, t_f=0), GraphConfig(dilation=2))
    assert graph.n_map_nodes == 10
    assert len(graph.edges[map_pre_relation(1)]) == 9
    assert len(graph.edges[map_pre_relation(2)]) == 8


def test_dangling_lane_token():
    lanes = [straight_lane("a", 9.0, left="ghost")]
    with pytest.raises(ValidationError, match="ghost"):
        build_graph(make_scene([], lanes, t_obs=1, t_f=0), CFG)


def test_fusion_threshold_floor():
    track = straight_track("a0", x0=0.0, vx=0.0, t_obs=1, t_f=0)
    lane = straight_lane("l0", 4.0, x0=4.0, y=0.0)  # single segment, midpoint (6, 0)
    scene = make_scene([track], [lane], t_obs=1, t_f=0, segment_len=4.0)
    assert (scene.segments[0].x, scene.segments[0].y) == (6.0, 0.0)
    graph = build_graph(scene, GraphConfig(t_th=2.0, d_min=5.0))
    assert len(graph.edges[REL_DRIVES_ON]) == 0
    assert len(graph.edges[REL_TRAFFIC_INFO]) == 0


def test_fusion_velocity_gate():
    track = straight_track("a0", x0=0.0, vx=10.0, t_obs=1, t_f=0)
    lane = straight_lane("l0", 4.0, x0=17.9, y=0.0)  # midpoint at 19.9 m
    scene = make_scene([track], [lane], t_obs=1, t_f=0, segment_len=4.0)
    graph = build_graph(scene, GraphConfig(t_th=2.0, d_min=5.0))
    assert edge_set(graph, REL_DRIVES_ON) == {(0, 0)}
    assert edge_set(graph, REL_TRAFFIC_INFO) == {(0, 0)}


def test_fusion_matches_brute_force_scan():
    spec = SyntheticSpec(scenes=5, agents=3, lanes=3, t_obs=4, t_f=2, dt=0.1,
                         noise=0.2, curved=True)
    for scene in generate_synthetic(spec, seed=21):
        scene = normalize_scene(scene)
        graph = build_graph(scene, CFG)
        speed = np.hypot(graph.agent_feats[:, 2], graph.agent_feats[:, 3])
        drives, info = fusion_edges_by_scan(
            graph.agent_feats[:, :2], speed, graph.map_feats[:, :2],
            CFG.t_th, CFG.d_min)
        assert edge_set(graph, REL_DRIVES_ON) == drives
        assert edge_set(graph, REL_TRAFFIC_INFO) == info


def test_fusion_monotone_in_speed():
    spec = SyntheticSpec(scenes=1, agents=2, lanes=2, t_obs=3, t_f=2, dt=0.1)
    scene = normalize_scene(generate_synthetic(spec, seed=8)[0])
    slow = build_graph(scene, CFG)
    for track in scene.tracks:
        track.past = [(t, AgentState(s.x, s.y, s.vx * 3.0, s.vy * 3.0, s.heading))
                      for t, s in track.past]
    fast = build_graph(scene, CFG)
    assert edge_set(slow, REL_DRIVES_ON) <= edge_set(fast, REL_DRIVES_ON)


def test_edge_features_equal_target_minus_source():
    spec = SyntheticSpec(scenes=3, agents=3, lanes=2, t_obs=5, t_f=3, dt=0.1,
                         noise=0.3, curved=True)
    for scene in generate_synthetic(spec, seed=33):
        graph = build_graph(normalize_scene(scene), CFG)
        for name in relation_names(CFG.dilation):
            src_type, dst_type = name.split(".")[0], name.split(".")[2]
            for (s, d), (fx, fy) in zip(graph.edges[name], graph.edge_feats[name]):
                sx, sy = graph.node_position(src_type, s)
                dx, dy = graph.node_position(dst_type, d)
                assert (fx, fy) == (dx - sx, dy - sy)


def test_no_self_loops():
    spec = SyntheticSpec(scenes=2, agents=3, lanes=2, t_obs=4, t_f=2, dt=0.1)
    for scene in generate_synthetic(spec, seed=13):
        graph = build_graph(normalize_scene(scene), CFG)
        for name in relation_names(CFG.dilation):
            src_type, dst_type = name.split(".")[0], name.split(".")[2]
            if src_type == dst_type:
                assert all(s != d for s, d in graph.edges[name])


def test_suc_is_reverse_of_pre():
    spec = SyntheticSpec(scenes=2, agents=2, lanes=2, t_obs=6, t_f=2, dt=0.1)
    for scene in generate_synthetic(spec, seed=17):
        graph = build_graph(normalize_scene(scene), CFG)
        assert edge_set(graph, REL_AGENT_SUC) == {
            (d, s) for s, d in edge_set(graph, REL_AGENT_PRE)}
        for i in range(1, CFG.dilation + 1):
            assert edge_set(graph, map_suc_relation(i)) == {
                (d, s) for s, d in edge_set(graph, map_pre_relation(i))}


def test_track_permutation_isomorphism():
    spec = SyntheticSpec(scenes=1, agents=4, lanes=2, t_obs=5, t_f=3, dt=0.1, noise=0.2)
    scene = normalize_scene(generate_synthetic(spec, seed=29)[0])
    graph = build_graph(scene, CFG)

    perm = [2, 0, 3, 1]
    shuffled = Scene(scene.scene_id, scene.t_obs, scene.t_f, scene.dt,
                     scene.origin_rule, tracks=[scene.tracks[p] for p in perm],
                     lanes=scene.lanes, segments=scene.segments)
    graph_p = build_graph(shuffled, CFG)

    # node mapping via (agent_id, timestep) identity
    by_key = {}
    for idx, (track_idx, t) in enumerate(graph.agent_meta):
        by_key[(scene.tracks[track_idx].agent_id, t)] = idx
    mapping = {}
    for idx, (track_idx, t) in enumerate(graph_p.agent_meta):
        mapping[idx] = by_key[(shuffled.tracks[track_idx].agent_id, t)]

    for name in relation_names(CFG.dilation):
        src_type, dst_type = name.split(".")[0], name.split(".")[2]
        def mapped(pairs):
            out = set()
            for s, d in pairs:
                ms = mapping[s] if src_type == "agent" else s
                md = mapping[d] if dst_type == "agent" else d
                out.add((int(ms), int(md)))
            return out
        assert mapped(graph_p.edges[name]) == edge_set(graph, name)
        # matched edges carry identical features
        feats = {}
        for (s, d), f in zip(graph.edges[name], graph.edge_feats[name]):
            feats[(int(s), int(d))] = tuple(f)
        for (s, d), f in zip(graph_p.edges[name], graph_p.edge_feats[name]):
            ms = mapping[s] if src_type == "agent" else int(s)
            md = mapping[d] if dst_type == "agent" else int(d)
            assert feats[(ms, md)] == tuple(f)


def test_dump_golden():
    scene = make_scene(
        [straight_track("a0", t_obs=2, t_f=0), straight_track("a1", y0=4.0, t_obs=2, t_f=0)],
        t_obs=2, t_f=0)
    text = dump_graph(build_graph(scene, GraphConfig(dilation=1)))
    expected = """{
  "agent_nodes": 4,
  "map_nodes": 0,
  "relations": {
    "agent.drives-on.map": [],
    "agent.merge.agent": [
      [
        0,
        1
      ],
      [
        2,
        3
      ]
    ],
    "agent.pre.agent": [
      [
        0,
        1
      ],
      [
        2,
        3
      ]
    ],
    "agent.social.agent": [
      [
        2,
        0
      ],
      [
        3,
        0
      ],
      [
        2,
        1
      ],
      [
        3,
        1
      ],
      [
        0,
        2
      ],
      [
        1,
        2
      ],
      [
        0,
        3
      ],
      [
        1,
        3
      ]
    ],
    "agent.suc.agent": [
      [
        1,
        0
      ],
      [
        3,
        2
      ]
    ],
    "map.gives-traffic-info.agent": [],
    "map.left.map": [],
    "map.pre-1.map": [],
    "map.right.map": [],
    "map.suc-1.map": []
  }
}"""
    assert text == expected
