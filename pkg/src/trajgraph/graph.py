"""Holistic heterogeneous graph construction from a normalized scene.

Two node types (agent-state nodes, map-segment nodes) and the full relation
set: temporal pre/suc chains and merge edges within each track, social
edges between tracks, dilated lane connectivity, left/right lane neighbors,
and velocity-gated agent<->map fusion edges. Every edge carries the
relative offset target minus source as its feature.

Edges within a relation are sorted by stable node keys (agent_id/timestep,
lane_id/segment index), not by node index. Aggregation order therefore
survives any permutation of the input track list, which makes model
outputs exactly equivariant under track reordering.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

REL_AGENT_PRE = "agent.pre.agent"
REL_AGENT_SUC = "agent.suc.agent"
REL_SOCIAL = "agent.social.agent"
REL_MERGE = "agent.merge.agent"
REL_MAP_LEFT = "map.left.map"
REL_MAP_RIGHT = "map.right.map"
REL_DRIVES_ON = "agent.drives-on.map"
REL_TRAFFIC_INFO = "map.gives-traffic-info.agent"

# chord endpoints closer than this are treated as the same lane point
LINK_TOLERANCE = 1e-6


def map_pre_relation(i):
    return f"map.pre-{i}.map"


def map_suc_relation(i):
    return f"map.suc-{i}.map"


def relation_names(dilation):
    """All relation names for a given dilation order, in fixed order."""
    names = [REL_AGENT_PRE, REL_AGENT_SUC, REL_SOCIAL, REL_MERGE]
    for i in range(1, dilation + 1):
        names.append(map_pre_relation(i))
    for i in range(1, dilation + 1):
        names.append(map_suc_relation(i))
    names += [REL_MAP_LEFT, REL_MAP_RIGHT, REL_DRIVES_ON, REL_TRAFFIC_INFO]
    return names


def relation_endpoints(name):
    """(source node type, target node type) of a relation."""
    src, _, dst = name.split(".")
    return src, dst


@dataclass
class GraphConfig:
    dilation: int = 4       # highest adjacency power for map pre/suc edges
    t_th: float = 2.0       # seconds; fusion gate d_th = max(speed*t_th, d_min)
    d_min: float = 5.0      # meters; distance floor so slow agents still see the road


@dataclass
class HeteroGraph:
    agent_feats: np.ndarray          # [N_A, 5] raw (x, y, vx, vy, heading)
    agent_meta: list                 # per node: (track_index, timestep)
    map_feats: np.ndarray            # [N_M, 4] raw (x, y, dx, dy)
    map_meta: list                   # per node: (lane_id, index_in_lane)
    edges: dict = field(default_factory=dict)       # relation -> [E,2] int64 (src, dst)
    edge_feats: dict = field(default_factory=dict)  # relation -> [E,2] float64
    readout_index: np.ndarray = None                # [n_tracks] node at last observed step
    track_ids: list = field(default_factory=list)

    @property
    def n_agent_nodes(self):
        return self.agent_feats.shape[0]

    @property
    def n_map_nodes(self):
        return self.map_feats.shape[0]

    def node_position(self, node_type, index):
        feats = self.agent_feats if node_type == "agent" else self.map_feats
        return feats[index, 0], feats[index, 1]


def _finalize_relation(graph, name, pairs, src_keys, dst_keys):
    """Sort edges by stable keys and attach relative-offset features."""
    src_type, dst_type = relation_endpoints(name)
    pairs = sorted(set(pairs), key=lambda e: (dst_keys[e[1]], src_keys[e[0]]))
    arr = np.asarray(pairs, dtype=np.int64).reshape(len(pairs), 2)
    feats = np.zeros((len(pairs), 2), dtype=np.float64)
    for row, (s, d) in enumerate(pairs):
        sx, sy = graph.node_position(src_type, s)
        dx_, dy_ = graph.node_position(dst_type, d)
        feats[row, 0] = dx_ - sx
        feats[row, 1] = dy_ - sy
    graph.edges[name] = arr
    graph.edge_feats[name] = feats


def _agent_nodes(scene):
    feats, meta, keys = [], [], []
    node_of = {}
    readout = []
    for track_idx, track in enumerate(scene.tracks):
        for t, state in track.past:
            node_of[(track_idx, t)] = len(feats)
            feats.append([state.x, state.y, state.vx, state.vy, state.heading])
            meta.append((track_idx, t))
            keys.append((track.agent_id, t))
        readout.append(len(feats) - 1)
    arr = np.asarray(feats, dtype=np.float64).reshape(len(feats), 5)
    return arr, meta, keys, node_of, np.asarray(readout, dtype=np.int64)


def _map_nodes(scene):
    feats, meta, keys = [], [], []
    for seg in scene.segments:
        feats.append([seg.x, seg.y, seg.dx, seg.dy])
        meta.append((seg.lane_id, seg.index_in_lane))
        keys.append((seg.lane_id, seg.index_in_lane))
    arr = np.asarray(feats, dtype=np.float64).reshape(len(feats), 4)
    return arr, meta, keys


def build_agent_edges(scene, node_of):
    """pre: earlier observed step -> next observed step within a track;
    suc: the reverses; merge: every strictly earlier node -> readout node."""
    pre, suc, merge = [], [], []
    for track_idx, track in enumerate(scene.tracks):
        steps = [t for t, _ in track.past]
        nodes = [node_of[(track_idx, t)] for t in steps]
        for a, b in zip(nodes, nodes[1:]):
            pre.append((a, b))
            suc.append((b, a))
        for n in nodes[:-1]:
            merge.append((n, nodes[-1]))
    return pre, suc, merge


def build_social_edges(scene, node_of):
    """Directed edges into each agent node from every other track's nodes at
    the previous, same and next timestep, when observed."""
    edges = []
    for dst_idx, dst_track in enumerate(scene.tracks):
        for t, _ in dst_track.past:
            for src_idx in range(len(scene.tracks)):
                if src_idx == dst_idx:
                    continue
                for dt in (-1, 0, 1):
                    src = node_of.get((src_idx, t + dt))
                    if src is not None:
                        edges.append((src, node_of[(dst_idx, t)]))
    return edges


def _lane_links(scene):
    """pre-1 adjacency: segment pairs whose chords join end-to-start.

    Consecutive chords of one lane share endpoints by construction; lanes
    whose polylines meet end-to-start link across the lane boundary.
    """
    segs = scene.segments
    links = []
    for i, a in enumerate(segs):
        ax, ay = a.end()
        for j, b in enumerate(segs):
            if i == j:
                continue
            bx, by = b.start()
            if math.hypot(ax - bx, ay - by) <= LINK_TOLERANCE:
                links.append((i, j))
    return links


def build_map_edges(scene, dilation):
    """Dilated pre-i/suc-i chains plus index-aligned left/right neighbors."""
    segs = scene.segments
    known_lanes = {l.lane_id for l in scene.lanes} | {s.lane_id for s in segs}
    seg_index = {(s.lane_id, s.index_in_lane): i for i, s in enumerate(segs)}

    base = _lane_links(scene)
    successors = {}
    for s, d in base:
        successors.setdefault(s, []).append(d)

    relations = {}
    reachable = {s: set(ds) for s, ds in successors.items()}
    for i in range(1, dilation + 1):
        if i > 1:
            nxt = {}
            for s, frontier in reachable.items():
                out = set()
                for mid in frontier:
                    out.update(successors.get(mid, ()))
                if out:
                    nxt[s] = out
            reachable = nxt
        pairs = [(s, d) for s, ds in reachable.items() for d in ds if s != d]
        relations[map_pre_relation(i)] = pairs
        relations[map_suc_relation(i)] = [(d, s) for s, d in pairs]

    left, right = [], []
    for i, seg in enumerate(segs):
        for token, bucket in ((seg.left_lane_id, left), (seg.right_lane_id, right)):
            if token is None:
                continue
            if token not in known_lanes:
                raise ValidationError(
                    f"segment {seg.lane_id!r}:{seg.index_in_lane} references "
                    f"unknown lane {token!r}")
            neighbor = seg_index.get((token, seg.index_in_lane))
            if neighbor is not None:
                bucket.append((neighbor, i))
    relations[REL_MAP_LEFT] = left
    relations[REL_MAP_RIGHT] = right
    return relations


def build_fusion_edges(scene, agent_feats, map_feats, t_th, d_min):
    """Velocity-gated agent<->map edges: a map node within
    d_th = max(speed * t_th, d_min) of an agent node is linked both ways."""
    drives_on, traffic_info = [], []
    if agent_feats.shape[0] == 0 or map_feats.shape[0] == 0:
        return drives_on, traffic_info
    speed = np.hypot(agent_feats[:, 2], agent_feats[:, 3])
    d_th = np.maximum(speed * t_th, d_min)
    diff = agent_feats[:, None, :2] - map_feats[None, :, :2]
    dist = np.hypot(diff[:, :, 0], diff[:, :, 1])
    for a, m in zip(*np.nonzero(dist <= d_th[:, None])):
        drives_on.append((int(a), int(m)))
        traffic_info.append((int(m), int(a)))
    return drives_on, traffic_info


def build_graph(scene, cfg):
    """Assemble the full heterogeneous graph for one normalized scene."""
    agent_feats, agent_meta, agent_keys, node_of, readout = _agent_nodes(scene)
    map_feats, map_meta, map_keys = _map_nodes(scene)
    graph = HeteroGraph(
        agent_feats=agent_feats, agent_meta=agent_meta,
        map_feats=map_feats, map_meta=map_meta,
        readout_index=readout, track_ids=[t.agent_id for t in scene.tracks])

    keys = {"agent": agent_keys, "map": map_keys}

    def attach(name, pairs):
        src_type, dst_type = relation_endpoints(name)
        _finalize_relation(graph, name, pairs, keys[src_type], keys[dst_type])

    pre, suc, merge = build_agent_edges(scene, node_of)
    attach(REL_AGENT_PRE, pre)
    attach(REL_AGENT_SUC, suc)
    attach(REL_SOCIAL, build_social_edges(scene, node_of))
    attach(REL_MERGE, merge)
    for name, pairs in build_map_edges(scene, cfg.dilation).items():
        attach(name, pairs)
    drives_on, traffic_info = build_fusion_edges(
        scene, agent_feats, map_feats, cfg.t_th, cfg.d_min)
    attach(REL_DRIVES_ON, drives_on)
    attach(REL_TRAFFIC_INFO, traffic_info)
    return graph


def dump_graph(graph):
    """Text dump of per-relation edge lists, for golden-file comparisons."""
    payload = {
        "agent_nodes": graph.n_agent_nodes,
        "map_nodes": graph.n_map_nodes,
        "relations": {name: graph.edges[name].tolist() for name in sorted(graph.edges)},
    }
    return json.dumps(payload, indent=2, sort_keys=True)
