"""The learnable network.

Pipeline per scene: per-type embedding MLPs (linear -> ReLU -> LayerNorm)
with a sinusoidal per-timestep encoding concatenated onto agent nodes, a
staged heterogeneous encoder (map context, agent context with social
attention in the last two layers, agent<->map fusion, merge readout), and
K independent regression/scoring MLP pairs producing multi-modal
trajectories with unnormalized scores.

Message passing uses two conv types: a degree-normalized graph conv whose
messages add the edge feature to the source node feature before the linear
map, and a multi-head gated attention conv (GATv2 style) with an implicit
self edge per destination. Per-relation updates of one layer are merged by
sum -> ReLU -> residual -> LayerNorm.
"""

import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as tg
from .errors import CheckpointError, ConfigError
from .graph import (
    REL_AGENT_PRE, REL_AGENT_SUC, REL_DRIVES_ON, REL_MERGE, REL_SOCIAL,
    REL_TRAFFIC_INFO, map_pre_relation, map_suc_relation, relation_endpoints,
    relation_names,
)

CHECKPOINT_MAGIC = b"HOLIGRAPH1"


@dataclass
class ModelConfig:
    f: int = 64                 # hidden width
    heads: int = 4              # attention heads; results are concatenated
    modes: int = 6              # K alternative futures per agent
    t_f: int = 30               # predicted steps
    t_obs: int = 10             # observed steps; also the agent-stage depth
    dilation: int = 4           # map pre-i/suc-i order
    n_map_layers: int = 5
    n_fusion_layers: int = 2
    leaky_slope: float = 0.2
    use_map: bool = True
    use_social: bool = True
    use_relational: bool = True
    use_residual: bool = True
    use_temporal: bool = True

    def __post_init__(self):
        if self.f % self.heads != 0:
            raise ConfigError(f"hidden width {self.f} not divisible by {self.heads} heads")
        if self.t_obs < 1 or self.t_f < 1 or self.modes < 1:
            raise ConfigError("t_obs, t_f and modes must be positive")

    @property
    def n_agent_layers(self):
        return self.t_obs

    def map_rel_shorts(self):
        shorts = [f"pre-{i}" for i in range(1, self.dilation + 1)]
        shorts += [f"suc-{i}" for i in range(1, self.dilation + 1)]
        return shorts + ["left", "right"]


_SHORT_TO_RELATION = {"pre": REL_AGENT_PRE, "suc": REL_AGENT_SUC}


def short_relation(short):
    if short in _SHORT_TO_RELATION:
        return _SHORT_TO_RELATION[short]
    kind, i = short.split("-")
    return map_pre_relation(int(i)) if kind == "pre" else map_suc_relation(int(i))


def _full_relation(short):
    if short in ("left", "right"):
        return f"map.{short}.map"
    return short_relation(short)


class ModelParameters:
    """Named parameter tensors; enumeration is always lexicographic."""

    def __init__(self, tensors):
        self._tensors = dict(sorted(tensors.items()))

    def __getitem__(self, path):
        return self._tensors[path]

    def __contains__(self, path):
        return path in self._tensors

    def paths(self):
        return list(self._tensors)

    def items(self):
        return list(self._tensors.items())

    def zero_grads(self):
        for t in self._tensors.values():
            t.grad = None

    def count(self):
        return sum(t.data.size for t in self._tensors.values())


def is_normalization_param(path):
    return any(seg == "norm" or seg.endswith("_norm") for seg in path.split("."))


def expected_parameter_specs(cfg):
    """path -> shape for every parameter the configuration instantiates."""
    f = cfg.f
    dh = f // cfg.heads
    specs = {}

    def linear(prefix, n_in, n_out):
        specs[f"{prefix}.weight"] = (n_in, n_out)
        specs[f"{prefix}.bias"] = (1, n_out)

    def norm(prefix, width=f):
        specs[f"{prefix}.gain"] = (width,)
        specs[f"{prefix}.offset"] = (width,)

    def gat(prefix):
        for h in range(cfg.heads):
            specs[f"{prefix}.h{h}.w1"] = (f, dh)
            specs[f"{prefix}.h{h}.w2"] = (f, dh)
            specs[f"{prefix}.h{h}.w3"] = (3 * f, dh)
            specs[f"{prefix}.h{h}.attn"] = (dh, 1)

    linear("embed.agent.linear", 5, f)
    norm("embed.agent.norm")
    if cfg.use_temporal:
        specs["embed.temporal.weight"] = (2 * f, f)
    if cfg.use_map:
        linear("embed.map.linear", 4, f)
        norm("embed.map.norm")
    if cfg.use_relational:
        linear("embed.edge.linear", 2, f)
        norm("embed.edge.norm")

    if cfg.use_map:
        for l in range(cfg.n_map_layers):
            for short in cfg.map_rel_shorts():
                linear(f"map_layer.{l}.rel.{short}", f, f)
            norm(f"map_layer.{l}.norm")

    for l in range(cfg.n_agent_layers):
        linear(f"agent_layer.{l}.rel.pre", f, f)
        linear(f"agent_layer.{l}.rel.suc", f, f)
        if cfg.use_social and l >= cfg.n_agent_layers - 2:
            gat(f"agent_layer.{l}.social")
        norm(f"agent_layer.{l}.norm")

    if cfg.use_map:
        for l in range(cfg.n_fusion_layers):
            linear(f"fusion_layer.{l}.rel.pre", f, f)
            linear(f"fusion_layer.{l}.rel.suc", f, f)
            for short in cfg.map_rel_shorts():
                linear(f"fusion_layer.{l}.rel.{short}", f, f)
            if cfg.use_social:
                gat(f"fusion_layer.{l}.social")
            gat(f"fusion_layer.{l}.drives_on")
            gat(f"fusion_layer.{l}.traffic_info")
            norm(f"fusion_layer.{l}.agent_norm")
            norm(f"fusion_layer.{l}.map_norm")

    gat("merge")
    norm("merge.norm")

    out = 2 * cfg.t_f
    for k in range(cfg.modes):
        linear(f"head.reg.k{k}.l1", f, f)
        norm(f"head.reg.k{k}.norm")
        linear(f"head.reg.k{k}.l2", f, out)
        wide = f + out
        linear(f"head.score.k{k}.l1", wide, wide)
        norm(f"head.score.k{k}.norm", wide)
        linear(f"head.score.k{k}.l2", wide, 1)
    return specs


def init_parameters(cfg, seed):
    """Glorot-uniform weights, zero biases, unit gains; deterministic in seed.

    Head output layers start at exactly zero so every mode emits the same
    trajectory at step 0. The winner-takes-all tie then resolves to the
    lowest mode index for every agent, which keeps early mode assignment
    coherent across agents instead of freezing in random per-agent winners.
    """
    rng = np.random.default_rng(seed)
    tensors = {}
    for path, shape in sorted(expected_parameter_specs(cfg).items()):
        leaf = path.rsplit(".", 1)[1]
        if leaf == "gain":
            data = np.ones(shape)
        elif leaf in ("offset", "bias"):
            data = np.zeros(shape)
        elif path.startswith("head.") and ".l2." in path:
            data = np.zeros(shape)
        else:
            fan_in, fan_out = shape[0], shape[-1]
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            data = rng.uniform(-limit, limit, size=shape)
        tensors[path] = tg.Tensor(data, requires_grad=True)
    return ModelParameters(tensors)


# --- temporal encoding ------------------------------------------------------

def temporal_encoding(timesteps, f):
    """Sinusoidal per-timestep rows: even entries sin(t/10000^(d/f)),
    odd entries cos(t/10000^(d/f)); row 0 is [0, 1, 0, 1, ...]."""
    t = np.asarray(timesteps, dtype=np.float64).reshape(-1, 1)
    d = np.arange(f, dtype=np.float64)
    angle = t / np.power(10000.0, d / float(f))
    enc = np.where(d % 2 == 0, np.sin(angle), np.cos(angle))
    return enc


# --- per-graph constants ----------------------------------------------------

class _RelationCache:
    def __init__(self, graph, name):
        edges = graph.edges[name]
        src_type, dst_type = relation_endpoints(name)
        self.n_src = graph.n_agent_nodes if src_type == "agent" else graph.n_map_nodes
        self.n_dst = graph.n_agent_nodes if dst_type == "agent" else graph.n_map_nodes
        self.src = edges[:, 0].copy()
        self.dst = edges[:, 1].copy()
        in_deg = np.bincount(self.dst, minlength=self.n_dst)
        out_deg = np.bincount(self.src, minlength=self.n_src)
        # degree floored at one: a lone edge is passed through unscaled and
        # isolated endpoints never divide by zero
        deg_dst = np.maximum(in_deg, 1).astype(np.float64)
        deg_src = np.maximum(out_deg, 1).astype(np.float64)
        coeff = 1.0 / np.sqrt(deg_dst[self.dst] * deg_src[self.src])
        self.coeff = tg.Tensor(coeff.reshape(-1, 1))
        self.raw_edge = tg.Tensor(graph.edge_feats[name])
        self.ext_targets = np.concatenate([self.dst, np.arange(self.n_dst, dtype=np.int64)])
        self.dst_type = dst_type


_CUMSUM_CACHE = {}


def _cumsum_matrix(t_f):
    """Constant lower-block matrix turning per-step (x, y) increments into
    accumulated positions: out[:, 2t+c] = sum of increments s <= t, coord c."""
    if t_f not in _CUMSUM_CACHE:
        n = 2 * t_f
        m = np.zeros((n, n))
        for s in range(t_f):
            for t in range(s, t_f):
                m[2 * s, 2 * t] = 1.0
                m[2 * s + 1, 2 * t + 1] = 1.0
        _CUMSUM_CACHE[t_f] = m
    return _CUMSUM_CACHE[t_f]


class EncoderCache:
    """Constants derived from one graph for repeated forward passes."""

    def __init__(self, graph, cfg):
        self.graph = graph
        self.relations = {name: _RelationCache(graph, name)
                          for name in relation_names(cfg.dilation)}
        self.agent_zeros = tg.Tensor(np.zeros((graph.n_agent_nodes, cfg.f)))
        self.map_zeros = tg.Tensor(np.zeros((graph.n_map_nodes, cfg.f)))
        self.agent_in = tg.Tensor(graph.agent_feats)
        self.map_in = tg.Tensor(graph.map_feats)
        if cfg.use_temporal:
            steps = [t for _, t in graph.agent_meta]
            self.tau = tg.Tensor(temporal_encoding(steps, cfg.f))
        else:
            self.tau = None
        self.cumsum = tg.Tensor(_cumsum_matrix(cfg.t_f))


def make_cache(graph, cfg):
    return EncoderCache(graph, cfg)


# --- building blocks --------------------------------------------------------

def _embed_block(x, params, prefix):
    h = tg.relu(tg.add(tg.matmul(x, params[f"{prefix}.linear.weight"]),
                       params[f"{prefix}.linear.bias"]))
    return tg.layer_norm(h, params[f"{prefix}.norm.gain"], params[f"{prefix}.norm.offset"])


def embed(cache, params, cfg):
    """Embed node and edge inputs to width f.

    Returns (agent_h, map_h, edge_h per relation); map_h is None when the
    map branch is disabled, edge embeddings are zero when relational
    features are disabled.
    """
    agent_h = _embed_block(cache.agent_in, params, "embed.agent")
    if cfg.use_temporal:
        agent_h = tg.matmul(tg.concat([agent_h, cache.tau]), params["embed.temporal.weight"])
    map_h = _embed_block(cache.map_in, params, "embed.map") if cfg.use_map else None

    edge_h = {}
    for name, rel in cache.relations.items():
        if not cfg.use_map and relation_endpoints(name) != ("agent", "agent"):
            continue
        if cfg.use_relational:
            edge_h[name] = _embed_block(rel.raw_edge, params, "embed.edge")
        else:
            edge_h[name] = tg.Tensor(np.zeros((rel.src.shape[0], cfg.f)))
    return agent_h, map_h, edge_h


def gcn_edge_conv(h_src, rel, edge_h, weight, bias):
    """Degree-normalized conv: sum over in-edges of
    coeff * ((x_src + e) W), plus a bias every target receives."""
    x_j = tg.gather_rows(h_src, rel.src)
    msg = tg.matmul(tg.add(x_j, edge_h), weight)
    msg = tg.scale_rows(msg, rel.coeff)
    agg = tg.segment_sum(msg, rel.dst, rel.n_dst)
    return tg.add(agg, bias)


def gatv2_conv(h_src, h_dst, rel, edge_h, params, prefix, cfg, dst_zeros,
               return_attention=False):
    """Multi-head attention conv with an implicit self edge per destination.

    Per head: logits = LeakyReLU([x_dst | x_src | e] W3) attn, softmax over
    {self} + in-edges, output alpha_self x W1 + sum alpha_j x_j W2; head
    outputs are concatenated. With return_attention, also returns the
    per-head weight arrays over [in-edges..., self-per-destination...].
    """
    x_i = tg.gather_rows(h_dst, rel.dst)
    x_j = tg.gather_rows(h_src, rel.src)
    cat_edges = tg.concat([x_i, x_j, edge_h])
    cat_self = tg.concat([h_dst, h_dst, dst_zeros])
    outputs, attention = [], []
    for h in range(cfg.heads):
        w1 = params[f"{prefix}.h{h}.w1"]
        w2 = params[f"{prefix}.h{h}.w2"]
        w3 = params[f"{prefix}.h{h}.w3"]
        attn = params[f"{prefix}.h{h}.attn"]
        edge_logits = tg.matmul(tg.leaky_relu(tg.matmul(cat_edges, w3), cfg.leaky_slope), attn)
        self_logits = tg.matmul(tg.leaky_relu(tg.matmul(cat_self, w3), cfg.leaky_slope), attn)
        logits = tg.concat_rows([edge_logits, self_logits])
        alpha = tg.segment_softmax(logits, rel.ext_targets, rel.n_dst)
        values = tg.concat_rows([tg.matmul(x_j, w2), tg.matmul(h_dst, w1)])
        outputs.append(tg.segment_sum(tg.scale_rows(values, alpha), rel.ext_targets, rel.n_dst))
        attention.append(alpha.data.copy())
    out = tg.concat(outputs)
    if return_attention:
        return out, attention
    return out


def layer_merge(updates, h_prev, params, prefix, cfg):
    """Sum the per-relation updates, ReLU, optional residual, LayerNorm."""
    total = updates[0]
    for u in updates[1:]:
        total = tg.add(total, u)
    activated = tg.relu(total)
    if cfg.use_residual:
        activated = tg.add(activated, h_prev)
    return tg.layer_norm(activated, params[f"{prefix}.gain"], params[f"{prefix}.offset"])


# --- encoder ----------------------------------------------------------------

def _map_stage_updates(map_h, cache, edge_h, params, layer_prefix, cfg):
    updates = []
    for short in cfg.map_rel_shorts():
        name = _full_relation(short)
        rel = cache.relations[name]
        updates.append(gcn_edge_conv(
            map_h, rel, edge_h[name],
            params[f"{layer_prefix}.rel.{short}.weight"],
            params[f"{layer_prefix}.rel.{short}.bias"]))
    return updates


def _agent_gcn_updates(agent_h, cache, edge_h, params, layer_prefix):
    updates = []
    for short in ("pre", "suc"):
        name = short_relation(short)
        rel = cache.relations[name]
        updates.append(gcn_edge_conv(
            agent_h, rel, edge_h[name],
            params[f"{layer_prefix}.rel.{short}.weight"],
            params[f"{layer_prefix}.rel.{short}.bias"]))
    return updates


def encode(cache, params, cfg):
    """Run the staged encoder; returns one latent row per track."""
    agent_h, map_h, edge_h = embed(cache, params, cfg)

    if cfg.use_map:
        for l in range(cfg.n_map_layers):
            prefix = f"map_layer.{l}"
            updates = _map_stage_updates(map_h, cache, edge_h, params, prefix, cfg)
            map_h = layer_merge(updates, map_h, params, f"{prefix}.norm", cfg)

    for l in range(cfg.n_agent_layers):
        prefix = f"agent_layer.{l}"
        updates = _agent_gcn_updates(agent_h, cache, edge_h, params, prefix)
        if cfg.use_social and l >= cfg.n_agent_layers - 2:
            rel = cache.relations[REL_SOCIAL]
            updates.append(gatv2_conv(agent_h, agent_h, rel, edge_h[REL_SOCIAL],
                                      params, f"{prefix}.social", cfg, cache.agent_zeros))
        agent_h = layer_merge(updates, agent_h, params, f"{prefix}.norm", cfg)

    if cfg.use_map:
        for l in range(cfg.n_fusion_layers):
            prefix = f"fusion_layer.{l}"
            agent_updates = _agent_gcn_updates(agent_h, cache, edge_h, params, prefix)
            if cfg.use_social:
                rel = cache.relations[REL_SOCIAL]
                agent_updates.append(gatv2_conv(
                    agent_h, agent_h, rel, edge_h[REL_SOCIAL],
                    params, f"{prefix}.social", cfg, cache.agent_zeros))
            rel = cache.relations[REL_TRAFFIC_INFO]
            agent_updates.append(gatv2_conv(
                map_h, agent_h, rel, edge_h[REL_TRAFFIC_INFO],
                params, f"{prefix}.traffic_info", cfg, cache.agent_zeros))

            last_layer = l == cfg.n_fusion_layers - 1
            if not last_layer:
                # the final fusion layer's map update would never be read again
                map_updates = _map_stage_updates(map_h, cache, edge_h, params, prefix, cfg)
                rel = cache.relations[REL_DRIVES_ON]
                map_updates.append(gatv2_conv(
                    agent_h, map_h, rel, edge_h[REL_DRIVES_ON],
                    params, f"{prefix}.drives_on", cfg, cache.map_zeros))

            new_agent = layer_merge(agent_updates, agent_h, params, f"{prefix}.agent_norm", cfg)
            if not last_layer:
                map_h = layer_merge(map_updates, map_h, params, f"{prefix}.map_norm", cfg)
            agent_h = new_agent

    rel = cache.relations[REL_MERGE]
    update = gatv2_conv(agent_h, agent_h, rel, edge_h[REL_MERGE],
                        params, "merge", cfg, cache.agent_zeros)
    agent_h = layer_merge([update], agent_h, params, "merge.norm", cfg)
    return tg.gather_rows(agent_h, cache.graph.readout_index)


# --- prediction head --------------------------------------------------------

@dataclass
class Prediction:
    trajectories: tg.Tensor   # [A, K, T_f, 2] positions in the scene frame
    scores: tg.Tensor         # [A, K], unnormalized


def _head_block(x, params, prefix):
    h = tg.relu(tg.add(tg.matmul(x, params[f"{prefix}.l1.weight"]),
                       params[f"{prefix}.l1.bias"]))
    h = tg.layer_norm(tg.add(h, x), params[f"{prefix}.norm.gain"],
                      params[f"{prefix}.norm.offset"])
    return tg.add(tg.matmul(h, params[f"{prefix}.l2.weight"]), params[f"{prefix}.l2.bias"])


def predict_head(latent, cache, params, cfg):
    """K independent regression and scoring MLPs over the agent latents.

    Regression outputs are per-step increments, accumulated into positions;
    each mode's score sees the latent and that mode's trajectory.
    """
    n_agents = latent.data.shape[0]
    traj_parts, score_parts = [], []
    for k in range(cfg.modes):
        deltas = _head_block(latent, params, f"head.reg.k{k}")
        traj = tg.matmul(deltas, cache.cumsum)
        traj_parts.append(traj)
        score_in = tg.concat([latent, traj])
        score_parts.append(_head_block(score_in, params, f"head.score.k{k}"))
    flat = tg.concat(traj_parts)
    trajectories = tg.reshape(flat, (n_agents, cfg.modes, cfg.t_f, 2))
    scores = tg.concat(score_parts)
    return Prediction(trajectories=trajectories, scores=scores)


def forward(cache, params, cfg):
    return predict_head(encode(cache, params, cfg), cache, params, cfg)


# --- checkpoints ------------------------------------------------------------

def save_checkpoint(params, path):
    """Magic token, then per parameter (lexicographic): path, rank, extents,
    raw little-endian float64 values."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        for name, t in params.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", t.data.ndim))
            fh.write(struct.pack(f"<{t.data.ndim}Q", *t.data.shape))
            fh.write(t.data.astype("<f8").tobytes())


def load_checkpoint(path, cfg):
    """Read a checkpoint and verify it matches the configuration exactly."""
    expected = expected_parameter_specs(cfg)
    tensors = {}
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"bad checkpoint header {magic!r}")
        while True:
            head = fh.read(4)
            if not head:
                break
            (name_len,) = struct.unpack("<I", head)
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{rank}Q", fh.read(8 * rank))
            count = int(np.prod(shape)) if rank else 1
            data = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape)
            tensors[name] = tg.Tensor(data.copy(), requires_grad=True)

    missing = sorted(set(expected) - set(tensors))
    extra = sorted(set(tensors) - set(expected))
    if missing or extra:
        raise CheckpointError(
            f"checkpoint does not match configuration; missing={missing} extra={extra}")
    for name, shape in expected.items():
        if tensors[name].data.shape != shape:
            raise CheckpointError(
                f"parameter {name}: shape {tensors[name].data.shape} != expected {shape}")
    return ModelParameters(tensors)
