"""Heterogeneous graph transformer: featurization, attention, message passing,
target-specific aggregation, type-wise pooling, and the classification head.

All parameters are typed: key/query/message projections per node type,
attention and message matrices per relation, a learnable prior per
meta-relation, and a rescale scalar plus aggregation matrix per node type.
The homogeneous configuration collapses everything to one node type and the
single ``connected`` relation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .graph import (
    FORWARD_RELATIONS,
    DebateGraph,
    Edge,
    NodeType,
    RelationType,
    legal_meta_relations,
)


class ModelError(Exception):
    pass


class MissingEmbedding(ModelError):
    pass


class DimMismatch(ModelError):
    pass


NODE_TYPE_ORDER = (
    NodeType.TITLE,
    NodeType.EVALUATION_DIMENSION,
    NodeType.REVIEWER_OPINION,
    NodeType.AUTHOR_OPINION,
)

HOMOGENEOUS_TYPE_KEY = "node"
CONNECTED_KEY = RelationType.CONNECTED.value

_REL_ENDPOINTS = {rel: (src, dst) for src, rel, dst in legal_meta_relations()}
_REL_ORDINAL = {r: i for i, r in enumerate(RelationType)}


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    hidden_dim: int = 128
    num_heads: int = 4
    num_layers: int = 2
    ffn_hidden: int = 128
    num_classes: int = 2
    use_inverse_edges: bool = True
    attention_scale: str = "sqrt_d"  # or "sqrt_dh"
    homogeneous: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.hidden_dim % self.num_heads != 0:
            raise ModelError(
                f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.num_layers < 1 or self.input_dim < 1:
            raise ModelError("num_layers and input_dim must be positive")
        if self.attention_scale not in ("sqrt_d", "sqrt_dh"):
            raise ModelError(f"unknown attention_scale {self.attention_scale!r}")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    @property
    def scale_divisor(self) -> float:
        dim = self.hidden_dim if self.attention_scale == "sqrt_d" else self.head_dim
        return math.sqrt(dim)

    @property
    def pool_width(self) -> int:
        return self.hidden_dim * (1 if self.homogeneous else len(NODE_TYPE_ORDER))


def node_type_keys(config: ModelConfig) -> list[str]:
    if config.homogeneous:
        return [HOMOGENEOUS_TYPE_KEY]
    return [t.value for t in NODE_TYPE_ORDER]


def relation_keys(config: ModelConfig) -> list[str]:
    """Ordered relation parameter keys: 13 forward (+13 inverse) or connected."""
    if config.homogeneous:
        return [CONNECTED_KEY]
    keys = [r.value for r in FORWARD_RELATIONS]
    if config.use_inverse_edges:
        keys += [f"{r.value}__inv" for r in FORWARD_RELATIONS]
    return keys


def meta_key(config: ModelConfig, rel_key: str) -> str:
    """Meta-relation name for the attention prior of a relation key."""
    if rel_key == CONNECTED_KEY:
        return f"{HOMOGENEOUS_TYPE_KEY}__{CONNECTED_KEY}__{HOMOGENEOUS_TYPE_KEY}"
    base, _, suffix = rel_key.partition("__")
    rel = RelationType(base)
    src, dst = _REL_ENDPOINTS[rel]
    name = f"{src.value}__{rel.value}__{dst.value}"
    return name + ("__inv" if suffix == "inv" else "")


def _edge_rel_key(e: Edge, config: ModelConfig) -> str:
    if config.homogeneous:
        return CONNECTED_KEY
    return e.relation.value + ("__inv" if e.inverse else "")


@dataclass
class GraphIndex:
    """Precomputed gather/scatter structure for one graph under one config."""

    n_nodes: int
    type_rows: dict[str, np.ndarray]
    type_of: list[str]
    ordered_edges: list[Edge]
    segments: list[tuple[int, int]]
    seg_targets: np.ndarray
    rel_groups: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]]

    @property
    def n_edges(self) -> int:
        return len(self.ordered_edges)


def build_graph_index(g: DebateGraph, config: ModelConfig) -> GraphIndex:
    keys = node_type_keys(config)
    if config.homogeneous:
        type_of = [HOMOGENEOUS_TYPE_KEY] * len(g.nodes)
    else:
        type_of = [n.node_type.value for n in sorted(g.nodes, key=lambda n: n.id)]
    type_rows = {
        k: np.array([i for i, t in enumerate(type_of) if t == k], dtype=np.intp) for k in keys
    }

    edges = [e for e in g.edges if config.use_inverse_edges or not e.inverse]
    edges.sort(key=lambda e: (e.dst, e.src, _REL_ORDINAL[e.relation], e.inverse))

    segments: list[tuple[int, int]] = []
    seg_targets: list[int] = []
    start = 0
    for i, e in enumerate(edges):
        if i > 0 and e.dst != edges[i - 1].dst:
            segments.append((start, i))
            seg_targets.append(edges[i - 1].dst)
            start = i
    if edges:
        segments.append((start, len(edges)))
        seg_targets.append(edges[-1].dst)

    rel_groups: dict[str, tuple[list[int], list[int], list[int]]] = {}
    for pos, e in enumerate(edges):
        key = _edge_rel_key(e, config)
        srcs, dsts, positions = rel_groups.setdefault(key, ([], [], []))
        srcs.append(e.src)
        dsts.append(e.dst)
        positions.append(pos)

    return GraphIndex(
        n_nodes=len(g.nodes),
        type_rows=type_rows,
        type_of=type_of,
        ordered_edges=edges,
        segments=segments,
        seg_targets=np.array(seg_targets, dtype=np.intp),
        rel_groups={
            k: (
                np.array(s, dtype=np.intp),
                np.array(d, dtype=np.intp),
                np.array(p, dtype=np.intp),
            )
            for k, (s, d, p) in rel_groups.items()
        },
    )


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(config: ModelConfig, rng_seed: int | None = None) -> ParamStore:
    """Xavier-uniform weights, zero biases, unit priors and rescales."""
    rng = np.random.default_rng(config.seed if rng_seed is None else rng_seed)
    d, dh = config.hidden_dim, config.head_dim
    params = ParamStore()
    types = node_type_keys(config)
    rels = relation_keys(config)

    for t in types:
        params.add(f"w_in/{t}", _xavier(rng, config.input_dim, d))
    for layer in range(config.num_layers):
        for t in types:
            params.add(f"layer{layer}/key/{t}", _xavier(rng, d, d))
            params.add(f"layer{layer}/query/{t}", _xavier(rng, d, d))
            params.add(f"layer{layer}/msg/{t}", _xavier(rng, d, d))
        for rk in rels:
            params.add(f"layer{layer}/w_attn/{rk}", _xavier(rng, dh, dh))
            params.add(f"layer{layer}/w_msg/{rk}", _xavier(rng, dh, dh))
            params.add(f"layer{layer}/mu/{meta_key(config, rk)}", np.asarray(1.0))
        for t in types:
            params.add(f"layer{layer}/agg/{t}", _xavier(rng, d, d))
            params.add(f"layer{layer}/rescale/{t}", np.asarray(1.0))
    params.add("head/w1", _xavier(rng, config.pool_width, config.ffn_hidden))
    params.add("head/b1", np.zeros(config.ffn_hidden))
    params.add("head/w2", _xavier(rng, config.ffn_hidden, config.num_classes))
    params.add("head/b2", np.zeros(config.num_classes))
    return params


def _assemble_projection(
    h: Tensor, params: ParamStore, prefix: str, index: GraphIndex
) -> Tensor:
    """Per-type projection of node representations, scattered back to (N, d)."""
    pieces = []
    all_rows = []
    for t, idx in index.type_rows.items():
        if idx.size == 0:
            continue
        pieces.append(ad.matmul(ad.rows(h, idx), params[f"{prefix}/{t}"]))
        all_rows.append(idx)
    stacked = ad.concat(pieces, axis=0)
    return ad.place_rows(stacked, np.concatenate(all_rows), index.n_nodes)


def featurize(
    g: DebateGraph,
    embeddings: Mapping[int, np.ndarray],
    params: ParamStore,
    config: ModelConfig,
    index: GraphIndex | None = None,
) -> Tensor:
    """Initial node representations: embedding row times the type's input projection."""
    index = index or build_graph_index(g, config)
    emb = np.empty((index.n_nodes, config.input_dim), dtype=np.float64)
    for n in g.nodes:
        if n.id not in embeddings:
            raise MissingEmbedding(f"no embedding for node {n.id} of {g.graph_id}")
        row = np.asarray(embeddings[n.id], dtype=np.float64)
        if row.shape != (config.input_dim,):
            raise DimMismatch(
                f"embedding of node {n.id} has shape {row.shape}, expected ({config.input_dim},)"
            )
        emb[n.id] = row
    return _assemble_projection(Tensor(emb), params, "w_in", index)


def _attention_weights(
    h_prev: Tensor, params: ParamStore, layer: int, config: ModelConfig, index: GraphIndex
) -> list[Tensor]:
    """Per-head attention weights over the global edge order (softmax per target)."""
    dh = config.head_dim
    k_all = _assemble_projection(h_prev, params, f"layer{layer}/key", index)
    q_all = _assemble_projection(h_prev, params, f"layer{layer}/query", index)

    weights: list[Tensor] = []
    for head in range(config.num_heads):
        lo, hi = head * dh, (head + 1) * dh
        parts: list[Tensor] = []
        positions: list[np.ndarray] = []
        for rk, (srcs, dsts, pos) in index.rel_groups.items():
            k_src = ad.slice_cols(ad.rows(k_all, srcs), lo, hi)
            q_dst = ad.slice_cols(ad.rows(q_all, dsts), lo, hi)
            scores = ad.rowdot(ad.matmul(k_src, params[f"layer{layer}/w_attn/{rk}"]), q_dst)
            scores = ad.scale(scores, params[f"layer{layer}/mu/{meta_key(config, rk)}"])
            scores = ad.scale(scores, 1.0 / config.scale_divisor)
            parts.append(scores)
            positions.append(pos)
        global_scores = ad.place_rows(
            ad.concat(parts, axis=0), np.concatenate(positions), index.n_edges
        )
        weights.append(ad.segment_softmax(global_scores, index.segments))
    return weights


def _messages(
    h_prev: Tensor, params: ParamStore, layer: int, config: ModelConfig, index: GraphIndex
) -> list[Tensor]:
    """Per-head (E, head_dim) message matrices in global edge order."""
    dh = config.head_dim
    m_all = _assemble_projection(h_prev, params, f"layer{layer}/msg", index)
    messages: list[Tensor] = []
    for head in range(config.num_heads):
        lo, hi = head * dh, (head + 1) * dh
        parts: list[Tensor] = []
        positions: list[np.ndarray] = []
        for rk, (srcs, _dsts, pos) in index.rel_groups.items():
            m_src = ad.slice_cols(ad.rows(m_all, srcs), lo, hi)
            parts.append(ad.matmul(m_src, params[f"layer{layer}/w_msg/{rk}"]))
            positions.append(pos)
        stacked = ad.concat(parts, axis=0)
        messages.append(ad.place_rows(stacked, np.concatenate(positions), index.n_edges))
    return messages


def hgt_attention(
    h_prev: Tensor | np.ndarray,
    g: DebateGraph,
    params: ParamStore,
    layer: int,
    config: ModelConfig,
    index: GraphIndex | None = None,
) -> tuple[np.ndarray, GraphIndex]:
    """Attention weights as an (E, num_heads) array over the index's edge order."""
    index = index or build_graph_index(g, config)
    h_prev = h_prev if isinstance(h_prev, Tensor) else Tensor(h_prev)
    if index.n_edges == 0:
        return np.zeros((0, config.num_heads)), index
    weights = _attention_weights(h_prev, params, layer, config, index)
    return np.stack([w.value for w in weights], axis=1), index


def hgt_message(
    h_prev: Tensor | np.ndarray,
    g: DebateGraph,
    params: ParamStore,
    layer: int,
    config: ModelConfig,
    index: GraphIndex | None = None,
) -> tuple[np.ndarray, GraphIndex]:
    """Per-edge messages as an (E, hidden_dim) array (heads concatenated)."""
    index = index or build_graph_index(g, config)
    h_prev = h_prev if isinstance(h_prev, Tensor) else Tensor(h_prev)
    if index.n_edges == 0:
        return np.zeros((0, config.hidden_dim)), index
    messages = _messages(h_prev, params, layer, config, index)
    return np.concatenate([m.value for m in messages], axis=1), index


def hgt_layer(
    h_prev: Tensor,
    g: DebateGraph,
    params: ParamStore,
    layer: int,
    config: ModelConfig,
    index: GraphIndex | None = None,
) -> Tensor:
    h_l, _ = _hgt_layer_traced(h_prev, params, layer, config,
                               index or build_graph_index(g, config))
    return h_l


def _hgt_layer_traced(
    h_prev: Tensor, params: ParamStore, layer: int, config: ModelConfig, index: GraphIndex
) -> tuple[Tensor, np.ndarray]:
    if index.n_edges == 0:
        return h_prev, np.zeros((0, config.num_heads))

    weights = _attention_weights(h_prev, params, layer, config, index)
    messages = _messages(h_prev, params, layer, config, index)

    head_sums = []
    for w, m in zip(weights, messages):
        weighted = ad.colscale(m, w)
        head_sums.append(
            ad.segment_sum(weighted, index.segments, index.seg_targets, index.n_nodes)
        )
    h_tilde = ad.concat(head_sums, axis=1)

    pieces = []
    all_rows = []
    for t, idx in index.type_rows.items():
        if idx.size == 0:
            continue
        upd = ad.scale(ad.rows(h_tilde, idx), params[f"layer{layer}/rescale/{t}"])
        pieces.append(ad.matmul(upd, params[f"layer{layer}/agg/{t}"]))
        all_rows.append(idx)
    update = ad.place_rows(ad.concat(pieces, axis=0), np.concatenate(all_rows), index.n_nodes)
    h_l = ad.add(update, h_prev)
    attn = np.stack([w.value for w in weights], axis=1)
    return h_l, attn


@dataclass
class ForwardTrace:
    layer_outputs: list[np.ndarray] = field(default_factory=list)
    attention: list[np.ndarray] = field(default_factory=list)
    edge_order: list[Edge] = field(default_factory=list)
    pooled: dict[str, np.ndarray] = field(default_factory=dict)
    h_concat: np.ndarray | None = None
    probs: np.ndarray | None = None


def _forward(
    g: DebateGraph,
    embeddings: Mapping[int, np.ndarray],
    params: ParamStore,
    config: ModelConfig,
    index: GraphIndex | None = None,
) -> tuple[Tensor, ForwardTrace]:
    index = index or build_graph_index(g, config)
    trace = ForwardTrace(edge_order=list(index.ordered_edges))

    h = featurize(g, embeddings, params, config, index)
    trace.layer_outputs.append(h.value.copy())
    for layer in range(config.num_layers):
        h, attn = _hgt_layer_traced(h, params, layer, config, index)
        trace.layer_outputs.append(h.value.copy())
        trace.attention.append(attn)

    pooled: list[Tensor] = []
    for t in node_type_keys(config):
        idx = index.type_rows[t]
        if idx.size == 0:
            h_a = Tensor(np.zeros(config.hidden_dim))
        else:
            h_a = ad.mean_rows(ad.rows(h, idx))
        trace.pooled[t] = h_a.value.copy()
        pooled.append(h_a)
    h_concat = ad.concat(pooled, axis=0)
    trace.h_concat = h_concat.value.copy()

    z = ad.relu(ad.add(ad.matmul(h_concat, params["head/w1"]), params["head/b1"]))
    logits = ad.add(ad.matmul(z, params["head/w2"]), params["head/b2"])
    probs = ad.softmax(logits)
    trace.probs = probs.value.copy()
    return probs, trace


def predict(
    g: DebateGraph,
    embeddings: Mapping[int, np.ndarray],
    params: ParamStore,
    config: ModelConfig,
    index: GraphIndex | None = None,
) -> tuple[np.ndarray, ForwardTrace]:
    """Class probabilities and the forward trace; pure given its inputs."""
    with ad.no_grad():
        probs, trace = _forward(g, embeddings, params, config, index)
    return probs.value.copy(), trace


def forward_loss(
    g: DebateGraph,
    embeddings: Mapping[int, np.ndarray],
    params: ParamStore,
    config: ModelConfig,
    label_index: int,
    index: GraphIndex | None = None,
) -> Tensor:
    """Cross-entropy loss tensor for one graph (differentiable)."""
    probs, _ = _forward(g, embeddings, params, config, index)
    return ad.cross_entropy(probs, label_index)
