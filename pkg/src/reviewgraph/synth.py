"""Seeded synthetic debate graphs and hash-based embeddings.

The real review corpora cannot be redistributed, so tests and offline runs
use generated graphs. The rule dataset labels each graph by the majority of
accept- vs reject-typed reviewer-author edges, which puts the entire label
signal into those edges.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .graph import (
    AUTHOR_SPEAKER,
    DIMENSION_LABELS,
    INTER_REVIEWER_RELATIONS,
    LABEL_ACCEPT,
    LABEL_REJECT,
    REVIEWER_AUTHOR_RELATIONS,
    REVIEWER_SPEAKERS,
    DebateGraph,
    Dimension,
    Edge,
    Node,
    NodeType,
    RelationType,
)
from .training import GraphExample


def unit_embedding(text: str, dim: int, seed: int = 0) -> np.ndarray:
    """Deterministic unit vector derived from the text content hash."""
    digest = hashlib.sha256(f"{seed}\x00{text}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def embeddings_for(g: DebateGraph, dim: int, seed: int = 0) -> dict[int, np.ndarray]:
    return {n.id: unit_embedding(n.text, dim, seed) for n in g.nodes}


def random_debate_graph(
    seed: int,
    graph_id: str = "synthetic",
    n_reviewer_opinions: tuple[int, int] = (2, 6),
    n_author_opinions: tuple[int, int] = (1, 4),
    add_inverse_edges: bool = True,
    label: str | None = None,
) -> DebateGraph:
    """A random schema-valid graph exercising all relation groups."""
    rng = np.random.default_rng(seed)
    nodes: list[Node] = [Node(0, NodeType.TITLE, f"Synthetic paper {graph_id}")]
    dim_ids: dict[Dimension, int] = {}
    for d in Dimension:
        dim_ids[d] = len(nodes)
        nodes.append(Node(len(nodes), NodeType.EVALUATION_DIMENSION, DIMENSION_LABELS[d]))

    n_rev = int(rng.integers(n_reviewer_opinions[0], n_reviewer_opinions[1] + 1))
    n_auth = int(rng.integers(n_author_opinions[0], n_author_opinions[1] + 1))
    rev_ids: list[int] = []
    for i in range(n_rev):
        speaker = REVIEWER_SPEAKERS[int(rng.integers(0, len(REVIEWER_SPEAKERS)))]
        dim = list(Dimension)[int(rng.integers(0, 4))]
        rev_ids.append(len(nodes))
        nodes.append(
            Node(
                len(nodes),
                NodeType.REVIEWER_OPINION,
                f"Reviewer remark {i} in {graph_id}",
                speaker=speaker,
                dimension=dim,
            )
        )
    auth_ids: list[int] = []
    for i in range(n_auth):
        auth_ids.append(len(nodes))
        nodes.append(
            Node(
                len(nodes),
                NodeType.AUTHOR_OPINION,
                f"Author reply {i} in {graph_id}",
                speaker=AUTHOR_SPEAKER,
            )
        )

    edge_set: set[tuple[int, int, RelationType]] = set()
    edges: list[Edge] = []

    def add(src: int, dst: int, rel: RelationType) -> None:
        if (src, dst, rel) not in edge_set:
            edge_set.add((src, dst, rel))
            edges.append(Edge(src, dst, rel))

    for d in Dimension:
        add(0, dim_ids[d], RelationType.HAS_ASPECT)
    for rid in rev_ids:
        add(rid, dim_ids[nodes[rid].dimension], RelationType.REVIEWED_BY)
    for aid in auth_ids:
        rid = rev_ids[int(rng.integers(0, len(rev_ids)))]
        rel = REVIEWER_AUTHOR_RELATIONS[int(rng.integers(0, len(REVIEWER_AUTHOR_RELATIONS)))]
        add(rid, aid, rel)
    n_irr = int(rng.integers(0, max(1, n_rev)))
    for _ in range(n_irr):
        a, b = rng.choice(len(rev_ids), size=2, replace=False) if len(rev_ids) > 1 else (0, 0)
        if rev_ids[int(a)] == rev_ids[int(b)]:
            continue
        rel = INTER_REVIEWER_RELATIONS[int(rng.integers(0, len(INTER_REVIEWER_RELATIONS)))]
        add(rev_ids[int(a)], rev_ids[int(b)], rel)

    if add_inverse_edges:
        for e in list(edges):
            edges.append(Edge(e.dst, e.src, e.relation, inverse=True))

    return DebateGraph(graph_id=graph_id, nodes=tuple(nodes), edges=tuple(edges), label=label)


def rule_labeled_graph(
    seed: int,
    graph_id: str,
    n_opinions: tuple[int, int] = (4, 12),
    add_inverse_edges: bool = True,
) -> DebateGraph:
    """Graph whose label is the majority of accept vs reject reviewer-author edges.

    Each reviewer opinion sends exactly one accept- or reject-typed edge to its
    own author reply; inter-reviewer edges carry no label information.
    """
    rng = np.random.default_rng(seed)
    nodes: list[Node] = [Node(0, NodeType.TITLE, f"Rule paper {graph_id}")]
    dim_ids: dict[Dimension, int] = {}
    for d in Dimension:
        dim_ids[d] = len(nodes)
        nodes.append(Node(len(nodes), NodeType.EVALUATION_DIMENSION, DIMENSION_LABELS[d]))

    n_ops = int(rng.integers(n_opinions[0], n_opinions[1] + 1))
    if n_ops % 2 == 0:
        n_ops += 1  # avoid accept/reject ties
    edges: list[Edge] = [Edge(0, dim_ids[d], RelationType.HAS_ASPECT) for d in Dimension]

    n_accept = 0
    rev_ids: list[int] = []
    for i in range(n_ops):
        speaker = REVIEWER_SPEAKERS[i % len(REVIEWER_SPEAKERS)]
        dim = list(Dimension)[int(rng.integers(0, 4))]
        rid = len(nodes)
        rev_ids.append(rid)
        nodes.append(
            Node(rid, NodeType.REVIEWER_OPINION, f"Reviewer point {i} of {graph_id}",
                 speaker=speaker, dimension=dim)
        )
        edges.append(Edge(rid, dim_ids[dim], RelationType.REVIEWED_BY))
        aid = len(nodes)
        nodes.append(
            Node(aid, NodeType.AUTHOR_OPINION, f"Author answer {i} of {graph_id}",
                 speaker=AUTHOR_SPEAKER)
        )
        if rng.random() < 0.5:
            rel = RelationType.ACCEPT
            n_accept += 1
        else:
            rel = RelationType.REJECT
        edges.append(Edge(rid, aid, rel))

    for i in range(1, len(rev_ids), 2):
        rel = INTER_REVIEWER_RELATIONS[int(rng.integers(0, len(INTER_REVIEWER_RELATIONS)))]
        edges.append(Edge(rev_ids[i - 1], rev_ids[i], rel))

    if add_inverse_edges:
        for e in list(edges):
            edges.append(Edge(e.dst, e.src, e.relation, inverse=True))

    label = LABEL_ACCEPT if n_accept * 2 > n_ops else LABEL_REJECT
    return DebateGraph(graph_id=graph_id, nodes=tuple(nodes), edges=tuple(edges), label=label)


def generate_rule_dataset(
    n: int,
    seed: int,
    input_dim: int,
    n_opinions: tuple[int, int] = (4, 12),
    add_inverse_edges: bool = True,
) -> list[GraphExample]:
    examples = []
    for i in range(n):
        g = rule_labeled_graph(seed * 100003 + i, f"rule-{seed}-{i}", n_opinions,
                               add_inverse_edges)
        examples.append(
            GraphExample(graph=g, embeddings=embeddings_for(g, input_dim, seed), label=g.label)
        )
    return examples
