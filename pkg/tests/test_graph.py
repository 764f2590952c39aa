import json

import pytest

from reviewgraph.graph import (
    AblationMode,
    DebateGraph,
    Dimension,
    Edge,
    Node,
    NodeType,
    RelationType,
    apply_ablation,
    build_minimal_graph,
    edge_counts_by_group,
    edge_meta,
    graph_from_dict,
    graph_to_dict,
    incoming,
    legal_meta_relations,
    load_graph,
    save_graph,
    validate_graph,
)
from reviewgraph.synth import random_debate_graph


def tiny_graph(add_inverse=True):
    """Minimal graph plus one reviewer opinion, one author opinion, one RA edge."""
    nodes = [
        Node(0, NodeType.TITLE, "A Paper"),
        Node(1, NodeType.EVALUATION_DIMENSION, "Methodological Novelty"),
        Node(2, NodeType.EVALUATION_DIMENSION, "Experimental Completeness"),
        Node(3, NodeType.EVALUATION_DIMENSION, "Motivation Clarity"),
        Node(4, NodeType.EVALUATION_DIMENSION, "Writing Fluency"),
        Node(5, NodeType.REVIEWER_OPINION, "Needs more experiments.",
             speaker="reviewer_1", dimension=Dimension.EXPERIMENTAL_COMPLETENESS),
        Node(6, NodeType.AUTHOR_OPINION, "We will add them.", speaker="author"),
    ]
    edges = [
        Edge(0, 1, RelationType.HAS_ASPECT),
        Edge(0, 2, RelationType.HAS_ASPECT),
        Edge(0, 3, RelationType.HAS_ASPECT),
        Edge(0, 4, RelationType.HAS_ASPECT),
        Edge(5, 2, RelationType.REVIEWED_BY),
        Edge(5, 6, RelationType.ACCEPT),
    ]
    if add_inverse:
        edges += [Edge(e.dst, e.src, e.relation, inverse=True) for e in list(edges)]
    return DebateGraph(graph_id="tiny", nodes=tuple(nodes), edges=tuple(edges), label="accept")


def test_legal_meta_relations_count():
    assert len(legal_meta_relations()) == 13


def test_validate_minimal_graph():
    g = build_minimal_graph("m", "Some Title")
    assert validate_graph(g).ok


def test_validate_tiny_graph():
    report = validate_graph(tiny_graph())
    assert report.ok, report.violations


def test_validate_reports_illegal_meta_relation():
    g = tiny_graph(add_inverse=False)
    bad = g.edges + (Edge(6, 5, RelationType.ACCEPT),)  # author -> reviewer, forward
    report = validate_graph(DebateGraph("bad", g.nodes, bad))
    assert not report.ok
    assert any("illegal meta-relation" in v for v in report.violations)


def test_validate_reports_missing_dimension_node():
    g = tiny_graph(add_inverse=False)
    nodes = tuple(n for n in g.nodes if n.id != 4)
    edges = tuple(e for e in g.edges if 4 not in (e.src, e.dst))
    report = validate_graph(DebateGraph("bad", nodes, edges))
    assert not report.ok


def test_validate_reports_duplicate_edge():
    g = tiny_graph(add_inverse=False)
    report = validate_graph(DebateGraph("dup", g.nodes, g.edges + (g.edges[-1],)))
    assert any("duplicate edge" in v for v in report.violations)


def test_validate_connected_only_in_homogeneous_mode():
    g = tiny_graph(add_inverse=False)
    bad = DebateGraph("c", g.nodes, g.edges + (Edge(6, 0, RelationType.CONNECTED),))
    assert not validate_graph(bad).ok
    homog = apply_ablation(g, AblationMode.HOMOGENEOUS)
    assert validate_graph(homog, AblationMode.HOMOGENEOUS).ok


def test_incoming_is_sorted_and_complete():
    g = tiny_graph()
    inc = incoming(g, 6)
    assert (5, RelationType.ACCEPT, False) in inc
    assert list(inc) == sorted(inc, key=lambda t: (t[0], list(RelationType).index(t[1]), t[2]))


def test_edge_meta_swaps_inverse():
    g = tiny_graph()
    fwd = Edge(5, 6, RelationType.ACCEPT)
    inv = Edge(6, 5, RelationType.ACCEPT, inverse=True)
    assert edge_meta(g, fwd) == (NodeType.REVIEWER_OPINION, RelationType.ACCEPT,
                                 NodeType.AUTHOR_OPINION, False)
    assert edge_meta(g, inv) == (NodeType.REVIEWER_OPINION, RelationType.ACCEPT,
                                 NodeType.AUTHOR_OPINION, True)


@pytest.mark.parametrize("mode", [AblationMode.NO_TITLE, AblationMode.NO_EVAL])
def test_node_ablations_densify_ids(mode):
    g = tiny_graph()
    out = apply_ablation(g, mode)
    assert sorted(n.id for n in out.nodes) == list(range(len(out.nodes)))
    assert validate_graph(out, mode).ok, validate_graph(out, mode).violations
    dropped = NodeType.TITLE if mode == AblationMode.NO_TITLE else NodeType.EVALUATION_DIMENSION
    assert not out.nodes_of_type(dropped)
    assert out.id_map is not None


def test_relation_ablations_drop_edge_groups():
    g = tiny_graph()
    no_rar = apply_ablation(g, AblationMode.NO_RAR)
    assert edge_counts_by_group(no_rar)["reviewer_author"] == 0
    assert edge_counts_by_group(no_rar)["structural"] == 5
    no_irr = apply_ablation(g, AblationMode.NO_IRR)
    assert edge_counts_by_group(no_irr)["inter_reviewer"] == 0


def test_homogeneous_ablation_keeps_node_metadata():
    g = tiny_graph()
    out = apply_ablation(g, AblationMode.HOMOGENEOUS)
    assert out.nodes == g.nodes  # type info survives in storage
    assert all(e.relation == RelationType.CONNECTED for e in out.edges)
    # parallel edges with different relations collapse per (src, dst, inverse)
    assert len(out.edges) <= len(g.edges)


def test_full_ablation_is_identity():
    g = tiny_graph()
    assert apply_ablation(g, AblationMode.FULL) is g


def test_json_round_trip(tmp_path):
    g = random_debate_graph(11, "rt", label="reject")
    path = tmp_path / "g.json"
    save_graph(g, path)
    g2 = load_graph(path)
    assert g2 == g
    # and the on-disk form is stable
    save_graph(g2, tmp_path / "g2.json")
    assert (tmp_path / "g.json").read_bytes() == (tmp_path / "g2.json").read_bytes()


def test_graph_dict_shape():
    d = graph_to_dict(tiny_graph())
    assert set(d) == {"graph_id", "label", "nodes", "edges"}
    assert d["nodes"][5]["speaker"] == "reviewer_1"
    assert d["nodes"][5]["dimension"] == "experimental_completeness"
    assert graph_from_dict(json.loads(json.dumps(d))) == tiny_graph()


def test_random_graphs_validate():
    for seed in range(25):
        g = random_debate_graph(seed)
        report = validate_graph(g)
        assert report.ok, (seed, report.violations)
