import numpy as np
import pytest

from dygem.graph import (
    DynamicGraph,
    GraphFormatError,
    IngestError,
    derive_toe,
    export_graph_text,
    graph_from_rows,
    ingest_edge_list,
    load_graph,
    parse_schema,
    prune_edges,
    save_graph,
)


def build(rows, **kw):
    return derive_toe(graph_from_rows(rows, **kw))


def test_three_row_toy_counts():
    g = build([("a", "b", 10, 1.0), ("b", "c", 12, 1.0), ("a", "c", 15, 1.0)])
    assert g.num_vertices == 3
    assert g.num_edges == 3
    degrees = {g.labels[v]: int(g.degrees[v]) for v in range(3)}
    assert degrees == {"a": 2, "b": 2, "c": 2}


def test_empty_rows_give_empty_graph(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    g = ingest_edge_list(path)
    assert g.num_vertices == 0
    assert g.num_edges == 0


def test_toe_uses_most_recent_prior_occurrence():
    # b joins at 5 and again at 8 (partner y already known, so no role flip);
    # an edge to b at 10 spans 10 - 8
    g = build([("y", "q", 1, 1.0), ("b", "x", 5, 1.0), ("b", "y", 8, 1.0),
               ("a", "b", 10, 1.0)])
    assert g.tov_sets[g.label_to_id["b"]] == [5, 8]
    e = g.edge(3)
    assert g.labels[e.dst] == "b"
    assert e.toe == 2


def test_toe_first_appearance_fallback():
    g = build([("a", "b", 10, 1.0)])
    assert g.edge(0).toe == 0
    assert g.tov_sets[g.label_to_id["b"]] == [10]
    assert g.tov_sets[g.label_to_id["a"]] == [10]


def test_toe_chain_role_assignment():
    # second edge links newcomer c to b, whose joining time 10 is on record
    g = build([("a", "b", 10, 1.0), ("b", "c", 12, 1.0)])
    e = g.edge(1)
    assert g.labels[e.src] == "c"
    assert g.labels[e.dst] == "b"
    assert e.toe == 2


def test_self_link_allowed():
    g = build([("a", "b", 5, 1.0), ("a", "a", 9, 1.0)])
    e = g.edge(1)
    assert e.src == e.dst
    assert e.toe == 4
    assert int(g.degrees[e.src]) == 2


def test_toe_nonnegative_and_anchored():
    g = build([("a", "b", 10, 1.0), ("b", "c", 12, 1.0), ("a", "c", 15, 1.0),
               ("c", "a", 20, 1.0), ("b", "a", 21, 1.0)])
    for i in range(g.num_edges):
        e = g.edge(i)
        assert e.toe >= 0
        assert (e.t - e.toe) in g.tov_sets[e.dst]


def test_degree_matches_brute_recount():
    rng = np.random.default_rng(5)
    rows = []
    t = 0
    for _ in range(400):
        t += int(rng.integers(1, 4))
        a, b = rng.integers(0, 40, size=2)
        rows.append((f"v{a}", f"v{b}", t, 1.0))
    g = build(rows)
    recount = np.zeros(g.num_vertices, dtype=int)
    for i in range(g.num_edges):
        e = g.edge(i)
        recount[e.src] += 1
        if e.dst != e.src:
            recount[e.dst] += 1
    assert np.array_equal(recount, g.degrees)


def test_ingest_order_insensitive():
    rng = np.random.default_rng(11)
    rows = []
    t = 0
    for _ in range(200):
        t += int(rng.integers(1, 5))
        a, b = rng.integers(0, 25, size=2)
        rows.append((f"v{a}", f"v{b}", t, float(rng.integers(1, 5))))
    g1 = build(rows)
    shuffled = list(rows)
    rng.shuffle(shuffled)
    g2 = build(shuffled)
    assert g1 == g2


def test_adjacency_sorted_by_forming_time():
    g = build([("a", "b", 10, 1.0), ("c", "a", 4, 1.0), ("a", "d", 30, 1.0),
               ("d", "a", 17, 1.0)])
    for rows in g.adjacency.values():
        if len(rows) > 1:
            assert np.all(np.diff(rows[:, 0]) >= 0)


def test_ingest_file_with_schema_and_labels(tmp_path):
    data = tmp_path / "edges.csv"
    data.write_text("a,b,2.4,10\nb,c,1.0,12\n")
    labels = tmp_path / "labels.csv"
    labels.write_text("a,hub\nz,leaf\n")
    g = ingest_edge_list(data, schema="src,dst,weight,ts", labels_path=labels)
    assert g.num_vertices == 4  # a, b, c plus label-only z
    assert g.class_labels[g.label_to_id["a"]] == "hub"
    assert g.class_labels[g.label_to_id["z"]] == "leaf"
    assert g.edge_w[0] == 2.4


def test_ingest_rejects_malformed_row(tmp_path):
    data = tmp_path / "edges.csv"
    data.write_text("a,b,10\nb,c\n")
    with pytest.raises(IngestError) as err:
        ingest_edge_list(data)
    assert err.value.row == 2


def test_ingest_rejects_bad_timestamp(tmp_path):
    data = tmp_path / "edges.csv"
    data.write_text("a,b,notatime\n")
    with pytest.raises(IngestError):
        ingest_edge_list(data)


def test_schema_validation():
    with pytest.raises(ValueError):
        parse_schema("src,dst")
    with pytest.raises(ValueError):
        parse_schema("src,dst,ts,bogus")


def test_duplicate_rows_are_kept():
    g = build([("a", "b", 10, 1.0), ("a", "b", 10, 1.0)])
    assert g.num_edges == 2


def test_graph_round_trip(tmp_path):
    g = build([("a", "b", 10, 1.0), ("b", "c", 12, 2.0), ("a", "c", 15, 0.5)],
              class_labels={"a": "x"})
    path = tmp_path / "g.bin"
    save_graph(g, path)
    assert load_graph(path) == g


def test_empty_graph_round_trip(tmp_path):
    g = build([])
    path = tmp_path / "g.bin"
    save_graph(g, path)
    assert load_graph(path) == g


def test_corrupted_graph_file_rejected(tmp_path):
    g = build([("a", "b", 10, 1.0)])
    path = tmp_path / "g.bin"
    save_graph(g, path)
    blob = bytearray(path.read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(GraphFormatError):
        load_graph(path)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "g.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(GraphFormatError):
        load_graph(path)


def test_text_export(tmp_path):
    g = build([("a", "b", 10, 1.0), ("b", "c", 12, 1.0)])
    path = tmp_path / "g.txt"
    export_graph_text(g, path)
    lines = path.read_text().strip().split("\n")
    assert lines[0].startswith("#")
    assert len(lines) == 1 + g.num_edges


def test_prune_keeps_original_edge_ids():
    g = build([("a", "b", 10, 1.0), ("b", "c", 12, 1.0), ("a", "c", 15, 1.0)])
    pruned = prune_edges(g, {1})
    assert pruned.num_edges == 2
    kept = set(pruned.edge_ids.tolist())
    assert kept == {0, 2}
    for rows in pruned.adjacency.values():
        assert 1 not in set(rows[:, 4].tolist())


def test_stats_reports_days():
    g = build([("a", "b", 0, 1.0), ("b", "c", 86400, 1.0)])
    s = g.stats(time_unit=86400.0)
    assert s["vertices"] == 3 and s["edges"] == 2
    assert s["mean_toe"] == pytest.approx(0.5)  # toes 0 and 1 day
