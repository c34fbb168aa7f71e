import numpy as np
import pytest

from dygem.graph import VertexOccurrence, derive_toe, graph_from_rows
from dygem.walks import (
    Corpus,
    EdgeSequence,
    WalkConfig,
    WindowConfig,
    build_corpora,
    export_corpus_text,
    load_corpus,
    sample_walk,
    save_corpus,
    transition_weights,
    window_offsets,
    window_pair_indices,
    window_pairs,
)
from dygem.synthetic import community_graph


def build(rows):
    return derive_toe(graph_from_rows(rows))


def fig_example_graph():
    # a has two forward candidates: b (degree 2, timespan 1), f (degree 2, timespan 2)
    return build([
        ("x", "a", 10, 1.0),
        ("b", "a", 11, 1.0),
        ("f", "a", 12, 1.0),
        ("b", "y", 20, 1.0),
        ("f", "w", 21, 1.0),
    ])


def test_transition_worked_example_exact():
    g = fig_example_graph()
    out = transition_weights(g, VertexOccurrence(g.label_to_id["a"], 10))
    probs = {g.labels[occ.vertex]: p for occ, p in out}
    assert probs["b"] == np.float64(2.0) / 3.0
    assert probs["f"] == np.float64(1.0) / 3.0


def test_transition_prefers_smaller_timespan_at_equal_degree():
    g = fig_example_graph()
    out = transition_weights(g, VertexOccurrence(g.label_to_id["a"], 10))
    probs = {g.labels[occ.vertex]: p for occ, p in out}
    assert probs["b"] > probs["f"]


def test_transition_single_candidate_uniform_fallback():
    g = build([("x", "a", 10, 1.0), ("b", "a", 12, 1.0)])
    out = transition_weights(g, VertexOccurrence(g.label_to_id["a"], 10))
    assert len(out) == 1
    assert out[0][1] == 1.0


def test_transition_empty_candidates():
    g = build([("a", "b", 10, 1.0)])
    out = transition_weights(g, VertexOccurrence(g.label_to_id["b"], 10))
    assert out == []


def test_transition_probabilities_sum_to_one():
    g = community_graph(n_vertices=20, n_communities=2, events=150, seed=3)
    rng = np.random.default_rng(0)
    checked = 0
    for v in range(g.num_vertices):
        for tov in g.tov_sets[v][:2]:
            out = transition_weights(g, VertexOccurrence(v, tov))
            if out:
                assert sum(p for _, p in out) == pytest.approx(1.0, abs=1e-12)
                assert all(p >= 0 for _, p in out)
                checked += 1
    assert checked > 10


def test_empirical_frequencies_match_weights():
    # three candidates with distinct degrees and timespans
    g = build([
        ("x", "a", 10, 1.0),
        ("b", "a", 11, 1.0),
        ("f", "a", 12, 1.0),
        ("h", "a", 14, 1.0),
        ("b", "y", 20, 1.0),
        ("f", "w", 21, 1.0),
        ("f", "u", 22, 1.0),
    ])
    out = transition_weights(g, VertexOccurrence(g.label_to_id["a"], 10))
    assert len(out) == 3
    probs = np.asarray([p for _, p in out])
    rng = np.random.default_rng(17)
    draws = rng.choice(len(probs), size=100_000, p=probs)
    freq = np.bincount(draws, minlength=len(probs)) / len(draws)
    assert np.max(np.abs(freq - probs)) < 0.01


def test_walk_deterministic_path():
    # strictly increasing joins: a@5, b joins at 10 linking to a, c at 12 to b
    g = build([("a", "z", 5, 1.0), ("b", "a", 10, 1.0), ("c", "b", 12, 1.0)])
    cfg = WalkConfig(m=3, max_len=5, min_len=3, seed=0)
    rng = np.random.default_rng(0)
    seq = sample_walk(g, VertexOccurrence(g.label_to_id["a"], 5), cfg, rng)
    assert seq is not None
    assert seq.real_len == 3
    names = [g.labels[v] if v < g.num_vertices else "<eos>" for v in seq.vids]
    assert names == ["a", "b", "c", "<eos>", "<eos>", "<eos>"]
    assert list(seq.toes[:3]) == [0, 5, 2]
    assert list(seq.tovs[:3]) == [5, 10, 12]


def test_walk_rejects_isolated_start():
    g = build([("a", "b", 10, 1.0), ("c", "d", 12, 1.0)])
    cfg = WalkConfig(m=2, max_len=5, min_len=3, seed=0)
    rng = np.random.default_rng(0)
    seq = sample_walk(g, VertexOccurrence(g.label_to_id["d"], 12), cfg, rng)
    assert seq is None


def test_walk_tovs_strictly_increase():
    g = community_graph(n_vertices=30, n_communities=3, events=250, seed=9)
    cfg = WalkConfig(m=40, max_len=5, min_len=3, seed=1)
    accepted = 0
    for rank, occ in enumerate(g.occurrences()[:60]):
        rng = np.random.default_rng(rank)
        seq = sample_walk(g, occ, cfg, rng)
        if seq is None:
            continue
        accepted += 1
        tovs = seq.tovs[:seq.real_len]
        assert np.all(np.diff(tovs) > 0)
        assert cfg.min_len <= seq.real_len <= cfg.max_len
    assert accepted > 5


def test_walk_config_validation():
    with pytest.raises(ValueError):
        WalkConfig(m=10, max_len=5, min_len=1).validate()
    g = build([("a", "b", 10, 1.0)])
    with pytest.raises(ValueError):
        WalkConfig(m=50, max_len=5, min_len=3).validate(g)


def test_build_corpora_disjoint_and_distinct():
    g = community_graph(n_vertices=40, n_communities=4, events=400, seed=21)
    cfg = WalkConfig(m=120, max_len=5, min_len=3, seed=13)
    train, test = build_corpora(g, cfg, 0.2)
    train_edges = set()
    for s in train.sequences:
        train_edges.update(s.edge_ids)
    test_edges = set()
    for s in test.sequences:
        test_edges.update(s.edge_ids)
    assert not (train_edges & test_edges)
    keys = [s.key() for s in train.sequences] + [s.key() for s in test.sequences]
    assert len(set(keys)) == len(keys)
    assert test.meta["starts"] == 24
    # corpora sorted by start time
    for corpus in (train, test):
        starts = corpus.start_times()
        assert np.all(np.diff(starts) >= 0)


def test_build_corpora_rejects_bad_fraction():
    g = community_graph(n_vertices=20, n_communities=2, events=150, seed=3)
    cfg = WalkConfig(m=40, max_len=4, min_len=3, seed=0)
    with pytest.raises(ValueError):
        build_corpora(g, cfg, 0.0)
    with pytest.raises(ValueError):
        build_corpora(g, cfg, 1.0)


def test_build_corpora_deterministic():
    g = community_graph(n_vertices=25, n_communities=3, events=200, seed=4)
    cfg = WalkConfig(m=60, max_len=4, min_len=3, seed=99)
    a_train, a_test = build_corpora(g, cfg, 0.25)
    b_train, b_test = build_corpora(g, cfg, 0.25)
    assert [s.key() for s in a_train.sequences] == [s.key() for s in b_train.sequences]
    assert [s.key() for s in a_test.sequences] == [s.key() for s in b_test.sequences]


def test_start_selection_without_replacement():
    g = community_graph(n_vertices=15, n_communities=3, events=120, seed=8)
    total = g.num_occurrences()
    cfg = WalkConfig(m=total - 1, max_len=4, min_len=3, seed=2)
    train, test = build_corpora(g, cfg, 0.5)
    starts = [(int(s.vids[0]), int(s.tovs[0])) for s in train.sequences]
    starts += [(int(s.vids[0]), int(s.tovs[0])) for s in test.sequences]
    assert len(set(starts)) == len(starts)


def test_window_config_requires_overlap():
    with pytest.raises(ValueError):
        WindowConfig(4, 4)
    with pytest.raises(ValueError):
        WindowConfig(4, 0)


def test_window_pairs_worked_example():
    wcfg = WindowConfig(4, 2)
    offsets = window_offsets(10, wcfg)
    assert offsets == [0, 2, 4, 6]
    pairs = list(window_pair_indices(10, wcfg))
    assert len(pairs) == 24
    assert len(pairs) < 10 * 9 // 2


def test_window_pairs_small_corpus_single_window():
    wcfg = WindowConfig(8, 3)
    pairs = list(window_pair_indices(5, wcfg))
    assert len(pairs) == 10  # all pairs of the whole corpus


def test_window_pair_reduction_step1_failure_zone():
    # the simple precondition admits step-1 configs that save nothing:
    # window 5 over m=16 emits 12 * 10 = 120 = 16*15/2 pairs, and m=14
    # emits 100 > 91
    for m, expect_reduced in [(14, False), (16, False), (17, True), (40, True)]:
        wcfg = WindowConfig(5, 1)
        assert 5 * 5 - 3 * 5 + 3 < m
        assert wcfg.reduces_pairs(m) == expect_reduced
        brute = sum(1 for _ in window_pair_indices(m, wcfg))
        assert (brute < m * (m - 1) // 2) == expect_reduced


def test_window_pair_reduction_property():
    # under the precondition, any step >= 2 strictly reduces the pair count;
    # step 1 reduces exactly when m > (window_len - 1)^2
    rng = np.random.default_rng(3)
    for _ in range(1000):
        ls = int(rng.integers(2, 12))
        lo = max(ls * ls - 3 * ls + 4, ls + 1)
        m = int(rng.integers(lo, lo + 300))
        step = int(rng.integers(1, ls))
        wcfg = WindowConfig(ls, step)
        n_windows = len(window_offsets(m, wcfg))
        count = n_windows * ls * (ls - 1) // 2
        brute = sum(1 for _ in window_pair_indices(m, wcfg))
        assert brute == count == wcfg.pair_count(m)
        assert n_windows <= m - ls + 1
        assert wcfg.reduces_pairs(m) == (count < m * (m - 1) // 2)
        if step >= 2 or m > (ls - 1) ** 2:
            assert count < m * (m - 1) // 2


def test_window_pairs_normalized_gaps():
    seqs = []
    for i, start in enumerate([0, 10, 20, 30]):
        seqs.append(EdgeSequence(vids=np.zeros(3, dtype=np.int64),
                                 tovs=np.zeros(3, dtype=np.int64),
                                 toes=np.zeros(3, dtype=np.int64),
                                 start_time=start, real_len=2, seq_id=i))
    corpus = Corpus(sequences=seqs, role="train", eos_id=5, max_len=2)
    out = list(window_pairs(corpus, WindowConfig(4, 2)))
    assert all(0.0 <= d < 1.0 for _, _, d in out)
    later, earlier, delta = out[0]
    assert later > earlier


def test_corpus_round_trip(tmp_path):
    g = community_graph(n_vertices=25, n_communities=3, events=200, seed=4)
    cfg = WalkConfig(m=60, max_len=4, min_len=3, seed=9)
    train, test = build_corpora(g, cfg, 0.25)
    path = tmp_path / "train.corpus"
    save_corpus(train, path)
    loaded = load_corpus(path)
    assert loaded.role == "train"
    assert loaded.eos_id == train.eos_id
    assert [s.key() for s in loaded.sequences] == [s.key() for s in train.sequences]
    export_corpus_text(train, tmp_path / "train.txt")
    assert (tmp_path / "train.txt").read_text().count("\n") == len(train) + 1
