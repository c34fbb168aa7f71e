import numpy as np
import pytest

from dygem.autodiff import Tensor
from dygem.graph import derive_toe, graph_from_rows
from dygem.model import EmbeddingModel, ModelConfig
from dygem.training import (
    Adam,
    NaNLossError,
    TrainConfig,
    build_batch_plan,
    commit_table_updates,
    compute_batch_losses,
    init_embeddings,
    export_embeddings,
    loss_edge_reconstruction,
    loss_self_id,
    loss_structure_interval,
    loss_toe_regression,
    normalize_time,
    train,
    write_loss_csv,
)
from dygem.walks import Corpus, EdgeSequence, WalkConfig, WindowConfig, build_corpora
from dygem.synthetic import community_graph


# -- time normalization ----------------------------------------------------

def test_normalize_time_anchor_values():
    assert normalize_time(0.0) == 0.0
    assert normalize_time(1.0) == 0.5
    assert normalize_time(1e9) < 1.0
    assert normalize_time(1e9) > normalize_time(1e6)


def test_normalize_time_range_and_monotone():
    rng = np.random.default_rng(0)
    deltas = np.sort(rng.uniform(0, 1e8, 10_000))
    out = normalize_time(deltas)
    assert np.all((out >= 0.0) & (out < 1.0))
    distinct = np.unique(deltas)
    mapped = normalize_time(distinct)
    assert np.all(np.diff(mapped) > 0)


def test_normalize_time_rejects_negative():
    with pytest.raises(ValueError):
        normalize_time(-1.0)
    with pytest.raises(ValueError):
        normalize_time(np.array([0.5, -0.5]))


# -- loss oracles ------------------------------------------------------------

def log_softmax_ref(scores):
    m = scores.max(axis=-1, keepdims=True)
    z = scores - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def test_loss_self_id_matches_hand_computation():
    rng = np.random.default_rng(1)
    rhat = rng.normal(size=(3, 4))
    table = rng.normal(size=(4, 4))
    targets = np.array([0, 2, 1])
    got = float(loss_self_id(Tensor(rhat), targets, table, None).value)
    scores = rhat @ table.T
    want = -log_softmax_ref(scores)[np.arange(3), targets].mean()
    assert abs(got - want) < 1e-10


def test_loss_self_id_uniform_scores_give_log_c():
    rhat = Tensor(np.zeros((2, 4)))
    table = np.ones((6, 4))
    got = float(loss_self_id(rhat, np.array([0, 3]), table, None).value)
    assert abs(got - np.log(6)) < 1e-12


def test_loss_self_id_large_margin_vanishes():
    table = np.vstack([np.eye(3) * 50.0, np.zeros((1, 3))])
    rhat = Tensor(np.eye(3))
    got = float(loss_self_id(rhat, np.array([0, 1, 2]), table, None).value)
    assert got < 1e-10


def test_loss_self_id_sampled_candidates():
    rng = np.random.default_rng(2)
    rhat = rng.normal(size=(2, 4))
    table = rng.normal(size=(5, 4))
    targets = np.array([1, 3])
    negs = np.array([[0, 2], [0, 4]])
    got = float(loss_self_id(Tensor(rhat), targets, table, negs).value)
    want = 0.0
    for i in range(2):
        cand = np.concatenate([[targets[i]], negs[i]])
        scores = table[cand] @ rhat[i]
        want += -log_softmax_ref(scores[None, :])[0, 0]
    assert abs(got - want / 2) < 1e-10


def test_loss_edge_reconstruction_matches_hand_computation():
    rng = np.random.default_rng(3)
    r_i = rng.normal(size=(2, 4))
    r_j = rng.normal(size=(2, 4))
    table = rng.normal(size=(6, 4))
    negs = np.array([[0, 4], [2, 0]])
    got = float(loss_edge_reconstruction(Tensor(r_i), Tensor(r_j),
                                         np.array([1, 3]), table, negs).value)
    want = 0.0
    for i in range(2):
        scores = np.concatenate([[r_i[i] @ r_j[i]], table[negs[i]] @ r_i[i]])
        want += -log_softmax_ref(scores[None, :])[0, 0]
    assert abs(got - want / 2) < 1e-10


def test_loss_edge_full_softmax_masks_true_column():
    rng = np.random.default_rng(4)
    r_i = rng.normal(size=(1, 3))
    r_j = rng.normal(size=(1, 3))
    table = rng.normal(size=(5, 3))  # 4 real vertices + reserved row
    true_ids = np.array([2])
    got = float(loss_edge_reconstruction(Tensor(r_i), Tensor(r_j),
                                         true_ids, table, None).value)
    others = [0, 1, 3]
    scores = np.concatenate([[r_i[0] @ r_j[0]], table[others] @ r_i[0]])
    want = -log_softmax_ref(scores[None, :])[0, 0]
    assert abs(got - want) < 1e-10


def test_loss_toe_zero_when_exact():
    rng = np.random.default_rng(5)
    r_i = Tensor(rng.normal(size=(3, 4)))
    r_j = Tensor(rng.normal(size=(3, 4)))
    w = Tensor(rng.normal(size=(4, 1)))
    deltas = ((r_i.value + r_j.value) @ w.value).reshape(-1)
    got = float(loss_toe_regression(r_i, r_j, w, deltas).value)
    assert got < 1e-24


def test_loss_toe_matches_half_mse():
    rng = np.random.default_rng(6)
    r_i = rng.normal(size=(4, 3))
    r_j = rng.normal(size=(4, 3))
    w = rng.normal(size=(3, 1))
    deltas = rng.uniform(0, 1, 4)
    got = float(loss_toe_regression(Tensor(r_i), Tensor(r_j), Tensor(w), deltas).value)
    pred = ((r_i + r_j) @ w).reshape(-1)
    want = 0.5 * np.mean((pred - deltas) ** 2)
    assert abs(got - want) < 1e-12


def test_loss_structure_constant_case():
    # zero head weights and all gaps 0.5 leave the squared error at 0.25
    r_s = Tensor(np.random.default_rng(7).normal(size=(6, 4)))
    w = Tensor(np.zeros((4, 1)))
    later = np.array([1, 2, 3])
    earlier = np.array([0, 1, 2])
    deltas = np.full(3, 0.5)
    got = float(loss_structure_interval(r_s, later, earlier, deltas, w).value)
    assert abs(got - 0.25) < 1e-12


def test_loss_structure_matches_brute_force_window():
    rng = np.random.default_rng(8)
    r_s = rng.normal(size=(4, 5))
    w = rng.normal(size=(5, 1))
    pairs = [(b, a) for b in range(4) for a in range(b)]
    later = np.array([p[0] for p in pairs])
    earlier = np.array([p[1] for p in pairs])
    deltas = rng.uniform(0, 1, len(pairs))
    got = float(loss_structure_interval(Tensor(r_s), later, earlier, deltas,
                                        Tensor(w)).value)
    want = np.mean([
        ((r_s[b] + r_s[a]) @ w - d) ** 2 for (b, a), d in zip(pairs, deltas)
    ])
    assert abs(got - want) < 1e-12
    assert len(pairs) == 6


def test_loss_structure_empty_pairs_is_zero():
    got = loss_structure_interval(Tensor(np.zeros((2, 3))), np.zeros(0, dtype=int),
                                  np.zeros(0, dtype=int), np.zeros(0), Tensor(np.zeros((3, 1))))
    assert float(got.value) == 0.0


# -- batch machinery ---------------------------------------------------------

def toy_setup(seed=0):
    g = community_graph(n_vertices=12, n_communities=3, events=80, seed=seed)
    cfg = WalkConfig(m=40, max_len=3, min_len=3, seed=seed)
    train_c, _ = build_corpora(g, cfg, 0.2)
    mc = ModelConfig(n_vertices=g.num_vertices, k=4, heads=2, blocks=1,
                     max_len=3, dropout=0.0, seed=seed)
    return g, train_c, EmbeddingModel(mc)


def test_batch_plan_contents():
    g, corpus, model = toy_setup()
    tc = TrainConfig(batch_size=4, epochs=1, neg_samples=3,
                     window=WindowConfig(3, 1), seed=1)
    batch = corpus.sequences[:4]
    plan = build_batch_plan(batch, model.cfg.eos_id, model.cfg.n_vertices,
                            g.neighbor_sets(), tc, np.random.default_rng(0))
    slots = model.cfg.slots
    assert plan.vids_ext.shape == (4, slots + 1)
    assert np.all(plan.vids_ext[:, -1] == model.cfg.eos_id)
    assert np.all(plan.decay_div >= 1.0)
    assert np.all(plan.lv_negs != plan.targets[:, None])
    assert np.all((plan.pair_delta >= 0) & (plan.pair_delta < 1))
    nbrs = g.neighbor_sets()
    qs = plan.targets[plan.pair_i]
    for q, negs in zip(qs, plan.pair_negs):
        for neg in negs:
            assert int(neg) not in nbrs[int(q)]
            assert int(neg) != int(q)


def test_joint_loss_additivity():
    g, corpus, model = toy_setup()
    tc = TrainConfig(batch_size=4, epochs=1, neg_samples=2,
                     window=WindowConfig(3, 1), seed=2)
    batch = corpus.sequences[:4]
    plan = build_batch_plan(batch, model.cfg.eos_id, model.cfg.n_vertices,
                            g.neighbor_sets(), tc, np.random.default_rng(0))
    losses, _, _ = compute_batch_losses(model, plan, tc)
    total = float(losses["total"].value)
    parts = sum(float(losses[k].value) for k in ("l_v", "l_s", "l_edg", "l_toe"))
    assert abs(total - parts) < 1e-12


def test_gradient_partition_structure_disabled():
    g, corpus, model = toy_setup()
    tc = TrainConfig(batch_size=4, epochs=1, neg_samples=2,
                     window=WindowConfig(3, 1), seed=3, use_structure=False)
    batch = corpus.sequences[:4]
    plan = build_batch_plan(batch, model.cfg.eos_id, model.cfg.n_vertices,
                            g.neighbor_sets(), tc, np.random.default_rng(0))
    model.zero_grads()
    losses, _, _ = compute_batch_losses(model, plan, tc)
    losses["total"].backward()
    for name, p in model.params.items():
        if name.startswith("strc") or name == "w_s":
            assert p.grad is None or not np.any(p.grad)
        if name.startswith(("enc0", "dec0", "tlstm")):
            assert p.grad is not None and np.any(p.grad)


def test_gradient_partition_toe_head():
    g, corpus, model = toy_setup()
    tc = TrainConfig(batch_size=4, epochs=1, neg_samples=2,
                     window=WindowConfig(3, 1), seed=4)
    batch = corpus.sequences[:4]
    plan = build_batch_plan(batch, model.cfg.eos_id, model.cfg.n_vertices,
                            g.neighbor_sets(), tc, np.random.default_rng(0))
    model.zero_grads()
    losses, _, _ = compute_batch_losses(model, plan, tc)
    without_toe = losses["l_v"] + losses["l_s"] + losses["l_edg"]
    without_toe.backward()
    assert model.params["w_toe"].grad is None or not np.any(model.params["w_toe"].grad)
    model.zero_grads()
    losses, _, _ = compute_batch_losses(model, plan, tc)
    losses["l_toe"].backward()
    assert np.any(model.params["w_toe"].grad)


def test_adam_zero_lr_keeps_parameters():
    g, corpus, model = toy_setup()
    before = model.param_values()
    tc = TrainConfig(batch_size=4, lr=0.0, epochs=2, neg_samples=2,
                     window=WindowConfig(3, 1), seed=5)
    train(g, corpus, model, tc)
    for name, val in model.param_values().items():
        assert np.array_equal(val, before[name]), name


def test_untouched_rows_bit_identical():
    g, corpus, model = toy_setup()
    # restrict training to the first batch only
    sub = Corpus(sequences=corpus.sequences[:3], role="train",
                 eos_id=corpus.eos_id, max_len=corpus.max_len)
    seen = set()
    for s in sub.sequences:
        seen.update(int(v) for v in s.vids)
    before = model.r_table.copy()
    tc = TrainConfig(batch_size=3, lr=0.01, epochs=2, neg_samples=2,
                     window=WindowConfig(2, 1), seed=6)
    train(g, sub, model, tc)
    for v in range(model.cfg.n_vertices + 1):
        if v not in seen:
            assert np.array_equal(model.r_table[v], before[v]), v
        else:
            assert not np.array_equal(model.r_table[v], before[v])


def test_commit_last_write_wins():
    mc = ModelConfig(n_vertices=4, k=2, heads=1, blocks=1, max_len=2, seed=0)
    model = EmbeddingModel(mc)
    ids = np.array([1, 2, 1, 3])
    vals = np.arange(8, dtype=np.float64).reshape(4, 2)
    commit_table_updates(model, ids, vals)
    assert np.array_equal(model.r_table[1], vals[2])
    assert np.array_equal(model.r_table[2], vals[1])
    assert np.array_equal(model.r_table[3], vals[3])


def test_nan_loss_aborts_with_snapshot():
    g, corpus, model = toy_setup()
    model.params["fuse.W1"].value[0, 0] = np.inf
    tc = TrainConfig(batch_size=4, lr=0.01, epochs=1, neg_samples=2,
                     window=WindowConfig(3, 1), seed=7)
    with np.errstate(invalid="ignore"), pytest.raises(NaNLossError) as err:
        train(g, corpus, model, tc)
    assert err.value.snapshot is not None


def test_train_report_counts_and_csv(tmp_path):
    g, corpus, model = toy_setup()
    tc = TrainConfig(batch_size=5, lr=0.005, epochs=3, neg_samples=2,
                     window=WindowConfig(3, 1), seed=8)
    reports = train(g, corpus, model, tc)
    n_batches = (len(corpus) + 4) // 5
    assert len(reports) == 3 * n_batches
    path = tmp_path / "loss.csv"
    write_loss_csv(reports, path)
    lines = path.read_text().strip().split("\n")
    assert lines[0].startswith("epoch,batch")
    assert len(lines) == 1 + len(reports)


def test_train_deterministic_given_seed():
    g, corpus, m1 = toy_setup(seed=3)
    _, _, m2 = toy_setup(seed=3)
    tc = TrainConfig(batch_size=5, lr=0.01, epochs=2, neg_samples=3,
                     window=WindowConfig(3, 1), seed=9)
    r1 = train(g, corpus, m1, tc)
    tc2 = TrainConfig(batch_size=5, lr=0.01, epochs=2, neg_samples=3,
                      window=WindowConfig(3, 1), seed=9)
    r2 = train(g, corpus, m2, tc2)
    assert [r.total for r in r1] == [r.total for r in r2]
    assert np.array_equal(m1.r_table, m2.r_table)
    for name in m1.params:
        assert np.array_equal(m1.params[name].value, m2.params[name].value)


# -- initial embeddings -------------------------------------------------------

def test_init_embeddings_reproducible():
    a = init_embeddings(20, 8, seed=4)
    b = init_embeddings(20, 8, seed=4)
    assert np.array_equal(a, b)
    assert a.shape == (21, 8)
    assert abs(a.std() - 1 / np.sqrt(8)) < 0.02


def test_init_embeddings_file_round_trip(tmp_path):
    labels = [f"v{i}" for i in range(6)]
    table = init_embeddings(6, 4, seed=1)
    path = tmp_path / "emb.txt"
    export_embeddings(table[:6], labels, path)
    loaded = init_embeddings(6, 4, mode="file", path=path, labels=labels, seed=1)
    assert np.array_equal(loaded[:6], table[:6])


def test_init_embeddings_file_errors(tmp_path):
    path = tmp_path / "emb.txt"
    path.write_text("v0 1.0 2.0\n")
    with pytest.raises(ValueError, match="missing"):
        init_embeddings(2, 2, mode="file", path=path, labels=["v0", "v1"])
    path.write_text("v0 1.0 2.0 3.0\nv1 1.0 2.0\n")
    with pytest.raises(ValueError, match="dimension"):
        init_embeddings(2, 2, mode="file", path=path, labels=["v0", "v1"])


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=-0.1)
    with pytest.raises(ValueError):
        TrainConfig(neg_samples=-1)
    with pytest.raises(ValueError):
        TrainConfig(time_unit=0.0)
