"""Self-supervised training: joint losses, time normalization, Adam loop.

Three objectives are optimized jointly with equal weights: identifying each
vertex from its edge-formation embedding, regressing the start-time gap
between local structures, and reconstructing edges together with their
timespans from the fused representations.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import EmbeddingModel, visibility_weights
from .walks import Corpus, WindowConfig, window_pair_indices

_STREAM_PLAN = 7
_STREAM_DROPOUT = 8


class NaNLossError(RuntimeError):
    """Raised when a loss or gradient goes non-finite; carries the last good
    parameter snapshot so a checkpoint can still be written."""

    def __init__(self, where: str, snapshot):
        self.where = where
        self.snapshot = snapshot
        super().__init__(f"non-finite value in {where}")


def normalize_time(delta):
    """Map a non-negative duration into [0, 1) by 2*arctan(delta)/pi.

    Strictly increasing; 0 maps to 0 and 1 maps to exactly 0.5. Accepts
    scalars or arrays; negative inputs are rejected.
    """
    arr = np.asarray(delta, dtype=np.float64)
    if np.any(arr < 0):
        raise ValueError("durations must be non-negative")
    out = (2.0 * np.arctan(arr)) / np.pi
    return float(out) if np.isscalar(delta) or arr.ndim == 0 else out


@dataclass
class TrainConfig:
    batch_size: int = 200
    lr: float = 0.005
    epochs: int = 10
    neg_samples: int = 5
    window: WindowConfig = field(default_factory=lambda: WindowConfig(10, 5))
    seed: int = 0
    time_unit: float = 1.0
    decay_on_normalized: bool = True
    use_structure: bool = True
    checkpoint_every: int = 0
    # recompute stored rows under the final weights after the last epoch
    refresh_final: bool = True
    # also reconcile stored rows with the weights every this many epochs
    # (0 = only at the end); keeps scoring rows of vertices outside the
    # current batch from going stale on long runs
    refresh_every: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.neg_samples < 0:
            raise ValueError("neg_samples must be >= 0 (0 = full softmax)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size >= 1 and epochs >= 0 required")
        if self.time_unit <= 0:
            raise ValueError("time_unit must be positive")


@dataclass
class LossReport:
    epoch: int
    batch: int
    l_v: float
    l_s: float
    l_edg: float
    l_toe: float
    total: float
    wall_ms: float


def init_embeddings(n_vertices: int, k: int, mode: str = "random", path=None,
                    labels: list[str] | None = None, seed: int = 0) -> np.ndarray:
    """Initial representation table, one row per vertex plus the EOS row.

    ``random`` draws N(0, 1/sqrt(k)); ``file`` loads rows keyed by vertex
    label ("label v1 ... vk" per line), so any externally trained vectors can
    seed the table. The EOS row is always drawn from the seeded generator.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xEB)))
    table = rng.normal(0.0, 1.0 / math.sqrt(k), (n_vertices + 1, k))
    if mode == "random":
        return table
    if mode != "file":
        raise ValueError(f"unknown init mode {mode!r}")
    if path is None or labels is None:
        raise ValueError("file mode needs a path and the vertex label list")
    loaded: dict[str, np.ndarray] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            loaded[parts[0]] = np.asarray([float(x) for x in parts[1:]], dtype=np.float64)
    missing = [lb for lb in labels if lb not in loaded]
    if missing:
        raise ValueError(f"embedding file missing {len(missing)} vertices, e.g. {missing[:5]}")
    bad = [lb for lb in labels if loaded[lb].shape != (k,)]
    if bad:
        raise ValueError(f"embedding rows with wrong dimension (need {k}), e.g. {bad[:5]}")
    for i, lb in enumerate(labels):
        table[i] = loaded[lb]
    return table


def export_embeddings(table: np.ndarray, labels: list[str], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, lb in enumerate(labels):
            fh.write(lb + " " + " ".join(repr(float(x)) for x in table[i]) + "\n")


# -- loss terms ----------------------------------------------------------

def loss_self_id(rhat: Tensor, targets: np.ndarray, table: Tensor | np.ndarray,
                 negatives: np.ndarray | None) -> Tensor:
    """Cross-entropy of each row of ``rhat`` classifying its own vertex.

    Scores are dot products against rows of the representation table (rows of
    vertices in the current batch are live, so candidate rows receive
    gradient too); candidates are all rows when ``negatives`` is None,
    otherwise the true row plus the sampled negative rows.
    """
    table = ad.as_tensor(table)
    n, k = rhat.shape
    if negatives is None:
        scores = rhat @ table.swap_last()
        picked = ad.log_softmax(scores)[np.arange(n), targets]
    else:
        cand = np.concatenate([targets[:, None], negatives], axis=1)
        rows = ad.gather_rows(table, cand)
        scores = (rows @ rhat.reshape((n, k, 1))).reshape((n, cand.shape[1]))
        picked = ad.log_softmax(scores)[:, 0]
    return -picked.mean()


def loss_edge_reconstruction(r_i: Tensor, r_j: Tensor, true_ids: np.ndarray,
                             table: Tensor | np.ndarray, negatives: np.ndarray | None) -> Tensor:
    """Cross-entropy of picking the true partner from candidate vertices.

    The true partner is scored against its live representation at the pair's
    own slot; negative candidates score against table rows. In full-softmax
    mode the true partner's table column is masked out so it is not counted
    twice.
    """
    table = ad.as_tensor(table)
    n, k = r_i.shape
    n_real = table.shape[0] - 1
    s_true = (r_i * r_j).sum(axis=-1, keepdims=True)
    if negatives is None:
        mask = np.zeros((n, n_real))
        mask[np.arange(n), true_ids] = -np.inf
        s_all = r_i @ table[:n_real].swap_last() + Tensor(mask)
        scores = ad.concat([s_true, s_all], axis=-1)
    else:
        rows = ad.gather_rows(table, negatives)
        s_neg = (rows @ r_i.reshape((n, k, 1))).reshape((n, negatives.shape[1]))
        scores = ad.concat([s_true, s_neg], axis=-1)
    return -(ad.log_softmax(scores)[:, 0]).mean()


def loss_toe_regression(r_i: Tensor, r_j: Tensor, w_toe: Tensor, deltas: np.ndarray) -> Tensor:
    """Half mean squared error of the linear timespan head over positive pairs."""
    pred = (r_i + r_j) @ w_toe
    diff = pred - Tensor(deltas.reshape(-1, 1))
    return 0.5 * (diff * diff).mean()


def loss_structure_interval(r_s: Tensor, later: np.ndarray, earlier: np.ndarray,
                            deltas: np.ndarray, w_s: Tensor) -> Tensor:
    """Mean squared error of the start-gap head over emitted window pairs."""
    if len(later) == 0:
        return Tensor(0.0)
    pred = (r_s[later] + r_s[earlier]) @ w_s
    diff = pred - Tensor(deltas.reshape(-1, 1))
    return (diff * diff).mean()


# -- batch assembly --------------------------------------------------------

@dataclass
class BatchPlan:
    """Everything random or index-shaped about one batch, fixed up front so a
    forward pass is a pure function of parameters (finite differences reuse
    one plan)."""

    vids_ext: np.ndarray
    decay_div: np.ndarray
    targets: np.ndarray
    lv_negs: np.ndarray | None
    pair_i: np.ndarray
    pair_j: np.ndarray
    pair_true: np.ndarray
    pair_negs: np.ndarray | None
    pair_delta: np.ndarray
    win_later: np.ndarray
    win_earlier: np.ndarray
    win_delta: np.ndarray


def _sample_excluding(rng, n_vertices: int, count: int, banned_rows: list[set[int]]) -> np.ndarray:
    """Uniform ids per row avoiding that row's banned set; falls back to the
    raw draw after enough rejection rounds (degenerate tiny graphs)."""
    out = rng.integers(0, n_vertices, size=(len(banned_rows), count))
    for r, banned in enumerate(banned_rows):
        if not banned:
            continue
        for _ in range(50):
            bad = np.asarray([x in banned for x in out[r]])
            if not bad.any():
                break
            out[r, bad] = rng.integers(0, n_vertices, size=int(bad.sum()))
    return out


def build_batch_plan(batch: list, eos_id: int, n_vertices: int,
                     neighbor_sets: list[set[int]], cfg: TrainConfig,
                     rng: np.random.Generator) -> BatchPlan:
    b = len(batch)
    slots = len(batch[0].vids)
    vids = np.stack([s.vids for s in batch])
    toes = np.stack([s.toes for s in batch]).astype(np.float64)
    vids_ext = np.concatenate([vids, np.full((b, 1), eos_id, dtype=np.int64)], axis=1)
    toes_ext = np.concatenate([toes, np.zeros((b, 1))], axis=1)
    toes_norm = normalize_time(toes_ext / cfg.time_unit)
    decay_src = toes_norm if cfg.decay_on_normalized else toes_ext
    decay_div = np.log(np.e + decay_src)

    targets = vids.reshape(-1)
    if cfg.neg_samples > 0:
        lv_negs = _sample_excluding(rng, n_vertices, cfg.neg_samples,
                                    [{int(t)} for t in targets])
    else:
        lv_negs = None

    pair_i, pair_j, pair_delta = [], [], []
    for row, s in enumerate(batch):
        for p in range(s.real_len - 1):
            pair_i.append(row * slots + p)
            pair_j.append(row * slots + p + 1)
            pair_delta.append(toes_norm[row, p + 1])
    pair_i = np.asarray(pair_i, dtype=np.int64)
    pair_j = np.asarray(pair_j, dtype=np.int64)
    pair_delta = np.asarray(pair_delta, dtype=np.float64)
    pair_true = targets[pair_j] if len(pair_j) else np.zeros(0, dtype=np.int64)
    if cfg.neg_samples > 0 and len(pair_i):
        banned = [neighbor_sets[int(targets[i])] | {int(targets[i])} for i in pair_i]
        pair_negs = _sample_excluding(rng, n_vertices, cfg.neg_samples, banned)
    else:
        pair_negs = None

    starts = np.asarray([s.start_time for s in batch], dtype=np.float64)
    later, earlier, deltas = [], [], []
    if cfg.use_structure and b >= 2:
        for bi, ai in window_pair_indices(b, cfg.window):
            later.append(bi)
            earlier.append(ai)
            deltas.append(normalize_time((starts[bi] - starts[ai]) / cfg.time_unit))
    return BatchPlan(vids_ext=vids_ext, decay_div=decay_div, targets=targets,
                     lv_negs=lv_negs, pair_i=pair_i, pair_j=pair_j,
                     pair_true=pair_true, pair_negs=pair_negs, pair_delta=pair_delta,
                     win_later=np.asarray(later, dtype=np.int64),
                     win_earlier=np.asarray(earlier, dtype=np.int64),
                     win_delta=np.asarray(deltas, dtype=np.float64))


def compute_batch_losses(model: EmbeddingModel, plan: BatchPlan, cfg: TrainConfig,
                         training: bool = False, rng=None):
    """Forward pass and all four loss terms for one batch.

    Returns (losses dict, fused tensor, flat vertex ids) without touching any
    state; the caller decides whether to backpropagate and commit.
    """
    cfgm = model.cfg
    slots = cfgm.slots
    b = plan.vids_ext.shape[0]
    table = model.r_table

    memory, rhat = model.forward_sequences(plan.vids_ext, plan.decay_div, training, rng)

    if cfg.use_structure:
        vis = Tensor(visibility_weights(slots, cfgm.max_len))
        seeds = ad.permute(vis @ rhat, (1, 0, 2))
        struct_out = model.structure(seeds, training, rng)
        r_s_full = struct_out[slots - 1]
        struct_for_fuse = ad.permute(struct_out, (1, 0, 2))
    else:
        r_s_full = Tensor(np.zeros((b, cfgm.k)))
        struct_for_fuse = Tensor(np.zeros((b, slots, cfgm.k)))

    fused = model.fuse(rhat, struct_for_fuse, training, rng)
    flat_rhat = rhat.reshape((b * slots, cfgm.k))
    flat_fused = fused.reshape((b * slots, cfgm.k))

    # scoring table: stored rows, except vertices in this batch score by the
    # live fused value that is about to be committed (their final slot wins)
    flat_ids = plan.vids_ext[:, :slots].reshape(-1)
    uniq_ids, last_pos = _last_occurrence(flat_ids)
    live_table = ad.scatter_rows(table, uniq_ids, flat_fused[last_pos])

    l_v = loss_self_id(flat_rhat, plan.targets, live_table, plan.lv_negs)
    l_s = loss_structure_interval(r_s_full, plan.win_later, plan.win_earlier,
                                  plan.win_delta, model.params["w_s"]) \
        if cfg.use_structure else Tensor(0.0)
    if len(plan.pair_i):
        r_i = flat_fused[plan.pair_i]
        r_j = flat_fused[plan.pair_j]
        l_edg = loss_edge_reconstruction(r_i, r_j, plan.pair_true, live_table, plan.pair_negs)
        l_toe = loss_toe_regression(r_i, r_j, model.params["w_toe"], plan.pair_delta)
    else:
        l_edg = Tensor(0.0)
        l_toe = Tensor(0.0)
    total = l_v + l_s + l_edg + l_toe
    losses = {"l_v": l_v, "l_s": l_s, "l_edg": l_edg, "l_toe": l_toe, "total": total}
    return losses, fused, flat_ids


def _last_occurrence(flat_ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unique ids and the position of each id's final appearance."""
    rev = flat_ids[::-1]
    uniq, first_in_rev = np.unique(rev, return_index=True)
    return uniq, len(flat_ids) - 1 - first_in_rev


def commit_table_updates(model: EmbeddingModel, flat_ids: np.ndarray,
                         fused_values: np.ndarray) -> None:
    """Overwrite the representation rows of vertices present in the batch;
    with repeated ids the latest slot in batch order wins; all other rows are
    left bit-identical."""
    vals = fused_values.reshape(-1, model.cfg.k)
    uniq, pos = _last_occurrence(flat_ids)
    model.r_table[uniq] = vals[pos]


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.value) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.value) for n, p in params.items()}

    def step(self) -> None:
        self.t += 1
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[name], self.v[name]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * (g * g)
            m_hat = m / (1 - self.b1 ** self.t)
            v_hat = v / (1 - self.b2 ** self.t)
            np.sqrt(v_hat, out=v_hat)
            v_hat += self.eps
            m_hat /= v_hat
            m_hat *= self.lr
            p.value = p.value - m_hat


def _check_finite(model: EmbeddingModel, total: float, snapshot) -> None:
    if not np.isfinite(total):
        raise NaNLossError("loss", snapshot)
    for name, p in model.params.items():
        if p.grad is not None and not np.isfinite(p.grad).all():
            raise NaNLossError(f"gradient of {name}", snapshot)


def iter_batches(corpus: Corpus, batch_size: int):
    for i in range(0, len(corpus), batch_size):
        yield corpus.sequences[i:i + batch_size]


def refresh_table(graph, corpus: Corpus, model: EmbeddingModel, cfg: TrainConfig) -> None:
    """Forward-only pass committing fused outputs under the current
    parameters, so stored rows are consistent with the final weights rather
    than with whichever epoch last touched each vertex. No gradients, no
    optimizer state, rows of absent vertices untouched."""
    neighbor_sets = graph.neighbor_sets()
    for b_idx, batch in enumerate(iter_batches(corpus, cfg.batch_size)):
        plan_rng = np.random.default_rng(
            np.random.SeedSequence((cfg.seed, _STREAM_PLAN, cfg.epochs, b_idx)))
        plan = build_batch_plan(batch, model.cfg.eos_id, model.cfg.n_vertices,
                                neighbor_sets, cfg, plan_rng)
        with ad.no_grad():
            _, fused, flat_ids = compute_batch_losses(model, plan, cfg, training=False)
        commit_table_updates(model, flat_ids, fused.value)


def train(graph, corpus: Corpus, model: EmbeddingModel, cfg: TrainConfig,
          on_batch=None, checkpoint_dir=None) -> list[LossReport]:
    """Optimize the model on a training corpus.

    One epoch is one pass over the corpus in start-time order. Every batch
    runs the full forward (recurrence, encoder, decoder, structure attention
    with the joined-slots visibility rule, fusion), takes one Adam step on
    all parameters, and overwrites the representation rows of the vertices
    that appeared. A non-finite loss or gradient aborts with the last good
    snapshot attached.
    """
    if len(corpus) == 0:
        raise ValueError("training corpus is empty")
    neighbor_sets = graph.neighbor_sets()
    opt = Adam(model.params, cfg.lr)
    reports: list[LossReport] = []
    snapshot = (model.param_values(), model.r_table.copy())
    for epoch in range(cfg.epochs):
        for b_idx, batch in enumerate(iter_batches(corpus, cfg.batch_size)):
            t0 = time.perf_counter()
            plan_rng = np.random.default_rng(
                np.random.SeedSequence((cfg.seed, _STREAM_PLAN, epoch, b_idx)))
            drop_rng = np.random.default_rng(
                np.random.SeedSequence((cfg.seed, _STREAM_DROPOUT, epoch, b_idx)))
            plan = build_batch_plan(batch, model.cfg.eos_id, model.cfg.n_vertices,
                                    neighbor_sets, cfg, plan_rng)
            model.zero_grads()
            losses, fused, flat_ids = compute_batch_losses(model, plan, cfg,
                                                           training=True, rng=drop_rng)
            total = float(losses["total"].value)
            losses["total"].backward()
            _check_finite(model, total, snapshot)
            opt.step()
            commit_table_updates(model, flat_ids, fused.value)
            report = LossReport(epoch=epoch, batch=b_idx,
                                l_v=float(losses["l_v"].value),
                                l_s=float(losses["l_s"].value),
                                l_edg=float(losses["l_edg"].value),
                                l_toe=float(losses["l_toe"].value),
                                total=total,
                                wall_ms=(time.perf_counter() - t0) * 1e3)
            reports.append(report)
            if on_batch is not None:
                on_batch(report)
        snapshot = (model.param_values(), model.r_table.copy())
        if cfg.refresh_every > 0 and (epoch + 1) % cfg.refresh_every == 0 \
                and epoch + 1 < cfg.epochs:
            refresh_table(graph, corpus, model, cfg)
        if checkpoint_dir is not None and cfg.checkpoint_every > 0 \
                and (epoch + 1) % cfg.checkpoint_every == 0:
            from .model import save_checkpoint
            from pathlib import Path
            save_checkpoint(model, Path(checkpoint_dir) / f"checkpoint_epoch_{epoch + 1:04d}.bin")
    if cfg.refresh_final and cfg.epochs > 0:
        refresh_table(graph, corpus, model, cfg)
    return reports


def write_loss_csv(reports: list[LossReport], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,batch,l_v,l_s,l_edg,l_toe,total,wall_ms\n")
        for r in reports:
            fh.write(f"{r.epoch},{r.batch},{r.l_v!r},{r.l_s!r},{r.l_edg!r},"
                     f"{r.l_toe!r},{r.total!r},{r.wall_ms:.3f}\n")
