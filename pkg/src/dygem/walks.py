"""Temporal random-walk sampling and corpus construction.

Walks move only to occurrences with strictly later joining times, preferring
high-degree neighbors reached through short-timespan edges. Each accepted walk
becomes a fixed-length sequence padded with a virtual end-of-sequence vertex.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .graph import DynamicGraph, GraphFormatError, VertexOccurrence, prune_edges

CORPUS_MAGIC = b"DGCO"
CORPUS_VERSION = 1

_STREAM_TEST = 1
_STREAM_TRAIN = 2
_STREAM_STARTS = 3


@dataclass
class WalkConfig:
    m: int
    max_len: int
    min_len: int = 3
    seed: int = 0

    def validate(self, graph: DynamicGraph | None = None) -> None:
        if not (1 < self.min_len <= self.max_len):
            raise ValueError(f"need 1 < min_len <= max_len, got {self.min_len}, {self.max_len}")
        if graph is not None:
            total = graph.num_occurrences()
            if not (graph.num_vertices <= self.m < total):
                raise ValueError(
                    f"need |V| <= m < total occurrences ({graph.num_vertices} <= {self.m} < {total})")


@dataclass
class EdgeSequence:
    """One walk, padded to max_len + 1 slots; trailing slots hold the EOS id.

    ``toes[i]`` is the timespan of the edge that led to slot ``i`` (0 for the
    first slot and all EOS slots). ``edge_ids`` lists the traversed edge
    indices and is kept in memory only.
    """

    vids: np.ndarray
    tovs: np.ndarray
    toes: np.ndarray
    start_time: int
    real_len: int
    seq_id: int
    edge_ids: tuple[int, ...] = ()

    def key(self) -> tuple:
        return (tuple(self.vids.tolist()), tuple(self.tovs.tolist()), tuple(self.toes.tolist()))


@dataclass
class Corpus:
    sequences: list[EdgeSequence]
    role: str
    eos_id: int
    max_len: int
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.sequences)

    def start_times(self) -> np.ndarray:
        return np.asarray([s.start_time for s in self.sequences], dtype=np.int64)


def candidate_moves(graph: DynamicGraph, vertex: int, tov: int) -> np.ndarray:
    """Rows (forming_t, neighbor, neighbor_tov, toe, edge_idx) reachable one
    edge away from the occurrence and strictly later in joining time."""
    adj = graph.adjacency.get(vertex)
    if adj is None or len(adj) == 0:
        return np.zeros((0, 5), dtype=np.int64)
    return adj[adj[:, 2] > tov]


def _move_probabilities(graph: DynamicGraph, moves: np.ndarray) -> np.ndarray:
    deg = graph.degrees[moves[:, 1]].astype(np.float64)
    toe = moves[:, 3].astype(np.float64)
    deg_frac = deg / deg.sum()
    toe_sum = toe.sum()
    # (sum - toe)/sum rather than 1 - toe/sum: same quantity, one rounding less
    time_factor = (toe_sum - toe) / toe_sum if toe_sum > 0 else np.ones_like(toe)
    raw = deg_frac * time_factor
    total = raw.sum()
    if total <= 0.0:
        return np.full(len(moves), 1.0 / len(moves))
    return raw / total


def transition_weights(graph: DynamicGraph,
                       current: VertexOccurrence) -> list[tuple[VertexOccurrence, float]]:
    """Transition distribution out of an occurrence.

    Raw preference is (candidate degree share) * (1 - timespan share); the
    raw weights are renormalized to a distribution, falling back to uniform
    when they all vanish (a lone candidate always does). An empty candidate
    set returns an empty list and the walk terminates.
    """
    moves = candidate_moves(graph, current.vertex, current.tov)
    if len(moves) == 0:
        return []
    probs = _move_probabilities(graph, moves)
    return [(VertexOccurrence(int(m[1]), int(m[2])), float(p)) for m, p in zip(moves, probs)]


def sample_walk(graph: DynamicGraph, start: VertexOccurrence, cfg: WalkConfig,
                rng: np.random.Generator) -> EdgeSequence | None:
    """Walk from ``start``; returns None when fewer than min_len vertices are
    collected before the candidate set empties."""
    vids = [start.vertex]
    tovs = [start.tov]
    toes = [0]
    edges: list[int] = []
    v, tv = start.vertex, start.tov
    while len(vids) < cfg.max_len:
        moves = candidate_moves(graph, v, tv)
        if len(moves) == 0:
            break
        probs = _move_probabilities(graph, moves)
        pick = moves[rng.choice(len(moves), p=probs)]
        v, tv = int(pick[1]), int(pick[2])
        vids.append(v)
        tovs.append(tv)
        toes.append(int(pick[3]))
        edges.append(int(pick[4]))
    real_len = len(vids)
    if real_len < cfg.min_len:
        return None
    for a, b in zip(tovs, tovs[1:]):
        assert a < b, "joining times must increase strictly along a walk"
    pad = cfg.max_len + 1 - real_len
    eos = graph.eos_id
    vids.extend([eos] * pad)
    tovs.extend([0] * pad)
    toes.extend([0] * pad)
    return EdgeSequence(vids=np.asarray(vids, dtype=np.int64),
                        tovs=np.asarray(tovs, dtype=np.int64),
                        toes=np.asarray(toes, dtype=np.int64),
                        start_time=int(start.tov), real_len=real_len,
                        seq_id=-1, edge_ids=tuple(edges))


def _walk_block(graph, occs, ranks, cfg, stream) -> list[EdgeSequence]:
    out = []
    for occ, rank in zip(occs, ranks):
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, stream, int(rank))))
        seq = sample_walk(graph, occ, cfg, rng)
        if seq is not None:
            seq.seq_id = int(rank)
            out.append(seq)
    return out


def _walk_all(graph, occs, ranks, cfg, stream, workers: int) -> list[EdgeSequence]:
    if workers <= 1 or len(occs) < 2 * workers:
        return _walk_block(graph, occs, ranks, cfg, stream)
    # each start owns an rng stream keyed by its rank, so the schedule cannot
    # change the result; blocks are just a work partition
    from concurrent.futures import ProcessPoolExecutor
    blocks = np.array_split(np.arange(len(occs)), workers)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_walk_block, graph, [occs[i] for i in b],
                               [ranks[i] for i in b], cfg, stream)
                   for b in blocks if len(b)]
        out = []
        for f in futures:
            out.extend(f.result())
    return out


def _sorted_corpus(seqs: list[EdgeSequence], role: str, eos: int, max_len: int,
                   meta: dict) -> Corpus:
    seqs = sorted(seqs, key=lambda s: (s.start_time, s.seq_id))
    return Corpus(sequences=seqs, role=role, eos_id=eos, max_len=max_len, meta=meta)


def build_corpora(graph: DynamicGraph, cfg: WalkConfig, test_fraction: float,
                  rng: np.random.Generator | None = None,
                  workers: int = 1) -> tuple[Corpus, Corpus]:
    """Draw m start occurrences without replacement, walk the test share on the
    full graph, delete the edges those sequences traversed, then walk the rest
    on the pruned graph. Train and test corpora are edge-disjoint and all
    sequences are pairwise distinct; starts whose walks reject are dropped.
    """
    cfg.validate(graph)
    if not (0.0 < test_fraction < 1.0):
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, _STREAM_STARTS)))
    occs = graph.occurrences()
    order = rng.choice(len(occs), size=cfg.m, replace=False)
    n_test = int(round(cfg.m * test_fraction))
    if n_test == 0 or n_test == cfg.m:
        raise ValueError("test fraction leaves one side empty at this m")
    test_occs = [occs[i] for i in order[:n_test]]
    train_occs = [occs[i] for i in order[n_test:]]

    test_seqs = _walk_all(graph, test_occs, list(range(n_test)), cfg, _STREAM_TEST, workers)
    test_edges: set[int] = set()
    for s in test_seqs:
        test_edges.update(s.edge_ids)
    pruned = prune_edges(graph, test_edges)
    train_ranks = list(range(n_test, cfg.m))
    train_seqs = _walk_all(pruned, train_occs, train_ranks, cfg, _STREAM_TRAIN, workers)

    train_edges: set[int] = set()
    for s in train_seqs:
        train_edges.update(s.edge_ids)
    if train_edges & test_edges:
        raise AssertionError("train/test corpora share edges (internal bug)")
    keys = [s.key() for s in test_seqs] + [s.key() for s in train_seqs]
    if len(set(keys)) != len(keys):
        raise AssertionError("duplicate sequences emitted (internal bug)")

    eos = graph.eos_id
    test = _sorted_corpus(test_seqs, "test", eos, cfg.max_len,
                          {"starts": n_test, "rejected": n_test - len(test_seqs)})
    train = _sorted_corpus(train_seqs, "train", eos, cfg.max_len,
                           {"starts": cfg.m - n_test,
                            "rejected": cfg.m - n_test - len(train_seqs)})
    return train, test


@dataclass
class WindowConfig:
    window_len: int
    step: int

    def __post_init__(self):
        if not (1 <= self.step < self.window_len):
            raise ValueError(
                f"need 1 <= step < window_len for overlap, got {self.step}, {self.window_len}")

    def n_windows(self, m: int) -> int:
        if m <= self.window_len:
            return 1
        return (m - self.window_len) // self.step + 1

    def pair_count(self, m: int) -> int:
        """Emitted pair count (overlapping windows re-emit shared pairs)."""
        if m <= self.window_len:
            return m * (m - 1) // 2
        return self.n_windows(m) * self.window_len * (self.window_len - 1) // 2

    def reduces_pairs(self, m: int) -> bool:
        """True when windowed pairing emits strictly fewer than all m(m-1)/2
        ordered pairs. The looser precondition window_len^2 - 3*window_len + 3
        < m guarantees this for any step >= 2, but step-1 configs only reduce
        once m exceeds (window_len - 1)^2."""
        return self.pair_count(m) < m * (m - 1) // 2


def window_offsets(m: int, wcfg: WindowConfig) -> list[int]:
    if m <= wcfg.window_len:
        return [0]
    return list(range(0, m - wcfg.window_len + 1, wcfg.step))


def window_pair_indices(m: int, wcfg: WindowConfig):
    """Yield (later_index, earlier_index) for every in-window ordered pair.

    Overlapping windows re-emit shared pairs; the total count is
    n_windows * window_len * (window_len - 1) / 2 for full windows.
    """
    for off in window_offsets(m, wcfg):
        end = min(off + wcfg.window_len, m)
        for b in range(off + 1, end):
            for a in range(off, b):
                yield b, a


def window_pairs(corpus: Corpus, wcfg: WindowConfig, time_unit: float = 1.0):
    """Stream (later_idx, earlier_idx, normalized start-time gap) pairs."""
    from .training import normalize_time
    starts = corpus.start_times()
    for b, a in window_pair_indices(len(corpus), wcfg):
        gap = float(starts[b] - starts[a]) / time_unit
        yield b, a, normalize_time(gap)


# -- on-disk format -----------------------------------------------------

def save_corpus(corpus: Corpus, path) -> None:
    parts = [CORPUS_MAGIC,
             struct.pack("<I", CORPUS_VERSION),
             struct.pack("<I", len(corpus.role)), corpus.role.encode("utf-8"),
             struct.pack("<QQH", corpus.eos_id, len(corpus.sequences), corpus.max_len)]
    for s in corpus.sequences:
        parts.append(struct.pack("<qqH", s.seq_id, s.start_time, s.real_len))
        parts.append(s.vids.astype("<i8").tobytes())
        parts.append(s.tovs.astype("<i8").tobytes())
        parts.append(s.toes.astype("<i8").tobytes())
    payload = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(hashlib.sha256(payload).digest())


def load_corpus(path) -> Corpus:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 40 or blob[:4] != CORPUS_MAGIC:
        raise GraphFormatError("not a corpus file (bad magic)")
    payload, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise GraphFormatError("checksum mismatch")
    pos = 4
    (version,) = struct.unpack_from("<I", payload, pos); pos += 4
    if version != CORPUS_VERSION:
        raise GraphFormatError(f"unsupported version {version}")
    (role_len,) = struct.unpack_from("<I", payload, pos); pos += 4
    role = payload[pos:pos + role_len].decode("utf-8"); pos += role_len
    eos, count, max_len = struct.unpack_from("<QQH", payload, pos); pos += 18
    slots = max_len + 1
    seqs = []
    for _ in range(count):
        seq_id, start_time, real_len = struct.unpack_from("<qqH", payload, pos); pos += 18
        arrs = []
        for _ in range(3):
            arrs.append(np.frombuffer(payload, dtype="<i8", count=slots, offset=pos).astype(np.int64))
            pos += 8 * slots
        seqs.append(EdgeSequence(vids=arrs[0], tovs=arrs[1], toes=arrs[2],
                                 start_time=start_time, real_len=real_len, seq_id=seq_id))
    return Corpus(sequences=seqs, role=role, eos_id=eos, max_len=max_len)


def export_corpus_text(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# role={corpus.role} eos={corpus.eos_id} max_len={corpus.max_len}\n")
        for s in corpus.sequences:
            triples = " ".join(f"{v}:{t}:{d}" for v, t, d in zip(s.vids, s.tovs, s.toes))
            fh.write(f"{s.seq_id}\t{s.start_time}\t{s.real_len}\t{triples}\n")
