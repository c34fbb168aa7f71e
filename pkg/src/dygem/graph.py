"""Dynamic-graph data model: temporal edges tagged with vertex joining times.

A graph is a set of vertices that join (and re-join) over time plus the
temporal edges they form. Each edge records the forming time ``t`` (the
joining time of the upcoming endpoint) and the timespan ``toe`` back to the
existing endpoint's most recent prior joining time.
"""

from __future__ import annotations

import hashlib
import json
import struct
from bisect import bisect_right, insort
from dataclasses import dataclass, field

import numpy as np

GRAPH_MAGIC = b"DGGR"
GRAPH_VERSION = 1


class IngestError(ValueError):
    """Raised for malformed input rows; carries the 1-based row number."""

    def __init__(self, row: int, reason: str):
        self.row = row
        super().__init__(f"row {row}: {reason}")


class GraphFormatError(ValueError):
    """Raised when a graph file fails magic/version/checksum validation."""


@dataclass(frozen=True)
class VertexOccurrence:
    vertex: int
    tov: int


@dataclass(frozen=True)
class TemporalEdge:
    """One edge event. ``src`` is the upcoming endpoint joining at ``t``;
    ``dst`` is the existing endpoint whose prior joining time is ``t - toe``."""

    src: int
    dst: int
    t: int
    toe: int
    weight: float = 1.0


@dataclass
class DynamicGraph:
    """Immutable after construction; safe for concurrent reads.

    Edges are stored as parallel arrays in canonical order (sorted by forming
    time, then labels). ``tov_sets[v]`` is the ascending list of joining times
    of vertex ``v``. ``adjacency[v]`` holds one row per traversal direction of
    each incident edge: (forming_t, neighbor, neighbor_tov, toe, edge_index).
    """

    labels: list[str]
    label_to_id: dict[str, int]
    tov_sets: list[list[int]]
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_t: np.ndarray
    edge_toe: np.ndarray | None
    edge_w: np.ndarray
    class_labels: dict[int, str] = field(default_factory=dict)
    adjacency: dict[int, np.ndarray] = field(default_factory=dict)
    degrees: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    # original edge indices when this graph is a pruned view; None = identity
    edge_ids: np.ndarray | None = None

    @property
    def num_vertices(self) -> int:
        return len(self.labels)

    @property
    def num_edges(self) -> int:
        return len(self.edge_src)

    @property
    def eos_id(self) -> int:
        """Reserved id used for the virtual end-of-sequence vertex."""
        return len(self.labels)

    def edge(self, i: int) -> TemporalEdge:
        toe = int(self.edge_toe[i]) if self.edge_toe is not None else 0
        return TemporalEdge(int(self.edge_src[i]), int(self.edge_dst[i]),
                            int(self.edge_t[i]), toe, float(self.edge_w[i]))

    def occurrences(self) -> list[VertexOccurrence]:
        """All (vertex, joining time) pairs, vertex-major then time-ascending."""
        out = []
        for v, tovs in enumerate(self.tov_sets):
            out.extend(VertexOccurrence(v, t) for t in tovs)
        return out

    def num_occurrences(self) -> int:
        return sum(len(t) for t in self.tov_sets)

    def neighbor_sets(self) -> list[set[int]]:
        """Distinct partners of each vertex over all edges (direction-blind)."""
        sets: list[set[int]] = [set() for _ in self.labels]
        for s, d in zip(self.edge_src, self.edge_dst):
            sets[int(s)].add(int(d))
            sets[int(d)].add(int(s))
        return sets

    def stats(self, time_unit: float = 86400.0) -> dict:
        """Summary statistics; timespans reported in units of ``time_unit``."""
        n_v, n_e = self.num_vertices, self.num_edges
        out = {
            "vertices": n_v,
            "edges": n_e,
            "mean_degree": float(self.degrees.mean()) if n_v else 0.0,
            "mean_occurrences": (self.num_occurrences() / n_v) if n_v else 0.0,
        }
        if n_e and self.edge_toe is not None:
            toe = self.edge_toe / time_unit
            out["mean_toe"] = float(toe.mean())
            out["std_toe"] = float(toe.std())
        else:
            out["mean_toe"] = 0.0
            out["std_toe"] = 0.0
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, DynamicGraph):
            return NotImplemented
        if self.labels != other.labels or self.tov_sets != other.tov_sets:
            return False
        if self.class_labels != other.class_labels:
            return False
        if (self.edge_toe is None) != (other.edge_toe is None):
            return False
        return (np.array_equal(self.edge_src, other.edge_src)
                and np.array_equal(self.edge_dst, other.edge_dst)
                and np.array_equal(self.edge_t, other.edge_t)
                and (self.edge_toe is None or np.array_equal(self.edge_toe, other.edge_toe))
                and np.array_equal(self.edge_w, other.edge_w))


def _build_indexes(g: DynamicGraph) -> None:
    """Populate adjacency and degree maps from the edge arrays."""
    n = g.num_vertices
    deg = np.zeros(n, dtype=np.int64)
    per_vertex: list[list[tuple[int, int, int, int, int]]] = [[] for _ in range(n)]
    toe = g.edge_toe if g.edge_toe is not None else np.zeros(g.num_edges, dtype=np.int64)
    for i in range(g.num_edges):
        s, d = int(g.edge_src[i]), int(g.edge_dst[i])
        t, dt = int(g.edge_t[i]), int(toe[i])
        eid = int(g.edge_ids[i]) if g.edge_ids is not None else i
        deg[s] += 1
        if d != s:
            deg[d] += 1
        # walking toward the upcoming endpoint lands on its joining time t;
        # walking toward the existing endpoint lands on its prior time t - toe
        per_vertex[d].append((t, s, t, dt, eid))
        per_vertex[s].append((t, d, t - dt, dt, eid))
    adjacency = {}
    for v in range(n):
        rows = sorted(per_vertex[v], key=lambda r: (r[0], r[4]))
        adjacency[v] = np.asarray(rows, dtype=np.int64).reshape(-1, 5)
    g.adjacency = adjacency
    g.degrees = deg


def graph_from_rows(rows: list[tuple[str, str, int, float]],
                    extra_labels: list[str] | None = None,
                    class_labels: dict[str, str] | None = None) -> DynamicGraph:
    """Build a raw graph (timespans not yet derived) from parsed edge rows.

    Rows are put into canonical order first, so ingestion is insensitive to
    the input row order.
    """
    rows = sorted(rows, key=lambda r: (r[2], r[0], r[1], r[3]))
    labels: list[str] = []
    label_to_id: dict[str, int] = {}

    def vid(label: str) -> int:
        if label not in label_to_id:
            label_to_id[label] = len(labels)
            labels.append(label)
        return label_to_id[label]

    src = np.empty(len(rows), dtype=np.int64)
    dst = np.empty(len(rows), dtype=np.int64)
    t = np.empty(len(rows), dtype=np.int64)
    w = np.empty(len(rows), dtype=np.float64)
    for i, (a, b, ts, wt) in enumerate(rows):
        src[i], dst[i], t[i], w[i] = vid(a), vid(b), ts, wt
    for label in sorted(extra_labels or []):
        vid(label)
    classes = {}
    if class_labels:
        for label, cls in class_labels.items():
            if label in label_to_id:
                classes[label_to_id[label]] = cls
    g = DynamicGraph(labels=labels, label_to_id=label_to_id,
                     tov_sets=[[] for _ in labels],
                     edge_src=src, edge_dst=dst, edge_t=t, edge_toe=None,
                     edge_w=w, class_labels=classes)
    return g


def derive_toe(g: DynamicGraph) -> DynamicGraph:
    """Fill in edge timespans and joining-time sets.

    Processing runs in canonical time order. For each edge the endpoint that
    already has a joining time on record acts as the existing vertex; when the
    row's source column is the only one with history, the endpoint roles are
    swapped so the newcomer is the upcoming vertex. The timespan is the gap to
    the existing endpoint's most recent joining time at or before ``t``; if
    neither endpoint has history the timespan is 0 and the forming time seeds
    the existing endpoint's set.
    """
    if g.edge_toe is not None:
        raise ValueError("timespans already derived for this graph")
    n_e = g.num_edges
    src = g.edge_src.copy()
    dst = g.edge_dst.copy()
    toe = np.zeros(n_e, dtype=np.int64)
    tovs: list[list[int]] = [[] for _ in g.labels]

    def add_tov(v: int, t: int) -> None:
        lst = tovs[v]
        i = bisect_right(lst, t)
        if i == 0 or lst[i - 1] != t:
            lst.insert(i, t)

    for i in range(n_e):
        u, v, t = int(src[i]), int(dst[i]), int(g.edge_t[i])
        if u != v and tovs[u] and not tovs[v]:
            src[i], dst[i] = v, u
            u, v = v, u
        if tovs[v]:
            j = bisect_right(tovs[v], t) - 1
            toe[i] = t - tovs[v][j]
        else:
            toe[i] = 0
            add_tov(v, t)
        add_tov(u, t)

    out = DynamicGraph(labels=list(g.labels), label_to_id=dict(g.label_to_id),
                       tov_sets=tovs, edge_src=src, edge_dst=dst,
                       edge_t=g.edge_t.copy(), edge_toe=toe, edge_w=g.edge_w.copy(),
                       class_labels=dict(g.class_labels))
    _build_indexes(out)
    return out


def prune_edges(g: DynamicGraph, drop: set[int]) -> DynamicGraph:
    """Copy of the graph without the given edge indices.

    Timespans and joining-time sets are kept as derived on the full graph;
    only the edge list, adjacency, and degrees shrink.
    """
    ids = g.edge_ids if g.edge_ids is not None else np.arange(g.num_edges, dtype=np.int64)
    keep = np.asarray([i for i in range(g.num_edges) if ids[i] not in drop], dtype=np.int64)
    out = DynamicGraph(labels=list(g.labels), label_to_id=dict(g.label_to_id),
                       tov_sets=[list(t) for t in g.tov_sets],
                       edge_src=g.edge_src[keep], edge_dst=g.edge_dst[keep],
                       edge_t=g.edge_t[keep],
                       edge_toe=None if g.edge_toe is None else g.edge_toe[keep],
                       edge_w=g.edge_w[keep], class_labels=dict(g.class_labels),
                       edge_ids=ids[keep])
    _build_indexes(out)
    return out


_SCHEMA_ROLES = {"src", "dst", "ts", "weight"}


def parse_schema(schema: str) -> dict[str, int]:
    cols = [c.strip() for c in schema.split(",")]
    unknown = [c for c in cols if c not in _SCHEMA_ROLES]
    if unknown:
        raise ValueError(f"unknown schema columns: {unknown}")
    mapping = {c: i for i, c in enumerate(cols)}
    missing = {"src", "dst", "ts"} - set(mapping)
    if missing:
        raise ValueError(f"schema must include src, dst, ts (missing {sorted(missing)})")
    return mapping


def read_label_sidecar(path, delimiter: str = ",") -> dict[str, str]:
    """Per-vertex class labels, one "vertex_label,class_label" per line."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(delimiter)
            if len(parts) < 2:
                raise IngestError(lineno, "expected vertex_label,class_label")
            out[parts[0].strip()] = parts[1].strip()
    return out


def ingest_edge_list(path, schema: str = "src,dst,ts", delimiter: str = ",",
                     labels_path=None) -> DynamicGraph:
    """Parse a delimited edge file into a canonical dynamic graph.

    Timestamps may be integer or fractional seconds; fractional values are
    rounded to the nearest second. Duplicate (src, dst, t) rows are legal
    multi-edges and all kept.
    """
    mapping = parse_schema(schema)
    need = max(mapping.values()) + 1
    rows: list[tuple[str, str, int, float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(delimiter)]
            if len(parts) < need:
                raise IngestError(lineno, f"expected at least {need} columns, got {len(parts)}")
            a, b = parts[mapping["src"]], parts[mapping["dst"]]
            if not a or not b:
                raise IngestError(lineno, "empty vertex label")
            try:
                ts = int(round(float(parts[mapping["ts"]])))
            except ValueError:
                raise IngestError(lineno, f"bad timestamp {parts[mapping['ts']]!r}") from None
            wt = 1.0
            if "weight" in mapping:
                try:
                    wt = float(parts[mapping["weight"]])
                except ValueError:
                    raise IngestError(lineno, f"bad weight {parts[mapping['weight']]!r}") from None
            rows.append((a, b, ts, wt))
    classes = read_label_sidecar(labels_path, delimiter) if labels_path else None
    extra = sorted(set(classes) - {r[0] for r in rows} - {r[1] for r in rows}) if classes else None
    return derive_toe(graph_from_rows(rows, extra_labels=extra, class_labels=classes))


# -- on-disk format -----------------------------------------------------

def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _graph_payload(g: DynamicGraph) -> bytes:
    parts = [GRAPH_MAGIC, struct.pack("<IQQ", GRAPH_VERSION, g.num_vertices, g.num_edges)]
    for label in g.labels:
        parts.append(_pack_str(label))
    for tovs in g.tov_sets:
        parts.append(struct.pack("<I", len(tovs)))
        parts.append(np.asarray(tovs, dtype="<i8").tobytes())
    toe = g.edge_toe if g.edge_toe is not None else np.full(g.num_edges, -1, dtype=np.int64)
    for arr in (g.edge_src, g.edge_dst, g.edge_t, toe):
        parts.append(arr.astype("<i8").tobytes())
    parts.append(g.edge_w.astype("<f8").tobytes())
    parts.append(struct.pack("<Q", len(g.class_labels)))
    for v in sorted(g.class_labels):
        parts.append(struct.pack("<q", v))
        parts.append(_pack_str(g.class_labels[v]))
    return b"".join(parts)


def save_graph(g: DynamicGraph, path) -> None:
    payload = _graph_payload(g)
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(hashlib.sha256(payload).digest())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def read(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise GraphFormatError("truncated file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.read(struct.calcsize(fmt)))

    def read_str(self) -> str:
        (n,) = self.unpack("<I")
        return self.read(n).decode("utf-8")


def load_graph(path) -> DynamicGraph:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 36 or blob[:4] != GRAPH_MAGIC:
        raise GraphFormatError("not a graph file (bad magic)")
    payload, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise GraphFormatError("checksum mismatch")
    r = _Reader(payload)
    r.read(4)
    version, n_v, n_e = r.unpack("<IQQ")
    if version != GRAPH_VERSION:
        raise GraphFormatError(f"unsupported version {version}")
    labels = [r.read_str() for _ in range(n_v)]
    tov_sets = []
    for _ in range(n_v):
        (cnt,) = r.unpack("<I")
        tov_sets.append(np.frombuffer(r.read(8 * cnt), dtype="<i8").tolist())
    arrays = [np.frombuffer(r.read(8 * n_e), dtype="<i8").astype(np.int64) for _ in range(4)]
    w = np.frombuffer(r.read(8 * n_e), dtype="<f8").astype(np.float64)
    (n_cls,) = r.unpack("<Q")
    classes = {}
    for _ in range(n_cls):
        (v,) = r.unpack("<q")
        classes[v] = r.read_str()
    toe = None if n_e and arrays[3][0] == -1 and np.all(arrays[3] == -1) else arrays[3]
    g = DynamicGraph(labels=labels, label_to_id={s: i for i, s in enumerate(labels)},
                     tov_sets=tov_sets, edge_src=arrays[0], edge_dst=arrays[1],
                     edge_t=arrays[2], edge_toe=toe, edge_w=w, class_labels=classes)
    _build_indexes(g)
    return g


def export_graph_text(g: DynamicGraph, path) -> None:
    """Line-per-edge text dump for diffing: src dst t toe weight."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# vertices={g.num_vertices} edges={g.num_edges}\n")
        for i in range(g.num_edges):
            e = g.edge(i)
            fh.write(f"{g.labels[e.src]}\t{g.labels[e.dst]}\t{e.t}\t{e.toe}\t{e.weight:g}\n")


def graph_config_digest(g: DynamicGraph) -> str:
    meta = {"vertices": g.num_vertices, "edges": g.num_edges}
    return hashlib.sha256(json.dumps(meta, sort_keys=True).encode()).hexdigest()[:16]
