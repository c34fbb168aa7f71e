"""Synthetic dynamic graphs with planted community structure.

Vertices live in communities; edges are mostly intra-community and each
vertex keeps a stable preferred partner (its ring neighbor), so partner
retrieval is learnable. Each community has its own characteristic activity
gap, so edge timespans carry community-dependent signal for the regression
head.
"""

from __future__ import annotations

import numpy as np

from .graph import DynamicGraph, derive_toe, graph_from_rows


def community_rows(n_vertices: int = 500, n_communities: int = 5, events: int = 3000,
                   seed: int = 0, inter_prob: float = 0.05, shuffle_prob: float = 0.15,
                   gap_scales=None):
    """Edge rows (labels, timestamps) plus per-vertex community labels.

    ``gap_scales[c]`` sets how long community ``c``'s members wait between
    activities, which becomes the planted timespan once ingested.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5E)))
    if gap_scales is None:
        gap_scales = [2.0 + 5.0 * c for c in range(n_communities)]
    labels = [f"v{i:04d}" for i in range(n_vertices)]
    community = {labels[i]: i % n_communities for i in range(n_vertices)}
    members = [[labels[i] for i in range(n_vertices) if i % n_communities == c]
               for c in range(n_communities)]
    ring_next = {}
    for group in members:
        for i, v in enumerate(group):
            ring_next[v] = group[(i + 1) % len(group)]

    last_seen: dict[str, float] = {}
    t = 0.0
    for c in range(n_communities):
        for v in members[c][: max(3, len(members[c]) // 4)]:
            t += float(rng.integers(1, 3))
            last_seen[v] = t

    rows = []
    for e in range(events):
        t += float(rng.integers(1, 4))
        c = int(e % n_communities)
        pool = [v for v in members[c] if v in last_seen and last_seen[v] < t]
        if rng.random() < inter_prob:
            other = int(rng.integers(0, n_communities))
            alt = [v for v in members[other] if v in last_seen and last_seen[v] < t]
            pool = alt or pool
        if not pool:
            for v in members[c][:3]:
                last_seen.setdefault(v, t - 1.0)
            pool = [v for v in members[c] if v in last_seen and last_seen[v] < t]
        target_gap = gap_scales[c] + rng.normal(0.0, 0.5)
        gaps = np.asarray([t - last_seen[v] for v in pool])
        partner = pool[int(np.argmin(np.abs(gaps - target_gap)))]
        if rng.random() < shuffle_prob:
            group = members[community[partner]]
            actor = group[int(rng.integers(0, len(group)))]
        else:
            actor = ring_next[partner]
        if actor == partner:
            actor = ring_next[partner]
        rows.append((actor, partner, int(t), 1.0))
        last_seen[actor] = t
    classes = {v: f"c{community[v]}" for v in labels}
    return rows, classes


def community_graph(n_vertices: int = 500, n_communities: int = 5, events: int = 3000,
                    seed: int = 0, **kwargs) -> DynamicGraph:
    rows, classes = community_rows(n_vertices, n_communities, events, seed, **kwargs)
    present = {r[0] for r in rows} | {r[1] for r in rows}
    extra = sorted(set(classes) - present)
    return derive_toe(graph_from_rows(rows, extra_labels=extra, class_labels=classes))


def write_community_csv(path, labels_path=None, **kwargs) -> None:
    rows, classes = community_rows(**kwargs)
    with open(path, "w", encoding="utf-8") as fh:
        for a, b, t, w in rows:
            fh.write(f"{a},{b},{t},{w}\n")
    if labels_path is not None:
        with open(labels_path, "w", encoding="utf-8") as fh:
            for v in sorted(classes):
                fh.write(f"{v},{classes[v]}\n")
