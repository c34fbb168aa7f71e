"""Watch the walk bias at work, then sample disjoint train/test corpora.

A walker at an occurrence may only move to occurrences with strictly later
joining times. Among candidates it prefers high-degree neighbors reached
through short-timespan edges: weight = (degree share) * (1 - timespan share),
renormalized. The classic two-candidate setup below (equal degrees, timespans
1 vs 2) gives exactly (2/3, 1/3).
"""

import numpy as np

from dygem import VertexOccurrence, build_corpora, derive_toe, graph_from_rows, transition_weights
from dygem.walks import WalkConfig
from dygem.synthetic import community_graph

g = derive_toe(graph_from_rows([
    ("x", "a", 10, 1.0),
    ("b", "a", 11, 1.0),   # b joins via a; timespan 1
    ("f", "a", 12, 1.0),   # f joins via a; timespan 2
    ("b", "y", 20, 1.0),   # bring b and f to equal degree 2
    ("f", "w", 21, 1.0),
]))

print("transition distribution out of a@10:")
for occ, p in transition_weights(g, VertexOccurrence(g.label_to_id["a"], 10)):
    print(f"  -> {g.labels[occ.vertex]}@{occ.tov}: {p:.6f}")

print("\nempirical check over 100k draws:")
out = transition_weights(g, VertexOccurrence(g.label_to_id["a"], 10))
probs = np.array([p for _, p in out])
draws = np.random.default_rng(0).choice(len(probs), size=100_000, p=probs)
for i, (occ, p) in enumerate(out):
    freq = np.mean(draws == i)
    print(f"  {g.labels[occ.vertex]}: weight {p:.4f}, frequency {freq:.4f}")

print("\nsplitting a larger synthetic graph into corpora:")
graph = community_graph(n_vertices=120, n_communities=4, events=900, seed=3)
cfg = WalkConfig(m=400, max_len=5, min_len=3, seed=11)
train_c, test_c = build_corpora(graph, cfg, test_fraction=0.2)
print(f"  train: {len(train_c)} sequences ({train_c.meta['rejected']} starts rejected)")
print(f"  test:  {len(test_c)} sequences ({test_c.meta['rejected']} starts rejected)")

train_edges = set()
for s in train_c.sequences:
    train_edges.update(s.edge_ids)
test_edges = set()
for s in test_c.sequences:
    test_edges.update(s.edge_ids)
print(f"  edge overlap between corpora: {len(train_edges & test_edges)} (must be 0)")

s = train_c.sequences[0]
names = [graph.labels[v] if v < graph.num_vertices else "<eos>" for v in s.vids]
print(f"\n  first train sequence: {names}")
print(f"  joining times: {s.tovs.tolist()}  timespans: {s.toes.tolist()}")
