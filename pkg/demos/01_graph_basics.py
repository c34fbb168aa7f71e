"""Build a dynamic graph from raw edge rows and inspect what ingestion derives.

Each input row is (source, target, timestamp). Ingestion orders the rows
canonically, works out which endpoint is the newcomer, and derives every
edge's timespan: the gap back to the existing endpoint's most recent joining
time. The result is immutable and round-trips through a checksummed binary
file.
"""

import tempfile
from pathlib import Path

from dygem import derive_toe, graph_from_rows, load_graph, save_graph

rows = [
    ("alice", "bob", 10, 1.0),     # both new: timespan falls back to 0
    ("bob", "carol", 12, 1.0),     # carol is the newcomer; bob joined at 10 -> timespan 2
    ("alice", "carol", 15, 1.0),   # both known; carol's last joining 12 -> timespan 3
    ("dave", "alice", 21, 1.0),    # dave new; alice last joined at 15 -> timespan 6
]

graph = derive_toe(graph_from_rows(rows))

print(f"vertices: {graph.num_vertices}, edges: {graph.num_edges}")
print("\nper-edge view (upcoming -> existing):")
for i in range(graph.num_edges):
    e = graph.edge(i)
    print(f"  {graph.labels[e.src]:>6} -> {graph.labels[e.dst]:<6} "
          f"formed at t={e.t:<3} timespan={e.toe}")

print("\njoining-time sets:")
for v, tovs in enumerate(graph.tov_sets):
    print(f"  {graph.labels[v]:>6}: {tovs}")

print("\ndegrees (incident edges):",
      {graph.labels[v]: int(d) for v, d in enumerate(graph.degrees)})

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "toy.graph"
    save_graph(graph, path)
    again = load_graph(path)
    print(f"\nround-trip through {path.name}: identical = {again == graph}")
