"""Train embeddings on a small synthetic graph and watch the joint loss.

The model couples a time-aware recurrence (short-term memory divided by
log(e + timespan)) with masked encoder-decoder attention per sequence, an
unmasked attention stack over whole-sequence sums, and a fusion head whose
output overwrites each visited vertex's row in the representation table.
Training optimizes four terms jointly: self-identification, structure
start-gap regression, edge reconstruction, and timespan regression.
"""

import time

from dygem import EmbeddingModel, ModelConfig, TrainConfig, build_corpora, train
from dygem.synthetic import community_graph
from dygem.walks import WalkConfig, WindowConfig

graph = community_graph(n_vertices=120, n_communities=4, events=900, seed=3,
                        gap_scales=[1.0, 5.0, 15.0, 40.0])
walk_cfg = WalkConfig(m=400, max_len=5, min_len=3, seed=11)
train_corpus, test_corpus = build_corpora(graph, walk_cfg, test_fraction=0.2)
print(f"graph: {graph.num_vertices} vertices, {graph.num_edges} edges; "
      f"{len(train_corpus)} training sequences")

model_cfg = ModelConfig(n_vertices=graph.num_vertices, k=24, heads=2, blocks=1,
                        max_len=5, dropout=0.1, seed=5)
model = EmbeddingModel(model_cfg)
train_cfg = TrainConfig(batch_size=50, lr=0.005, epochs=30, neg_samples=0,
                        window=WindowConfig(8, 4), seed=5, time_unit=6.0)

print(f"\n{'epoch':>5} {'total':>9} {'l_v':>8} {'l_s':>8} {'l_edg':>8} {'l_toe':>8}")
t0 = time.perf_counter()
last_epoch = {}


def on_batch(report):
    last_epoch[report.epoch] = report


reports = train(graph, train_corpus, model, train_cfg, on_batch=on_batch)
for epoch in range(0, train_cfg.epochs, 5):
    r = last_epoch[epoch]
    print(f"{epoch:>5} {r.total:>9.4f} {r.l_v:>8.4f} {r.l_s:>8.4f} "
          f"{r.l_edg:>8.4f} {r.l_toe:>8.4f}")
print(f"\ntrained {len(reports)} batches in {time.perf_counter() - t0:.1f}s")
print(f"representation table: {model.r_table.shape} "
      f"(last row is the end-of-sequence slot)")
