"""Run the four downstream tasks on freshly trained embeddings.

Static edge prediction retrieves each test pair's partner by cosine
similarity (multi-class, micro/macro F1). Timespan prediction regresses the
normalized edge timespan with the trained linear head. The time-aware task
counts a pair correct only when the partner is right AND the timespan error
is within a sweep of tolerances, so its precision curve is non-decreasing.
Vertex classification fits a one-vs-rest logistic regression on embeddings of
vertices seen in training and scores the held-out ones.
"""

from dygem import (
    EmbeddingModel,
    ModelConfig,
    TrainConfig,
    build_corpora,
    static_edge_prediction,
    time_aware_edge_prediction,
    toe_prediction,
    train,
    vertex_classification,
)
from dygem.synthetic import community_graph
from dygem.walks import WalkConfig, WindowConfig

TIME_UNIT = 6.0

graph = community_graph(n_vertices=120, n_communities=4, events=900, seed=3,
                        gap_scales=[1.0, 5.0, 15.0, 40.0])
walk_cfg = WalkConfig(m=400, max_len=5, min_len=3, seed=11)
train_corpus, test_corpus = build_corpora(graph, walk_cfg, test_fraction=0.2)

model = EmbeddingModel(ModelConfig(n_vertices=graph.num_vertices, k=24, heads=2,
                                   blocks=1, max_len=5, dropout=0.1, seed=5))
train(graph, train_corpus, model,
      TrainConfig(batch_size=50, lr=0.005, epochs=40, neg_samples=0,
                  window=WindowConfig(8, 4), seed=5, time_unit=TIME_UNIT))

table = model.r_table
w_toe = model.params["w_toe"].value

rep = static_edge_prediction(test_corpus, table)
print(rep.to_text())

rep = toe_prediction(test_corpus, table, w_toe, time_unit=TIME_UNIT)
print(rep.to_text())

rep = time_aware_edge_prediction(test_corpus, table, w_toe, time_unit=TIME_UNIT)
print(rep.to_text())

train_vertices = set()
for s in train_corpus.sequences:
    train_vertices.update(int(v) for v in s.vids[:s.real_len])
train_labels = {v: c for v, c in graph.class_labels.items() if v in train_vertices}
test_labels = {v: c for v, c in graph.class_labels.items() if v not in train_vertices}
rep = vertex_classification(train_labels, test_labels, table)
print(rep.to_text())
