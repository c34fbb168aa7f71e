"""Dynamic-graph embeddings from time-biased temporal walks and time-aware
attention, trained by joint self-supervised objectives."""

from .graph import (
    DynamicGraph,
    TemporalEdge,
    VertexOccurrence,
    derive_toe,
    export_graph_text,
    graph_from_rows,
    ingest_edge_list,
    load_graph,
    prune_edges,
    save_graph,
)
from .walks import (
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
    window_pairs,
)
from .model import EmbeddingModel, ModelConfig, causal_mask, load_checkpoint, save_checkpoint
from .training import (
    LossReport,
    TrainConfig,
    init_embeddings,
    normalize_time,
    train,
)
from .evaluation import (
    ConfusionCounts,
    EvalReport,
    micro_macro_f1,
    predict_toe,
    rmse,
    static_edge_prediction,
    time_aware_edge_prediction,
    toe_prediction,
    vertex_classification,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
