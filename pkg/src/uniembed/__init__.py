"""Embedding-space retrieval engine.

Compact-descriptor construction (PCA reduction, neuron selection,
concatenation, normalization), exact top-k Euclidean search, mean
precision at k scoring, checkpoint weight averaging, and a sub-center
angular-margin metric-learning recipe with a desk-scale trainer.
"""

from .errors import EngineError, FormatError
from .evaluation import (
    GroundTruth,
    mean_precision_at_k,
    per_query_precision,
    read_ground_truth,
    write_ground_truth,
)
from .metric_learning import (
    ArcFaceHead,
    LrSchedule,
    ToyTrainConfig,
    adaptive_margins,
    apply_embedder,
    arcface_gradients,
    arcface_loss,
    layerwise_lr,
    lr_at_step,
    sample_toy_embeddings,
    subcenter_cosines,
    train_toy,
)
from .pca import AlignmentStats, PcaModel, fit_pca, project, validate_alignment
from .pipeline import (
    Concat,
    DescriptorPipeline,
    L2Normalize,
    PcaProject,
    SelectNeurons,
    apply_pipeline,
    build_pipeline,
    concat_embeddings,
    l2_normalize,
    select_random_neurons,
)
from .retrieval import (
    RankedResult,
    RetrievalIndex,
    build_index,
    read_predictions,
    search,
    search_reference,
    write_predictions,
)
from .soup import (
    Checkpoint,
    TensorEntry,
    load_checkpoint,
    read_checkpoint,
    save_checkpoint,
    soup_uniform,
    write_checkpoint,
)
from .store import (
    EmbeddingSet,
    Violation,
    load_embeddings,
    read_embeddings,
    save_embeddings,
    validate,
    write_embeddings,
)

__version__ = "0.1.0"
