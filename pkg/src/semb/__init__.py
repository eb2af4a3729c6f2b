"""Multi-embedding text-to-image retrieval engine and companion tools."""

from .embedstore import (
    GalleryIndex,
    ItemEmbeddingSet,
    QueryRecord,
    SourceKind,
    SourceTag,
    build_gallery,
    load_gallery,
    load_queries,
    normalize,
    normalize_gallery,
    save_gallery,
    save_queries,
)
from .retrieval import (
    EvalEntry,
    EvalReport,
    RetrievalResult,
    cosine,
    evaluate,
    recall_at_k,
    score_item,
    search,
    text_retrieval_eval,
)
from .trainer import (
    AdapterParams,
    RegionalTrainSample,
    TrainBatch,
    TrainConfig,
    infonce_loss,
    load_checkpoint,
    loss_gradient,
    random_regional_choice,
    save_checkpoint,
    train_adapter,
)
from .benchbuilder import (
    AnnotatedSample,
    FilterVerdict,
    Rect,
    TierCrop,
    TierLevel,
    auto_filter,
    build_tiers,
    dataset_stats,
    extend_to_include,
    grid_cells,
    select_cell,
)
from .analysis import (
    ProximityReport,
    SimMatrix,
    export_projection_input,
    global_proximity_report,
    similarity_matrix,
)

__version__ = "0.1.0"
