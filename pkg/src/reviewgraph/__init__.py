"""ReViewGraph: simulate reviewer-author debates, extract opinion triples,
build heterogeneous debate graphs, and predict paper acceptance with a
heterogeneous graph transformer."""

from .graph import (
    AblationMode,
    DebateGraph,
    Dimension,
    Edge,
    Node,
    NodeType,
    RelationType,
    apply_ablation,
    load_graph,
    save_graph,
    validate_graph,
)
from .extraction import (
    DimensionAssignment,
    OpinionTriplet,
    TripleBatch,
    build_graph,
    parse_triple_batch,
)
from .model import ModelConfig, init_params, predict
from .orchestration import (
    EndpointConfig,
    HttpChatClient,
    MockClient,
    PaperInput,
    Transcript,
    classify_dimensions,
    embed_texts,
    extract_triples,
    simulate_debate,
)
from .training import (
    Checkpoint,
    GraphExample,
    TrainConfig,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
    welch_t_test,
)

__version__ = "0.1.0"

__all__ = [
    "AblationMode",
    "Checkpoint",
    "DebateGraph",
    "Dimension",
    "DimensionAssignment",
    "Edge",
    "EndpointConfig",
    "GraphExample",
    "HttpChatClient",
    "MockClient",
    "ModelConfig",
    "Node",
    "NodeType",
    "OpinionTriplet",
    "PaperInput",
    "RelationType",
    "Transcript",
    "TrainConfig",
    "TripleBatch",
    "apply_ablation",
    "build_graph",
    "classify_dimensions",
    "embed_texts",
    "evaluate",
    "extract_triples",
    "init_params",
    "load_checkpoint",
    "load_graph",
    "parse_triple_batch",
    "predict",
    "save_checkpoint",
    "save_graph",
    "simulate_debate",
    "train",
    "validate_graph",
    "welch_t_test",
]
