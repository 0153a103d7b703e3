"""Decomposition-free multi-hop dense retrieval engine and research harness."""

__version__ = "0.1.0"

from .core import (
    ACTION_STRINGS,
    DEFAULT_INSTRUCTION_QUERY,
    REFUTED,
    SUPPORTED,
    ActionKind,
    Chain,
    ChainStep,
    DecompositionStep,
    MultiHopInstance,
    Passage,
    TaskKind,
    parse_chain,
    render_chain,
)
from .databuilder import (
    ContrastiveSample,
    GenerativeSample,
    LabelKind,
    build_samples,
    export_training_files,
)
from .embedding import (
    DEFAULT_INSTRUCTION_DOCUMENT,
    EmbeddingRequest,
    HashedTokenEmbedder,
    RemoteEmbedder,
    Role,
    make_provider,
)
from .engine import (
    ControlDecision,
    HopRecord,
    HopTrace,
    OracleControl,
    RemoteControl,
    StopKind,
    StopPolicy,
    StopReason,
    oracle_control,
    retrieve_step,
    run_chain,
)
from .errors import (
    CorruptIndex,
    DanglingGoldReference,
    DimensionMismatch,
    DuplicatePassageId,
    EmptyText,
    HopchainError,
    MalformedChain,
    ProviderUnavailable,
    SchemaError,
    UnknownInstanceId,
)
from .evaluator import Diagnostics, HitsTable, HopHits, diagnose, evaluate_hits
from .costmodel import (
    CostFunctions,
    DenseCost,
    WorkloadParams,
    bench_empirical,
    cross_encoder_cost,
    dense_cost,
)
from .index import (
    SearchResult,
    VectorIndex,
    build_index,
    load_index,
    save_index,
    search,
)
from .ingestion import (
    DatasetDescriptor,
    GoldOrder,
    LoadReport,
    LoadResult,
    SourceFormat,
    load_dataset,
    stats,
    write_canonical,
)
from .miner import MinedNegatives, MiningConfig, mine_negatives
