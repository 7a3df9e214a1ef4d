"""Tool-augmented two-agent debate for claim verification."""

from .backends import (
    BackendUnavailable,
    CallLog,
    ChatRequest,
    OpenAICompatBackend,
    ScriptedBackend,
    ScriptMiss,
    ZeroVector,
    cosine,
)
from .core import (
    AgentId,
    AgentKind,
    AgentResponse,
    Claim,
    DebateHistory,
    DebateOutcome,
    EvidenceDocument,
    LabelSet,
    RoundRecord,
    StabilityScore,
    Termination,
    UnparsableVerdict,
    Verdict,
    exact_match,
    normalize_label,
)
from .debate import DebateConfig, DebaterAgent, JudgeAgent, run_debate, run_round, transcript
from .harness import DatasetSpec, RunReport, bootstrap_ci, evaluate, load_dataset, run_benchmark, sample
from .stability import StabilityThresholds, aggregate, answer_relevance, faithfulness, gate
from .tools import RagTool, SearchTool, VanillaTool, VectorIndex, ingest_corpus

__version__ = "0.1.0"

__all__ = [
    "AgentId",
    "AgentKind",
    "AgentResponse",
    "BackendUnavailable",
    "CallLog",
    "ChatRequest",
    "Claim",
    "DatasetSpec",
    "DebateConfig",
    "DebateHistory",
    "DebateOutcome",
    "DebaterAgent",
    "EvidenceDocument",
    "JudgeAgent",
    "LabelSet",
    "OpenAICompatBackend",
    "RagTool",
    "RoundRecord",
    "RunReport",
    "ScriptMiss",
    "ScriptedBackend",
    "SearchTool",
    "StabilityScore",
    "StabilityThresholds",
    "Termination",
    "UnparsableVerdict",
    "VanillaTool",
    "VectorIndex",
    "Verdict",
    "ZeroVector",
    "aggregate",
    "answer_relevance",
    "bootstrap_ci",
    "cosine",
    "evaluate",
    "exact_match",
    "faithfulness",
    "gate",
    "ingest_corpus",
    "load_dataset",
    "normalize_label",
    "run_benchmark",
    "run_debate",
    "run_round",
    "sample",
    "transcript",
]
