"""Two-branch answer-exchange prompting engine and evaluation harness."""

from .answers import (
    Answer,
    AnswerKind,
    answers_equal,
    extract_final_answer,
    majority_vote,
    normalize_numeric,
)
from .baselines import SCConfig, run_cot, run_self_consistency
from .engine import (
    BranchId,
    BranchState,
    EoPConfig,
    HINT_PHRASE,
    IterationRecord,
    PromptStyle,
    Termination,
    TieBreak,
    Transcript,
    check_termination,
    compose_base_prompt,
    compose_hint_prompt,
    run_eop,
    run_php,
    select_final_answer,
)
from .gateway import (
    CachingBackend,
    ChatMessage,
    GenerationRequest,
    GenerationResponse,
    HttpChatBackend,
    MockBackend,
    MockScript,
    ResponseCache,
    cache_key,
)
from .harness import (
    EvalReport,
    Problem,
    breakdown_by_tag,
    emit_report,
    evaluate,
    load_dataset,
    load_run_reports,
)
from .redefine import (
    AugmentedQuestion,
    RedefinitionMethod,
    concat_premises,
    redefine_pec,
    redefine_qr,
)

__version__ = "0.1.0"

__all__ = [
    "Answer",
    "AnswerKind",
    "AugmentedQuestion",
    "BranchId",
    "BranchState",
    "CachingBackend",
    "ChatMessage",
    "EoPConfig",
    "EvalReport",
    "GenerationRequest",
    "GenerationResponse",
    "HINT_PHRASE",
    "HttpChatBackend",
    "IterationRecord",
    "MockBackend",
    "MockScript",
    "Problem",
    "PromptStyle",
    "RedefinitionMethod",
    "ResponseCache",
    "SCConfig",
    "Termination",
    "TieBreak",
    "Transcript",
    "answers_equal",
    "breakdown_by_tag",
    "cache_key",
    "check_termination",
    "compose_base_prompt",
    "compose_hint_prompt",
    "concat_premises",
    "emit_report",
    "evaluate",
    "extract_final_answer",
    "load_dataset",
    "load_run_reports",
    "majority_vote",
    "normalize_numeric",
    "redefine_pec",
    "redefine_qr",
    "run_cot",
    "run_eop",
    "run_php",
    "run_self_consistency",
    "select_final_answer",
]
