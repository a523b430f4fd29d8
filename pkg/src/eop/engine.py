"""Two-branch answer-exchange state machine.

One reasoning run forks a question into an original branch and an augmented
branch (see :mod:`eop.redefine`). Both branches answer independently on the
first round; on every later round each branch re-answers its own question
with the other branch's answer history injected as a hint. The loop stops as
soon as the branches agree (consensus), a branch repeats itself (stability),
or the iteration cap is hit — checked in that priority order once per
completed round.

The single-branch degenerate mode (``run_php``) drops the augmented branch
and hints a branch with its own previous answers until it stabilizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Sequence

from .answers import Answer, AnswerKind, answers_equal, extract_final_answer
from .errors import EngineAbort, ExtractionError, GatewayError, RedefinitionError
from .gateway import Backend, GenerationRequest, GenerationResponse
from .redefine import AugmentedQuestion, RedefinitionMethod, load_asset, redefine

if TYPE_CHECKING:
    from .harness import Problem

HINT_PHRASE = "Hint: The answer is near to"

ZERO_SHOT_COT_SUFFIX = " Let's think step by step."


class BranchId(str, Enum):
    ORG = "org"
    AUG = "aug"


class PromptStyle(str, Enum):
    STANDARD = "standard"
    COT = "cot"
    COMPLEX_COT = "complex_cot"


class TieBreak(str, Enum):
    PREFER_ORG = "prefer_org"
    PREFER_AUG = "prefer_aug"


class Termination(str, Enum):
    CONSENSUS = "consensus"
    STABILITY_ORG = "stability_org"
    STABILITY_AUG = "stability_aug"
    MAX_ITERATIONS = "max_iterations"
    SINGLE_BRANCH_STABLE = "single_branch_stable"
    SINGLE_SHOT = "single_shot"
    MAJORITY_VOTE = "majority_vote"
    ABORTED = "aborted"


@dataclass
class IterationRecord:
    j: int
    prompt_text: str
    response_text: str
    answer: Answer | None
    from_cache: bool = False


@dataclass
class BranchState:
    branch_id: BranchId
    question_text: str
    history: list[IterationRecord] = field(default_factory=list)

    def last_answer(self) -> Answer | None:
        return self.history[-1].answer if self.history else None

    def present_answers(self) -> list[Answer]:
        return [r.answer for r in self.history if r.answer is not None]


@dataclass
class EoPConfig:
    redefinition_method: RedefinitionMethod = RedefinitionMethod.PEC
    base_prompt_style: PromptStyle = PromptStyle.COMPLEX_COT
    max_iterations: int = 8
    numeric_tolerance: float = 1e-6
    tie_break: TieBreak = TieBreak.PREFER_ORG
    temperature: float = 0.0
    model_id: str = "default"
    max_tokens: int = 1024
    assets_dir: str | Path | None = None

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def to_metadata(self) -> dict:
        return {
            "redefinition_method": self.redefinition_method.value,
            "base_prompt_style": self.base_prompt_style.value,
            "max_iterations": self.max_iterations,
            "numeric_tolerance": self.numeric_tolerance,
            "tie_break": self.tie_break.value,
            "temperature": self.temperature,
            "model_id": self.model_id,
            "max_tokens": self.max_tokens,
        }


@dataclass
class Transcript:
    """Full record of one method run on one problem."""

    problem_id: str
    method_name: str
    branches: dict[str, BranchState]
    termination: Termination
    final_answer: Answer | None
    reasoning_calls: int
    redefinition_calls: int
    config: dict = field(default_factory=dict)
    problem: dict = field(default_factory=dict)
    redefinition: dict | None = None
    correct: bool | None = None

    def to_json_dict(self) -> dict:
        return {
            "problem_id": self.problem_id,
            "method_name": self.method_name,
            "config": self.config,
            "problem": self.problem,
            "redefinition": self.redefinition,
            "branches": {
                key: _branch_to_dict(branch) for key, branch in sorted(self.branches.items())
            },
            "termination": self.termination.value,
            "final_answer": _answer_to_dict(self.final_answer),
            "correct": self.correct,
            "reasoning_calls": self.reasoning_calls,
            "redefinition_calls": self.redefinition_calls,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "Transcript":
        branches = {
            key: _branch_from_dict(raw) for key, raw in (data.get("branches") or {}).items()
        }
        return cls(
            problem_id=data["problem_id"],
            method_name=data["method_name"],
            branches=branches,
            termination=Termination(data["termination"]),
            final_answer=_answer_from_dict(data.get("final_answer")),
            reasoning_calls=int(data["reasoning_calls"]),
            redefinition_calls=int(data["redefinition_calls"]),
            config=data.get("config") or {},
            problem=data.get("problem") or {},
            redefinition=data.get("redefinition"),
            correct=data.get("correct"),
        )


def _answer_to_dict(answer: Answer | None) -> dict | None:
    if answer is None:
        return None
    return {"kind": answer.kind.value, "canonical": answer.canonical, "raw_span": answer.raw_span}


def _answer_from_dict(data: dict | None) -> Answer | None:
    if data is None:
        return None
    return Answer(kind=AnswerKind(data["kind"]), canonical=data["canonical"], raw_span=data["raw_span"])


def _branch_to_dict(branch: BranchState) -> dict:
    return {
        "branch_id": branch.branch_id.value,
        "question_text": branch.question_text,
        "history": [
            {
                "j": r.j,
                "prompt_text": r.prompt_text,
                "response_text": r.response_text,
                "answer": _answer_to_dict(r.answer),
                "from_cache": r.from_cache,
            }
            for r in branch.history
        ],
    }


def _branch_from_dict(data: dict) -> BranchState:
    branch = BranchState(BranchId(data["branch_id"]), data["question_text"])
    for raw in data.get("history", []):
        branch.history.append(
            IterationRecord(
                j=int(raw["j"]),
                prompt_text=raw["prompt_text"],
                response_text=raw["response_text"],
                answer=_answer_from_dict(raw.get("answer")),
                from_cache=bool(raw.get("from_cache", False)),
            )
        )
    return branch


# --- prompt composition ---------------------------------------------------


def load_demonstrations(style: PromptStyle, assets_dir: str | Path | None = None) -> str:
    return load_asset(f"demos/{style.value}.txt", assets_dir)


def _target_block(question: str, hint_list: str | None, style: PromptStyle, zero_shot: bool) -> str:
    if hint_list is None:
        block = f"Q: {question}\nA:"
    else:
        block = f"Q: {question} ({HINT_PHRASE} {hint_list}).\nA:"
    if zero_shot and style in (PromptStyle.COT, PromptStyle.COMPLEX_COT):
        block += ZERO_SHOT_COT_SUFFIX
    return block


def compose_base_prompt(
    question: str,
    style: PromptStyle,
    *,
    demos: str | None = None,
    assets_dir: str | Path | None = None,
) -> str:
    """Render the few-shot prompt for a question.

    The demonstration block comes from the style's asset file (an editable
    sequence of "Q: ... / A: ..." exemplars). An empty file drops to
    zero-shot form, with a step-by-step lead-in for the reasoning styles.
    """
    demos_text = (demos if demos is not None else load_demonstrations(style, assets_dir)).strip()
    target = _target_block(question, None, style, zero_shot=not demos_text)
    return f"{demos_text}\n\n{target}" if demos_text else target


def dedup_hint_values(values: Sequence[str]) -> list[str]:
    """Drop repeated canonical strings, keeping first-seen order."""
    seen: list[str] = []
    for value in values:
        if value not in seen:
            seen.append(value)
    return seen


def render_hint_list(hints: Sequence[Answer]) -> str:
    return ", ".join(dedup_hint_values([h.canonical for h in hints]))


def compose_hint_prompt(
    question: str,
    hints: Sequence[Answer],
    style: PromptStyle,
    *,
    demos: str | None = None,
    assets_dir: str | Path | None = None,
) -> str:
    """Render the hinted prompt: the base prompt with the target line
    carrying the other branch's answers, deduplicated in first-seen order."""
    if not hints:
        raise ValueError("hints must be non-empty; use compose_base_prompt for the first round")
    demos_text = (demos if demos is not None else load_demonstrations(style, assets_dir)).strip()
    target = _target_block(question, render_hint_list(hints), style, zero_shot=not demos_text)
    return f"{demos_text}\n\n{target}" if demos_text else target


# --- state machine ----------------------------------------------------------


def run_branch_iteration(
    branch: BranchState,
    hints_from_other: Sequence[Answer],
    config: EoPConfig,
    gateway: Backend,
    kind: AnswerKind,
) -> IterationRecord:
    """Advance one branch by one iteration and append the record.

    The first iteration uses the plain base prompt; later ones inject the
    provided hint answers. Absent answers never reach this function, so if
    every earlier answer failed extraction the branch simply re-asks the
    base prompt. Extraction failure yields a record whose answer is absent;
    gateway errors propagate.
    """
    j = len(branch.history) + 1
    present = [a for a in hints_from_other if a is not None]
    if present:
        prompt = compose_hint_prompt(
            branch.question_text, present, config.base_prompt_style, assets_dir=config.assets_dir
        )
    else:
        prompt = compose_base_prompt(
            branch.question_text, config.base_prompt_style, assets_dir=config.assets_dir
        )
    response = gateway.generate(
        GenerationRequest.for_prompt(
            prompt,
            temperature=config.temperature,
            max_tokens=config.max_tokens,
            model_id=config.model_id,
        )
    )
    try:
        answer = extract_final_answer(response.text, kind)
    except ExtractionError:
        answer = None
    record = IterationRecord(
        j=j,
        prompt_text=prompt,
        response_text=response.text,
        answer=answer,
        from_cache=response.from_cache,
    )
    branch.history.append(record)
    return record


def check_termination(org: BranchState, aug: BranchState, config: EoPConfig) -> Termination | None:
    """Decide whether the exchange stops after a completed round.

    Priority: consensus across branches, then stability within a branch
    (both-stable disagreements resolved by the configured tie-break), then
    the iteration cap. Absent answers never satisfy either equality. Returns
    None when the exchange should continue.
    """
    j = len(org.history)
    if j < 1 or j != len(aug.history):
        raise ValueError("branches must have completed the same number of iterations")
    tol = config.numeric_tolerance
    a_org = org.history[-1].answer
    a_aug = aug.history[-1].answer
    if a_org is not None and a_aug is not None and answers_equal(a_org, a_aug, tol):
        return Termination.CONSENSUS
    if j >= 2:
        p_org = org.history[-2].answer
        p_aug = aug.history[-2].answer
        org_stable = a_org is not None and p_org is not None and answers_equal(a_org, p_org, tol)
        aug_stable = a_aug is not None and p_aug is not None and answers_equal(a_aug, p_aug, tol)
        if org_stable and aug_stable:
            return (
                Termination.STABILITY_ORG
                if config.tie_break == TieBreak.PREFER_ORG
                else Termination.STABILITY_AUG
            )
        if org_stable:
            return Termination.STABILITY_ORG
        if aug_stable:
            return Termination.STABILITY_AUG
    if j >= config.max_iterations:
        return Termination.MAX_ITERATIONS
    return None


def select_final_answer(
    org: BranchState, aug: BranchState, termination: Termination, config: EoPConfig
) -> Answer | None:
    """Pick the reported answer for a terminated run.

    Consensus and stability name the answer directly. At the iteration cap
    the tie-break branch's last answer is reported, falling back to the
    other branch when it is absent; None (unanswerable, scored incorrect)
    when both are absent.
    """
    if termination == Termination.CONSENSUS or termination == Termination.STABILITY_ORG:
        return org.last_answer()
    if termination == Termination.STABILITY_AUG:
        return aug.last_answer()
    if termination == Termination.MAX_ITERATIONS:
        primary, secondary = (
            (org, aug) if config.tie_break == TieBreak.PREFER_ORG else (aug, org)
        )
        for branch in (primary, secondary):
            answer = branch.last_answer()
            if answer is not None:
                return answer
        return None
    raise ValueError(f"no final answer for termination {termination.value}")


class _CountingGateway:
    """Pass-through wrapper used to attribute generate calls to a phase."""

    def __init__(self, inner: Backend):
        self.inner = inner
        self.calls = 0

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        self.calls += 1
        return self.inner.generate(request)


Redefiner = Callable[[str, Backend], AugmentedQuestion]


def _problem_meta(problem: "Problem") -> dict:
    gold = getattr(problem, "gold", None)
    return {
        "question": problem.question,
        "kind": problem.kind.value,
        "gold": gold.canonical if gold is not None else None,
        "tags": dict(getattr(problem, "tags", {}) or {}),
    }


def run_eop(
    problem: "Problem",
    config: EoPConfig,
    gateway: Backend,
    redefiner: Redefiner | None = None,
) -> Transcript:
    """Run the full two-branch exchange on one problem.

    Stages: redefine the question, draw initial answers for both branches,
    then loop — check termination, and if the run continues give each branch
    one hinted iteration with the other branch's full answer history. Both
    branches advance in lockstep, and hints for a round are snapshotted
    before either branch moves so a branch never sees answers from its own
    round.

    A failed redefinition degrades to two identical branches (flagged in the
    transcript); a hard gateway failure raises EngineAbort carrying the
    partial transcript. ``redefiner`` overrides the configured redefinition
    strategy, mainly for tests.

    reasoning_calls counts only the per-iteration generate calls; the
    redefinition call is tracked separately.
    """
    counting = _CountingGateway(gateway)
    redefinition_meta: dict | None = None
    try:
        if redefiner is not None:
            augmented = redefiner(problem.question, counting)
        else:
            augmented = redefine(
                config.redefinition_method,
                problem.question,
                counting,
                model_id=config.model_id,
                max_tokens=config.max_tokens,
                source_problem_id=problem.id,
                assets_dir=config.assets_dir,
            )
        aug_text = augmented.text
        redefinition_meta = {
            "method": augmented.method.value,
            "text": augmented.text,
            "premises": list(augmented.premises) if augmented.premises else None,
            "core_question": augmented.core_question,
            "fallback": False,
        }
    except RedefinitionError as exc:
        aug_text = problem.question
        redefinition_meta = {
            "method": config.redefinition_method.value,
            "text": problem.question,
            "premises": None,
            "core_question": None,
            "fallback": True,
            "error": str(exc),
        }
    except GatewayError as exc:
        partial = _build_transcript(
            problem, "eop", {}, Termination.ABORTED, None, counting.calls, config, redefinition_meta
        )
        raise EngineAbort(f"redefinition failed: {exc}", partial) from exc

    org = BranchState(BranchId.ORG, problem.question)
    aug = BranchState(BranchId.AUG, aug_text)
    branches = {BranchId.ORG.value: org, BranchId.AUG.value: aug}

    try:
        run_branch_iteration(org, [], config, gateway, problem.kind)
        run_branch_iteration(aug, [], config, gateway, problem.kind)
        while True:
            decision = check_termination(org, aug, config)
            if decision is not None:
                break
            org_hints = aug.present_answers()
            aug_hints = org.present_answers()
            run_branch_iteration(org, org_hints, config, gateway, problem.kind)
            run_branch_iteration(aug, aug_hints, config, gateway, problem.kind)
    except GatewayError as exc:
        partial = _build_transcript(
            problem, "eop", branches, Termination.ABORTED, None, counting.calls, config, redefinition_meta
        )
        raise EngineAbort(f"generation failed: {exc}", partial) from exc

    final = select_final_answer(org, aug, decision, config)
    return _build_transcript(
        problem, "eop", branches, decision, final, counting.calls, config, redefinition_meta
    )


def run_php(problem: "Problem", config: EoPConfig, gateway: Backend) -> Transcript:
    """Single-branch self-hinting mode.

    The branch answers its own question, then repeats with its own previous
    answers as hints until the answer repeats (stability within the branch)
    or the iteration cap is hit. No redefinition call is made; the final
    answer is the last iteration's.
    """
    org = BranchState(BranchId.ORG, problem.question)
    branches = {BranchId.ORG.value: org}
    tol = config.numeric_tolerance
    try:
        run_branch_iteration(org, [], config, gateway, problem.kind)
        while True:
            j = len(org.history)
            if j >= 2:
                current = org.history[-1].answer
                previous = org.history[-2].answer
                if (
                    current is not None
                    and previous is not None
                    and answers_equal(current, previous, tol)
                ):
                    termination = Termination.SINGLE_BRANCH_STABLE
                    break
            if j >= config.max_iterations:
                termination = Termination.MAX_ITERATIONS
                break
            run_branch_iteration(org, org.present_answers(), config, gateway, problem.kind)
    except GatewayError as exc:
        partial = _build_transcript(problem, "php", branches, Termination.ABORTED, None, 0, config, None)
        raise EngineAbort(f"generation failed: {exc}", partial) from exc

    final = org.last_answer()
    return _build_transcript(problem, "php", branches, termination, final, 0, config, None)


def _build_transcript(
    problem: "Problem",
    method_name: str,
    branches: dict[str, BranchState],
    termination: Termination,
    final: Answer | None,
    redefinition_calls: int,
    config: EoPConfig,
    redefinition_meta: dict | None,
) -> Transcript:
    return Transcript(
        problem_id=problem.id,
        method_name=method_name,
        branches=branches,
        termination=termination,
        final_answer=final,
        reasoning_calls=sum(len(b.history) for b in branches.values()),
        redefinition_calls=redefinition_calls,
        config=config.to_metadata(),
        problem=_problem_meta(problem),
        redefinition=redefinition_meta,
    )
