"""Single-shot and sampled baselines sharing the engine's prompt composition.

``run_cot`` issues one greedy base-prompt call per problem. Self-consistency
draws k samples at a higher temperature over the same base prompt and
majority-votes the extracted answers. The single-branch self-hinting
baseline lives in :mod:`eop.engine` as the degenerate mode.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

from .answers import Answer, majority_vote
from .engine import (
    BranchId,
    BranchState,
    EoPConfig,
    Termination,
    Transcript,
    _build_transcript,
    run_branch_iteration,
)
from .errors import EngineAbort, GatewayError
from .gateway import Backend

if TYPE_CHECKING:
    from .harness import Problem


@dataclass
class SCConfig:
    samples_k: int = 4
    temperature: float = 0.8

    def __post_init__(self):
        if self.samples_k < 1:
            raise ValueError("samples_k must be >= 1")


def run_cot(problem: "Problem", config: EoPConfig, gateway: Backend) -> Transcript:
    """One base-prompt call, one extracted answer; reasoning_calls is 1."""
    org = BranchState(BranchId.ORG, problem.question)
    branches = {BranchId.ORG.value: org}
    try:
        record = run_branch_iteration(org, [], config, gateway, problem.kind)
    except GatewayError as exc:
        partial = _transcript(problem, "cot", branches, Termination.ABORTED, None, config)
        raise EngineAbort(f"generation failed: {exc}", partial) from exc
    return _transcript(problem, "cot", branches, Termination.SINGLE_SHOT, record.answer, config)


def run_self_consistency(
    problem: "Problem", sc_config: SCConfig, config: EoPConfig, gateway: Backend
) -> Transcript:
    """k independent samples over one base prompt, majority-voted.

    Samples run at the self-consistency temperature (0.8 by default)
    regardless of the greedy temperature configured for other methods. With
    a scripted mock backend the k samples consume successive scripted
    responses, standing in for sampling diversity. All-sample extraction
    failure yields the unanswerable marker.
    """
    sample_config = EoPConfig(
        redefinition_method=config.redefinition_method,
        base_prompt_style=config.base_prompt_style,
        max_iterations=config.max_iterations,
        numeric_tolerance=config.numeric_tolerance,
        tie_break=config.tie_break,
        temperature=sc_config.temperature,
        model_id=config.model_id,
        max_tokens=config.max_tokens,
        assets_dir=config.assets_dir,
    )
    org = BranchState(BranchId.ORG, problem.question)
    branches = {BranchId.ORG.value: org}
    try:
        for _ in range(sc_config.samples_k):
            run_branch_iteration(org, [], sample_config, gateway, problem.kind)
    except GatewayError as exc:
        partial = _transcript(problem, "sc", branches, Termination.ABORTED, None, config)
        raise EngineAbort(f"generation failed: {exc}", partial) from exc

    extracted: list[Answer] = org.present_answers()
    final = majority_vote(extracted, config.numeric_tolerance) if extracted else None
    transcript = _transcript(problem, "sc", branches, Termination.MAJORITY_VOTE, final, config)
    transcript.config["samples_k"] = sc_config.samples_k
    transcript.config["sc_temperature"] = sc_config.temperature
    return transcript


def _transcript(
    problem: "Problem",
    method_name: str,
    branches: dict[str, BranchState],
    termination: Termination,
    final: Answer | None,
    config: EoPConfig,
) -> Transcript:
    return _build_transcript(problem, method_name, branches, termination, final, 0, config, None)
