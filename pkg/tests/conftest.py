from __future__ import annotations

from pathlib import Path

import pytest

from eop.answers import Answer, AnswerKind
from eop.engine import EoPConfig, PromptStyle
from eop.gateway import MockBackend, MockScript
from eop.harness import Problem
from eop.redefine import AugmentedQuestion, RedefinitionMethod

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def empty_assets(tmp_path: Path) -> Path:
    """Asset override directory with empty demo files (zero-shot prompts)."""
    demos = tmp_path / "assets" / "demos"
    demos.mkdir(parents=True)
    for style in PromptStyle:
        (demos / f"{style.value}.txt").write_text("", encoding="utf-8")
    return tmp_path / "assets"


def make_mock(*entries: tuple[str, list[str]], default: str | None = None) -> MockBackend:
    script = MockScript.from_dict(
        {
            "entries": [{"match": match, "responses": responses} for match, responses in entries],
            "default_response": default,
        }
    )
    return MockBackend(script)


def num(value: str) -> Answer:
    return Answer.from_raw(AnswerKind.NUMERIC, value)


def choice(value: str) -> Answer:
    return Answer.from_raw(AnswerKind.MULTIPLE_CHOICE, value)


def make_problem(
    pid: str = "p1",
    question: str = "ORGQ how many?",
    answer: str = "7",
    kind: AnswerKind = AnswerKind.NUMERIC,
    tags: dict | None = None,
) -> Problem:
    return Problem.from_fields(pid, question, answer, kind, tags or {})


def identity_redefiner(text_prefix: str = ""):
    """Redefiner stub that never calls the gateway."""

    def _redefine(question: str, gateway) -> AugmentedQuestion:
        return AugmentedQuestion(method=RedefinitionMethod.QR, text=text_prefix + question)

    return _redefine


def zero_shot_config(assets_dir: Path, **overrides) -> EoPConfig:
    defaults = dict(
        base_prompt_style=PromptStyle.STANDARD,
        max_iterations=8,
        assets_dir=assets_dir,
    )
    defaults.update(overrides)
    return EoPConfig(**defaults)
