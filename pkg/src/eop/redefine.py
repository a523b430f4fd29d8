"""Question redefinition: produce an augmented question from the original.

Two strategies are supported, both driven by shipped prompt templates with a
``{{question}}`` placeholder:

* premise extraction (``pec``): the model lists the question's premises and
  its core question as a JSON object; the augmented question is the premises
  concatenated in order followed by the core question.
* rephrasing (``qr``): the model rewrites the question directly and the full
  trimmed completion becomes the augmented question.

Redefinition always runs at temperature 0 so that a fixed backend yields a
fixed augmented question.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path

from .errors import ConfigurationError, RedefinitionError
from .gateway import Backend, GenerationRequest

PEC_TEMPLATE = "pec.txt"
QR_TEMPLATE = "qr.txt"
PLACEHOLDER = "{{question}}"


class RedefinitionMethod(str, Enum):
    PEC = "pec"
    QR = "qr"


@dataclass(frozen=True)
class AugmentedQuestion:
    method: RedefinitionMethod
    text: str
    premises: tuple[str, ...] | None = None
    core_question: str | None = None
    source_problem_id: str | None = None

    def __post_init__(self):
        if self.method == RedefinitionMethod.PEC:
            if not self.premises or not self.core_question:
                raise ValueError("premise-extraction output needs premises and a core question")
            expected = concat_premises(list(self.premises), self.core_question)
            if self.text != expected:
                raise ValueError("augmented text must be the concatenation of premises and core question")
        else:
            if self.premises is not None or self.core_question is not None:
                raise ValueError("rephrased questions carry no premises")


def load_asset(relpath: str, assets_dir: str | Path | None = None) -> str:
    """Read a prompt asset, preferring an override directory over the
    packaged defaults."""
    if assets_dir is not None:
        candidate = Path(assets_dir) / relpath
        if candidate.exists():
            return candidate.read_text(encoding="utf-8")
    resource = resources.files("eop").joinpath("prompts").joinpath(relpath)
    try:
        return resource.read_text(encoding="utf-8")
    except (FileNotFoundError, OSError) as exc:
        raise ConfigurationError(f"missing prompt asset {relpath!r}") from exc


def render_template(template: str, question: str) -> str:
    if PLACEHOLDER not in template:
        raise ConfigurationError(f"template does not contain the {PLACEHOLDER} placeholder")
    return template.replace(PLACEHOLDER, question)


def concat_premises(premises: list[str], core_question: str) -> str:
    """Join premises in order, then the core question.

    Each premise is terminated with a period when it lacks terminal
    punctuation, which keeps the augmented question grammatical.
    """
    if not premises:
        raise ValueError("premises must be non-empty")
    if not core_question or not core_question.strip():
        raise ValueError("core question must be non-empty")
    parts = []
    for premise in premises:
        p = premise.strip()
        if not p:
            raise ValueError("premises must be non-empty strings")
        if not p.endswith((".", "?", "!")):
            p += "."
        parts.append(p)
    return " ".join(parts) + " " + core_question.strip()


def redefine_pec(
    q_org: str,
    gateway: Backend,
    *,
    model_id: str = "default",
    max_tokens: int = 1024,
    source_problem_id: str | None = None,
    assets_dir: str | Path | None = None,
) -> AugmentedQuestion:
    if not q_org or not q_org.strip():
        raise ValueError("original question must be non-empty")
    prompt = render_template(load_asset(PEC_TEMPLATE, assets_dir), q_org)
    response = gateway.generate(
        GenerationRequest.for_prompt(prompt, temperature=0.0, max_tokens=max_tokens, model_id=model_id)
    )
    premises, core_question = parse_premise_object(response.text)
    return AugmentedQuestion(
        method=RedefinitionMethod.PEC,
        text=concat_premises(list(premises), core_question),
        premises=premises,
        core_question=core_question,
        source_problem_id=source_problem_id,
    )


def redefine_qr(
    q_org: str,
    gateway: Backend,
    *,
    model_id: str = "default",
    max_tokens: int = 1024,
    source_problem_id: str | None = None,
    assets_dir: str | Path | None = None,
) -> AugmentedQuestion:
    if not q_org or not q_org.strip():
        raise ValueError("original question must be non-empty")
    prompt = render_template(load_asset(QR_TEMPLATE, assets_dir), q_org)
    response = gateway.generate(
        GenerationRequest.for_prompt(prompt, temperature=0.0, max_tokens=max_tokens, model_id=model_id)
    )
    text = response.text.strip()
    if not text:
        raise RedefinitionError("rephrasing returned an empty completion")
    return AugmentedQuestion(
        method=RedefinitionMethod.QR, text=text, source_problem_id=source_problem_id
    )


def redefine(method: RedefinitionMethod, q_org: str, gateway: Backend, **kwargs) -> AugmentedQuestion:
    if method == RedefinitionMethod.PEC:
        return redefine_pec(q_org, gateway, **kwargs)
    return redefine_qr(q_org, gateway, **kwargs)


# --- lenient object parsing ---------------------------------------------------

_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\n(.*?)```", re.DOTALL)
_BARE_VALUE_RE = re.compile(
    r'^(\s*"(?:question|premise)"\s*:\s*)(?!")(?P<value>[^\[\{].*?)(?P<comma>,?)\s*$'
)


def parse_premise_object(text: str) -> tuple[tuple[str, ...], str]:
    """Parse a premises/question object out of a model completion.

    Models wrap objects in prose and code fences, sometimes leave trailing
    commas, and occasionally emit the question value without quotes; one
    bounded repair pass (strip fences, take the first balanced-brace region,
    quote bare scalars, drop trailing commas) is applied before giving up
    with RedefinitionError.
    """
    region = _first_balanced_braces(_strip_code_fences(text))
    if region is None:
        raise RedefinitionError("no JSON object found in redefinition output")
    obj = None
    try:
        obj = json.loads(region)
    except json.JSONDecodeError:
        try:
            obj = json.loads(_repair_loose_json(region))
        except json.JSONDecodeError as exc:
            raise RedefinitionError(f"could not parse redefinition object: {exc}") from exc
    if not isinstance(obj, dict):
        raise RedefinitionError("redefinition output is not an object")

    raw_premises = obj.get("premises", obj.get("premise"))
    if isinstance(raw_premises, str):
        raw_premises = [raw_premises]
    if not isinstance(raw_premises, list) or not raw_premises:
        raise RedefinitionError("redefinition object has no premises array")
    premises = []
    for item in raw_premises:
        if not isinstance(item, str) or not item.strip():
            raise RedefinitionError("premises must be non-empty strings")
        premises.append(item.strip())

    question = obj.get("question")
    if not isinstance(question, str) or not question.strip():
        raise RedefinitionError("redefinition object has no question string")
    return tuple(premises), question.strip()


def _strip_code_fences(text: str) -> str:
    m = _FENCE_RE.search(text)
    return m.group(1) if m else text


def _first_balanced_braces(text: str) -> str | None:
    start = text.find("{")
    if start < 0:
        return None
    depth = 0
    in_string = False
    escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[start : i + 1]
    return None


def _repair_loose_json(region: str) -> str:
    lines = []
    for line in region.split("\n"):
        m = _BARE_VALUE_RE.match(line)
        if m:
            value = m.group("value").rstrip()
            if value and value not in ("null", "true", "false") and not _looks_numeric(value):
                line = m.group(1) + json.dumps(value, ensure_ascii=False) + m.group("comma")
        lines.append(line)
    repaired = "\n".join(lines)
    return re.sub(r",(\s*[}\]])", r"\1", repaired)


def _looks_numeric(value: str) -> bool:
    try:
        float(value)
        return True
    except ValueError:
        return False
