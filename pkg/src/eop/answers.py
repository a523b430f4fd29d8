"""Answer extraction and canonicalization.

Model responses are free-form text; termination checks and scoring need a
well-defined equality over answers. This module extracts the final answer
from a response, canonicalizes it per answer kind, and provides the
tolerance-aware comparison and majority vote used everywhere else.

Canonical forms:

* numeric: decimal string with no leading '+', no thousands separators and
  no trailing zeros after the decimal point ("-0" renders "0"). Ratios whose
  reduced denominator is not of the form 2^a * 5^b stay exact fractions
  ("1/3") instead of being rounded.
* multiple_choice: a single uppercase letter A-E.
* text: lowercased with runs of whitespace collapsed; LaTeX-looking strings
  (anything containing a backslash) additionally drop all whitespace and the
  frac variants collapse to ``\\frac``, so "\\dfrac{1}{2}" and "\\frac{1}{2}"
  compare equal. Full symbolic equivalence is out of scope.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Sequence

from .errors import ExtractionError, NormalizationError

DEFAULT_NUMERIC_TOLERANCE = 1e-6

_CURRENCY_CHARS = "$€£¥"

# Digits with optional well-formed thousands grouping, optional decimals.
_DECIMAL_RE = re.compile(r"^[+-]?(?:\d{1,3}(?:,\d{3})+|\d+)?(?:\.\d+)?$")
_FRACTION_RE = re.compile(r"^([+-]?\d+)\s*/\s*(\d+)$")


class AnswerKind(str, Enum):
    NUMERIC = "numeric"
    MULTIPLE_CHOICE = "multiple_choice"
    TEXT = "text"


@dataclass(frozen=True)
class Answer:
    """A canonicalized model answer plus the raw span it came from."""

    kind: AnswerKind
    canonical: str
    raw_span: str

    @classmethod
    def from_raw(cls, kind: AnswerKind, raw_span: str) -> "Answer":
        return cls(kind=kind, canonical=normalize(kind, raw_span), raw_span=raw_span)


def normalize(kind: AnswerKind, token: str) -> str:
    if kind == AnswerKind.NUMERIC:
        return normalize_numeric(token)
    if kind == AnswerKind.MULTIPLE_CHOICE:
        return normalize_choice(token)
    return normalize_text(token)


def normalize_numeric(token: str) -> str:
    """Canonicalize a numeric token (plain, grouped, fraction, % or currency).

    The percent sign is stripped with the value kept as written ("50%" ->
    "50"); currency prefixes are dropped. Raises NormalizationError when the
    token does not lex as a number.
    """
    value = parse_numeric(token)
    return _fraction_to_canonical(value)


def parse_numeric(token: str) -> Fraction:
    """Parse a numeric token to an exact rational value."""
    s = token.strip()
    if not s:
        raise NormalizationError("empty numeric token")

    sign = ""
    while s and (s[0] in "+-" or s[0] in _CURRENCY_CHARS):
        if s[0] in "+-":
            if sign:
                raise NormalizationError(f"cannot parse number: {token!r}")
            sign = s[0]
        s = s[1:].lstrip()
    if s.endswith("%"):
        s = s[:-1].rstrip()

    frac = _FRACTION_RE.match(s)
    if frac:
        num, den = int(frac.group(1)), int(frac.group(2))
        if den == 0:
            raise NormalizationError(f"zero denominator: {token!r}")
        value = Fraction(num, den)
        return -value if sign == "-" else value

    if not _DECIMAL_RE.match(s) or not any(c.isdigit() for c in s):
        raise NormalizationError(f"cannot parse number: {token!r}")
    s = s.replace(",", "")
    if s.startswith("."):
        s = "0" + s
    value = Fraction(s)
    return -value if sign == "-" else value


def _fraction_to_canonical(value: Fraction) -> str:
    if value.denominator == 1:
        return str(value.numerator)
    den = value.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den != 1:
        # non-terminating decimal: keep the exact reduced fraction
        return f"{value.numerator}/{value.denominator}"
    shift = max(twos, fives)
    scaled = value.numerator * 10**shift // value.denominator
    sign = "-" if scaled < 0 else ""
    digits = str(abs(scaled)).rjust(shift + 1, "0")
    int_part, frac_part = digits[:-shift], digits[-shift:].rstrip("0")
    if not frac_part:
        return sign + int_part if int_part != "0" else int_part
    return f"{sign}{int_part}.{frac_part}"


_CHOICE_RE = re.compile(r"^[\(\[]?\s*([A-Ea-e])\s*[\)\]]?\s*\.?$")


def normalize_choice(token: str) -> str:
    m = _CHOICE_RE.match(token.strip())
    if not m:
        raise NormalizationError(f"cannot parse choice letter: {token!r}")
    return m.group(1).upper()


def normalize_text(token: str) -> str:
    s = token.strip()
    s = s.replace("\\dfrac", "\\frac").replace("\\tfrac", "\\frac")
    s = _strip_outer_braces(s)
    if "\\" in s:
        s = re.sub(r"\s+", "", s)
    else:
        s = re.sub(r"\s+", " ", s)
    return s.lower()


def _strip_outer_braces(s: str) -> str:
    while len(s) >= 2 and s[0] == "{" and s[-1] == "}":
        depth = 0
        closes_at_end = False
        for i, ch in enumerate(s):
            if ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    closes_at_end = i == len(s) - 1
                    break
        if not closes_at_end:
            break
        s = s[1:-1].strip()
    return s


# --- extraction -------------------------------------------------------------

_NUM_TOKEN = r"[$€£¥]?[-+]?\d[\d,]*(?:\.\d+)?(?:\s*/\s*\d+)?%?"
_CHOICE_TOKEN = r"\(?\s*([A-Ea-e])\s*\)?"

_ANSWER_IS = r"(?:the\s+)?(?:final\s+)?answer\s+is\s*:?\s*"
_ANSWER_COLON = r"\banswer\s*:\s*"


def _kind_patterns(kind: AnswerKind) -> list[re.Pattern]:
    if kind == AnswerKind.NUMERIC:
        return [
            re.compile(_ANSWER_IS + rf"({_NUM_TOKEN})", re.IGNORECASE),
            re.compile(_ANSWER_COLON + rf"({_NUM_TOKEN})", re.IGNORECASE),
        ]
    if kind == AnswerKind.MULTIPLE_CHOICE:
        return [
            re.compile(_ANSWER_IS + _CHOICE_TOKEN + r"(?![A-Za-z])", re.IGNORECASE),
            re.compile(_ANSWER_COLON + _CHOICE_TOKEN + r"(?![A-Za-z])", re.IGNORECASE),
        ]
    return [
        re.compile(_ANSWER_IS + r"([^\n]+)", re.IGNORECASE),
        re.compile(_ANSWER_COLON + r"([^\n]+)", re.IGNORECASE),
    ]


def _last_boxed(text: str) -> str | None:
    starts = [m.end() for m in re.finditer(r"\\boxed\s*\{", text)]
    for start in reversed(starts):
        depth = 1
        pos = start
        while pos < len(text) and depth > 0:
            if text[pos] == "{":
                depth += 1
            elif text[pos] == "}":
                depth -= 1
            pos += 1
        if depth == 0:
            return text[start : pos - 1].strip()
    return None


_STANDALONE_NUMBER = re.compile(r"[-+]?\d[\d,]*(?:\.\d+)?(?:/\d+)?")
_STANDALONE_CHOICE = re.compile(r"\(([A-Ea-e])\)|\b([A-E])\b")


def extract_final_answer(response_text: str, kind: AnswerKind) -> Answer:
    """Pull the final answer out of a free-form response.

    Patterns are tried in priority order ("the answer is ...", "answer: ...",
    the final boxed expression, then the last standalone number or choice
    letter); within a pattern the last occurrence in the text wins, since
    models routinely restate intermediate answers before the final one. The
    response text itself is never modified. Raises ExtractionError when
    nothing extractable is found.
    """
    if not response_text or not response_text.strip():
        raise ExtractionError("empty response text")

    for pattern in _kind_patterns(kind):
        for match in reversed(list(pattern.finditer(response_text))):
            raw = next(g for g in match.groups() if g is not None)
            answer = _try_normalize(kind, raw)
            if answer is not None:
                return answer

    boxed = _last_boxed(response_text)
    if boxed is not None:
        answer = _try_normalize(kind, boxed)
        if answer is not None:
            return answer

    if kind == AnswerKind.NUMERIC:
        for match in reversed(list(_STANDALONE_NUMBER.finditer(response_text))):
            answer = _try_normalize(kind, match.group(0))
            if answer is not None:
                return answer
    elif kind == AnswerKind.MULTIPLE_CHOICE:
        for match in reversed(list(_STANDALONE_CHOICE.finditer(response_text))):
            raw = match.group(1) or match.group(2)
            answer = _try_normalize(kind, raw)
            if answer is not None:
                return answer

    raise ExtractionError(f"no extractable {kind.value} answer")


def _try_normalize(kind: AnswerKind, raw: str) -> Answer | None:
    raw = raw.strip().rstrip(".,;")
    if not raw:
        return None
    try:
        return Answer.from_raw(kind, raw)
    except NormalizationError:
        return None


# --- comparison -------------------------------------------------------------


def canonical_numeric_value(canonical: str) -> Fraction:
    frac = _FRACTION_RE.match(canonical)
    if frac:
        return Fraction(int(frac.group(1)), int(frac.group(2)))
    return Fraction(canonical)


def answers_equal(a: Answer, b: Answer, numeric_tolerance: float = DEFAULT_NUMERIC_TOLERANCE) -> bool:
    """Kind-aware equality.

    Choice and text answers compare by canonical string. Numeric answers
    compare exactly in rational arithmetic under a relative tolerance with an
    absolute floor at magnitude 1: |va - vb| <= tol * max(1, |va|, |vb|).
    Using the larger magnitude on the right keeps the relation symmetric.
    """
    if a.kind != b.kind:
        raise ValueError(f"cannot compare kinds {a.kind.value} and {b.kind.value}")
    if a.kind != AnswerKind.NUMERIC:
        return a.canonical == b.canonical
    va = canonical_numeric_value(a.canonical)
    vb = canonical_numeric_value(b.canonical)
    scale = max(Fraction(1), abs(va), abs(vb))
    return abs(va - vb) <= Fraction(numeric_tolerance) * scale


def majority_vote(answers: Sequence[Answer], tolerance: float = DEFAULT_NUMERIC_TOLERANCE) -> Answer:
    """Return the most common answer under answers_equal.

    Equivalence classes are represented by their first occurrence; ties break
    toward the class seen earliest, so the result is always a member of the
    input.
    """
    if not answers:
        raise ValueError("majority_vote needs at least one answer")
    kinds = {a.kind for a in answers}
    if len(kinds) > 1:
        raise ValueError(f"mixed answer kinds: {sorted(k.value for k in kinds)}")

    reps: list[Answer] = []
    counts: list[int] = []
    for answer in answers:
        for i, rep in enumerate(reps):
            if answers_equal(rep, answer, tolerance):
                counts[i] += 1
                break
        else:
            reps.append(answer)
            counts.append(1)
    best = max(range(len(reps)), key=lambda i: (counts[i], -i))
    return reps[best]
