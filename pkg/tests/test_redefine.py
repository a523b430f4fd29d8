from __future__ import annotations

import json

import pytest

from eop.errors import RedefinitionError
from eop.gateway import GenerationRequest
from eop.redefine import (
    AugmentedQuestion,
    RedefinitionMethod,
    concat_premises,
    load_asset,
    parse_premise_object,
    redefine_pec,
    redefine_qr,
    render_template,
)

from conftest import make_mock

DEMO_INPUT = (
    "There are 96 fourth-graders at Small Tree School. 43 of them are girls. "
    "On Friday, 5 fourth-grade girls and 4 fourth grade boys were absent. "
    "How many fourth grade boys were at Small Tree School on Friday?"
)

DEMO_PREMISES = (
    "Small Tree School has a total of 96 fourth-graders.",
    "Out of these, 43 are girls.",
    "On Friday, 5 girls and 4 boys from the fourth grade were absent.",
)

DEMO_CORE = "How many fourth-grade boys were present at Small Tree School on Friday?"

# the extraction demonstration's printed output, verbatim, including the
# unquoted question value
DEMO_OUTPUT_OBJECT = """{
"premises":[
"Small Tree School has a total of 96 fourth-graders.",
"Out of these, 43 are girls.",
"On Friday, 5 girls and 4 boys from the fourth grade were absent."
],
"question": How many fourth-grade boys were present at Small Tree School on Friday?
}"""


def test_concat_premises_definitional() -> None:
    assert concat_premises(["A is 5.", "B is 7."], "What is A+B?") == "A is 5. B is 7. What is A+B?"


def test_concat_premises_completes_punctuation() -> None:
    assert concat_premises(["x"], "y?") == "x. y?"


def test_concat_premises_demo_fields() -> None:
    text = concat_premises(list(DEMO_PREMISES), DEMO_CORE)
    cursor = 0
    for premise in DEMO_PREMISES:
        index = text.find(premise, cursor)
        assert index >= 0
        cursor = index + len(premise)
    assert text.endswith(DEMO_CORE)


def test_concat_premises_rejects_empty() -> None:
    with pytest.raises(ValueError):
        concat_premises([], "q?")
    with pytest.raises(ValueError):
        concat_premises(["p"], " ")


def test_templates_ship_with_placeholder() -> None:
    for name in ("pec.txt", "qr.txt"):
        template = load_asset(name)
        assert "{{question}}" in template
    rendered = render_template(load_asset("qr.txt"), "Why?")
    assert "Why?" in rendered
    assert "{{question}}" not in rendered


def test_pec_demonstration_round_trip() -> None:
    backend = make_mock(("Extract premises", [DEMO_OUTPUT_OBJECT]))
    augmented = redefine_pec(DEMO_INPUT, backend)
    assert augmented.method == RedefinitionMethod.PEC
    assert augmented.premises == DEMO_PREMISES
    assert augmented.core_question == DEMO_CORE
    assert augmented.text == concat_premises(list(DEMO_PREMISES), DEMO_CORE)


def test_pec_parses_fenced_object() -> None:
    planted = {"premises": ["P one.", "P two."], "question": "Core?"}
    response = "Sure, here's the object:\n```json\n" + json.dumps(planted) + "\n```\nHope that helps."
    backend = make_mock(("Extract premises", [response]))
    augmented = redefine_pec("Some question?", backend)
    assert list(augmented.premises) == planted["premises"]
    assert augmented.core_question == planted["question"]


def test_pec_failure_after_repair_attempt() -> None:
    backend = make_mock(("Extract premises", ["no object here at all"]))
    with pytest.raises(RedefinitionError):
        redefine_pec("q?", backend)


def test_pec_runs_greedy() -> None:
    seen: list[GenerationRequest] = []

    class Spy:
        def generate(self, request):
            seen.append(request)
            return make_mock(("", ['{"premises": ["p."], "question": "q?"}'])).generate(request)

    redefine_pec("anything?", Spy(), model_id="m3")
    assert seen[0].temperature == 0.0
    assert seen[0].model_id == "m3"


def test_qr_passthrough() -> None:
    rephrased = (
        "What is the count of fourth-grade boys present on Friday, given 96 students, "
        "43 girls, and absences of 5 girls and 4 boys?"
    )
    backend = make_mock(("Revise and improve", [rephrased]))
    augmented = redefine_qr("original?", backend)
    assert augmented.method == RedefinitionMethod.QR
    assert augmented.text == rephrased
    assert augmented.premises is None
    assert augmented.core_question is None


def test_qr_empty_completion_fails() -> None:
    backend = make_mock(("Revise and improve", ["   "]))
    with pytest.raises(RedefinitionError):
        redefine_qr("original?", backend)


def test_qr_scripted_rephrasings_match_script() -> None:
    # oracle: the script table itself
    rephrasings = [f"Rephrased question number {i}?" for i in range(20)]
    backend = make_mock(("Revise and improve", rephrasings))
    for expected in rephrasings:
        got = redefine_qr("original?", backend)
        assert got.method == RedefinitionMethod.QR
        assert got.premises is None
        assert got.text == expected


def test_redefinition_deterministic_for_fixed_script() -> None:
    def run() -> str:
        backend = make_mock(("Extract premises", ['{"premises": ["p1."], "question": "q?"}']))
        return redefine_pec("stable?", backend).text

    assert run() == run()


def test_parse_premise_object_accepts_premise_singular_key() -> None:
    premises, question = parse_premise_object('{"premise": ["only one."], "question": "q?"}')
    assert premises == ("only one.",)
    assert question == "q?"


def test_parse_premise_object_drops_trailing_commas() -> None:
    text = '{"premises": ["a.", "b.",], "question": "q?",}'
    premises, question = parse_premise_object(text)
    assert premises == ("a.", "b.")


def test_parse_premise_object_rejects_missing_fields() -> None:
    with pytest.raises(RedefinitionError):
        parse_premise_object('{"premises": [], "question": "q?"}')
    with pytest.raises(RedefinitionError):
        parse_premise_object('{"premises": ["p."]}')


def test_augmented_question_invariants() -> None:
    with pytest.raises(ValueError):
        AugmentedQuestion(method=RedefinitionMethod.PEC, text="x")
    with pytest.raises(ValueError):
        AugmentedQuestion(
            method=RedefinitionMethod.QR, text="x", premises=("p.",), core_question="q?"
        )
    ok = AugmentedQuestion(
        method=RedefinitionMethod.PEC,
        text=concat_premises(["p."], "q?"),
        premises=("p.",),
        core_question="q?",
    )
    assert ok.text == "p. q?"
