from __future__ import annotations

import pytest

from eop.answers import AnswerKind
from eop.baselines import SCConfig, run_cot, run_self_consistency
from eop.engine import Termination, Transcript
from eop.errors import EngineAbort

from conftest import make_mock, make_problem, zero_shot_config


def test_cot_single_call(empty_assets) -> None:
    backend = make_mock(("ORGQ", ["The boys present were 49. The answer is 49."]))
    problem = make_problem("p1", "ORGQ how many?", "49")
    transcript = run_cot(problem, zero_shot_config(empty_assets), backend)
    assert transcript.termination == Termination.SINGLE_SHOT
    assert transcript.final_answer.canonical == "49"
    assert transcript.reasoning_calls == 1
    assert transcript.redefinition_calls == 0
    assert backend.call_count == 1


def test_cot_extraction_failure_is_unanswerable(empty_assets) -> None:
    backend = make_mock(("ORGQ", ["no number, sorry"]))
    problem = make_problem("p1", "ORGQ how many?", "49")
    transcript = run_cot(problem, zero_shot_config(empty_assets), backend)
    assert transcript.final_answer is None


def test_cot_runs_at_greedy_temperature(empty_assets) -> None:
    requests = []

    class Spy:
        def generate(self, request):
            requests.append(request)
            return make_mock(("", ["The answer is 1."])).generate(request)

    run_cot(make_problem(), zero_shot_config(empty_assets), Spy())
    assert requests[0].temperature == 0.0


def test_sc_majority(empty_assets) -> None:
    responses = [f"The answer is {v}." for v in ("7", "7", "9", "7")]
    backend = make_mock(("ORGQ", responses))
    problem = make_problem("p1", "ORGQ how many?", "7")
    transcript = run_self_consistency(
        problem, SCConfig(samples_k=4), zero_shot_config(empty_assets), backend
    )
    assert transcript.termination == Termination.MAJORITY_VOTE
    assert transcript.final_answer.canonical == "7"
    assert transcript.reasoning_calls == 4
    assert backend.call_count == 4


def test_sc_samples_at_sampling_temperature(empty_assets) -> None:
    requests = []

    class Spy:
        def generate(self, request):
            requests.append(request)
            return make_mock(("", ["The answer is 1."])).generate(request)

    run_self_consistency(
        make_problem(), SCConfig(samples_k=3, temperature=0.8), zero_shot_config(empty_assets), Spy()
    )
    assert [r.temperature for r in requests] == [0.8, 0.8, 0.8]


def test_sc_tie_breaks_to_earliest_class(empty_assets) -> None:
    responses = [f"The answer is ({v})." for v in ("A", "A", "B", "B", "C")]
    backend = make_mock(("ORGQ", responses))
    problem = make_problem("p1", "ORGQ which?", "A", AnswerKind.MULTIPLE_CHOICE)
    transcript = run_self_consistency(
        problem, SCConfig(samples_k=5), zero_shot_config(empty_assets), backend
    )
    assert transcript.final_answer.canonical == "A"
    assert transcript.reasoning_calls == 5


def test_sc_all_extraction_failures_unanswerable(empty_assets) -> None:
    backend = make_mock(("ORGQ", ["nope", "still nope"]))
    problem = make_problem("p1", "ORGQ how many?", "7")
    transcript = run_self_consistency(
        problem, SCConfig(samples_k=2), zero_shot_config(empty_assets), backend
    )
    assert transcript.final_answer is None


def test_sc_skips_failed_extractions_in_vote(empty_assets) -> None:
    responses = ["mumble", "The answer is 3.", "The answer is 3.", "The answer is 9."]
    backend = make_mock(("ORGQ", responses))
    problem = make_problem("p1", "ORGQ how many?", "3")
    transcript = run_self_consistency(
        problem, SCConfig(samples_k=4), zero_shot_config(empty_assets), backend
    )
    assert transcript.final_answer.canonical == "3"
    assert transcript.reasoning_calls == 4  # failed samples still count as calls


def test_sc_k1_greedy_matches_cot(empty_assets) -> None:
    script = ("ORGQ", ["The answer is 49."])
    problem = make_problem("p1", "ORGQ how many?", "49")
    config = zero_shot_config(empty_assets)
    cot = run_cot(problem, config, make_mock(script))
    sc = run_self_consistency(problem, SCConfig(samples_k=1, temperature=0.0), config, make_mock(script))
    assert sc.final_answer == cot.final_answer
    assert sc.branches["org"].history[0].prompt_text == cot.branches["org"].history[0].prompt_text


def test_sc_config_validation() -> None:
    with pytest.raises(ValueError):
        SCConfig(samples_k=0)


def test_baseline_transcripts_round_trip_like_engine_ones(empty_assets) -> None:
    backend = make_mock(("ORGQ", ["The answer is 7."] * 4))
    problem = make_problem("p1", "ORGQ how many?", "7", tags={"dataset": "mini"})
    for transcript in (
        run_cot(problem, zero_shot_config(empty_assets), backend),
        run_self_consistency(problem, SCConfig(2), zero_shot_config(empty_assets), backend),
    ):
        reloaded = Transcript.from_json_dict(transcript.to_json_dict())
        assert reloaded.to_json_dict() == transcript.to_json_dict()
        assert reloaded.problem["tags"] == {"dataset": "mini"}


def test_sc_gateway_failure_aborts(empty_assets) -> None:
    backend = make_mock(("never-matches", ["x"]))
    problem = make_problem("p1", "ORGQ how many?", "7")
    with pytest.raises(EngineAbort):
        run_self_consistency(problem, SCConfig(2), zero_shot_config(empty_assets), backend)
