"""Dataset loading, method evaluation, and report aggregation.

A run evaluates one method over a dataset, persisting one transcript JSON per
problem under ``{run_dir}/{method}/{problem_id}.json``. Runs are resumable:
an existing transcript for the same (run directory, method, problem) is
reused instead of regenerated, so rerunning a finished run touches no
backend. Per-problem failures are recorded as incorrect rows with an error
annotation and the run continues.

Aggregation is a deterministic fold over problems sorted by id, so reports do
not depend on worker completion order.
"""

from __future__ import annotations

import csv
import io
import json
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .answers import Answer, AnswerKind, answers_equal
from .baselines import SCConfig, run_cot, run_self_consistency
from .engine import EoPConfig, Transcript, run_eop, run_php
from .errors import DatasetError, EngineAbort
from .gateway import Backend

METHODS = ("cot", "php", "sc", "eop")

UNTAGGED = "(untagged)"


@dataclass(frozen=True)
class Problem:
    """One benchmark item; the gold answer is canonicalized on construction."""

    id: str
    question: str
    gold: Answer
    kind: AnswerKind
    tags: Mapping[str, str] = field(default_factory=dict)

    @classmethod
    def from_fields(
        cls,
        id: str,
        question: str,
        answer: str,
        kind: AnswerKind,
        tags: Mapping[str, str] | None = None,
    ) -> "Problem":
        return cls(
            id=id,
            question=question,
            gold=Answer.from_raw(kind, answer),
            kind=kind,
            tags=dict(tags or {}),
        )


# --- dataset loading ----------------------------------------------------------


def load_dataset(
    path: str | Path,
    format_hint: str = "jsonl",
    default_kind: AnswerKind | None = None,
) -> list[Problem]:
    """Load a dataset file into problems.

    The native format is JSON-lines with ``id``, ``question``, ``answer``,
    ``kind`` and optional ``tags`` per record. Thin import adapters cover two
    common upstream layouts: ``gsm8k`` (rationale with the gold after a
    ``####`` marker, numeric) and ``aqua`` (multiple choice with an
    ``options`` array and a ``correct`` letter). Load errors name the
    offending record.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")
    if format_hint not in ("jsonl", "gsm8k", "aqua"):
        raise DatasetError(f"unknown dataset format: {format_hint!r}")

    problems: list[Problem] = []
    seen: set[str] = set()
    for lineno, raw_line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw_line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"line {lineno}: invalid JSON: {exc}") from exc
        if not isinstance(record, dict):
            raise DatasetError(f"line {lineno}: record is not an object")
        if format_hint == "jsonl":
            problem = _parse_native(record, lineno, default_kind)
        elif format_hint == "gsm8k":
            problem = _parse_gsm8k(record, lineno)
        else:
            problem = _parse_aqua(record, lineno)
        if problem.id in seen:
            raise DatasetError(f"line {lineno}: duplicate problem id {problem.id!r}")
        seen.add(problem.id)
        problems.append(problem)
    if not problems:
        raise DatasetError(f"dataset {path} contains no records")
    return problems


def _require(record: dict, key: str, lineno: int) -> str:
    value = record.get(key)
    if not isinstance(value, str) or not value.strip():
        raise DatasetError(f"line {lineno}: missing required field {key!r}")
    return value


def _parse_native(record: dict, lineno: int, default_kind: AnswerKind | None) -> Problem:
    kind_raw = record.get("kind")
    if kind_raw is None:
        if default_kind is None:
            raise DatasetError(f"line {lineno}: missing required field 'kind'")
        kind = default_kind
    else:
        try:
            kind = AnswerKind(kind_raw)
        except ValueError as exc:
            raise DatasetError(f"line {lineno}: unknown answer kind {kind_raw!r}") from exc
    tags = record.get("tags") or {}
    if not isinstance(tags, dict):
        raise DatasetError(f"line {lineno}: 'tags' must be an object")
    return Problem.from_fields(
        id=_require(record, "id", lineno),
        question=_require(record, "question", lineno),
        answer=_require(record, "answer", lineno),
        kind=kind,
        tags={str(k): str(v) for k, v in tags.items()},
    )


_GSM8K_GOLD = re.compile(r"####\s*(.+?)\s*$", re.MULTILINE)


def _parse_gsm8k(record: dict, lineno: int) -> Problem:
    answer_blob = _require(record, "answer", lineno)
    match = _GSM8K_GOLD.search(answer_blob)
    gold = match.group(1) if match else answer_blob.strip()
    return Problem.from_fields(
        id=str(record.get("id") or f"gsm8k-{lineno:05d}"),
        question=_require(record, "question", lineno),
        answer=gold,
        kind=AnswerKind.NUMERIC,
        tags={"dataset": "gsm8k"},
    )


def _parse_aqua(record: dict, lineno: int) -> Problem:
    options = record.get("options")
    if not isinstance(options, list) or not options:
        raise DatasetError(f"line {lineno}: missing required field 'options'")
    question = _require(record, "question", lineno)
    rendered = question + "\nAnswer Choices: " + " ".join(str(o) for o in options)
    return Problem.from_fields(
        id=str(record.get("id") or f"aqua-{lineno:05d}"),
        question=rendered,
        answer=_require(record, "correct", lineno),
        kind=AnswerKind.MULTIPLE_CHOICE,
        tags={"dataset": "aqua"},
    )


# --- transcript persistence -----------------------------------------------------


def save_transcript(transcript: Transcript, path: str | Path) -> None:
    """Write one transcript atomically (write-temp-then-rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = json.dumps(transcript.to_json_dict(), indent=2, ensure_ascii=False) + "\n"
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(payload, encoding="utf-8")
    os.replace(tmp, path)


def load_transcript(path: str | Path) -> Transcript:
    return Transcript.from_json_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# --- evaluation ------------------------------------------------------------------


@dataclass
class ReportRow:
    method: str
    problem_id: str
    final_answer: str | None
    correct: bool
    reasoning_calls: int
    tags: dict[str, str] = field(default_factory=dict)
    error: str | None = None


@dataclass
class BreakdownCell:
    accuracy: float
    mean_n: float
    count: int


@dataclass
class EvalReport:
    method_name: str
    rows: list[ReportRow]
    accuracy: float
    mean_n: float
    breakdowns: dict[str, dict[str, BreakdownCell]]


def build_report(method_name: str, rows: Sequence[ReportRow]) -> EvalReport:
    if not rows:
        raise ValueError("cannot build a report from zero rows")
    ordered = sorted(rows, key=lambda r: r.problem_id)
    accuracy = sum(1 for r in ordered if r.correct) / len(ordered)
    mean_n = sum(r.reasoning_calls for r in ordered) / len(ordered)
    tag_keys = sorted({key for row in ordered for key in row.tags})
    breakdowns = {key: _breakdown_cells(ordered, key) for key in tag_keys}
    return EvalReport(
        method_name=method_name,
        rows=list(ordered),
        accuracy=accuracy,
        mean_n=mean_n,
        breakdowns=breakdowns,
    )


def _breakdown_cells(rows: Sequence[ReportRow], tag_key: str) -> dict[str, BreakdownCell]:
    groups: dict[str, list[ReportRow]] = {}
    for row in rows:
        groups.setdefault(row.tags.get(tag_key, UNTAGGED), []).append(row)
    ordered_values = sorted(v for v in groups if v != UNTAGGED)
    if UNTAGGED in groups:
        ordered_values.append(UNTAGGED)
    return {
        value: BreakdownCell(
            accuracy=sum(1 for r in groups[value] if r.correct) / len(groups[value]),
            mean_n=sum(r.reasoning_calls for r in groups[value]) / len(groups[value]),
            count=len(groups[value]),
        )
        for value in ordered_values
    }


def breakdown_by_tag(report: EvalReport, tag_key: str) -> list[tuple[str, BreakdownCell]]:
    """Accuracy and mean interaction count per tag value, sorted by value
    with untagged rows grouped last. Empty when no row carries the tag."""
    if not any(tag_key in row.tags for row in report.rows):
        return []
    return list(_breakdown_cells(report.rows, tag_key).items())


def score_transcript(transcript: Transcript, problem: Problem, tolerance: float) -> bool:
    final = transcript.final_answer
    if final is None:
        return False
    return answers_equal(final, problem.gold, tolerance)


def _run_method(
    problem: Problem,
    method: str,
    eop_config: EoPConfig,
    sc_config: SCConfig,
    gateway: Backend,
) -> Transcript:
    if method == "cot":
        return run_cot(problem, eop_config, gateway)
    if method == "php":
        return run_php(problem, eop_config, gateway)
    if method == "sc":
        return run_self_consistency(problem, sc_config, eop_config, gateway)
    if method == "eop":
        return run_eop(problem, eop_config, gateway)
    raise ValueError(f"unknown method {method!r}")


def evaluate(
    problems: Sequence[Problem],
    method: str,
    *,
    gateway: Backend,
    run_dir: str | Path,
    eop_config: EoPConfig | None = None,
    sc_config: SCConfig | None = None,
    parallelism: int = 4,
) -> EvalReport:
    """Run a method over a dataset and aggregate the results.

    Every transcript is persisted; transcripts already on disk are reused
    rather than regenerated. Hard per-problem failures become incorrect rows
    annotated with the error (partial transcripts are kept beside the run
    under ``*.partial.json``) and never stop the run.
    """
    if not problems:
        raise ValueError("cannot evaluate an empty problem list")
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    eop_config = eop_config or EoPConfig()
    sc_config = sc_config or SCConfig()
    method_dir = Path(run_dir) / method

    def work(problem: Problem) -> ReportRow:
        path = method_dir / f"{problem.id}.json"
        try:
            if path.exists():
                transcript = load_transcript(path)
            else:
                transcript = _run_method(problem, method, eop_config, sc_config, gateway)
                transcript.correct = score_transcript(transcript, problem, eop_config.numeric_tolerance)
                save_transcript(transcript, path)
            correct = score_transcript(transcript, problem, eop_config.numeric_tolerance)
            final = transcript.final_answer
            return ReportRow(
                method=method,
                problem_id=problem.id,
                final_answer=final.canonical if final is not None else None,
                correct=correct,
                reasoning_calls=transcript.reasoning_calls,
                tags=dict(problem.tags),
            )
        except EngineAbort as exc:
            calls = 0
            if exc.transcript is not None:
                save_transcript(exc.transcript, method_dir / f"{problem.id}.partial.json")
                calls = exc.transcript.reasoning_calls
            return ReportRow(
                method=method,
                problem_id=problem.id,
                final_answer=None,
                correct=False,
                reasoning_calls=calls,
                tags=dict(problem.tags),
                error=str(exc),
            )
        except Exception as exc:  # record-and-continue: one bad problem must not sink the run
            return ReportRow(
                method=method,
                problem_id=problem.id,
                final_answer=None,
                correct=False,
                reasoning_calls=0,
                tags=dict(problem.tags),
                error=f"{type(exc).__name__}: {exc}",
            )

    if parallelism == 1:
        rows = [work(p) for p in problems]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            rows = list(pool.map(work, problems))
    return build_report(method, rows)


def load_run_reports(run_dir: str | Path, tolerance: float = 1e-6) -> list[EvalReport]:
    """Rebuild reports from a run directory's stored transcripts alone.

    Correctness is recomputed from the gold answer embedded in each
    transcript; no backend is touched. Partial transcripts count as failed
    rows.
    """
    run_dir = Path(run_dir)
    if not run_dir.exists():
        raise DatasetError(f"run directory not found: {run_dir}")
    reports = []
    for method_dir in sorted(p for p in run_dir.iterdir() if p.is_dir()):
        method = method_dir.name
        if method not in METHODS:
            continue
        full_paths = sorted(
            p for p in method_dir.glob("*.json") if not p.name.endswith(".partial.json")
        )
        full_ids = {p.name[: -len(".json")] for p in full_paths}
        partial_paths = sorted(
            p
            for p in method_dir.glob("*.partial.json")
            if p.name[: -len(".partial.json")] not in full_ids
        )
        rows = [_row_from_transcript(load_transcript(p), method, tolerance, False) for p in full_paths]
        rows += [_row_from_transcript(load_transcript(p), method, tolerance, True) for p in partial_paths]
        if rows:
            reports.append(build_report(method, rows))
    if not reports:
        raise DatasetError(f"no transcripts found under {run_dir}")
    return reports


def _row_from_transcript(
    transcript: Transcript, method: str, tolerance: float, partial: bool
) -> ReportRow:
    final = transcript.final_answer
    gold_raw = transcript.problem.get("gold")
    kind_raw = transcript.problem.get("kind")
    correct = False
    if not partial and final is not None and gold_raw is not None and kind_raw is not None:
        gold = Answer(kind=AnswerKind(kind_raw), canonical=gold_raw, raw_span=gold_raw)
        correct = answers_equal(final, gold, tolerance)
    return ReportRow(
        method=method,
        problem_id=transcript.problem_id,
        final_answer=final.canonical if final is not None else None,
        correct=correct,
        reasoning_calls=transcript.reasoning_calls,
        tags=dict(transcript.problem.get("tags") or {}),
        error="aborted" if partial else None,
    )


# --- report emission --------------------------------------------------------------

REPORT_SCHEMA_VERSION = "eop-report-v1"


def report_to_dict(report: EvalReport) -> dict:
    return {
        "method_name": report.method_name,
        "problems": len(report.rows),
        "accuracy": report.accuracy,
        "mean_n": report.mean_n,
        "rows": [
            {
                "problem_id": row.problem_id,
                "final_answer": row.final_answer,
                "correct": row.correct,
                "reasoning_calls": row.reasoning_calls,
                "tags": row.tags,
                "error": row.error,
            }
            for row in report.rows
        ],
        "breakdowns": {
            key: {
                value: {"accuracy": cell.accuracy, "mean_n": cell.mean_n, "count": cell.count}
                for value, cell in cells.items()
            }
            for key, cells in report.breakdowns.items()
        },
    }


def render_json(reports: Sequence[EvalReport]) -> str:
    payload = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "reports": [report_to_dict(r) for r in reports],
    }
    return json.dumps(payload, indent=2, ensure_ascii=False) + "\n"


def render_csv(reports: Sequence[EvalReport]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["method", "problem_id", "final_answer", "correct", "reasoning_calls", "error", "tags"])
    for report in reports:
        for row in report.rows:
            writer.writerow(
                [
                    row.method,
                    row.problem_id,
                    "" if row.final_answer is None else row.final_answer,
                    "true" if row.correct else "false",
                    row.reasoning_calls,
                    row.error or "",
                    json.dumps(row.tags, sort_keys=True, ensure_ascii=False),
                ]
            )
    return buffer.getvalue()


def _fmt_pct(value: float) -> str:
    return f"{value * 100:.1f}"


def _fmt_n(value: float) -> str:
    return f"{value:.2f}"


def render_markdown(reports: Sequence[EvalReport], column_tag: str = "dataset") -> str:
    """Comparison tables: methods as rows, tag values as columns, Avg. last."""
    lines = ["# Evaluation report", ""]
    lines.append("| Method | Problems | Accuracy (%) | Mean N |")
    lines.append("|---|---|---|---|")
    for report in reports:
        lines.append(
            f"| {report.method_name} | {len(report.rows)} | "
            f"{_fmt_pct(report.accuracy)} | {_fmt_n(report.mean_n)} |"
        )
    lines.append("")

    columns = sorted(
        {value for report in reports for row in report.rows for value in [row.tags.get(column_tag)] if value}
    )
    if columns:
        lines.extend(_matrix_table(reports, column_tag, columns, "Accuracy (%)", "accuracy", _fmt_pct))
        lines.extend(_matrix_table(reports, column_tag, columns, "Mean interactions (N)", "mean_n", _fmt_n))
    return "\n".join(lines) + "\n"


def _matrix_table(reports, column_tag, columns, title, attr, fmt) -> list[str]:
    lines = [f"## {title} by {column_tag}", ""]
    lines.append("| Method | " + " | ".join(columns) + " | Avg. |")
    lines.append("|" + "---|" * (len(columns) + 2))
    for report in reports:
        cells = report.breakdowns.get(column_tag, {})
        values = []
        row_cells = []
        for column in columns:
            cell = cells.get(column)
            if cell is None:
                row_cells.append("-")
            else:
                row_cells.append(fmt(getattr(cell, attr)))
                values.append(getattr(cell, attr))
        avg = fmt(sum(values) / len(values)) if values else "-"
        lines.append(f"| {report.method_name} | " + " | ".join(row_cells) + f" | {avg} |")
    lines.append("")
    return lines


def render_breakdown_markdown(report: EvalReport, tag_key: str) -> str:
    table = breakdown_by_tag(report, tag_key)
    lines = [f"## {report.method_name}: breakdown by {tag_key}", ""]
    if not table:
        lines.append(f"(no rows tagged {tag_key!r})")
        return "\n".join(lines) + "\n"
    lines.append(f"| {tag_key} | Count | Accuracy (%) | Mean N |")
    lines.append("|---|---|---|---|")
    for value, cell in table:
        lines.append(f"| {value} | {cell.count} | {_fmt_pct(cell.accuracy)} | {_fmt_n(cell.mean_n)} |")
    lines.append("")
    return "\n".join(lines) + "\n"


def emit_report(
    reports: EvalReport | Sequence[EvalReport],
    fmt: str,
    path: str | Path,
    *,
    column_tag: str = "dataset",
) -> Path:
    """Write the report in one of the supported formats and return the path."""
    if isinstance(reports, EvalReport):
        reports = [reports]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "md":
        content = render_markdown(reports, column_tag=column_tag)
    elif fmt == "csv":
        content = render_csv(reports)
    elif fmt == "json":
        content = render_json(reports)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    path.write_text(content, encoding="utf-8")
    return path
