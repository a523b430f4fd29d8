"""Command-line entry point wiring configuration, gateway, methods and harness.

Subcommands:

* ``run``      — evaluate a method over a dataset, writing transcripts and
                 report files under ``{runs_dir}/{run_id}/``.
* ``report``   — re-render reports from stored transcripts; never calls a
                 generation backend.
* ``redefine`` — one-off question redefinition for qualitative inspection.

Settings resolve in precedence order: flags > config file (TOML or JSON) >
environment (``EOP_API_BASE``, ``EOP_API_KEY``) > built-in defaults. Every
default is inspectable via ``eop run --print-config``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .baselines import SCConfig
from .engine import EoPConfig, PromptStyle, TieBreak
from .errors import ConfigurationError, EopError
from .gateway import (
    ENV_API_BASE,
    ENV_API_KEY,
    Backend,
    CachingBackend,
    HttpChatBackend,
    MockBackend,
    MockScript,
    ResponseCache,
)
from .harness import (
    METHODS,
    emit_report,
    evaluate,
    load_dataset,
    load_run_reports,
    render_breakdown_markdown,
    render_markdown,
)
from .redefine import RedefinitionMethod, redefine

log = logging.getLogger("eop")

_RUN_ID_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")

REPORT_FORMATS = ("md", "csv", "json")


class UsageError(Exception):
    """Bad command-line usage; reported through argparse (exit code 2)."""


@dataclass
class RunConfig:
    """Merged view of defaults, config file, environment and flags."""

    dataset: str | None = None
    dataset_format: str = "jsonl"
    method: str = "eop"
    redefine: str = "pec"
    prompt: str = "complex_cot"
    max_iter: int = 8
    numeric_tolerance: float = 1e-6
    tie_break: str = "prefer_org"
    temperature: float = 0.0
    sc_k: int = 4
    sc_temperature: float = 0.8
    model: str = "default"
    max_tokens: int = 1024
    base_url: str | None = None
    api_key: str | None = None
    mock: str | None = None
    run_id: str | None = None
    runs_dir: str = "runs"
    parallelism: int = 4
    out: list[str] = field(default_factory=lambda: list(REPORT_FORMATS))
    assets_dir: str | None = None

    def printable(self) -> dict:
        data = asdict(self)
        if data.get("api_key"):
            data["api_key"] = "***"
        return data


def _load_config_file(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigurationError(f"config file not found: {path}")
    text = p.read_text(encoding="utf-8")
    if p.suffix.lower() == ".toml":
        try:
            import tomllib  # Python >= 3.11
        except ModuleNotFoundError:
            import tomli as tomllib
        try:
            return tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"invalid TOML in {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"invalid JSON in {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"config file {path} must contain an object")
    return data


def resolve_config(args: argparse.Namespace, environ=os.environ) -> RunConfig:
    """Merge defaults, environment, config file and explicit flags."""
    valid = {f.name for f in fields(RunConfig)}
    data = asdict(RunConfig())

    if environ.get(ENV_API_BASE):
        data["base_url"] = environ[ENV_API_BASE]
    if environ.get(ENV_API_KEY):
        data["api_key"] = environ[ENV_API_KEY]

    file_data: dict = {}
    if getattr(args, "config", None):
        file_data = _load_config_file(args.config)
        unknown = sorted(set(file_data) - valid)
        if unknown:
            raise ConfigurationError(f"unknown config file keys: {unknown}")
        data.update(file_data)

    for key, value in vars(args).items():
        if key in valid and value is not None:
            data[key] = value

    cfg = RunConfig(**data)
    if cfg.mock and ("base_url" in file_data or "api_key" in file_data):
        raise ConfigurationError(
            "a mock script and live credentials were both configured; pick one per run"
        )
    if cfg.method not in METHODS:
        raise ConfigurationError(f"unknown method {cfg.method!r}")
    if cfg.run_id is not None and not _RUN_ID_RE.match(cfg.run_id):
        raise ConfigurationError(f"run id {cfg.run_id!r} is not filesystem-safe")
    for fmt in cfg.out:
        if fmt not in REPORT_FORMATS:
            raise ConfigurationError(f"unknown report format {fmt!r}")
    return cfg


def build_eop_config(cfg: RunConfig) -> EoPConfig:
    return EoPConfig(
        redefinition_method=RedefinitionMethod(cfg.redefine),
        base_prompt_style=PromptStyle(cfg.prompt),
        max_iterations=cfg.max_iter,
        numeric_tolerance=cfg.numeric_tolerance,
        tie_break=TieBreak(cfg.tie_break),
        temperature=cfg.temperature,
        model_id=cfg.model,
        max_tokens=cfg.max_tokens,
        assets_dir=cfg.assets_dir,
    )


def build_gateway(cfg: RunConfig, cache_path: Path | None) -> Backend:
    if cfg.mock:
        inner: Backend = MockBackend(MockScript.from_file(cfg.mock))
    elif cfg.base_url:
        inner = HttpChatBackend(cfg.base_url, cfg.api_key)
    else:
        raise ConfigurationError(
            f"no backend configured: pass --mock or set {ENV_API_BASE}"
        )
    if cache_path is None:
        return inner
    return CachingBackend(inner, ResponseCache(cache_path))


def _default_run_id(cfg: RunConfig) -> str:
    stem = re.sub(r"[^A-Za-z0-9._-]", "-", Path(cfg.dataset).stem) or "run"
    return f"{cfg.method}-{stem}"


def cmd_run(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    if args.print_config:
        print(json.dumps(cfg.printable(), indent=2))
        return 0
    if not cfg.dataset:
        raise UsageError("--dataset is required")

    run_id = cfg.run_id or _default_run_id(cfg)
    if not _RUN_ID_RE.match(run_id):
        raise ConfigurationError(f"run id {run_id!r} is not filesystem-safe")
    run_dir = Path(cfg.runs_dir) / run_id

    problems = load_dataset(cfg.dataset, cfg.dataset_format)
    # cache lives beside the method's transcripts: methods sharing a run id
    # must not cross-serve each other, or a scripted mock's per-entry cursor
    # would fall out of step with the iterations that are actually live
    gateway = build_gateway(cfg, run_dir / cfg.method / "cache.jsonl")
    log.info("run %s: %d problems, method=%s", run_id, len(problems), cfg.method)

    report = evaluate(
        problems,
        cfg.method,
        gateway=gateway,
        run_dir=run_dir,
        eop_config=build_eop_config(cfg),
        sc_config=SCConfig(samples_k=cfg.sc_k, temperature=cfg.sc_temperature),
        parallelism=cfg.parallelism,
    )
    for fmt in cfg.out:
        written = emit_report(report, fmt, run_dir / f"report.{fmt}")
        log.info("wrote %s", written)
    failures = sum(1 for row in report.rows if row.error)
    print(
        f"{cfg.method}: {len(report.rows)} problems, "
        f"accuracy={report.accuracy:.3f}, mean_n={report.mean_n:.2f}"
        + (f", {failures} failed" if failures else "")
    )
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    run_dir = Path(args.runs_dir) / args.run_id
    reports = load_run_reports(run_dir, tolerance=args.numeric_tolerance)
    for fmt in args.out or list(REPORT_FORMATS):
        emit_report(reports, fmt, run_dir / f"report.{fmt}")
    output = render_markdown(reports)
    if args.by:
        for report in reports:
            output += "\n" + render_breakdown_markdown(report, args.by)
    print(output, end="")
    return 0


def cmd_redefine(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    question = args.question
    if args.question_file:
        question = Path(args.question_file).read_text(encoding="utf-8").strip()
    if not question:
        raise UsageError("provide --question or --question-file")
    gateway = build_gateway(cfg, None)
    augmented = redefine(
        RedefinitionMethod(cfg.redefine),
        question,
        gateway,
        model_id=cfg.model,
        max_tokens=cfg.max_tokens,
        assets_dir=cfg.assets_dir,
    )
    print(
        json.dumps(
            {
                "method": augmented.method.value,
                "text": augmented.text,
                "premises": list(augmented.premises) if augmented.premises else None,
                "core_question": augmented.core_question,
            },
            indent=2,
            ensure_ascii=False,
        )
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eop", description="Two-branch answer-exchange prompting and evaluation harness"
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_shared(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="TOML or JSON config file")
        p.add_argument("--redefine", choices=["pec", "qr"], default=None, help="redefinition strategy")
        p.add_argument("--prompt", choices=[s.value for s in PromptStyle], default=None)
        p.add_argument("--mock", default=None, help="mock script file (offline backend)")
        p.add_argument("--model", default=None, help="model id sent to the backend")
        p.add_argument("--max-tokens", type=int, dest="max_tokens", default=None)
        p.add_argument("--assets-dir", dest="assets_dir", default=None, help="prompt asset override directory")

    run = sub.add_parser("run", help="evaluate a method over a dataset")
    add_shared(run)
    run.add_argument("--dataset", default=None, help="dataset file (JSON-lines)")
    run.add_argument(
        "--dataset-format", dest="dataset_format", choices=["jsonl", "gsm8k", "aqua"], default=None
    )
    run.add_argument("--method", choices=list(METHODS), default=None)
    run.add_argument("--max-iter", type=int, dest="max_iter", default=None)
    run.add_argument("--temperature", type=float, default=None)
    run.add_argument("--sc-k", type=int, dest="sc_k", default=None)
    run.add_argument("--sc-temperature", type=float, dest="sc_temperature", default=None)
    run.add_argument("--tie-break", dest="tie_break", choices=[t.value for t in TieBreak], default=None)
    run.add_argument("--run-id", dest="run_id", default=None)
    run.add_argument("--runs-dir", dest="runs_dir", default=None)
    run.add_argument("--parallelism", type=int, default=None)
    run.add_argument("--out", action="append", choices=list(REPORT_FORMATS), default=None)
    run.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    run.set_defaults(handler=cmd_run)

    report = sub.add_parser("report", help="re-render reports from stored transcripts")
    report.add_argument("--run-id", dest="run_id", required=True)
    report.add_argument("--runs-dir", dest="runs_dir", default="runs")
    report.add_argument("--by", default=None, help="tag key for a breakdown table")
    report.add_argument("--out", action="append", choices=list(REPORT_FORMATS), default=None)
    report.add_argument("--tolerance", type=float, dest="numeric_tolerance", default=1e-6)
    report.set_defaults(handler=cmd_report)

    redef = sub.add_parser("redefine", help="redefine a single question")
    add_shared(redef)
    redef.add_argument("--question", default=None)
    redef.add_argument("--question-file", dest="question_file", default=None)
    redef.set_defaults(handler=cmd_redefine)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.handler(args)
    except UsageError as exc:
        parser.error(str(exc))  # exits with status 2
        return 2  # unreachable; keeps the signature honest
    except EopError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
