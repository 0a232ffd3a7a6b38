"""End-to-end driver: load, align, generate, refine, write.

Every failure maps to one exit code through the exception hierarchy in
:mod:`threatsva.errors`. The summary record is written on every exit path
past argument validation, except when writing itself is what failed.
"""
from __future__ import annotations

import json
import logging
import shutil
import sys
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import TextIO

from . import __version__
from .alignment import align, classify_design, resolve_threats
from .errors import ConfigError, EmptyTarget, PipelineError, StageWriteError
from .gateway import DEFAULT_API_KEY_ENV, DEFAULT_BASE_URL, GatewayConfig, LlmGateway
from .generation import generate_for_target, load_jsonl, stage_jsonl
from .knowledge import load_knowledge_base
from .refinement import (DETERMINISTIC_TIMESTAMP, RenderOptions, audit_sva_file, llm_polish,
                         render_sva_file, verify_and_filter)
from .rtl_context import load_design

log = logging.getLogger(__name__)

SVA_FILE = "assertions.sva"
REJECTIONS_FILE = "rejections.jsonl"
DIAGNOSTICS_FILE = "diagnostics.jsonl"
SUMMARY_FILE = "summary.jsonl"


@dataclass
class RunConfig:
    design_path: Path
    threat_names: list[str]
    out_dir: Path
    iterations: int = 3
    seed_base: int = 0
    classify_model: str = "gpt-4o"
    generate_model: str = "gpt-5"
    refine_model: str = "gpt-4o"
    base_url: str = DEFAULT_BASE_URL
    api_key_env: str = DEFAULT_API_KEY_ENV
    timeout: float = 120.0
    max_retries: int = 3
    mock_dir: Path | None = None
    intricate_suite: bool = False
    polish: bool = False
    lint_advisory_only: bool = False
    keep_workspace: bool = False
    deterministic: bool = False
    clock_hint: str | None = None
    reset_hint: str | None = None
    top_module: str | None = None
    workers: int = 1

    def validate(self):
        if self.iterations < 1:
            raise ConfigError("--iterations must be >= 1")
        if not [t for t in self.threat_names if t.strip()]:
            raise ConfigError("at least one threat name is required")
        if not self.design_path:
            raise ConfigError("--design is required")
        if self.workers < 1:
            raise ConfigError("--workers must be >= 1")

    def gateway_config(self) -> GatewayConfig:
        return GatewayConfig(
            classify_model=self.classify_model, generate_model=self.generate_model,
            refine_model=self.refine_model, base_url=self.base_url, api_key_env=self.api_key_env,
            seed_base=self.seed_base, timeout=self.timeout, max_retries=self.max_retries,
            mock_dir=Path(self.mock_dir) if self.mock_dir is not None else None,
        )


@dataclass
class RunSummary:
    exit_code: int = 0
    error: str | None = None
    design_id: str | None = None
    category: str | None = None
    threats: list[str] = field(default_factory=list)
    c_target: list[int] = field(default_factory=list)
    raw: int = 0
    deduped: int = 0
    accepted: int = 0
    rejected: int = 0
    per_cwe_accepted: dict[str, int] = field(default_factory=dict)
    unique_cwe: int = 0
    rejection_reasons: dict[str, int] = field(default_factory=dict)
    dropped_rows: dict[str, int] = field(default_factory=dict)
    failed_calls: int = 0
    tables_missing: int = 0
    gateway_calls: int = 0
    polish_requested: bool = False
    polish_used: bool = False
    polish_fallback: str | None = None
    audit_ok: bool | None = None
    outputs: dict[str, str] = field(default_factory=dict)
    workspace: str | None = None
    mode: str = "live"
    timestamp: str = ""
    version: str = __version__

    def to_record(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def summarize(summary: RunSummary, accepted=(), rejected=()) -> RunSummary:
    """Fill the count fields from refinement artifacts."""
    per: dict[int, int] = {}
    for t, _ in accepted:
        per[t.cwe_id] = per.get(t.cwe_id, 0) + 1
    summary.accepted = len(accepted)
    summary.rejected = len(rejected)
    summary.per_cwe_accepted = {str(k): per[k] for k in sorted(per)}
    summary.unique_cwe = len([k for k in per if k > 0])
    reasons: dict[str, int] = {}
    for r in rejected:
        reasons[r.reason] = reasons.get(r.reason, 0) + 1
    summary.rejection_reasons = dict(sorted(reasons.items()))
    return summary


def console_table(summary: RunSummary) -> str:
    rows = [
        ("exit code", summary.exit_code),
        ("category", summary.category or "-"),
        ("threats", ", ".join(summary.threats) or "-"),
        ("C_target", ", ".join(map(str, summary.c_target)) or "-"),
        ("raw / deduped", f"{summary.raw} / {summary.deduped}"),
        ("accepted / rejected", f"{summary.accepted} / {summary.rejected}"),
        ("unique CWE", summary.unique_cwe),
        ("polish", "used" if summary.polish_used else (
            f"fallback ({summary.polish_fallback})" if summary.polish_requested else "off")),
    ]
    for cid, n in summary.per_cwe_accepted.items():
        rows.append((f"  CWE-{cid}" if cid != "0" else "  functional", n))
    if summary.error:
        rows.append(("error", summary.error))
    width = max(len(k) for k, _ in rows)
    line = "+" + "-" * (width + 2) + "+" + "-" * 50 + "+"
    out = [line]
    for k, v in rows:
        out.append(f"| {k.ljust(width)} | {str(v)[:48].ljust(48)} |")
    out.append(line)
    return "\n".join(out)


def _write(path: Path, text: str):
    try:
        path.write_text(text, encoding="utf-8", newline="\n")
    except OSError as exc:
        raise StageWriteError(f"cannot write {path}: {exc}") from exc


def _jsonl(records) -> str:
    return "".join(json.dumps(r, ensure_ascii=False, sort_keys=False) + "\n" for r in records)


def trace_rtl(ctx, stream: TextIO):
    stream.write(f"==== RTL source: {ctx.path or '<text>'} (design id {ctx.design_id}) ====\n")
    stream.write(ctx.source_text)
    if not ctx.source_text.endswith("\n"):
        stream.write("\n")
    stream.write("==== end of RTL source ====\n")


def run(config: RunConfig, gateway: LlmGateway | None = None, trace: TextIO | None = None) -> RunSummary:
    trace = trace if trace is not None else sys.stderr
    summary = RunSummary(mode="mock" if config.mock_dir is not None else "live")
    summary.timestamp = (DETERMINISTIC_TIMESTAMP if config.deterministic
                         else datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"))
    out_dir = Path(config.out_dir)
    workspace: Path | None = None
    write_summary = True
    try:
        config.validate()
        if gateway is None:
            gateway = LlmGateway(config.gateway_config())
        kb = load_knowledge_base()
        ctx = load_design(config.design_path, config.top_module)
        summary.design_id = ctx.design_id
        trace_rtl(ctx, trace)

        threat_names = [t.strip() for t in config.threat_names if t.strip()]
        summary.threats = [t.name for t in resolve_threats(threat_names, kb)]
        category = classify_design(ctx, gateway, kb)
        summary.category = category.name
        target = align(category, threat_names, kb)
        summary.c_target = target.ordered
        log.info("C_struct=%s C_threat=%s C_target=%s", sorted(target.c_struct),
                 sorted(target.c_threat), target.ordered)
        if not target.c_target:
            raise EmptyTarget(f"no CWE is shared by {category.name!r} and {summary.threats}")

        workspace = Path(tempfile.mkdtemp(prefix="threatsva-"))
        raw = generate_for_target(ctx, target, config.iterations, gateway, kb, workers=config.workers)
        summary.raw, summary.deduped = raw.raw_count, len(raw.triplets)
        summary.dropped_rows = dict(sorted(raw.drop_reasons.items()))
        summary.failed_calls, summary.tables_missing = len(raw.failed_calls), raw.tables_missing
        staged = stage_jsonl(raw, workspace)
        candidates = load_jsonl(staged)

        part = verify_and_filter(candidates, ctx, config.clock_hint, config.reset_hint,
                                 config.lint_advisory_only, workers=config.workers)
        summarize(summary, part.accepted, part.rejected)
        text = render_sva_file(part.accepted, ctx, RenderOptions(deterministic=config.deterministic,
                                                                 timestamp=summary.timestamp))
        audit = audit_sva_file(text, ctx)
        summary.audit_ok = audit.ok
        if not audit.ok:
            log.error("self-audit of the rendered file failed: %s", "; ".join(audit.problems))
        if (config.polish or config.intricate_suite) and part.accepted:
            summary.polish_requested = True
            outcome = llm_polish(part.accepted, ctx, gateway, config.intricate_suite, text,
                                 config.clock_hint, config.reset_hint, config.lint_advisory_only)
            summary.polish_used, summary.polish_fallback = outcome.used, outcome.fallback_reason
            text = outcome.text

        try:
            out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StageWriteError(f"cannot create output directory {out_dir}: {exc}") from exc
        paths = {"sva": out_dir / SVA_FILE, "rejections": out_dir / REJECTIONS_FILE,
                 "diagnostics": out_dir / DIAGNOSTICS_FILE}
        _write(paths["sva"], text)
        _write(paths["rejections"], _jsonl(r.to_record() for r in part.rejected))
        diagnostics = [{"cwe_id": t.cwe_id, "scenario": t.scenario, "accepted": True, "lint": rep.to_dict()}
                       for t, rep in part.accepted]
        diagnostics += [{"cwe_id": r.triplet.cwe_id, "scenario": r.triplet.scenario, "accepted": False,
                         "lint": r.report.to_dict() if r.report else None} for r in part.rejected]
        _write(paths["diagnostics"], _jsonl(diagnostics))
        summary.outputs = {k: (p.name if config.deterministic else str(p)) for k, p in paths.items()}
        summary.gateway_calls = gateway.call_count
    except PipelineError as exc:
        summary.exit_code = exc.exit_code
        summary.error = str(exc)
        if isinstance(exc, (ConfigError, StageWriteError)):
            write_summary = False
        log.error("%s", exc)
        if gateway is not None:
            summary.gateway_calls = gateway.call_count
    finally:
        if workspace is not None:
            if config.keep_workspace:
                summary.workspace = None if config.deterministic else str(workspace)
                log.info("workspace kept at %s", workspace)
            else:
                shutil.rmtree(workspace, ignore_errors=True)
    if write_summary:
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            summary.outputs.setdefault("summary", SUMMARY_FILE if config.deterministic
                                       else str(out_dir / SUMMARY_FILE))
            _write(out_dir / SUMMARY_FILE, json.dumps(summary.to_record(), ensure_ascii=False) + "\n")
        except (OSError, StageWriteError) as exc:
            log.error("cannot write summary: %s", exc)
            summary.exit_code = summary.exit_code or StageWriteError.exit_code
    return summary
