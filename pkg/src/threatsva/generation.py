"""Layered prompt construction, N-fold generation, reply-table parsing,
deduplication and JSONL staging of candidate properties."""
from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .alignment import TargetWeaknessSet
from .errors import GatewayError, StageWriteError, TableMissing
from .gateway import GatewayRequest, LlmGateway, derive_seed
from .knowledge import CweEntry, KnowledgeBase, load_knowledge_base
from .rtl_context import DesignContext

log = logging.getLogger(__name__)

TABLE_HEADER = "CWE ID | Security Scenario | NL Security Properties | SVAs"
FUNCTIONAL_TITLE = "Functional"
STAGE_FILE = "raw_properties.jsonl"
RECORD_FIELDS = (
    "cwe_id", "cwe_title", "scenario", "nl_property", "sva", "tags",
    "source_weakness", "iteration_index", "design_id",
)
_HEADER_CELLS = ("cwe id", "security scenario", "nl security properties", "svas")


@lru_cache(maxsize=None)
def asset_text(name: str) -> str:
    return resources.files("threatsva.assets").joinpath(name).read_text(encoding="utf-8")


def rulebook_version() -> str:
    return asset_text("rulebook.txt").splitlines()[0].split()[-1]


ROLE_CONTEXT = (
    "You are an expert hardware security engineer who writes SystemVerilog Assertions for "
    "formal property verification. Produce several distinct attack scenarios and properties "
    "for the weakness below so that coverage is as wide as possible."
)

SCHEMA_INSTRUCTION = (
    "Answer with one markdown table and nothing else. The header row must be exactly:\n"
    f"| {TABLE_HEADER} |\n"
    "Each row holds one property. Put the numeric CWE id in the first column, the attack "
    "scenario in the second, the requirement in plain English in the third and a single SVA "
    "(property declaration plus its labelled assert) in the fourth. Use CWE ID = 0 for "
    "functional rows. Escape any literal pipe inside a cell as \\|."
)


@dataclass(frozen=True)
class PromptSpec:
    role_context: str
    vulnerability_context: str
    design_context: str
    rulebook: str
    table_schema_instruction: str
    functional_pass_instruction: str

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value.strip():
                raise ValueError(f"prompt part {name} is empty")

    def render(self) -> str:
        return "\n\n".join([
            f"## Role\n{self.role_context}",
            f"## Weakness\n{self.vulnerability_context}",
            f"## Rules\n{self.rulebook.rstrip()}",
            "## Design\nInfer the top-level module and its hierarchy from the source below. "
            "It is given verbatim and unabridged.\n"
            f"```systemverilog\n{self.design_context}\n```",
            f"## Output format\n{self.table_schema_instruction}",
            f"## Functional properties\n{self.functional_pass_instruction.rstrip()}",
        ]) + "\n"


def vulnerability_context(entry: CweEntry) -> str:
    lines = [f"CWE-{entry.id}: {entry.title}", "", f"Definition: {entry.definition}"]
    if entry.consequences:
        lines += ["", "Common consequences:"] + [f"- {c}" for c in entry.consequences]
    if entry.examples:
        lines += ["", "Demonstrative examples:"] + [f"- {e}" for e in entry.examples]
    return "\n".join(lines)


def build_hybrid_prompt(ctx: DesignContext, entry: CweEntry) -> PromptSpec:
    if not isinstance(entry, CweEntry):
        raise ValueError("a knowledge-base CweEntry is required; functional rows are never seeded")
    return PromptSpec(
        role_context=ROLE_CONTEXT,
        vulnerability_context=vulnerability_context(entry),
        design_context=ctx.source_text,
        rulebook=asset_text("rulebook.txt"),
        table_schema_instruction=SCHEMA_INSTRUCTION,
        functional_pass_instruction=asset_text("functional_pass.txt"),
    )


@dataclass(frozen=True)
class PropertyTriplet:
    cwe_id: int
    cwe_title: str
    scenario: str
    nl_property: str
    sva: str
    tags: tuple[str, ...] = ()
    source_weakness: int = 0
    iteration_index: int = 1
    design_id: str = ""

    def __post_init__(self):
        if self.cwe_id < 0:
            raise ValueError("cwe_id must be non-negative")
        for name in ("scenario", "nl_property", "sva"):
            if not getattr(self, name).strip():
                raise ValueError(f"triplet field {name} is empty")
        if self.cwe_id == 0 and self.cwe_title != FUNCTIONAL_TITLE:
            raise ValueError("functional rows carry the title 'Functional'")

    @property
    def dedup_key(self) -> tuple[str, str]:
        return (normalize_text(self.scenario), normalize_text(self.sva))

    def to_record(self) -> dict:
        rec = {name: getattr(self, name) for name in RECORD_FIELDS}
        rec["tags"] = list(self.tags)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "PropertyTriplet":
        return cls(**{**{k: rec[k] for k in RECORD_FIELDS}, "tags": tuple(rec["tags"])})


@dataclass(frozen=True)
class DropRecord:
    reason: str  # NonNumericCwe | EmptyCell
    row: str
    source_weakness: int = 0
    iteration_index: int = 0


@dataclass(frozen=True)
class ParseResult:
    triplets: list[PropertyTriplet]
    drops: list[DropRecord]
    notes: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class RawPropertySet:
    triplets: tuple[PropertyTriplet, ...] = ()
    drops: tuple[DropRecord, ...] = ()
    per_weakness_counts: dict[int, int] = field(default_factory=dict)
    raw_count: int = 0
    failed_calls: tuple[str, ...] = ()
    tables_missing: int = 0
    notes: tuple[str, ...] = ()

    @property
    def drop_reasons(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for d in self.drops:
            out[d.reason] = out.get(d.reason, 0) + 1
        return out


def normalize_text(text: str) -> str:
    return " ".join(text.lower().split())


_SPLIT_RE = re.compile(r"(?<!\\)\|(?![-=|])")
_BR_RE = re.compile(r"<br\s*/?>", re.I)
_FENCE_RE = re.compile(r"\A```[A-Za-z0-9_-]*\s*\n?(.*?)\n?\s*```\Z", re.S)


def split_row(line: str) -> list[str]:
    """Split one markdown table row into raw cells.

    A pipe is a delimiter unless escaped or part of ``|->``, ``|=>`` or
    ``||``. The second pipe of ``||`` never splits either.
    """
    body = line.strip()
    if body.startswith("|"):
        body = body[1:]
    if body.endswith("|") and not body.endswith("\\|") and not body.endswith("||"):
        body = body[:-1]
    cells, start = [], 0
    for m in _SPLIT_RE.finditer(body):
        if m.start() > 0 and body[m.start() - 1] == "|":
            continue
        cells.append(body[start:m.start()])
        start = m.end()
    cells.append(body[start:])
    return cells


def _clean_cell(cell: str) -> str:
    return cell.strip().replace("\\|", "|")


def _clean_sva(cell: str) -> str:
    text = _BR_RE.sub("\n", _clean_cell(cell))
    m = _FENCE_RE.match(text)
    if m:
        text = m.group(1)
    text = text.strip()
    while len(text) >= 2 and text.startswith("`") and text.endswith("`"):
        text = text[1:-1].strip()
    return text


def _is_header(cells: list[str]) -> bool:
    norm = tuple(normalize_text(c.strip().strip("*`")) for c in cells)
    return norm == _HEADER_CELLS


def _is_separator(line: str) -> bool:
    return bool(re.fullmatch(r"\s*\|?\s*:?-{2,}:?\s*(\|\s*:?-{2,}:?\s*)*\|?\s*", line))


def parse_reply_table(reply: str, kb: KnowledgeBase | None = None, seed_weakness: int = 0,
                      iteration: int = 1, design_id: str = "") -> ParseResult:
    kb = kb or load_knowledge_base()
    lines = reply.splitlines()
    start = None
    for i, line in enumerate(lines):
        if "|" in line and _is_header(split_row(line)):
            start = i + 1
            break
    if start is None:
        raise TableMissing("reply contains no table with the required four columns")
    if start < len(lines) and _is_separator(lines[start]):
        start += 1
    triplets: list[PropertyTriplet] = []
    drops: list[DropRecord] = []
    notes: list[str] = []
    for line in lines[start:]:
        if not line.strip() or len(split_row(line)) < 2:
            break
        if _is_separator(line):
            continue
        cells = split_row(line)
        if len(cells) > 4:
            cells = cells[:3] + ["|".join(cells[3:])]
        first = _clean_cell(cells[0]).strip("*` ")
        if not re.fullmatch(r"\d+", first):
            drops.append(DropRecord("NonNumericCwe", line, seed_weakness, iteration))
            continue
        if len(cells) < 4:
            drops.append(DropRecord("EmptyCell", line, seed_weakness, iteration))
            continue
        scenario, nl, sva = _clean_cell(cells[1]), _clean_cell(cells[2]), _clean_sva(cells[3])
        if not (scenario and nl and sva):
            drops.append(DropRecord("EmptyCell", line, seed_weakness, iteration))
            continue
        cwe_id = int(first)
        if cwe_id == 0:
            title = FUNCTIONAL_TITLE
        else:
            title = kb.title(cwe_id)
            if title is None:
                title = f"CWE-{cwe_id}"
                notes.append(f"CWE-{cwe_id} is not in the knowledge base; placeholder title used")
        triplets.append(PropertyTriplet(
            cwe_id=cwe_id, cwe_title=title, scenario=scenario, nl_property=nl, sva=sva,
            source_weakness=seed_weakness, iteration_index=iteration, design_id=design_id,
        ))
    return ParseResult(triplets, drops, notes)


def _counts(triplets, weaknesses) -> dict[int, int]:
    counts = {w: 0 for w in weaknesses}
    for t in triplets:
        counts[t.source_weakness] = counts.get(t.source_weakness, 0) + 1
    return counts


def dedup(raw: RawPropertySet) -> RawPropertySet:
    seen: set[tuple[str, str]] = set()
    kept = []
    for t in raw.triplets:
        if t.dedup_key not in seen:
            seen.add(t.dedup_key)
            kept.append(t)
    return replace(raw, triplets=tuple(kept), per_weakness_counts=_counts(kept, raw.per_weakness_counts))


def generate_for_target(ctx: DesignContext, target: TargetWeaknessSet, n: int, gateway: LlmGateway,
                        kb: KnowledgeBase | None = None, workers: int = 1) -> RawPropertySet:
    if n < 1:
        raise ValueError("iterations must be >= 1")
    if not target.c_target:
        raise ValueError("target weakness set is empty")
    kb = kb or load_knowledge_base()
    jobs = []
    for wid in target.ordered:
        prompt = build_hybrid_prompt(ctx, kb.entry(wid)).render()
        for it in range(1, n + 1):
            jobs.append((wid, it, GatewayRequest(
                stage="generate", prompt=prompt,
                seed=derive_seed(gateway.cfg.seed_base, "generate", wid, it),
                index=len(jobs) + 1,
            )))

    def call(job):
        wid, it, req = job
        try:
            return gateway.complete(req).text, None
        except GatewayError as exc:
            return None, exc

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        outcomes = list(pool.map(call, jobs))

    triplets, drops, notes, failed = [], [], [], []
    missing = 0
    last_error = None
    for (wid, it, _), (text, err) in zip(jobs, outcomes):
        if err is not None:
            last_error = err
            failed.append(f"CWE-{wid} iteration {it}: {err}")
            log.warning("generation call for CWE-%d iteration %d failed: %s", wid, it, err)
            continue
        try:
            result = parse_reply_table(text, kb, wid, it, ctx.design_id)
        except TableMissing:
            missing += 1
            log.warning("reply for CWE-%d iteration %d has no property table", wid, it)
            continue
        triplets += result.triplets
        drops += result.drops
        notes += result.notes
    if len(failed) == len(jobs):
        raise type(last_error)(f"all {len(jobs)} generation calls failed; last: {last_error}")
    raw = RawPropertySet(
        triplets=tuple(triplets), drops=tuple(drops),
        per_weakness_counts=_counts(triplets, target.ordered), raw_count=len(triplets),
        failed_calls=tuple(failed), tables_missing=missing, notes=tuple(notes),
    )
    return dedup(raw)


def stage_jsonl(raw: RawPropertySet, workspace: str | Path) -> Path:
    path = Path(workspace) / STAGE_FILE
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for t in raw.triplets:
                fh.write(json.dumps(t.to_record(), ensure_ascii=False) + "\n")
    except OSError as exc:
        raise StageWriteError(f"cannot write staging file {path}: {exc}") from exc
    return path


def load_jsonl(path: str | Path) -> list[PropertyTriplet]:
    with open(path, encoding="utf-8") as fh:
        return [PropertyTriplet.from_record(json.loads(line)) for line in fh if line.strip()]
