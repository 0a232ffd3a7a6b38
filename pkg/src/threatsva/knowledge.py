"""Static CWE knowledge base: weakness metadata plus the design-category and
threat-model mapping tables.

The data ships as line-delimited JSON under ``threatsva/data``. Name lookups
are case/whitespace-normalized and fall back to the nearest name by edit
distance, so ``"Memory Componets"`` still resolves to ``"Memory Components"``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Iterable

from .errors import KnowledgeBaseError, NoSuchCategory, NoSuchThreat

ENTRIES_FILE = "cwe_entries.jsonl"
CATEGORIES_FILE = "design_categories.jsonl"
THREATS_FILE = "threat_classes.jsonl"


@dataclass(frozen=True)
class CweEntry:
    id: int
    title: str
    definition: str
    consequences: tuple[str, ...] = ()
    examples: tuple[str, ...] = ()

    def __post_init__(self):
        if not isinstance(self.id, int) or self.id <= 0:
            raise ValueError(f"CWE id must be a positive integer, got {self.id!r}")
        if not self.title.strip():
            raise ValueError(f"CWE-{self.id} has an empty title")


@dataclass(frozen=True)
class DesignCategory:
    name: str
    cwe_ids: tuple[int, ...]


@dataclass(frozen=True)
class ThreatClass:
    name: str
    cwe_ids: tuple[int, ...]


def normalize_name(text: str) -> str:
    return " ".join(text.lower().split())


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def closest_match(name_raw: str, rows: Iterable[DesignCategory | ThreatClass]):
    """Resolve ``name_raw`` against ``rows``.

    Returns ``(row, None)`` on success or ``(None, (nearest_row, distance))``
    when even the nearest name is farther than ``ceil(len/3)`` edits, where
    ``len`` is the longer of the two normalized names. Ties go to the earlier
    row.
    """
    rows = list(rows)
    needle = normalize_name(name_raw)
    for row in rows:
        if normalize_name(row.name) == needle:
            return row, None
    best, best_d = None, None
    for row in rows:
        d = levenshtein(needle, normalize_name(row.name))
        if best_d is None or d < best_d:
            best, best_d = row, d
    if best is not None:
        bound = math.ceil(max(len(needle), len(normalize_name(best.name))) / 3)
        if best_d <= bound:
            return best, None
    return None, (best, best_d)


@dataclass(frozen=True)
class KnowledgeBase:
    entries: dict[int, CweEntry]
    categories: tuple[DesignCategory, ...]
    threats: tuple[ThreatClass, ...]
    provenance: dict = field(default_factory=dict)

    def entry(self, cwe_id: int) -> CweEntry | None:
        return self.entries.get(cwe_id)

    def title(self, cwe_id: int) -> str | None:
        e = self.entries.get(cwe_id)
        return e.title if e else None

    @property
    def category_names(self) -> list[str]:
        return [c.name for c in self.categories]

    @property
    def threat_names(self) -> list[str]:
        return [t.name for t in self.threats]

    def lookup_category(self, name_raw: str) -> DesignCategory:
        if not name_raw or not name_raw.strip():
            raise ValueError("category name must be non-empty")
        row, miss = closest_match(name_raw, self.categories)
        if row is None:
            nearest, dist = miss
            raise NoSuchCategory(name_raw, nearest.name if nearest else None, dist, self.category_names)
        return row

    def lookup_threat(self, name_raw: str) -> ThreatClass:
        if not name_raw or not name_raw.strip():
            raise ValueError("threat name must be non-empty")
        row, miss = closest_match(name_raw, self.threats)
        if row is None:
            nearest, dist = miss
            raise NoSuchThreat(name_raw, nearest.name if nearest else None, dist, self.threat_names)
        return row

    def referenced_ids(self) -> set[int]:
        ids: set[int] = set()
        for row in (*self.categories, *self.threats):
            ids.update(row.cwe_ids)
        return ids


def _read_jsonl(name: str) -> list[dict]:
    try:
        text = resources.files("threatsva.data").joinpath(name).read_text(encoding="utf-8")
    except (FileNotFoundError, ModuleNotFoundError, OSError) as exc:
        raise KnowledgeBaseError(f"embedded data file {name} is missing") from exc
    records = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise KnowledgeBaseError(f"{name}:{lineno}: corrupt record") from exc
    return records


def _rows(records: list[dict], cls, name: str):
    rows = []
    for rec in records:
        try:
            ids = tuple(int(i) for i in rec["cwe_ids"])
            row = cls(name=str(rec["name"]), cwe_ids=ids)
        except (KeyError, TypeError, ValueError) as exc:
            raise KnowledgeBaseError(f"{name}: malformed row {rec!r}") from exc
        if not row.cwe_ids:
            raise KnowledgeBaseError(f"{name}: row {row.name!r} has no CWE ids")
        rows.append(row)
    return tuple(rows)


@lru_cache(maxsize=1)
def load_knowledge_base() -> KnowledgeBase:
    raw_entries = _read_jsonl(ENTRIES_FILE)
    provenance: dict = {}
    entries: dict[int, CweEntry] = {}
    for rec in raw_entries:
        if "provenance" in rec:
            provenance = rec["provenance"]
            continue
        try:
            entry = CweEntry(
                id=int(rec["id"]),
                title=rec["title"],
                definition=rec["definition"],
                consequences=tuple(rec.get("consequences", ())),
                examples=tuple(rec.get("examples", ())),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise KnowledgeBaseError(f"{ENTRIES_FILE}: malformed entry {rec!r}") from exc
        if entry.id in entries:
            raise KnowledgeBaseError(f"{ENTRIES_FILE}: duplicate CWE-{entry.id}")
        entries[entry.id] = entry

    kb = KnowledgeBase(
        entries=entries,
        categories=_rows(_read_jsonl(CATEGORIES_FILE), DesignCategory, CATEGORIES_FILE),
        threats=_rows(_read_jsonl(THREATS_FILE), ThreatClass, THREATS_FILE),
        provenance=provenance,
    )
    if len(kb.categories) != 13 or len(kb.threats) != 8:
        raise KnowledgeBaseError(
            f"expected 13 categories and 8 threat classes, found {len(kb.categories)}/{len(kb.threats)}"
        )
    unresolved = kb.referenced_ids() - set(entries)
    if unresolved:
        raise KnowledgeBaseError(f"mapping tables reference unknown CWE ids {sorted(unresolved)}")
    return kb
