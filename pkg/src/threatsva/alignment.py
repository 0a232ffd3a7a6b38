"""Structural classification, threat mapping and their intersection.

C_struct comes from one classification call whose reply is resolved against
the design-category table; C_threat is the union of the named threat rows;
C_target is their intersection, iterated in ascending id order downstream.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

from .errors import ClassificationUnresolvable, NoSuchCategory
from .gateway import GatewayRequest, LlmGateway, derive_seed
from .knowledge import DesignCategory, KnowledgeBase, ThreatClass, load_knowledge_base
from .rtl_context import DesignContext

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TargetWeaknessSet:
    category: DesignCategory
    threats: tuple[ThreatClass, ...]
    c_struct: frozenset[int]
    c_threat: frozenset[int]
    c_target: frozenset[int]
    provenance: dict[int, dict[str, list[str]]] = field(default_factory=dict, compare=False)

    @property
    def ordered(self) -> list[int]:
        return sorted(self.c_target)

    def to_dict(self) -> dict:
        return {
            "category": self.category.name,
            "threats": [t.name for t in self.threats],
            "c_struct": sorted(self.c_struct),
            "c_threat": sorted(self.c_threat),
            "c_target": self.ordered,
            "provenance": {str(k): v for k, v in sorted(self.provenance.items())},
        }


def classification_prompt(ctx: DesignContext, kb: KnowledgeBase) -> str:
    names = "\n".join(f"- {n}" for n in kb.category_names)
    hint = f"\nThe top-level module is `{ctx.top_module_hint}`.\n" if ctx.top_module_hint else ""
    return (
        "Classify the hardware design below into exactly one of these design categories:\n"
        f"{names}\n\n"
        "Infer the top-level module and its hierarchy from the source, then answer with the "
        "category name only, on a single line, spelled as listed.\n"
        f"{hint}\n"
        "RTL source:\n"
        "```systemverilog\n"
        f"{ctx.source_text}\n"
        "```\n"
    )


_DECORATION = re.compile(r"^[\s>*_`#\-\d.)\"']+|[\s*_`\"'.!:;,]+$")
_LEAD_IN = re.compile(r"^(?:category|answer|classification)\s*[:=-]\s*", re.I)


def clean_reply(reply: str) -> str:
    """First non-empty line with markdown decoration and a leading label removed."""
    for line in reply.splitlines():
        line = _DECORATION.sub("", line.strip())
        line = _LEAD_IN.sub("", line)
        line = _DECORATION.sub("", line)
        if line:
            return line
    return ""


def resolve_classification(reply: str, kb: KnowledgeBase) -> DesignCategory:
    cleaned = clean_reply(reply)
    if not cleaned:
        raise ClassificationUnresolvable(reply, NoSuchCategory(reply, None, None, kb.category_names))
    try:
        return kb.lookup_category(cleaned)
    except NoSuchCategory as exc:
        raise ClassificationUnresolvable(reply, exc) from exc


def classify_design(ctx: DesignContext, gateway: LlmGateway, kb: KnowledgeBase | None = None) -> DesignCategory:
    kb = kb or load_knowledge_base()
    req = GatewayRequest(
        stage="classify",
        prompt=classification_prompt(ctx, kb),
        seed=derive_seed(gateway.cfg.seed_base, "classify"),
        index=1,
    )
    reply = gateway.complete(req)
    category = resolve_classification(reply.text, kb)
    log.info("design classified as %r", category.name)
    return category


def resolve_threats(threat_names: list[str], kb: KnowledgeBase) -> tuple[ThreatClass, ...]:
    if not threat_names:
        raise ValueError("at least one threat name is required")
    rows: list[ThreatClass] = []
    for name in threat_names:
        row = kb.lookup_threat(name)
        if row not in rows:
            rows.append(row)
    return tuple(rows)


def map_threats(threat_names: list[str], kb: KnowledgeBase | None = None) -> set[int]:
    kb = kb or load_knowledge_base()
    ids: set[int] = set()
    for row in resolve_threats(threat_names, kb):
        ids.update(row.cwe_ids)
    return ids


def intersect(category: DesignCategory, threat_ids, threats: tuple[ThreatClass, ...] = ()) -> TargetWeaknessSet:
    """C_struct ∩ C_threat. ``threats`` only feeds provenance; when omitted the
    threat side of each provenance record reads ``["<supplied>"]``."""
    c_struct = frozenset(category.cwe_ids)
    c_threat = frozenset(threat_ids)
    c_target = c_struct & c_threat
    provenance = {}
    for cid in sorted(c_target):
        contributing = [t.name for t in threats if cid in t.cwe_ids] or ["<supplied>"]
        provenance[cid] = {"category": [category.name], "threats": contributing}
    return TargetWeaknessSet(
        category=category,
        threats=tuple(threats),
        c_struct=c_struct,
        c_threat=c_threat,
        c_target=c_target,
        provenance=provenance,
    )


def align(category: DesignCategory, threat_names: list[str], kb: KnowledgeBase | None = None) -> TargetWeaknessSet:
    kb = kb or load_knowledge_base()
    threats = resolve_threats(threat_names, kb)
    ids = set().union(*(t.cwe_ids for t in threats))
    return intersect(category, ids, threats)
