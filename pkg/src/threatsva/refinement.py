"""Grounding verification, filtering and ``.sva`` emission.

``verify_and_filter`` partitions candidates into accepted and rejected.
``render_sva_file`` is the reference emitter: deterministic, template based,
and checked afterwards by :func:`audit_sva_file`. ``llm_polish`` asks the
refinement model for a nicer file but only keeps it when every assertion in
it passes the same gates the deterministic path applies.
"""
from __future__ import annotations

import ast
import logging
import operator
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import __version__
from .errors import GatewayError, LintUnparseable
from .gateway import GatewayRequest, LlmGateway, derive_seed
from .generation import FUNCTIONAL_TITLE, PropertyTriplet, RawPropertySet
from .lexer import KEYWORDS, Token, literal_value, tokenize
from .rtl_context import DesignContext, contains_all, scan_design
from .sva_lint import LintReport, derive_tags, find_assertions, lint

log = logging.getLogger(__name__)

STANDARD_MACROS = frozenset({"__FILE__", "__LINE__"})
TIMESCALE = "`timescale 1ns/1ps"
DETERMINISTIC_TIMESTAMP = "1970-01-01T00:00:00Z"
INTRICATE_REQUEST = (
    "Synthesize an intricate property suite of 14 to 20 properties. At least six of them must "
    "have multi-cycle or cross-module dependencies. Group them into sections and add cover "
    "property blocks for legal sequences where useful."
)

MISSING_IDENTIFIER = "MissingIdentifier"
UNDEFINED_MACRO = "UndefinedMacro"
LINT_MANDATORY_FAIL = "LintMandatoryFail"


@dataclass(frozen=True)
class Rejection:
    triplet: PropertyTriplet
    reason: str
    names: tuple[str, ...] = ()
    report: LintReport | None = field(default=None, compare=False)

    def to_record(self) -> dict:
        return {"triplet": self.triplet.to_record(), "reason": self.reason, "names": list(self.names)}


@dataclass(frozen=True)
class Partition:
    accepted: tuple[tuple[PropertyTriplet, LintReport], ...]
    rejected: tuple[Rejection, ...]


@dataclass(frozen=True)
class PolishOutcome:
    used: bool
    text: str
    fallback_reason: str | None = None


@dataclass(frozen=True)
class RefinedSuite:
    accepted: tuple[tuple[PropertyTriplet, LintReport], ...]
    rejected: tuple[Rejection, ...]
    sva_file_text: str
    output_path: Path | None = None
    polish: PolishOutcome | None = None


@dataclass(frozen=True)
class RenderOptions:
    deterministic: bool = False
    timestamp: str | None = None
    tool_name: str = "threatsva"


# -- verification ----------------------------------------------------------

def grounding_names(report: LintReport) -> list[str]:
    return [n for n in report.referenced_identifiers if n not in report.local_names]


def check_candidate(triplet: PropertyTriplet, ctx: DesignContext, clock_hint: str | None = None,
                    reset_hint: str | None = None, lint_advisory_only: bool = False):
    """Returns ``(report, None)`` when accepted or ``(report, Rejection)``."""
    report = lint(triplet.sva, clock_hint, reset_hint)
    verdict = contains_all(ctx.identifiers, grounding_names(report))
    if not verdict.ok:
        return report, Rejection(triplet, MISSING_IDENTIFIER, verdict.missing, report)
    undefined = tuple(dict.fromkeys(
        m for m in report.macro_uses if m not in ctx.identifiers.macro_names and m not in STANDARD_MACROS
    ))
    if undefined:
        return report, Rejection(triplet, UNDEFINED_MACRO, undefined, report)
    if report.unparseable or (not lint_advisory_only and not report.passed_all_mandatory):
        return report, Rejection(triplet, LINT_MANDATORY_FAIL, report.failed_rules, report)
    return report, None


def verify_and_filter(raw: RawPropertySet | list[PropertyTriplet], ctx: DesignContext,
                      clock_hint: str | None = None, reset_hint: str | None = None,
                      lint_advisory_only: bool = False, workers: int = 1) -> Partition:
    triplets = list(raw.triplets if isinstance(raw, RawPropertySet) else raw)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(
            lambda t: check_candidate(t, ctx, clock_hint, reset_hint, lint_advisory_only), triplets
        ))
    accepted, rejected = [], []
    for t, (report, rejection) in zip(triplets, results):
        if rejection is None:
            accepted.append((replace(t, tags=tuple(derive_tags(report))), report))
        else:
            rejected.append(rejection)
    return Partition(tuple(accepted), tuple(rejected))


# -- wrapper inference -----------------------------------------------------

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.FloorDiv: operator.floordiv, ast.Div: operator.floordiv, ast.Mod: operator.mod,
           ast.Pow: operator.pow}


def _eval_int(expr: str, params: dict[str, int]) -> int | None:
    toks = tokenize(expr)
    parts = []
    for t in toks:
        if t.kind == "number":
            v = literal_value(t.text)
            if v is None:
                return None
            parts.append(str(v))
        elif t.kind == "ident":
            if t.text not in params or params[t.text] is None:
                return None
            parts.append(str(params[t.text]))
        elif t.kind == "op" and t.text in ("+", "-", "*", "/", "%", "(", ")", "**"):
            parts.append(t.text)
        else:
            return None

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, int):
            return node.value
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        raise ValueError("unsupported")

    try:
        return ev(ast.parse(" ".join(parts), mode="eval"))
    except (SyntaxError, ValueError, ZeroDivisionError, TypeError):
        return None


_DIM_RE = re.compile(r"\[([^\[\]:]+):([^\[\]]+)\]")


def static_width(type_text: str, params: dict[str, int]) -> int | None:
    stripped = re.sub(r"\b(input|output|inout|ref|wire|reg|logic|bit|var|signed|unsigned)\b", "", type_text).strip()
    dims = _DIM_RE.findall(stripped)
    rest = _DIM_RE.sub("", stripped).strip()
    if rest:
        return {"int": 32, "integer": 32, "byte": 8, "shortint": 16, "longint": 64}.get(rest.split()[0])
    width = 1
    for msb, lsb in dims:
        a, b = _eval_int(msb, params), _eval_int(lsb, params)
        if a is None or b is None:
            return None
        width *= abs(a - b) + 1
    return width


def wrapper_type(type_text: str) -> str:
    text = re.sub(r"\b(input|output|inout|ref|var)\b", "", type_text)
    text = re.sub(r"\b(wire|reg)\b", "logic", text)
    text = " ".join(text.split())
    if not text or text.startswith("["):
        text = f"logic {text}".strip()
    if text in ("signed", "unsigned") or text.startswith(("signed ", "unsigned ")):
        text = f"logic {text}"
    return text


def _idents(text: str) -> list[str]:
    return [t.text for t in tokenize(text) if t.kind == "ident" and t.text not in KEYWORDS]


def _macros(text: str) -> list[str]:
    return [t.text for t in tokenize(text) if t.kind == "macro"]


@dataclass
class _WrapperPlan:
    ports: list[tuple[str, str, str, str]] = field(default_factory=list)  # name, type, unpacked, comment
    params: list[str] = field(default_factory=list)
    typedefs: list[str] = field(default_factory=list)
    macros: list[str] = field(default_factory=list)
    declared: set[str] = field(default_factory=set)


def _root_names(sva: str) -> list[str]:
    """Identifiers not reached through a ``.`` member access or ``::``."""
    toks = tokenize(sva)
    out = []
    for k, t in enumerate(toks):
        if t.kind != "ident" or t.text in KEYWORDS:
            continue
        prev = toks[k - 1] if k else None
        if prev is not None and prev.kind == "op" and prev.text in (".", "::"):
            continue
        if t.text not in out:
            out.append(t.text)
    return out


def plan_wrapper(accepted, ctx: DesignContext) -> _WrapperPlan:
    u, syms = ctx.identifiers, ctx.symbols
    plan = _WrapperPlan()
    params: dict[str, int | None] = {}
    for name, decls in syms.declarations.items():
        for d in decls:
            if d.kind == "parameters" and d.default:
                params.setdefault(name, None)
    # Resolve parameter values iteratively so params defined from params work.
    for _ in range(4):
        for name, decls in syms.declarations.items():
            for d in decls:
                if d.kind == "parameters" and d.default and params.get(name) is None:
                    params[name] = _eval_int(d.default, params)

    need_params: set[str] = set()
    need_types: set[str] = set()
    need_macros: set[str] = set()
    signal_names: list[str] = []
    for triplet, report in accepted:
        local = report.local_names
        for name in _root_names(triplet.sva):
            if name in local:
                continue
            if name in u.parameters:
                need_params.add(name)
            elif name in u.typedef_names:
                need_types.add(name)
            elif name in u.enum_labels:
                if name in syms.label_owner:
                    need_types.add(syms.label_owner[name])
            elif name in u.ports or name in u.nets_and_regs or name in u.submodule_port_names:
                if name not in signal_names:
                    signal_names.append(name)
        need_macros.update(m for m in report.macro_uses if m in u.macro_names)

    ports = []
    for name in signal_names:
        decls = [d for d in syms.declarations.get(name, ()) if d.kind in ("ports", "nets_and_regs")]
        typed = [d for d in decls if d.type_text.strip()]
        comment = ""
        if not typed:
            ports.append((name, "logic", "", "width unknown, defaulted to 1 bit"))
            continue
        choice = typed[0]
        distinct = list(dict.fromkeys(wrapper_type(d.type_text) for d in typed))
        if len(distinct) > 1:
            widths = [(static_width(d.type_text, params), k) for k, d in enumerate(typed)]
            best = max(widths, key=lambda w: (w[0] if w[0] is not None else -1, -w[1]))
            choice = typed[best[1]]
            comment = f"width conflict across declarations ({' / '.join(distinct)}); widest kept"
        if choice.user_type:
            need_types.add(choice.user_type.split("::")[-1])
        for ident in _idents(choice.type_text + " " + choice.unpacked):
            if ident in u.parameters:
                need_params.add(ident)
            elif ident in u.typedef_names:
                need_types.add(ident)
        need_macros.update(m for m in _macros(choice.type_text + choice.unpacked) if m in u.macro_names)
        ports.append((name, wrapper_type(choice.type_text), choice.unpacked.strip(), comment))

    # Close typedef dependencies over their own source text.
    pending = list(need_types)
    while pending:
        tname = pending.pop()
        span = syms.typedef_spans.get(tname)
        if span is None:
            continue
        text = ctx.source_text[span[0]:span[1]]
        for ident in _idents(text):
            if ident in u.typedef_names and ident not in need_types and ident != tname:
                need_types.add(ident)
                pending.append(ident)
            elif ident in u.parameters:
                need_params.add(ident)
        need_macros.update(m for m in _macros(text) if m in u.macro_names)

    # Close parameter dependencies over their defaults and types.
    pending = list(need_params)
    while pending:
        for d in syms.declarations.get(pending.pop(), ()):
            if d.kind != "parameters":
                continue
            for ident in _idents(d.type_text + " " + d.default):
                if ident in u.parameters and ident not in need_params:
                    need_params.add(ident)
                    pending.append(ident)
            need_macros.update(m for m in _macros(d.type_text + d.default) if m in u.macro_names)

    pending = list(need_macros)
    while pending:
        span = syms.macro_spans.get(pending.pop())
        if span is None:
            continue
        for m in _macros(ctx.source_text[span[0]:span[1]]):
            if m in u.macro_names and m not in need_macros:
                need_macros.add(m)
                pending.append(m)

    def first_span(name, kind):
        for d in syms.declarations.get(name, ()):
            if d.kind == kind and d.span:
                return d.span[0]
        return 1 << 60

    for name in sorted(need_params, key=lambda n: (first_span(n, "parameters"), n)):
        d = next(d for d in syms.declarations[name] if d.kind == "parameters")
        type_part = f"{d.type_text} " if d.type_text else ""
        plan.params.append(f"parameter {type_part}{name} = {d.default or '0'}")
        plan.declared.add(name)
    for tname in sorted(need_types, key=lambda n: (syms.typedef_spans.get(n, (1 << 60,))[0], n)):
        span = syms.typedef_spans.get(tname)
        if span:
            plan.typedefs.append(ctx.source_text[span[0]:span[1]])
            plan.declared.add(tname)
            plan.declared.update(label for label, owner in syms.label_owner.items() if owner == tname)
    for mname in sorted(need_macros, key=lambda n: (syms.macro_spans.get(n, (1 << 60,))[0], n)):
        span = syms.macro_spans.get(mname)
        if span:
            plan.macros.append(ctx.source_text[span[0]:span[1]].rstrip())
            plan.declared.add(mname)
    plan.ports = ports
    plan.declared.update(p[0] for p in ports)
    return plan


# -- assertion block rendering --------------------------------------------

def _one_line(text: str) -> str:
    return " ".join(text.split())


def _sv_string(text: str) -> str:
    text = _one_line(text).replace("\\", "\\\\").replace('"', '\\"').replace("%", "%%")
    return text


def _rewrite(text: str, toks: list[Token], renames: dict[str, str]) -> str:
    if not renames:
        return text
    out, pos = [], 0
    for t in toks:
        if t.kind == "ident" and t.text in renames:
            out.append(text[pos:t.start])
            out.append(renames[t.text])
            pos = t.end
    out.append(text[pos:])
    return "".join(out)


def _reindent(text: str, indent: str = "  ") -> list[str]:
    lines = [ln.rstrip() for ln in text.strip("\n").splitlines()]
    if not lines:
        return []
    tail = [ln for ln in lines[1:] if ln.strip()]
    common = min((len(ln) - len(ln.lstrip()) for ln in tail), default=0)
    out = [indent + lines[0].strip()]
    for ln in lines[1:]:
        out.append(indent + ln[common:] if ln.strip() else "")
    return out


_ONE_LINE_DECL = re.compile(
    r"((?:property|sequence)\s+\w+\s*(?:\([^;]*\))?\s*;)\s*(.*?)\s*((?:endproperty|endsequence)(?:\s*:\s*\w+)?)\s*\Z",
    re.S,
)


def _layout_declaration(text: str) -> str:
    """Spread a one-line declaration over header, body and end lines."""
    if "\n" in text.strip():
        return text
    m = _ONE_LINE_DECL.match(text.strip())
    if not m:
        return text
    return f"{m.group(1)}\n  {m.group(2)}\n{m.group(3)}"


def _unique(name: str, used: set[str]) -> str:
    if name not in used:
        used.add(name)
        return name
    k = 2
    while f"{name}_{k}" in used:
        k += 1
    used.add(f"{name}_{k}")
    return f"{name}_{k}"


def render_block(index: int, triplet: PropertyTriplet, used: set[str]) -> tuple[list[str], list[str]]:
    """Lines for one accepted candidate plus the property names it asserts."""
    sva = triplet.sva
    toks = tokenize(sva)
    try:
        shapes = find_assertions(toks)
    except LintUnparseable:
        shapes = []
    tag = f"cwe{triplet.cwe_id}" if triplet.cwe_id else "func"
    renames: dict[str, str] = {}
    for s in shapes:
        if s.name and s.name not in renames:
            new = _unique(s.name, used)
            if new != s.name:
                renames[s.name] = new
    text = _rewrite(sva, toks, renames)
    toks = tokenize(text)
    shapes = find_assertions(toks) if shapes else []

    decls = [s for s in shapes if s.is_declaration]
    declared_props = {s.name for s in decls if s.kind == "property"}
    lines: list[str] = []
    asserted: list[str] = []
    for s in decls:
        lines += _reindent(_layout_declaration(text[s.span[0]:s.span[1]]))

    def body_text(s):
        return text[toks[s.body[0]].start:toks[s.body[1] - 1].end] if s.body[1] > s.body[0] else ""

    def emit(verb: str, label: str | None, prop: str):
        stmt_label = label or _unique("a_" + (prop[2:] if prop.startswith("p_") else prop), used)
        if verb == "cover":
            lines.append(f"  {stmt_label}: cover property ({prop});")
            return
        msg = _sv_string(f"{prop} failed: " + (
            f"CWE-{triplet.cwe_id} {triplet.cwe_title}" if triplet.cwe_id else "functional property"))
        lines.append(f"  {stmt_label}: {verb} property ({prop})")
        lines.append(f'    else $error("{msg}");')
        asserted.append(prop)

    statements = [s for s in shapes if not s.is_declaration]
    referenced = set()
    for s in statements:
        body = body_text(s).strip()
        verb = "assume" if s.kind in ("assume", "restrict") else s.kind
        if body in declared_props:
            referenced.add(body)
            emit(verb, s.name, body)
            continue
        stem = (s.name[2:] if s.name.startswith("a_") else s.name) if s.name else f"{tag}_{index}"
        prop = _unique(f"p_{stem}", used)
        lines += _reindent(f"property {prop};\n  {body};\nendproperty")
        emit(verb, s.name, prop)
    for s in decls:
        if s.kind == "property" and s.name not in referenced:
            emit("assert", None, s.name)
    if not shapes:
        prop = _unique(f"p_{tag}_{index}", used)
        lines += _reindent(f"property {prop};\n  {sva.strip().rstrip(';')};\nendproperty")
        emit("assert", None, prop)
    return lines, asserted


def _section_order(accepted):
    sections: dict[int, list] = {}
    for item in accepted:
        sections.setdefault(item[0].cwe_id, []).append(item)
    ids = sorted(k for k in sections if k > 0)
    if 0 in sections:
        ids.append(0)
    return [(cid, sections[cid]) for cid in ids]


def render_sva_file(accepted, ctx: DesignContext, options: RenderOptions | None = None) -> str:
    options = options or RenderOptions()
    if options.deterministic:
        stamp = DETERMINISTIC_TIMESTAMP
    else:
        from datetime import datetime, timezone
        stamp = options.timestamp or datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    accepted = list(accepted)
    plan = plan_wrapper(accepted, ctx)
    wrapper = f"{ctx.top_module}_sva"
    lines = [
        TIMESCALE,
        "// " + "=" * 70,
        f"// Security assertions for module {ctx.top_module}",
        f"// Generated by {options.tool_name} {__version__}",
        f"// Design id: {ctx.design_id}",
        f"// Generated at: {stamp}",
        f"// Accepted assertions: {len(accepted)}",
        "// " + "=" * 70,
    ]
    if not accepted:
        lines += ["// WARNING: no candidate survived refinement; this file contains no assertions."]
    lines.append("")
    if plan.macros:
        lines += ["// Macros copied from the design", *plan.macros, ""]
    if plan.typedefs:
        lines.append("// Types copied from the design")
        for td in plan.typedefs:
            lines += [ln.rstrip() for ln in td.splitlines()]
        lines.append("")
    header = f"module {wrapper}"
    if plan.params:
        header += " #(\n" + ",\n".join(f"  {p}" for p in plan.params) + "\n)"
    if plan.ports:
        port_lines = []
        for k, (name, typ, unpacked, comment) in enumerate(plan.ports):
            sep = "," if k < len(plan.ports) - 1 else ""
            decl = f"  input {typ} {name}{(' ' + unpacked) if unpacked else ''}{sep}"
            port_lines.append(decl + (f"  // {comment}" if comment else ""))
        header += " (\n" + "\n".join(port_lines) + "\n);"
    else:
        header += ";"
    lines += [header, ""]

    used = set(plan.declared) | set(ctx.identifiers.flat())
    block = 0
    for cid, items in _section_order(accepted):
        title = f"CWE-{cid}: {items[0][0].cwe_title}" if cid else FUNCTIONAL_TITLE
        lines += ["  // " + "-" * 68, f"  // Section {title}", "  // " + "-" * 68, ""]
        for triplet, _ in items:
            block += 1
            body, _props = render_block(block, triplet, used)
            lines.append(f"  // Assertion {block}")
            lines.append(f"  // Scenario: {_one_line(triplet.scenario)}")
            lines.append(f"  // Property: {_one_line(triplet.nl_property)}")
            if triplet.tags:
                lines.append(f"  // Tags: {', '.join(triplet.tags)}")
            lines += body
            lines.append("")
    lines.append(f"endmodule : {wrapper}")
    return "\n".join(lines) + "\n"


# -- self-audit ------------------------------------------------------------

@dataclass(frozen=True)
class AuditResult:
    ok: bool
    stray: tuple[str, ...] = ()
    undefined_macros: tuple[str, ...] = ()
    lint_failures: tuple[str, ...] = ()
    assertion_count: int = 0
    problems: tuple[str, ...] = ()


def audit_sva_file(text: str, ctx: DesignContext, allow_wrapper: bool = True,
                   check_lint: bool = False, clock_hint: str | None = None,
                   reset_hint: str | None = None) -> AuditResult:
    """Re-lex an emitted file and check every assertion body.

    Identifiers must come from Signals(D), from names the file's own
    property/sequence declarations and labels introduce, or (only when
    ``allow_wrapper``) from names the wrapper module declares.
    """
    problems = []
    toks = tokenize(text)
    try:
        shapes = find_assertions(toks)
    except LintUnparseable as exc:
        return AuditResult(False, problems=(f"unparseable: {exc}",))
    allowed = set(ctx.identifiers.flat())
    if allow_wrapper:
        wrapper_universe, _ = scan_design(text)
        allowed |= wrapper_universe.flat()
    own = {s.name for s in shapes if s.name}
    allowed |= own
    defined_macros = set(ctx.identifiers.macro_names) | STANDARD_MACROS
    stray: list[str] = []
    undefined: list[str] = []
    lint_fail: list[str] = []
    decl_text = {s.name: text[s.span[0]:s.span[1]] for s in shapes if s.kind == "property"}
    count = 0
    for s in shapes:
        chunk = text[s.span[0]:s.span[1]]
        report = lint(chunk, clock_hint, reset_hint)
        for name in grounding_names(report):
            if name not in allowed and name not in stray:
                stray.append(name)
        for m in report.macro_uses:
            if m not in defined_macros and m not in undefined:
                undefined.append(m)
        if s.kind in ("assert", "assume", "restrict"):
            count += 1
            if check_lint:
                inner = text[toks[s.body[0]].start:toks[s.body[1] - 1].end].strip() if s.body[1] > s.body[0] else ""
                full = (decl_text[inner] + "\n" + chunk) if inner in decl_text else chunk
                target = lint(full, clock_hint, reset_hint)
                if not target.passed_all_mandatory:
                    lint_fail.append(f"{s.name or inner}: {','.join(target.failed_rules)}")
    if stray:
        problems.append(f"identifiers outside the design: {', '.join(stray)}")
    if undefined:
        problems.append(f"undefined macros: {', '.join(undefined)}")
    if lint_fail:
        problems.append(f"mandatory lint failures: {'; '.join(lint_fail)}")
    return AuditResult(not problems, tuple(stray), tuple(undefined), tuple(lint_fail), count, tuple(problems))


# -- optional LLM polish ---------------------------------------------------

_FENCE_OPEN = re.compile(r"^[ \t]*```[ \t]*([A-Za-z0-9_+-]*)[ \t]*$", re.M)


def extract_fenced_blocks(reply: str) -> list[tuple[str, str]]:
    """All fenced code blocks as ``(label, body)``; an unclosed fence counts
    as a block running to the end of the reply."""
    blocks = []
    lines = reply.splitlines()
    i = 0
    while i < len(lines):
        m = _FENCE_OPEN.match(lines[i])
        if not m:
            i += 1
            continue
        label = m.group(1)
        j = i + 1
        while j < len(lines) and lines[j].strip() != "```":
            j += 1
        blocks.append((label, "\n".join(lines[i + 1:j])))
        i = j + 1
    return blocks


def polish_prompt(accepted, ctx: DesignContext, intricate: bool) -> str:
    parts = [
        "Rewrite the validated assertions below into one clean, compilable standalone .sva file.",
        "Requirements: begin with a `timescale directive; add a file header; declare a wrapper "
        "module whose inputs are the design signals the assertions use (with typedefs and enums "
        "as needed); group assertions into sections with scenario and property comments; give "
        "every assertion a label and a meaningful $error message; include any required macros.",
        "Use only identifiers that exist in the RTL. Return exactly one fenced code block "
        "labelled systemverilog and nothing else.",
    ]
    if intricate:
        parts.append(INTRICATE_REQUEST)
    parts.append("Validated assertions:")
    for k, (t, _) in enumerate(accepted, 1):
        parts.append(f"-- {k}. CWE-{t.cwe_id} ({t.cwe_title})\n-- Scenario: {_one_line(t.scenario)}\n"
                     f"-- Property: {_one_line(t.nl_property)}\n{t.sva.strip()}")
    parts.append(f"RTL source:\n```systemverilog\n{ctx.source_text}\n```")
    return "\n\n".join(parts) + "\n"


def validate_polish(reply: str, ctx: DesignContext, expect_assertions: bool = True,
                    clock_hint: str | None = None, reset_hint: str | None = None,
                    lint_advisory_only: bool = False) -> tuple[str | None, str | None]:
    """Returns ``(file_text, None)`` when the reply is acceptable, otherwise
    ``(None, reason)``."""
    blocks = extract_fenced_blocks(reply)
    if len(blocks) != 1:
        return None, f"expected exactly one fenced code block, found {len(blocks)}"
    label, body = blocks[0]
    if label != "systemverilog":
        return None, f"fenced block is labelled {label!r}, not 'systemverilog'"
    text = body.strip("\n") + "\n"
    first = next((ln.strip() for ln in text.splitlines() if ln.strip()), "")
    if not first.startswith("`timescale"):
        return None, "polished file does not begin with a timescale directive"
    audit = audit_sva_file(text, ctx, allow_wrapper=False, check_lint=not lint_advisory_only,
                           clock_hint=clock_hint, reset_hint=reset_hint)
    if not audit.ok:
        return None, "; ".join(audit.problems)
    if expect_assertions and audit.assertion_count == 0:
        return None, "polished file contains no assertions"
    return text, None


def llm_polish(accepted, ctx: DesignContext, gateway: LlmGateway, intricate: bool,
               fallback_text: str, clock_hint: str | None = None, reset_hint: str | None = None,
               lint_advisory_only: bool = False) -> PolishOutcome:
    accepted = list(accepted)
    req = GatewayRequest(
        stage="refine", prompt=polish_prompt(accepted, ctx, intricate),
        seed=derive_seed(gateway.cfg.seed_base, "refine"), index=1,
    )
    try:
        reply = gateway.complete(req).text
    except GatewayError as exc:
        log.warning("polish call failed, keeping deterministic file: %s", exc)
        return PolishOutcome(False, fallback_text, f"gateway error: {exc}")
    text, reason = validate_polish(reply, ctx, bool(accepted), clock_hint, reset_hint, lint_advisory_only)
    if text is None:
        log.warning("polished file rejected, keeping deterministic file: %s", reason)
        return PolishOutcome(False, fallback_text, reason)
    return PolishOutcome(True, text, None)
