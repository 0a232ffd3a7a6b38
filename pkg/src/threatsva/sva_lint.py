"""Deterministic rule engine for candidate SystemVerilog assertions.

Mandatory rules (any ``fail`` rejects the candidate at refinement):

R1 implication-form      ``|->``/``|=>`` present; antecedent not a constant literal
R2 named-property        ``property <name> ... endproperty`` or a labeled assert
R3 reset-disable         ``disable iff (...)`` present (must name ``reset_hint`` if given)
R4 clocking-hygiene      clock signal not reused in the property body
R5 non-vacuous-consequent consequent not a constant-true literal
R6 builtin-whitelist     every ``$`` call is in :data:`BUILTIN_WHITELIST`

Advisory:

A1 rose-anchoring        hand-rolled edge detection (``x && !$past(x)``,
                         ``!x ##1 x``) should use ``$rose``/``$fell``

Same-cycle versus next-cycle operator choice cannot be decided from text and
is left to prompt guidance; the ``next-cycle`` tag records which was used.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .errors import LintUnparseable
from .lexer import KEYWORDS, Token, literal_value, match_group, tokenize

BUILTIN_WHITELIST = frozenset(
    {"$rose", "$fell", "$past", "$stable", "$changed", "$isunknown", "$onehot", "$onehot0",
     "$countones", "$error", "$display"}
)
MANDATORY_RULES = ("R1", "R2", "R3", "R4", "R5", "R6")
ADVISORY_RULES = ("A1",)
DEFAULT_RESET = "rst_n"

PASS, FAIL, NA = "pass", "fail", "not-applicable"

_ASSERT_VERBS = frozenset({"assert", "assume", "cover", "restrict"})
_IMPLICATIONS = frozenset({"|->", "|=>"})
_LOCAL_TYPES = frozenset({"logic", "bit", "int", "integer", "byte", "shortint", "longint", "reg",
                          "genvar", "local", "var"})


@dataclass(frozen=True)
class RuleResult:
    rule_id: str
    status: str
    detail: str = ""


@dataclass(frozen=True)
class AssertionShape:
    """One property declaration or assertion statement located in a text.

    ``body`` is a half-open token index range: the property body for a
    declaration, the parenthesized expression for a statement. ``span`` is
    the character range of the whole construct.
    """
    kind: str  # "property" | "assert" | "assume" | "cover" | "restrict" | "sequence"
    name: str | None
    body: tuple[int, int]
    span: tuple[int, int]
    ports: tuple[str, ...] = ()
    has_action: bool = False

    @property
    def is_declaration(self) -> bool:
        return self.kind in ("property", "sequence")


@dataclass(frozen=True)
class LintReport:
    sva_text: str
    results: tuple[RuleResult, ...]
    referenced_identifiers: tuple[str, ...] = ()
    local_names: frozenset[str] = frozenset()
    macro_uses: tuple[str, ...] = ()
    clock_signals: tuple[str, ...] = ()
    reset_signals: tuple[str, ...] = ()
    property_name: str | None = None
    unparseable: bool = False

    @property
    def passed_all_mandatory(self) -> bool:
        return not any(r.status == FAIL for r in self.results if r.rule_id in MANDATORY_RULES)

    @property
    def failed_rules(self) -> tuple[str, ...]:
        return tuple(r.rule_id for r in self.results if r.status == FAIL and r.rule_id in MANDATORY_RULES)

    @property
    def advisories(self) -> tuple[str, ...]:
        return tuple(r.rule_id for r in self.results if r.status == FAIL and r.rule_id in ADVISORY_RULES)

    def result(self, rule_id: str) -> RuleResult:
        for r in self.results:
            if r.rule_id == rule_id:
                return r
        raise KeyError(rule_id)

    def status(self, rule_id: str) -> str:
        return self.result(rule_id).status

    def to_dict(self) -> dict:
        return {
            "property_name": self.property_name,
            "passed_all_mandatory": self.passed_all_mandatory,
            "results": [{"rule": r.rule_id, "status": r.status, "detail": r.detail} for r in self.results],
            "referenced_identifiers": list(self.referenced_identifiers),
            "local_names": sorted(self.local_names),
            "macro_uses": list(self.macro_uses),
            "unparseable": self.unparseable,
        }


def _is(tok: Token | None, *texts: str) -> bool:
    return tok is not None and tok.kind in ("op", "ident") and tok.text in texts


def _is_name(tok: Token | None) -> bool:
    return tok is not None and tok.kind == "ident" and tok.text not in KEYWORDS


def _check_balanced(toks: list[Token]):
    stack = []
    pairs = {"(": ")", "[": "]", "{": "}", "'{": "}"}
    for t in toks:
        if t.kind != "op":
            continue
        if t.text in pairs:
            stack.append((pairs[t.text], t))
        elif t.text in (")", "]", "}"):
            if not stack or stack[-1][0] != t.text:
                raise LintUnparseable(f"unbalanced {t.text!r} at offset {t.start}")
            stack.pop()
    if stack:
        raise LintUnparseable(f"unclosed {stack[-1][1].text!r} at offset {stack[-1][1].start}")


def find_assertions(toks: list[Token]) -> list[AssertionShape]:
    """Locate property/sequence declarations and concurrent assertion
    statements. Raises LintUnparseable on bracket imbalance or a missing
    ``endproperty``."""
    _check_balanced(toks)
    shapes = []
    n = len(toks)
    i = 0
    while i < n:
        t = toks[i]
        if t.kind == "ident" and t.text in ("property", "sequence") and not _is(toks[i - 1] if i else None, *_ASSERT_VERBS, "expect"):
            end_kw = "end" + t.text
            if not _is_name(toks[i + 1] if i + 1 < n else None):
                raise LintUnparseable(f"{t.text} without a name at offset {t.start}")
            name = toks[i + 1].text
            j = i + 2
            ports: list[str] = []
            if _is(toks[j] if j < n else None, "("):
                close = match_group(toks, j)
                depth_toks = toks[j + 1:close - 1]
                for k, pt in enumerate(depth_toks):
                    nxt = depth_toks[k + 1] if k + 1 < len(depth_toks) else None
                    if _is_name(pt) and (nxt is None or _is(nxt, ",", "=")):
                        ports.append(pt.text)
                j = close
            if _is(toks[j] if j < n else None, ";"):
                j += 1
            e = j
            while e < n and not (toks[e].kind == "ident" and toks[e].text == end_kw):
                e += 1
            if e >= n:
                raise LintUnparseable(f"{t.text} {name} has no {end_kw}")
            stop = e + 1
            if _is(toks[stop] if stop < n else None, ":") and stop + 1 < n:
                stop += 2
            shapes.append(AssertionShape(t.text, name, (j, e), (t.start, toks[stop - 1].end), tuple(ports)))
            i = stop
            continue
        if t.kind == "ident" and t.text in _ASSERT_VERBS and _is(toks[i + 1] if i + 1 < n else None, "property"):
            label = None
            start_i = i
            if i >= 2 and _is(toks[i - 1], ":") and _is_name(toks[i - 2]):
                label = toks[i - 2].text
                start_i = i - 2
            j = i + 2
            if not _is(toks[j] if j < n else None, "("):
                raise LintUnparseable(f"{t.text} property without '(' at offset {t.start}")
            close = match_group(toks, j)
            k = close
            while k < n and not _is(toks[k], ";"):
                if _is(toks[k], "(", "[", "{", "'{"):
                    k = match_group(toks, k)
                    continue
                k += 1
            has_action = k > close
            end_off = toks[k].end if k < n else toks[-1].end
            shapes.append(AssertionShape(t.text, label, (j + 1, close - 1), (toks[start_i].start, end_off),
                                         has_action=has_action))
            i = k + 1
            continue
        i += 1
    return shapes


def primary_assertion(shapes: list[AssertionShape]) -> AssertionShape | None:
    for s in shapes:
        if s.kind == "property":
            return s
    for s in shapes:
        if s.kind in ("assert", "assume"):
            return s
    for s in shapes:
        if not s.is_declaration:
            return s
    return None


@dataclass
class _Body:
    expr: list[Token] = field(default_factory=list)
    clocks: list[str] = field(default_factory=list)
    resets: list[str] = field(default_factory=list)
    disable: list[Token] = field(default_factory=list)
    locals: list[str] = field(default_factory=list)
    has_clock_event: bool = False
    has_disable: bool = False


def _names(toks) -> list[str]:
    out = []
    for t in toks:
        if _is_name(t) and t.text not in out:
            out.append(t.text)
    return out


def _split_body(toks: list[Token]) -> _Body:
    body = _Body()
    i, n = 0, len(toks)
    while n and _is(toks[n - 1], ";"):
        n -= 1
    # property-local variable declarations
    while i < n and toks[i].kind == "ident" and toks[i].text in _LOCAL_TYPES:
        j = i
        while j < n and not _is(toks[j], ";"):
            j += 1
        decl = toks[i:j]
        for k, t in enumerate(decl):
            nxt = decl[k + 1] if k + 1 < len(decl) else None
            if _is_name(t) and (nxt is None or _is(nxt, ",", "=", "[")):
                body.locals.append(t.text)
        i = j + 1
    # a statement body may be wrapped in one redundant pair of parens
    while i < n and _is(toks[i], "(") and match_group(toks[:n], i) == n and _starts_with_event(toks, i + 1):
        i, n = i + 1, n - 1
    if i < n and _is(toks[i], "@"):
        body.has_clock_event = True
        if i + 1 < n and _is(toks[i + 1], "("):
            close = match_group(toks, i + 1)
            body.clocks = _names(toks[i + 2:close - 1])
            i = close
        elif i + 1 < n:
            body.clocks = _names([toks[i + 1]])
            i += 2
    if i + 2 < n and _is(toks[i], "disable") and _is(toks[i + 1], "iff") and _is(toks[i + 2], "("):
        close = match_group(toks, i + 2)
        body.has_disable = True
        body.disable = toks[i + 3:close - 1]
        body.resets = _names(body.disable)
        i = close
    body.expr = toks[i:n]
    return body


def _starts_with_event(toks, i) -> bool:
    return i < len(toks) and (_is(toks[i], "@") or _is(toks[i], "disable"))


def _strip_parens(toks: list[Token]) -> list[Token]:
    while len(toks) >= 2 and _is(toks[0], "(") and match_group(toks, 0) == len(toks):
        toks = toks[1:-1]
    return toks


def _implication(expr: list[Token]):
    """Return (antecedent, operator, consequent) around the first
    implication, bounded by its enclosing parenthesis group; or None."""
    stack: list[int] = []
    for k, t in enumerate(expr):
        if _is(t, "(", "[", "{", "'{"):
            stack.append(k)
        elif _is(t, ")", "]", "}"):
            stack.pop()
        elif t.kind == "op" and t.text in _IMPLICATIONS:
            start = stack[-1] + 1 if stack else 0
            if stack:
                end = match_group(expr, stack[-1]) - 1
            else:
                end = len(expr)
            return expr[start:k], t.text, expr[k + 1:end]
    return None


def _constant(toks: list[Token]) -> int | None:
    toks = _strip_parens(toks)
    if len(toks) == 1 and toks[0].kind == "number":
        return literal_value(toks[0].text)
    return None


def _manual_edges(expr: list[Token]) -> list[str]:
    found = []
    texts = [t.text for t in expr]
    n = len(texts)
    for k in range(n):
        # x && !$past(x)   /   !$past(x) && x
        if texts[k] == "$past" and k >= 1 and texts[k - 1] == "!" and k + 3 < n and texts[k + 1] == "(" and texts[k + 3] == ")":
            sig = texts[k + 2]
            if _is_name(expr[k + 2]):
                left = k >= 3 and texts[k - 2] == "&&" and texts[k - 3] == sig and (k < 4 or texts[k - 4] not in (".", "!", "~"))
                right = k + 5 < n and texts[k + 4] == "&&" and texts[k + 5] == sig and (k + 6 >= n or texts[k + 6] != ".")
                if left or right:
                    found.append(sig)
        # !x ##1 x
        if texts[k] == "!" and k + 3 < n and _is_name(expr[k + 1]) and texts[k + 2] == "##" and texts[k + 3] == "1" and k + 4 < n and texts[k + 4] == texts[k + 1]:
            found.append(texts[k + 1])
    return found


def _unparseable_report(sva_text: str, reason: str) -> LintReport:
    results = tuple(RuleResult(r, FAIL, f"unparseable: {reason}") for r in MANDATORY_RULES)
    results += tuple(RuleResult(r, NA, "unparseable") for r in ADVISORY_RULES)
    return LintReport(sva_text=sva_text, results=results, unparseable=True)


def lint(sva_text: str, clock_hint: str | None = None, reset_hint: str | None = None) -> LintReport:
    if not sva_text or not sva_text.strip():
        raise ValueError("sva_text must be non-empty")
    toks = tokenize(sva_text)
    try:
        shapes = find_assertions(toks)
        primary = primary_assertion(shapes)
        body_toks = toks[primary.body[0]:primary.body[1]] if primary else toks
        body = _split_body(body_toks)
        impl = _implication(body.expr)
    except (LintUnparseable, ValueError, IndexError) as exc:
        return _unparseable_report(sva_text, str(exc))

    local_names = set(body.locals)
    for s in shapes:
        if s.name:
            local_names.add(s.name)
        local_names.update(s.ports)

    results = []
    # R1
    if impl is None:
        results.append(RuleResult("R1", FAIL, "no |-> or |=> implication in the property body"))
    else:
        ante, op, _ = impl
        if not _strip_parens(ante):
            results.append(RuleResult("R1", FAIL, f"empty antecedent before {op}"))
        elif _constant(ante) is not None:
            results.append(RuleResult("R1", FAIL, f"antecedent is the constant literal {''.join(t.text for t in _strip_parens(ante))}"))
        else:
            results.append(RuleResult("R1", PASS, f"uses {op}"))
    # R2
    if primary is not None and primary.kind == "property" and primary.name:
        results.append(RuleResult("R2", PASS, f"property {primary.name}"))
    elif primary is not None and primary.name:
        results.append(RuleResult("R2", PASS, f"labeled {primary.kind} {primary.name}"))
    else:
        results.append(RuleResult("R2", FAIL, "no named property and no labeled assertion"))
    # R3
    expected_reset = reset_hint or DEFAULT_RESET
    if not body.has_disable:
        results.append(RuleResult("R3", FAIL, f"missing disable iff (expected reset {expected_reset})"))
    elif reset_hint and reset_hint not in body.resets:
        results.append(RuleResult("R3", FAIL, f"disable iff does not reference reset {reset_hint}"))
    elif not reset_hint and DEFAULT_RESET not in body.resets:
        results.append(RuleResult("R3", PASS, f"disable iff on {', '.join(body.resets) or 'expression'} (default {DEFAULT_RESET} not used)"))
    else:
        results.append(RuleResult("R3", PASS, f"disable iff on {expected_reset}"))
    # R4
    clocks = body.clocks or ([clock_hint] if clock_hint else [])
    if not clocks:
        results.append(RuleResult("R4", NA, "no clocking event"))
    else:
        used = _names(body.expr) + _names(body.disable)
        reused = [c for c in clocks if c in used]
        if reused:
            results.append(RuleResult("R4", FAIL, f"clock {', '.join(reused)} reused in property body"))
        else:
            detail = f"clocked on {', '.join(clocks)}"
            if clock_hint and body.clocks and clock_hint not in body.clocks:
                detail += f" (expected {clock_hint})"
            results.append(RuleResult("R4", PASS, detail))
    # R5
    if impl is None:
        results.append(RuleResult("R5", NA, "no implication"))
    else:
        value = _constant(impl[2])
        if not _strip_parens(impl[2]):
            results.append(RuleResult("R5", FAIL, "empty consequent"))
        elif value is not None and value != 0:
            results.append(RuleResult("R5", FAIL, "consequent is a constant-true literal"))
        else:
            results.append(RuleResult("R5", PASS))
    # R6
    calls = [t.text for t in toks if t.kind == "sysid"]
    bad = sorted({c for c in calls if c not in BUILTIN_WHITELIST})
    if bad:
        results.append(RuleResult("R6", FAIL, f"non-whitelisted system calls {', '.join(bad)}"))
    else:
        results.append(RuleResult("R6", PASS))
    # A1
    edges = _manual_edges(body.expr)
    if edges:
        results.append(RuleResult("A1", FAIL, f"hand-rolled edge on {', '.join(dict.fromkeys(edges))}; prefer $rose/$fell"))
    else:
        results.append(RuleResult("A1", PASS))

    return LintReport(
        sva_text=sva_text,
        results=tuple(results),
        referenced_identifiers=tuple(_names(toks)),
        local_names=frozenset(local_names),
        macro_uses=tuple(dict.fromkeys(t.text for t in toks if t.kind == "macro")),
        clock_signals=tuple(body.clocks),
        reset_signals=tuple(body.resets),
        property_name=primary.name if primary else None,
    )


def derive_tags(report: LintReport) -> list[str]:
    toks = tokenize(report.sva_text) if report.sva_text else []
    texts = {t.text for t in toks}
    tags = []
    if "|=>" in texts:
        tags.append("next-cycle")
    if "##" in texts or "$past" in texts:
        tags.append("multi-cycle")
    if "$rose" in texts or "$fell" in texts:
        tags.append("edge-anchored")
    for rule in ADVISORY_RULES:
        for r in report.results:
            if r.rule_id == rule and r.status == FAIL:
                tags.append(f"advisory:{rule}")
    return tags
