"""Comment- and string-aware SystemVerilog token scanner.

Both the RTL identifier extractor and the assertion linter run on this one
scanner so that "what counts as an identifier" means the same thing in the
design and in a candidate assertion.
"""
from __future__ import annotations

import re
from typing import NamedTuple

IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_$]*\Z")

# IEEE 1800-2017 reserved words.
KEYWORDS = frozenset("""
accept_on alias always always_comb always_ff always_latch and assert assign assume automatic
before begin bind bins binsof bit break buf bufif0 bufif1 byte case casex casez cell chandle
checker class clocking cmos config const constraint context continue cover covergroup coverpoint
cross deassign default defparam design disable dist do edge else end endcase endchecker endclass
endclocking endconfig endfunction endgenerate endgroup endinterface endmodule endpackage
endprimitive endprogram endproperty endsequence endspecify endtable endtask enum event eventually
expect export extends extern final first_match for force foreach forever fork forkjoin function
generate genvar global highz0 highz1 if iff ifnone ignore_bins illegal_bins implements implies
import incdir include initial inout input inside instance int integer interconnect interface
intersect join join_any join_none large let liblist library local localparam logic longint
macromodule matches medium modport module nand negedge nettype new nexttime nmos nor
noshowcancelled not notif0 notif1 null or output package packed parameter pmos posedge primitive
priority program property protected pull0 pull1 pulldown pullup pulsestyle_ondetect
pulsestyle_onevent pure rand randc randcase randsequence rcmos real realtime ref reg reject_on
release repeat restrict return rnmos rpmos rtran rtranif0 rtranif1 s_always s_eventually
s_nexttime s_until s_until_with scalared sequence shortint shortreal showcancelled signed small
soft solve specify specparam static string strong strong0 strong1 struct super supply0 supply1
sync_accept_on sync_reject_on table tagged task this throughout time timeprecision timeunit tran
tranif0 tranif1 tri tri0 tri1 triand trior trireg type typedef union unique unique0 unsigned until
until_with untyped use uwire var vectored virtual void wait wait_order wand weak weak0 weak1 while
wildcard wire with within wor xnor xor
""".split())

# Compiler directives; everything else after a backtick is a macro use.
DIRECTIVES = frozenset("""
define undef undefineall include ifdef ifndef elsif else endif timescale default_nettype
resetall celldefine endcelldefine line pragma begin_keywords end_keywords unconnected_drive
nounconnected_drive
""".split())

_SKIP_LINE_DIRECTIVES = frozenset(
    {"include", "timescale", "default_nettype", "line", "pragma", "begin_keywords",
     "unconnected_drive"}
)
_NAME_DIRECTIVES = frozenset({"ifdef", "ifndef", "elsif", "undef"})

_OPERATORS = sorted(
    """|-> |=> #-# #=# ## :: <<<= >>>= <<= >>= <<< >>> === !== ==? !=? == != <= >= && || ** ->
    <-> ++ -- += -= *= /= %= &= |= ^= << >> ~& ~| ~^ ^~ '{ .*""".split(),
    key=len,
    reverse=True,
)

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>//[^\n]*|/\*.*?\*/)
  | (?P<open_comment>/\*.*)
  | (?P<string>"(?:\\.|[^"\\\n])*")
  | (?P<open_string>"[^\n]*)
  | (?P<escaped>\\\S+)
  | (?P<backtick>`[A-Za-z_][A-Za-z0-9_$]*)
  | (?P<number>
        (?:\d[\d_]*\s*)?'[sS]?[bBoOdDhH]\s*[0-9a-fA-FxXzZ_?]+
      | '[01xXzZ](?![A-Za-z0-9_$])
      | \d[\d_]*(?:\.\d[\d_]*)?(?:[eE][+-]?\d+)?(?:fs|ps|ns|us|ms|s|step)?(?![A-Za-z0-9_$])
    )
  | (?P<sysid>\$[A-Za-z_][A-Za-z0-9_$]*)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_$]*)
  | (?P<op>"""
    + "|".join(re.escape(o) for o in _OPERATORS)
    + r"""|[-+*/%&|^~!<>=?:;,.()\[\]{}#@'$])
  | (?P<other>.)
    """,
    re.S | re.X,
)


class Token(NamedTuple):
    kind: str  # ident, sysid, macro, define, number, string, op, escaped, other
    text: str
    start: int
    end: int


class Scan(NamedTuple):
    tokens: list[Token]
    diagnostics: int


def _line_end(text: str, pos: int, continuation: bool = False) -> int:
    while True:
        nl = text.find("\n", pos)
        if nl < 0:
            return len(text)
        if continuation and text[:nl].rstrip("\r").endswith("\\"):
            pos = nl + 1
            continue
        return nl


def scan(text: str) -> Scan:
    """Tokenize ``text``; comments and whitespace are dropped.

    ``define`` tokens carry the macro name in ``text`` and span the whole
    definition. Unterminated comments/strings and escaped identifiers are not
    errors; each bumps the diagnostics tally.
    """
    out: list[Token] = []
    diagnostics = 0
    pos, n = 0, len(text)
    while pos < n:
        m = _TOKEN_RE.match(text, pos)
        kind = m.lastgroup
        start, end = m.start(), m.end()
        if kind in ("ws", "comment"):
            pos = end
            continue
        if kind in ("open_comment", "open_string", "escaped", "other"):
            diagnostics += 1
            if kind == "open_string":
                out.append(Token("string", m.group(), start, end))
            elif kind == "escaped":
                out.append(Token("escaped", m.group(), start, end))
            pos = end
            continue
        if kind == "backtick":
            name = m.group()[1:]
            if name == "define":
                dm = re.compile(r"[ \t]+([A-Za-z_][A-Za-z0-9_$]*)").match(text, end)
                stop = _line_end(text, end, continuation=True)
                if dm:
                    out.append(Token("define", dm.group(1), start, stop))
                else:
                    diagnostics += 1
                pos = stop
                continue
            if name in _SKIP_LINE_DIRECTIVES:
                pos = _line_end(text, end)
                continue
            if name in _NAME_DIRECTIVES:
                nm = re.compile(r"\s+[A-Za-z_][A-Za-z0-9_$]*").match(text, end)
                pos = nm.end() if nm else end
                continue
            if name in DIRECTIVES:
                pos = end
                continue
            out.append(Token("macro", name, start, end))
            pos = end
            continue
        out.append(Token(kind, m.group(), start, end))
        pos = end
    return Scan(out, diagnostics)


def tokenize(text: str) -> list[Token]:
    return scan(text).tokens


def is_identifier(name: str) -> bool:
    return bool(IDENT_RE.match(name)) and name not in KEYWORDS


def literal_value(text: str) -> int | None:
    """Integer value of a numeric literal, or None when it has x/z/? digits
    or is not an integer literal."""
    t = text.replace("_", "").replace(" ", "").replace("\t", "")
    if re.fullmatch(r"\d+", t):
        return int(t)
    m = re.fullmatch(r"'([01xXzZ])", t)
    if m:
        d = m.group(1)
        return int(d) if d in "01" else None
    m = re.fullmatch(r"(\d*)'[sS]?([bBoOdDhH])([0-9a-fA-F]+)", t)
    if m:
        base = {"b": 2, "o": 8, "d": 10, "h": 16}[m.group(2).lower()]
        try:
            return int(m.group(3), base)
        except ValueError:
            return None
    return None


def match_group(tokens: list[Token], i: int) -> int:
    """Index just past the bracket group opening at ``tokens[i]``.

    Raises ValueError when the group never closes.
    """
    pairs = {"(": ")", "[": "]", "{": "}", "'{": "}"}
    stack = [pairs[tokens[i].text]]
    j = i + 1
    while j < len(tokens):
        t = tokens[j]
        if t.kind == "op":
            if t.text in pairs:
                stack.append(pairs[t.text])
            elif t.text in (")", "]", "}"):
                if t.text != stack[-1]:
                    raise ValueError(f"mismatched {t.text!r} at offset {t.start}")
                stack.pop()
                if not stack:
                    return j + 1
        j += 1
    raise ValueError(f"unclosed {tokens[i].text!r} at offset {tokens[i].start}")
