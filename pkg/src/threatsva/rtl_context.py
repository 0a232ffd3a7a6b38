"""Single-file RTL loading and identifier-universe extraction.

The extractor is a declaration scanner over :mod:`threatsva.lexer` tokens,
not a SystemVerilog parser. It knows enough declaration shapes (ANSI and
non-ANSI ports, net/variable declarations, parameters, typedefs, enums,
packed structs, instantiations, ``define``) to build a symbol table for
grounding checks. Generate loops and parameterized hierarchies contribute
their literal names only; ``function``/``task`` bodies are skipped.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import DesignDecodeError, DesignNotFound, EmptyDesign, NoModuleFound
from .lexer import KEYWORDS, Token, match_group, scan

DIRECTIONS = frozenset({"input", "output", "inout", "ref"})
PARAM_KEYWORDS = frozenset({"parameter", "localparam", "specparam"})
NET_KEYWORDS = frozenset(
    {"wire", "reg", "logic", "bit", "integer", "int", "genvar", "byte", "shortint", "longint",
     "tri", "uwire", "wand", "wor", "var", "time", "real", "realtime", "shortreal", "string",
     "supply0", "supply1", "tri0", "tri1"}
)
TYPE_MODIFIERS = NET_KEYWORDS | {"signed", "unsigned", "const", "automatic", "static", "type",
                                 "interconnect", "vectored", "scalared"}
_SKIP_BLOCKS = {"function": "endfunction", "task": "endtask", "class": "endclass",
                "covergroup": "endgroup"}
_MODULE_KEYWORDS = frozenset({"module", "macromodule"})
_NAME_END = frozenset({",", ";", ")", "="})
_LABELLED = frozenset({"begin", "end", "fork", "join", "join_any", "join_none", "endmodule",
                       "endgenerate", "endcase", "endfunction", "endtask", "endproperty",
                       "endsequence", "endinterface", "endpackage"})


@dataclass(frozen=True)
class IdentifierUniverse:
    ports: frozenset[str] = frozenset()
    nets_and_regs: frozenset[str] = frozenset()
    parameters: frozenset[str] = frozenset()
    typedef_names: frozenset[str] = frozenset()
    enum_labels: frozenset[str] = frozenset()
    struct_fields: frozenset[str] = frozenset()
    instance_names: frozenset[str] = frozenset()
    submodule_port_names: frozenset[str] = frozenset()
    macro_names: frozenset[str] = frozenset()
    diagnostics: int = field(default=0, compare=False)

    KINDS = ("ports", "nets_and_regs", "parameters", "typedef_names", "enum_labels",
             "struct_fields", "instance_names", "submodule_port_names", "macro_names")

    def flat(self) -> frozenset[str]:
        cached = self.__dict__.get("_flat")
        if cached is None:
            cached = frozenset().union(*(getattr(self, k) for k in self.KINDS))
            object.__setattr__(self, "_flat", cached)
        return cached

    def __contains__(self, name: str) -> bool:
        return name in self.flat()


@dataclass(frozen=True)
class Declaration:
    """Where and how one name was declared. ``type_text`` is the declared
    data type as written (``logic [31:0]``, ``dmi_error_e``); ``unpacked`` is
    any array suffix after the name."""
    name: str
    kind: str
    type_text: str = ""
    unpacked: str = ""
    default: str = ""
    user_type: str | None = None
    span: tuple[int, int] | None = None


@dataclass
class SymbolTable:
    declarations: dict[str, list[Declaration]] = field(default_factory=dict)
    typedef_spans: dict[str, tuple[int, int]] = field(default_factory=dict)
    macro_spans: dict[str, tuple[int, int]] = field(default_factory=dict)
    label_owner: dict[str, str] = field(default_factory=dict)  # enum label -> typedef name
    module_names: list[str] = field(default_factory=list)

    def add(self, decl: Declaration):
        self.declarations.setdefault(decl.name, []).append(decl)


@dataclass(frozen=True)
class GroundingVerdict:
    ok: bool
    missing: tuple[str, ...] = ()

    def __bool__(self):
        return self.ok


class _Extractor:
    def __init__(self, text: str):
        self.text = text
        result = scan(text)
        self.toks = result.tokens
        self.diagnostics = result.diagnostics
        self.sets = {k: set() for k in IdentifierUniverse.KINDS}
        self.symbols = SymbolTable()
        self.added = 0

    # -- helpers ---------------------------------------------------------
    def tok(self, i: int) -> Token | None:
        return self.toks[i] if 0 <= i < len(self.toks) else None

    def is_(self, i: int, *texts: str) -> bool:
        t = self.tok(i)
        return t is not None and t.text in texts and t.kind in ("op", "ident")

    def is_name(self, i: int) -> bool:
        t = self.tok(i)
        return t is not None and t.kind == "ident" and t.text not in KEYWORDS

    def src(self, i: int, j: int) -> str:
        """Source text covering tokens i..j-1."""
        if j <= i:
            return ""
        return self.text[self.toks[i].start:self.toks[j - 1].end]

    def skip_group(self, i: int) -> int:
        try:
            return match_group(self.toks, i)
        except ValueError:
            self.diagnostics += 1
            return len(self.toks)

    def skip_expr(self, i: int) -> int:
        """Advance to the next top-level ``,`` ``;`` or closing bracket."""
        while i < len(self.toks):
            t = self.toks[i]
            if t.kind == "op":
                if t.text in ("(", "[", "{", "'{"):
                    i = self.skip_group(i)
                    continue
                if t.text in (",", ";", ")", "]", "}"):
                    return i
            i += 1
        return i

    def skip_to(self, i: int, text: str) -> int:
        while i < len(self.toks) and not self.is_(i, text):
            if self.is_(i, "(", "[", "{", "'{"):
                i = self.skip_group(i)
                continue
            i += 1
        return i

    def add(self, kind: str, name: str, **decl):
        self.sets[kind].add(name)
        self.added += 1
        self.symbols.add(Declaration(name=name, kind=kind, **decl))

    # -- declaration shapes -----------------------------------------------
    def parse_type_prefix(self, i: int, fields_kind: str = "struct_fields"):
        """Skip a data-type prefix. Returns (index, user_type_name)."""
        user_type = None
        while i < len(self.toks):
            t = self.toks[i]
            if t.kind == "ident" and t.text in TYPE_MODIFIERS:
                i += 1
            elif t.kind == "ident" and t.text == "enum":
                i = self.parse_enum_body(i + 1, owner=None)
            elif t.kind == "ident" and t.text in ("struct", "union"):
                i = self.parse_struct_body(i + 1)
            elif t.kind == "ident" and t.text == "packed":
                i += 1
            elif self.is_(i, "["):
                i = self.skip_group(i)
            elif self.is_name(i) and self.is_(i + 1, "::") and self.is_name(i + 2) and self._type_then_name(i + 2):
                user_type = f"{t.text}::{self.toks[i + 2].text}"
                i += 3
            elif self.is_name(i) and self._type_then_name(i) and user_type is None:
                user_type = t.text
                i += 1
            else:
                break
        return i, user_type

    def _type_then_name(self, i: int) -> bool:
        """True when ``toks[i]`` is a type name followed (after optional
        packed dims) by a declared name."""
        j = i + 1
        while self.is_(j, "["):
            j = self.skip_group(j)
        return self.is_name(j)

    def parse_names(self, i: int, kind: str, type_start: int, type_end: int, user_type,
                    stop_keywords=frozenset()):
        type_text = self.src(type_start, type_end)
        while i < len(self.toks):
            if not self.is_name(i):
                return i
            name_i = i
            j = i + 1
            while self.is_(j, "["):
                j = self.skip_group(j)
            unpacked = self.src(i + 1, j)
            if not self.is_(j, *_NAME_END):
                return i + 1
            default = ""
            if self.is_(j, "="):
                k = self.skip_expr(j + 1)
                default = self.src(j + 1, k)
                j = k
            self.add(kind, self.toks[name_i].text, type_text=type_text, unpacked=unpacked,
                     default=default, user_type=user_type,
                     span=(self.toks[type_start].start if type_start < type_end else self.toks[name_i].start,
                           self.toks[j - 1].end))
            if self.is_(j, ","):
                i = j + 1
                t = self.tok(i)
                if t is not None and t.kind == "ident" and t.text in stop_keywords:
                    return i
                continue
            if self.is_(j, ";"):
                return j + 1
            return j
        return i

    def parse_decl(self, i: int, kind: str, stop_keywords=frozenset()) -> int:
        start = i
        i, user_type = self.parse_type_prefix(i)
        return self.parse_names(i, kind, start, i, user_type, stop_keywords)

    def parse_enum_body(self, i: int, owner: str | None) -> int:
        """``i`` points just past ``enum``. Collects labels; returns index
        after the closing brace."""
        while i < len(self.toks) and not self.is_(i, "{"):
            if self.is_(i, "["):
                i = self.skip_group(i)
            elif self.is_(i, ";"):
                return i
            else:
                i += 1
        if i >= len(self.toks):
            return i
        end = self.skip_group(i)
        j = i + 1
        expect_label = True
        labels = []
        while j < end - 1:
            if expect_label and self.is_name(j):
                labels.append(self.toks[j].text)
                expect_label = False
                j += 1
                continue
            if self.is_(j, "(", "[", "{", "'{"):
                j = self.skip_group(j)
                continue
            if self.is_(j, ","):
                expect_label = True
            j += 1
        for label in labels:
            self.sets["enum_labels"].add(label)
            self._pending_labels.append(label)
        return end

    _pending_labels: list

    def parse_struct_body(self, i: int) -> int:
        while i < len(self.toks) and not self.is_(i, "{"):
            i += 1
        if i >= len(self.toks):
            return i
        end = self.skip_group(i)
        j = i + 1
        while j < end - 1:
            nj = self.parse_decl(j, "struct_fields")
            if nj <= j:
                j += 1
            else:
                j = nj
        return end

    def parse_typedef(self, i: int) -> int:
        """``i`` points at ``typedef``."""
        start = i
        self._pending_labels = []
        j, _ = self.parse_type_prefix(i + 1)
        # typedef name: first plain name after the type, before ';'
        name = None
        if self.is_name(j):
            name = self.toks[j].text
        end = self.skip_to(j, ";")
        if name:
            self.sets["typedef_names"].add(name)
            span = (self.toks[start].start, self.toks[min(end, len(self.toks) - 1)].end)
            self.symbols.typedef_spans.setdefault(name, span)
            for label in self._pending_labels:
                self.symbols.label_owner.setdefault(label, name)
        self._pending_labels = []
        return end + 1

    def parse_instance(self, i: int) -> int | None:
        """Try ``type [#(...)] name [dims] (conns) {, name (conns)} ;`` at i.
        Returns the index after the statement, or None if it does not fit."""
        j = i + 1
        if self.is_(j, "#"):
            j += 1
            if self.is_(j, "("):
                j = self.skip_group(j)
            elif self.tok(j) is not None:
                j += 1
        names = []
        while True:
            if not self.is_name(j):
                return None
            k = j + 1
            while self.is_(k, "["):
                k = self.skip_group(k)
            if not self.is_(k, "("):
                return None
            close = self.skip_group(k)
            names.append((self.toks[j].text, k, close))
            if self.is_(close, ","):
                j = close + 1
                continue
            break
        for inst, open_i, close in names:
            self.sets["instance_names"].add(inst)
            depth_one = open_i + 1
            m = depth_one
            while m < close - 1:
                if self.is_(m, "(", "[", "{", "'{"):
                    m = self.skip_group(m)
                    continue
                if self.is_(m, ".") and self.is_name(m + 1):
                    self.sets["submodule_port_names"].add(self.toks[m + 1].text)
                    m += 2
                    continue
                m += 1
        last = names[-1][2]
        return last + 1 if self.is_(last, ";") else last

    # -- driver -----------------------------------------------------------
    def run(self):
        self._pending_labels = []
        i, n = 0, len(self.toks)
        while i < n:
            t = self.toks[i]
            if t.kind == "define":
                self.sets["macro_names"].add(t.text)
                self.symbols.macro_spans.setdefault(t.text, (t.start, t.end))
                i += 1
                continue
            if t.kind == "escaped":
                self.diagnostics += 1
                i += 1
                continue
            if t.kind != "ident":
                i += 1
                continue
            w = t.text
            if w in _MODULE_KEYWORDS:
                j = i + 1
                while self.tok(j) is not None and self.toks[j].text in ("automatic", "static"):
                    j += 1
                if self.is_name(j):
                    self.symbols.module_names.append(self.toks[j].text)
                    i = j + 1
                else:
                    i += 1
            elif w in _SKIP_BLOCKS:
                end_kw = _SKIP_BLOCKS[w]
                j = i + 1
                if w in ("function", "task") and self.is_(j - 2, "import", "export"):
                    i = self.skip_to(j, ";") + 1
                    continue
                while j < n and not (self.toks[j].kind == "ident" and self.toks[j].text == end_kw):
                    j += 1
                i = j + 1
            elif w == "import":
                i = self.skip_to(i + 1, ";") + 1
            elif w == "typedef":
                i = self.parse_typedef(i)
            elif w in ("enum", "struct", "union"):
                i = self.parse_decl(i, "nets_and_regs")
            elif w in DIRECTIONS:
                i = self.parse_decl(i + 1, "ports", stop_keywords=DIRECTIONS)
            elif w in PARAM_KEYWORDS:
                i = self.parse_decl(i + 1, "parameters", stop_keywords=PARAM_KEYWORDS)
            elif w in NET_KEYWORDS:
                i = self.parse_decl(i, "nets_and_regs")
            elif w in KEYWORDS:
                i += 1
            elif self.is_(i - 1, ".", "::", "'", "#") or (
                self.is_(i - 1, ":") and self.tok(i - 2) is not None and self.toks[i - 2].text in _LABELLED
            ):
                i += 1
            else:
                nxt = self.parse_instance(i)
                if nxt is not None:
                    i = nxt
                    continue
                # user-typed declaration: T name ... / pkg::T name ...
                if (self.is_(i + 1, "::") and self.is_name(i + 2) and self._type_then_name(i + 2)) or self._type_then_name(i):
                    before = self.added
                    j = self.parse_decl(i, "nets_and_regs")
                    i = j if self.added > before else i + 1
                else:
                    i += 1

    def universe(self) -> IdentifierUniverse:
        return IdentifierUniverse(
            **{k: frozenset(v) for k, v in self.sets.items()}, diagnostics=self.diagnostics
        )


def scan_design(source_text: str) -> tuple[IdentifierUniverse, SymbolTable]:
    ex = _Extractor(source_text)
    ex.run()
    return ex.universe(), ex.symbols


def extract_identifiers(source_text: str) -> IdentifierUniverse:
    return scan_design(source_text)[0]


def contains_all(universe: IdentifierUniverse, names: Iterable[str]) -> GroundingVerdict:
    """Check every name against ``universe.flat()``. Missing names keep the
    iteration order of ``names`` (sorted when a set is passed)."""
    if isinstance(names, (set, frozenset)):
        names = sorted(names)
    flat = universe.flat()
    missing = []
    seen = set()
    for name in names:
        if name not in flat and name not in seen:
            missing.append(name)
            seen.add(name)
    return GroundingVerdict(ok=not missing, missing=tuple(missing))


@dataclass(frozen=True)
class DesignContext:
    source_text: str
    design_id: str
    identifiers: IdentifierUniverse
    module_names: tuple[str, ...]
    symbols: SymbolTable = field(compare=False, repr=False)
    path: Path | None = None
    top_module_hint: str | None = None

    @property
    def top_module(self) -> str:
        return self.top_module_hint or self.module_names[0]

    @classmethod
    def from_text(cls, source_text: str, path: Path | None = None, top_module_hint: str | None = None):
        if not source_text.strip():
            raise EmptyDesign(f"{path or '<text>'}: design file is empty")
        universe, symbols = scan_design(source_text)
        if not symbols.module_names:
            raise NoModuleFound(f"{path or '<text>'}: no module declaration found")
        if top_module_hint and top_module_hint not in symbols.module_names:
            raise NoModuleFound(
                f"top module hint {top_module_hint!r} is not declared; found {symbols.module_names}"
            )
        return cls(
            source_text=source_text,
            design_id=design_hash(source_text),
            identifiers=universe,
            module_names=tuple(symbols.module_names),
            symbols=symbols,
            path=path,
            top_module_hint=top_module_hint,
        )


def design_hash(source_text: str) -> str:
    return hashlib.sha256(source_text.encode("utf-8")).hexdigest()[:16]


def load_design(path: str | Path, top_module_hint: str | None = None) -> DesignContext:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError as exc:
        raise DesignNotFound(f"{path}: no such file") from exc
    except OSError as exc:
        raise DesignNotFound(f"{path}: {exc.strerror or exc}") from exc
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DesignDecodeError(f"{path}: not valid UTF-8 text ({exc.reason})") from exc
    return DesignContext.from_text(text, path=path, top_module_hint=top_module_hint)
