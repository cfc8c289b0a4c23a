"""SQL-subset parser, printer and executor.

Grammar (keywords case-insensitive, identifiers case-sensitive)::

    statement  := "SELECT" projection ["FROM" ident] ["WHERE" conj] ";"
    projection := "*" | item {"," item}
    item       := call | ident
    conj       := pred {"AND" pred}
    pred       := ident "=" literal
                | ident "IN" "(" literal {"," literal} ")"
                | call ["=" literal]
    call       := ident "(" [arg {"," arg}] ")"
    arg        := literal | ident
    literal    := integer | string | "x'" 32 hex digits "'"

Without FROM the statement is evaluated once against no rows of
``images_ft`` (e.g. ``SELECT GetClassOfImage(42);``). Equality and IN
predicates on ``comparative_descriptor`` are answered from the hash index.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Union

from .encode import hash_descriptor
from .errors import (
    ModelNotLoaded,
    QuerySyntaxError,
    QueryTypeError,
    UnknownColumn,
    UnknownFunction,
    UnknownRecord,
    UnknownTable,
)
from .store import TABLES, Store

KEYWORDS = {"SELECT", "FROM", "WHERE", "AND", "IN"}
FUNCTIONS = {"GetClassOfImage": 1, "FindDuplicates": 1}
DEFAULT_SOURCE = "images_ft"


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Literal:
    value: Union[int, str, bytes]

    @property
    def kind(self) -> str:
        return {int: "integer", str: "string", bytes: "digest"}[type(self.value)]


@dataclass(frozen=True)
class Column:
    name: str


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple = ()


@dataclass(frozen=True)
class Star:
    pass


@dataclass(frozen=True)
class Compare:
    left: Union[Column, Call]
    right: Literal


@dataclass(frozen=True)
class InList:
    column: Column
    values: tuple


@dataclass(frozen=True)
class CallPredicate:
    call: Call


@dataclass(frozen=True)
class Select:
    projection: tuple
    source: str = DEFAULT_SOURCE
    predicates: tuple = ()
    implicit_source: bool = False


QueryAst = Select


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Token:
    kind: str  # KEYWORD IDENT INT STRING HEX PUNCT EOF
    value: object
    line: int
    column: int


_PATTERNS = [
    ("WS", r"[ \t\r\n]+"),
    ("COMMENT", r"--[^\n]*"),
    ("HEX", r"[xX]'[^']*'"),
    ("IDENT", r"[A-Za-z_][A-Za-z0-9_]*"),
    ("INT", r"-?[0-9]+"),
    ("STRING", r"'(?:[^']|'')*'"),
    ("PUNCT", r"[(),;=*]"),
]
_LEXER = re.compile("|".join(f"(?P<{name}>{pat})" for name, pat in _PATTERNS))
_HEX_BODY = re.compile(r"[0-9A-Fa-f]{32}")


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _LEXER.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            if text[pos] == "'":
                raise QuerySyntaxError("unterminated string literal", line, col)
            raise QuerySyntaxError(f"unexpected character {text[pos]!r}", line, col)
        kind, raw = m.lastgroup, m.group()
        if kind == "IDENT" and raw.upper() in KEYWORDS:
            tokens.append(Token("KEYWORD", raw.upper(), line, col))
        elif kind == "IDENT":
            tokens.append(Token("IDENT", raw, line, col))
        elif kind == "INT":
            tokens.append(Token("INT", int(raw), line, col))
        elif kind == "STRING":
            tokens.append(Token("STRING", raw[1:-1].replace("''", "'"), line, col))
        elif kind == "HEX":
            body = raw[2:-1]
            if not _HEX_BODY.fullmatch(body):
                raise QuerySyntaxError("digest literal needs exactly 32 hex digits", line, col)
            tokens.append(Token("HEX", bytes.fromhex(body), line, col))
        elif kind == "PUNCT":
            tokens.append(Token("PUNCT", raw, line, col))
        newlines = raw.count("\n")
        if newlines:
            line += newlines
            line_start = pos + raw.rindex("\n") + 1
        pos = m.end()
    tokens.append(Token("EOF", None, line, pos - line_start + 1))
    return tokens


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def fail(self, message: str, tok: Token | None = None):
        tok = tok or self.tok
        found = "end of input" if tok.kind == "EOF" else repr(tok.value)
        raise QuerySyntaxError(f"{message}, found {found}", tok.line, tok.column)

    def advance(self) -> Token:
        tok = self.tok
        self.i += 1
        return tok

    def at(self, kind: str, value=None) -> bool:
        return self.tok.kind == kind and (value is None or self.tok.value == value)

    def expect(self, kind: str, value=None, what: str = "") -> Token:
        if not self.at(kind, value):
            self.fail(f"expected {what or value or kind}")
        return self.advance()

    def statement(self) -> Select:
        self.expect("KEYWORD", "SELECT")
        projection = self.projection()
        source, implicit = DEFAULT_SOURCE, True
        if self.at("KEYWORD", "FROM"):
            self.advance()
            tok = self.expect("IDENT", what="table name")
            if tok.value not in TABLES:
                raise UnknownTable(f"{tok.line}:{tok.column}: unknown table {tok.value!r}")
            source, implicit = tok.value, False
        predicates = ()
        if self.at("KEYWORD", "WHERE"):
            self.advance()
            preds = [self.predicate()]
            while self.at("KEYWORD", "AND"):
                self.advance()
                preds.append(self.predicate())
            predicates = tuple(preds)
        self.expect("PUNCT", ";", "';'")
        if not self.at("EOF"):
            self.fail("expected end of statement")
        return Select(tuple(projection), source, predicates, implicit)

    def projection(self) -> list:
        if self.at("PUNCT", "*"):
            self.advance()
            return [Star()]
        items = [self.item()]
        while self.at("PUNCT", ","):
            self.advance()
            items.append(self.item())
        return items

    def item(self):
        tok = self.expect("IDENT", what="column or function")
        if self.at("PUNCT", "("):
            return self.call(tok)
        return Column(tok.value)

    def call(self, name_tok: Token) -> Call:
        if name_tok.value not in FUNCTIONS:
            raise UnknownFunction(
                f"{name_tok.line}:{name_tok.column}: unknown function {name_tok.value!r}"
            )
        self.expect("PUNCT", "(")
        args = []
        if not self.at("PUNCT", ")"):
            args.append(self.arg())
            while self.at("PUNCT", ","):
                self.advance()
                args.append(self.arg())
        self.expect("PUNCT", ")", "')'")
        return Call(name_tok.value, tuple(args))

    def arg(self):
        if self.at("IDENT"):
            return Column(self.advance().value)
        return self.literal()

    def literal(self) -> Literal:
        if self.tok.kind in ("INT", "STRING", "HEX"):
            return Literal(self.advance().value)
        self.fail("expected literal")

    def predicate(self):
        tok = self.expect("IDENT", what="column or function")
        if self.at("PUNCT", "("):
            call = self.call(tok)
            if self.at("PUNCT", "="):
                self.advance()
                return Compare(call, self.literal())
            return CallPredicate(call)
        if self.at("PUNCT", "="):
            self.advance()
            return Compare(Column(tok.value), self.literal())
        if self.at("KEYWORD", "IN"):
            self.advance()
            self.expect("PUNCT", "(")
            values = [self.literal()]
            while self.at("PUNCT", ","):
                self.advance()
                values.append(self.literal())
            self.expect("PUNCT", ")", "')'")
            return InList(Column(tok.value), tuple(values))
        self.fail("expected '=', IN or '('")


def parse(text: str) -> Select:
    """Parse one statement; raises QuerySyntaxError with a line:column position."""
    return _Parser(text).statement()


# ---------------------------------------------------------------------------
# Printer
# ---------------------------------------------------------------------------


def _print_literal(lit: Literal) -> str:
    v = lit.value
    if isinstance(v, bytes):
        return f"x'{v.hex()}'"
    if isinstance(v, str):
        return "'" + v.replace("'", "''") + "'"
    return str(v)


def _print_expr(node) -> str:
    if isinstance(node, Star):
        return "*"
    if isinstance(node, Column):
        return node.name
    if isinstance(node, Literal):
        return _print_literal(node)
    if isinstance(node, Call):
        return f"{node.name}({', '.join(_print_expr(a) for a in node.args)})"
    if isinstance(node, Compare):
        return f"{_print_expr(node.left)} = {_print_literal(node.right)}"
    if isinstance(node, InList):
        return f"{node.column.name} IN ({', '.join(_print_literal(v) for v in node.values)})"
    if isinstance(node, CallPredicate):
        return _print_expr(node.call)
    raise TypeError(f"cannot print {node!r}")


def print_ast(ast: Select) -> str:
    """Canonical text: upper-case keywords, single spaces, trailing ';'."""
    out = "SELECT " + ", ".join(_print_expr(p) for p in ast.projection)
    if not ast.implicit_source:
        out += f" FROM {ast.source}"
    if ast.predicates:
        out += " WHERE " + " AND ".join(_print_expr(p) for p in ast.predicates)
    return out + ";"


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------


def _iso(ts) -> str:
    return ts.isoformat().replace("+00:00", "Z")


# table -> ((column, python type), ...) and a row -> tuple extractor
SCHEMAS = {
    "images_ft": (
        (("id", int), ("name", str), ("size", int)),
        lambda rid, r: (rid, r.name, r.size),
    ),
    "images": (
        (("id", int), ("class_label", str), ("role", str)),
        lambda rid, r: (rid, r.class_label, r.role),
    ),
    "sifts": (
        (("id", int), ("keypoint_count", int), ("dim", int)),
        lambda rid, r: (rid, len(r), r.dim),
    ),
    "dictionaries": (
        (("id", int), ("words_count", int), ("single_word_size", int)),
        lambda rid, r: (rid, r.words_count, r.single_word_size),
    ),
    "descriptors": (
        (
            ("id", int), ("image_id", int), ("dictionary_id", int),
            ("comparative_descriptor", bytes), ("words_count", int), ("keypoint_count", int),
        ),
        lambda rid, r: (
            rid, r.image_id, r.dictionary_id, r.comparative_descriptor,
            r.histogram.words_count, r.histogram.total,
        ),
    ),
    "svm_configs": (
        (
            ("id", int), ("dictionary_id", int), ("kernel", str), ("c", float),
            ("class_count", int), ("grid_step", int), ("patch_size", int),
        ),
        lambda rid, r: (
            rid, r.dictionary_id, r.model.config.kernel, r.model.config.c,
            len(r.model.class_labels), r.extractor.grid_step, r.extractor.patch_size,
        ),
    ),
    "stats": (
        (("id", int), ("image_id", int), ("stage", str), ("elapsed_us", float), ("timestamp", str)),
        lambda rid, r: (rid, r.image_id, r.stage, r.elapsed, _iso(r.timestamp)),
    ),
}

FUNCTION_RESULT = {"GetClassOfImage": str, "FindDuplicates": list}


@dataclass
class ResultSet:
    columns: list[str]
    rows: list[tuple] = field(default_factory=list)
    rows_visited: int = 0

    @property
    def row_count(self) -> int:
        return len(self.rows)


def _literal_matches(expected_type, lit: Literal, where: str) -> None:
    ok = isinstance(lit.value, expected_type) or (expected_type is float and isinstance(lit.value, int))
    if not ok:
        raise QueryTypeError(f"{where} expects {expected_type.__name__}, got {lit.kind} literal")


class Executor:
    """Evaluates parsed statements against a store; never mutates it.

    ``rows_visited`` counts the rows materialized for predicate evaluation.
    """

    def __init__(self, store: Store, model=None, dictionary=None, extractor=None):
        self.store = store
        self.model = model
        self.dictionary = dictionary
        self.extractor = extractor

    # -- functions ---------------------------------------------------------

    def _file_id_arg(self, call: Call, args: list):
        if len(args) != FUNCTIONS[call.name]:
            raise QueryTypeError(f"{call.name} takes {FUNCTIONS[call.name]} argument(s)")
        (file_id,) = args
        if not isinstance(file_id, int) or isinstance(file_id, bool):
            raise QueryTypeError(f"{call.name} expects an integer file id")
        return file_id

    def get_class_of_image(self, file_id: int):
        from .pipeline import classify_bytes

        if self.model is None or self.dictionary is None:
            raise ModelNotLoaded("no trained dictionary/model is loaded")
        data = self.store.get_blob(file_id)
        return classify_bytes(data, self.dictionary, self.model, self.extractor).predicted

    def find_duplicates(self, file_id: int) -> list[int]:
        """Other images whose stored histogram hashes to the same digest."""
        self.store.get_blob(file_id)
        ids = self.store.descriptor_ids_for_image(file_id)
        if self.dictionary is not None and self.dictionary.dictionary_id is not None:
            ids = [i for i in ids if self.store.get("descriptors", i).dictionary_id == self.dictionary.dictionary_id]
        if not ids:
            raise UnknownRecord(f"image {file_id} has no stored histogram")
        row = self.store.get("descriptors", max(ids))
        digest = hash_descriptor(row.histogram)
        others = set()
        for rid in self.store.lookup_by_hash(digest):
            other = self.store.get("descriptors", rid)
            if other.image_id != file_id and other.dictionary_id == row.dictionary_id:
                others.add(other.image_id)
        return sorted(others)

    def call(self, call: Call, row: dict | None):
        args = []
        for a in call.args:
            if isinstance(a, Literal):
                args.append(a.value)
            else:
                if row is None or a.name not in row:
                    raise UnknownColumn(f"unknown column {a.name!r}")
                args.append(row[a.name])
        file_id = self._file_id_arg(call, args)
        if call.name == "GetClassOfImage":
            return self.get_class_of_image(file_id)
        return self.find_duplicates(file_id)

    # -- statement ---------------------------------------------------------

    def _column_types(self, ast: Select) -> dict:
        if ast.implicit_source:
            return {}
        return dict(SCHEMAS[ast.source][0])

    def _check(self, ast: Select, types: dict) -> None:
        def col(c: Column):
            if c.name not in types:
                raise UnknownColumn(f"unknown column {c.name!r} in {ast.source if types else 'statement without FROM'}")

        for p in ast.projection:
            if isinstance(p, Star) and ast.implicit_source:
                raise QueryTypeError("SELECT * needs a FROM clause")
            if isinstance(p, Column):
                col(p)
            if isinstance(p, Call):
                for a in p.args:
                    if isinstance(a, Column):
                        col(a)
        for p in ast.predicates:
            if isinstance(p, Compare):
                if isinstance(p.left, Column):
                    col(p.left)
                    _literal_matches(types[p.left.name], p.right, p.left.name)
                else:
                    for a in p.left.args:
                        if isinstance(a, Column):
                            col(a)
                    result = FUNCTION_RESULT[p.left.name]
                    if result is list:
                        raise QueryTypeError(f"{p.left.name} returns a list and cannot be compared")
                    _literal_matches(result, p.right, p.left.name)
            elif isinstance(p, InList):
                col(p.column)
                for v in p.values:
                    _literal_matches(types[p.column.name], v, p.column.name)
            else:
                for a in p.call.args:
                    if isinstance(a, Column):
                        col(a)

    def _candidates(self, ast: Select) -> list[int]:
        """Row ids to visit: an index lookup when a predicate allows it, else a scan."""
        narrowed = None
        for p in ast.predicates:
            ids = None
            if isinstance(p, Compare) and isinstance(p.left, Column):
                if ast.source == "descriptors" and p.left.name == "comparative_descriptor":
                    ids = set(self.store.lookup_by_hash(p.right.value))
                elif p.left.name == "id":
                    ids = {p.right.value}
            elif isinstance(p, InList):
                if ast.source == "descriptors" and p.column.name == "comparative_descriptor":
                    ids = set()
                    for v in p.values:
                        ids |= self.store.lookup_by_hash(v.value)
                elif p.column.name == "id":
                    ids = {v.value for v in p.values}
            if ids is not None:
                narrowed = ids if narrowed is None else narrowed & ids
        if narrowed is None:
            return [rid for rid, _ in self.store.rows(ast.source)]
        return sorted(narrowed)

    def _matches(self, pred, row: dict) -> bool:
        if isinstance(pred, Compare):
            if isinstance(pred.left, Column):
                return row[pred.left.name] == pred.right.value
            return self.call(pred.left, row) == pred.right.value
        if isinstance(pred, InList):
            return row[pred.column.name] in {v.value for v in pred.values}
        return bool(self.call(pred.call, row))

    def execute(self, ast: Select) -> ResultSet:
        types = self._column_types(ast)
        self._check(ast, types)
        names = [name for name, _ in SCHEMAS[ast.source][0]]

        columns = []
        for p in ast.projection:
            if isinstance(p, Star):
                columns.extend(names)
            elif isinstance(p, Column):
                columns.append(p.name)
            else:
                columns.append(_print_expr(p))
        result = ResultSet(columns)

        if ast.implicit_source:
            rows = [None]
        else:
            to_row = SCHEMAS[ast.source][1]
            rows = []
            for rid in self._candidates(ast):
                try:
                    rec = self.store.get(ast.source, rid)
                except UnknownRecord:
                    continue
                result.rows_visited += 1
                rows.append(dict(zip(names, to_row(rid, rec))))

        for row in rows:
            if not all(self._matches(p, row) for p in ast.predicates):
                continue
            out = []
            for p in ast.projection:
                if isinstance(p, Star):
                    out.extend(row[n] for n in names)
                elif isinstance(p, Column):
                    out.append(row[p.name])
                else:
                    out.append(self.call(p, row))
            result.rows.append(tuple(out))
        return result


def execute(store: Store, ast: Select, model=None, dictionary=None, extractor=None) -> ResultSet:
    return Executor(store, model, dictionary, extractor).execute(ast)


def render_value(v) -> str:
    """Text form used by the CLI and the line protocol.

    Never returns an empty string, so a row line cannot be mistaken for the
    blank end-of-reply line: lists render as ``[1,2]`` and "" as ``''``.
    """
    if v is None:
        return "NULL"
    if isinstance(v, bytes):
        return v.hex()
    if isinstance(v, (list, tuple)):
        return "[" + ",".join(render_value(x) for x in v) + "]"
    if v == "":
        return "''"
    if isinstance(v, float):
        return repr(v)
    return str(v).replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")
