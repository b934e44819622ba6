"""Deterministic Turtle writer and a parser for the same restricted profile.

Output ordering: subjects, then predicates within a subject, then objects
within a predicate, all by :func:`term_key`. Prefix lines come first in a
fixed order (see ``PREFIX_ORDER``), remaining prefixes follow by name.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator

from ..errors import TurtleSyntax
from .graph import RdfGraph
from .terms import (
    RDF_NS,
    XSD_BOOLEAN,
    XSD_DECIMAL,
    XSD_DOUBLE,
    XSD_INTEGER,
    XSD_STRING,
    BNode,
    Iri,
    Literal,
    Term,
    Variable,
    is_absolute_iri,
    term_key,
)

PREFIX_ORDER = ("cap", "vdi3682", "vdi2206", "isa88", "din61360", "opcua", "rdf", "rdfs", "xsd")
RDF_TYPE = Iri(RDF_NS + "type")

_LOCAL_RE = re.compile(r"^[A-Za-z0-9_](?:[A-Za-z0-9_-]*)$")
_PREFIX_RE = re.compile(r"^(?:[A-Za-z][A-Za-z0-9_-]*)?$")

# -- writing ------------------------------------------------------------------


def _ordered_prefixes(prefixes: dict[str, str]) -> list[tuple[str, str]]:
    fixed = [(p, prefixes[p]) for p in PREFIX_ORDER if p in prefixes]
    rest = sorted((p, ns) for p, ns in prefixes.items() if p not in PREFIX_ORDER)
    return fixed + rest


def _escape(text: str) -> str:
    out = []
    for ch in text:
        if ch == "\\":
            out.append("\\\\")
        elif ch == '"':
            out.append('\\"')
        elif ch == "\n":
            out.append("\\n")
        elif ch == "\r":
            out.append("\\r")
        elif ch == "\t":
            out.append("\\t")
        elif ord(ch) < 0x20 or ord(ch) == 0x7F:
            out.append(f"\\u{ord(ch):04X}")
        else:
            out.append(ch)
    return "".join(out)


class _Compactor:
    def __init__(self, prefixes: dict[str, str]) -> None:
        # longest namespace first so the most specific prefix wins
        self._table = sorted(prefixes.items(), key=lambda kv: (-len(kv[1]), kv[0]))

    def iri(self, iri: Iri) -> str:
        for prefix, ns in self._table:
            if iri.value.startswith(ns):
                local = iri.value[len(ns):]
                if local == "" or _LOCAL_RE.match(local):
                    return f"{prefix}:{local}"
        return f"<{iri.value}>"

    def term(self, term: Term) -> str:
        if isinstance(term, Iri):
            return self.iri(term)
        if isinstance(term, BNode):
            return f"_:{term.label}"
        text = f'"{_escape(term.lexical)}"'
        if term.datatype == XSD_STRING:
            return text
        return f"{text}^^{self.iri(term.datatype)}"


def serialize_turtle(graph: RdfGraph) -> str:
    """Render ``graph`` as Turtle. Identical graphs give identical text."""
    prefixes = _ordered_prefixes(graph.prefixes)
    c = _Compactor(graph.prefixes)
    lines = [f"@prefix {p}: <{ns}> ." for p, ns in prefixes]
    by_subject: dict = {}
    for s, p, o in graph:
        by_subject.setdefault(s, {}).setdefault(p, []).append(o)
    for s in sorted(by_subject, key=term_key):
        lines.append("")
        lines.append(c.term(s))
        preds = sorted(by_subject[s], key=term_key)
        for i, p in enumerate(preds):
            objs = ", ".join(c.term(o) for o in sorted(by_subject[s][p], key=term_key))
            verb = "a" if p == RDF_TYPE else c.iri(p)
            end = " ." if i == len(preds) - 1 else " ;"
            lines.append(f"    {verb} {objs}{end}")
    return "\n".join(lines) + "\n"


# -- tokenizing ---------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>\#[^\n]*)
  | (?P<iri><[^<>"{}|^`\\\s]*>)
  | (?P<long>\"\"\"(?:[^"\\]|\\.|"(?!""))*\"\"\")
  | (?P<string>"(?:[^"\\\n\r]|\\.)*")
  | (?P<dtype>\^\^)
  | (?P<lang>@[A-Za-z]+(?:-[A-Za-z0-9]+)*)
  | (?P<var>\?[A-Za-z_][A-Za-z0-9_]*)
  | (?P<bnode>_:[A-Za-z0-9_](?:[A-Za-z0-9_.-]*[A-Za-z0-9_-])?)
  | (?P<number>[+-]?(?:[0-9]+\.[0-9]*[eE][+-]?[0-9]+|\.[0-9]+[eE][+-]?[0-9]+|[0-9]+[eE][+-]?[0-9]+|[0-9]*\.[0-9]+|[0-9]+))
  | (?P<pname>(?:[A-Za-z][A-Za-z0-9_-]*)?:(?:[A-Za-z0-9_](?:[A-Za-z0-9_.-]*[A-Za-z0-9_-])?)?)
  | (?P<word>[A-Za-z]+)
  | (?P<punct>[.;,\[\]()])
    """,
    re.VERBOSE,
)

_ESCAPES = {"t": "\t", "b": "\b", "n": "\n", "r": "\r", "f": "\f", '"': '"', "'": "'", "\\": "\\"}


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int


def tokenize(text: str) -> Iterator[Token]:
    pos, line = 0, 1
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise TurtleSyntax(f"unexpected character {text[pos]!r}", line)
        kind = m.lastgroup or ""
        chunk = m.group()
        if kind not in ("ws", "comment"):
            yield Token(kind, chunk, line)
        line += chunk.count("\n")
        pos = m.end()


def _unescape(body: str, line: int) -> str:
    out, i = [], 0
    while i < len(body):
        ch = body[i]
        if ch != "\\":
            out.append(ch)
            i += 1
            continue
        nxt = body[i + 1 : i + 2]
        if nxt in _ESCAPES:
            out.append(_ESCAPES[nxt])
            i += 2
        elif nxt in ("u", "U"):
            width = 4 if nxt == "u" else 8
            digits = body[i + 2 : i + 2 + width]
            if len(digits) != width or not all(c in "0123456789abcdefABCDEF" for c in digits):
                raise TurtleSyntax("bad unicode escape", line)
            out.append(chr(int(digits, 16)))
            i += 2 + width
        else:
            raise TurtleSyntax(f"bad escape sequence \\{nxt}", line)
    return "".join(out)


# -- parsing ------------------------------------------------------------------


class _Parser:
    def __init__(self, text: str, prefixes: dict[str, str] | None = None, allow_vars: bool = False):
        self.tokens = list(tokenize(text))
        self.pos = 0
        self.prefixes: dict[str, str] = dict(prefixes or {})
        self.allow_vars = allow_vars
        self.triples: list[tuple] = []

    def peek(self) -> Token | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self) -> Token:
        tok = self.peek()
        if tok is None:
            last = self.tokens[-1].line if self.tokens else 1
            raise TurtleSyntax("unexpected end of input", last)
        self.pos += 1
        return tok

    def expect(self, kind: str, text: str | None = None) -> Token:
        tok = self.next()
        if tok.kind != kind or (text is not None and tok.text != text):
            want = text or kind
            raise TurtleSyntax(f"expected {want!r}, found {tok.text!r}", tok.line)
        return tok

    def iri_of(self, tok: Token) -> Iri:
        if tok.kind == "iri":
            value = tok.text[1:-1]
        elif tok.kind == "pname":
            prefix, local = tok.text.split(":", 1)
            if prefix not in self.prefixes:
                raise TurtleSyntax(f"undefined prefix {prefix!r}", tok.line)
            value = self.prefixes[prefix] + local
        else:
            raise TurtleSyntax(f"expected an IRI, found {tok.text!r}", tok.line)
        if not is_absolute_iri(value):
            raise TurtleSyntax(f"relative or malformed IRI <{value}>", tok.line)
        return Iri(value)

    def parse(self) -> list[tuple]:
        while self.peek() is not None:
            tok = self.peek()
            assert tok is not None
            if tok.kind == "lang" and tok.text == "@prefix":
                self.next()
                self.prefix_decl()
                self.expect("punct", ".")
            elif tok.kind == "word" and tok.text.upper() == "PREFIX":
                self.next()
                self.prefix_decl()
            elif tok.kind == "lang" and tok.text == "@base" or (
                tok.kind == "word" and tok.text.upper() == "BASE"
            ):
                raise TurtleSyntax("@base is not supported", tok.line)
            else:
                self.statement()
        return self.triples

    def prefix_decl(self) -> None:
        tok = self.expect("pname")
        prefix, local = tok.text.split(":", 1)
        if local:
            raise TurtleSyntax(f"bad prefix name {tok.text!r}", tok.line)
        ns_tok = self.expect("iri")
        self.prefixes[prefix] = ns_tok.text[1:-1]

    def statement(self) -> None:
        subject = self.subject()
        self.predicate_object_list(subject)
        self.expect("punct", ".")

    def subject(self):
        tok = self.next()
        if tok.kind in ("iri", "pname"):
            return self.iri_of(tok)
        if tok.kind == "bnode":
            return BNode(tok.text[2:])
        if tok.kind == "var" and self.allow_vars:
            return Variable(tok.text[1:])
        raise TurtleSyntax(f"expected a subject, found {tok.text!r}", tok.line)

    def verb(self):
        tok = self.next()
        if tok.kind == "word" and tok.text == "a":
            return RDF_TYPE
        if tok.kind == "var" and self.allow_vars:
            return Variable(tok.text[1:])
        return self.iri_of(tok)

    def predicate_object_list(self, subject) -> None:
        while True:
            predicate = self.verb()
            while True:
                self.triples.append((subject, predicate, self.object()))
                tok = self.peek()
                if tok is not None and tok.kind == "punct" and tok.text == ",":
                    self.next()
                    continue
                break
            tok = self.peek()
            if tok is not None and tok.kind == "punct" and tok.text == ";":
                while tok is not None and tok.kind == "punct" and tok.text == ";":
                    self.next()
                    tok = self.peek()
                if tok is None or (tok.kind == "punct" and tok.text in ".]"):
                    return
                continue
            return

    def object(self):
        tok = self.next()
        if tok.kind in ("iri", "pname"):
            return self.iri_of(tok)
        if tok.kind == "bnode":
            return BNode(tok.text[2:])
        if tok.kind == "var" and self.allow_vars:
            return Variable(tok.text[1:])
        if tok.kind in ("string", "long"):
            body = tok.text[3:-3] if tok.kind == "long" else tok.text[1:-1]
            lexical = _unescape(body, tok.line)
            nxt = self.peek()
            if nxt is not None and nxt.kind == "dtype":
                self.next()
                return Literal(lexical, self.iri_of(self.next()))
            if nxt is not None and nxt.kind == "lang":
                raise TurtleSyntax("language-tagged literals are not supported", nxt.line)
            return Literal(lexical)
        if tok.kind == "number":
            text = tok.text
            if "e" in text.lower():
                return Literal(text, XSD_DOUBLE)
            if "." in text:
                return Literal(text, XSD_DECIMAL)
            return Literal(text, XSD_INTEGER)
        if tok.kind == "word" and tok.text in ("true", "false"):
            return Literal(tok.text, XSD_BOOLEAN)
        raise TurtleSyntax(f"expected an object, found {tok.text!r}", tok.line)


def parse_turtle(text: str, graph: RdfGraph | None = None) -> RdfGraph:
    """Parse the Turtle profile written by :func:`serialize_turtle`.

    Also accepts bare numbers and booleans, ``_:`` blank nodes, ``PREFIX``
    lines and long strings. Collections, ``[ ]`` blocks, ``@base`` and
    language tags raise :class:`TurtleSyntax`.
    """
    g = graph if graph is not None else RdfGraph()
    parser = _Parser(text)
    triples = parser.parse()
    for prefix, ns in parser.prefixes.items():
        g.prefixes[prefix] = ns
    g.add_all(triples)
    return g


def parse_patterns(text: str, prefixes: dict[str, str]) -> list[tuple]:
    """Parse Turtle-like triple patterns in which ``?name`` variables are allowed."""
    parser = _Parser(text, prefixes=prefixes, allow_vars=True)
    return parser.parse()
