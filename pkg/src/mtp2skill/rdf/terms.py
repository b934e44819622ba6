"""RDF term types."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import NamedTuple, Union

_SCHEME_RE = re.compile(r"^[A-Za-z][A-Za-z0-9+.-]*:\S*$")
_FORBIDDEN_RE = re.compile(r'[<>"{}|^`\\]')

XSD_NS = "http://www.w3.org/2001/XMLSchema#"
RDF_NS = "http://www.w3.org/1999/02/22-rdf-syntax-ns#"
RDFS_NS = "http://www.w3.org/2000/01/rdf-schema#"


def is_absolute_iri(value: str) -> bool:
    return bool(_SCHEME_RE.match(value)) and not _FORBIDDEN_RE.search(value)


@dataclass(frozen=True, order=True)
class Iri:
    value: str

    def __post_init__(self) -> None:
        if not is_absolute_iri(self.value):
            raise ValueError(f"not an absolute IRI: {self.value!r}")

    def __str__(self) -> str:
        return self.value


XSD_STRING = Iri(XSD_NS + "string")
XSD_INTEGER = Iri(XSD_NS + "integer")
XSD_DOUBLE = Iri(XSD_NS + "double")
XSD_DECIMAL = Iri(XSD_NS + "decimal")
XSD_BOOLEAN = Iri(XSD_NS + "boolean")
XSD_ANYURI = Iri(XSD_NS + "anyURI")


@dataclass(frozen=True)
class Literal:
    lexical: str
    datatype: Iri = XSD_STRING

    @classmethod
    def of(cls, value: object) -> "Literal":
        """Literal from a Python value; bool/int/float pick their XSD datatype."""
        if isinstance(value, bool):
            return cls("true" if value else "false", XSD_BOOLEAN)
        if isinstance(value, int):
            return cls(str(value), XSD_INTEGER)
        if isinstance(value, float):
            return cls(repr(value), XSD_DOUBLE)
        return cls(str(value))

    def to_python(self) -> object:
        if self.datatype == XSD_INTEGER:
            return int(self.lexical)
        if self.datatype in (XSD_DOUBLE, XSD_DECIMAL):
            return float(self.lexical)
        if self.datatype == XSD_BOOLEAN:
            return self.lexical.strip().lower() in ("true", "1")
        return self.lexical

    def __str__(self) -> str:
        return self.lexical


@dataclass(frozen=True)
class BNode:
    label: str

    def __str__(self) -> str:
        return f"_:{self.label}"


@dataclass(frozen=True)
class Variable:
    name: str

    def __str__(self) -> str:
        return f"?{self.name}"


Term = Union[Iri, Literal, BNode]
Subject = Union[Iri, BNode]


class Triple(NamedTuple):
    subject: Subject
    predicate: Iri
    object: Term


def term_key(term: Term) -> tuple:
    """Total order over terms: IRIs, then blank nodes, then literals."""
    if isinstance(term, Iri):
        return (0, term.value, "")
    if isinstance(term, BNode):
        return (1, term.label, "")
    return (2, term.lexical, term.datatype.value)


def make_triple(s: Subject, p: Iri, o: Term) -> Triple:
    if not isinstance(s, (Iri, BNode)):
        raise TypeError(f"triple subject must be an IRI or blank node, got {s!r}")
    if not isinstance(p, Iri):
        raise TypeError(f"triple predicate must be an IRI, got {p!r}")
    if not isinstance(o, (Iri, BNode, Literal)):
        raise TypeError(f"triple object must be an RDF term, got {o!r}")
    return Triple(s, p, o)


class Namespace:
    """IRI factory for one vocabulary namespace.

    With ``terms`` given the namespace is closed: asking for a name outside
    the list raises ``AttributeError``, which catches vocabulary typos early.
    """

    def __init__(self, base: str, terms: tuple[str, ...] | None = None) -> None:
        self.base = base
        self._terms = frozenset(terms) if terms is not None else None
        self._cache: dict[str, Iri] = {}

    def term(self, name: str) -> Iri:
        iri = self._cache.get(name)
        if iri is None:
            if self._terms is not None and name not in self._terms:
                raise AttributeError(f"{name!r} is not a term of <{self.base}>")
            iri = self._cache[name] = Iri(self.base + name)
        return iri

    def __getattr__(self, name: str) -> Iri:
        if name.startswith("_"):
            raise AttributeError(name)
        return self.term(name)

    def __getitem__(self, name: str) -> Iri:
        return self.term(name)

    def __contains__(self, iri: object) -> bool:
        if not isinstance(iri, Iri) or not iri.value.startswith(self.base):
            return False
        return self._terms is None or iri.value[len(self.base):] in self._terms

    def all_terms(self) -> list[Iri]:
        return [Iri(self.base + t) for t in sorted(self._terms or ())]

    def __repr__(self) -> str:
        return f"Namespace({self.base!r})"
