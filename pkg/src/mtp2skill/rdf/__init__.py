"""Minimal RDF toolkit: terms, an indexed triple store, Turtle I/O and BGP queries."""

from .graph import RdfGraph
from .query import BgpQuery, SolutionTable, TriplePattern, query_bgp
from .terms import (
    XSD_ANYURI,
    XSD_BOOLEAN,
    XSD_DECIMAL,
    XSD_DOUBLE,
    XSD_INTEGER,
    XSD_STRING,
    BNode,
    Iri,
    Literal,
    Namespace,
    Term,
    Triple,
    Variable,
    term_key,
)
from .turtle import parse_turtle, serialize_turtle

__all__ = [
    "BNode",
    "BgpQuery",
    "Iri",
    "Literal",
    "Namespace",
    "RdfGraph",
    "SolutionTable",
    "Term",
    "Triple",
    "TriplePattern",
    "Variable",
    "XSD_ANYURI",
    "XSD_BOOLEAN",
    "XSD_DECIMAL",
    "XSD_DOUBLE",
    "XSD_INTEGER",
    "XSD_STRING",
    "parse_turtle",
    "query_bgp",
    "serialize_turtle",
    "term_key",
]
