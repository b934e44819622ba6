"""Basic graph pattern evaluation (conjunctive queries, no OPTIONAL/UNION)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Mapping, Union

from .graph import RdfGraph
from .terms import Iri, Term, Variable, term_key
from .turtle import parse_patterns

PatternTerm = Union[Term, Variable]


@dataclass(frozen=True)
class TriplePattern:
    subject: PatternTerm
    predicate: PatternTerm
    object: PatternTerm

    def variables(self) -> set[str]:
        return {t.name for t in (self.subject, self.predicate, self.object) if isinstance(t, Variable)}


@dataclass(frozen=True)
class BgpQuery:
    patterns: tuple[TriplePattern, ...]
    projection: tuple[str, ...]
    distinct: bool = False
    # equality constraints on bound variables; the only FILTER form supported
    filters: tuple[tuple[str, Term], ...] = ()

    def __post_init__(self) -> None:
        known = set().union(*(p.variables() for p in self.patterns)) if self.patterns else set()
        missing = [v for v in self.projection if v not in known]
        if missing:
            raise ValueError(f"projected variables {missing} occur in no pattern")
        missing = [v for v, _ in self.filters if v not in known]
        if missing:
            raise ValueError(f"filtered variables {missing} occur in no pattern")

    @classmethod
    def parse(
        cls,
        where: str,
        select: tuple[str, ...] | list[str],
        prefixes: Mapping[str, str],
        distinct: bool = False,
    ) -> "BgpQuery":
        """Build a query from Turtle-style patterns, e.g. ``?s a cap:Skill .``"""
        patterns = tuple(TriplePattern(*t) for t in parse_patterns(where, dict(prefixes)))
        return cls(patterns, tuple(v.lstrip("?") for v in select), distinct)

    def variables(self) -> set[str]:
        return set().union(*(p.variables() for p in self.patterns)) if self.patterns else set()


@dataclass
class SolutionTable:
    variables: tuple[str, ...]
    rows: list[tuple[Term, ...]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self) -> Iterator[tuple[Term, ...]]:
        return iter(self.rows)

    def column(self, name: str) -> list[Term]:
        idx = self.variables.index(name)
        return [row[idx] for row in self.rows]

    def as_dicts(self) -> list[dict[str, Term]]:
        return [dict(zip(self.variables, row)) for row in self.rows]


Binding = dict[str, Term]


def _resolve(term: PatternTerm, binding: Binding) -> PatternTerm:
    if isinstance(term, Variable):
        return binding.get(term.name, term)
    return term


def _bound_count(pattern: TriplePattern, bound: set[str]) -> int:
    n = 0
    for t in (pattern.subject, pattern.predicate, pattern.object):
        if not isinstance(t, Variable) or t.name in bound:
            n += 1
    return n


def _plan(patterns: tuple[TriplePattern, ...], bound: set[str]) -> list[TriplePattern]:
    """Greedy join order: always take the pattern with the most bound positions next."""
    remaining = list(patterns)
    bound = set(bound)
    order = []
    while remaining:
        best = max(
            range(len(remaining)),
            key=lambda i: (_bound_count(remaining[i], bound), -i),
        )
        pat = remaining.pop(best)
        order.append(pat)
        bound |= pat.variables()
    return order


def _extend(binding: Binding, pattern: TriplePattern, triple: tuple) -> Binding | None:
    out = dict(binding)
    for pt, value in zip((pattern.subject, pattern.predicate, pattern.object), triple):
        if isinstance(pt, Variable):
            seen = out.get(pt.name)
            if seen is None:
                out[pt.name] = value
            elif seen != value:
                return None
    return out


def _match(graph: RdfGraph, pattern: TriplePattern, binding: Binding) -> Iterator[Binding]:
    s = _resolve(pattern.subject, binding)
    p = _resolve(pattern.predicate, binding)
    o = _resolve(pattern.object, binding)
    if not isinstance(p, (Iri, Variable)):
        return
    for triple in graph.triples(
        None if isinstance(s, Variable) else s,
        None if isinstance(p, Variable) else p,
        None if isinstance(o, Variable) else o,
    ):
        extended = _extend(binding, pattern, triple)
        if extended is not None:
            yield extended


def query_bgp(
    graph: RdfGraph, query: BgpQuery, bindings: Mapping[str, Term] | None = None
) -> SolutionTable:
    """All solutions of ``query`` over ``graph``, sorted by the projected terms.

    ``bindings`` pre-binds variables (input slots). An empty pattern list has
    exactly one solution, the initial binding.
    """
    initial: Binding = dict(bindings or {})
    solutions = [initial]
    for pattern in _plan(query.patterns, set(initial)):
        solutions = [ext for sol in solutions for ext in _match(graph, pattern, sol)]
        if not solutions:
            break
    for name, value in query.filters:
        solutions = [s for s in solutions if s.get(name) == value]
    rows = [tuple(sol[v] for v in query.projection) for sol in solutions]
    if query.distinct:
        rows = list(dict.fromkeys(rows))
    rows.sort(key=lambda row: tuple(term_key(t) for t in row))
    return SolutionTable(query.projection, rows)
