"""In-memory triple store with set semantics."""

from __future__ import annotations

from typing import Iterable, Iterator

from ..errors import PrefixConflict
from .terms import RDF_NS, RDFS_NS, XSD_NS, Iri, Subject, Term, Triple, make_triple, term_key

DEFAULT_PREFIXES = {"rdf": RDF_NS, "rdfs": RDFS_NS, "xsd": XSD_NS}


class RdfGraph:
    """A set of triples plus a prefix map.

    Three nested-dict indexes (spo, pos, osp) back pattern lookups. Readers may
    share a graph freely; mutation needs exclusive access.
    """

    def __init__(self, triples: Iterable[Triple] = (), base: str | None = None) -> None:
        self.prefixes: dict[str, str] = dict(DEFAULT_PREFIXES)
        self.base = base
        self._spo: dict[Subject, dict[Iri, set[Term]]] = {}
        self._pos: dict[Iri, dict[Term, set[Subject]]] = {}
        self._osp: dict[Term, dict[Subject, set[Iri]]] = {}
        self._size = 0
        for t in triples:
            self.add(t)

    # -- mutation -------------------------------------------------------------

    def add(self, triple: Triple | tuple) -> "RdfGraph":
        s, p, o = make_triple(*triple)
        objs = self._spo.setdefault(s, {}).setdefault(p, set())
        if o in objs:
            return self
        objs.add(o)
        self._pos.setdefault(p, {}).setdefault(o, set()).add(s)
        self._osp.setdefault(o, {}).setdefault(s, set()).add(p)
        self._size += 1
        return self

    def add_all(self, triples: Iterable[Triple | tuple]) -> "RdfGraph":
        for t in triples:
            self.add(t)
        return self

    def remove(self, triple: Triple | tuple) -> bool:
        s, p, o = triple
        objs = self._spo.get(s, {}).get(p)
        if not objs or o not in objs:
            return False
        objs.discard(o)
        if not objs:
            del self._spo[s][p]
            if not self._spo[s]:
                del self._spo[s]
        subs = self._pos[p][o]
        subs.discard(s)
        if not subs:
            del self._pos[p][o]
            if not self._pos[p]:
                del self._pos[p]
        preds = self._osp[o][s]
        preds.discard(p)
        if not preds:
            del self._osp[o][s]
            if not self._osp[o]:
                del self._osp[o]
        self._size -= 1
        return True

    def bind(self, prefix: str, namespace: str) -> None:
        current = self.prefixes.get(prefix)
        if current is not None and current != namespace:
            raise PrefixConflict(
                f"prefix {prefix!r} already bound to <{current}>, not <{namespace}>"
            )
        self.prefixes[prefix] = namespace

    # -- access ---------------------------------------------------------------

    def __len__(self) -> int:
        return self._size

    def __iter__(self) -> Iterator[Triple]:
        return self.triples()

    def __contains__(self, triple: object) -> bool:
        try:
            s, p, o = triple  # type: ignore[misc]
        except (TypeError, ValueError):
            return False
        return o in self._spo.get(s, {}).get(p, ())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RdfGraph):
            return NotImplemented
        return len(self) == len(other) and all(t in other for t in self)

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"<RdfGraph {self._size} triples>"

    def triples(
        self, s: Subject | None = None, p: Iri | None = None, o: Term | None = None
    ) -> Iterator[Triple]:
        """Triples matching a pattern; ``None`` is a wildcard."""
        if s is not None:
            by_p = self._spo.get(s)
            if not by_p:
                return
            preds = [p] if p is not None else list(by_p)
            for pred in preds:
                objs = by_p.get(pred)
                if not objs:
                    continue
                if o is not None:
                    if o in objs:
                        yield Triple(s, pred, o)
                else:
                    for obj in list(objs):
                        yield Triple(s, pred, obj)
        elif p is not None:
            by_o = self._pos.get(p)
            if not by_o:
                return
            objs = [o] if o is not None else list(by_o)
            for obj in objs:
                for sub in list(by_o.get(obj, ())):
                    yield Triple(sub, p, obj)
        elif o is not None:
            for sub, preds in list(self._osp.get(o, {}).items()):
                for pred in list(preds):
                    yield Triple(sub, pred, o)
        else:
            for sub, by_p in list(self._spo.items()):
                for pred, objs in list(by_p.items()):
                    for obj in list(objs):
                        yield Triple(sub, pred, obj)

    def subjects(self, p: Iri | None = None, o: Term | None = None) -> set[Subject]:
        return {t.subject for t in self.triples(None, p, o)}

    def objects(self, s: Subject | None = None, p: Iri | None = None) -> set[Term]:
        return {t.object for t in self.triples(s, p, None)}

    def value(self, s: Subject, p: Iri) -> Term | None:
        """The single object of ``(s, p, ?)``, or None; ties resolve to the smallest."""
        objs = self._spo.get(s, {}).get(p)
        if not objs:
            return None
        return min(objs, key=term_key)

    def predicates(self) -> set[Iri]:
        return set(self._pos)

    def copy(self) -> "RdfGraph":
        g = RdfGraph(self, base=self.base)
        g.prefixes = dict(self.prefixes)
        return g
