"""Competency questions over a converted graph and completeness validation.

Each question is a basic graph pattern with declared input slots. The
validator derives expected answers from the source document, so it works on
any MTP rather than on hand-written numbers for one fixture.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping

from .aml import AmlDocument, Element, attribute_value, lookup_attribute, opcua_ref_of, resolve_ref_id
from .errors import AmbiguousRef, CqError, IncompleteOpcUaItem, MissingBinding, RefNotFound, UnknownCq
from .mapping import ConversionResult
from .rdf import BgpQuery, Iri, Literal, RdfGraph, SolutionTable, query_bgp
from .rdf.terms import XSD_INTEGER, Term
from .rdf.turtle import _Compactor
from .vocab import PREFIXES, StateMachineTemplate, default_state_machine_template

IRI_SLOT, INT_SLOT, STRING_SLOT = "iri", "int", "string"


@dataclass(frozen=True)
class CompetencyQuestion:
    id: str
    description: str
    query: BgpQuery
    slots: tuple[tuple[str, str], ...]  # (variable, kind)

    def __post_init__(self) -> None:
        if not self.query.projection:
            raise ValueError(f"{self.id}: empty projection")
        known = self.query.variables()
        for name, _ in self.slots:
            if name not in known:
                raise ValueError(f"{self.id}: slot ?{name} occurs in no pattern")


_STATE_OF_VALUE = """
    ?skill cap:hasCurrentStateOutput ?output .
    ?output a cap:CurrentStateOutput .
    ?skill cap:behaviorConformsTo ?sm .
    ?sm a isa88:StateMachine .
    ?sm isa88:hasState ?state .
    ?state a isa88:State .
    ?state rdfs:label ?state_name .
    ?state din61360:hasDataElement ?state_de .
    ?output din61360:hasDataElement ?state_de .
    ?state_de a din61360:DataElement .
    ?state_de din61360:hasTypeDescription cap:CurrentStateOutput_TD .
    ?state_de din61360:hasInstanceDescription ?state_id .
    ?state_id a din61360:InstanceDescription .
    ?state_id din61360:expressionGoal "Assurance" .
    ?state_id din61360:logicInterpretation "Equal" .
    ?state_id din61360:hasValue ?value .
"""

_COMMAND_OF_TRANSITION = """
    ?skill cap:hasSkillCommand ?command .
    ?command a cap:SkillCommand .
    ?sm isa88:hasTransition ?transition_iri .
    ?transition_iri a isa88:Transition .
    ?transition_iri din61360:hasDataElement ?cmd_de .
    ?command din61360:hasDataElement ?cmd_de .
    ?cmd_de a din61360:DataElement .
    ?cmd_de din61360:hasTypeDescription cap:SkillCommandVariable_TD .
    ?cmd_de din61360:hasInstanceDescription ?cmd_id .
    ?cmd_id a din61360:InstanceDescription .
    ?cmd_id din61360:expressionGoal "Requirement" .
    ?cmd_id din61360:logicInterpretation "Equal" .
    ?cmd_id din61360:hasValue ?command_value .
"""

_DEFINITIONS = (
    (
        "CQ1",
        "Which components belong to module ?module?",
        """
        ?module vdi2206:hasComponent ?component .
        ?component a ?type .
        ?component rdfs:label ?name .
        """,
        ("component", "type", "name"),
        (("module", IRI_SLOT),),
        False,
    ),
    (
        "CQ2",
        "Which state of skill ?skill does the StateCur value ?value denote?",
        _STATE_OF_VALUE,
        ("state", "state_name"),
        (("skill", IRI_SLOT), ("value", INT_SLOT)),
        False,
    ),
    (
        "CQ3",
        "Which capabilities does module ?module offer?",
        """
        ?module cap:hasCapability ?capability .
        ?capability a cap:Capability .
        ?capability a vdi3682:Process .
        ?capability rdfs:label ?name .
        """,
        ("capability", "name"),
        (("module", IRI_SLOT),),
        False,
    ),
    (
        "CQ4",
        "Which skills realize capability ?capability?",
        """
        ?capability cap:isExecutableViaOpcUaSkill ?skill .
        ?skill a cap:OpcUaVariableSkill .
        ?module cap:providesSkill ?skill .
        ?skill rdfs:label ?name .
        """,
        ("skill", "name"),
        (("capability", IRI_SLOT),),
        False,
    ),
    (
        "CQ5",
        "Which parameters does skill ?skill take, with value, range and unit?",
        """
        ?skill cap:hasSkillParameter ?parameter .
        ?parameter a cap:SkillParameter .
        ?parameter rdfs:label ?name .
        ?parameter cap:parameterKind ?kind .
        ?parameter cap:parameterValue ?default .
        ?parameter cap:minValue ?min .
        ?parameter cap:maxValue ?max .
        ?parameter cap:unit ?unit .
        """,
        ("name", "kind", "default", "min", "max", "unit"),
        (("skill", IRI_SLOT),),
        False,
    ),
    (
        "CQ6",
        "Which command value fires transition ?transition of skill ?skill?",
        """
        ?skill cap:behaviorConformsTo ?sm .
        ?transition_iri rdfs:label ?transition .
        """
        + _COMMAND_OF_TRANSITION,
        ("command_value",),
        (("skill", IRI_SLOT), ("transition", STRING_SLOT)),
        True,
    ),
    (
        "CQ7",
        "Under which endpoint and node is the command variable of skill ?skill served?",
        """
        ?skill cap:hasSkillCommand ?command .
        ?command cap:hasUaVariable ?variable .
        ?variable a opcua:UaVariable .
        ?variable opcua:nodeNamespace ?namespace .
        ?variable opcua:nodeIdentifier ?identifier .
        ?variable opcua:accessLevel ?access .
        ?nodeset opcua:hasNode ?variable .
        ?nodeset a opcua:UaNodeSet .
        ?server opcua:hasNodeSet ?nodeset .
        ?server a opcua:UaServer .
        ?server opcua:endpointUrl ?endpoint .
        """,
        ("endpoint", "namespace", "identifier", "access"),
        (("skill", IRI_SLOT),),
        False,
    ),
    (
        "CQ8",
        "Which outputs does skill ?skill deliver?",
        """
        ?skill cap:hasSkillOutput ?output .
        ?output a cap:SkillOutput .
        ?output rdfs:label ?name .
        """,
        ("output", "name"),
        (("skill", IRI_SLOT),),
        False,
    ),
    (
        "CQ9",
        "Which transitions can be commanded from the current state ?value of skill ?skill?",
        _STATE_OF_VALUE
        + """
        ?transition_iri isa88:fromState ?state .
        ?transition_iri rdfs:label ?transition .
        ?transition_iri isa88:toState ?target .
        ?target rdfs:label ?target_name .
        """
        + _COMMAND_OF_TRANSITION,
        ("transition", "command_value", "target_name"),
        (("skill", IRI_SLOT), ("value", INT_SLOT)),
        True,
    ),
)


def list_cqs() -> list[CompetencyQuestion]:
    return [
        CompetencyQuestion(cq_id, text, BgpQuery.parse(where, select, PREFIXES, distinct), slots)
        for cq_id, text, where, select, slots, distinct in _DEFINITIONS
    ]


_BY_ID = {cq.id: cq for cq in list_cqs()}


def get_cq(cq_id: str) -> CompetencyQuestion:
    try:
        return _BY_ID[cq_id.strip().upper()]
    except KeyError:
        raise UnknownCq(f"unknown competency question {cq_id!r}; known: {', '.join(_BY_ID)}") from None


def _coerce(graph: RdfGraph, cq: CompetencyQuestion, name: str, kind: str, value: object) -> Term:
    if kind == IRI_SLOT:
        if isinstance(value, Iri):
            return value
        text = str(value).strip().strip("<>")
        prefix, sep, local = text.partition(":")
        if sep and prefix in graph.prefixes and not local.startswith("//"):
            return Iri(graph.prefixes[prefix] + local)
        try:
            return Iri(text)
        except ValueError:
            raise CqError(f"{cq.id}: ?{name} needs an IRI, got {value!r}") from None
    if kind == INT_SLOT:
        if isinstance(value, Literal):
            value = value.lexical
        try:
            return Literal(str(int(str(value).strip())), XSD_INTEGER)
        except ValueError:
            raise CqError(f"{cq.id}: ?{name} needs an integer, got {value!r}") from None
    return value if isinstance(value, Literal) else Literal(str(value))


def run_cq(graph: RdfGraph, cq_id: str, bindings: Mapping[str, object]) -> SolutionTable:
    cq = get_cq(cq_id)
    declared = dict(cq.slots)
    undeclared = sorted(set(bindings) - set(declared))
    if undeclared:
        raise CqError(f"{cq.id} has no slot(s) {', '.join(undeclared)}; slots: {', '.join(declared)}")
    missing = [name for name in declared if name not in bindings]
    if missing:
        raise MissingBinding(f"{cq.id} needs binding(s) for {', '.join(missing)}")
    initial = {name: _coerce(graph, cq, name, declared[name], bindings[name]) for name in declared}
    return query_bgp(graph, cq.query, initial)


def format_table(graph: RdfGraph, table: SolutionTable) -> str:
    """Tab-separated rendering with a header line; IRIs compacted with the graph's prefixes."""
    c = _Compactor(graph.prefixes)

    def cell(t: Term) -> str:
        return c.iri(t) if isinstance(t, Iri) else t.lexical if isinstance(t, Literal) else str(t)

    lines = ["\t".join(table.variables)]
    lines += ["\t".join(cell(t) for t in row) for row in table.rows]
    return "\n".join(lines) + "\n"


# -- validation ---------------------------------------------------------------


@dataclass
class CqResult:
    id: str
    description: str
    expected: list[str] = field(default_factory=list)
    actual: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.expected == self.actual

    @property
    def missing(self) -> list[str]:
        rest = list(self.actual)
        out = []
        for e in self.expected:
            if e in rest:
                rest.remove(e)
            else:
                out.append(e)
        return out

    @property
    def unexpected(self) -> list[str]:
        rest = list(self.expected)
        out = []
        for a in self.actual:
            if a in rest:
                rest.remove(a)
            else:
                out.append(a)
        return out

    def add(self, expected: list[str], actual: list[str]) -> None:
        self.expected.extend(expected)
        self.actual.extend(actual)
        self.expected.sort()
        self.actual.sort()


@dataclass
class ValidationReport:
    results: list[CqResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def failing(self) -> list[str]:
        return [r.id for r in self.results if not r.passed]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "cqs": [
                {
                    "id": r.id,
                    "status": "pass" if r.passed else "fail",
                    "expected": r.expected,
                    "actual": r.actual,
                }
                for r in self.results
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_text(self) -> str:
        lines = []
        for r in self.results:
            status = "PASS" if r.passed else "FAIL"
            lines.append(f"{r.id} {status}  {r.description} ({len(r.actual)}/{len(r.expected)} rows)")
            if not r.passed:
                for m in r.missing:
                    lines.append(f"    missing:    {m}")
                for u in r.unexpected:
                    lines.append(f"    unexpected: {u}")
        lines.append("overall: " + ("PASS" if self.passed else "FAIL " + ", ".join(self.failing())))
        return "\n".join(lines) + "\n"


def _lex(t: Term) -> str:
    return t.lexical if isinstance(t, Literal) else str(t)


def _value(el: Element, name: str) -> str | None:
    v = attribute_value(el, name)
    return v.strip() if v is not None else None


def _join(doc: AmlDocument, el: Element, suc: str) -> Element | None:
    ref = attribute_value(el, "RefID")
    if not ref:
        return None
    try:
        return resolve_ref_id(doc, ref, suc)
    except (RefNotFound, AmbiguousRef):
        return None


def _module_name(doc: AmlDocument, el: Element, default: str | None) -> str | None:
    for anc in el.ancestors():
        if anc.suc_class == "ModuleTypePackage":
            return anc.name
    return default


class _Expectations:
    """Answers the source document implies for each competency question."""

    def __init__(self, doc: AmlDocument) -> None:
        self.doc = doc
        modules = [e for e in doc.iter() if e.suc_class == "ModuleTypePackage"]
        self.module = modules[0].name if modules else None
        servers = [e for e in doc.iter() if e.suc_class == "OPCUAServer"]
        self.endpoint = _value(servers[0], "Endpoint") if servers else None

    def components(self, module: str) -> list[str]:
        kinds = {"IndicatorElement": "vdi2206:Sensor", "ActiveElement": "vdi2206:Actuator"}
        return sorted(
            f"{kinds[e.suc_class]} {e.name}"
            for e in self.doc.iter()
            if e.suc_class in kinds and _module_name(self.doc, e, self.module) == module
        )

    def services(self, module: str) -> list[Element]:
        return [
            e
            for e in self.doc.iter()
            if e.suc_class == "Service" and _module_name(self.doc, e, self.module) == module
        ]

    def control(self, service: Element) -> Element | None:
        return _join(self.doc, service, "ServiceControl")

    def has_state_machine(self, service: Element) -> bool:
        sc = self.control(service)
        return sc is not None and all(lookup_attribute(sc, a) is not None for a in ("CommandExt", "StateCur"))

    def parameters(self, service: Element, procedure: Element) -> list[str]:
        elements = [c for c in service.children if c.suc_class == "ConfigurationParameter"]
        elements += [c for c in procedure.children if c.suc_class in ("ProcedureParameter", "ProcessValueIn")]
        out = []
        for el in elements:
            op = _join(self.doc, el, "OperationElement")
            if op is None:
                continue
            values = [_value(op, a) for a in ("VExt", "VMin", "VMax", "VUnit")]
            if all(v is not None for v in values):
                out.append(" ".join([el.name, el.suc_class, *values]))  # type: ignore[list-item]
        return sorted(out)

    def command_node(self, service: Element) -> list[str]:
        sc = self.control(service)
        if sc is None or self.endpoint is None or lookup_attribute(sc, "CommandExt") is None:
            return []
        try:
            ref = opcua_ref_of(sc, "CommandExt")
        except IncompleteOpcUaItem:
            return []
        if ref is None:
            return []
        return [f"{self.endpoint} {ref.namespace} {ref.identifier} {ref.access.value}"]

    def outputs(self, service: Element, procedure: Element) -> list[str]:
        out = []
        sc = self.control(service)
        if sc is not None:
            out += [a for a in ("ProcedureCur", "ProcedureReq") if lookup_attribute(sc, a) is not None]
        for el in procedure.children:
            if el.suc_class in ("ProcessValueOut", "ReportValue"):
                ind = _join(self.doc, el, "IndicatorElement")
                if ind is not None and lookup_attribute(ind, "V") is not None:
                    out.append(el.name)
        return sorted(out)


def _rows(graph: RdfGraph, cq_id: str, bindings: Mapping[str, object], c: _Compactor) -> list[str]:
    table = run_cq(graph, cq_id, bindings)
    return [" ".join(c.iri(t) if isinstance(t, Iri) else _lex(t) for t in row) for row in table.rows]


def _named(graph: RdfGraph, cq_id: str, bindings: Mapping[str, object]) -> dict[str, list[Iri]]:
    """IRIs returned by a (iri, name) question, grouped by name."""
    out: dict[str, list[Iri]] = {}
    for iri, name in run_cq(graph, cq_id, bindings).rows:
        out.setdefault(_lex(name), []).append(iri)  # type: ignore[arg-type]
    return out


def _find_module(graph: RdfGraph, name: str) -> Iri | None:
    query = BgpQuery.parse("?module a vdi2206:Module . ?module rdfs:label ?name .", ("module",), PREFIXES)
    rows = query_bgp(graph, query, {"name": Literal(name)}).rows
    return rows[0][0] if len(rows) == 1 else None  # type: ignore[return-value]


def validate(
    doc: AmlDocument, result: ConversionResult | RdfGraph, template: StateMachineTemplate | None = None
) -> ValidationReport:
    """Answer all nine questions on the graph and compare with document-derived expectations."""
    graph = result.graph if isinstance(result, ConversionResult) else result
    template = template or default_state_machine_template()
    c = _Compactor(graph.prefixes)
    exp = _Expectations(doc)
    results = {cq.id: CqResult(cq.id, cq.description) for cq in list_cqs()}
    if exp.module is None:
        return ValidationReport(list(results.values()))

    module = _find_module(graph, exp.module)
    services = exp.services(exp.module)

    def rows(cq_id: str, **bindings: object) -> list[str]:
        return _rows(graph, cq_id, bindings, c)

    results["CQ1"].add(exp.components(exp.module), [])
    results["CQ3"].add(sorted(s.name for s in services), [])
    if module is not None:
        results["CQ1"].actual = sorted(" ".join(r.split(" ")[1:]) for r in rows("CQ1", module=module))
        capabilities = _named(graph, "CQ3", {"module": module})
        results["CQ3"].actual = sorted(n for n, iris in capabilities.items() for _ in iris)
    else:
        capabilities = {}

    commanded = sorted({t.name for t in template.transitions if t.command is not None})
    invalid_value = 0  # never a power of two, so never a state value
    for service in services:
        procedures = [c_ for c_ in service.children if c_.suc_class == "ServiceProcedure"]
        cap_iris = capabilities.get(service.name, [])
        skills = _named(graph, "CQ4", {"capability": cap_iris[0]}) if len(cap_iris) == 1 else {}
        results["CQ4"].add(
            [f"{service.name}/{p.name}" for p in procedures],
            [f"{service.name}/{n}" for n, iris in skills.items() for _ in iris],
        )
        with_sm = exp.has_state_machine(service)
        for proc in procedures:
            tag = f"{service.name}/{proc.name}"
            found = skills.get(proc.name, [])
            skill = found[0] if len(found) == 1 else None

            def answer(cq_id: str, **bindings: object) -> list[str]:
                if skill is None:
                    return []
                return [f"{tag}: {r}" for r in rows(cq_id, skill=skill, **bindings)]

            def expect(items: list[str]) -> list[str]:
                return [f"{tag}: {i}" for i in items]

            results["CQ5"].add(expect(exp.parameters(service, proc)), answer("CQ5"))
            results["CQ7"].add(expect(exp.command_node(service)), answer("CQ7"))
            results["CQ8"].add(
                expect(exp.outputs(service, proc)),
                [f"{tag}: {r.split(': ', 1)[1].split(' ', 1)[1]}" for r in answer("CQ8")],
            )
            for name, value in template.states:
                results["CQ2"].add(
                    expect([name]) if with_sm else [],
                    [f"{tag}: {r.split(': ', 1)[1].split(' ', 1)[1]}" for r in answer("CQ2", value=value)],
                )
                expected_moves = sorted(
                    f"{t.name} {template.command_value(t.command)} {t.target}"
                    for t in template.outgoing(name)
                    if t.command is not None
                )
                results["CQ9"].add(expect(expected_moves) if with_sm else [], answer("CQ9", value=value))
            results["CQ2"].add([], answer("CQ2", value=invalid_value))
            for name in commanded:
                values = sorted(
                    {template.command_value(t.command) for t in template.transitions if t.name == name and t.command}
                )
                results["CQ6"].add(
                    expect([f"{name} {v}" for v in values]) if with_sm else [],
                    [f"{tag}: {name} {r.split(': ', 1)[1]}" for r in answer("CQ6", transition=name)],
                )
    return ValidationReport(list(results.values()))
