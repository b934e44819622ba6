"""Declarative mapping of an MTP element tree onto the capability/skill model.

A :class:`MappingRule` works like an RML triples map: an iterator path selects
elements, a subject template mints one individual per element, and
predicate-object maps attach literals and links. RefID joins follow the MTP
LinkedObject mechanism from a Services-hierarchy element to its counterpart
in the InstanceList.
"""

from __future__ import annotations

import json
import logging
import re
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Union

from .aml import (
    REF_ID,
    AmlDocument,
    Element,
    PathExpr,
    attribute_value,
    lookup_attribute,
    opcua_ref_of,
    resolve_ref_id,
    select,
)
from .errors import (
    AmbiguousRef,
    BaseIriCollision,
    ConfigError,
    IncompleteOpcUaItem,
    InvalidBaseIri,
    MappingError,
    MissingCommandIndividual,
    MissingStateOutput,
    RefNotFound,
)
from .rdf import RdfGraph
from .rdf.terms import (
    XSD_ANYURI,
    XSD_BOOLEAN,
    XSD_DOUBLE,
    XSD_INTEGER,
    XSD_STRING,
    Iri,
    Literal,
    Term,
    is_absolute_iri,
    term_key,
)
from .rdf.turtle import _Compactor
from .vocab import (
    CAP,
    DIN61360,
    ISA88,
    OPCUA,
    PREFIXES,
    RDF,
    RDFS,
    VDI2206,
    VDI3682,
    ExpressionGoal,
    LogicInterpretation,
    StateMachineTemplate,
    default_state_machine_template,
)

logger = logging.getLogger(__name__)

# -- rule model ---------------------------------------------------------------


@dataclass(frozen=True)
class RefIdJoin:
    """Follow ``ref_attribute`` of the element(s) reached by ``via`` to the one
    element of class ``target_suc`` carrying the same value."""

    target_suc: str
    via: str = "."
    then: str | None = None  # attribute of the join target, e.g. "CommandExt"
    ref_attribute: str = REF_ID


@dataclass(frozen=True)
class ConstantIri:
    iri: Iri


@dataclass(frozen=True)
class ConstantLiteral:
    value: Literal


@dataclass(frozen=True)
class AttributeLiteral:
    attribute: str  # dotted name on the rule's source element
    datatype: Iri | None = None  # None: derived from AttributeDataType
    row: str | None = None


@dataclass(frozen=True)
class TemplateIri:
    template: str
    path: str | None = None  # evaluated from the iterated element; None means itself


@dataclass(frozen=True)
class JoinedIri:
    template: str
    join: RefIdJoin


ObjectSpec = Union[ConstantIri, ConstantLiteral, AttributeLiteral, TemplateIri, JoinedIri]


@dataclass(frozen=True)
class PredicateObjectMap:
    predicate: Iri
    object: ObjectSpec
    inverse: bool = False  # emit (object, predicate, subject)


@dataclass(frozen=True)
class MappingRule:
    name: str
    iterator: str
    subject: str
    classes: tuple[Iri, ...]
    label: str | None = "{name}"
    join: RefIdJoin | None = None
    attribute: str | None = None
    node_attribute: str | None = None
    maps: tuple[PredicateObjectMap, ...] = ()
    row: str | None = None

    def __post_init__(self) -> None:
        PathExpr.parse(self.iterator)
        for text in (self.subject, self.label or ""):
            for ph in _placeholders(text):
                if ph not in PLACEHOLDERS:
                    raise ConfigError(f"rule {self.name}: unknown placeholder {{{ph}}}")


PLACEHOLDERS = ("module", "service", "procedure", "name", "attr", "target")

# Rows of the transferred-individuals overview, in display order.
TABLE_ROWS = (
    "IE ModuleTypePackage",
    "IE Service",
    "IE ServiceProcedure",
    "IE IndicatorElement",
    "IE ActiveElement",
    "IE OPCUAServer",
    "Attribute VExt",
    "Attribute VMax",
    "Attribute VMin",
    "Attribute VUnit",
    "Attribute ProcedureExt",
    "Attribute CommandExt",
    "Attribute StateCur",
    "Attribute ProcedureCur",
    "Attribute ProcedureReq",
    "Attribute V",
)

SERVICES = "//IE[suc='Service']"
PROCEDURES = SERVICES + "/child::IE[suc='ServiceProcedure']"
SKILL = "{module}_{service}_{procedure}"
SERVICE_CONTROL = "ServiceControl"


def _value_maps() -> tuple[PredicateObjectMap, ...]:
    return (
        PredicateObjectMap(CAP.parameterValue, AttributeLiteral("VExt", row="Attribute VExt")),
        PredicateObjectMap(CAP.minValue, AttributeLiteral("VMin", row="Attribute VMin")),
        PredicateObjectMap(CAP.maxValue, AttributeLiteral("VMax", row="Attribute VMax")),
        PredicateObjectMap(CAP.unit, AttributeLiteral("VUnit", XSD_STRING, row="Attribute VUnit")),
    )


def _kind(kind: str) -> PredicateObjectMap:
    return PredicateObjectMap(CAP.parameterKind, ConstantLiteral(Literal(kind)))


def _control_join(attr: str) -> JoinedIri:
    return JoinedIri("{module}_{service}_{attr}", RefIdJoin(SERVICE_CONTROL, via="parent::", then=attr))


def _parameter_rule(name: str, suc: str, to_skills: TemplateIri, subject: str, iterator: str) -> MappingRule:
    return MappingRule(
        name=name,
        iterator=f"{iterator}/child::IE[suc='{suc}']",
        subject=subject,
        classes=(CAP.SkillParameter,),
        join=RefIdJoin("OperationElement"),
        node_attribute="VExt",
        maps=(PredicateObjectMap(CAP.hasSkillParameter, to_skills, inverse=True), _kind(suc))
        + _value_maps(),
    )


def _output_rule(name: str, suc: str) -> MappingRule:
    return MappingRule(
        name=name,
        iterator=f"{PROCEDURES}/child::IE[suc='{suc}']",
        subject=SKILL + "_{name}",
        classes=(CAP.SkillOutput,),
        join=RefIdJoin("IndicatorElement"),
        attribute="V",
        maps=(PredicateObjectMap(CAP.hasSkillOutput, TemplateIri(SKILL, "parent::"), inverse=True),),
        row="Attribute V",
    )


def builtin_rules() -> list[MappingRule]:
    """Rules covering every row of the transferred-individuals overview."""
    control = [
        ("CommandExt", CAP.SkillCommand, ()),
        ("StateCur", CAP.CurrentStateOutput, ()),
        ("ProcedureExt", CAP.SkillParameter, (_kind("ProcedureExt"),)),
        ("ProcedureCur", CAP.SkillOutput, ()),
        ("ProcedureReq", CAP.SkillOutput, ()),
    ]
    return [
        MappingRule(
            "module",
            "//IE[suc='ModuleTypePackage']",
            "{module}",
            (VDI2206.Module,),
            row="IE ModuleTypePackage",
        ),
        MappingRule(
            "service",
            SERVICES,
            "{module}_{service}",
            (VDI3682.Process, CAP.Capability),
            maps=(PredicateObjectMap(CAP.hasCapability, TemplateIri("{module}"), inverse=True),),
            row="IE Service",
        ),
        MappingRule(
            "procedure",
            PROCEDURES,
            SKILL,
            (CAP.OpcUaVariableSkill,),
            maps=(
                PredicateObjectMap(
                    CAP.isExecutableViaOpcUaSkill, TemplateIri("{module}_{service}"), inverse=True
                ),
                PredicateObjectMap(CAP.providesSkill, TemplateIri("{module}"), inverse=True),
                PredicateObjectMap(CAP.hasSkillCommand, _control_join("CommandExt")),
                PredicateObjectMap(CAP.hasCurrentStateOutput, _control_join("StateCur")),
                PredicateObjectMap(CAP.hasSkillParameter, _control_join("ProcedureExt")),
                PredicateObjectMap(CAP.hasSkillOutput, _control_join("ProcedureCur")),
                PredicateObjectMap(CAP.hasSkillOutput, _control_join("ProcedureReq")),
            ),
            row="IE ServiceProcedure",
        ),
        *(
            MappingRule(
                f"service-control-{attr}",
                SERVICES,
                "{module}_{service}_{attr}",
                (cls,),
                label="{attr}",
                join=RefIdJoin(SERVICE_CONTROL),
                attribute=attr,
                maps=extra,
                row=f"Attribute {attr}",
            )
            for attr, cls, extra in control
        ),
        _parameter_rule(
            "configuration-parameter",
            "ConfigurationParameter",
            TemplateIri(SKILL, "parent::/child::IE[suc='ServiceProcedure']"),
            "{module}_{service}_{name}",
            SERVICES,
        ),
        _parameter_rule(
            "procedure-parameter",
            "ProcedureParameter",
            TemplateIri(SKILL, "parent::"),
            SKILL + "_{name}",
            PROCEDURES,
        ),
        _parameter_rule(
            "process-value-in",
            "ProcessValueIn",
            TemplateIri(SKILL, "parent::"),
            SKILL + "_{name}",
            PROCEDURES,
        ),
        _output_rule("process-value-out", "ProcessValueOut"),
        _output_rule("report-value", "ReportValue"),
        MappingRule(
            "sensor",
            "//IE[suc='IndicatorElement']",
            "{module}_{name}",
            (VDI2206.Sensor,),
            node_attribute="V",
            maps=(PredicateObjectMap(VDI2206.hasComponent, TemplateIri("{module}"), inverse=True),),
            row="IE IndicatorElement",
        ),
        MappingRule(
            "actuator",
            "//IE[suc='ActiveElement']",
            "{module}_{name}",
            (VDI2206.Actuator,),
            node_attribute="V",
            maps=(PredicateObjectMap(VDI2206.hasComponent, TemplateIri("{module}"), inverse=True),),
            row="IE ActiveElement",
        ),
        MappingRule(
            "opcua-server",
            "//IE[suc='OPCUAServer']",
            "{module}_{name}",
            (OPCUA.UaServer,),
            maps=(PredicateObjectMap(OPCUA.endpointUrl, AttributeLiteral("Endpoint", XSD_ANYURI)),),
            row="IE OPCUAServer",
        ),
        MappingRule(
            "opcua-nodeset",
            "//IE[suc='OPCUAServer']",
            "{module}_{name}_NodeSet",
            (OPCUA.UaNodeSet,),
            label="{name} node set",
            maps=(PredicateObjectMap(OPCUA.hasNodeSet, TemplateIri("{module}_{name}"), inverse=True),),
        ),
    ]


# -- conversion result --------------------------------------------------------


@dataclass
class ConversionResult:
    graph: RdfGraph
    stats: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def stats_json(self) -> str:
        return json.dumps(self.stats, indent=2, sort_keys=False) + "\n"


def class_counts(graph: RdfGraph) -> dict[str, int]:
    """Number of distinct subjects typed with each class, keyed by compact name."""
    c = _Compactor(graph.prefixes)
    counts: dict[str, int] = {}
    for t in graph.triples(None, RDF.type, None):
        if isinstance(t.object, Iri):
            key = c.iri(t.object)
            counts[key] = counts.get(key, 0) + 1
    return dict(sorted(counts.items()))


# -- IRI minting --------------------------------------------------------------

_UNSAFE = re.compile(r"[^A-Za-z0-9_]")


def sanitize(value: str) -> str:
    return _UNSAFE.sub("_", value) or "_"


def _placeholders(template: str) -> list[str]:
    return [f for _, f, _, _ in string.Formatter().parse(template) if f is not None]


def check_base_iri(base_iri: str) -> str:
    if not is_absolute_iri(base_iri) or "#" in base_iri or any(c.isspace() for c in base_iri):
        raise InvalidBaseIri(f"base IRI must be absolute and fragment-free: {base_iri!r}")
    return base_iri


def module_prefix(base_iri: str) -> str:
    """Turtle prefix for a module namespace, derived from the last path segment."""
    segment = base_iri.rstrip("/").rsplit("/", 1)[-1]
    segment = re.sub(r"[^A-Za-z0-9_-]", "_", segment)
    if not segment or not segment[0].isalpha():
        segment = "mtp" + ("_" + segment if segment else "")
    if segment in PREFIXES:
        segment += "_mtp"
    return segment


@dataclass
class _Context:
    current: Element
    anchor: Element
    target: Element
    attr: str | None = None


def _nearest(el: Element, suc: str) -> Element | None:
    if el.suc_class == suc:
        return el
    for anc in el.ancestors():
        if anc.suc_class == suc:
            return anc
    return None


class _Minter:
    """Maps logical identities to IRIs, disambiguating sanitisation clashes."""

    def __init__(self, doc: AmlDocument, base: str) -> None:
        self.doc = doc
        self.base = base
        modules = [e for e in doc.iter() if e.suc_class == "ModuleTypePackage"]
        self.default_module = modules[0] if modules else None
        self.by_key: dict[tuple, Iri] = {}
        self.taken: dict[Iri, tuple] = {}

    def _provider(self, name: str, ctx: _Context) -> tuple[str, str] | None:
        """(raw value, identity) for one placeholder, or None if unresolvable."""
        if name == "attr":
            return (ctx.attr, ctx.attr) if ctx.attr else None
        if name == "name":
            return ctx.anchor.name, ctx.anchor.id
        if name == "target":
            return ctx.target.name, ctx.target.id
        suc = {"module": "ModuleTypePackage", "service": "Service", "procedure": "ServiceProcedure"}[name]
        el = _nearest(ctx.anchor, suc) or _nearest(ctx.current, suc)
        if el is None and name == "module":
            el = self.default_module
        return (el.name, el.id) if el is not None else None

    def render(self, template: str, ctx: _Context, raw: bool = False) -> tuple[str, tuple] | None:
        values, identity = {}, []
        for ph in _placeholders(template):
            found = self._provider(ph, ctx)
            if found is None:
                return None
            values[ph] = found[0] if raw else sanitize(found[0])
            identity.append((ph, found[1]))
        return template.format(**values), tuple(identity)

    def mint(self, template: str, ctx: _Context) -> Iri | None:
        rendered = self.render(template, ctx)
        if rendered is None:
            return None
        local, identity = rendered
        key = (local, identity)
        if key in self.by_key:
            return self.by_key[key]
        candidate, n = Iri(f"{self.base}#{local}"), 1
        while candidate in self.taken:
            n += 1
            candidate = Iri(f"{self.base}#{local}_{n}")
        self.by_key[key] = candidate
        self.taken[candidate] = key
        return candidate


# -- literal typing -----------------------------------------------------------

_AML_DATATYPES = {
    "string": XSD_STRING,
    "anyURI": XSD_ANYURI,
    "boolean": XSD_BOOLEAN,
    "double": XSD_DOUBLE,
    "float": XSD_DOUBLE,
    "decimal": XSD_DOUBLE,
}
for _t in (
    "int",
    "integer",
    "long",
    "short",
    "byte",
    "unsignedInt",
    "unsignedLong",
    "unsignedShort",
    "unsignedByte",
    "nonNegativeInteger",
    "positiveInteger",
):
    _AML_DATATYPES[_t] = XSD_INTEGER


def aml_datatype(data_type: str | None) -> Iri:
    if not data_type:
        return XSD_STRING
    local = data_type.split(":", 1)[-1]
    return _AML_DATATYPES.get(local, XSD_STRING)


def _typed_literal(value: str, datatype: Iri) -> Literal | None:
    """Literal with ``datatype`` if the lexical form fits it, else None."""
    text = value.strip()
    try:
        if datatype == XSD_INTEGER:
            int(text)
        elif datatype == XSD_DOUBLE:
            float(text)
        elif datatype == XSD_BOOLEAN:
            if text.lower() not in ("true", "false", "0", "1"):
                return None
            text = text.lower()
        else:
            return Literal(value, datatype)
    except ValueError:
        return None
    return Literal(text, datatype)


# -- rule execution -----------------------------------------------------------


class _Engine:
    def __init__(self, doc: AmlDocument, base: str) -> None:
        self.doc = doc
        self.graph = RdfGraph(base=base)
        for prefix, ns in PREFIXES.items():
            self.graph.bind(prefix, ns)
        self.minter = _Minter(doc, base)
        self.warnings: dict[str, None] = {}
        self.rows: dict[str, set[Iri]] = {row: set() for row in TABLE_ROWS}
        self.variables: list[Iri] = []
        self.nodesets: list[Iri] = []

    def warn(self, message: str) -> None:
        if message not in self.warnings:
            logger.warning(message)
            self.warnings[message] = None

    def add(self, s, p, o) -> None:
        self.graph.add((s, p, o))

    def join(self, rule: str, source: Element, join: RefIdJoin) -> Element | None:
        ref = attribute_value(source, join.ref_attribute)
        if not ref:
            self.warn(
                f"rule {rule}: {source.name!r} has no {join.ref_attribute}; "
                f"unresolved join to {join.target_suc}"
            )
            return None
        try:
            return resolve_ref_id(self.doc, ref, join.target_suc)
        except (RefNotFound, AmbiguousRef) as exc:
            self.warn(f"rule {rule}: {source.name!r}: unresolved join to {join.target_suc}: {exc}")
            return None

    def literal(self, rule: str, el: Element, spec: AttributeLiteral) -> Literal | None:
        attr = lookup_attribute(el, spec.attribute)
        if attr is None or attr.value is None:
            return None
        datatype = spec.datatype or aml_datatype(attr.data_type)
        lit = _typed_literal(attr.value, datatype)
        if lit is None:
            self.warn(
                f"rule {rule}: {el.name}.{spec.attribute} = {attr.value!r} "
                f"is not a valid {datatype.value.rsplit('#', 1)[-1]}; kept as string"
            )
            lit = Literal(attr.value)
        return lit

    def objects(self, rule: MappingRule, spec: ObjectSpec, ctx: _Context) -> Iterator[tuple[Term, str | None]]:
        if isinstance(spec, ConstantIri):
            yield spec.iri, None
        elif isinstance(spec, ConstantLiteral):
            yield spec.value, None
        elif isinstance(spec, AttributeLiteral):
            lit = self.literal(rule.name, ctx.target, spec)
            if lit is not None:
                yield lit, spec.row
        elif isinstance(spec, TemplateIri):
            anchors = [ctx.current] if spec.path is None else select(self.doc, spec.path, ctx.current)
            for anchor in anchors:
                if not isinstance(anchor, Element):
                    continue
                iri = self.minter.mint(spec.template, _Context(ctx.current, anchor, anchor))
                if iri is not None:
                    yield iri, None
        elif isinstance(spec, JoinedIri):
            for anchor in select(self.doc, spec.join.via, ctx.current):
                if not isinstance(anchor, Element):
                    continue
                target = self.join(rule.name, anchor, spec.join)
                if target is None:
                    continue
                if spec.join.then is not None and lookup_attribute(target, spec.join.then) is None:
                    continue
                iri = self.minter.mint(spec.template, _Context(ctx.current, anchor, target, spec.join.then))
                if iri is not None:
                    yield iri, None

    def attach_node(self, rule: MappingRule, subject: Iri, ctx: _Context, attr: str) -> None:
        try:
            ref = opcua_ref_of(ctx.target, attr)
        except IncompleteOpcUaItem as exc:
            self.warn(f"rule {rule.name}: {exc}")
            return
        if ref is None:
            return
        var = self.minter.mint(
            "{module}_{target}_{attr}_UaVariable", _Context(ctx.current, ctx.target, ctx.target, attr)
        )
        if var is None:
            return
        self.add(subject, CAP.hasUaVariable, var)
        if var in self.variables:
            return
        self.variables.append(var)
        self.add(var, RDF.type, OPCUA.UaVariable)
        self.add(var, RDFS.label, Literal(f"{ctx.target.name}.{attr}"))
        self.add(var, OPCUA.nodeNamespace, Literal(ref.namespace))
        self.add(var, OPCUA.nodeIdentifier, Literal(ref.identifier))
        self.add(var, OPCUA.accessLevel, Literal(ref.access.value))

    def run(self, rule: MappingRule) -> None:
        for el in select(self.doc, rule.iterator):
            if not isinstance(el, Element):
                continue
            target: Element | None = el
            if rule.join is not None:
                via = select(self.doc, rule.join.via, el)
                source = via[0] if via and isinstance(via[0], Element) else None
                target = self.join(rule.name, source, rule.join) if source is not None else None
                if target is None:
                    continue
            assert target is not None
            if rule.attribute is not None and lookup_attribute(target, rule.attribute) is None:
                self.warn(f"rule {rule.name}: {target.name!r} has no attribute {rule.attribute}")
                continue
            ctx = _Context(el, el, target, rule.attribute)
            subject = self.minter.mint(rule.subject, ctx)
            if subject is None:
                self.warn(f"rule {rule.name}: cannot fill subject template {rule.subject!r} for {el.name!r}")
                continue
            for cls in rule.classes:
                self.add(subject, RDF.type, cls)
                if cls == OPCUA.UaNodeSet and subject not in self.nodesets:
                    self.nodesets.append(subject)
            if rule.label:
                rendered = self.minter.render(rule.label, ctx, raw=True)
                if rendered is not None:
                    self.add(subject, RDFS.label, Literal(rendered[0]))
            node_attr = rule.node_attribute or rule.attribute
            if node_attr:
                self.attach_node(rule, subject, ctx, node_attr)
            if rule.row:
                self.rows.setdefault(rule.row, set()).add(subject)
            for pom in rule.maps:
                for obj, row in self.objects(rule, pom.object, ctx):
                    if pom.inverse:
                        if not isinstance(obj, Iri):
                            continue
                        self.add(obj, pom.predicate, subject)
                    else:
                        self.add(subject, pom.predicate, obj)
                    if row:
                        self.rows.setdefault(row, set()).add(subject)

    def register_variables(self) -> None:
        if not self.variables:
            return
        if not self.nodesets:
            self.warn(f"no OPCUAServer element; {len(self.variables)} OPC UA variables are not registered")
            return
        if len(self.nodesets) > 1:
            self.warn(f"{len(self.nodesets)} OPC UA servers; variables registered with the first")
        for var in self.variables:
            self.add(self.nodesets[0], OPCUA.hasNode, var)


def _stats(graph: RdfGraph, rows: dict[str, set[Iri]]) -> dict:
    ordered = {row: len(rows.get(row, ())) for row in TABLE_ROWS}
    ordered.update({row: len(v) for row, v in rows.items() if row not in ordered})
    return {"triples": len(graph), "rows": ordered, "classes": class_counts(graph)}


def apply_rules(
    doc: AmlDocument, rules: Iterable[MappingRule], base_iri: str, prefix: str | None = None
) -> ConversionResult:
    """Run ``rules`` over ``doc``. Unresolvable joins become warnings, not errors."""
    base = check_base_iri(base_iri)
    engine = _Engine(doc, base)
    engine.graph.bind(prefix or module_prefix(base), base + "#")
    for rule in rules:
        engine.run(rule)
    engine.register_variables()
    return ConversionResult(engine.graph, _stats(engine.graph, engine.rows), list(engine.warnings))


# -- state machines -----------------------------------------------------------


def _data_element(
    graph: RdfGraph,
    de: Iri,
    td: Iri,
    goal: ExpressionGoal,
    value: int,
    owners: tuple[Iri, ...],
) -> None:
    inst = Iri(de.value[: -len("_DE")] + "_ID")
    graph.add((de, RDF.type, DIN61360.DataElement))
    graph.add((de, DIN61360.hasTypeDescription, td))
    graph.add((de, DIN61360.hasInstanceDescription, inst))
    graph.add((inst, RDF.type, DIN61360.InstanceDescription))
    graph.add((inst, DIN61360.expressionGoal, Literal(goal.value)))
    graph.add((inst, DIN61360.logicInterpretation, Literal(LogicInterpretation.EQUAL.value)))
    graph.add((inst, DIN61360.hasValue, Literal(str(value), XSD_INTEGER)))
    for owner in owners:
        graph.add((owner, DIN61360.hasDataElement, de))


def state_iri(skill: Iri, state: str) -> Iri:
    return Iri(f"{skill.value}_{sanitize(state)}")


def transition_iri(skill: Iri, source: str, name: str) -> Iri:
    return Iri(f"{skill.value}_{sanitize(source)}_{sanitize(name)}")


def synthesize_state_machine(
    graph: RdfGraph,
    skill: Iri,
    template: StateMachineTemplate,
    command: Iri,
    state_output: Iri,
) -> RdfGraph:
    """Attach a full state machine instance to ``skill``.

    Every commanded transition gets a Requirement/Equal data element holding
    its command value, shared with the skill's command individual. Every
    state gets an Assurance/Equal data element holding its StateCur value,
    shared with the skill's state output.
    """
    template.validate()
    if (skill, RDF.type, CAP.OpcUaVariableSkill) not in graph:
        raise MappingError(f"{skill} is not typed cap:OpcUaVariableSkill")
    if (command, RDF.type, CAP.SkillCommand) not in graph:
        raise MissingCommandIndividual(f"{command} is not typed cap:SkillCommand")
    if (state_output, RDF.type, CAP.CurrentStateOutput) not in graph:
        raise MissingStateOutput(f"{state_output} is not typed cap:CurrentStateOutput")
    sm = Iri(f"{skill.value}_StateMachine")
    minted = [sm]
    minted += [state_iri(skill, name) for name, _ in template.states]
    minted += [transition_iri(skill, t.source, t.name) for t in template.transitions]
    clashes = [iri.value for iri in minted if next(iter(graph.triples(iri, None, None)), None)]
    if clashes:
        raise MappingError(f"state machine IRIs already in use: {', '.join(clashes)}")
    graph.add((skill, CAP.behaviorConformsTo, sm))
    graph.add((sm, RDF.type, ISA88.StateMachine))
    for name, value in template.states:
        st = state_iri(skill, name)
        graph.add((sm, ISA88.hasState, st))
        graph.add((st, RDF.type, ISA88.State))
        graph.add((st, RDFS.label, Literal(name)))
        de = Iri(f"{st.value}Output_DE")
        _data_element(graph, de, CAP.CurrentStateOutput_TD, ExpressionGoal.ASSURANCE, value, (st, state_output))
    for t in template.transitions:
        tr = transition_iri(skill, t.source, t.name)
        graph.add((sm, ISA88.hasTransition, tr))
        graph.add((tr, RDF.type, ISA88.Transition))
        graph.add((tr, RDFS.label, Literal(t.name)))
        graph.add((tr, ISA88.fromState, state_iri(skill, t.source)))
        graph.add((tr, ISA88.toState, state_iri(skill, t.target)))
        if t.command is not None:
            de = Iri(f"{tr.value}Command_DE")
            value = template.command_value(t.command)
            _data_element(graph, de, CAP.SkillCommandVariable_TD, ExpressionGoal.REQUIREMENT, value, (tr, command))
    return graph


def map_document(
    doc: AmlDocument,
    base_iri: str,
    template: StateMachineTemplate | None = None,
    rules: Iterable[MappingRule] | None = None,
    prefix: str | None = None,
) -> ConversionResult:
    """Full conversion: rules, then one state machine per skill."""
    template = (template or default_state_machine_template()).validate()
    result = apply_rules(doc, builtin_rules() if rules is None else rules, base_iri, prefix)
    graph = result.graph
    skills = sorted(graph.subjects(RDF.type, CAP.OpcUaVariableSkill), key=term_key)
    for skill in skills:
        command = graph.value(skill, CAP.hasSkillCommand)
        output = graph.value(skill, CAP.hasCurrentStateOutput)
        if not isinstance(command, Iri) or not isinstance(output, Iri):
            missing = "SkillCommand" if not isinstance(command, Iri) else "CurrentStateOutput"
            result.warnings.append(f"skill {skill.value} has no {missing}; state machine not synthesized")
            continue
        try:
            synthesize_state_machine(graph, skill, template, command, output)
        except MappingError as exc:
            result.warnings.append(f"skill {skill.value}: {exc}; state machine not synthesized")
    result.stats["triples"] = len(graph)
    result.stats["classes"] = class_counts(graph)
    return result


def merge(graphs: Iterable[RdfGraph]) -> RdfGraph:
    """Union of independently converted module graphs."""
    graphs = list(graphs)
    if len(graphs) == 1:
        return graphs[0].copy()
    bases: dict[str, int] = {}
    modules: dict[Iri, int] = {}
    merged = RdfGraph()
    for i, g in enumerate(graphs):
        if g.base is not None:
            if g.base in bases:
                raise BaseIriCollision(f"graphs {bases[g.base]} and {i} share base IRI {g.base}")
            bases[g.base] = i
        for m in g.subjects(RDF.type, VDI2206.Module):
            if m in modules:
                raise BaseIriCollision(f"graphs {modules[m]} and {i} both define module {m}")
            modules[m] = i  # type: ignore[index]
        for prefix, ns in g.prefixes.items():
            merged.bind(prefix, ns)
        merged.add_all(g)
    return merged


# -- rule files ---------------------------------------------------------------


def _iri_out(iri: Iri) -> str:
    for prefix, ns in PREFIXES.items():
        if iri.value.startswith(ns):
            return f"{prefix}:{iri.value[len(ns):]}"
    return iri.value


def _iri_in(text: str) -> Iri:
    prefix, sep, local = text.partition(":")
    if sep and prefix in PREFIXES and not local.startswith("//"):
        return Iri(PREFIXES[prefix] + local)
    return Iri(text.strip("<>"))


def _join_out(j: RefIdJoin) -> dict:
    return {"targetSuc": j.target_suc, "via": j.via, "then": j.then, "refAttribute": j.ref_attribute}


def _join_in(d: dict) -> RefIdJoin:
    return RefIdJoin(d["targetSuc"], d.get("via", "."), d.get("then"), d.get("refAttribute", REF_ID))


def _object_out(spec: ObjectSpec) -> dict:
    if isinstance(spec, ConstantIri):
        return {"kind": "constantIri", "iri": _iri_out(spec.iri)}
    if isinstance(spec, ConstantLiteral):
        return {"kind": "constantLiteral", "value": spec.value.lexical, "datatype": _iri_out(spec.value.datatype)}
    if isinstance(spec, AttributeLiteral):
        out = {"kind": "literalFromAttribute", "attribute": spec.attribute}
        if spec.datatype is not None:
            out["datatype"] = _iri_out(spec.datatype)
        if spec.row:
            out["row"] = spec.row
        return out
    if isinstance(spec, TemplateIri):
        return {"kind": "templateIri", "template": spec.template, "path": spec.path}
    return {"kind": "refIdJoin", "template": spec.template, "join": _join_out(spec.join)}


def _object_in(d: dict) -> ObjectSpec:
    kind = d.get("kind")
    if kind == "constantIri":
        return ConstantIri(_iri_in(d["iri"]))
    if kind == "constantLiteral":
        return ConstantLiteral(Literal(d["value"], _iri_in(d.get("datatype", "xsd:string"))))
    if kind == "literalFromAttribute":
        dt = d.get("datatype")
        return AttributeLiteral(d["attribute"], _iri_in(dt) if dt else None, d.get("row"))
    if kind == "templateIri":
        return TemplateIri(d["template"], d.get("path"))
    if kind == "refIdJoin":
        return JoinedIri(d["template"], _join_in(d["join"]))
    raise ConfigError(f"unknown object map kind {kind!r}")


def rules_to_dicts(rules: Iterable[MappingRule]) -> list[dict]:
    out = []
    for r in rules:
        out.append(
            {
                "name": r.name,
                "iterator": r.iterator,
                "subject": r.subject,
                "classes": [_iri_out(c) for c in r.classes],
                "label": r.label,
                "join": _join_out(r.join) if r.join else None,
                "attribute": r.attribute,
                "nodeAttribute": r.node_attribute,
                "row": r.row,
                "maps": [
                    {"predicate": _iri_out(m.predicate), "object": _object_out(m.object), "inverse": m.inverse}
                    for m in r.maps
                ],
            }
        )
    return out


def rules_from_dicts(data: list[dict]) -> list[MappingRule]:
    rules = []
    try:
        for d in data:
            rules.append(
                MappingRule(
                    name=d["name"],
                    iterator=d["iterator"],
                    subject=d["subject"],
                    classes=tuple(_iri_in(c) for c in d["classes"]),
                    label=d.get("label", "{name}"),
                    join=_join_in(d["join"]) if d.get("join") else None,
                    attribute=d.get("attribute"),
                    node_attribute=d.get("nodeAttribute"),
                    row=d.get("row"),
                    maps=tuple(
                        PredicateObjectMap(_iri_in(m["predicate"]), _object_in(m["object"]), m.get("inverse", False))
                        for m in d.get("maps", ())
                    ),
                )
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed rule definition: {exc}") from None
    return rules


def load_rules(path: str | Path) -> list[MappingRule]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read rules file {path}: {exc}") from None
    if isinstance(data, dict):
        data = data.get("rules", [])
    return rules_from_dicts(data)
