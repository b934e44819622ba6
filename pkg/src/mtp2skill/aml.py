"""Parsing of MTP AutomationML (CAEX) files into a navigable element tree.

Only the parts of CAEX that carry MTP service and communication content are
modelled: instance hierarchies, internal elements, (nested) attributes and
external interfaces. Everything else in the file is read and ignored.
"""

from __future__ import annotations

import enum
import io
import logging
import re
import xml.etree.ElementTree as ET
import zipfile
from dataclasses import dataclass, field
from typing import Iterator, Literal, Union

from .errors import (
    AmbiguousRef,
    DuplicateId,
    IncompleteOpcUaItem,
    InvalidPath,
    MalformedXml,
    NoAmlEntry,
    NotCaex,
    RefNotFound,
)

logger = logging.getLogger(__name__)

REF_ID = "RefID"
OPCUA_ITEM = "OPCUAItem"
ZIP_MAGIC = b"PK\x03\x04"


class Access(enum.Enum):
    READ = "read"
    WRITE = "write"
    READ_WRITE = "read-write"

    @property
    def writable(self) -> bool:
        return self is not Access.READ

    @classmethod
    def parse(cls, raw: str) -> "Access":
        # MTPs carry the OPC UA AccessLevel bit mask (1 = read, 2 = write)
        text = raw.strip().lower().replace("_", "-")
        aliases = {
            "1": cls.READ,
            "read": cls.READ,
            "2": cls.WRITE,
            "write": cls.WRITE,
            "3": cls.READ_WRITE,
            "read-write": cls.READ_WRITE,
            "readwrite": cls.READ_WRITE,
        }
        try:
            return aliases[text]
        except KeyError:
            raise ValueError(f"unrecognised Access value {raw!r}") from None


@dataclass(frozen=True)
class AmlAttribute:
    name: str
    value: str | None = None
    data_type: str | None = None
    unit: str | None = None
    sub_attributes: tuple["AmlAttribute", ...] = ()

    def child(self, name: str) -> "AmlAttribute | None":
        for sub in self.sub_attributes:
            if sub.name == name:
                return sub
        return None


@dataclass(frozen=True)
class ExternalInterface:
    name: str
    interface_class: str
    attributes: tuple[AmlAttribute, ...] = ()

    def attribute(self, name: str) -> AmlAttribute | None:
        for attr in self.attributes:
            if attr.name == name:
                return attr
        return None


@dataclass(frozen=True)
class OpcUaNodeRef:
    namespace: str
    identifier: str
    access: Access = Access.READ

    @property
    def key(self) -> tuple[str, str]:
        return (self.namespace, self.identifier)


@dataclass(eq=False)
class Element:
    """An InternalElement. Identity semantics; the tree is not mutated after parsing."""

    id: str
    name: str
    ref_base_system_unit_path: str | None = None
    attributes: tuple[AmlAttribute, ...] = ()
    external_interfaces: tuple[ExternalInterface, ...] = ()
    children: list["Element"] = field(default_factory=list)
    parent: "Element | None" = field(default=None, repr=False)
    hierarchy: str = ""
    order: int = 0

    @property
    def suc_class(self) -> str:
        if not self.ref_base_system_unit_path:
            return ""
        return self.ref_base_system_unit_path.rstrip("/").rsplit("/", 1)[-1]

    def attribute(self, name: str) -> AmlAttribute | None:
        for attr in self.attributes:
            if attr.name == name:
                return attr
        return None

    def interface(self, name: str) -> ExternalInterface | None:
        for iface in self.external_interfaces:
            if iface.name == name:
                return iface
        return None

    def iter(self) -> Iterator["Element"]:
        yield self
        for child in self.children:
            yield from child.iter()

    def ancestors(self) -> Iterator["Element"]:
        node = self.parent
        while node is not None:
            yield node
            node = node.parent

    def __repr__(self) -> str:
        return f"Element(id={self.id!r}, name={self.name!r}, suc={self.suc_class!r})"


@dataclass(eq=False)
class InstanceHierarchy:
    name: str
    children: list[Element] = field(default_factory=list)

    def iter(self) -> Iterator[Element]:
        for child in self.children:
            yield from child.iter()


@dataclass(eq=False)
class AmlDocument:
    instance_hierarchies: list[InstanceHierarchy]
    elements_by_id: dict[str, Element]
    elements_by_ref_id: dict[str, list[Element]]
    warnings: list[str] = field(default_factory=list)
    source_name: str | None = None

    def iter(self) -> Iterator[Element]:
        """All internal elements in document order."""
        for ih in self.instance_hierarchies:
            yield from ih.iter()

    def to_dict(self) -> dict:
        """Plain structural dump, used to compare documents."""

        def attr(a: AmlAttribute) -> dict:
            return {
                "name": a.name,
                "value": a.value,
                "dataType": a.data_type,
                "unit": a.unit,
                "sub": [attr(s) for s in a.sub_attributes],
            }

        def elem(e: Element) -> dict:
            return {
                "id": e.id,
                "name": e.name,
                "suc": e.ref_base_system_unit_path,
                "attributes": [attr(a) for a in e.attributes],
                "interfaces": [
                    {
                        "name": i.name,
                        "class": i.interface_class,
                        "attributes": [attr(a) for a in i.attributes],
                    }
                    for i in e.external_interfaces
                ],
                "children": [elem(c) for c in e.children],
            }

        return {
            "hierarchies": [
                {"name": ih.name, "children": [elem(c) for c in ih.children]}
                for ih in self.instance_hierarchies
            ]
        }


# -- parsing ------------------------------------------------------------------


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1] if tag.startswith("{") else tag


def _last_segment(path: str | None) -> str:
    if not path:
        return ""
    return path.rstrip("/").rsplit("/", 1)[-1]


def _parse_attribute(node: ET.Element) -> AmlAttribute:
    name = node.get("Name", "")
    if not name:
        raise MalformedXml("Attribute without Name")
    value = default = None
    subs = []
    for child in node:
        tag = _local(child.tag)
        if tag == "Value":
            value = child.text or ""
        elif tag == "DefaultValue":
            default = child.text or ""
        elif tag == "Attribute":
            subs.append(_parse_attribute(child))
    return AmlAttribute(
        name=name,
        value=value if value is not None else default,
        data_type=node.get("AttributeDataType"),
        unit=node.get("Unit"),
        sub_attributes=tuple(subs),
    )


def _parse_interface(node: ET.Element) -> ExternalInterface:
    return ExternalInterface(
        name=node.get("Name", ""),
        interface_class=_last_segment(node.get("RefBaseClassPath")),
        attributes=tuple(
            _parse_attribute(c) for c in node if _local(c.tag) == "Attribute"
        ),
    )


class _Builder:
    def __init__(self) -> None:
        self.by_id: dict[str, Element] = {}
        self.by_ref: dict[str, list[Element]] = {}
        self.counter = 0

    def element(self, node: ET.Element, parent: Element | None, hierarchy: str) -> Element:
        ident = node.get("ID")
        if not ident:
            raise MalformedXml(f"InternalElement {node.get('Name')!r} has no ID")
        if ident in self.by_id:
            raise DuplicateId(f"ID {ident!r} is used by more than one InternalElement")
        attrs, ifaces, kids = [], [], []
        for child in node:
            tag = _local(child.tag)
            if tag == "Attribute":
                attrs.append(_parse_attribute(child))
            elif tag == "ExternalInterface":
                ifaces.append(_parse_interface(child))
            elif tag == "InternalElement":
                kids.append(child)
        el = Element(
            id=ident,
            name=node.get("Name", ""),
            ref_base_system_unit_path=node.get("RefBaseSystemUnitPath"),
            attributes=tuple(attrs),
            external_interfaces=tuple(ifaces),
            parent=parent,
            hierarchy=hierarchy,
            order=self.counter,
        )
        self.counter += 1
        self.by_id[ident] = el
        ref = el.attribute(REF_ID)
        if ref is not None and ref.value:
            self.by_ref.setdefault(ref.value, []).append(el)
        el.children = [self.element(k, el, hierarchy) for k in kids]
        return el


def parse_aml(data: bytes, source_name: str | None = None) -> AmlDocument:
    """Parse raw CAEX bytes. Elements outside instance hierarchies are ignored."""
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        line = exc.position[0] if exc.position else None
        raise MalformedXml(str(exc), line=line) from None
    if _local(root.tag) != "CAEXFile":
        raise NotCaex(f"root element is {_local(root.tag)!r}, expected 'CAEXFile'")
    builder = _Builder()
    hierarchies = []
    for ih_node in root:
        if _local(ih_node.tag) != "InstanceHierarchy":
            continue
        ih = InstanceHierarchy(name=ih_node.get("Name", ""))
        ih.children = [
            builder.element(n, None, ih.name)
            for n in ih_node
            if _local(n.tag) == "InternalElement"
        ]
        hierarchies.append(ih)
    return AmlDocument(
        instance_hierarchies=hierarchies,
        elements_by_id=builder.by_id,
        elements_by_ref_id=builder.by_ref,
        source_name=source_name,
    )


def open_mtp(
    data: bytes,
    kind: Literal["auto", "aml", "zip"] = "auto",
    source_name: str | None = None,
) -> AmlDocument:
    """Open an MTP given either raw AML bytes or a zip container holding ``*.aml``."""
    if kind == "auto":
        kind = "zip" if data[:4] == ZIP_MAGIC else "aml"
    if kind == "aml":
        return parse_aml(data, source_name=source_name)
    if kind != "zip":
        raise ValueError(f"unknown container kind {kind!r}")
    try:
        archive = zipfile.ZipFile(io.BytesIO(data))
    except zipfile.BadZipFile as exc:
        raise MalformedXml(f"not a readable zip archive: {exc}") from None
    with archive:
        names = sorted(n for n in archive.namelist() if n.lower().endswith(".aml"))
        if not names:
            raise NoAmlEntry("zip archive contains no *.aml entry")
        chosen = names[0]
        doc = parse_aml(archive.read(chosen), source_name=chosen)
    if len(names) > 1:
        msg = f"zip contains {len(names)} *.aml entries; using {chosen!r}"
        logger.warning(msg)
        doc.warnings.append(msg)
    return doc


# -- path expressions ---------------------------------------------------------

# One step of the supported dialect:
#   //IE[suc='X']      descendants (any depth) with SUC class X
#   child::IE[suc='X'] direct children; a leading '/' is optional
#   parent::           one step up
#   @Name or @A.B      attribute leaf (terminal)
#   .                  the context itself
_STEP_RE = re.compile(
    r"""
    (?P<desc>//IE(?:\[suc=(?P<q1>['"])(?P<dsuc>[^'"]*)(?P=q1)\])?)
  | /?(?P<child>child::IE(?:\[suc=(?P<q2>['"])(?P<csuc>[^'"]*)(?P=q2)\])?)
  | /?(?P<parent>parent::(?:IE)?)
  | /?@(?P<attr>[A-Za-z_][\w.-]*)
  | /?(?P<self>\.)(?=/|$)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Step:
    axis: Literal["descendant", "child", "parent", "attribute", "self"]
    arg: str | None = None


@dataclass(frozen=True)
class PathExpr:
    steps: tuple[Step, ...]
    text: str = ""

    @classmethod
    def parse(cls, text: str) -> "PathExpr":
        pos, steps = 0, []
        text = text.strip()
        while pos < len(text):
            m = _STEP_RE.match(text, pos)
            if m is None or m.end() == pos:
                raise InvalidPath(f"unsupported path syntax at {text[pos:]!r} in {text!r}")
            if steps and steps[-1].axis == "attribute":
                raise InvalidPath(f"attribute step must be last in {text!r}")
            if m.group("desc"):
                steps.append(Step("descendant", m.group("dsuc")))
            elif m.group("child"):
                steps.append(Step("child", m.group("csuc")))
            elif m.group("parent"):
                steps.append(Step("parent"))
            elif m.group("attr"):
                steps.append(Step("attribute", m.group("attr")))
            else:
                steps.append(Step("self"))
            pos = m.end()
        if not steps:
            raise InvalidPath("empty path")
        return cls(tuple(steps), text)

    @property
    def ends_in_attribute(self) -> bool:
        return self.steps[-1].axis == "attribute"

    def __str__(self) -> str:
        return self.text


Node = Union[Element, AmlAttribute]


def _matches(el: Element, suc: str | None) -> bool:
    return suc is None or el.suc_class == suc


def _step(doc: AmlDocument, ctx: list[Element | None], step: Step) -> list:
    out: list = []
    for el in ctx:
        if step.axis == "descendant":
            pool = doc.iter() if el is None else (d for c in el.children for d in c.iter())
            out.extend(d for d in pool if _matches(d, step.arg))
        elif step.axis == "child":
            pool = (
                [c for ih in doc.instance_hierarchies for c in ih.children]
                if el is None
                else el.children
            )
            out.extend(c for c in pool if _matches(c, step.arg))
        elif step.axis == "parent":
            if el is not None and el.parent is not None:
                out.append(el.parent)
        elif step.axis == "self":
            out.append(el)
        else:
            if el is not None:
                found = lookup_attribute(el, step.arg or "")
                if found is not None:
                    out.append(found)
    if step.axis == "attribute":
        return out
    seen: dict[int, Element] = {}
    for el in out:
        if el is not None:
            seen.setdefault(id(el), el)
    return sorted(seen.values(), key=lambda e: e.order)


def select(doc: AmlDocument, path: PathExpr | str, context: Element | None = None) -> list[Node]:
    """Evaluate ``path`` against ``context`` (the document root when omitted).

    Element results come back in document order without duplicates; a path
    ending in an attribute step yields :class:`AmlAttribute` leaves instead.
    """
    expr = path if isinstance(path, PathExpr) else PathExpr.parse(path)
    nodes: list = [context]
    for step in expr.steps:
        nodes = _step(doc, nodes, step)
    return [n for n in nodes if n is not None]


# -- lookups ------------------------------------------------------------------


def lookup_attribute(el: Element, dotted_name: str) -> AmlAttribute | None:
    head, *rest = dotted_name.split(".")
    attr = el.attribute(head)
    for part in rest:
        if attr is None:
            return None
        attr = attr.child(part)
    return attr


def attribute_value(el: Element, dotted_name: str) -> str | None:
    attr = lookup_attribute(el, dotted_name)
    return None if attr is None else attr.value


def resolve_ref_id(
    doc: AmlDocument, ref_id: str, expected_suc_class: str | None = None
) -> Element:
    """Find the single element carrying ``RefID == ref_id`` (optionally of one SUC class)."""
    if not ref_id:
        raise RefNotFound("empty RefID")
    candidates = [
        el
        for el in doc.elements_by_ref_id.get(ref_id, [])
        if expected_suc_class is None or el.suc_class == expected_suc_class
    ]
    if not candidates:
        suffix = f" with SUC class {expected_suc_class!r}" if expected_suc_class else ""
        raise RefNotFound(f"no element carries RefID {ref_id!r}{suffix}")
    if len(candidates) > 1:
        names = ", ".join(repr(c.name) for c in candidates)
        raise AmbiguousRef(f"RefID {ref_id!r} is carried by several elements: {names}")
    return candidates[0]


def opcua_ref_of(el: Element, attribute_name: str) -> OpcUaNodeRef | None:
    """Node reference of the OPCUAItem interface named like ``attribute_name``."""
    iface = el.interface(attribute_name)
    if iface is None or iface.interface_class != OPCUA_ITEM:
        return None
    values = {}
    for key in ("Access", "Namespace", "Identifier"):
        attr = iface.attribute(key)
        if attr is None or not (attr.value or "").strip():
            raise IncompleteOpcUaItem(
                f"OPCUAItem {attribute_name!r} on {el.name!r} lacks {key}"
            )
        values[key] = attr.value.strip()
    try:
        access = Access.parse(values["Access"])
    except ValueError as exc:
        raise IncompleteOpcUaItem(f"OPCUAItem {attribute_name!r} on {el.name!r}: {exc}") from None
    return OpcUaNodeRef(values["Namespace"], values["Identifier"], access)


def opcua_items(el: Element) -> Iterator[tuple[str, OpcUaNodeRef]]:
    for iface in el.external_interfaces:
        if iface.interface_class == OPCUA_ITEM:
            ref = opcua_ref_of(el, iface.name)
            assert ref is not None
            yield iface.name, ref
