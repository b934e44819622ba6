"""Random but well-formed MTP documents for property tests."""

from __future__ import annotations

import random
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

CAEX_NS = "http://www.dke.de/CAEX"
OPCUA_ITEM_PATH = "MTPCommunicationICLib/DataItem/OPCUAItem"
CONTROL = ("CommandExt", "StateCur", "CommandEn", "ProcedureCur", "ProcedureReq", "ProcedureExt")
ACCESS = {"CommandExt": "2", "StateCur": "1", "CommandEn": "1", "ProcedureCur": "1", "ProcedureReq": "1", "ProcedureExt": "3"}


@dataclass
class Shape:
    """What the generator put into a document, for use as a test oracle."""

    module: str
    services: dict[str, list[str]] = field(default_factory=dict)  # service -> procedures
    parameters: int = 0
    outputs: int = 0
    sensors: int = 0
    actuators: int = 0
    items: int = 0


class _Writer:
    def __init__(self) -> None:
        self.next_id = 0

    def ie(self, parent: ET.Element, name: str, suc: str) -> ET.Element:
        self.next_id += 1
        return ET.SubElement(
            parent, "InternalElement", Name=name, ID=f"id-{self.next_id}", RefBaseSystemUnitPath=suc
        )

    @staticmethod
    def attr(parent: ET.Element, name: str, value: str, data_type: str = "xs:string") -> None:
        a = ET.SubElement(parent, "Attribute", Name=name, AttributeDataType=data_type)
        ET.SubElement(a, "Value").text = value

    def item(self, parent: ET.Element, name: str, ns: str, ident: str, access: str) -> None:
        self.next_id += 1
        iface = ET.SubElement(
            parent, "ExternalInterface", Name=name, ID=f"if-{self.next_id}", RefBaseClassPath=OPCUA_ITEM_PATH
        )
        self.attr(iface, "Identifier", ident)
        self.attr(iface, "Namespace", ns)
        self.attr(iface, "Access", access, "xs:unsignedInt")


def generate(rng: random.Random, n_services: int | None = None, max_procedures: int = 5) -> tuple[bytes, Shape]:
    n_services = rng.randint(0, 5) if n_services is None else n_services
    w = _Writer()
    module = f"M{rng.randint(0, 999)}"
    ns = f"urn:{module.lower()}"
    shape = Shape(module)
    root = ET.Element("CAEXFile", SchemaVersion="3.0", FileName=f"{module}.aml", xmlns=CAEX_NS)
    mtp_ih = ET.SubElement(root, "InstanceHierarchy", Name="ModuleTypePackage")
    w.ie(mtp_ih, module, "MTPSUCLib/ModuleTypePackage")
    svc_ih = ET.SubElement(root, "InstanceHierarchy", Name="Services")
    comm_ih = ET.SubElement(root, "InstanceHierarchy", Name="CommunicationSet")
    instances = w.ie(comm_ih, "InstanceList", "MTPSUCLib/CommunicationSet/InstanceList")

    def operation(ref: str) -> None:
        op = w.ie(instances, f"{ref}_OP", "MTPDataObjectSUCLib/OperationElement")
        w.attr(op, "RefID", ref)
        low = rng.randint(0, 10)
        w.attr(op, "VExt", str(low + 1), "xs:int")
        w.attr(op, "VMin", str(low), "xs:int")
        w.attr(op, "VMax", str(low + rng.randint(2, 100)), "xs:int")
        w.attr(op, "VUnit", rng.choice(["s", "rpm", "l", "degC"]))
        shape.parameters += 1

    def indicator(name: str, ref: str | None) -> None:
        ind = w.ie(instances, name, "MTPDataObjectSUCLib/IndicatorElement")
        if ref:
            w.attr(ind, "RefID", ref)
        w.attr(ind, "V", "0", "xs:double")
        if rng.random() < 0.5:
            w.item(ind, "V", ns, f"{name}.V", "1")
            shape.items += 1
        shape.sensors += 1

    for s in range(n_services):
        name = f"S{s}"
        svc = w.ie(svc_ih, name, "MTPServiceSUCLib/Service")
        w.attr(svc, "RefID", f"ref-{name}-sc")
        sc = w.ie(instances, f"{name}_SC", "MTPDataObjectSUCLib/ServiceControl")
        w.attr(sc, "RefID", f"ref-{name}-sc")
        for attr in CONTROL:
            w.attr(sc, attr, "0", "xs:unsignedInt")
        for attr in CONTROL:
            w.item(sc, attr, ns, f"{name}.{attr}", ACCESS[attr])
            shape.items += 1
        shape.parameters += 1  # ProcedureExt
        if rng.random() < 0.5:
            cp = w.ie(svc, f"{name}Limit", "MTPServiceSUCLib/ServiceElement/ConfigurationParameter")
            w.attr(cp, "RefID", f"ref-{name}-limit")
            operation(f"ref-{name}-limit")
        procs = []
        for p in range(rng.randint(0, max_procedures)):
            pname = f"P{p}"
            procs.append(pname)
            proc = w.ie(svc, pname, "MTPServiceSUCLib/ServiceProcedure")
            for k in range(rng.randint(0, 2)):
                suc = rng.choice(["ProcedureParameter", "ProcessValueIn"])
                el = w.ie(proc, f"{pname}In{k}", f"MTPServiceSUCLib/ServiceElement/{suc}")
                ref = f"ref-{name}-{pname}-in{k}"
                w.attr(el, "RefID", ref)
                operation(ref)
            for k in range(rng.randint(0, 2)):
                suc = rng.choice(["ProcessValueOut", "ReportValue"])
                el = w.ie(proc, f"{pname}Out{k}", f"MTPServiceSUCLib/ServiceElement/{suc}")
                ref = f"ref-{name}-{pname}-out{k}"
                w.attr(el, "RefID", ref)
                indicator(f"{name}{pname}X{k}", ref)
                shape.outputs += 1
        shape.outputs += 2  # ProcedureCur, ProcedureReq
        shape.services[name] = procs
    for k in range(rng.randint(0, 3)):
        indicator(f"TI{k}", None)
    for k in range(rng.randint(0, 3)):
        act = w.ie(instances, f"Y{k}", "MTPDataObjectSUCLib/ActiveElement")
        shape.actuators += 1
        if rng.random() < 0.5:
            w.attr(act, "V", "0", "xs:double")
            w.item(act, "V", ns, f"Y{k}.V", "3")
            shape.items += 1
    sources = w.ie(comm_ih, "SourceList", "MTPSUCLib/CommunicationSet/SourceList")
    server = w.ie(sources, "OPCUAServer", "MTPCommunicationSUCLib/ServerAssembly/OPCUAServer")
    w.attr(server, "Endpoint", f"opc.tcp://10.0.0.{rng.randint(1, 254)}:4840", "xs:anyURI")
    ET.register_namespace("", CAEX_NS)
    data = ET.tostring(root, encoding="utf-8", xml_declaration=True)
    return data, shape
