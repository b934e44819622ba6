import json
import random
import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FILLER_BASE, MIXER_AML, MIXER_BASE, MIXER_TTL, BATCH, CONTINUOUS
from mtpgen import generate
from mtp2skill.aml import open_mtp, parse_aml
from mtp2skill.errors import (
    BaseIriCollision,
    ConfigError,
    InvalidBaseIri,
    InvalidTemplate,
    MissingCommandIndividual,
    MissingStateOutput,
    PrefixConflict,
)
from mtp2skill.mapping import (
    TABLE_ROWS,
    MappingRule,
    RefIdJoin,
    TemplateIri,
    apply_rules,
    builtin_rules,
    class_counts,
    load_rules,
    map_document,
    merge,
    rules_from_dicts,
    rules_to_dicts,
    synthesize_state_machine,
)
from mtp2skill.rdf import Iri, Literal, RdfGraph, serialize_turtle
from mtp2skill.rdf.terms import XSD_INTEGER, XSD_STRING
from mtp2skill.vocab import CAP, DIN61360, ISA88, OPCUA, RDF, VDI2206, VDI3682, VOCABULARY, default_state_machine_template

TEMPLATE = default_state_machine_template()
SKILL_CLASS = CAP.OpcUaVariableSkill


def skills(graph):
    return sorted(graph.subjects(RDF.type, SKILL_CLASS), key=lambda i: i.value)


def tiny(services_xml: str) -> bytes:
    return (
        '<CAEXFile xmlns="http://www.dke.de/CAEX">'
        '<InstanceHierarchy Name="M"><InternalElement Name="Mod" ID="m" RefBaseSystemUnitPath="L/ModuleTypePackage"/></InstanceHierarchy>'
        f'<InstanceHierarchy Name="S">{services_xml}</InstanceHierarchy></CAEXFile>'
    ).encode()


class TestBuiltinRules:
    def test_single_skill_rule(self):
        assert sum(SKILL_CLASS in r.classes for r in builtin_rules()) == 1

    def test_command_rule_joins_service_control(self):
        [rule] = [r for r in builtin_rules() if CAP.SkillCommand in r.classes]
        assert rule.join == RefIdJoin("ServiceControl")
        assert rule.iterator == "//IE[suc='Service']"

    def test_configuration_parameter_links_all_skills_of_service(self, mixer_result):
        g = mixer_result.graph
        param = Iri(MIXER_BASE + "#Mixer_Mixing_MaxSpeed")
        assert set(g.subjects(CAP.hasSkillParameter, param)) == {Iri(CONTINUOUS), Iri(BATCH)}

    def test_every_row_has_a_rule(self):
        rows = {r.row for r in builtin_rules()} | {
            m.object.row for r in builtin_rules() for m in r.maps if getattr(m.object, "row", None)
        }
        assert set(TABLE_ROWS) <= rows

    def test_unknown_placeholder_rejected(self):
        with pytest.raises(ConfigError):
            MappingRule("x", "//IE", "{nope}", (CAP.Capability,))

    def test_rules_json_roundtrip(self, tmp_path, mixer_doc, mixer_result):
        data = rules_to_dicts(builtin_rules())
        assert rules_from_dicts(json.loads(json.dumps(data))) == builtin_rules()
        path = tmp_path / "rules.json"
        path.write_text(json.dumps({"rules": data}))
        again = map_document(mixer_doc, MIXER_BASE, rules=load_rules(path))
        assert again.graph == mixer_result.graph

    def test_malformed_rules_file(self, tmp_path):
        path = tmp_path / "rules.json"
        path.write_text('[{"name": "x"}]')
        with pytest.raises(ConfigError):
            load_rules(path)


class TestMixer:
    def test_golden(self, mixer_result):
        assert serialize_turtle(mixer_result.graph) == MIXER_TTL.read_text(encoding="utf-8")

    def test_no_warnings(self, mixer_result):
        assert mixer_result.warnings == []

    def test_one_command_shared_by_both_skills(self, mixer_result):
        g = mixer_result.graph
        [command] = g.subjects(RDF.type, CAP.SkillCommand)
        assert command == Iri(MIXER_BASE + "#Mixer_Mixing_CommandExt")
        assert set(g.subjects(CAP.hasSkillCommand, command)) == {Iri(CONTINUOUS), Iri(BATCH)}

    def test_components(self, mixer_result):
        counts = mixer_result.stats["classes"]
        assert (counts["vdi2206:Sensor"], counts["vdi2206:Actuator"]) == (2, 1)

    def test_service_is_dual_typed_and_bound_to_module(self, mixer_result):
        g = mixer_result.graph
        service = Iri(MIXER_BASE + "#Mixer_Mixing")
        assert set(g.objects(service, RDF.type)) == {VDI3682.Process, CAP.Capability}
        assert (Iri(MIXER_BASE + "#Mixer"), CAP.hasCapability, service) in g

    def test_endpoint_literal(self, mixer_result):
        server = Iri(MIXER_BASE + "#Mixer_OPCUAServer")
        endpoint = mixer_result.graph.value(server, OPCUA.endpointUrl)
        assert endpoint.lexical == "opc.tcp://192.168.0.10:4840"

    def test_parameter_literals_are_typed(self, mixer_result):
        g = mixer_result.graph
        duration = Iri(MIXER_BASE + "#Mixer_Mixing_Batch_Duration")
        assert g.value(duration, CAP.maxValue) == Literal("3600", XSD_INTEGER)
        assert g.value(duration, CAP.unit) == Literal("s", XSD_STRING)

    def test_stats_rows_match_raw_xml(self, mixer_result):
        raw = MIXER_AML.read_text()

        def suc(name):
            return len(re.findall(rf'RefBaseSystemUnitPath="[^"]*/{name}"', raw))

        def attribute(name):
            return raw.count(f'<Attribute Name="{name}"')

        expected = {f"IE {n}": suc(n) for n in ("ModuleTypePackage", "Service", "ServiceProcedure", "IndicatorElement", "ActiveElement", "OPCUAServer")}
        expected |= {f"Attribute {n}": attribute(n) for n in ("VExt", "VMax", "VMin", "VUnit", "ProcedureExt", "CommandExt", "StateCur", "ProcedureCur", "ProcedureReq")}
        expected["Attribute V"] = suc("ProcessValueOut") + suc("ReportValue")
        assert mixer_result.stats["rows"] == expected

    def test_class_stats_equal_typed_subjects(self, mixer_result):
        g = mixer_result.graph
        for key, count in mixer_result.stats["classes"].items():
            prefix, local = key.split(":")
            assert len(g.subjects(RDF.type, Iri(g.prefixes[prefix] + local))) == count


def _assert_invariants(result):
    g = result.graph
    assert class_counts(g) == result.stats["classes"]
    for subject in {t.subject for t in g}:
        types = g.objects(subject, RDF.type)
        if types == {VDI3682.Process, CAP.Capability}:
            continue
        assert len(types) <= 1, subject
        assert types <= VOCABULARY
    for skill in skills(g):
        assert len(g.objects(skill, CAP.hasSkillCommand)) == 1
        assert len(g.objects(skill, CAP.hasCurrentStateOutput)) == 1


class TestInvariants:
    def test_mixer(self, mixer_result):
        _assert_invariants(mixer_result)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 100_000))
    def test_generated(self, seed):
        data, shape = generate(random.Random(seed))
        result = map_document(open_mtp(data), "http://example.org/gen")
        _assert_invariants(result)
        assert len(skills(result.graph)) == sum(len(p) for p in shape.services.values())
        assert result.stats["classes"].get("cap:SkillParameter", 0) == shape.parameters
        assert result.stats["classes"].get("cap:SkillOutput", 0) == shape.outputs
        assert result.warnings == []

    def test_data_elements(self, mixer_result):
        g = mixer_result.graph
        for skill in skills(g):
            [sm] = g.objects(skill, CAP.behaviorConformsTo)
            [command] = g.objects(skill, CAP.hasSkillCommand)
            for t in g.objects(sm, ISA88.hasTransition):
                label = g.value(t, Iri("http://www.w3.org/2000/01/rdf-schema#label")).lexical
                des = g.objects(t, DIN61360.hasDataElement)
                if label == "SC":
                    assert des == set()
                    continue
                [de] = des
                assert (command, DIN61360.hasDataElement, de) in g
                inst = g.value(de, DIN61360.hasInstanceDescription)
                assert g.value(inst, DIN61360.expressionGoal) == Literal("Requirement")
                assert g.value(inst, DIN61360.logicInterpretation) == Literal("Equal")
                assert g.value(inst, DIN61360.hasValue) == Literal(str(TEMPLATE.command_value(label)), XSD_INTEGER)
                assert g.value(de, DIN61360.hasTypeDescription) == CAP.SkillCommandVariable_TD
            for st_ in g.objects(sm, ISA88.hasState):
                [de] = g.objects(st_, DIN61360.hasDataElement)
                inst = g.value(de, DIN61360.hasInstanceDescription)
                name = g.value(st_, Iri("http://www.w3.org/2000/01/rdf-schema#label")).lexical
                assert g.value(inst, DIN61360.expressionGoal) == Literal("Assurance")
                assert g.value(inst, DIN61360.hasValue) == Literal(str(TEMPLATE.state_value(name)), XSD_INTEGER)

    def test_state_machines_disjoint_but_share_type_descriptions(self, mixer_result):
        g = mixer_result.graph
        a, b = skills(g)

        def iris(skill):
            [sm] = g.objects(skill, CAP.behaviorConformsTo)
            return g.objects(sm, ISA88.hasState) | g.objects(sm, ISA88.hasTransition)

        assert len(iris(a)) == len(iris(b)) == 16 + 44
        assert not iris(a) & iris(b)
        tds = g.objects(None, DIN61360.hasTypeDescription)
        assert tds == {CAP.SkillCommandVariable_TD, CAP.CurrentStateOutput_TD}

    def test_determinism(self, mixer_doc):
        a = serialize_turtle(map_document(mixer_doc, MIXER_BASE).graph)
        b = serialize_turtle(map_document(open_mtp(MIXER_AML.read_bytes()), MIXER_BASE).graph)
        assert a == b


class TestDegradation:
    def test_empty_document(self):
        result = map_document(parse_aml(b'<CAEXFile xmlns="http://www.dke.de/CAEX"/>'), "http://e.org/x")
        assert len(result.graph) == 0
        assert all(v == 0 for v in result.stats["rows"].values())
        assert result.stats["classes"] == {}

    def test_unresolved_service_control(self):
        xml = tiny(
            '<InternalElement Name="Svc" ID="s" RefBaseSystemUnitPath="L/Service">'
            '<Attribute Name="RefID"><Value>missing</Value></Attribute>'
            '<InternalElement Name="Proc" ID="p" RefBaseSystemUnitPath="L/ServiceProcedure"/>'
            "</InternalElement>"
        )
        result = map_document(parse_aml(xml), "http://e.org/x")
        assert any("unresolved join" in w for w in result.warnings)
        [skill] = skills(result.graph)
        assert result.graph.objects(skill, CAP.hasSkillCommand) == set()
        assert result.graph.objects(skill, CAP.behaviorConformsTo) == set()

    def test_sanitised_names_stay_unique(self):
        xml = tiny(
            '<InternalElement Name="A-B" ID="s1" RefBaseSystemUnitPath="L/Service"/>'
            '<InternalElement Name="A_B" ID="s2" RefBaseSystemUnitPath="L/Service"/>'
        )
        g = map_document(parse_aml(xml), "http://e.org/x").graph
        assert {c.value for c in g.subjects(RDF.type, CAP.Capability)} == {
            "http://e.org/x#Mod_A_B",
            "http://e.org/x#Mod_A_B_2",
        }

    def test_bad_numeric_literal_kept_as_string(self):
        xml = tiny(
            '<InternalElement Name="Svc" ID="s" RefBaseSystemUnitPath="L/Service">'
            '<InternalElement Name="P" ID="p" RefBaseSystemUnitPath="L/ConfigurationParameter">'
            '<Attribute Name="RefID"><Value>op</Value></Attribute></InternalElement></InternalElement>'
            '<InternalElement Name="Op" ID="o" RefBaseSystemUnitPath="L/OperationElement">'
            '<Attribute Name="RefID"><Value>op</Value></Attribute>'
            '<Attribute Name="VMax" AttributeDataType="xs:int"><Value>lots</Value></Attribute></InternalElement>'
        )
        result = map_document(parse_aml(xml), "http://e.org/x")
        param = Iri("http://e.org/x#Mod_Svc_P")
        assert result.graph.value(param, CAP.maxValue) == Literal("lots")
        assert any("not a valid integer" in w for w in result.warnings)

    def test_state_machine_name_clash_is_a_warning(self):
        xml = tiny(
            '<InternalElement Name="Svc" ID="s" RefBaseSystemUnitPath="L/Service">'
            '<Attribute Name="RefID"><Value>sc</Value></Attribute>'
            '<InternalElement Name="P" ID="p" RefBaseSystemUnitPath="L/ServiceProcedure">'
            '<InternalElement Name="Idle" ID="x" RefBaseSystemUnitPath="L/ProcedureParameter">'
            '<Attribute Name="RefID"><Value>op</Value></Attribute></InternalElement>'
            "</InternalElement></InternalElement>"
            '<InternalElement Name="Op" ID="o" RefBaseSystemUnitPath="L/OperationElement">'
            '<Attribute Name="RefID"><Value>op</Value></Attribute></InternalElement>'
            '<InternalElement Name="SC" ID="c" RefBaseSystemUnitPath="L/ServiceControl">'
            '<Attribute Name="RefID"><Value>sc</Value></Attribute>'
            '<Attribute Name="CommandExt"/><Attribute Name="StateCur"/></InternalElement>'
        )
        result = map_document(parse_aml(xml), "http://e.org/x")
        assert any("already in use" in w for w in result.warnings)

    @pytest.mark.parametrize("base", ["relative", "http://e.org/x#frag", ""])
    def test_invalid_base(self, mixer_doc, base):
        with pytest.raises(InvalidBaseIri):
            map_document(mixer_doc, base)

    def test_invalid_template(self, mixer_doc):
        import dataclasses

        with pytest.raises(InvalidTemplate):
            map_document(mixer_doc, MIXER_BASE, dataclasses.replace(TEMPLATE, states=()))


class TestSynthesis:
    def base_graph(self):
        g = RdfGraph()
        skill, cmd, out = (Iri(f"http://e.org/x#{n}") for n in ("S", "C", "O"))
        g.add((skill, RDF.type, SKILL_CLASS)).add((cmd, RDF.type, CAP.SkillCommand)).add((out, RDF.type, CAP.CurrentStateOutput))
        return g, skill, cmd, out

    def test_start_requirement_is_four(self):
        g, skill, cmd, out = self.base_graph()
        synthesize_state_machine(g, skill, TEMPLATE, cmd, out)
        start = Iri("http://e.org/x#S_Idle_Start")
        de = g.value(start, DIN61360.hasDataElement)
        inst = g.value(de, DIN61360.hasInstanceDescription)
        assert g.value(inst, DIN61360.hasValue) == Literal("4", XSD_INTEGER)
        assert (cmd, DIN61360.hasDataElement, de) in g

    def test_missing_command(self):
        g, skill, _, out = self.base_graph()
        with pytest.raises(MissingCommandIndividual):
            synthesize_state_machine(g, skill, TEMPLATE, Iri("http://e.org/x#nothing"), out)

    def test_missing_state_output(self):
        g, skill, cmd, _ = self.base_graph()
        with pytest.raises(MissingStateOutput):
            synthesize_state_machine(g, skill, TEMPLATE, cmd, Iri("http://e.org/x#nothing"))


class TestMerge:
    def test_sum_of_sizes(self, mixer_result, filler_result):
        merged = merge([mixer_result.graph, filler_result.graph])
        assert len(merged) == len(mixer_result.graph) + len(filler_result.graph)

    def test_single(self, mixer_result):
        assert merge([mixer_result.graph]) == mixer_result.graph

    def test_same_base(self, mixer_result, mixer_doc):
        with pytest.raises(BaseIriCollision):
            merge([mixer_result.graph, map_document(mixer_doc, MIXER_BASE).graph])

    def test_same_module_iri_from_different_bases(self, mixer_result):
        g = RdfGraph([(Iri(MIXER_BASE + "#Mixer"), RDF.type, VDI2206.Module)], base="http://other.org/m")
        with pytest.raises(BaseIriCollision):
            merge([mixer_result.graph, g])

    def test_prefix_conflict(self, mixer_result, filler_doc):
        other = map_document(filler_doc, FILLER_BASE, prefix="mixer").graph
        with pytest.raises(PrefixConflict):
            merge([mixer_result.graph, other])


def test_apply_rules_with_custom_rule(mixer_doc):
    rule = MappingRule(
        "procedures-as-capabilities",
        "//IE[suc='ServiceProcedure']",
        "{module}_{procedure}_Cap",
        (CAP.Capability,),
        maps=(),
    )
    result = apply_rules(mixer_doc, [rule], "http://e.org/x")
    assert len(result.graph.subjects(RDF.type, CAP.Capability)) == 2
    assert TemplateIri("{module}").path is None
