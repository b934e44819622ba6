import json

import pytest

from conftest import BATCH, CONTINUOUS, MIXER, MIXER_BASE
from mtp2skill.cq import format_table, get_cq, list_cqs, run_cq, validate
from mtp2skill.errors import CqError, MissingBinding, UnknownCq
from mtp2skill.rdf import Iri, Literal, RdfGraph
from mtp2skill.rdf.terms import XSD_INTEGER
from mtp2skill.vocab import RDF, default_state_machine_template

TEMPLATE = default_state_machine_template()


def lexicals(table, column):
    return sorted(t.lexical if isinstance(t, Literal) else t.value for t in table.column(column))


class TestCatalogue:
    def test_nine_questions(self):
        assert [cq.id for cq in list_cqs()] == [f"CQ{i}" for i in range(1, 10)]

    def test_lookup_is_case_insensitive(self):
        assert get_cq("cq3").id == "CQ3"

    def test_unknown(self):
        with pytest.raises(UnknownCq):
            get_cq("CQ10")


class TestQuestions:
    def test_cq1_components(self, mixer_result):
        table = run_cq(mixer_result.graph, "CQ1", {"module": MIXER})
        assert lexicals(table, "name") == ["LI001", "M001", "TI001"]

    def test_cq1_is_module_scoped(self, mixer_result, filler_result):
        from mtp2skill.mapping import merge

        merged = merge([mixer_result.graph, filler_result.graph])
        assert len(run_cq(merged, "CQ1", {"module": MIXER})) == 3

    def test_cq2_state_of_value(self, mixer_result):
        table = run_cq(mixer_result.graph, "CQ2", {"skill": CONTINUOUS, "value": 64})
        assert lexicals(table, "state_name") == ["Execute"]

    @pytest.mark.parametrize("value", [0, 3, 7, 1 << 20])
    def test_cq2_invalid_value_is_empty(self, mixer_result, value):
        assert len(run_cq(mixer_result.graph, "CQ2", {"skill": CONTINUOUS, "value": value})) == 0

    def test_cq2_every_state(self, mixer_result):
        for name, value in TEMPLATE.states:
            table = run_cq(mixer_result.graph, "CQ2", {"skill": BATCH, "value": value})
            assert lexicals(table, "state_name") == [name]

    def test_cq3_capability(self, mixer_result):
        assert lexicals(run_cq(mixer_result.graph, "CQ3", {"module": MIXER}), "name") == ["Mixing"]

    def test_cq4_skills(self, mixer_result):
        table = run_cq(mixer_result.graph, "CQ4", {"capability": MIXER_BASE + "#Mixer_Mixing"})
        assert lexicals(table, "name") == ["Batch", "Continuous"]

    def test_cq5_parameters(self, mixer_result):
        rows = run_cq(mixer_result.graph, "CQ5", {"skill": CONTINUOUS}).as_dicts()
        by_name = {r["name"].lexical: r for r in rows}
        assert sorted(by_name) == ["MaxSpeed", "Speed"]
        speed = by_name["Speed"]
        assert (speed["default"].lexical, speed["min"].lexical, speed["max"].lexical) == ("300", "50", "1200")
        assert speed["unit"].lexical == "rpm"

    @pytest.mark.parametrize(
        ("transition", "value"), [("Start", 4), ("Complete", 1024), ("Reset", 2), ("Abort", 256)]
    )
    def test_cq6_command_value(self, mixer_result, transition, value):
        table = run_cq(mixer_result.graph, "CQ6", {"skill": CONTINUOUS, "transition": transition})
        assert table.column("command_value") == [Literal(str(value), XSD_INTEGER)]

    def test_cq6_automatic_transition_has_no_command(self, mixer_result):
        assert len(run_cq(mixer_result.graph, "CQ6", {"skill": CONTINUOUS, "transition": "SC"})) == 0

    def test_cq7_node(self, mixer_result):
        [row] = run_cq(mixer_result.graph, "CQ7", {"skill": BATCH}).as_dicts()
        assert row["endpoint"].lexical == "opc.tcp://192.168.0.10:4840"
        assert (row["namespace"].lexical, row["identifier"].lexical) == ("urn:mixer", "Mixing.CommandExt")
        assert row["access"].lexical == "write"

    def test_cq8_outputs(self, mixer_result):
        table = run_cq(mixer_result.graph, "CQ8", {"skill": CONTINUOUS})
        assert lexicals(table, "name") == ["ProcedureCur", "ProcedureReq", "Temperature"]

    def test_cq9_from_idle(self, mixer_result):
        table = run_cq(mixer_result.graph, "CQ9", {"skill": CONTINUOUS, "value": 16})
        rows = sorted((r["transition"].lexical, int(r["command_value"].lexical), r["target_name"].lexical) for r in table.as_dicts())
        assert rows == [("Abort", 256, "Aborting"), ("Start", 4, "Starting"), ("Stop", 8, "Stopping")]

    def test_compact_iri_binding(self, mixer_result):
        table = run_cq(mixer_result.graph, "CQ3", {"module": "mixer:Mixer"})
        assert len(table) == 1

    def test_missing_binding(self, mixer_result):
        with pytest.raises(MissingBinding):
            run_cq(mixer_result.graph, "CQ2", {"skill": CONTINUOUS})

    def test_undeclared_slot(self, mixer_result):
        with pytest.raises(CqError):
            run_cq(mixer_result.graph, "CQ3", {"module": MIXER, "colour": "red"})

    def test_bad_integer(self, mixer_result):
        with pytest.raises(CqError):
            run_cq(mixer_result.graph, "CQ2", {"skill": CONTINUOUS, "value": "sixty"})

    def test_format_table(self, mixer_result):
        text = format_table(mixer_result.graph, run_cq(mixer_result.graph, "CQ3", {"module": MIXER}))
        assert text == "capability\tname\nmixer:Mixer_Mixing\tMixing\n"


class TestValidation:
    def test_mixer_passes(self, mixer_doc, mixer_result):
        report = validate(mixer_doc, mixer_result)
        assert report.passed, report.to_text()
        assert all(r.expected for r in report.results)

    def test_filler_passes(self, filler_doc, filler_result):
        assert validate(filler_doc, filler_result).passed

    def test_empty_graph_fails_everything(self, mixer_doc):
        report = validate(mixer_doc, RdfGraph())
        assert report.failing() == [f"CQ{i}" for i in range(1, 10)]

    def test_missing_component_is_named(self, mixer_doc, mixer_result):
        g = mixer_result.graph.copy()
        sensor = Iri(MIXER_BASE + "#Mixer_TI001")
        for t in list(g.triples(sensor, None, None)):
            g.remove(t)
        report = validate(mixer_doc, g)
        assert report.failing() == ["CQ1"]
        assert "missing:    vdi2206:Sensor TI001" in report.to_text()
        assert report.to_text().endswith("overall: FAIL CQ1\n")

    def test_json_report(self, mixer_doc, mixer_result):
        data = json.loads(validate(mixer_doc, mixer_result).to_json())
        assert data["passed"] is True
        assert [c["id"] for c in data["cqs"]] == [f"CQ{i}" for i in range(1, 10)]
        assert set(data["cqs"][0]) == {"id", "status", "expected", "actual"}


def _predicates(result):
    return sorted(result.graph.predicates(), key=lambda p: p.value)


def _classes(result):
    return sorted({t.object for t in result.graph.triples(None, RDF.type, None)}, key=lambda c: c.value)


class TestMutations:
    def test_dropping_any_predicate_is_detected(self, mixer_doc, mixer_result):
        for predicate in _predicates(mixer_result):
            g = mixer_result.graph.copy()
            for t in list(g.triples(None, predicate, None)):
                g.remove(t)
            assert not validate(mixer_doc, g).passed, predicate

    def test_dropping_any_class_is_detected(self, mixer_doc, mixer_result):
        for cls in _classes(mixer_result):
            g = mixer_result.graph.copy()
            for t in list(g.triples(None, RDF.type, cls)):
                g.remove(t)
            assert not validate(mixer_doc, g).passed, cls

    def test_wrong_command_value_is_detected(self, mixer_doc, mixer_result):
        g = mixer_result.graph.copy()
        inst = Iri(CONTINUOUS + "_Idle_StartCommand_ID")
        value = Iri("http://www.hsu-ifa.de/ontologies/DINEN61360#hasValue")
        assert g.remove((inst, value, Literal("4", XSD_INTEGER)))
        g.add((inst, value, Literal("5", XSD_INTEGER)))
        assert "CQ6" in validate(mixer_doc, g).failing()
