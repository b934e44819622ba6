"""End-to-end acceptance suite: one test per criterion, each reporting PASS/FAIL."""

import random
import re
import threading
import time
from contextlib import contextmanager

from conftest import CONTINUOUS, FILLER_BASE, MIXER, MIXER_AML, MIXER_BASE
from mtpgen import generate
from mtp2skill.aml import open_mtp
from mtp2skill.cq import run_cq, validate
from mtp2skill.executor import invoke, resolve_skill
from mtp2skill.mapping import TABLE_ROWS, builtin_rules, map_document, merge
from mtp2skill.rdf import BgpQuery, Literal, parse_turtle, query_bgp, serialize_turtle
from mtp2skill.rdf.terms import XSD_INTEGER
from mtp2skill.simulator import VirtualClock, build_address_space
from mtp2skill.vocab import CAP, PREFIXES, RDF, default_state_machine_template

TEMPLATE = default_state_machine_template()


@contextmanager
def criterion(request, label):
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")
    status = "FAIL"
    try:
        yield
        status = "PASS"
    finally:
        line = f"[acceptance] {status} {label}"
        print(line)
        if reporter is not None:
            reporter.ensure_newline()
            reporter.write_line(line)


def convert(data: bytes, base: str):
    result = map_document(open_mtp(data), base)
    return result, serialize_turtle(result.graph)


def count_rows(xml: str) -> dict[str, int]:
    """Independent tally of the mixer fixture's mapped rows, straight from the XML text."""

    def suc(name):
        return len(re.findall(rf'RefBaseSystemUnitPath="[^"]*/{name}"', xml))

    def attribute(name):
        return len(re.findall(rf'<Attribute Name="{name}"', xml))

    counts = {}
    for row in TABLE_ROWS:
        kind, name = row.split(" ", 1)
        if kind == "IE":
            counts[row] = suc(name)
        elif name == "V":
            counts[row] = suc("ProcessValueOut") + suc("ReportValue")
        else:
            counts[row] = attribute(name)
    return counts


def test_table_rows_complete(request):
    with criterion(request, "1 every mapping-table row yields individuals; stats match the XML tally; conversion < 1 s"):
        data = MIXER_AML.read_bytes()
        start = time.perf_counter()
        result, _ = convert(data, MIXER_BASE)
        elapsed = time.perf_counter() - start
        assert elapsed < 1.0, elapsed
        oracle = count_rows(MIXER_AML.read_text(encoding="utf-8"))
        assert result.stats["rows"] == oracle
        present = {row for row, n in oracle.items() if n}
        for rule in builtin_rules():
            if rule.row in present:
                for cls in rule.classes:
                    assert result.graph.subjects(RDF.type, cls), (rule.row, cls)


START_ANCHOR = BgpQuery.parse(
    """
    ?skill a cap:OpcUaVariableSkill .
    ?skill cap:hasSkillCommand ?command .
    ?command a cap:SkillCommand .
    ?skill cap:behaviorConformsTo ?sm .
    ?sm isa88:hasTransition ?t .
    ?t rdfs:label "Start" .
    ?t din61360:hasDataElement ?de .
    ?command din61360:hasDataElement ?de .
    ?de din61360:hasInstanceDescription ?id .
    ?id din61360:expressionGoal "Requirement" .
    ?id din61360:logicInterpretation "Equal" .
    ?id din61360:hasValue ?value .
    """,
    ("skill", "value"),
    PREFIXES,
)


def test_start_requires_four(request, mixer_result):
    with criterion(request, "2 Start transition requires command value 4"):
        g = mixer_result.graph
        rows = query_bgp(g, START_ANCHOR).rows
        skills = g.subjects(RDF.type, CAP.OpcUaVariableSkill)
        assert {s for s, _ in rows} == skills
        assert len(rows) == len(skills) == 2
        assert {v for _, v in rows} == {Literal("4", XSD_INTEGER)}
        for skill in skills:
            assert len(g.objects(skill, CAP.hasSkillCommand)) == 1


def test_cardinality(request, mixer_result):
    with criterion(request, "3 one command and one state output per skill (fixture + 100 random MTPs)"):
        rng = random.Random(20240601)
        graphs = [mixer_result.graph]
        total_skills = 0
        for i in range(100):
            data, shape = generate(rng)
            result = map_document(open_mtp(data), f"http://example.org/gen{i}")
            assert result.warnings == []
            graphs.append(result.graph)
            total_skills += sum(len(p) for p in shape.services.values())
        found = 0
        for g in graphs:
            for skill in g.subjects(RDF.type, CAP.OpcUaVariableSkill):
                found += 1
                assert len(g.objects(skill, CAP.hasSkillCommand)) == 1, skill
                assert len(g.objects(skill, CAP.hasCurrentStateOutput)) == 1, skill
        assert found == total_skills + 2
        assert total_skills > 0


def test_competency_questions(request, mixer_doc, mixer_result):
    with criterion(request, "4 nine CQs pass; every single-class mutation fails a CQ"):
        report = validate(mixer_doc, mixer_result)
        assert report.passed, report.to_text()
        g = mixer_result.graph
        survivors = []
        for predicate in g.predicates():
            mutated = g.copy()
            for t in list(mutated.triples(None, predicate, None)):
                mutated.remove(t)
            if validate(mixer_doc, mutated).passed:
                survivors.append(predicate.value)
        for cls in {t.object for t in g.triples(None, RDF.type, None)}:
            mutated = g.copy()
            for t in list(mutated.triples(None, RDF.type, cls)):
                mutated.remove(t)
            if validate(mixer_doc, mutated).passed:
                survivors.append(f"a {cls.value}")
        assert survivors == []


def test_determinism(request):
    with criterion(request, "5 byte-identical conversions; Turtle round trip is a fixpoint"):
        data = MIXER_AML.read_bytes()
        _, first = convert(data, MIXER_BASE)
        _, second = convert(data, MIXER_BASE)
        assert first == second
        assert serialize_turtle(parse_turtle(first)) == first


def test_merge(request, mixer_result, filler_result):
    with criterion(request, "6 merged triple count is the sum; CQ1 stays module-scoped"):
        merged = merge([mixer_result.graph, filler_result.graph])
        assert len(merged) == len(mixer_result.graph) + len(filler_result.graph)
        for module, graph in ((MIXER, mixer_result.graph), (FILLER_BASE + "#Filler", filler_result.graph)):
            alone = run_cq(graph, "CQ1", {"module": module}).rows
            together = run_cq(merged, "CQ1", {"module": module}).rows
            assert together == alone and alone


class VirtualDriver(threading.Thread):
    """Advances the simulator's virtual clock in fixed steps while the executor waits."""

    def __init__(self, sim, step=0.05, pause=0.002):
        super().__init__(daemon=True)
        self.sim, self.step, self.pause = sim, step, pause
        self.halt = threading.Event()

    def run(self):
        while not self.halt.wait(self.pause):
            self.sim.advance(self.step)


def test_closed_loop(request, mixer_doc, mixer_result):
    with criterion(request, "7 closed-loop Start/Complete/Reset cycle, < 5 s"):
        start = time.perf_counter()
        sim = build_address_space(mixer_doc, clock=VirtualClock(), dwell=0.1)
        driver = VirtualDriver(sim)
        driver.start()
        try:
            with sim.serve() as wire:
                binding = resolve_skill(mixer_result.graph, CONTINUOUS)
                with invoke(binding, "Start", endpoint=wire.address) as handle:
                    assert handle.await_state("Execute", 4.0).reached
                    handle.fire("Complete")
                    assert handle.await_state("Completed", 4.0).reached
                    handle.fire("Reset")
                    assert handle.await_state("Idle", 4.0).reached
                    values = handle.values()
        finally:
            driver.halt.set()
            driver.join()
        expected = [TEMPLATE.state_value(s) for s in ("Starting", "Execute", "Completing", "Completed", "Resetting", "Idle")]
        assert values == expected == [8, 64, 65536, 131072, 32768, 16]
        assert time.perf_counter() - start < 5.0


def test_simulator_fuzz(request, mixer_doc):
    with criterion(request, "8 10,000 random command writes keep StateCur/CommandEn consistent"):
        rng = random.Random(1234)
        sim = build_address_space(mixer_doc, clock=VirtualClock(), dwell=0.1)
        rt = sim.services["Mixing"]
        command, state, enable = (rt.control[a] for a in ("CommandExt", "StateCur", "CommandEn"))
        valid_states = {v for _, v in TEMPLATE.states}
        values = [v for _, v in TEMPLATE.commands] + [0, 1, 3, 2048, -4, 2**31]
        for _ in range(10_000):
            sim.write(command, rng.choice(values))
            if rng.random() < 0.3:
                sim.advance(rng.choice([0.0, 0.05, 0.1, 1.0]))
            current = sim.read(state)
            assert current in valid_states
            name = TEMPLATE.state_for_value(current)
            assert sim.read(enable) == TEMPLATE.command_enable_mask(name)
            assert rt.state == name
