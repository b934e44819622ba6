"""T-Box terms of the capability/skill model and the MTP state-machine tables.

Relation names that do not appear in the published model excerpts are minted
here under the same namespaces; those are marked "minted" below.
"""

from __future__ import annotations

import configparser
import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .errors import ConfigError, InvalidTemplate, UnknownCommand, UnknownState
from .rdf.terms import RDF_NS, RDFS_NS, XSD_NS, Iri, Namespace

CAP = Namespace(
    "http://www.hsu-ifa.de/ontologies/capability-skill-model#",
    (
        "Capability",
        "Skill",
        "OpcUaSkill",
        "OpcUaVariableSkill",
        "SkillParameter",
        "SkillCommand",
        "CurrentStateOutput",
        "SkillOutput",
        "hasCapability",
        "providesSkill",
        "isExecutableViaOpcUaSkill",
        "hasSkillParameter",
        "hasSkillCommand",
        "hasCurrentStateOutput",
        "hasSkillOutput",
        "behaviorConformsTo",
        "SkillCommandVariable_TD",
        "CurrentStateOutput_TD",
        # minted
        "hasUaVariable",
        "parameterKind",
        "parameterValue",
        "minValue",
        "maxValue",
        "unit",
    ),
)
VDI3682 = Namespace("http://www.hsu-ifa.de/ontologies/VDI3682#", ("Process",))
VDI2206 = Namespace(
    "http://www.hsu-ifa.de/ontologies/VDI2206#",
    ("Module", "Sensor", "Actuator", "hasComponent"),
)
ISA88 = Namespace(
    "http://www.hsu-ifa.de/ontologies/ISA-TR88#",
    ("StateMachine", "State", "Transition", "hasState", "hasTransition", "fromState", "toState"),
)
DIN61360 = Namespace(
    "http://www.hsu-ifa.de/ontologies/DINEN61360#",
    (
        "TypeDescription",
        "InstanceDescription",
        "DataElement",
        "hasTypeDescription",
        "hasInstanceDescription",
        "hasDataElement",
        "hasValue",
        "expressionGoal",
        "logicInterpretation",
    ),
)
OPCUA = Namespace(
    "http://www.hsu-ifa.de/ontologies/OpcUa#",
    (
        "UaServer",
        "UaNodeSet",
        "UaVariable",
        "endpointUrl",
        "nodeNamespace",
        "nodeIdentifier",
        "hasNode",
        # minted
        "hasNodeSet",
        "accessLevel",
    ),
)
RDF = Namespace(RDF_NS, ("type",))
RDFS = Namespace(RDFS_NS, ("label",))
XSD = Namespace(XSD_NS, ("string", "integer", "double", "decimal", "boolean", "anyURI"))

PREFIXES: dict[str, str] = {
    "cap": CAP.base,
    "vdi3682": VDI3682.base,
    "vdi2206": VDI2206.base,
    "isa88": ISA88.base,
    "din61360": DIN61360.base,
    "opcua": OPCUA.base,
    "rdf": RDF.base,
    "rdfs": RDFS.base,
    "xsd": XSD.base,
}

VOCABULARY: frozenset[Iri] = frozenset(
    iri for ns in (CAP, VDI3682, VDI2206, ISA88, DIN61360, OPCUA, RDF, RDFS) for iri in ns.all_terms()
)


class ExpressionGoal(enum.Enum):
    REQUIREMENT = "Requirement"
    ASSURANCE = "Assurance"
    ACTUAL_VALUE = "ActualValue"


class LogicInterpretation(enum.Enum):
    EQUAL = "Equal"
    LESS_THAN = "LessThan"
    GREATER_THAN = "GreaterThan"


# -- state machine tables -----------------------------------------------------

AUTOMATIC = "SC"  # name carried by every automatic (state complete) transition

DEFAULT_COMMANDS: dict[str, int] = {
    "Reset": 2,
    "Start": 4,
    "Stop": 8,
    "Hold": 16,
    "Unhold": 32,
    "Pause": 64,
    "Resume": 128,
    "Abort": 256,
    "Restart": 512,
    "Complete": 1024,
}

DEFAULT_STATES: dict[str, int] = {
    "Idle": 16,
    "Starting": 8,
    "Execute": 64,
    "Completing": 65536,
    "Completed": 131072,
    "Resetting": 32768,
    "Pausing": 8192,
    "Paused": 32,
    "Resuming": 16384,
    "Holding": 1024,
    "Held": 2048,
    "Unholding": 4096,
    "Stopping": 128,
    "Stopped": 4,
    "Aborting": 256,
    "Aborted": 512,
}

_STOPPABLE = (
    "Idle",
    "Starting",
    "Execute",
    "Completing",
    "Completed",
    "Paused",
    "Pausing",
    "Resuming",
    "Held",
    "Holding",
    "Unholding",
)


@dataclass(frozen=True)
class TransitionDef:
    name: str
    source: str
    target: str
    command: str | None = None  # None for automatic transitions

    @property
    def automatic(self) -> bool:
        return self.command is None


@dataclass(frozen=True)
class StateMachineTemplate:
    """States, transitions and the command value table of an MTP service state machine."""

    states: tuple[tuple[str, int], ...]
    transitions: tuple[TransitionDef, ...]
    commands: tuple[tuple[str, int], ...]

    @property
    def state_names(self) -> list[str]:
        return [name for name, _ in self.states]

    @property
    def state_table(self) -> dict[str, int]:
        return dict(self.states)

    @property
    def command_table(self) -> dict[str, int]:
        return dict(self.commands)

    def state_value(self, state: str) -> int:
        try:
            return self.state_table[state]
        except KeyError:
            raise UnknownState(f"unknown state {state!r}") from None

    def command_value(self, command: str) -> int:
        try:
            return self.command_table[command]
        except KeyError:
            raise UnknownCommand(f"unknown command {command!r}") from None

    def state_for_value(self, value: int) -> str | None:
        for name, v in self.states:
            if v == value:
                return name
        return None

    def command_for_value(self, value: int) -> str | None:
        for name, v in self.commands:
            if v == value:
                return name
        return None

    def outgoing(self, state: str) -> list[TransitionDef]:
        return [t for t in self.transitions if t.source == state]

    def commanded(self, state: str, command: str) -> TransitionDef | None:
        for t in self.transitions:
            if t.source == state and t.command == command:
                return t
        return None

    def automatic_from(self, state: str) -> TransitionDef | None:
        for t in self.transitions:
            if t.source == state and t.automatic:
                return t
        return None

    def enabled_commands(self, state: str) -> list[str]:
        return [t.command for t in self.outgoing(state) if t.command is not None]

    def command_enable_mask(self, state: str) -> int:
        mask = 0
        for cmd in self.enabled_commands(state):
            mask |= self.command_value(cmd)
        return mask

    def settle(self, state: str) -> str:
        """Follow automatic transitions from ``state`` until none is left."""
        seen = {state}
        while (t := self.automatic_from(state)) is not None and t.target not in seen:
            state = t.target
            seen.add(state)
        return state

    def validate(self) -> "StateMachineTemplate":
        """Raise :class:`InvalidTemplate` unless every template invariant holds."""
        names = self.state_names
        if not names:
            raise InvalidTemplate("template has no states")
        if len(set(names)) != len(names):
            raise InvalidTemplate("state names are not unique")
        for label, table in (("state", dict(self.states)), ("command", dict(self.commands))):
            values = list(table.values())
            if len(set(values)) != len(values):
                raise InvalidTemplate(f"{label} values are not distinct")
            bad = [k for k, v in table.items() if v <= 0 or v & (v - 1)]
            if bad:
                raise InvalidTemplate(f"{label} values are not powers of two: {bad}")
        if "Idle" not in names:
            raise InvalidTemplate("template has no Idle state")
        commands = self.command_table
        seen: set[tuple[str, str]] = set()
        automatic_sources: set[str] = set()
        for t in self.transitions:
            if t.source not in names or t.target not in names:
                raise InvalidTemplate(f"transition {t.name} {t.source}->{t.target} names an unknown state")
            if t.command is not None and t.command not in commands:
                raise InvalidTemplate(f"transition {t.name} uses unknown command {t.command!r}")
            key = (t.source, t.name)
            if key in seen:
                raise InvalidTemplate(f"transition {t.name!r} leaves {t.source} more than once")
            seen.add(key)
            if t.automatic:
                if t.source in automatic_sources:
                    raise InvalidTemplate(f"state {t.source} has several automatic transitions")
                automatic_sources.add(t.source)
        if "Execute" not in names or "Start" not in commands:
            raise InvalidTemplate("template needs an Execute state and a Start command")
        start = self.commanded("Idle", "Start")
        if start is None or "Execute" not in self._automatic_closure(start.target):
            raise InvalidTemplate("Execute is not reachable from Idle via Start and automatic transitions")
        return self

    def _automatic_closure(self, state: str) -> set[str]:
        reached = {state}
        while (t := self.automatic_from(state)) is not None and t.target not in reached:
            state = t.target
            reached.add(state)
        return reached


def _default_transitions() -> list[TransitionDef]:
    def cmd(source: str, command: str, target: str) -> TransitionDef:
        return TransitionDef(command, source, target, command)

    def auto(source: str, target: str) -> TransitionDef:
        return TransitionDef(AUTOMATIC, source, target)

    ts = [
        cmd("Idle", "Start", "Starting"),
        auto("Starting", "Execute"),
        cmd("Execute", "Complete", "Completing"),
        auto("Completing", "Completed"),
        cmd("Completed", "Reset", "Resetting"),
        auto("Resetting", "Idle"),
        cmd("Execute", "Hold", "Holding"),
        auto("Holding", "Held"),
        cmd("Held", "Unhold", "Unholding"),
        auto("Unholding", "Execute"),
        cmd("Execute", "Pause", "Pausing"),
        auto("Pausing", "Paused"),
        cmd("Paused", "Resume", "Resuming"),
        auto("Resuming", "Execute"),
        cmd("Execute", "Restart", "Starting"),
    ]
    ts += [cmd(s, "Stop", "Stopping") for s in _STOPPABLE]
    ts += [auto("Stopping", "Stopped"), cmd("Stopped", "Reset", "Resetting")]
    ts += [cmd(s, "Abort", "Aborting") for s in DEFAULT_STATES if s not in ("Aborting", "Aborted")]
    ts += [auto("Aborting", "Aborted"), cmd("Aborted", "Reset", "Resetting")]
    return ts


_DEFAULT = StateMachineTemplate(
    states=tuple(DEFAULT_STATES.items()),
    transitions=tuple(_default_transitions()),
    commands=tuple(DEFAULT_COMMANDS.items()),
).validate()


def default_state_machine_template() -> StateMachineTemplate:
    return _DEFAULT


def command_value(command: str, template: StateMachineTemplate | None = None) -> int:
    return (template or _DEFAULT).command_value(command)


def state_value(state: str, template: StateMachineTemplate | None = None) -> int:
    return (template or _DEFAULT).state_value(state)


# -- override files -----------------------------------------------------------
#
# INI format, every section optional:
#
#   [commands]          ; per-key override of the command table
#   Start = 4
#   [states]            ; per-key override of the state value table
#   Idle = 16
#   [transitions]       ; replaces the whole relation when present
#   Idle.Start = Starting
#   Starting.SC = Execute     ; SC marks an automatic transition


def _int_table(section: Mapping[str, str], what: str) -> dict[str, int]:
    out = {}
    for key, raw in section.items():
        try:
            out[key] = int(raw, 0)
        except ValueError:
            raise ConfigError(f"[{what}] {key} = {raw!r} is not an integer") from None
    return out


def template_from_config(
    parser: configparser.ConfigParser, base: StateMachineTemplate | None = None
) -> StateMachineTemplate:
    base = base or _DEFAULT
    commands = base.command_table
    states = base.state_table
    if parser.has_section("commands"):
        commands.update(_int_table(parser["commands"], "commands"))
    if parser.has_section("states"):
        states.update(_int_table(parser["states"], "states"))
    transitions: Iterable[TransitionDef] = base.transitions
    if parser.has_section("transitions"):
        parsed = []
        for key, target in parser["transitions"].items():
            source, sep, name = key.partition(".")
            if not sep or not name:
                raise ConfigError(f"[transitions] key {key!r} must look like State.Command")
            if name == AUTOMATIC:
                parsed.append(TransitionDef(AUTOMATIC, source, target.strip()))
            elif name in commands:
                parsed.append(TransitionDef(name, source, target.strip(), name))
            else:
                raise InvalidTemplate(f"[transitions] {key}: {name!r} is neither a command nor {AUTOMATIC}")
        transitions = parsed
    return StateMachineTemplate(
        states=tuple(states.items()),
        transitions=tuple(transitions),
        commands=tuple(commands.items()),
    ).validate()


def _case_preserving_parser() -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str  # type: ignore[assignment,method-assign]
    return parser


def read_config(path: str | Path) -> configparser.ConfigParser:
    parser = _case_preserving_parser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parser


def load_template(path: str | Path) -> StateMachineTemplate:
    return template_from_config(read_config(path))
