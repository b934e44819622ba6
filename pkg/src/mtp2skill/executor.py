"""Drive a skill through the simulator wire protocol using only the graph.

:func:`resolve_skill` collects command node, state node, endpoint and the
command/state value tables with basic graph pattern queries; :func:`invoke`
writes parameters, subscribes to the state node and writes the command.
"""

from __future__ import annotations

import json
import logging
import queue
import socket
import threading
import time
from dataclasses import dataclass, field
from typing import Mapping
from urllib.parse import urlsplit

from .aml import Access, OpcUaNodeRef
from .errors import (
    ConnectFailed,
    ExecutorError,
    HandleOpen,
    IncompleteModel,
    SkillNotFound,
    UnknownTransition,
    WriteRejected,
)
from .rdf import BgpQuery, Iri, Literal, RdfGraph, query_bgp
from .rdf.terms import Term
from .vocab import CAP, PREFIXES, RDF

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 5.0

# -- binding ------------------------------------------------------------------


@dataclass(frozen=True)
class SkillBinding:
    skill: Iri
    endpoint: str
    command_node: OpcUaNodeRef
    state_node: OpcUaNodeRef
    transition_values: Mapping[str, int]
    state_for_value: Mapping[int, Iri]
    state_names: Mapping[Iri, str]
    parameter_nodes: Mapping[str, OpcUaNodeRef] = field(default_factory=dict)
    # (source state name, transition name) -> target state name
    transition_targets: Mapping[tuple[str, str], str] = field(default_factory=dict)

    def state_iri(self, name: str) -> Iri | None:
        for iri, label in self.state_names.items():
            if label == name:
                return iri
        return None

    def state_name(self, value: int) -> str | None:
        iri = self.state_for_value.get(value)
        return self.state_names.get(iri) if iri is not None else None


_NODE = """
    ?skill {link} ?owner .
    ?owner a {cls} .
    ?owner cap:hasUaVariable ?variable .
    ?variable opcua:nodeNamespace ?ns .
    ?variable opcua:nodeIdentifier ?id .
    ?variable opcua:accessLevel ?access .
"""

_QUERIES = {
    "command": (_NODE.format(link="cap:hasSkillCommand", cls="cap:SkillCommand"), ("ns", "id", "access")),
    "state": (_NODE.format(link="cap:hasCurrentStateOutput", cls="cap:CurrentStateOutput"), ("ns", "id", "access")),
    "endpoint": (
        """
        ?skill cap:hasSkillCommand ?command .
        ?command cap:hasUaVariable ?variable .
        ?nodeset opcua:hasNode ?variable .
        ?server opcua:hasNodeSet ?nodeset .
        ?server opcua:endpointUrl ?endpoint .
        """,
        ("endpoint",),
    ),
    "transitions": (
        """
        ?skill cap:behaviorConformsTo ?sm .
        ?skill cap:hasSkillCommand ?command .
        ?sm isa88:hasTransition ?t .
        ?t rdfs:label ?name .
        ?t din61360:hasDataElement ?de .
        ?command din61360:hasDataElement ?de .
        ?de din61360:hasTypeDescription cap:SkillCommandVariable_TD .
        ?de din61360:hasInstanceDescription ?inst .
        ?inst din61360:expressionGoal "Requirement" .
        ?inst din61360:logicInterpretation "Equal" .
        ?inst din61360:hasValue ?value .
        """,
        ("name", "value"),
    ),
    "states": (
        """
        ?skill cap:behaviorConformsTo ?sm .
        ?skill cap:hasCurrentStateOutput ?output .
        ?sm isa88:hasState ?state .
        ?state rdfs:label ?name .
        ?state din61360:hasDataElement ?de .
        ?output din61360:hasDataElement ?de .
        ?de din61360:hasTypeDescription cap:CurrentStateOutput_TD .
        ?de din61360:hasInstanceDescription ?inst .
        ?inst din61360:expressionGoal "Assurance" .
        ?inst din61360:logicInterpretation "Equal" .
        ?inst din61360:hasValue ?value .
        """,
        ("state", "name", "value"),
    ),
    "moves": (
        """
        ?skill cap:behaviorConformsTo ?sm .
        ?sm isa88:hasTransition ?t .
        ?t rdfs:label ?name .
        ?t isa88:fromState ?from .
        ?t isa88:toState ?to .
        ?from rdfs:label ?from_name .
        ?to rdfs:label ?to_name .
        """,
        ("from_name", "name", "to_name"),
    ),
    "parameters": (
        """
        ?skill cap:hasSkillParameter ?parameter .
        ?parameter rdfs:label ?name .
        ?parameter cap:hasUaVariable ?variable .
        ?variable opcua:nodeNamespace ?ns .
        ?variable opcua:nodeIdentifier ?id .
        ?variable opcua:accessLevel ?access .
        """,
        ("name", "ns", "id", "access"),
    ),
}


def _query(graph: RdfGraph, name: str, skill: Iri) -> list[tuple[Term, ...]]:
    where, select = _QUERIES[name]
    return query_bgp(graph, BgpQuery.parse(where, select, PREFIXES, distinct=True), {"skill": skill}).rows


def _single(rows: list[tuple[Term, ...]], what: str) -> tuple[Term, ...]:
    if not rows:
        where, _ = _QUERIES[what]
        pattern = " ".join(line.strip() for line in where.strip().splitlines())
        raise IncompleteModel(f"no {what} found; unmatched pattern: {pattern}")
    if len(rows) > 1:
        raise IncompleteModel(f"{len(rows)} candidate {what} bindings; expected exactly one")
    return rows[0]


def _lex(t: Term) -> str:
    return t.lexical if isinstance(t, Literal) else str(t)


def _node(row: tuple[Term, ...]) -> OpcUaNodeRef:
    ns, ident, access = row
    return OpcUaNodeRef(_lex(ns), _lex(ident), Access.parse(_lex(access)))


def resolve_skill(graph: RdfGraph, skill: Iri | str) -> SkillBinding:
    """Everything needed to execute ``skill``, assembled from the graph alone."""
    skill = skill if isinstance(skill, Iri) else Iri(str(skill).strip("<>"))
    if (skill, RDF.type, CAP.OpcUaVariableSkill) not in graph:
        raise SkillNotFound(f"{skill} is not a cap:OpcUaVariableSkill in the graph")
    command = _node(_single(_query(graph, "command", skill), "command"))
    state = _node(_single(_query(graph, "state", skill), "state"))
    endpoint = _lex(_single(_query(graph, "endpoint", skill), "endpoint")[0])

    transitions: dict[str, int] = {}
    for name, value in _query(graph, "transitions", skill):
        label, number = _lex(name), int(_lex(value))
        if transitions.setdefault(label, number) != number:
            raise IncompleteModel(f"transition {label!r} carries conflicting command values")
    if not transitions:
        _single([], "transitions")

    for_value: dict[int, Iri] = {}
    names: dict[Iri, str] = {}
    for iri, name, value in _query(graph, "states", skill):
        number = int(_lex(value))
        if number in for_value and for_value[number] != iri:
            raise IncompleteModel(f"state value {number} is claimed by several states")
        for_value[number] = iri  # type: ignore[assignment]
        names[iri] = _lex(name)  # type: ignore[index]
    if not for_value:
        _single([], "states")

    targets = {(_lex(f), _lex(n)): _lex(t) for f, n, t in _query(graph, "moves", skill)}
    params = {_lex(row[0]): _node(row[1:]) for row in _query(graph, "parameters", skill)}
    return SkillBinding(skill, endpoint, command, state, transitions, for_value, names, params, targets)


# -- wire client --------------------------------------------------------------


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    """host/port from ``host:port`` or a URL such as ``opc.tcp://host:4840``."""
    text = endpoint.strip()
    if "://" not in text:
        text = "tcp://" + text
    parts = urlsplit(text)
    if not parts.hostname or parts.port is None:
        raise ConnectFailed(f"endpoint {endpoint!r} has no host:port")
    return parts.hostname, parts.port


class WireClient:
    """Client side of the newline-delimited JSON protocol."""

    def __init__(self, endpoint: str, timeout: float = DEFAULT_TIMEOUT) -> None:
        host, port = parse_endpoint(endpoint)
        self.timeout = timeout
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise ConnectFailed(f"cannot connect to {host}:{port}: {exc}") from None
        self._sock.settimeout(None)
        self._file = self._sock.makefile("rb")
        self._responses: queue.Queue[dict | None] = queue.Queue()
        self._listeners: dict[tuple[str, str], list] = {}
        self._request_lock = threading.Lock()
        self._closed = False
        self._reader = threading.Thread(target=self._read_loop, name="wire-client", daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        try:
            for raw in self._file:
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError:
                    logger.warning("ignoring malformed line from server: %r", raw[:200])
                    continue
                if "event" in msg:
                    for callback in list(self._listeners.get((msg.get("ns"), msg.get("id")), ())):
                        callback(msg)
                else:
                    self._responses.put(msg)
        except (OSError, ValueError):
            pass
        finally:
            self._responses.put(None)

    def request(self, message: dict) -> object:
        with self._request_lock:
            if self._closed:
                raise ConnectFailed("connection is closed")
            try:
                self._sock.sendall((json.dumps(message) + "\n").encode("utf-8"))
            except OSError as exc:
                raise ConnectFailed(f"connection lost: {exc}") from None
            try:
                response = self._responses.get(timeout=self.timeout)
            except queue.Empty:
                raise ConnectFailed(f"no response within {self.timeout}s") from None
        if response is None:
            raise ConnectFailed("connection closed by server")
        if not response.get("ok"):
            raise WriteRejected(f"{response.get('error')}: {response.get('message', '')}".rstrip(": "))
        return response.get("value")

    def read(self, node: OpcUaNodeRef) -> object:
        return self.request({"op": "read", "ns": node.namespace, "id": node.identifier})

    def write(self, node: OpcUaNodeRef, value: object) -> object:
        return self.request({"op": "write", "ns": node.namespace, "id": node.identifier, "value": value})

    def subscribe(self, node: OpcUaNodeRef, callback) -> object:
        """Register ``callback`` for change events of ``node``; returns the current value."""
        first = node.key not in self._listeners
        self._listeners.setdefault(node.key, []).append(callback)
        if not first:
            return self.read(node)
        return self.request({"op": "subscribe", "ns": node.namespace, "id": node.identifier})

    def close(self) -> None:
        self._closed = True
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()
        self._reader.join(timeout=1.0)


# -- execution ----------------------------------------------------------------


@dataclass(frozen=True)
class LoggedEvent:
    seq: int
    value: int
    state: Iri | None  # None: the value maps to no known state


@dataclass(frozen=True)
class Outcome:
    kind: str  # "reached" | "timeout" | "unexpected"
    state: str | None = None
    value: int | None = None

    @property
    def reached(self) -> bool:
        return self.kind == "reached"

    def __str__(self) -> str:
        if self.kind == "unexpected":
            return f"unexpected({self.value})"
        return f"{self.kind}({self.state})"


_OPEN: dict[Iri, "ExecutionHandle"] = {}
_OPEN_LOCK = threading.Lock()


class ExecutionHandle:
    """Live monitoring of one invocation. Close it to release the binding."""

    def __init__(self, binding: SkillBinding, client: WireClient, initial: int | None) -> None:
        self.binding = binding
        self.client = client
        self.last_value: int | None = initial
        self._log: list[LoggedEvent] = []
        self._cursor = 0
        self._cond = threading.Condition()
        self.gaps = 0
        self.closed = False

    def _on_event(self, msg: dict) -> None:
        with self._cond:
            if msg.get("event") == "gap":
                self.gaps += int(msg.get("dropped", 0))
                return
            value = int(msg["value"])
            self.last_value = value
            seq = int(msg["seq"])
            if self._log and seq <= self._log[-1].seq:
                return
            self._log.append(LoggedEvent(seq, value, self.binding.state_for_value.get(value)))
            self._cond.notify_all()

    @property
    def event_log(self) -> list[LoggedEvent]:
        with self._cond:
            return list(self._log)

    def values(self) -> list[int]:
        return [e.value for e in self.event_log]

    def fire(self, transition: str) -> None:
        """Send another command on this handle (e.g. Complete after Start)."""
        value = self.binding.transition_values.get(transition)
        if value is None:
            raise UnknownTransition(f"skill has no transition {transition!r}")
        self.client.write(self.binding.command_node, value)

    def await_state(self, state: str, timeout: float) -> Outcome:
        """Consume logged events until ``state`` is observed, an unknown value shows up, or time runs out."""
        if self.binding.state_iri(state) is None:
            raise ExecutorError(f"state {state!r} is not part of the skill's state machine")
        deadline = time.monotonic() + timeout
        with self._cond:
            while True:
                while self._cursor < len(self._log):
                    ev = self._log[self._cursor]
                    self._cursor += 1
                    if ev.state is None:
                        return Outcome("unexpected", value=ev.value)
                    if self.binding.state_names[ev.state] == state:
                        return Outcome("reached", state=state, value=ev.value)
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    last = self.binding.state_name(self.last_value) if self.last_value is not None else None
                    return Outcome("timeout", state=last, value=self.last_value)
                self._cond.wait(remaining)

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        self.client.close()
        with _OPEN_LOCK:
            if _OPEN.get(self.binding.skill) is self:
                del _OPEN[self.binding.skill]

    def __enter__(self) -> "ExecutionHandle":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


def invoke(
    binding: SkillBinding,
    transition: str,
    params: Mapping[str, object] | None = None,
    endpoint: str | None = None,
    timeout: float = DEFAULT_TIMEOUT,
) -> ExecutionHandle:
    """Write parameters, subscribe to the state node, then write the command value.

    Returns at once; state changes keep arriving in the handle's event log.
    """
    if transition not in binding.transition_values:
        known = ", ".join(sorted(binding.transition_values))
        raise UnknownTransition(f"skill has no transition {transition!r}; known: {known}")
    params = dict(params or {})
    unknown = sorted(set(params) - set(binding.parameter_nodes))
    if unknown:
        raise WriteRejected(f"no writable node for parameter(s) {', '.join(unknown)}")
    with _OPEN_LOCK:
        if binding.skill in _OPEN:
            raise HandleOpen(f"an execution handle for {binding.skill} is still open")
        client = WireClient(endpoint or binding.endpoint, timeout)
        handle = ExecutionHandle(binding, client, None)
        _OPEN[binding.skill] = handle
    try:
        for name, value in params.items():
            client.write(binding.parameter_nodes[name], value)
        current = client.subscribe(binding.state_node, handle._on_event)
        handle.last_value = int(current) if current is not None else None  # type: ignore[arg-type]
        client.write(binding.command_node, binding.transition_values[transition])
    except BaseException:
        handle.close()
        raise
    return handle


def current_state(binding: SkillBinding, client: WireClient) -> Iri | int:
    """State IRI for the node's current value, or the raw value if it maps to no state."""
    value = int(client.read(binding.state_node))  # type: ignore[arg-type]
    return binding.state_for_value.get(value, value)
