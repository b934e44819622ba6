"""In-process simulation of a process module's OPC UA interface.

The address space holds one variable per OPCUAItem of the MTP. Each service
runs the template state machine: writes to CommandExt fire commanded
transitions when the command is enabled, automatic transitions fire after a
dwell time. The same server can be exposed over a newline-delimited JSON TCP
protocol.
"""

from __future__ import annotations

import errno
import itertools
import json
import logging
import socketserver
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Protocol

from .aml import AmlDocument, Element, OpcUaNodeRef, attribute_value, opcua_items, resolve_ref_id
from .errors import (
    AmbiguousRef,
    BadValue,
    Mtp2SkillError,
    NoServerElement,
    NonIntegerCommand,
    NotWritable,
    PortInUse,
    RefNotFound,
    UnknownNode,
)
from .vocab import StateMachineTemplate, TransitionDef, default_state_machine_template

logger = logging.getLogger(__name__)

CONTROL_ATTRIBUTES = ("CommandExt", "StateCur", "CommandEn", "ProcedureCur", "ProcedureReq", "ProcedureExt")
DEFAULT_DWELL = 0.1
DEFAULT_BUFFER = 1024

NodeKey = tuple[str, str]
Number = int | float


class Clock(Protocol):
    def now(self) -> float: ...

    def advance(self, dt: float) -> None: ...


class VirtualClock:
    """Time that only moves when told to."""

    def __init__(self, start: float = 0.0) -> None:
        self._now = start

    def now(self) -> float:
        return self._now

    def advance(self, dt: float) -> None:
        self._now += dt


class WallClock:
    def now(self) -> float:
        return time.monotonic()

    def advance(self, dt: float) -> None:
        pass


@dataclass
class SimVariable:
    ref: OpcUaNodeRef
    value: Number
    owner: str
    attribute: str

    @property
    def writable(self) -> bool:
        return self.ref.access.writable


@dataclass
class ServiceRuntime:
    name: str
    template: StateMachineTemplate
    state: str
    entered_at: float
    dwell: float
    control: dict[str, NodeKey] = field(default_factory=dict)
    procedure: int = 0
    rejected: int = 0

    @property
    def state_value(self) -> int:
        return self.template.state_value(self.state)

    @property
    def command_enable(self) -> int:
        return self.template.command_enable_mask(self.state)


class Subscription:
    """Bounded per-subscriber event queue.

    Publishing never blocks; when the buffer is full the oldest event is
    dropped and the consumer sees a gap marker before the next event.
    """

    def __init__(self, key: NodeKey, capacity: int = DEFAULT_BUFFER) -> None:
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.key = key
        self.capacity = capacity
        self._events: deque[dict] = deque()
        self._dropped = 0
        self._seq = itertools.count(1)
        self._cond = threading.Condition()
        self._listeners: list[Callable[[], None]] = []
        self.closed = False

    def publish(self, value: Number) -> None:
        with self._cond:
            if self.closed:
                return
            if len(self._events) >= self.capacity:
                self._events.popleft()
                self._dropped += 1
            ns, ident = self.key
            self._events.append({"event": "change", "ns": ns, "id": ident, "value": value, "seq": next(self._seq)})
            self._cond.notify_all()
            listeners = list(self._listeners)
        for notify in listeners:
            notify()

    def on_event(self, callback: Callable[[], None]) -> None:
        with self._cond:
            self._listeners.append(callback)

    def get(self, timeout: float | None = 0.0) -> dict | None:
        """Next event, a gap marker if events were dropped, or None on timeout."""
        with self._cond:
            if timeout and not self._events and not self._dropped:
                self._cond.wait_for(lambda: self._events or self._dropped or self.closed, timeout)
            if self._dropped:
                ns, ident = self.key
                marker = {"event": "gap", "ns": ns, "id": ident, "dropped": self._dropped}
                self._dropped = 0
                return marker
            return self._events.popleft() if self._events else None

    def drain(self) -> list[dict]:
        out = []
        while (ev := self.get()) is not None:
            out.append(ev)
        return out

    def close(self) -> None:
        with self._cond:
            self.closed = True
            self._cond.notify_all()


def _number(text: str | None) -> Number:
    if text is None:
        return 0
    try:
        return int(text.strip())
    except ValueError:
        pass
    try:
        return float(text.strip())
    except ValueError:
        return 0


class SimServer:
    def __init__(
        self,
        nodes: dict[NodeKey, SimVariable],
        services: dict[str, ServiceRuntime],
        endpoint: str,
        template: StateMachineTemplate,
        clock: Clock,
        warnings: list[str] | None = None,
    ) -> None:
        self.nodes = nodes
        self.services = services
        self.endpoint = endpoint
        self.template = template
        self.clock = clock
        self.warnings = warnings or []
        self.history: deque[tuple[str, NodeKey, Number]] = deque(maxlen=10_000)
        self._lock = threading.RLock()
        self._subs: dict[NodeKey, list[Subscription]] = {}
        self._by_control: dict[NodeKey, tuple[ServiceRuntime, str]] = {
            key: (rt, attr) for rt in services.values() for attr, key in rt.control.items()
        }
        for rt in services.values():
            self._sync(rt)

    # -- address space --------------------------------------------------------

    def _key(self, node: OpcUaNodeRef | NodeKey) -> NodeKey:
        key = node.key if isinstance(node, OpcUaNodeRef) else tuple(node)
        if key not in self.nodes:
            raise UnknownNode(f"no node ns={key[0]!r} id={key[1]!r}")
        return key  # type: ignore[return-value]

    def _set(self, key: NodeKey, value: Number) -> None:
        var = self.nodes[key]
        if var.value == value and type(var.value) is type(value):
            return
        var.value = value
        for sub in self._subs.get(key, ()):
            sub.publish(value)

    def _sync(self, rt: ServiceRuntime) -> None:
        for attr, value in (("StateCur", rt.state_value), ("CommandEn", rt.command_enable)):
            if attr in rt.control:
                self._set(rt.control[attr], value)

    def read(self, node: OpcUaNodeRef | NodeKey) -> Number:
        with self._lock:
            return self.nodes[self._key(node)].value

    def list_nodes(self) -> list[dict]:
        with self._lock:
            return [
                {
                    "ns": k[0],
                    "id": k[1],
                    "owner": v.owner,
                    "attribute": v.attribute,
                    "writable": v.writable,
                    "value": v.value,
                }
                for k, v in sorted(self.nodes.items())
            ]

    # -- state machine --------------------------------------------------------

    def _enter(self, rt: ServiceRuntime, t: TransitionDef) -> None:
        rt.state = t.target
        rt.entered_at = self.clock.now()
        self._sync(rt)

    def _command(self, rt: ServiceRuntime, value: int) -> bool:
        name = rt.template.command_for_value(value)
        t = rt.template.commanded(rt.state, name) if name is not None else None
        if t is None:
            rt.rejected += 1
            logger.debug("service %s: command %s rejected in %s", rt.name, value, rt.state)
            return False
        if t.command in ("Start", "Restart"):
            rt.procedure = int(self._control_value(rt, "ProcedureExt", rt.procedure))
            if "ProcedureCur" in rt.control:
                self._set(rt.control["ProcedureCur"], rt.procedure)
        self._enter(rt, t)
        return True

    def _control_value(self, rt: ServiceRuntime, attr: str, default: Number) -> Number:
        key = rt.control.get(attr)
        return self.nodes[key].value if key else default

    def write(self, node: OpcUaNodeRef | NodeKey, value: object) -> Number:
        """Write a value. Commands that are not enabled are acknowledged and ignored."""
        with self._lock:
            key = self._key(node)
            var = self.nodes[key]
            if not var.writable:
                raise NotWritable(f"node {key[1]!r} is read-only")
            control = self._by_control.get(key)
            if control is not None and control[1] == "CommandExt":
                if isinstance(value, bool) or not isinstance(value, int):
                    raise NonIntegerCommand(f"command must be an integer, got {value!r}")
                self.history.append(("write", key, value))
                self._set(key, value)
                self._command(control[0], value)
                return value
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise BadValue(f"value must be a number, got {value!r}")
            self.history.append(("write", key, value))
            self._set(key, value)
            if control is not None and control[1] == "ProcedureExt" and "ProcedureReq" in control[0].control:
                self._set(control[0].control["ProcedureReq"], value)
            return value

    def advance(self, dt: float = 0.0) -> list[tuple[str, TransitionDef]]:
        """Move the clock and fire at most one due automatic transition per service."""
        if dt < 0:
            raise ValueError("dt must be non-negative")
        with self._lock:
            self.clock.advance(dt)
            now = self.clock.now()
            fired = []
            for name in sorted(self.services):
                rt = self.services[name]
                t = rt.template.automatic_from(rt.state)
                if t is not None and now - rt.entered_at >= rt.dwell - 1e-12:
                    self._enter(rt, t)
                    fired.append((name, t))
            return fired

    def rejected_commands(self, service: str) -> int:
        return self.services[service].rejected

    def inject(self, node: OpcUaNodeRef | NodeKey, value: Number) -> None:
        """Force a raw value, bypassing all rules. For fault-injection tests only."""
        with self._lock:
            self._set(self._key(node), value)

    # -- subscriptions --------------------------------------------------------

    def subscribe(self, node: OpcUaNodeRef | NodeKey, capacity: int = DEFAULT_BUFFER) -> Subscription:
        with self._lock:
            key = self._key(node)
            sub = Subscription(key, capacity)
            self._subs.setdefault(key, []).append(sub)
            return sub

    def subscribe_with_value(self, node: OpcUaNodeRef | NodeKey, capacity: int = DEFAULT_BUFFER) -> tuple[Subscription, Number]:
        with self._lock:
            sub = self.subscribe(node, capacity)
            return sub, self.nodes[sub.key].value

    def unsubscribe(self, sub: Subscription) -> None:
        with self._lock:
            subs = self._subs.get(sub.key, [])
            if sub in subs:
                subs.remove(sub)
        sub.close()

    # -- background operation -------------------------------------------------

    def run_ticker(self, interval: float = 0.01) -> "Ticker":
        ticker = Ticker(self, interval)
        ticker.start()
        return ticker

    def serve(self, port: int = 0, host: str = "127.0.0.1") -> "WireServer":
        return WireServer(self, host, port)


class Ticker(threading.Thread):
    """Calls ``advance`` periodically so automatic transitions fire on a wall clock."""

    def __init__(self, server: SimServer, interval: float) -> None:
        super().__init__(name="sim-ticker", daemon=True)
        self.server = server
        self.interval = interval
        self._stop_event = threading.Event()

    def run(self) -> None:
        while not self._stop_event.wait(self.interval):
            self.server.advance(0.0)

    def stop(self) -> None:
        self._stop_event.set()
        self.join(timeout=1.0)


# -- construction -------------------------------------------------------------


def _service_of(doc: AmlDocument, control: Element) -> str:
    ref = attribute_value(control, "RefID")
    if ref:
        try:
            return resolve_ref_id(doc, ref, "Service").name
        except (RefNotFound, AmbiguousRef):
            pass
    return control.name


def build_address_space(
    doc: AmlDocument,
    template: StateMachineTemplate | None = None,
    clock: Clock | None = None,
    dwell: float = DEFAULT_DWELL,
) -> SimServer:
    template = (template or default_state_machine_template()).validate()
    clock = clock or WallClock()
    servers = [e for e in doc.iter() if e.suc_class == "OPCUAServer"]
    endpoints = [attribute_value(s, "Endpoint") for s in servers]
    endpoints = [e.strip() for e in endpoints if e and e.strip()]
    if not endpoints:
        raise NoServerElement("the MTP declares no OPCUAServer with an Endpoint")
    warnings: list[str] = []
    nodes: dict[NodeKey, SimVariable] = {}
    for el in doc.iter():
        for attr, ref in opcua_items(el):
            if ref.key in nodes:
                warnings.append(f"node {ref.key} declared again on {el.name}.{attr}; first declaration kept")
                continue
            nodes[ref.key] = SimVariable(ref, _number(attribute_value(el, attr)), el.name, attr)
    services: dict[str, ServiceRuntime] = {}
    for el in doc.iter():
        if el.suc_class != "ServiceControl":
            continue
        name = _service_of(doc, el)
        control = {}
        for attr, ref in opcua_items(el):
            if attr in CONTROL_ATTRIBUTES:
                control[attr] = ref.key
        missing = [a for a in ("CommandExt", "StateCur") if a not in control]
        if missing:
            warnings.append(f"service {name}: no OPCUAItem for {', '.join(missing)}")
        services[name] = ServiceRuntime(name, template, "Idle", clock.now(), dwell, control)
    for w in warnings:
        logger.warning(w)
    return SimServer(nodes, services, endpoints[0], template, clock, warnings)


# -- wire protocol ------------------------------------------------------------


class _Connection(socketserver.StreamRequestHandler):
    server: "_TcpServer"

    def setup(self) -> None:
        super().setup()
        self._write_lock = threading.Lock()
        self._subs: list[Subscription] = []
        self._wake = threading.Event()
        self._closed = threading.Event()
        self._pump = threading.Thread(target=self._pump_events, name="sim-events", daemon=True)
        self._pump.start()

    def _send(self, message: dict) -> None:
        data = (json.dumps(message, separators=(",", ":")) + "\n").encode("utf-8")
        with self._write_lock:
            self.wfile.write(data)
            self.wfile.flush()

    def _pump_events(self) -> None:
        while not self._closed.is_set():
            self._wake.wait(0.05)
            self._wake.clear()
            for sub in list(self._subs):
                for ev in sub.drain():
                    try:
                        self._send(ev)
                    except OSError:
                        self._closed.set()
                        return

    def _dispatch(self, request: dict) -> dict:
        sim = self.server.sim
        op = request.get("op")
        if op == "list":
            return {"ok": True, "value": sim.list_nodes()}
        if op not in ("read", "write", "subscribe"):
            return {"ok": False, "error": "BadRequest", "message": f"unknown op {op!r}"}
        key = (str(request.get("ns", "")), str(request.get("id", "")))
        if op == "read":
            return {"ok": True, "value": sim.read(key)}
        if op == "write":
            if "value" not in request:
                return {"ok": False, "error": "BadRequest", "message": "write needs a value"}
            return {"ok": True, "value": sim.write(key, request["value"])}
        sub, value = sim.subscribe_with_value(key)
        self._send({"ok": True, "value": value})
        sub.on_event(self._wake.set)
        self._subs.append(sub)
        self._wake.set()
        return {}

    def handle(self) -> None:
        for raw in self.rfile:
            line = raw.decode("utf-8", errors="replace").strip()
            if not line:
                continue
            try:
                request = json.loads(line)
                if not isinstance(request, dict):
                    raise ValueError("request must be a JSON object")
                response = self._dispatch(request)
            except Mtp2SkillError as exc:
                response = {"ok": False, "error": exc.code, "message": str(exc)}
            except ValueError as exc:
                response = {"ok": False, "error": "BadRequest", "message": str(exc)}
            if response:
                try:
                    self._send(response)
                except OSError:
                    break

    def finish(self) -> None:
        self._closed.set()
        self._wake.set()
        for sub in self._subs:
            self.server.sim.unsubscribe(sub)
        try:
            super().finish()
        except OSError:
            pass


class _TcpServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], sim: SimServer) -> None:
        self.sim = sim
        super().__init__(address, _Connection)


class WireServer:
    """TCP front end of a :class:`SimServer`, serving on a background thread."""

    def __init__(self, sim: SimServer, host: str = "127.0.0.1", port: int = 0) -> None:
        self.sim = sim
        try:
            self._tcp = _TcpServer((host, port), sim)
        except OSError as exc:
            if exc.errno == errno.EADDRINUSE:
                raise PortInUse(f"port {port} is already in use") from None
            raise
        self.host, self.port = self._tcp.server_address[:2]
        self._thread = threading.Thread(
            target=self._tcp.serve_forever, args=(0.05,), name="sim-wire", daemon=True
        )
        self._thread.start()

    @property
    def address(self) -> str:
        return f"{self.host}:{self.port}"

    def close(self) -> None:
        self._tcp.shutdown()
        self._tcp.server_close()
        self._thread.join(timeout=1.0)

    def __enter__(self) -> "WireServer":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

