"""Command-line entry point: ``mtp2skill convert|validate|query|simulate|execute``.

Settings come from command-line flags first, then the optional INI config
file (``--config`` or ``$MTP2SKILL_CONFIG``), then built-in defaults. The
config file may hold ``[convert]``, ``[simulate]`` and ``[execute]`` sections
with the long flag names as keys (``base-iri``, ``port``, ...) plus the
state machine override sections understood by :mod:`mtp2skill.vocab`.

Exit codes: 0 success, 1 error, 2 success with warnings.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import signal
import sys
import tempfile
import threading
from pathlib import Path
from typing import Sequence

from . import __version__
from .aml import open_mtp
from .cq import format_table, run_cq, validate
from .errors import ConfigError, Mtp2SkillError
from .executor import Outcome, WireClient, current_state, invoke, resolve_skill
from .mapping import load_rules, map_document, merge
from .rdf import RdfGraph, parse_turtle, serialize_turtle
from .simulator import DEFAULT_DWELL, build_address_space
from .vocab import AUTOMATIC, StateMachineTemplate, default_state_machine_template, template_from_config

logger = logging.getLogger("mtp2skill")

EXIT_OK, EXIT_ERROR, EXIT_WARNINGS = 0, 1, 2
CONFIG_ENV = "MTP2SKILL_CONFIG"


class Settings:
    """Flag value lookup with CLI > config file > default precedence."""

    def __init__(self, args: argparse.Namespace, config: configparser.ConfigParser | None) -> None:
        self.args = args
        self.config = config

    def get(self, name: str, default: object = None, section: str | None = None) -> object:
        value = getattr(self.args, name.replace("-", "_"), None)
        if value is not None:
            return value
        section = section or self.args.command
        if self.config is not None and self.config.has_option(section, name):
            return self.config.get(section, name)
        return default

    def template(self) -> StateMachineTemplate:
        if self.config is None:
            return default_state_machine_template()
        return template_from_config(self.config)


def _load_config(path: str | None) -> configparser.ConfigParser | None:
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return None
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str  # type: ignore[assignment,method-assign]
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parser


def atomic_write(path: str | Path, text: str) -> None:
    """Write via a temporary file in the target directory, then rename."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _read_bytes(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror or exc}") from None


def _with_source(path: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Mtp2SkillError as exc:
        exc.source = path  # type: ignore[attr-defined]
        raise


def _load_graph(path: str) -> RdfGraph:
    return _with_source(path, parse_turtle, _read_bytes(path).decode("utf-8", errors="replace"))


def _load_mtp(path: str):
    return _with_source(path, open_mtp, _read_bytes(path), source_name=path)


def _pairs(items: Sequence[str] | None, flag: str) -> dict[str, str]:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"{flag} expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _number(text: str) -> int | float:
    try:
        return int(text, 0)
    except ValueError:
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"parameter value {text!r} is not a number") from None


def _flag(value: object) -> bool:
    return value is True or str(value).strip().lower() in ("1", "true", "yes", "on")


# -- subcommands --------------------------------------------------------------


def cmd_convert(args: argparse.Namespace, s: Settings) -> int:
    bases = args.base_iri or []
    if not bases:
        configured = s.get("base-iri")
        bases = [str(configured)] if configured else []
    if len(bases) != len(args.inputs):
        raise ConfigError(f"{len(args.inputs)} input(s) need as many --base-iri values, got {len(bases)}")
    template = s.template()
    rules_path = s.get("rules")
    rules = load_rules(str(rules_path)) if rules_path else None
    results = []
    for path, base in zip(args.inputs, bases):
        doc = _load_mtp(path)
        result = map_document(doc, base, template, rules, prefix=args.prefix if len(args.inputs) == 1 else None)
        result.warnings[:0] = doc.warnings
        results.append((path, result))
    graph = results[0][1].graph if len(results) == 1 else merge(r.graph for _, r in results)
    turtle = serialize_turtle(graph)
    out = s.get("out")
    if out:
        atomic_write(str(out), turtle)
    else:
        sys.stdout.write(turtle)
    stats = results[0][1].stats if len(results) == 1 else {p: r.stats for p, r in results}
    stats_path = s.get("stats-json")
    if stats_path is None and out:
        stats_path = Path(str(out)).with_suffix(".stats.json")
    if stats_path:
        atomic_write(str(stats_path), json.dumps(stats, indent=2) + "\n")
    warnings = [f"{p}: {w}" for p, r in results for w in r.warnings]
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    if warnings and not _flag(s.get("allow-warnings", False)):
        return EXIT_WARNINGS
    return EXIT_OK


def cmd_validate(args: argparse.Namespace, s: Settings) -> int:
    graph = _load_graph(args.graph)
    doc = _load_mtp(args.mtp)
    report = validate(doc, graph, s.template())
    sys.stdout.write(report.to_json() if args.json else report.to_text())
    return EXIT_OK if report.passed else EXIT_ERROR


def cmd_query(args: argparse.Namespace, s: Settings) -> int:
    graph = _load_graph(args.graph)
    table = run_cq(graph, args.cq, _pairs(args.bind, "--bind"))
    sys.stdout.write(format_table(graph, table))
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace, s: Settings) -> int:
    port = s.get("port")
    if port is None:
        raise ConfigError("simulate needs --port (0 picks a free port)")
    dwell = float(str(s.get("dwell", DEFAULT_DWELL)))
    host = str(s.get("host", "127.0.0.1"))
    doc = _load_mtp(args.mtp)
    sim = build_address_space(doc, s.template(), dwell=dwell)
    for w in sim.warnings:
        print(f"warning: {w}", file=sys.stderr)
    stop = threading.Event()
    previous = signal.signal(signal.SIGTERM, lambda *_: stop.set())
    ticker = sim.run_ticker()
    try:
        with sim.serve(int(str(port)), host) as wire:
            print(f"simulating {len(sim.nodes)} nodes, {len(sim.services)} service(s) on {wire.address}", flush=True)
            while not stop.wait(0.2):
                pass
    except KeyboardInterrupt:
        pass
    finally:
        signal.signal(signal.SIGTERM, previous)
        ticker.stop()
    return EXIT_OK


def expected_target(template_moves: dict[tuple[str, str], str], state: str, transition: str) -> str | None:
    """Where ``transition`` from ``state`` ends once automatic transitions have run."""
    target = template_moves.get((state, transition))
    seen = set()
    while target is not None and target not in seen:
        seen.add(target)
        following = template_moves.get((target, AUTOMATIC))
        if following is None:
            break
        target = following
    return target


def cmd_execute(args: argparse.Namespace, s: Settings) -> int:
    graph = _load_graph(args.graph)
    binding = resolve_skill(graph, args.skill)
    endpoint = s.get("endpoint")
    timeout = float(str(s.get("timeout", 10.0)))
    params = {k: _number(v) for k, v in _pairs(args.param, "--param").items()}
    probe = WireClient(str(endpoint or binding.endpoint), timeout)
    try:
        state = current_state(binding, probe)
    finally:
        probe.close()
    await_name = args.await_state
    if await_name is None and not isinstance(state, int):
        await_name = expected_target(dict(binding.transition_targets), binding.state_names[state], args.transition)
    with invoke(binding, args.transition, params, str(endpoint) if endpoint else None, timeout) as handle:
        outcome = handle.await_state(await_name, timeout) if await_name else Outcome("timeout")
        for ev in handle.event_log:
            name = binding.state_names.get(ev.state, "unknown") if ev.state else "unknown"
            print(f"{ev.seq}\t{ev.value}\t{name}")
    print(f"outcome: {outcome}", file=sys.stderr)
    return EXIT_OK if outcome.reached else EXIT_ERROR


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mtp2skill", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help=f"INI config file (default: ${CONFIG_ENV})")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="convert MTP files into a Turtle graph")
    p.add_argument("inputs", nargs="+", metavar="MTP", help=".aml or zipped .mtp file(s); several are merged")
    p.add_argument("--base-iri", action="append", help="base IRI, once per input")
    p.add_argument("--out", help="Turtle output path (default: stdout)")
    p.add_argument("--stats-json", help="stats output path (default: next to --out)")
    p.add_argument("--prefix", help="Turtle prefix for the module namespace")
    p.add_argument("--rules", help="JSON mapping rule file replacing the built-in rules")
    p.add_argument("--allow-warnings", action="store_true", default=None, help="exit 0 even with warnings")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("validate", help="check a graph against its source MTP with the competency questions")
    p.add_argument("graph")
    p.add_argument("mtp")
    p.add_argument("--json", action="store_true", help="machine-readable report")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("query", help="answer one competency question")
    p.add_argument("graph")
    p.add_argument("--cq", required=True, help="CQ1 ... CQ9")
    p.add_argument("--bind", action="append", metavar="SLOT=VALUE")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("simulate", help="serve a simulated module over TCP until interrupted")
    p.add_argument("mtp")
    p.add_argument("--port", type=int)
    p.add_argument("--host")
    p.add_argument("--dwell", type=float, help=f"seconds before automatic transitions (default {DEFAULT_DWELL})")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("execute", help="fire a skill transition and wait for the resulting state")
    p.add_argument("graph")
    p.add_argument("--skill", required=True, help="skill IRI")
    p.add_argument("--transition", required=True)
    p.add_argument("--param", action="append", metavar="NAME=VALUE")
    p.add_argument("--endpoint", help="host:port overriding the endpoint in the graph")
    p.add_argument("--timeout", type=float)
    p.add_argument("--await", dest="await_state", metavar="STATE", help="state to wait for")
    p.set_defaults(func=cmd_execute)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.ERROR
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = Settings(args, _load_config(args.config))
        return args.func(args, settings)
    except Mtp2SkillError as exc:
        source = getattr(exc, "source", None)
        where = f"{source}: " if source else ""
        print(f"error: {exc.code}: {where}{exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
