"""Exception hierarchy shared by all mtp2skill modules.

Every concrete error exposes ``code`` (its class name), which is what the
simulator puts on the wire and what the CLI prints.
"""

from __future__ import annotations


class Mtp2SkillError(Exception):
    """Base class for all errors raised by this package."""

    @property
    def code(self) -> str:
        return type(self).__name__


# -- AML / CAEX ---------------------------------------------------------------


class AmlError(Mtp2SkillError):
    pass


class MalformedXml(AmlError):
    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


class NotCaex(AmlError):
    pass


class DuplicateId(AmlError):
    pass


class NoAmlEntry(AmlError):
    pass


class InvalidPath(AmlError):
    pass


class RefNotFound(AmlError):
    pass


class AmbiguousRef(AmlError):
    pass


class IncompleteOpcUaItem(AmlError):
    pass


# -- RDF ----------------------------------------------------------------------


class RdfError(Mtp2SkillError):
    pass


class TurtleSyntax(RdfError):
    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


class PrefixConflict(RdfError):
    pass


# -- vocabulary / templates ---------------------------------------------------


class VocabError(Mtp2SkillError):
    pass


class UnknownCommand(VocabError):
    pass


class UnknownState(VocabError):
    pass


class InvalidTemplate(VocabError):
    pass


class ConfigError(Mtp2SkillError):
    pass


# -- mapping ------------------------------------------------------------------


class MappingError(Mtp2SkillError):
    pass


class InvalidBaseIri(MappingError):
    pass


class MissingCommandIndividual(MappingError):
    pass


class MissingStateOutput(MappingError):
    pass


class BaseIriCollision(MappingError):
    pass


# -- competency questions -----------------------------------------------------


class CqError(Mtp2SkillError):
    pass


class UnknownCq(CqError):
    pass


class MissingBinding(CqError):
    pass


# -- simulator ----------------------------------------------------------------


class SimError(Mtp2SkillError):
    pass


class NoServerElement(SimError):
    pass


class UnknownNode(SimError):
    pass


class NotWritable(SimError):
    pass


class NonIntegerCommand(SimError):
    pass


class BadValue(SimError):
    pass


class PortInUse(SimError):
    pass


# -- executor -----------------------------------------------------------------


class ExecutorError(Mtp2SkillError):
    pass


class SkillNotFound(ExecutorError):
    pass


class IncompleteModel(ExecutorError):
    pass


class UnknownTransition(ExecutorError):
    pass


class ConnectFailed(ExecutorError):
    pass


class WriteRejected(ExecutorError):
    pass


class HandleOpen(ExecutorError):
    pass
