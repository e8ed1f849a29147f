"""Exception hierarchy shared by every layer of the framework.

Each exception carries a stable ``code`` (the class name) which is what
travels over the wire inside ``Fault`` messages.
"""

from __future__ import annotations


class PpcoError(Exception):
    """Base class for all domain errors."""

    @property
    def code(self) -> str:
        return type(self).__name__


# -- model / store ----------------------------------------------------------

class InvalidSpec(PpcoError):
    pass


class InvalidEnum(InvalidSpec):
    pass


class DuplicateName(PpcoError):
    pass


class UnknownEntity(PpcoError):
    pass


class UnknownRevision(UnknownEntity):
    pass


class CycleDetected(PpcoError):
    pass


class IllegalTransition(PpcoError):
    pass


class UnknownView(PpcoError):
    pass


class DirectRevisionDisallowed(PpcoError):
    pass


class LockHeld(PpcoError):
    pass


class FixtureError(PpcoError):
    pass


# -- viewpoints -------------------------------------------------------------

class CompetenceRuleViolated(PpcoError):
    pass


class InvalidLevel(PpcoError):
    pass


class UnknownUser(UnknownEntity):
    pass


class UnknownProduct(UnknownEntity):
    pass


class DuplicateViewpoint(PpcoError):
    pass


class UnknownActivity(PpcoError):
    pass


class MixedProducts(PpcoError):
    pass


class NoConnectionConfigured(PpcoError):
    pass


class NoViewpointOnProduct(PpcoError):
    pass


class UnknownBatchSelector(PpcoError):
    pass


class InvalidThreshold(PpcoError):
    pass


# -- workflow ---------------------------------------------------------------

class NoRight(PpcoError):
    pass


class ConcurrentOpenUpdate(PpcoError):
    pass


class NotConcerned(PpcoError):
    pass


class AlreadyDecided(PpcoError):
    pass


class UpdateClosed(PpcoError):
    pass


# -- messages ---------------------------------------------------------------

class InvalidEnvelope(PpcoError):
    def __init__(self, violations):
        self.violations = list(violations)
        text = "; ".join(f"{v.path}: {v.reason}" for v in self.violations)
        super().__init__(text or "invalid envelope")


class DecodeError(PpcoError):
    """Base for wire decoding failures; ``path`` names the offending element."""

    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}")


class MalformedXml(DecodeError):
    pass


class UnknownMessageType(DecodeError):
    pass


class SchemaViolation(DecodeError):
    pass


# -- node / transport -------------------------------------------------------

class ConfigError(PpcoError):
    pass


class BindError(PpcoError):
    pass


class UnknownPeer(PpcoError):
    pass


class TransportClosed(PpcoError):
    pass


class FrameTooLarge(TransportClosed):
    pass


class PeerFault(PpcoError):
    def __init__(self, fault_code: str, text: str = ""):
        self.fault_code = fault_code
        self.text = text
        super().__init__(f"{fault_code}: {text}" if text else fault_code)
