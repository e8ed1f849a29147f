"""Entity identifiers of the form ``namespace:number``."""

from __future__ import annotations

import re
from dataclasses import dataclass

from ppco.errors import InvalidSpec

_NAMESPACE = re.compile(r"[A-Za-z0-9][A-Za-z0-9.\-]*")


@dataclass(frozen=True, slots=True, order=True)
class EntityId:
    """Globally unique id; the namespace lets each organization mint ids
    without coordination."""

    namespace: str
    number: int

    def __post_init__(self):
        if not isinstance(self.namespace, str) or not _NAMESPACE.fullmatch(self.namespace):
            raise InvalidSpec(f"invalid id namespace {self.namespace!r}")
        if isinstance(self.number, bool) or not isinstance(self.number, int) or self.number <= 0:
            raise InvalidSpec(f"id number must be a positive integer, got {self.number!r}")

    def __str__(self) -> str:
        return f"{self.namespace}:{self.number}"

    @classmethod
    def parse(cls, text: str | EntityId) -> EntityId:
        if isinstance(text, EntityId):
            return text
        if not isinstance(text, str):
            raise InvalidSpec(f"not an id: {text!r}")
        ns, sep, num = text.rpartition(":")
        if not sep or not num.isdigit() or not num.isascii():
            raise InvalidSpec(f"malformed id {text!r}, expected 'namespace:number'")
        return cls(ns, int(num))

    @property
    def dirname(self) -> str:
        return f"{self.namespace}_{self.number}"

    @classmethod
    def from_dirname(cls, name: str) -> EntityId:
        ns, _, num = name.rpartition("_")
        return cls(ns, int(num))
