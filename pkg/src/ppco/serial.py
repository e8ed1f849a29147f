"""JSON (un)structuring of the frozen domain dataclasses, digests and clocks."""

from __future__ import annotations

import hashlib
import json
import typing
from datetime import datetime, timezone

import cattrs

from ppco.ids import EntityId

converter = cattrs.Converter()
converter.register_unstructure_hook(EntityId, str)
converter.register_structure_hook(EntityId, lambda value, _: EntityId.parse(value))
converter.register_unstructure_hook(datetime, lambda dt: format_time(dt))
converter.register_structure_hook(datetime, lambda value, _: parse_time(value))
# sets are written sorted so that record bytes do not depend on hash order
converter.register_unstructure_hook_func(
    lambda t: t is frozenset or typing.get_origin(t) is frozenset,
    lambda s: sorted(converter.unstructure(x) for x in s),
)


def to_plain(obj):
    return converter.unstructure(obj)


def from_plain(data, cls):
    return converter.structure(data, cls)


def canonical_json(data) -> str:
    """Compact, key-sorted JSON used for digests and on-disk records."""
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def digest(obj) -> str:
    data = obj if isinstance(obj, (dict, list, str, int, type(None))) else to_plain(obj)
    return "sha256:" + hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()


def utc_now() -> datetime:
    return datetime.now(timezone.utc).replace(microsecond=0)


def format_time(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_time(text: str) -> datetime:
    if isinstance(text, datetime):
        return text
    dt = datetime.strptime(text, "%Y-%m-%dT%H:%M:%SZ")
    return dt.replace(tzinfo=timezone.utc)
