"""Versioned, write-once entity repository with an append-only trace log.

On disk (when a root directory is given)::

    <root>/store.lock                          single-writer lock file
    <root>/store/<kind>/<ns>_<num>/<rev>.json  one immutable file per revision
    <root>/store/<kind>/<ns>_<num>/meta.json   mutable head metadata
    <root>/trace.log                           NDJSON, one TraceEvent per line
    <root>/snapshots/<seq>.json                index snapshots

Without a root the store lives in memory only, which is what most tests use.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from pathlib import Path

from ppco.errors import InvalidSpec, LockHeld, PpcoError, UnknownEntity, UnknownRevision
from ppco.ids import EntityId
from ppco.serial import canonical_json, digest, format_time, from_plain, parse_time, to_plain, utc_now

_KINDS: dict[str, type] = {}
_KIND_OF: dict[type, str] = {}


def stored(kind: str):
    """Class decorator registering a dataclass as a storable entity kind."""

    def register(cls):
        _KINDS[kind] = cls
        _KIND_OF[cls] = kind
        return cls

    return register


def kind_name(entity_or_cls) -> str:
    cls = entity_or_cls if isinstance(entity_or_cls, type) else type(entity_or_cls)
    try:
        return _KIND_OF[cls]
    except KeyError:
        raise PpcoError(f"{cls.__name__} is not a stored kind") from None


def key_of(entity) -> EntityId:
    return getattr(entity, "store_key", None) or entity.id


class TraceKind(str, Enum):
    CREATED = "created"
    SUBMITTED = "submitted"
    ANNOTATED = "annotated"
    APPROVED = "approved"
    REJECTED = "rejected"
    COMMITTED = "committed"
    STATE_CHANGED = "state_changed"
    MESSAGE_SENT = "message_sent"
    MESSAGE_RECEIVED = "message_received"


@dataclass(frozen=True, slots=True)
class TraceEvent:
    seq: int
    subject: EntityId
    kind: TraceKind
    actor: EntityId | None
    payload_digest: str
    at: datetime
    detail: str = ""

    def to_json(self) -> str:
        # field order is part of the export format
        record = {
            "seq": self.seq,
            "subject": str(self.subject),
            "kind": self.kind.value,
            "actor": str(self.actor) if self.actor else None,
            "payloadDigest": self.payload_digest,
            "at": format_time(self.at),
            "detail": self.detail,
        }
        return json.dumps(record, ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> TraceEvent:
        raw = json.loads(line)
        return cls(
            seq=raw["seq"],
            subject=EntityId.parse(raw["subject"]),
            kind=TraceKind(raw["kind"]),
            actor=EntityId.parse(raw["actor"]) if raw["actor"] else None,
            payload_digest=raw["payloadDigest"],
            at=parse_time(raw["at"]),
            detail=raw.get("detail", ""),
        )


class Store:
    def __init__(self, root: str | os.PathLike | None = None, *, clock=utc_now):
        self.root = Path(root) if root is not None else None
        self.clock = clock
        # single writer within the process; the lock file covers other processes
        self.mutex = threading.RLock()
        self._revisions: dict[EntityId, list] = {}
        self._kinds: dict[EntityId, str] = {}
        self._meta: dict[EntityId, dict] = {}
        self._trace: list[TraceEvent] = []
        self._by_subject: dict[EntityId, list[TraceEvent]] = {}
        self._max_number: dict[str, int] = {}
        self._locked = False
        if self.root is not None:
            self._acquire_lock()
            try:
                self._replay()
            except BaseException:
                self.close()
                raise

    @classmethod
    def open(cls, root, **kwargs) -> Store:
        return cls(root, **kwargs)

    # -- lifecycle ----------------------------------------------------------

    @property
    def _lock_path(self) -> Path:
        return self.root / "store.lock"

    def _acquire_lock(self):
        self.root.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self._lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            if not self._lock_is_stale():
                raise LockHeld(f"store at {self.root} is locked by another writer ({self._lock_path})") from None
            self._lock_path.unlink(missing_ok=True)
            return self._acquire_lock()
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))
        self._locked = True

    def _lock_is_stale(self) -> bool:
        # a lock whose recorded writer process no longer exists is left over from a crash
        try:
            owner = int(self._lock_path.read_text().strip())
        except (OSError, ValueError):
            return False
        if owner == os.getpid():
            return False
        try:
            os.kill(owner, 0)
        except ProcessLookupError:
            return True
        except PermissionError:
            return False
        return False

    def close(self):
        if self._locked:
            self._lock_path.unlink(missing_ok=True)
            self._locked = False

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _replay(self):
        base = self.root / "store"
        if base.is_dir():
            for kind_dir in sorted(p for p in base.iterdir() if p.is_dir()):
                cls = _KINDS.get(kind_dir.name)
                if cls is None:
                    raise PpcoError(f"unknown kind directory {kind_dir}")
                for ent_dir in sorted(p for p in kind_dir.iterdir() if p.is_dir()):
                    key = EntityId.from_dirname(ent_dir.name)
                    revs = sorted(int(p.stem) for p in ent_dir.glob("*.json") if p.stem.isdigit())
                    if revs != list(range(1, len(revs) + 1)):
                        raise PpcoError(f"revision chain of {key} has gaps: {revs}")
                    for rev in revs:
                        data = json.loads((ent_dir / f"{rev}.json").read_text("utf-8"))
                        self._index(key, kind_dir.name, from_plain(data, cls))
                    meta = ent_dir / "meta.json"
                    if meta.exists():
                        self._meta[key] = json.loads(meta.read_text("utf-8"))
        log = self.root / "trace.log"
        if log.exists():
            for line in log.read_text("utf-8").splitlines():
                if not line.strip():
                    continue
                try:
                    event = TraceEvent.from_json(line)
                except (ValueError, KeyError):
                    break  # torn final line from an interrupted append
                self._add_event(event)

    # -- entities -----------------------------------------------------------

    def _index(self, key: EntityId, kind: str, entity):
        self._kinds[key] = kind
        self._revisions.setdefault(key, []).append(entity)
        self._max_number[key.namespace] = max(self._max_number.get(key.namespace, 0), key.number)

    def put(self, entity) -> int:
        """Append a new immutable revision of ``entity``; returns its number."""
        kind = kind_name(entity)
        key = key_of(entity)
        with self.mutex:
            existing = self._kinds.get(key)
            if existing is not None and existing != kind:
                raise InvalidSpec(f"id {key} already used by a {existing}")
            rev = len(self._revisions.get(key, ())) + 1
            declared = getattr(entity, "revision", None)
            if declared is not None and declared != rev:
                raise InvalidSpec(f"{key}: entity declares revision {declared}, next revision is {rev}")
            if self.root is not None:
                self._write_revision(kind, key, rev, entity)
            self._index(key, kind, entity)
            return rev

    def _write_revision(self, kind, key, rev, entity):
        folder = self.root / "store" / kind / key.dirname
        folder.mkdir(parents=True, exist_ok=True)
        target = folder / f"{rev}.json"
        if target.exists():
            raise PpcoError(f"refusing to overwrite {target}")
        _atomic_write(target, canonical_json(to_plain(entity)))

    def get(self, key: EntityId, revision: int | None = None):
        chain = self._revisions.get(key)
        if not chain:
            raise UnknownEntity(f"unknown entity {key}")
        if revision is None:
            return chain[-1]
        if not 1 <= revision <= len(chain):
            raise UnknownRevision(f"{key} has no revision {revision} (latest {len(chain)})")
        return chain[revision - 1]

    def __contains__(self, key) -> bool:
        return key in self._kinds

    def kind_of(self, key: EntityId) -> str:
        try:
            return self._kinds[key]
        except KeyError:
            raise UnknownEntity(f"unknown entity {key}") from None

    def revisions(self, key: EntityId) -> list[int]:
        return list(range(1, len(self._revisions.get(key, ())) + 1))

    def list(self, kind: str) -> list[EntityId]:
        return sorted(k for k, v in self._kinds.items() if v == kind)

    def latest(self, kind: str) -> list:
        return [self._revisions[k][-1] for k in self.list(kind)]

    def mint(self, namespace: str) -> EntityId:
        with self.mutex:
            key = EntityId(namespace, self._max_number.get(namespace, 0) + 1)
            self._max_number[namespace] = key.number
            return key

    def get_meta(self, key: EntityId) -> dict:
        return dict(self._meta.get(key, {}))

    def set_meta(self, key: EntityId, **values):
        with self.mutex:
            if key not in self._kinds:
                raise UnknownEntity(f"unknown entity {key}")
            meta = dict(self._meta.get(key, {}))
            meta.update(values)
            if self.root is not None:
                folder = self.root / "store" / self._kinds[key] / key.dirname
                _atomic_write(folder / "meta.json", canonical_json(meta))
            self._meta[key] = meta

    # -- trace --------------------------------------------------------------

    def _add_event(self, event: TraceEvent):
        self._trace.append(event)
        self._by_subject.setdefault(event.subject, []).append(event)

    def append_trace(self, subject: EntityId, kind: TraceKind, *, actor=None, payload=None,
                     detail: str = "") -> TraceEvent:
        with self.mutex:
            event = TraceEvent(
                seq=len(self._trace) + 1,
                subject=subject,
                kind=TraceKind(kind),
                actor=actor,
                payload_digest=digest(payload),
                at=self.clock(),
                detail=detail,
            )
            if self.root is not None:
                with open(self.root / "trace.log", "a", encoding="utf-8") as fh:
                    fh.write(event.to_json() + "\n")
                    fh.flush()
                    os.fsync(fh.fileno())
            self._add_event(event)
            return event

    def trace(self, subject: EntityId | None = None) -> list[TraceEvent]:
        if subject is None:
            return list(self._trace)
        return list(self._by_subject.get(subject, ()))

    def export_trace(self, subject: EntityId | None = None) -> str:
        return "".join(e.to_json() + "\n" for e in self.trace(subject))

    # -- snapshots ----------------------------------------------------------

    def index(self) -> dict:
        """Plain description of the current state: used for snapshots and
        replay-equality checks."""
        return {
            str(k): {
                "kind": self._kinds[k],
                "revisions": [canonical_json(to_plain(e)) for e in self._revisions[k]],
                "meta": self._meta.get(k, {}),
            }
            for k in sorted(self._kinds)
        } | {"@trace": [e.to_json() for e in self._trace]}

    def snapshot(self) -> Path:
        if self.root is None:
            raise PpcoError("in-memory store has no snapshot directory")
        folder = self.root / "snapshots"
        folder.mkdir(exist_ok=True)
        path = folder / f"{len(self._trace):08d}.json"
        _atomic_write(path, canonical_json(self.index()))
        return path


def _atomic_write(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
