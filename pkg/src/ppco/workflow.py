"""Temporary updates, annotations and unanimous approval.

A submitted change is held as a :class:`PendingUpdate` and its target moves to
``wait_validation``. Every concerned collaborator is annotated; the change is
committed as a new revision only once all of them approve, and a single
rejection discards it.
"""

from __future__ import annotations

import dataclasses
from collections.abc import Callable, Mapping
from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from typing import Optional

from ppco.errors import (
    AlreadyDecided,
    ConcurrentOpenUpdate,
    NoRight,
    NotConcerned,
    PpcoError,
    UnknownEntity,
    UpdateClosed,
)
from ppco.ids import EntityId
from ppco.model import ProductModel, Right, StatutoryState, as_enum
from ppco.serial import digest
from ppco.store import Store, TraceKind, stored
from ppco.viewpoints import FilterResult, ViewpointEngine


class UpdateMode(str, Enum):
    MANUAL = "manual"
    XML_FILE = "xml_file"


class Verdict(str, Enum):
    PENDING = "pending"
    APPROVED = "approved"
    REJECTED = "rejected"


class UpdateState(str, Enum):
    OPEN = "open"
    COMMITTED = "committed"
    REJECTED = "rejected"
    CANCELLED = "cancelled"


Delta = tuple[tuple[str, Optional[str]], ...]


def as_delta(changes) -> Delta:
    items = changes.items() if isinstance(changes, Mapping) else changes
    out = tuple((str(k), None if v is None else str(v)) for k, v in items)
    if len({k for k, _ in out}) != len(out):
        raise PpcoError("a delta changes each key at most once")
    return out


@stored("pending_update")
@dataclass(frozen=True, slots=True)
class PendingUpdate:
    id: EntityId
    submitter: EntityId
    target: EntityId
    delta: Delta
    mode: UpdateMode
    concerned: tuple[EntityId, ...]
    verdicts: tuple[tuple[EntityId, Verdict], ...]
    state: UpdateState
    created_at: datetime
    base_revision: int
    document: str | None = None
    new_revision: int | None = None

    def verdict_of(self, user: EntityId) -> Verdict:
        return dict(self.verdicts)[user]

    @property
    def outstanding(self) -> list[EntityId]:
        return [u for u, v in self.verdicts if v is Verdict.PENDING]

    @property
    def delta_digest(self) -> str:
        return digest([[k, v] for k, v in self.delta])


@stored("annotation")
@dataclass(frozen=True, slots=True)
class Annotation:
    id: EntityId
    pending_id: EntityId
    recipient: EntityId
    text: str
    sent_at: datetime
    delta: Delta = ()
    # the recipient's own filtered view of the target, when they hold one
    context: FilterResult | None = None


OPEN = UpdateState.OPEN


class Workflow:
    """Approval workflow over one store.

    ``on_commit`` listeners are called with the committed update after its
    revision has been written; the exchange node uses this to broadcast
    change notifications.
    """

    def __init__(self, store: Store, model: ProductModel, engine: ViewpointEngine, *,
                 namespace: str = "pending"):
        self.store = store
        self.model = model
        self.engine = engine
        self.namespace = namespace
        self.on_commit: list[Callable[[PendingUpdate], None]] = []

    # -- queries ------------------------------------------------------------

    def pending(self, pending_id: EntityId) -> PendingUpdate:
        if pending_id not in self.store or self.store.kind_of(pending_id) != "pending_update":
            raise UnknownEntity(f"unknown pending update {pending_id}")
        return self.store.get(pending_id)

    def open_updates(self, target: EntityId | None = None) -> list[PendingUpdate]:
        return [p for p in self.store.latest("pending_update")
                if p.state is OPEN and (target is None or p.target == target)]

    def annotations(self, pending_id: EntityId | None = None, recipient: EntityId | None = None) -> list[Annotation]:
        return [a for a in self.store.latest("annotation")
                if (pending_id is None or a.pending_id == pending_id)
                and (recipient is None or a.recipient == recipient)]

    def concerned_collaborators(self, target) -> set[EntityId]:
        """Users holding a viewpoint on the target or on one of its assembly
        ancestors. When collaboration spaces cover the target, ancestors
        outside those spaces do not count."""
        target = EntityId.parse(target)
        self.model.artifact(target)
        related = self.model.ancestors(target)
        spaces = self.model.spaces_containing(target)
        if spaces:
            covered = set()
            for space in spaces:
                for product in space.products:
                    covered.update(self.model.composition_closure(product))
            related &= covered
        related.add(target)
        return {vp.user_id for vp in self.engine.viewpoints() if vp.product_id in related}

    # -- transitions --------------------------------------------------------

    def submit_update(self, user_id, target, delta, mode=UpdateMode.MANUAL, *,
                      document: str | None = None) -> EntityId:
        user_id, target = EntityId.parse(user_id), EntityId.parse(target)
        mode = as_enum(UpdateMode, mode)
        delta = as_delta(delta)
        with self.store.mutex:
            self.engine.user(user_id)
            art = self.model.artifact(target)
            if Right.PROPOSE_UPDATE not in self.model.rights_of(user_id, target):
                raise NoRight(f"user {user_id} may not propose updates to {target}")
            if self.open_updates(target):
                raise ConcurrentOpenUpdate(f"{target} already has an open update")
            concerned = tuple(sorted(self.concerned_collaborators(target) | {user_id}))
            verdicts = tuple((u, Verdict.APPROVED if u == user_id else Verdict.PENDING) for u in concerned)
            pending = PendingUpdate(
                id=self.store.mint(self.namespace),
                submitter=user_id,
                target=target,
                delta=delta,
                mode=mode,
                concerned=concerned,
                verdicts=verdicts,
                state=OPEN,
                created_at=self.store.clock(),
                base_revision=art.revision,
                document=document,
            )
            self.store.put(pending)
            self.store.append_trace(pending.id, TraceKind.SUBMITTED, actor=user_id,
                                    payload=[[k, v] for k, v in delta],
                                    detail=f"{target} {mode.value}")
            if art.statutory is not StatutoryState.WAIT_VALIDATION:
                self.model.set_statutory(target, StatutoryState.WAIT_VALIDATION, actor=user_id)
            submitter = self.engine.user(user_id)
            for recipient in concerned:
                if recipient != user_id:
                    self._annotate(pending, recipient, submitter.name, art.name)
            if not pending.outstanding:
                self._commit(pending)
            return pending.id

    def _annotate(self, pending: PendingUpdate, recipient: EntityId, submitter: str, target_name: str):
        try:
            context = self.engine.filtering_info_artifact(pending.target, recipient)
        except PpcoError:
            context = None
        keys = ", ".join(k for k, _ in pending.delta) or "no attributes"
        note = Annotation(
            id=self.store.mint(self.namespace),
            pending_id=pending.id,
            recipient=recipient,
            text=f"{submitter} proposes a change to {target_name} ({keys}); your approval is required",
            sent_at=self.store.clock(),
            delta=pending.delta,
            context=context,
        )
        self.store.put(note)
        self.store.append_trace(pending.id, TraceKind.ANNOTATED, actor=recipient, payload=note.text,
                                detail=str(recipient))

    def record_verdict(self, pending_id, user_id, verdict) -> UpdateState:
        pending_id, user_id = EntityId.parse(pending_id), EntityId.parse(user_id)
        verdict = as_enum(Verdict, verdict)
        if verdict is Verdict.PENDING:
            raise PpcoError("a verdict is approved or rejected")
        with self.store.mutex:
            pending = self.pending(pending_id)
            if pending.state is not OPEN:
                raise UpdateClosed(f"update {pending_id} is {pending.state.value}")
            if user_id not in pending.concerned:
                raise NotConcerned(f"user {user_id} is not concerned by update {pending_id}")
            if pending.verdict_of(user_id) is not Verdict.PENDING:
                raise AlreadyDecided(f"user {user_id} already decided on {pending_id}")
            verdicts = tuple((u, verdict if u == user_id else v) for u, v in pending.verdicts)
            if verdict is Verdict.REJECTED:
                pending = dataclasses.replace(pending, verdicts=verdicts, state=UpdateState.REJECTED)
                self.store.put(pending)
                self.store.append_trace(pending.id, TraceKind.REJECTED, actor=user_id,
                                        payload=[[k, v] for k, v in pending.delta], detail=str(user_id))
                self.model.set_statutory(pending.target, StatutoryState.REJECTED, actor=user_id)
                return pending.state
            pending = dataclasses.replace(pending, verdicts=verdicts)
            self.store.put(pending)
            self.store.append_trace(pending.id, TraceKind.APPROVED, actor=user_id, payload=verdict.value,
                                    detail=str(user_id))
            if not pending.outstanding:
                pending = self._commit(pending)
            return pending.state

    def _commit(self, pending: PendingUpdate) -> PendingUpdate:
        with self.model.commit_context():
            rev = self.model.revise(pending.target, pending.delta)
        pending = dataclasses.replace(pending, state=UpdateState.COMMITTED, new_revision=rev)
        self.store.put(pending)
        record = self.model.get(pending.target, rev)
        self.store.append_trace(pending.id, TraceKind.COMMITTED, payload=record, detail=f"revision {rev}")
        self.store.append_trace(pending.target, TraceKind.COMMITTED, actor=pending.submitter, payload=record,
                                detail=f"revision {rev} by {pending.id}")
        self.model.set_statutory(pending.target, StatutoryState.UPDATE_IS_ACCEPTED)
        for listener in self.on_commit:
            listener(pending)
        return pending

    def cancel_update(self, pending_id, user_id) -> UpdateState:
        pending_id, user_id = EntityId.parse(pending_id), EntityId.parse(user_id)
        with self.store.mutex:
            pending = self.pending(pending_id)
            if pending.state is not OPEN:
                raise UpdateClosed(f"update {pending_id} is {pending.state.value}")
            if user_id != pending.submitter:
                raise NoRight("only the submitter can cancel an update")
            pending = dataclasses.replace(pending, state=UpdateState.CANCELLED)
            self.store.put(pending)
            self.store.append_trace(pending.id, TraceKind.STATE_CHANGED, actor=user_id,
                                    payload=[[k, v] for k, v in pending.delta], detail="cancelled")
            # no legal path back from wait_validation other than accept/reject
            self.model.set_statutory(pending.target, StatutoryState.REJECTED, actor=user_id)
            return pending.state

    def trace(self, subject) -> list:
        return self.store.trace(EntityId.parse(subject))
