"""Typed collaboration messages and their canonical XML encoding.

The encoding is elements-only, UTF-8 without byte-order mark, single line,
with a fixed child order (see ``docs/wire.md``). Equal envelopes always encode
to identical bytes, and ``decode(encode(m)) == m`` for every valid envelope.
"""

from __future__ import annotations

import re
import uuid
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from datetime import datetime, timedelta
from enum import Enum

from ppco.errors import (
    InvalidEnvelope,
    InvalidSpec,
    MalformedXml,
    SchemaViolation,
    UnknownMessageType,
)
from ppco.ids import EntityId
from ppco.serial import format_time, parse_time, utc_now
from ppco.viewpoints import LEVELS, Connection, FilterResult, ObjectRef, PayloadFragment
from ppco.workflow import Delta, Verdict

SCHEMA_VERSION = "1.0"
XML_DECLARATION = '<?xml version="1.0" encoding="UTF-8"?>'

_UUID = re.compile(r"[0-9a-f]{8}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{12}")
_ILLEGAL_XML = re.compile("[^\t\n\r\x20-\ud7ff\ue000-\ufffd\U00010000-\U0010ffff]")
_INT = re.compile(r"[0-9]+")


class MessageType(str, Enum):
    INFORMATION_REQUEST = "InformationRequest"
    INFORMATION_RESPONSE = "InformationResponse"
    UPDATE_PROPOSAL = "UpdateProposal"
    APPROVAL_REQUEST = "ApprovalRequest"
    APPROVAL_RESPONSE = "ApprovalResponse"
    CHANGE_NOTIFICATION = "ChangeNotification"
    ACKNOWLEDGMENT = "Acknowledgment"
    FAULT = "Fault"


RESPONSE_TYPES = frozenset({
    MessageType.INFORMATION_RESPONSE,
    MessageType.APPROVAL_RESPONSE,
    MessageType.ACKNOWLEDGMENT,
    MessageType.FAULT,
})


@dataclass(frozen=True, slots=True)
class InformationRequest:
    product_id: EntityId
    requesting_user_id: EntityId
    threshold: int = 3


@dataclass(frozen=True, slots=True)
class InformationResponse:
    result: FilterResult
    threshold: int = 3
    fragments: tuple[PayloadFragment, ...] = ()


@dataclass(frozen=True, slots=True)
class UpdateProposal:
    target: EntityId
    delta: Delta
    document: str | None = None


@dataclass(frozen=True, slots=True)
class ApprovalRequest:
    pending_id: EntityId
    target: EntityId
    delta_digest: str


@dataclass(frozen=True, slots=True)
class ApprovalResponse:
    pending_id: EntityId
    verdict: Verdict


@dataclass(frozen=True, slots=True)
class ChangeNotification:
    target: EntityId
    new_revision: int
    digest: str


@dataclass(frozen=True, slots=True)
class Acknowledgment:
    pass


@dataclass(frozen=True, slots=True)
class Fault:
    code: str
    text: str = ""


BODY_TYPES = {
    MessageType.INFORMATION_REQUEST: InformationRequest,
    MessageType.INFORMATION_RESPONSE: InformationResponse,
    MessageType.UPDATE_PROPOSAL: UpdateProposal,
    MessageType.APPROVAL_REQUEST: ApprovalRequest,
    MessageType.APPROVAL_RESPONSE: ApprovalResponse,
    MessageType.CHANGE_NOTIFICATION: ChangeNotification,
    MessageType.ACKNOWLEDGMENT: Acknowledgment,
    MessageType.FAULT: Fault,
}
_TYPE_OF_BODY = {cls: t for t, cls in BODY_TYPES.items()}

Body = (InformationRequest | InformationResponse | UpdateProposal | ApprovalRequest | ApprovalResponse
        | ChangeNotification | Acknowledgment | Fault)


@dataclass(frozen=True, slots=True)
class Envelope:
    message_id: str
    type: MessageType
    sender_org: EntityId
    receiver_org: EntityId
    sent_at: datetime
    body: Body
    correlation_id: str | None = None
    sender_user: EntityId | None = None
    schema_version: str = SCHEMA_VERSION


def new_message_id() -> str:
    return str(uuid.uuid4())


def make_envelope(body: Body, sender_org: EntityId, receiver_org: EntityId, *, correlation_id=None,
                  sender_user=None, sent_at: datetime | None = None, message_id: str | None = None) -> Envelope:
    return Envelope(
        message_id=message_id or new_message_id(),
        type=_TYPE_OF_BODY[type(body)],
        sender_org=sender_org,
        receiver_org=receiver_org,
        sent_at=sent_at or utc_now(),
        body=body,
        correlation_id=correlation_id,
        sender_user=sender_user,
    )


def xml_safe(text: str) -> str:
    """Drop characters XML 1.0 cannot carry."""
    return _ILLEGAL_XML.sub("", text)


# -- validation -------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class Violation:
    path: str
    reason: str


def validate(env) -> list[Violation]:
    """All invariant violations of ``env``; empty means valid."""
    out: list[Violation] = []

    def bad(path, reason):
        out.append(Violation(path, reason))

    if not isinstance(env, Envelope):
        return [Violation("", "not an Envelope")]
    if not isinstance(env.message_id, str) or not _UUID.fullmatch(env.message_id):
        bad("messageId", "must be a lowercase UUID string")
    mtype = env.type if isinstance(env.type, MessageType) else None
    if mtype is None:
        bad("type", "unknown message type")
    if env.correlation_id is None:
        if mtype in RESPONSE_TYPES:
            bad("correlationId", f"{mtype.value} must carry a correlationId")
    elif not isinstance(env.correlation_id, str) or not _UUID.fullmatch(env.correlation_id):
        bad("correlationId", "must be a lowercase UUID string")
    for name in ("sender_org", "receiver_org"):
        if not isinstance(getattr(env, name), EntityId):
            bad(_camel(name), "must be an entity id")
    if env.sender_user is not None and not isinstance(env.sender_user, EntityId):
        bad("senderUser", "must be an entity id")
    ts = env.sent_at
    if not isinstance(ts, datetime) or ts.tzinfo is None or ts.utcoffset() != timedelta(0):
        bad("sentAt", "must be a UTC timestamp")
    elif ts.microsecond:
        bad("sentAt", "must have second precision")
    if env.schema_version != SCHEMA_VERSION:
        bad("schemaVersion", f"must be {SCHEMA_VERSION}")
    if mtype is not None and not isinstance(env.body, BODY_TYPES[mtype]):
        bad("body", f"{mtype.value} needs a {BODY_TYPES[mtype].__name__} body")
    elif mtype is not None:
        _validate_body(env.body, bad)
    return out


def _camel(name: str) -> str:
    head, *rest = name.split("_")
    return head + "".join(p.title() for p in rest)


def _validate_body(body, bad):
    def ids(path, *values):
        for i, v in enumerate(values):
            if not isinstance(v, EntityId):
                bad(path[i], "must be an entity id")

    def level(path, v):
        if isinstance(v, bool) or v not in LEVELS:
            bad(path, "must be 1, 2 or 3")

    def positive(path, v):
        if isinstance(v, bool) or not isinstance(v, int) or v <= 0:
            bad(path, "must be a positive integer")

    def text(path, v, optional=False):
        if v is None and optional:
            return
        if not isinstance(v, str):
            bad(path, "must be a string")
        elif _ILLEGAL_XML.search(v):
            bad(path, "contains characters XML cannot carry")

    if isinstance(body, InformationRequest):
        ids(("body.productId", "body.requestingUserId"), body.product_id, body.requesting_user_id)
        level("body.threshold", body.threshold)
    elif isinstance(body, InformationResponse):
        level("body.threshold", body.threshold)
        res = body.result
        if not isinstance(res, FilterResult):
            bad("body.result", "must be a FilterResult")
        else:
            ids(("body.result.userId", "body.result.productId"), res.user_id, res.product_id)
            for i, vp in enumerate(res.viewpoint_order):
                positive(f"body.result.viewpointOrder[{i}]", vp)
            names = set()
            for i, c in enumerate(res.connections):
                p = f"body.result.connections[{i}]"
                if not isinstance(c, Connection):
                    bad(p, "must be a Connection")
                    continue
                text(f"{p}.batch", c.batch)
                if c.batch in names:
                    bad(f"{p}.batch", "duplicate batch")
                names.add(c.batch)
                level(f"{p}.level", c.level)
                for j, vp in enumerate(c.contributors):
                    positive(f"{p}.contributors[{j}]", vp)
        for i, frag in enumerate(body.fragments):
            p = f"body.fragments[{i}]"
            if not isinstance(frag, PayloadFragment):
                bad(p, "must be a PayloadFragment")
                continue
            text(f"{p}.batch", frag.batch)
            level(f"{p}.level", frag.level)
            for j, obj in enumerate(frag.objects):
                q = f"{p}.objects[{j}]"
                if not isinstance(obj, ObjectRef):
                    bad(q, "must be an ObjectRef")
                    continue
                text(f"{q}.ref", obj.ref)
                text(f"{q}.kind", obj.kind)
                text(f"{q}.name", obj.name)
                if obj.revision is not None:
                    positive(f"{q}.revision", obj.revision)
    elif isinstance(body, UpdateProposal):
        ids(("body.target",), body.target)
        keys = set()
        for i, change in enumerate(body.delta):
            if not (isinstance(change, tuple) and len(change) == 2):
                bad(f"body.delta[{i}]", "must be a (key, value) pair")
                continue
            key, value = change
            text(f"body.delta[{i}].key", key)
            text(f"body.delta[{i}].value", value, optional=True)
            if key in keys:
                bad(f"body.delta[{i}].key", "duplicate key")
            keys.add(key)
        text("body.document", body.document, optional=True)
    elif isinstance(body, ApprovalRequest):
        ids(("body.pendingId", "body.target"), body.pending_id, body.target)
        text("body.deltaDigest", body.delta_digest)
    elif isinstance(body, ApprovalResponse):
        ids(("body.pendingId",), body.pending_id)
        if body.verdict not in (Verdict.APPROVED, Verdict.REJECTED):
            bad("body.verdict", "must be approved or rejected")
    elif isinstance(body, ChangeNotification):
        ids(("body.target",), body.target)
        positive("body.newRevision", body.new_revision)
        text("body.digest", body.digest)
    elif isinstance(body, Fault):
        text("body.code", body.code)
        if isinstance(body.code, str) and not body.code:
            bad("body.code", "must be non-empty")
        text("body.text", body.text)


# -- encoding ---------------------------------------------------------------

def _esc(text: str) -> str:
    return (text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
            .replace("\r", "&#13;"))


def _el(tag: str, content) -> str:
    if isinstance(content, (list, tuple)):
        inner = "".join(content)
    else:
        inner = _esc(str(content))
    return f"<{tag}>{inner}</{tag}>" if inner else f"<{tag}/>"


def _vp_list(tag, numbers):
    return _el(tag, [_el("Viewpoint", n) for n in numbers])


def _encode_body(body) -> list[str]:
    if isinstance(body, InformationRequest):
        return [_el("Product", body.product_id), _el("RequestingUser", body.requesting_user_id),
                _el("Threshold", body.threshold)]
    if isinstance(body, InformationResponse):
        res = body.result
        conns = [_el("Connection", [_el("Batch", c.batch), _el("Level", c.level),
                                     _vp_list("Contributors", c.contributors)])
                 for c in res.connections]
        frags = []
        for f in body.fragments:
            objs = []
            for o in f.objects:
                parts = [_el("Ref", o.ref), _el("Kind", o.kind), _el("Name", o.name)]
                if o.revision is not None:
                    parts.append(_el("Revision", o.revision))
                objs.append(_el("Object", parts))
            frags.append(_el("Fragment", [_el("Batch", f.batch), _el("Level", f.level), _el("Objects", objs)]))
        return [_el("User", res.user_id), _el("Product", res.product_id), _el("Threshold", body.threshold),
                _vp_list("ViewpointOrder", res.viewpoint_order), _el("Connections", conns),
                _el("Payload", frags)]
    if isinstance(body, UpdateProposal):
        changes = []
        for key, value in body.delta:
            parts = [_el("Key", key)]
            if value is not None:
                parts.append(_el("Value", value))
            changes.append(_el("Change", parts))
        out = [_el("Target", body.target), _el("Delta", changes)]
        if body.document is not None:
            out.append(_el("Document", body.document))
        return out
    if isinstance(body, ApprovalRequest):
        return [_el("PendingUpdate", body.pending_id), _el("Target", body.target),
                _el("DeltaDigest", body.delta_digest)]
    if isinstance(body, ApprovalResponse):
        return [_el("PendingUpdate", body.pending_id), _el("Verdict", body.verdict.value)]
    if isinstance(body, ChangeNotification):
        return [_el("Target", body.target), _el("NewRevision", body.new_revision), _el("Digest", body.digest)]
    if isinstance(body, Fault):
        return [_el("Code", body.code), _el("Text", body.text)]
    return []


def encode(env: Envelope) -> bytes:
    """Canonical single-line XML bytes for a valid envelope."""
    problems = validate(env)
    if problems:
        raise InvalidEnvelope(problems)
    parts = [_el("MessageId", env.message_id)]
    if env.correlation_id is not None:
        parts.append(_el("CorrelationId", env.correlation_id))
    parts += [_el("Type", env.type.value), _el("SenderOrg", env.sender_org), _el("ReceiverOrg", env.receiver_org)]
    if env.sender_user is not None:
        parts.append(_el("SenderUser", env.sender_user))
    parts += [_el("SentAt", format_time(env.sent_at)), _el("SchemaVersion", env.schema_version),
              _el("Body", [_el(env.type.value, _encode_body(env.body))])]
    return (XML_DECLARATION + _el("Message", parts)).encode("utf-8")


# -- decoding ---------------------------------------------------------------

class _Children:
    """Ordered consumption of an element's children."""

    def __init__(self, elem: ET.Element, path: str):
        if elem.text and elem.text.strip():
            raise SchemaViolation(path, "unexpected text content")
        self.items = list(elem)
        self.path = path
        self.pos = 0
        for child in self.items:
            if child.tail and child.tail.strip():
                raise SchemaViolation(path, "unexpected text content")

    def take(self, tag: str, required: bool = True) -> ET.Element | None:
        if self.pos < len(self.items) and self.items[self.pos].tag == tag:
            self.pos += 1
            return self.items[self.pos - 1]
        if required:
            found = self.items[self.pos].tag if self.pos < len(self.items) else "end of element"
            raise SchemaViolation(f"{self.path}/{tag}", f"missing (found {found})")
        return None

    def many(self, tag: str) -> list[ET.Element]:
        out = []
        while (child := self.take(tag, required=False)) is not None:
            out.append(child)
        return out

    def text(self, tag: str, required: bool = True) -> str | None:
        child = self.take(tag, required)
        return None if child is None else _leaf(child, f"{self.path}/{tag}")

    def done(self):
        if self.pos < len(self.items):
            raise SchemaViolation(f"{self.path}/{self.items[self.pos].tag}", "unexpected element")


def _leaf(elem: ET.Element, path: str) -> str:
    if len(elem):
        raise SchemaViolation(path, "expected text, found child elements")
    return elem.text or ""


def _as(path: str, text: str, conv):
    try:
        return conv(text)
    except (ValueError, InvalidSpec) as exc:
        raise SchemaViolation(path, f"bad value {text!r}: {exc}") from None


def _int(text: str) -> int:
    if not _INT.fullmatch(text):
        raise ValueError("not a non-negative integer")
    return int(text)


def _vp_numbers(elem: ET.Element, path: str) -> tuple[int, ...]:
    kids = _Children(elem, path)
    out = tuple(_as(f"{path}/Viewpoint", _leaf(v, f"{path}/Viewpoint"), _int) for v in kids.many("Viewpoint"))
    kids.done()
    return out


def _decode_body(mtype: MessageType, elem: ET.Element, path: str):
    k = _Children(elem, path)
    eid = EntityId.parse
    if mtype is MessageType.INFORMATION_REQUEST:
        body = InformationRequest(_as(f"{path}/Product", k.text("Product"), eid),
                                  _as(f"{path}/RequestingUser", k.text("RequestingUser"), eid),
                                  _as(f"{path}/Threshold", k.text("Threshold"), _int))
    elif mtype is MessageType.INFORMATION_RESPONSE:
        user = _as(f"{path}/User", k.text("User"), eid)
        product = _as(f"{path}/Product", k.text("Product"), eid)
        threshold = _as(f"{path}/Threshold", k.text("Threshold"), _int)
        order = _vp_numbers(k.take("ViewpointOrder"), f"{path}/ViewpointOrder")
        cpath = f"{path}/Connections"
        ck = _Children(k.take("Connections"), cpath)
        conns = []
        for c in ck.many("Connection"):
            p = f"{cpath}/Connection"
            ch = _Children(c, p)
            batch = ch.text("Batch")
            lvl = _as(f"{p}/Level", ch.text("Level"), _int)
            contributors = _vp_numbers(ch.take("Contributors"), f"{p}/Contributors")
            ch.done()
            conns.append(Connection(batch, lvl, contributors))
        ck.done()
        ppath = f"{path}/Payload"
        pk = _Children(k.take("Payload"), ppath)
        frags = []
        for f in pk.many("Fragment"):
            p = f"{ppath}/Fragment"
            fk = _Children(f, p)
            batch = fk.text("Batch")
            lvl = _as(f"{p}/Level", fk.text("Level"), _int)
            ok = _Children(fk.take("Objects"), f"{p}/Objects")
            objs = []
            for o in ok.many("Object"):
                q = f"{p}/Objects/Object"
                oc = _Children(o, q)
                ref, kind, name = oc.text("Ref"), oc.text("Kind"), oc.text("Name")
                rev = oc.text("Revision", required=False)
                oc.done()
                objs.append(ObjectRef(ref, kind, name, None if rev is None else _as(f"{q}/Revision", rev, _int)))
            ok.done()
            fk.done()
            frags.append(PayloadFragment(batch, lvl, tuple(objs)))
        pk.done()
        body = InformationResponse(FilterResult(user, product, order, tuple(conns)), threshold, tuple(frags))
    elif mtype is MessageType.UPDATE_PROPOSAL:
        target = _as(f"{path}/Target", k.text("Target"), eid)
        dk = _Children(k.take("Delta"), f"{path}/Delta")
        delta = []
        for c in dk.many("Change"):
            ch = _Children(c, f"{path}/Delta/Change")
            delta.append((ch.text("Key"), ch.text("Value", required=False)))
            ch.done()
        dk.done()
        body = UpdateProposal(target, tuple(delta), k.text("Document", required=False))
    elif mtype is MessageType.APPROVAL_REQUEST:
        body = ApprovalRequest(_as(f"{path}/PendingUpdate", k.text("PendingUpdate"), eid),
                               _as(f"{path}/Target", k.text("Target"), eid), k.text("DeltaDigest"))
    elif mtype is MessageType.APPROVAL_RESPONSE:
        pending = _as(f"{path}/PendingUpdate", k.text("PendingUpdate"), eid)
        verdict = _as(f"{path}/Verdict", k.text("Verdict"), Verdict)
        body = ApprovalResponse(pending, verdict)
    elif mtype is MessageType.CHANGE_NOTIFICATION:
        body = ChangeNotification(_as(f"{path}/Target", k.text("Target"), eid),
                                  _as(f"{path}/NewRevision", k.text("NewRevision"), _int), k.text("Digest"))
    elif mtype is MessageType.ACKNOWLEDGMENT:
        body = Acknowledgment()
    else:
        body = Fault(k.text("Code"), k.text("Text"))
    k.done()
    return body


def decode(data: bytes) -> Envelope:
    """Parse and validate one message document.

    Raises :class:`MalformedXml`, :class:`UnknownMessageType` or
    :class:`SchemaViolation`; each carries the offending path.
    """
    if not isinstance(data, (bytes, bytearray)):
        raise MalformedXml("", "expected bytes")
    if data.startswith(b"\xef\xbb\xbf"):
        raise MalformedXml("", "byte-order mark not allowed")
    if b"<!DOCTYPE" in data or b"<!ENTITY" in data:
        raise MalformedXml("", "document type declarations are not accepted")
    try:
        root = ET.fromstring(bytes(data))
    except ET.ParseError as exc:
        line, col = exc.position
        raise MalformedXml(f"line {line}, column {col}", str(exc)) from None
    if root.tag != "Message":
        raise SchemaViolation(root.tag, "root element must be Message")
    k = _Children(root, "Message")
    message_id = k.text("MessageId")
    correlation_id = k.text("CorrelationId", required=False)
    type_text = k.text("Type")
    try:
        mtype = MessageType(type_text)
    except ValueError:
        raise UnknownMessageType("Message/Type", f"unknown message type {type_text!r}") from None
    sender_org = _as("Message/SenderOrg", k.text("SenderOrg"), EntityId.parse)
    receiver_org = _as("Message/ReceiverOrg", k.text("ReceiverOrg"), EntityId.parse)
    user_text = k.text("SenderUser", required=False)
    sender_user = None if user_text is None else _as("Message/SenderUser", user_text, EntityId.parse)
    sent_at = _as("Message/SentAt", k.text("SentAt"), parse_time)
    schema_version = k.text("SchemaVersion")
    bk = _Children(k.take("Body"), "Message/Body")
    body_elem = bk.take(mtype.value)
    bk.done()
    k.done()
    body = _decode_body(mtype, body_elem, f"Message/Body/{mtype.value}")
    env = Envelope(message_id, mtype, sender_org, receiver_org, sent_at, body, correlation_id, sender_user,
                   schema_version)
    problems = validate(env)
    if problems:
        raise SchemaViolation(problems[0].path, "; ".join(f"{v.path}: {v.reason}" for v in problems))
    return env

