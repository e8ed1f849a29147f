"""Supply-chain organization node.

A node owns a workspace, listens for framed XML envelopes and talks to its
peers with the same protocol. Every exchange is request/reply: a request
is answered by exactly one reply envelope (an ``Acknowledgment`` unless the
type calls for something richer, or a ``Fault`` when handling failed).

Approval routing relies on the roster in the node configuration, which
records the home organization of each user.
"""

from __future__ import annotations

import contextlib
import json
import os
import re
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

from ppco.errors import (
    ConfigError,
    DecodeError,
    NoRight,
    PeerFault,
    PpcoError,
    TransportClosed,
    UnknownPeer,
)
from ppco.ids import EntityId
from ppco.messages import (
    Acknowledgment,
    ApprovalRequest,
    ApprovalResponse,
    ChangeNotification,
    Envelope,
    Fault,
    InformationRequest,
    InformationResponse,
    MessageType,
    UpdateProposal,
    decode,
    encode,
    make_envelope,
    xml_safe,
)
from ppco.serial import digest, utc_now
from ppco.store import Store, TraceKind
from ppco.transport import MAX_FRAME, TcpTransport
from ppco.workflow import PendingUpdate, UpdateMode, Verdict, as_delta
from ppco.workspace import Workspace

CONFIG_ENV = "PPCO_NODE_CONFIG"
NIL_UUID = "00000000-0000-0000-0000-000000000000"
_MESSAGE_ID = re.compile(rb"<MessageId>([0-9a-f-]{36})</MessageId>")
_SENDER_ORG = re.compile(rb"<SenderOrg>([^<]{1,200})</SenderOrg>")


@dataclass(frozen=True)
class NodeConfig:
    org: EntityId
    listen: str
    peers: dict[EntityId, str] = field(default_factory=dict)
    fixtures: tuple[Path, ...] = ()
    # user -> home organization
    users: dict[EntityId, EntityId] = field(default_factory=dict)
    store: Path | None = None

    def __post_init__(self):
        if self.org in self.peers:
            raise ConfigError(f"node {self.org} lists itself as a peer")
        endpoints = list(self.peers.values())
        if len(set(endpoints)) != len(endpoints):
            raise ConfigError("peer endpoints must be unique")
        if self.listen in endpoints:
            raise ConfigError(f"listen endpoint {self.listen} is also a peer endpoint")

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path | None = None) -> NodeConfig:
        base = base_dir or Path.cwd()
        try:
            org = EntityId.parse(doc["org"])
            peers_raw = doc.get("peers", {})
            peers = {EntityId.parse(k): str(v) for k, v in peers_raw.items()}
            if len(peers) != len(peers_raw):
                raise ConfigError("a peer organization is listed twice")
            raw_users = doc.get("users", {})
            if isinstance(raw_users, list):
                users = {EntityId.parse(u): org for u in raw_users}
            else:
                users = {EntityId.parse(u): EntityId.parse(o) for u, o in raw_users.items()}
            fixtures = tuple(base / p for p in doc.get("fixtures", ()))
            store = base / doc["store"] if doc.get("store") else None
            return cls(org, str(doc["listen"]), peers, fixtures, users, store)
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError, PpcoError) as exc:
            raise ConfigError(f"invalid node configuration: {exc}") from exc

    @classmethod
    def from_file(cls, path) -> NodeConfig:
        path = Path(path)
        try:
            doc = json.loads(path.read_text("utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(doc, path.parent)

    def home_of(self, user: EntityId) -> EntityId:
        return self.users.get(user, self.org)


def config_path(explicit: str | os.PathLike | None = None) -> Path:
    """The node configuration path; ``PPCO_NODE_CONFIG`` overrides ``explicit``."""
    env = os.environ.get(CONFIG_ENV)
    chosen = env or explicit
    if not chosen:
        raise ConfigError(f"no node configuration given (use --config or {CONFIG_ENV})")
    return Path(chosen)


@dataclass(frozen=True)
class Receipt:
    message_id: str
    reply: Envelope


@dataclass
class InboxItem:
    """An approval request waiting for verdicts of users homed here."""

    pending_id: EntityId
    target: EntityId
    origin: EntityId
    request_id: str
    delta_digest: str
    recipients: list[EntityId]
    answered: dict[EntityId, Verdict] = field(default_factory=dict)


class ExchangeNode:
    def __init__(self, config: NodeConfig, transport=None, *, workspace: Workspace | None = None, clock=utc_now):
        self.config = config
        self.org = config.org
        self.transport = transport if transport is not None else TcpTransport()
        self.clock = clock
        if workspace is None:
            store = Store(config.store, clock=clock)
            workspace = Workspace(store, namespace=config.org.namespace,
                                  pending_namespace=f"{config.org.namespace}.{config.org.number}",
                                  service_mode=True)
        self.ws = workspace
        self.ws.workflow.on_commit.append(self._queue_change_notification)
        self.inbox: list[InboxItem] = []
        self.notifications: list[tuple[EntityId, ChangeNotification]] = []
        # per thread: messages queued by the handler running on that thread
        self._local = threading.local()
        self._connections: dict[EntityId, object] = {}
        self._conn_lock = threading.Lock()
        self._artifact_locks: defaultdict[EntityId, threading.RLock] = defaultdict(threading.RLock)
        self._locks_guard = threading.Lock()
        self.listener = None

    # -- lifecycle ----------------------------------------------------------

    def start(self) -> ExchangeNode:
        for path in self.config.fixtures:
            self.ws.load_fixture(path)
        self.listener = self.transport.listen(self.config.listen, self.handle_frame)
        return self

    def stop(self):
        if self.listener is not None:
            self.listener.close()
            self.listener = None
        with self._conn_lock:
            for conn in self._connections.values():
                conn.close()
            self._connections.clear()
        self.ws.close()

    def connect(self) -> dict[EntityId, bool]:
        """Open a connection to every configured peer that is reachable."""
        status = {}
        for peer in sorted(self.config.peers):
            try:
                self._connection(peer)
                status[peer] = True
            except TransportClosed:
                status[peer] = False
        return status

    @property
    def connected(self) -> bool:
        with self._conn_lock:
            return all(p in self._connections and not self._connections[p].closed for p in self.config.peers)

    def _connection(self, peer: EntityId):
        with self._conn_lock:
            conn = self._connections.get(peer)
            if conn is None or conn.closed:
                conn = self.transport.connect(self.config.peers[peer])
                self._connections[peer] = conn
            return conn

    # -- sending ------------------------------------------------------------

    def envelope(self, body, receiver: EntityId, *, correlation_id=None, sender_user=None) -> Envelope:
        return make_envelope(body, self.org, receiver, correlation_id=correlation_id, sender_user=sender_user,
                             sent_at=self.clock())

    def send(self, peer: EntityId, envelope: Envelope) -> Receipt:
        """Deliver ``envelope`` and wait for the reply.

        Raises :class:`PeerFault` when the peer answers with a Fault.
        """
        if peer != self.org and peer not in self.config.peers:
            raise UnknownPeer(f"{peer} is not a configured peer of {self.org}")
        payload = encode(envelope)
        self._trace(TraceKind.MESSAGE_SENT, envelope, f"{envelope.type.value} -> {peer}")
        if peer == self.org:
            if len(payload) > MAX_FRAME:
                raise TransportClosed(f"local error: frame of {len(payload)} bytes exceeds the limit")
            raw_reply = self.handle_frame(payload)
        else:
            conn = self._connection(peer)
            raw_reply = conn.request(payload)
        reply = decode(raw_reply)
        self._trace(TraceKind.MESSAGE_RECEIVED, reply, f"{reply.type.value} <- {peer}")
        if isinstance(reply.body, Fault):
            raise PeerFault(reply.body.code, reply.body.text)
        return Receipt(envelope.message_id, reply)

    def _trace(self, kind: TraceKind, env: Envelope, detail: str):
        self.ws.store.append_trace(self.org, kind, actor=env.sender_user, payload=env.message_id, detail=detail)

    # -- receiving ----------------------------------------------------------

    def handle_frame(self, payload: bytes) -> bytes:
        """Bytes in, reply bytes out; never raises."""
        try:
            try:
                env = decode(payload)
            except DecodeError as exc:
                self.ws.store.append_trace(self.org, TraceKind.MESSAGE_RECEIVED, payload=digest(payload.hex()[:64]),
                                           detail=f"undecodable ({exc.code})")
                return self._fault_bytes(payload, exc.code, f"{exc.path}: {exc.reason}")
            reply = self.handle(env)
            if reply is None:
                reply = self.envelope(Acknowledgment(), env.sender_org, correlation_id=env.message_id)
            data = encode(reply)
            if len(data) > MAX_FRAME:
                reply = self.envelope(Fault("FrameTooLarge", "reply exceeds the frame limit"), env.sender_org,
                                      correlation_id=env.message_id)
                data = encode(reply)
            self._trace(TraceKind.MESSAGE_SENT, reply, f"{reply.type.value} -> {env.sender_org}")
            return data
        except Exception as exc:  # noqa: BLE001 - the node must answer whatever arrives
            return self._fault_bytes(payload, "InternalError", f"{type(exc).__name__}: {exc}")

    def _fault_bytes(self, payload: bytes, code: str, text: str) -> bytes:
        m = _MESSAGE_ID.search(payload)
        correlation = m.group(1).decode() if m else NIL_UUID
        receiver = self.org
        s = _SENDER_ORG.search(payload)
        if s:
            try:
                receiver = EntityId.parse(s.group(1).decode("utf-8"))
            except (PpcoError, UnicodeDecodeError):
                pass
        env = self.envelope(Fault(code, xml_safe(text)[:2000]), receiver, correlation_id=correlation)
        try:
            return encode(env)
        except PpcoError:
            env = self.envelope(Fault(code, ""), receiver, correlation_id=NIL_UUID)
            return encode(env)

    def _lock_for(self, env: Envelope):
        body = env.body
        key = None
        if isinstance(body, InformationRequest):
            key = body.product_id
        elif isinstance(body, (UpdateProposal, ApprovalRequest, ChangeNotification)):
            key = body.target
        elif isinstance(body, ApprovalResponse):
            try:
                key = self.ws.workflow.pending(body.pending_id).target
            except PpcoError:
                key = None
        if key is None:
            return contextlib.nullcontext()
        with self._locks_guard:
            return self._artifact_locks[key]

    def handle(self, env: Envelope) -> Envelope | None:
        """Dispatch one decoded envelope; handler errors become Fault replies."""
        self._trace(TraceKind.MESSAGE_RECEIVED, env, f"{env.type.value} <- {env.sender_org}")
        if env.receiver_org != self.org:
            return self.envelope(Fault("Misrouted", f"message addressed to {env.receiver_org}"), env.sender_org,
                                 correlation_id=env.message_id)
        local = self._local
        local.depth = getattr(local, "depth", 0) + 1
        try:
            with self._lock_for(env):
                body = self._dispatch(env)
        except PpcoError as exc:
            body = Fault(exc.code, xml_safe(str(exc)))
        finally:
            # nested self-deliveries leave follow-ups to the outermost handler
            try:
                if local.depth == 1:
                    self._flush_outbox()
            finally:
                local.depth -= 1
        return self.envelope(body, env.sender_org, correlation_id=env.message_id)

    @property
    def _outbox(self) -> list[tuple[EntityId, Envelope]]:
        local = self._local
        if not hasattr(local, "outbox"):
            local.outbox = []
        return local.outbox

    def _dispatch(self, env: Envelope):
        body = env.body
        ws = self.ws
        if isinstance(body, InformationRequest):
            result = ws.engine.filtering_info_artifact(body.product_id, body.requesting_user_id)
            fragments = ws.engine.materialize(result, body.threshold)
            return InformationResponse(result, body.threshold, fragments)
        if isinstance(body, UpdateProposal):
            if env.sender_user is None:
                raise NoRight("an update proposal must name its submitter (senderUser)")
            pending_id = ws.workflow.submit_update(env.sender_user, body.target, body.delta, UpdateMode.XML_FILE,
                                                   document=body.document or env.message_id)
            self._fan_out(ws.workflow.pending(pending_id))
            return Acknowledgment()
        if isinstance(body, ApprovalRequest):
            concerned = ws.workflow.concerned_collaborators(body.target)
            recipients = sorted(u for u in concerned
                                if self.config.home_of(u) == self.org and u != env.sender_user)
            self.inbox.append(InboxItem(body.pending_id, body.target, env.sender_org, env.message_id,
                                        body.delta_digest, recipients))
            return Acknowledgment()
        if isinstance(body, ApprovalResponse):
            if env.sender_user is None:
                raise NoRight("an approval response must name the deciding user (senderUser)")
            ws.workflow.record_verdict(body.pending_id, env.sender_user, body.verdict)
            return Acknowledgment()
        if isinstance(body, ChangeNotification):
            self.notifications.append((env.sender_org, body))
            return Acknowledgment()
        return Acknowledgment()

    def _fan_out(self, pending: PendingUpdate):
        """One ApprovalRequest per node homing at least one concerned user
        other than the submitter."""
        homes = sorted({self.config.home_of(u) for u in pending.concerned if u != pending.submitter})
        for org in homes:
            req = self.envelope(ApprovalRequest(pending.id, pending.target, pending.delta_digest), org,
                                sender_user=pending.submitter)
            self._outbox.append((org, req))

    def _queue_change_notification(self, pending: PendingUpdate):
        record = self.ws.model.get(pending.target, pending.new_revision)
        note = ChangeNotification(pending.target, pending.new_revision, digest(record))
        for peer in sorted(self.config.peers):
            self._outbox.append((peer, self.envelope(note, peer, sender_user=pending.submitter)))

    def _flush_outbox(self):
        while self._outbox:
            peer, env = self._outbox.pop(0)
            try:
                self.send(peer, env)
            except (TransportClosed, PeerFault, UnknownPeer):
                self.ws.store.append_trace(self.org, TraceKind.MESSAGE_SENT, payload=env.message_id,
                                           detail=f"{env.type.value} -> {peer} FAILED")

    # -- user-facing helpers --------------------------------------------------

    def propose(self, user: EntityId, target: EntityId, delta, document: str | None = None) -> EntityId:
        """Submit an update on behalf of a local user; returns the pending id."""
        env = self.envelope(UpdateProposal(target, as_delta(delta), document), self.org, sender_user=user)
        self.send(self.org, env)
        opened = [p for p in self.ws.workflow.open_updates(target) if p.submitter == user]
        if opened:
            return opened[-1].id
        done = [p for p in self.ws.store.latest("pending_update") if p.target == target and p.submitter == user]
        return done[-1].id

    def request_information(self, peer: EntityId, product: EntityId, user: EntityId,
                            threshold: int = 3) -> InformationResponse:
        env = self.envelope(InformationRequest(product, user, threshold), peer, sender_user=user)
        return self.send(peer, env).reply.body

    def awaiting(self, user: EntityId) -> list[InboxItem]:
        return [i for i in self.inbox if user in i.recipients and user not in i.answered]

    def respond(self, pending_id: EntityId, user: EntityId, verdict) -> Receipt:
        verdict = Verdict(verdict)
        item = next((i for i in self.inbox if i.pending_id == pending_id and user in i.recipients), None)
        if item is None:
            raise NoRight(f"no approval request for {pending_id} addressed to {user} at {self.org}")
        env = self.envelope(ApprovalResponse(pending_id, verdict), item.origin, correlation_id=item.request_id,
                            sender_user=user)
        receipt = self.send(item.origin, env)
        item.answered[user] = verdict
        return receipt

    def message_log(self) -> list[tuple[str, str]]:
        """(kind, detail) of every message event on this node, in order."""
        return [(e.kind.value, e.detail) for e in self.ws.store.trace(self.org)
                if e.kind in (TraceKind.MESSAGE_SENT, TraceKind.MESSAGE_RECEIVED)]


def start(config: NodeConfig | str | os.PathLike, transport=None, **kwargs) -> ExchangeNode:
    """Build a node from a config (object or path), load fixtures and bind."""
    if not isinstance(config, NodeConfig):
        config = NodeConfig.from_file(config)
    node = ExchangeNode(config, transport, **kwargs)
    try:
        return node.start()
    except Exception:
        node.ws.close()
        raise


__all__ = ["CONFIG_ENV", "ExchangeNode", "InboxItem", "NodeConfig", "Receipt", "config_path", "start",
           "MessageType"]
