"""Command-line entry point.

Exit codes: 0 on success, 1 on a domain error (one diagnostic line on
standard error), 2 on a usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import signal
import sys
import threading
from pathlib import Path

from ppco.errors import PpcoError
from ppco.ids import EntityId
from ppco.messages import decode, encode
from ppco.serial import to_plain
from ppco.viewpoints import LEVELS, FilterResult
from ppco.workflow import UpdateMode
from ppco.workspace import Workspace

STORE_ENV = "PPCO_STORE"
DEFAULT_STORE = ".ppco"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def _entity(text: str) -> EntityId:
    try:
        return EntityId.parse(text)
    except PpcoError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _level(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        value = 0
    if value not in LEVELS:
        raise argparse.ArgumentTypeError("threshold must be 1, 2 or 3")
    return value


def _assignment(text: str) -> tuple[str, str | None]:
    key, sep, value = text.partition("=")
    if not key:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE or KEY=, got {text!r}")
    # "key=" with nothing after it removes the attribute
    return key, (value if sep and value != "" else None)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ppco", description="Collaborative product information store and exchange node.")
    p.add_argument("--store", metavar="DIR", help=f"store directory (default ${STORE_ENV} or {DEFAULT_STORE})")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    fx = sub.add_parser("fixture", help="fixture management")
    fx_sub = fx.add_subparsers(dest="action", required=True, parser_class=_Parser)
    load = fx_sub.add_parser("load", help="load a scenario or viewpoint-table fixture")
    load.add_argument("paths", nargs="+", type=Path, metavar="path")

    flt = sub.add_parser("filter", help="viewpoint-filtered batch list of a product for a user")
    flt.add_argument("--user", required=True, type=_entity)
    flt.add_argument("--artifact", required=True, type=_entity)
    flt.add_argument("--threshold", type=_level, default=3)
    flt.add_argument("--format", choices=("table", "json"), default="table")

    upd = sub.add_parser("update", help="approval workflow")
    upd_sub = upd.add_subparsers(dest="action", required=True, parser_class=_Parser)
    submit = upd_sub.add_parser("submit", help="propose a change to an artifact")
    submit.add_argument("--user", required=True, type=_entity)
    submit.add_argument("--artifact", required=True, type=_entity)
    submit.add_argument("--set", dest="changes", action="append", required=True, type=_assignment,
                        metavar="KEY=VALUE")
    submit.add_argument("--mode", choices=[m.value for m in UpdateMode], default=UpdateMode.MANUAL.value)
    submit.add_argument("--document")
    for verb in ("approve", "reject"):
        v = upd_sub.add_parser(verb, help=f"{verb} a pending update")
        v.add_argument("--pending", required=True, type=_entity)
        v.add_argument("--user", required=True, type=_entity)
    status = upd_sub.add_parser("status", help="show a pending update")
    status.add_argument("--pending", required=True, type=_entity)

    tr = sub.add_parser("trace", help="dump trace events of an entity as NDJSON")
    tr.add_argument("subject", type=_entity)

    node = sub.add_parser("node", help="exchange node")
    node_sub = node.add_subparsers(dest="action", required=True, parser_class=_Parser)
    serve = node_sub.add_parser("serve", help="run a node until interrupted")
    serve.add_argument("--config", help="node.json path ($PPCO_NODE_CONFIG takes precedence)")

    msg = sub.add_parser("msg", help="ad-hoc messages")
    msg_sub = msg.add_subparsers(dest="action", required=True, parser_class=_Parser)
    send = msg_sub.add_parser("send", help="send an XML envelope to a peer and print the reply")
    send.add_argument("--peer", required=True, type=_entity)
    send.add_argument("--file", required=True, type=Path)
    send.add_argument("--config", help="node.json path ($PPCO_NODE_CONFIG takes precedence)")
    return p


def _store_root(args) -> Path:
    return Path(args.store or os.environ.get(STORE_ENV) or DEFAULT_STORE)


def format_table(result: FilterResult) -> str:
    def labels(numbers):
        return ", ".join(f"{n:02d}" for n in numbers)

    lines = [f"viewpoints | {labels(result.viewpoint_order)}", "batch | level | contributors"]
    lines += [f"{c.batch} | {c.level} | {labels(c.contributors)}" for c in result.connections]
    return "\n".join(lines) + "\n"


def format_json(result: FilterResult) -> str:
    return json.dumps(to_plain(result), sort_keys=True, indent=2) + "\n"


def _cmd_fixture(ws: Workspace, args, out):
    for path in args.paths:
        counts = ws.load_fixture(path)
        summary = ", ".join(f"{k}={v}" for k, v in counts.items()) or "nothing new"
        out.write(f"{path}: {summary}\n")


def _cmd_filter(ws: Workspace, args, out):
    result = ws.engine.filtering_info_artifact(args.artifact, args.user)
    kept = tuple(c for c in result.connections if c.level <= args.threshold)
    result = dataclasses.replace(result, connections=kept)
    out.write(format_table(result) if args.format == "table" else format_json(result))


def _describe(pending) -> str:
    lines = [f"pending {pending.id} on {pending.target}: {pending.state.value}"]
    if pending.new_revision is not None:
        lines.append(f"revision {pending.base_revision} -> {pending.new_revision}")
    lines += [f"{user} | {verdict.value}" for user, verdict in pending.verdicts]
    return "\n".join(lines) + "\n"


def _cmd_update(ws: Workspace, args, out):
    wf = ws.workflow
    if args.action == "submit":
        document = args.document
        if args.mode == UpdateMode.XML_FILE.value and not document:
            raise PpcoError("--mode xml_file needs --document")
        pid = wf.submit_update(args.user, args.artifact, args.changes, args.mode, document=document)
        out.write(_describe(wf.pending(pid)))
    elif args.action in ("approve", "reject"):
        verdict = "approved" if args.action == "approve" else "rejected"
        wf.record_verdict(args.pending, args.user, verdict)
        out.write(_describe(wf.pending(args.pending)))
    else:
        out.write(_describe(wf.pending(args.pending)))


def _cmd_trace(ws: Workspace, args, out):
    if args.subject not in ws.store and not ws.store.trace(args.subject):
        raise PpcoError(f"no entity or trace for {args.subject}")
    out.write(ws.store.export_trace(args.subject))


def _node_config(args):
    from ppco.node import NodeConfig, config_path

    return NodeConfig.from_file(config_path(args.config))


def _cmd_node(args, out):
    from ppco.node import start

    config = _node_config(args)
    node = start(config)
    stop = threading.Event()
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    out.write(f"{config.org} listening on {node.listener.endpoint}\n")
    out.flush()
    try:
        while not stop.is_set():
            if not node.connected:
                node.connect()
            stop.wait(1.0)
    except KeyboardInterrupt:
        pass
    finally:
        node.stop()


def _cmd_msg(args, out):
    from ppco.node import ExchangeNode

    config = _node_config(args)
    envelope = decode(args.file.read_bytes())
    ws = Workspace.open(_store_root(args))
    node = ExchangeNode(config, workspace=ws)
    try:
        receipt = node.send(args.peer, envelope)
    finally:
        node.stop()
    out.write(encode(receipt.reply).decode("utf-8") + "\n")


def run(argv: list[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "node":
            _cmd_node(args, out)
        elif args.command == "msg":
            _cmd_msg(args, out)
        else:
            handler = {"fixture": _cmd_fixture, "filter": _cmd_filter, "update": _cmd_update,
                       "trace": _cmd_trace}[args.command]
            with Workspace.open(_store_root(args)) as ws:
                handler(ws, args, out)
    except PpcoError as exc:
        print(f"error: {exc.code}: {str(exc).splitlines()[0] if str(exc) else ''}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    raise SystemExit(run())


if __name__ == "__main__":
    main()
