import re
import xml.etree.ElementTree as ET
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ppco.errors import InvalidEnvelope, MalformedXml, SchemaViolation, UnknownMessageType
from ppco.ids import EntityId
from ppco.messages import (
    Acknowledgment,
    ApprovalResponse,
    InformationRequest,
    MessageType,
    UpdateProposal,
    decode,
    encode,
    make_envelope,
    validate,
)
from strategies import envelopes

WIRE_DOC = Path(__file__).resolve().parents[1] / "docs" / "wire.md"
A, B = EntityId("demo", 1), EntityId("demo", 2)
PISTON, GEORGES = EntityId("demo", 381009), EntityId("demo", 18936)


def golden_examples() -> dict[str, bytes]:
    text = WIRE_DOC.read_text("utf-8")
    blocks = re.findall(r"^### (\w+)\n\n```xml\n(.*?)\n```", text, flags=re.M | re.S)
    return {name: body.encode("utf-8") for name, body in blocks}


def test_docs_hold_one_example_per_type():
    assert sorted(golden_examples()) == sorted(t.value for t in MessageType)


@pytest.mark.parametrize("name", [t.value for t in MessageType])
def test_golden_bytes(name):
    raw = golden_examples()[name]
    env = decode(raw)
    assert env.type.value == name
    assert encode(env) == raw


@pytest.mark.parametrize("mtype", list(MessageType))
@settings(max_examples=40)
@given(data=st.data())
def test_round_trip(mtype, data):
    env = data.draw(envelopes(mtype))
    assert validate(env) == []
    raw = encode(env)
    assert decode(raw) == env
    assert encode(decode(raw)) == raw


@settings(max_examples=40)
@given(envelopes())
def test_canonical_form(env):
    raw = encode(env)
    assert raw.startswith(b'<?xml version="1.0" encoding="UTF-8"?><Message><MessageId>')
    assert raw == encode(env)
    for elem in ET.fromstring(raw).iter():
        assert not elem.attrib
        assert elem.tail is None
        if len(elem):
            assert elem.text is None


def test_minimal_acknowledgment():
    env = make_envelope(Acknowledgment(), A, B, correlation_id="6f1c0d2e-0000-4000-8000-000000000001")
    raw = encode(env)
    assert b"<Type>Acknowledgment</Type>" in raw and b"<Acknowledgment/>" in raw
    assert raw.index(b"<Message>") < raw.index(b"<Type>")


def test_information_request_product_element():
    raw = encode(make_envelope(InformationRequest(PISTON, GEORGES, 3), A, B))
    assert b"<Product>demo:381009</Product>" in raw


def test_mismatched_body_is_invalid():
    env = make_envelope(Acknowledgment(), A, B, correlation_id="6f1c0d2e-0000-4000-8000-000000000001")
    bad = type(env)(env.message_id, MessageType.FAULT, A, B, env.sent_at, env.body, env.correlation_id)
    with pytest.raises(InvalidEnvelope):
        encode(bad)


def test_validation_paths():
    ok = make_envelope(ApprovalResponse(EntityId("demo.1", 1), "approved"), A, B,
                       correlation_id="6f1c0d2e-0000-4000-8000-000000000001")
    assert validate(ok) == []
    missing = make_envelope(ApprovalResponse(EntityId("demo.1", 1), "approved"), A, B)
    assert [v.path for v in validate(missing)] == ["correlationId"]
    high = make_envelope(InformationRequest(PISTON, GEORGES, 4), A, B)
    assert [v.path for v in validate(high)] == ["body.threshold"]
    dup = make_envelope(UpdateProposal(PISTON, (("k", "1"), ("k", "2")), None), A, B)
    assert [v.path for v in validate(dup)] == ["body.delta[1].key"]


def ack_bytes() -> bytes:
    return golden_examples()["Acknowledgment"]


MALFORMED = [
    (b"", MalformedXml),
    (b"\xef\xbb\xbf" + ack_bytes(), MalformedXml),
    (ack_bytes()[:-12], MalformedXml),
    (b"<Message><MessageId>", MalformedXml),
    (b'<?xml version="1.0"?><!DOCTYPE x [<!ENTITY a "b">]><Message/>', MalformedXml),
    (b"\xff\xfe<Message/>", MalformedXml),
    (ack_bytes().replace(b"<Type>Acknowledgment</Type>", b"<Type>Gossip</Type>"), UnknownMessageType),
    (ack_bytes().replace(b"Message>", b"Msg>"), SchemaViolation),
    (re.sub(rb"<SenderOrg>.*?</SenderOrg>", b"", ack_bytes()), SchemaViolation),
    (ack_bytes().replace(b"<SenderOrg>demo:2", b"<SenderOrg>demo"), SchemaViolation),
    (ack_bytes().replace(b"<SchemaVersion>1.0", b"<SchemaVersion>2.0"), SchemaViolation),
    (ack_bytes().replace(b"<Acknowledgment/>", b"<Acknowledgment><X/></Acknowledgment>"), SchemaViolation),
    (ack_bytes().replace(b"<Acknowledgment/>", b"<Fault/>"), SchemaViolation),
    (ack_bytes().replace(b"</Body>", b"</Body><Extra/>"), SchemaViolation),
    (ack_bytes().replace(b"T09:30:00Z", b"T09:30:00.5Z"), SchemaViolation),
    (re.sub(rb"<CorrelationId>.*?</CorrelationId>", b"", ack_bytes()), SchemaViolation),
    (golden_examples()["InformationRequest"].replace(b"<Threshold>1", b"<Threshold>9"), SchemaViolation),
    (golden_examples()["InformationRequest"].replace(b"<Threshold>1", b"<Threshold>one"), SchemaViolation),
    (golden_examples()["ApprovalResponse"].replace(b"approved", b"maybe"), SchemaViolation),
]


@pytest.mark.parametrize("raw,error", MALFORMED)
def test_malformed_inputs(raw, error):
    with pytest.raises(error) as info:
        decode(raw)
    assert isinstance(info.value.path, str)


def test_schema_violation_names_element():
    raw = re.sub(rb"<SenderOrg>.*?</SenderOrg>", b"", ack_bytes())
    with pytest.raises(SchemaViolation) as info:
        decode(raw)
    assert info.value.path == "Message/SenderOrg"
    raw = ack_bytes().replace(b"<Type>Acknowledgment</Type>", b"<Type>Gossip</Type>")
    with pytest.raises(UnknownMessageType) as info:
        decode(raw)
    assert info.value.path == "Message/Type"


def test_non_bytes_input():
    with pytest.raises(MalformedXml):
        decode("<Message/>")
