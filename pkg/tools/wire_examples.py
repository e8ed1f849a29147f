"""Build the normative wire examples and print them as the body of docs/wire.md."""

from datetime import datetime, timezone

from ppco.ids import EntityId
from ppco.messages import (Acknowledgment, ApprovalRequest, ApprovalResponse, ChangeNotification, Fault,
                           InformationRequest, InformationResponse, UpdateProposal, encode, make_envelope)
from ppco.viewpoints import Connection, FilterResult, ObjectRef, PayloadFragment
from ppco.workflow import Verdict

A, B = EntityId("demo", 1), EntityId("demo", 2)
PISTON, GEORGES, HELENE = EntityId("demo", 381009), EntityId("demo", 18936), EntityId("demo", 18937)
PENDING = EntityId("demo.1", 1)
AT = datetime(2026, 3, 2, 9, 30, tzinfo=timezone.utc)


def examples():
    result = FilterResult(GEORGES, PISTON, (9, 8), (Connection("Artifact", 1, (9, 8)),
                                                    Connection("Mechanic", 1, (8,)),
                                                    Connection("Thermal", 2, (8,))))
    fragments = (PayloadFragment("Artifact", 1, (ObjectRef("demo:381009", "artifact", "Piston", 1),)),
                 PayloadFragment("Mechanic", 1, (ObjectRef("mechanic.bore", "attribute", "80"),)))
    delta = (("mechanic.bore", "81"), ("thermal.max_temp", None))
    n = iter(range(1, 100))

    def env(body, sender, receiver, **kw):
        return make_envelope(body, sender, receiver, sent_at=AT,
                             message_id=f"6f1c0d2e-0000-4000-8000-{next(n):012d}", **kw)

    yield env(InformationRequest(PISTON, GEORGES, 1), A, B, sender_user=GEORGES)
    yield env(InformationResponse(result, 1, fragments), B, A,
              correlation_id="6f1c0d2e-0000-4000-8000-000000000001")
    yield env(UpdateProposal(PISTON, delta, "piston-bore-rev2.xml"), A, A, sender_user=GEORGES)
    yield env(ApprovalRequest(PENDING, PISTON, "sha256:" + "ab" * 32), A, B, sender_user=GEORGES)
    yield env(ApprovalResponse(PENDING, Verdict.APPROVED), B, A, sender_user=HELENE,
              correlation_id="6f1c0d2e-0000-4000-8000-000000000004")
    yield env(ChangeNotification(PISTON, 2, "sha256:" + "cd" * 32), A, B, sender_user=GEORGES)
    yield env(Acknowledgment(), B, A, correlation_id="6f1c0d2e-0000-4000-8000-000000000006")
    yield env(Fault("MalformedXml", "line 1, column 0: unclosed token"), B, A,
              correlation_id="00000000-0000-0000-0000-000000000000")


if __name__ == "__main__":
    for e in examples():
        print(f"### {e.type.value}\n\n```xml\n{encode(e).decode('utf-8')}\n```\n")
