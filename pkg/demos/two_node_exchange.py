"""Two organisations exchanging product information over TCP.

Node demo:1 homes the submitter and one reviewer, node demo:2 the other
two reviewers. A proposal made on demo:1 fans approval requests out to
every home node, verdicts travel back as responses, and the final
approval broadcasts a change notification to the peer.
"""

import ppco
from ppco.ids import EntityId
from ppco.node import NodeConfig, start
from ppco.transport import TcpTransport

A, B = EntityId("demo", 1), EntityId("demo", 2)
PISTON = EntityId("demo", 381009)
GEORGES, HELENE, NIKOS, MARC = (EntityId("demo", n) for n in (18936, 18937, 18938, 18939))
HOME = {GEORGES: A, MARC: A, HELENE: B, NIKOS: B}
FIXTURES = (ppco.data_path("piston.json"), ppco.data_path("viewpoints.json"))

tcp = TcpTransport()
node_b = start(NodeConfig(B, "127.0.0.1:0", {}, FIXTURES, HOME), tcp)
node_a = start(NodeConfig(A, "127.0.0.1:0", {B: node_b.listener.endpoint}, FIXTURES, HOME), tcp)
node_b.config.peers[A] = node_a.listener.endpoint
print(f"demo:1 on {node_a.listener.endpoint}, demo:2 on {node_b.listener.endpoint}")
node_a.connect()
node_b.connect()

try:
    # Helene asks demo:1 what she may see of the piston.
    info = node_b.request_information(A, PISTON, HELENE)
    print("Helene sees:", info.result.levels())

    pid = node_a.propose(GEORGES, PISTON, {"mechanic.bore": "81"})
    print(f"\nproposal {pid}")
    for user in (MARC, HELENE, NIKOS):
        node = node_a if HOME[user] == A else node_b
        print(f"  {user} has in inbox: {[str(i.pending_id) for i in node.awaiting(user)]}")
        node.respond(pid, user, "approved")

    piston = node_a.ws.model.get(PISTON)
    print(f"piston at revision {piston.revision} ({piston.statutory.value})")
    print("demo:2 notified of:", [(str(n.target), n.new_revision) for _, n in node_b.notifications])

    print("\nmessages seen by demo:1:")
    for kind, detail in node_a.message_log():
        print(f"  {kind:17} {detail}")
finally:
    node_a.stop()
    node_b.stop()
