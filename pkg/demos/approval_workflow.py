"""An attribute change going through unanimous approval.

A proposal on the piston opens a pending update. Every concerned actor
other than the submitter must approve before a new revision is written;
a single rejection closes it for good. Everything lands in the trace.
"""

import tempfile

import ppco
from ppco.ids import EntityId

PISTON = EntityId("demo", 381009)
GEORGES = EntityId("demo", 18936)
REVIEWERS = [EntityId("demo", n) for n in (18937, 18938, 18939)]

with tempfile.TemporaryDirectory() as root:
    with ppco.Workspace.open(root) as ws:
        ws.load_fixture(ppco.data_path("piston.json"))
        ws.load_fixture(ppco.data_path("viewpoints.json"))
        wf = ws.workflow

        pid = wf.submit_update(GEORGES, PISTON, {"diameter_mm": "83.0"})
        pending = wf.pending(pid)
        print(f"{pid} opened, waiting on {', '.join(map(str, pending.outstanding))}")

        for user in REVIEWERS:
            wf.record_verdict(pid, user, "approved")
            print(f"  {user} approved -> {wf.pending(pid).state.value}")

        piston = ws.model.get(PISTON)
        print(f"piston now at revision {piston.revision}, diameter {piston.attrs['diameter_mm']} mm,"
              f" state {piston.statutory.value}")

        # A second proposal is vetoed by the first reviewer.
        pid = wf.submit_update(GEORGES, PISTON, {"diameter_mm": "90.0"})
        wf.record_verdict(pid, REVIEWERS[0], "rejected")
        print(f"{pid} {wf.pending(pid).state.value}; piston stays at revision {ws.model.get(PISTON).revision}")

        print()
        print("trace of the piston:")
        print(ws.store.export_trace(PISTON), end="")

    # Reopening replays the log into the same state.
    with ppco.Workspace.open(root) as again:
        print()
        print("after reopen, revisions on disk:", again.store.revisions(PISTON))
