"""
Live reconciliation sessions
============================

During a reconciliation meeting the team edits assignments and watches the
metrics move. The session service serializes edits, recomputes metrics before
answering, and pushes one event per committed revision to every subscriber.
This script runs the real HTTP service in-process and plays both sides.
"""
import json
import tempfile
import threading
import time
from pathlib import Path

import httpx
import uvicorn

from codewizard import (
    PALETTE,
    Assignment,
    Code,
    Codebook,
    Project,
    Round,
    SINGLE,
    Unit,
    load_project,
    save_project,
)
from codewizard.service import create_app

#%%
# Build and save a bundle with one disagreement-heavy round.
grid = {"u1": "CACCC", "u2": "ABBBA", "u3": "BACAA", "u4": "CCCCC", "u5": "BBBAA"}
coders = tuple(f"coder{i}" for i in range(1, 6))
codebook = Codebook(codes=tuple(
    Code(id=c, label=f"category {c}", color=PALETTE[i]) for i, c in enumerate("ABCD")
))
rnd = Round(
    index=1, mode=SINGLE, units=tuple(grid), coders=coders,
    assignments=tuple(
        Assignment(u, coders[i], row[i]) for u, row in grid.items() for i in range(5)
    ),
)
bundle = Path(tempfile.mkdtemp(prefix="codewizard-live-")) / "bundle"
save_project(
    Project(name="session", codebook=codebook, units=tuple(
        Unit(id=u, text=f"field note {u}") for u in grid
    ), coders=coders, rounds=(rnd,)),
    bundle,
)

#%%
# Start the service on an ephemeral port (the CLI equivalent is
# ``codewizard serve --project <bundle>``).
server = uvicorn.Server(uvicorn.Config(
    create_app(bundle), host="127.0.0.1", port=0, log_level="warning",
    timeout_graceful_shutdown=3,
))
thread = threading.Thread(target=server.run, daemon=True)
thread.start()
while not server.started:
    time.sleep(0.01)
base = f"http://127.0.0.1:{server.servers[0].sockets[0].getsockname()[1]}"
client = httpx.Client(base_url=base, timeout=10)

print("project revision:", client.get("/api/project").json()["revision"])
print("kappa:", round(client.get("/api/metrics").json()["kappa"]["value"], 4))

#%%
# A subscriber listens on the event stream while an edit lands. Every commit
# produces exactly one event carrying the new revision and kappa.
events = []
stream_ready = threading.Event()

def listen():
    with client.stream("GET", "/api/events?last_seen=0") as response:
        stream_ready.set()
        for line in response.iter_lines():
            if line.startswith("data:"):
                events.append(json.loads(line[5:]))
                if len(events) >= 2:
                    return

listener = threading.Thread(target=listen, daemon=True)
listener.start()
stream_ready.wait()

#%%
# coder2 concedes on u1 and joins the majority code C. The optimistic
# concurrency check requires the revision the client last saw; a stale value
# would get a 409 and a refetch.
response = client.patch("/api/rounds/1/assignments", json={
    "coder_id": "coder2", "unit_id": "u1", "field": "primary",
    "code": "C", "base_revision": 1,
})
body = response.json()
print("new revision:", body["revision"])
print("u1 agreement now:", body["unit"]["p_i"], "shade:", body["unit"]["shade"])
print("kappa after edit:", round(body["kappa"]["value"], 4))

listener.join(timeout=5)
print("events seen:", events)

#%%
# Edits are journaled immediately and folded into the bundle on save or
# shutdown, so a crash never loses committed revisions.
client.post("/api/save")
print("bundle revision on disk:", load_project(bundle).revision)

server.should_exit = True
thread.join(timeout=5)
client.close()
