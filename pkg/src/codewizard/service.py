"""HTTP service for live reconciliation sessions.

All mutations run through a single asyncio lock: an accepted edit bumps the
project revision, recomputes the edited round's metrics before the response
returns, appends to an on-disk journal, and fans one event out to every
stream subscriber. Reads always see one immutable project snapshot, so a
response is never assembled from two revisions. The journal is folded into
the bundle on save or shutdown; a crashed session replays it on next start.
"""

from __future__ import annotations

import asyncio
import json
import os
from contextlib import asynccontextmanager
from pathlib import Path

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import StreamingResponse
from fastapi.staticfiles import StaticFiles

from .metrics import DEFAULT_SHADE_THRESHOLDS
from .model import DOUBLE, ModelError, Project, Violation, validate_project
from .snapshot import (
    MetricsSnapshot,
    compute_snapshot,
    display_round,
    project_to_dict,
    snapshot_to_dict,
)
from .storage import load_project, save_project

HEARTBEAT_SECONDS = 15.0
JOURNAL_NAME = "journal.ndjson"


class InvalidBundle(Exception):
    """The bundle fails validation; the service refuses to start on it."""

    def __init__(self, violations: list[Violation]):
        self.violations = violations
        super().__init__(f"{len(violations)} violations")


class Session:
    """Single-writer state for one project bundle."""

    def __init__(
        self,
        bundle_dir: Path | str,
        shade_thresholds: tuple[float, float] = DEFAULT_SHADE_THRESHOLDS,
    ):
        self.bundle_dir = Path(bundle_dir)
        self.shade_thresholds = shade_thresholds
        self.project = load_project(self.bundle_dir)
        self._replay_journal()
        violations = validate_project(self.project)
        if violations:
            raise InvalidBundle(violations)
        self.lock = asyncio.Lock()
        self.subscribers: set[asyncio.Queue] = set()
        self._cache: dict[tuple[int, int], MetricsSnapshot] = {}

    # --- persistence -------------------------------------------------------

    @property
    def journal_path(self) -> Path:
        return self.bundle_dir / JOURNAL_NAME

    def _replay_journal(self) -> None:
        if not self.journal_path.exists():
            return
        for line in self.journal_path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            entry = json.loads(line)
            if entry["revision"] <= self.project.revision:
                continue
            self.project = self.project.with_edit(
                entry["round"],
                entry["coder_id"],
                entry["unit_id"],
                entry["field"],
                entry["code"],
            )
            if self.project.revision != entry["revision"]:
                raise InvalidBundle(
                    [
                        Violation(
                            "journal-gap",
                            f"journal entry for revision {entry['revision']} does not "
                            f"follow revision {self.project.revision - 1}",
                        )
                    ]
                )

    def _journal_append(self, entry: dict) -> None:
        with open(self.journal_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def save(self) -> int:
        """Fold journaled edits into the bundle; returns the persisted revision."""
        project = self.project
        save_project(project, self.bundle_dir)
        if self.journal_path.exists():
            self.journal_path.unlink()
        return project.revision

    # --- reads ---------------------------------------------------------------

    def snapshot(self, round_index: int) -> MetricsSnapshot:
        project = self.project
        key = (project.revision, round_index)
        if key not in self._cache:
            self._cache[key] = compute_snapshot(project, round_index, self.shade_thresholds)
        return self._cache[key]

    # --- writes --------------------------------------------------------------

    def _reject(self, field: str, message: str) -> HTTPException:
        return HTTPException(status_code=422, detail={"field": field, "error": message})

    def check_edit(self, round_index: int, body: dict) -> None:
        """Validate an edit command against the current revision; raises HTTP errors."""
        project = self.project
        if not project.has_round(round_index):
            raise HTTPException(status_code=404, detail={"error": f"no such round: {round_index}"})
        try:
            base_revision = int(body["base_revision"])
        except (KeyError, TypeError, ValueError):
            raise self._reject("base_revision", "base_revision must be an integer")
        if base_revision > project.revision:
            raise self._reject(
                "base_revision",
                f"base_revision {base_revision} exceeds current revision {project.revision}",
            )
        if base_revision < project.revision:
            raise HTTPException(
                status_code=409,
                detail={
                    "error": "stale base_revision",
                    "base_revision": base_revision,
                    "current_revision": project.revision,
                },
            )
        field = body.get("field")
        if field not in ("primary", "secondary"):
            raise self._reject("field", "field must be 'primary' or 'secondary'")
        rnd = project.round(round_index)
        if field == "secondary" and rnd.mode != DOUBLE:
            raise self._reject("field", "secondary codes do not apply to a single-coding round")
        code = body.get("code")
        if not isinstance(code, str) or code not in project.codebook:
            raise self._reject("code", f"unknown code {code!r}")
        unit_id = body.get("unit_id")
        if unit_id not in rnd.units:
            raise self._reject("unit_id", f"unknown unit {unit_id!r}")
        coder_id = body.get("coder_id")
        if coder_id not in rnd.coders:
            raise self._reject("coder_id", f"unknown coder {coder_id!r}")
        if rnd.cell(unit_id, coder_id) is None:
            raise self._reject("unit_id", f"no assignment for unit {unit_id!r} / coder {coder_id!r}")

    async def apply_edit(self, round_index: int, body: dict) -> dict:
        async with self.lock:
            self.check_edit(round_index, body)
            try:
                self.project = self.project.with_edit(
                    round_index, body["coder_id"], body["unit_id"], body["field"], body["code"]
                )
            except ModelError as exc:
                raise self._reject("edit", str(exc))
            self._cache.clear()
            revision = self.project.revision
            self._journal_append(
                {
                    "revision": revision,
                    "round": round_index,
                    "coder_id": body["coder_id"],
                    "unit_id": body["unit_id"],
                    "field": body["field"],
                    "code": body["code"],
                }
            )
            snapshot = self.snapshot(round_index)
            kappa_value = None if snapshot.kappa is None else snapshot.kappa.kappa
            event = {
                "revision": revision,
                "round": round_index,
                "changed_unit_ids": [body["unit_id"]],
                "kappa": kappa_value,
            }
            self._publish(event)

            unit_entry = next(
                e for e in snapshot.per_unit if e.unit_id == body["unit_id"]
            )
            snapshot_dict = snapshot_to_dict(snapshot)
            return {
                "revision": revision,
                "round": round_index,
                "kappa": snapshot_dict["kappa"],
                "unit": {
                    "unit_id": unit_entry.unit_id,
                    "p_i": unit_entry.p_i,
                    "display": None if unit_entry.p_i is None else display_round(unit_entry.p_i),
                    "shade": unit_entry.shade,
                    "n_coders": unit_entry.n_coders,
                },
            }

    def _publish(self, event: dict) -> None:
        for queue in list(self.subscribers):
            queue.put_nowait(event)


def create_app(
    bundle_dir: Path | str,
    shade_thresholds: tuple[float, float] = DEFAULT_SHADE_THRESHOLDS,
    static_dir: Path | str | None = None,
    save_on_shutdown: bool = True,
) -> FastAPI:
    """Build the service over one validated bundle; raises InvalidBundle otherwise."""
    session = Session(bundle_dir, shade_thresholds)

    @asynccontextmanager
    async def lifespan(_: FastAPI):
        yield
        if save_on_shutdown:
            session.save()

    app = FastAPI(title="codewizard session service", lifespan=lifespan)
    app.state.session = session

    @app.get("/api/project")
    async def get_project() -> dict:
        return project_to_dict(session.project)

    @app.get("/api/metrics")
    async def get_metrics(round: int | None = None) -> dict:
        project = session.project
        if round is None:
            if not project.rounds:
                raise HTTPException(status_code=404, detail={"error": "project has no rounds"})
            round = project.rounds[-1].index
        if not project.has_round(round):
            raise HTTPException(status_code=404, detail={"error": f"no such round: {round}"})
        return snapshot_to_dict(session.snapshot(round))

    @app.patch("/api/rounds/{round_index}/assignments")
    async def patch_assignment(round_index: int, request: Request) -> dict:
        try:
            body = await request.json()
        except json.JSONDecodeError:
            raise HTTPException(status_code=422, detail={"error": "body must be JSON"})
        if not isinstance(body, dict):
            raise HTTPException(status_code=422, detail={"error": "body must be a JSON object"})
        return await session.apply_edit(round_index, body)

    @app.post("/api/save")
    async def save() -> dict:
        async with session.lock:
            revision = session.save()
        return {"saved": True, "revision": revision}

    @app.get("/api/events")
    async def events(request: Request, last_seen: int | None = None) -> StreamingResponse:
        # Subscribe before the response starts so no committed revision can
        # fall between the catch-up check and the first queue read.
        queue: asyncio.Queue = asyncio.Queue()
        session.subscribers.add(queue)
        current = session.project.revision
        catchup = None
        if last_seen is not None and last_seen < current:
            catchup = {
                "revision": current,
                "changed_unit_ids": [],
                "kappa": None,
                "catchup": True,
            }

        async def stream():
            try:
                floor = 0
                if catchup is not None:
                    yield f"event: revision\ndata: {json.dumps(catchup)}\n\n"
                    floor = catchup["revision"]
                while True:
                    if await request.is_disconnected():
                        return
                    try:
                        event = await asyncio.wait_for(queue.get(), timeout=HEARTBEAT_SECONDS)
                    except asyncio.TimeoutError:
                        yield ": keep-alive\n\n"
                        continue
                    if event["revision"] <= floor:
                        continue
                    floor = event["revision"]
                    yield f"event: revision\ndata: {json.dumps(event)}\n\n"
            finally:
                session.subscribers.discard(queue)

        return StreamingResponse(stream(), media_type="text/event-stream")

    if static_dir is not None:
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
