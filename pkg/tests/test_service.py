from __future__ import annotations

import asyncio
import json
import queue as stdqueue
import shutil

import httpx
import pytest

from codewizard import load_metrics_export, load_project, save_project
from codewizard.cli import main as cli_main
from codewizard.service import InvalidBundle, Session, create_app
from codewizard.snapshot import snapshot_to_dict
from conftest import FIG10_KAPPA
from liveserver import SseReader, live_app


@pytest.fixture
def bundle(fig10_project, tmp_path):
    path = tmp_path / "bundle"
    save_project(fig10_project, path)
    return path


@pytest.fixture
def served(bundle):
    app = create_app(bundle)
    with live_app(app) as base_url:
        with httpx.Client(base_url=base_url, timeout=30.0) as client:
            yield client, base_url, bundle


def patch_edit(client, round_index=1, base_revision=1, coder="coder2", unit="u1",
               field="primary", code="C"):
    return client.patch(
        f"/api/rounds/{round_index}/assignments",
        json={
            "coder_id": coder,
            "unit_id": unit,
            "field": field,
            "code": code,
            "base_revision": base_revision,
        },
    )


# --- project and metrics reads ----------------------------------------------------


def test_fresh_bundle_serves_revision_one(served):
    client, _, _ = served
    body = client.get("/api/project").json()
    assert body["revision"] == 1
    assert body["schema"] == "codewizard.project@1"
    assert [c["id"] for c in body["codebook"]["codes"]] == ["A", "B", "C", "D"]
    assert all(c["color"].startswith("#") for c in body["codebook"]["codes"])
    assert len(body["rounds"][0]["assignments"]) == 25


def test_concurrent_readers_see_identical_bodies(served):
    client, _, _ = served
    first = client.get("/api/project").json()
    second = client.get("/api/project").json()
    assert first == second


def test_metrics_body_matches_batch_snapshot(served, fig10_project):
    from codewizard import compute_snapshot

    client, _, _ = served
    body = client.get("/api/metrics", params={"round": 1}).json()
    expected = snapshot_to_dict(compute_snapshot(fig10_project, 1))
    body.pop("computed_at")
    expected.pop("computed_at")
    assert body == expected
    assert abs(body["kappa"]["value"] - FIG10_KAPPA) < 1e-12
    assert body["cdm"]["cells"][0]["pair"] == ["A", "B"]


def test_metrics_default_round_is_last(served):
    client, _, _ = served
    assert client.get("/api/metrics").json()["round"] == 1


def test_metrics_bad_round_is_404(served):
    client, _, _ = served
    assert client.get("/api/metrics", params={"round": 0}).status_code == 404
    assert client.get("/api/metrics", params={"round": 99}).status_code == 404


def test_single_mode_certainty_has_machine_readable_reason(served):
    client, _, _ = served
    body = client.get("/api/metrics", params={"round": 1}).json()
    assert body["certainty"] == {"error": "certainty requires double coding"}
    assert body["ps_matrix"] == {"error": "certainty requires double coding"}


# --- edits ----------------------------------------------------------------------------


def test_edit_applies_and_recomputes_before_response(served):
    client, _, _ = served
    response = patch_edit(client)  # u1: coder2 A -> C joins the majority
    assert response.status_code == 200
    body = response.json()
    assert body["revision"] == 2
    assert body["unit"]["unit_id"] == "u1"
    assert body["unit"]["p_i"] == 1.0
    assert body["unit"]["shade"] == "none"
    assert body["kappa"]["value"] > FIG10_KAPPA  # resolving a disagreement raises kappa

    assert client.get("/api/project").json()["revision"] == 2
    metrics = client.get("/api/metrics", params={"round": 1}).json()
    assert metrics["revision"] == 2
    assert metrics["kappa"]["value"] == body["kappa"]["value"]


def test_sequential_edits_mint_ordered_revisions(served):
    client, _, _ = served
    assert patch_edit(client, base_revision=1).json()["revision"] == 2
    assert patch_edit(client, base_revision=2, unit="u3", coder="coder1",
                      code="A").json()["revision"] == 3


def test_edit_to_same_value_still_commits(served):
    client, _, _ = served
    response = patch_edit(client, code="A")  # coder2 on u1 already has A
    assert response.status_code == 200
    assert response.json()["revision"] == 2


def test_unknown_code_is_422_naming_field(served):
    client, _, _ = served
    response = patch_edit(client, code="ZZ")
    assert response.status_code == 422
    assert response.json()["detail"]["field"] == "code"


def test_unknown_unit_and_coder_are_422(served):
    client, _, _ = served
    assert patch_edit(client, unit="nope").json()["detail"]["field"] == "unit_id"
    assert patch_edit(client, coder="nobody").json()["detail"]["field"] == "coder_id"


def test_bad_field_and_secondary_on_single_round(served):
    client, _, _ = served
    assert patch_edit(client, field="tertiary").json()["detail"]["field"] == "field"
    response = patch_edit(client, field="secondary")
    assert response.status_code == 422
    assert "single-coding" in response.json()["detail"]["error"]


def test_stale_base_revision_is_409_with_current(served):
    client, _, _ = served
    patch_edit(client, base_revision=1)
    response = patch_edit(client, base_revision=1, unit="u3", coder="coder1", code="A")
    assert response.status_code == 409
    assert response.json()["detail"]["current_revision"] == 2


def test_future_base_revision_is_422(served):
    client, _, _ = served
    response = patch_edit(client, base_revision=7)
    assert response.status_code == 422
    assert response.json()["detail"]["field"] == "base_revision"


def test_unknown_round_is_404(served):
    client, _, _ = served
    assert patch_edit(client, round_index=9).status_code == 404


# --- event stream ------------------------------------------------------------------------


def test_each_commit_produces_exactly_one_event(served):
    client, base_url, _ = served
    reader = SseReader(base_url, last_seen=0)
    try:
        name, catchup = reader.next_event()
        assert name == "revision"
        assert catchup == {"revision": 1, "changed_unit_ids": [], "kappa": None,
                           "catchup": True}
        patch_edit(client)
        name, event = reader.next_event()
        assert name == "revision"
        assert event["revision"] == 2
        assert event["changed_unit_ids"] == ["u1"]
        assert event["round"] == 1
        assert event["kappa"] > FIG10_KAPPA
        with pytest.raises(stdqueue.Empty):
            reader.events.get(timeout=0.5)  # no second event for one commit
    finally:
        reader.stop()


def test_reconnect_with_last_seen_gets_catchup(served):
    client, base_url, _ = served
    patch_edit(client)  # revision 2 happens before the subscriber connects
    reader = SseReader(base_url, last_seen=1)
    try:
        _, event = reader.next_event()
        assert event["revision"] == 2
        assert event["catchup"] is True
    finally:
        reader.stop()


def test_up_to_date_subscriber_gets_no_catchup(served):
    client, base_url, _ = served
    reader = SseReader(base_url, last_seen=1)  # already at revision 1
    try:
        patch_edit(client)
        _, event = reader.next_event()
        assert event["revision"] == 2
        assert "catchup" not in event
    finally:
        reader.stop()


def test_events_arrive_in_strict_revision_order(served):
    client, base_url, _ = served
    reader = SseReader(base_url, last_seen=0)
    try:
        reader.next_event()  # catch-up at revision 1
        patch_edit(client, base_revision=1)
        patch_edit(client, base_revision=2, unit="u3", coder="coder1", code="A")
        patch_edit(client, base_revision=3, unit="u5", coder="coder4", code="B")
        revisions = [reader.next_event()[1]["revision"] for _ in range(3)]
        assert revisions == [2, 3, 4]
    finally:
        reader.stop()


# --- persistence ---------------------------------------------------------------------------


def test_edits_journal_until_save_folds_them(served):
    client, _, bundle = served
    patch_edit(client)
    journal = bundle / "journal.ndjson"
    assert journal.exists()
    entry = json.loads(journal.read_text().splitlines()[0])
    assert entry == {"revision": 2, "round": 1, "coder_id": "coder2", "unit_id": "u1",
                     "field": "primary", "code": "C"}
    assert load_project(bundle).revision == 1  # not folded yet

    response = client.post("/api/save")
    assert response.json() == {"saved": True, "revision": 2}
    assert not journal.exists()
    reloaded = load_project(bundle)
    assert reloaded.revision == 2
    assert reloaded.round(1).cell("u1", "coder2").primary == "C"


def test_graceful_shutdown_persists_pending_revision(bundle):
    app = create_app(bundle)
    with live_app(app) as base_url:
        with httpx.Client(base_url=base_url, timeout=30.0) as client:
            patch_edit(client)
    reloaded = load_project(bundle)
    assert reloaded.revision == 2
    assert reloaded.round(1).cell("u1", "coder2").primary == "C"
    assert not (bundle / "journal.ndjson").exists()


def test_crash_recovery_replays_journal(bundle):
    crashed = Session(bundle)
    asyncio.run(crashed.apply_edit(1, {
        "coder_id": "coder2", "unit_id": "u1", "field": "primary", "code": "C",
        "base_revision": 1,
    }))
    assert (bundle / "journal.ndjson").exists()
    del crashed  # no save: simulates a crash

    recovered = Session(bundle)
    assert recovered.project.revision == 2
    assert recovered.project.round(1).cell("u1", "coder2").primary == "C"


def test_invalid_bundle_refused(fig10_project, tmp_path):
    import dataclasses

    rnd = fig10_project.round(1)
    broken = dataclasses.replace(rnd, assignments=rnd.assignments[:-1])
    bundle = tmp_path / "bundle"
    save_project(dataclasses.replace(fig10_project, rounds=(broken,)), bundle)
    with pytest.raises(InvalidBundle) as err:
        create_app(bundle)
    assert any(v.rule == "missing-assignment" for v in err.value.violations)


# --- batch/live equivalence (smoke; the randomized sweep lives in the acceptance suite) ----


def test_live_metrics_equal_batch_metrics_on_saved_bundle(served, tmp_path):
    client, _, bundle = served
    edits = [
        dict(base_revision=1, unit="u1", coder="coder2", code="C"),
        dict(base_revision=2, unit="u3", coder="coder3", code="A"),
    ]
    for n, edit in enumerate(edits):
        patch_edit(client, **edit)
        live = client.get("/api/metrics", params={"round": 1}).json()
        client.post("/api/save")

        out = tmp_path / f"batch-{n}"
        assert cli_main([
            "metrics", "--project", str(bundle), "--round", "1",
            "--format", "json", "--out", str(out),
        ]) == 0
        batch = snapshot_to_dict(load_metrics_export(out))
        live.pop("computed_at")
        batch.pop("computed_at")
        assert live == batch
