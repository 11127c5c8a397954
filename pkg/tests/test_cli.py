from __future__ import annotations

import json
import socket
from pathlib import Path

import pytest

from codewizard import (
    Assignment,
    Project,
    Round,
    SINGLE,
    Unit,
    load_metrics_export,
    load_project,
    save_project,
    write_coder_sheet,
)
from codewizard.cli import main
from conftest import FIG10_CODERS, FIG10_GRID


@pytest.fixture(autouse=True)
def _no_env_project(monkeypatch):
    monkeypatch.delenv("CODEWIZARD_PROJECT", raising=False)


def drop_cell(project: Project, unit_id: str, coder_id: str) -> Project:
    rnd = project.round(1)
    pruned = tuple(
        a for a in rnd.assignments if not (a.unit_id == unit_id and a.coder_id == coder_id)
    )
    import dataclasses

    new_round = dataclasses.replace(rnd, assignments=pruned)
    return dataclasses.replace(project, rounds=(new_round,))


# --- validate ------------------------------------------------------------------


def test_validate_clean_bundle(fig10_bundle, capsys):
    assert main(["validate", "--project", str(fig10_bundle)]) == 0
    assert "0 violations" in capsys.readouterr().out


def test_validate_reports_missing_cell(fig10_project, tmp_path, capsys):
    bundle = tmp_path / "bundle"
    save_project(drop_cell(fig10_project, "u3", "coder2"), bundle)
    assert main(["validate", "--project", str(bundle)]) == 1
    out = capsys.readouterr().out
    assert "u3" in out and "coder2" in out
    assert "1 violations" in out


def test_validate_json_report(fig10_project, tmp_path, capsys):
    bundle = tmp_path / "bundle"
    save_project(drop_cell(fig10_project, "u3", "coder2"), bundle)
    assert main(["validate", "--project", str(bundle), "--format", "json"]) == 1
    report = json.loads(capsys.readouterr().out)
    assert report["count"] == 1
    assert report["violations"][0]["rule"] == "missing-assignment"
    assert report["violations"][0]["unit_id"] == "u3"


def test_validate_nonexistent_path(tmp_path, capsys):
    assert main(["validate", "--project", str(tmp_path / "nope")]) == 2
    assert "error:" in capsys.readouterr().err


def test_no_project_anywhere_is_operational_error(capsys):
    assert main(["validate"]) == 2
    assert "no project path" in capsys.readouterr().err


# --- metrics --------------------------------------------------------------------


def test_metrics_prints_kappa_and_writes_exports(fig10_bundle, tmp_path, capsys):
    out_dir = tmp_path / "out"
    assert main(["metrics", "--project", str(fig10_bundle), "--out", str(out_dir)]) == 0
    out = capsys.readouterr().out
    assert "kappa=0.302" in out
    assert (out_dir / "cdm.csv").exists()
    assert (out_dir / "kappa.json").exists()


def test_metrics_default_out_inside_bundle(fig10_bundle, capsys):
    assert main(["metrics", "--project", str(fig10_bundle)]) == 0
    assert (fig10_bundle / "exports" / "round-1" / "cdm.csv").exists()
    # the exports directory does not break reloading
    load_project(fig10_bundle)


def test_metrics_double_round_emits_certainty(double_round, codebook_abcd, tmp_path, capsys):
    units = tuple(Unit(id=u, text=f"t {u}") for u in double_round.units)
    project = Project(name="p", codebook=codebook_abcd, units=units,
                      coders=double_round.coders, rounds=(double_round,))
    bundle = tmp_path / "bundle"
    save_project(project, bundle)
    out_dir = tmp_path / "out"
    assert main(["metrics", "--project", str(bundle), "--out", str(out_dir)]) == 0
    assert (out_dir / "certainty.csv").exists()
    assert (out_dir / "ps_matrix.csv").exists()


def test_metrics_single_coder_round_refuses_kappa_but_exports(tmp_path, capsys):
    from oracles import make_codebook

    units = (Unit(id="u1", text="one"), Unit(id="u2", text="two"))
    rnd = Round(index=1, mode=SINGLE, units=("u1", "u2"), coders=("solo",),
                assignments=(Assignment("u1", "solo", "A"), Assignment("u2", "solo", "B")))
    project = Project(name="solo", codebook=make_codebook(("A", "B")), units=units,
                      coders=("solo",), rounds=(rnd,))
    bundle = tmp_path / "bundle"
    save_project(project, bundle)
    out_dir = tmp_path / "out"
    assert main(["metrics", "--project", str(bundle), "--out", str(out_dir)]) == 0
    out = capsys.readouterr().out
    assert "kappa unavailable" in out and "2 coders" in out
    assert (out_dir / "connection_degrees.csv").exists()
    assert (out_dir / "cdm.csv").exists()


def test_metrics_unknown_round(fig10_bundle, capsys):
    assert main(["metrics", "--project", str(fig10_bundle), "--round", "99"]) == 2
    assert "no such round: 99" in capsys.readouterr().err


def test_metrics_json_format_reloads(fig10_bundle, tmp_path):
    out_dir = tmp_path / "out"
    assert main([
        "metrics", "--project", str(fig10_bundle), "--format", "json", "--out", str(out_dir)
    ]) == 0
    snapshot = load_metrics_export(out_dir)
    assert abs(snapshot.kappa.kappa - 0.3022) < 5e-4


def test_metrics_blocks_on_unknown_code(fig10_project, tmp_path, capsys):
    bundle = tmp_path / "bundle"
    import dataclasses

    rnd = fig10_project.round(1)
    bad = dataclasses.replace(
        rnd,
        assignments=tuple(
            dataclasses.replace(a, primary="ZZ") if a.unit_id == "u1" and a.coder_id == "coder1" else a
            for a in rnd.assignments
        ),
    )
    save_project(dataclasses.replace(fig10_project, rounds=(bad,)), bundle)
    assert main(["metrics", "--project", str(bundle)]) == 1
    assert "unknown-code" in capsys.readouterr().err


# --- diff --------------------------------------------------------------------------


def two_round_bundle(fig10_project, tmp_path, second_grid) -> Path:
    from oracles import complete_round

    rnd2 = complete_round(second_grid, FIG10_CODERS, index=2)
    project = fig10_project.with_round(rnd2)
    bundle = tmp_path / "bundle"
    save_project(project, bundle)
    return bundle


def test_diff_identical_rounds(fig10_project, tmp_path, capsys):
    bundle = two_round_bundle(fig10_project, tmp_path, FIG10_GRID)
    assert main(["diff", "1", "2", "--project", str(bundle)]) == 0
    out = capsys.readouterr().out
    assert "Δkappa = 0.000, 0 pairs changed" in out


def test_diff_planted_improvement(fig10_project, tmp_path, capsys):
    resolved = {"u1": "CCCCC", "u2": "AAAAA", "u3": "AAAAA", "u4": "CCCCC", "u5": "BBBBB"}
    bundle = two_round_bundle(fig10_project, tmp_path, resolved)
    out_file = tmp_path / "delta" / "round_delta.json"
    assert main(["diff", "1", "2", "--project", str(bundle), "--out", str(out_file)]) == 0
    out = capsys.readouterr().out
    assert "newly zero: A/B, A/C, B/C" in out
    delta = json.loads(out_file.read_text())
    assert delta["kappa_delta"] > 0.69
    assert ["A", "B"] in delta["newly_zero_pairs"]


def test_diff_rejects_renamed_code(fig10_project, tmp_path, capsys):
    renamed = {u: row.replace("A", "E") for u, row in FIG10_GRID.items()}
    from oracles import complete_round

    rnd2 = complete_round(renamed, FIG10_CODERS, index=2)
    project = fig10_project.with_round(rnd2)
    bundle = tmp_path / "bundle"
    save_project(project, bundle)
    assert main(["diff", "1", "2", "--project", str(bundle)]) == 1
    assert "E" in capsys.readouterr().err


def test_diff_unknown_round(fig10_bundle, capsys):
    assert main(["diff", "1", "9", "--project", str(fig10_bundle)]) == 2


# --- aggregate -----------------------------------------------------------------------


def test_aggregate_appends_round(fig10_bundle, tmp_path, capsys):
    sheets = []
    for coder in ("ava", "robert"):
        path = tmp_path / f"{coder}.csv"
        write_coder_sheet(
            coder,
            tuple(Assignment(u, coder, "A", "A") for u in FIG10_GRID),
            path,
        )
        sheets.append(str(path))
    assert main(["aggregate", *sheets, "--project", str(fig10_bundle), "--note", "recheck"]) == 0
    out = capsys.readouterr().out
    assert "aggregated round 2 (mode=double, 2 coders)" in out
    project = load_project(fig10_bundle)
    assert project.round(2).note == "recheck"
    assert project.round(2).mode == "double"
    assert "ava" in project.coders


def test_aggregate_flags_missing_cells(fig10_bundle, tmp_path, capsys):
    path = tmp_path / "partial.csv"
    write_coder_sheet("ava", (Assignment("u1", "ava", "A"),), path)
    assert main(["aggregate", str(path), "--project", str(fig10_bundle)]) == 1
    out = capsys.readouterr().out
    assert "missing-assignment" in out


def test_aggregate_rejects_unknown_unit(fig10_bundle, tmp_path, capsys):
    path = tmp_path / "bad.csv"
    write_coder_sheet("ava", (Assignment("u99", "ava", "A"),), path)
    assert main(["aggregate", str(path), "--project", str(fig10_bundle)]) == 1
    assert "unknown unit id 'u99'" in capsys.readouterr().err


# --- config precedence ------------------------------------------------------------------


def test_env_var_supplies_default_project(fig10_bundle, monkeypatch, capsys):
    monkeypatch.setenv("CODEWIZARD_PROJECT", str(fig10_bundle))
    assert main(["validate"]) == 0
    assert "0 violations" in capsys.readouterr().out


def test_config_file_overrides_env(fig10_bundle, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("CODEWIZARD_PROJECT", str(tmp_path / "nope"))
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"project": str(fig10_bundle)}))
    assert main(["validate", "--config", str(config)]) == 0


def test_flag_overrides_config(fig10_bundle, tmp_path, capsys):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"project": str(tmp_path / "nope"), "format": "json"}))
    assert main(["validate", "--config", str(config), "--project", str(fig10_bundle)]) == 0
    json.loads(capsys.readouterr().out)  # format json came from the config file


def test_config_shade_thresholds_change_exports(fig10_bundle, tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"shade_thresholds": [0.05, 0.1]}))
    out_dir = tmp_path / "out"
    assert main([
        "metrics", "--project", str(fig10_bundle), "--config", str(config), "--out", str(out_dir)
    ]) == 0
    per_unit = (out_dir / "per_unit_agreement.csv").read_text()
    # u3 has p_i=0.3 which is dark under defaults but light under (0.05, 0.1)
    assert "u3,0.3,0.3,light,5," in per_unit


# --- serve (failure paths; the happy path is exercised in the service tests) -----------


def test_serve_refuses_invalid_bundle(fig10_project, tmp_path, capsys):
    bundle = tmp_path / "bundle"
    save_project(drop_cell(fig10_project, "u3", "coder2"), bundle)
    assert main(["serve", "--project", str(bundle)]) == 1
    err = capsys.readouterr().err
    assert "refusing to serve" in err and "missing-assignment" in err


def test_serve_reports_busy_port(fig10_bundle, capsys):
    blocker = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    blocker.bind(("127.0.0.1", 0))
    port = blocker.getsockname()[1]
    try:
        assert main(["serve", "--project", str(fig10_bundle), "--port", str(port)]) == 2
        assert "cannot bind" in capsys.readouterr().err
    finally:
        blocker.close()
