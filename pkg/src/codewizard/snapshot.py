"""Metric snapshots and their JSON wire format.

A :class:`MetricsSnapshot` bundles every metric for one (project revision,
round) pair. Its content is a pure function of that pair except for the
``computed_at`` timestamp, so snapshots from the batch exporter and the live
service can be compared field by field. The dict form produced here is the
single schema used by file exports and the HTTP API alike.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone

from . import metrics as m
from .model import DOUBLE, Project, Round

SCHEMA_METRICS = "codewizard.metrics@1"
SCHEMA_PROJECT = "codewizard.project@1"
SCHEMA_ROUND_DELTA = "codewizard.round_delta@1"


def display_round(value: float, places: int = 2) -> float:
    """Presentation rounding; metric values themselves stay full precision."""
    return round(value, places)


def display_percent(value: float) -> int:
    return round(value * 100)


@dataclass(frozen=True)
class PerUnitEntry:
    unit_id: str
    p_i: float | None
    shade: str | None
    n_coders: int
    error: str | None = None


@dataclass(frozen=True)
class MetricsSnapshot:
    revision: int
    round_index: int
    mode: str
    shade_thresholds: tuple[float, float]
    kappa: m.KappaResult | None
    kappa_error: str | None
    per_unit: tuple[PerUnitEntry, ...]
    certainty_team: m.CertaintyReport | None
    certainty_by_coder: dict[str, m.CertaintyReport]
    certainty_error: str | None
    ps_team: m.PrimarySecondaryMatrix | None
    ps_by_coder: dict[str, m.PrimarySecondaryMatrix]
    connection_degrees: m.ConnectionDegreeTable
    cdm: m.CorrelatedDisagreementMatrix
    computed_at: str


def compute_snapshot(
    project: Project,
    round_index: int,
    shade_thresholds: tuple[float, float] = m.DEFAULT_SHADE_THRESHOLDS,
    computed_at: str | None = None,
) -> MetricsSnapshot:
    """Compute every metric for one round of a structurally valid project.

    Metrics whose preconditions fail on this round (kappa with one coder,
    certainty on a single-coded round, agreement on an under-coded unit) are
    recorded as reasons instead of aborting the snapshot.
    """
    rnd = project.round(round_index)

    kappa = None
    kappa_error = None
    try:
        kappa = m.fleiss_kappa(rnd)
    except m.MetricsError as exc:
        kappa_error = str(exc)

    per_unit = []
    for unit_id in rnd.units:
        try:
            ua = m.per_unit_agreement(rnd, unit_id)
            per_unit.append(
                PerUnitEntry(
                    unit_id=unit_id,
                    p_i=ua.p_i,
                    shade=m.disagreement_shade(ua.p_i, shade_thresholds),
                    n_coders=ua.n_coders,
                )
            )
        except m.MetricsError as exc:
            n = len(rnd.unit_assignments(unit_id))
            per_unit.append(
                PerUnitEntry(unit_id=unit_id, p_i=None, shade=None, n_coders=n, error=str(exc))
            )

    certainty_team = None
    certainty_by_coder: dict[str, m.CertaintyReport] = {}
    ps_team = None
    ps_by_coder: dict[str, m.PrimarySecondaryMatrix] = {}
    certainty_error = None
    if rnd.mode == DOUBLE:
        try:
            certainty_team = m.certainty(rnd, project.codebook, m.TEAM)
            ps_team = m.primary_secondary_matrix(rnd, project.codebook, m.TEAM)
            for coder in rnd.coders:
                certainty_by_coder[coder] = m.certainty(rnd, project.codebook, coder)
                ps_by_coder[coder] = m.primary_secondary_matrix(rnd, project.codebook, coder)
        except m.MetricsError as exc:
            certainty_error = str(exc)
            certainty_team = None
            certainty_by_coder = {}
            ps_team = None
            ps_by_coder = {}
    else:
        certainty_error = "certainty requires double coding"

    degrees = m.connection_degrees(rnd, project.codebook)
    cdm = m.correlated_disagreement(degrees)

    return MetricsSnapshot(
        revision=project.revision,
        round_index=round_index,
        mode=rnd.mode,
        shade_thresholds=tuple(shade_thresholds),
        kappa=kappa,
        kappa_error=kappa_error,
        per_unit=tuple(per_unit),
        certainty_team=certainty_team,
        certainty_by_coder=certainty_by_coder,
        certainty_error=certainty_error,
        ps_team=ps_team,
        ps_by_coder=ps_by_coder,
        connection_degrees=degrees,
        cdm=cdm,
        computed_at=computed_at or datetime.now(timezone.utc).isoformat(),
    )


# --- dict (JSON) encoding -------------------------------------------------


def _kappa_dict(snapshot: MetricsSnapshot) -> dict:
    if snapshot.kappa is None:
        return {"error": snapshot.kappa_error}
    k = snapshot.kappa
    return {
        "value": k.kappa,
        "display": display_round(k.kappa),
        "p_bar": k.p_bar,
        "p_e": k.p_e,
        "n_coders": k.n_coders,
        "n_units_included": k.n_units_included,
        "excluded_units": list(k.excluded_units),
    }


def _certainty_dict(report: m.CertaintyReport) -> dict:
    per_code = {}
    for code, entry in report.per_code.items():
        per_code[code] = {
            "certainty": entry.certainty,
            "display": None if entry.certainty is None else display_round(entry.certainty),
            "n_primary_uses": entry.n_primary_uses,
        }
    return {"scope": report.scope, "per_code": per_code}


def _ps_dict(matrix: m.PrimarySecondaryMatrix) -> dict:
    return {
        "scope": matrix.scope,
        "codes": list(matrix.codes),
        "counts": [list(row) for row in matrix.counts],
        "row_counts": list(matrix.row_counts),
        "cells": [list(row) for row in matrix.cells],
        "cells_pct": [
            [None if c is None else display_percent(c) for c in row] for row in matrix.cells
        ],
    }


def _degrees_dict(table: m.ConnectionDegreeTable, unit_order: tuple[str, ...]) -> dict:
    pairs = [list(p) for p in table.pairs]
    return {
        "codes": list(table.codes),
        "pairs": pairs,
        "per_unit": [
            {"unit_id": u, "degrees": [table.per_unit[u][p] for p in table.pairs]}
            for u in unit_order
        ],
        "sums": [table.sums[p] for p in table.pairs],
    }


def _cdm_dict(cdm: m.CorrelatedDisagreementMatrix) -> dict:
    mixed = [(x, y) for x, y in _mixed_pairs(cdm.codes)]
    return {
        "codes": list(cdm.codes),
        "self_sums": list(cdm.self_sums),
        "cells": [
            {"pair": [x, y], "r": cdm.cells[(x, y)], "display": display_round(cdm.cells[(x, y)])}
            for x, y in mixed
        ],
    }


def _mixed_pairs(codes: tuple[str, ...]):
    for i in range(len(codes)):
        for j in range(i + 1, len(codes)):
            yield codes[i], codes[j]


def snapshot_to_dict(snapshot: MetricsSnapshot) -> dict:
    per_unit = []
    for entry in snapshot.per_unit:
        d = {
            "unit_id": entry.unit_id,
            "p_i": entry.p_i,
            "display": None if entry.p_i is None else display_round(entry.p_i),
            "shade": entry.shade,
            "n_coders": entry.n_coders,
        }
        if entry.error is not None:
            d["error"] = entry.error
        per_unit.append(d)

    if snapshot.certainty_team is None:
        certainty: dict = {"error": snapshot.certainty_error}
        ps_matrix: dict = {"error": snapshot.certainty_error}
    else:
        certainty = {
            "team": _certainty_dict(snapshot.certainty_team),
            "coders": {
                coder: _certainty_dict(report)
                for coder, report in snapshot.certainty_by_coder.items()
            },
        }
        ps_matrix = {
            "team": _ps_dict(snapshot.ps_team),
            "coders": {
                coder: _ps_dict(matrix) for coder, matrix in snapshot.ps_by_coder.items()
            },
        }

    unit_order = tuple(e.unit_id for e in snapshot.per_unit)
    return {
        "schema": SCHEMA_METRICS,
        "revision": snapshot.revision,
        "round": snapshot.round_index,
        "mode": snapshot.mode,
        "shade_thresholds": list(snapshot.shade_thresholds),
        "computed_at": snapshot.computed_at,
        "kappa": _kappa_dict(snapshot),
        "per_unit": per_unit,
        "certainty": certainty,
        "ps_matrix": ps_matrix,
        "connection_degrees": _degrees_dict(snapshot.connection_degrees, unit_order),
        "cdm": _cdm_dict(snapshot.cdm),
    }


# --- dict (JSON) decoding -------------------------------------------------


def _certainty_from_dict(d: dict) -> m.CertaintyReport:
    per_code = {
        code: m.CodeCertainty(certainty=entry["certainty"], n_primary_uses=entry["n_primary_uses"])
        for code, entry in d["per_code"].items()
    }
    return m.CertaintyReport(scope=d["scope"], per_code=per_code)


def _ps_from_dict(d: dict) -> m.PrimarySecondaryMatrix:
    return m.PrimarySecondaryMatrix(
        scope=d["scope"],
        codes=tuple(d["codes"]),
        counts=tuple(tuple(row) for row in d["counts"]),
        row_counts=tuple(d["row_counts"]),
        cells=tuple(tuple(row) for row in d["cells"]),
    )


def snapshot_from_dict(d: dict) -> MetricsSnapshot:
    """Rebuild a snapshot from its dict form; inverse of :func:`snapshot_to_dict`."""
    if d.get("schema") != SCHEMA_METRICS:
        raise ValueError(f"unsupported metrics schema: {d.get('schema')!r}")
    kd = d["kappa"]
    if "error" in kd:
        kappa, kappa_error = None, kd["error"]
    else:
        kappa = m.KappaResult(
            kappa=kd["value"],
            p_bar=kd["p_bar"],
            p_e=kd["p_e"],
            n_coders=kd["n_coders"],
            n_units_included=kd["n_units_included"],
            excluded_units=tuple(kd["excluded_units"]),
        )
        kappa_error = None

    per_unit = tuple(
        PerUnitEntry(
            unit_id=e["unit_id"],
            p_i=e["p_i"],
            shade=e["shade"],
            n_coders=e["n_coders"],
            error=e.get("error"),
        )
        for e in d["per_unit"]
    )

    cd = d["certainty"]
    pd = d["ps_matrix"]
    if "error" in cd:
        certainty_team = None
        certainty_by_coder: dict[str, m.CertaintyReport] = {}
        certainty_error = cd["error"]
        ps_team = None
        ps_by_coder: dict[str, m.PrimarySecondaryMatrix] = {}
    else:
        certainty_team = _certainty_from_dict(cd["team"])
        certainty_by_coder = {c: _certainty_from_dict(v) for c, v in cd["coders"].items()}
        certainty_error = None
        ps_team = _ps_from_dict(pd["team"])
        ps_by_coder = {c: _ps_from_dict(v) for c, v in pd["coders"].items()}

    gd = d["connection_degrees"]
    pairs = tuple((p[0], p[1]) for p in gd["pairs"])
    degrees = m.ConnectionDegreeTable(
        codes=tuple(gd["codes"]),
        pairs=pairs,
        per_unit={
            row["unit_id"]: dict(zip(pairs, row["degrees"])) for row in gd["per_unit"]
        },
        sums=dict(zip(pairs, gd["sums"])),
    )

    cdm_d = d["cdm"]
    cdm = m.CorrelatedDisagreementMatrix(
        codes=tuple(cdm_d["codes"]),
        self_sums=tuple(cdm_d["self_sums"]),
        cells={(c["pair"][0], c["pair"][1]): c["r"] for c in cdm_d["cells"]},
    )

    return MetricsSnapshot(
        revision=d["revision"],
        round_index=d["round"],
        mode=d["mode"],
        shade_thresholds=tuple(d["shade_thresholds"]),
        kappa=kappa,
        kappa_error=kappa_error,
        per_unit=per_unit,
        certainty_team=certainty_team,
        certainty_by_coder=certainty_by_coder,
        certainty_error=certainty_error,
        ps_team=ps_team,
        ps_by_coder=ps_by_coder,
        connection_degrees=degrees,
        cdm=cdm,
        computed_at=d["computed_at"],
    )


# --- project and delta wire forms ------------------------------------------


def project_to_dict(project: Project) -> dict:
    return {
        "schema": SCHEMA_PROJECT,
        "name": project.name,
        "revision": project.revision,
        "codebook": {
            "instructions": project.codebook.instructions,
            "codes": [
                {"id": c.id, "label": c.label, "definition": c.definition, "color": c.color}
                for c in project.codebook.codes
            ],
        },
        "units": [
            {"id": u.id, "text": u.text, "timestamp": u.timestamp, "source_link": u.source_link}
            for u in project.units
        ],
        "coders": list(project.coders),
        "rounds": [_round_to_dict(r) for r in project.rounds],
    }


def _round_to_dict(rnd: Round) -> dict:
    return {
        "index": rnd.index,
        "mode": rnd.mode,
        "note": rnd.note,
        "coders": list(rnd.coders),
        "assignments": [
            {
                "unit_id": a.unit_id,
                "coder_id": a.coder_id,
                "primary": a.primary,
                "secondary": a.secondary,
            }
            for a in rnd.assignments
        ],
    }


def delta_to_dict(delta: m.RoundDelta, round_before: int, round_after: int) -> dict:
    return {
        "schema": SCHEMA_ROUND_DELTA,
        "round_before": round_before,
        "round_after": round_after,
        "kappa_before": delta.kappa_before,
        "kappa_after": delta.kappa_after,
        "kappa_delta": delta.kappa_delta,
        "cdm_deltas": [
            {"pair": [x, y], "delta": value} for (x, y), value in delta.cdm_deltas.items()
        ],
        "newly_zero_pairs": [list(p) for p in delta.newly_zero_pairs],
        "newly_nonzero_pairs": [list(p) for p in delta.newly_nonzero_pairs],
    }
