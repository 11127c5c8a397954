"""On-disk formats: codebook/units/coder-sheet CSV files, project bundles, exports.

All tabular files are RFC-4180-style CSV, UTF-8, header row mandatory, written
canonically (``\\n`` line endings, minimal quoting) so that load followed by
save is byte-stable. Parse errors always carry the offending physical line
number. A project bundle is a directory::

    manifest.json          name, revision, coder roster, round modes
    codebook.csv           id,label,definition,color
    units.csv              unit_id,timestamp,text,source_link
    rounds/round-<n>/      one sheet per coder: unit_id,primary,secondary

Saves are atomic per file (write-then-rename) and take an exclusive advisory
lock; loads take a shared one, so concurrent loads are fine but never overlap
a save.
"""

from __future__ import annotations

import csv
import fcntl
import io
import json
import os
import re
import shutil
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Iterable, Sequence

from .model import (
    Assignment,
    Code,
    Codebook,
    Project,
    Round,
    Unit,
)
from .snapshot import MetricsSnapshot, snapshot_from_dict, snapshot_to_dict

BUNDLE_SCHEMA = "codewizard.bundle@1"
EXPORT_SCHEMA = "codewizard.metrics_export@1"

# Fixed high-contrast palette; codebooks beyond 12 codes must declare colors.
PALETTE = (
    "#1F77B4",
    "#FF7F0E",
    "#2CA02C",
    "#D62728",
    "#9467BD",
    "#8C564B",
    "#E377C2",
    "#7F7F7F",
    "#BCBD22",
    "#17BECF",
    "#000080",
    "#FFD700",
)

_CODER_HEADER = re.compile(r"^#\s*coder:\s*(.+?)\s*$")
_HEX = re.compile(r"^#?([0-9A-Fa-f]{6})$")


class ParseError(ValueError):
    """A malformed file, pointing at the physical line that broke."""

    def __init__(self, path: Path | str, line: int, message: str):
        self.path = Path(path)
        self.line = line
        self.message = message
        super().__init__(f"{self.path}:{line}: {message}")


class BundleError(ValueError):
    """A project bundle that cannot be loaded or saved."""


# --- locking and atomic writes ---------------------------------------------


@contextmanager
def _bundle_lock(directory: Path, exclusive: bool):
    directory.mkdir(parents=True, exist_ok=True)
    lock_path = directory / ".lock"
    with open(lock_path, "a+") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX if exclusive else fcntl.LOCK_SH)
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(rows: Iterable[Sequence[str]]) -> str:
    # CRLF row terminators per RFC 4180; also makes the writer quote bare \r or \n
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerows(rows)
    return buf.getvalue()


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


# --- codebook ----------------------------------------------------------------


def normalize_color(raw: str) -> str:
    m = _HEX.match(raw.strip())
    if not m:
        raise ValueError(f"{raw!r} is not a 24-bit RGB hex color")
    return "#" + m.group(1).upper()


def parse_codebook(path: Path | str) -> Codebook:
    """Read a codebook CSV; assign palette colors where the file declares none."""
    path = Path(path)
    rows = _read_csv_rows(path)
    if not rows:
        raise ParseError(path, 1, "no codes")
    (header, header_line), data = rows[0], rows[1:]
    if header[:3] != ["id", "label", "definition"] or (
        len(header) > 3 and header[3:] != ["color"]
    ) or len(header) > 4:
        raise ParseError(path, header_line, f"unknown codebook header: {','.join(header)}")
    has_color = len(header) == 4
    if not data:
        raise ParseError(path, header_line, "no codes")

    seen: dict[str, int] = {}
    taken_colors: set[str] = set()
    parsed: list[tuple[list[str], int]] = []
    for row, line in data:
        if len(row) != len(header):
            raise ParseError(path, line, f"expected {len(header)} fields, got {len(row)}")
        code_id = row[0]
        if not code_id:
            raise ParseError(path, line, "empty code id")
        if code_id in seen:
            raise ParseError(
                path, line, f"duplicate code id {code_id!r} (first declared at line {seen[code_id]})"
            )
        seen[code_id] = line
        if has_color and row[3].strip():
            try:
                color = normalize_color(row[3])
            except ValueError as exc:
                raise ParseError(path, line, str(exc)) from exc
            taken_colors.add(color)
        parsed.append((row, line))

    codes: list[Code] = []
    palette_iter = (c for c in PALETTE if c not in taken_colors)
    for row, line in parsed:
        if has_color and row[3].strip():
            color = normalize_color(row[3])
        else:
            color = next(palette_iter, None)
            if color is None:
                raise ParseError(
                    path,
                    line,
                    f"palette has only {len(PALETTE)} colors; declare explicit colors "
                    "for codebooks this large",
                )
        codes.append(Code(id=row[0], label=row[1], definition=row[2], color=color))
    return Codebook(codes=tuple(codes))


def write_codebook(codebook: Codebook, path: Path | str) -> None:
    rows = [["id", "label", "definition", "color"]]
    rows += [[c.id, c.label, c.definition, c.color] for c in codebook.codes]
    _atomic_write_text(Path(path), _csv_text(rows))


# --- units -------------------------------------------------------------------


def parse_units(path: Path | str) -> tuple[Unit, ...]:
    path = Path(path)
    rows = _read_csv_rows(path)
    if not rows:
        raise ParseError(path, 1, "missing header row")
    (header, header_line), data = rows[0], rows[1:]
    if header and header[0] != "unit_id":
        raise ParseError(path, header_line, "missing required column: unit_id")
    if header[:3] != ["unit_id", "timestamp", "text"] or (
        len(header) > 3 and header[3:] != ["source_link"]
    ) or len(header) > 4:
        raise ParseError(path, header_line, f"unknown units header: {','.join(header)}")
    units: list[Unit] = []
    seen: dict[str, int] = {}
    for row, line in data:
        if len(row) != len(header):
            raise ParseError(path, line, f"expected {len(header)} fields, got {len(row)}")
        unit_id = row[0]
        if not unit_id:
            raise ParseError(path, line, "empty unit id")
        if unit_id in seen:
            raise ParseError(
                path, line, f"duplicate unit id {unit_id!r} (first declared at line {seen[unit_id]})"
            )
        seen[unit_id] = line
        if not row[2]:
            raise ParseError(path, line, f"unit {unit_id!r} has empty text")
        units.append(
            Unit(
                id=unit_id,
                timestamp=row[1],
                text=row[2],
                source_link=row[3] if len(row) > 3 else "",
            )
        )
    return tuple(units)


def write_units(units: Sequence[Unit], path: Path | str) -> None:
    rows = [["unit_id", "timestamp", "text", "source_link"]]
    rows += [[u.id, u.timestamp, u.text, u.source_link] for u in units]
    _atomic_write_text(Path(path), _csv_text(rows))


# --- coder sheets --------------------------------------------------------------


def parse_coder_sheet(path: Path | str) -> tuple[str, tuple[Assignment, ...]]:
    """Read one coder's sheet; rows with a blank primary are missing cells.

    The coder's identity comes from the mandatory ``# coder: <id>`` first
    line, never from the filename.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines(keepends=True)
    if not lines:
        raise ParseError(path, 1, "missing '# coder:' header line")
    m = _CODER_HEADER.match(lines[0].rstrip("\r\n"))
    if not m:
        raise ParseError(path, 1, "missing '# coder:' header line")
    coder_id = m.group(1)

    rows = _read_csv_rows(path, body="".join(lines[1:]), line_offset=1)
    if not rows:
        raise ParseError(path, 2, "missing header row")
    (header, header_line), data = rows[0], rows[1:]
    if header[:2] != ["unit_id", "primary"] or (
        len(header) > 2 and header[2:] != ["secondary"]
    ) or len(header) > 3:
        raise ParseError(path, header_line, f"unknown coder sheet header: {','.join(header)}")
    assignments: list[Assignment] = []
    seen: dict[str, int] = {}
    for row, line in data:
        if len(row) != len(header):
            raise ParseError(path, line, f"expected {len(header)} fields, got {len(row)}")
        unit_id = row[0]
        if not unit_id:
            raise ParseError(path, line, "empty unit id")
        if unit_id in seen:
            raise ParseError(
                path, line, f"duplicate unit id {unit_id!r} (first declared at line {seen[unit_id]})"
            )
        seen[unit_id] = line
        primary = row[1].strip()
        if not primary:
            continue  # blank primary: explicitly missing cell, caught by validation
        secondary = row[2].strip() if len(row) > 2 and row[2].strip() else None
        assignments.append(
            Assignment(unit_id=unit_id, coder_id=coder_id, primary=primary, secondary=secondary)
        )
    return coder_id, tuple(assignments)


def write_coder_sheet(
    coder_id: str, assignments: Sequence[Assignment], path: Path | str
) -> None:
    if "\n" in coder_id or "\r" in coder_id:
        raise ValueError(f"coder id must be single-line, got {coder_id!r}")
    rows = [["unit_id", "primary", "secondary"]]
    rows += [[a.unit_id, a.primary, a.secondary or ""] for a in assignments]
    _atomic_write_text(Path(path), f"# coder: {coder_id}\r\n" + _csv_text(rows))


def _read_csv_rows(
    path: Path, body: str | None = None, line_offset: int = 0
) -> list[tuple[list[str], int]]:
    """All CSV rows with the physical line each row starts on."""
    if body is None:
        # newline="" keeps quoted line breaks intact per the csv module contract
        with open(path, "r", encoding="utf-8", newline="") as fh:
            body = fh.read()
    reader = csv.reader(io.StringIO(body))
    rows: list[tuple[list[str], int]] = []
    start_line = 1
    for row in reader:
        if row:
            rows.append((row, start_line + line_offset))
        start_line = reader.line_num + 1
    return rows


# --- project bundles ------------------------------------------------------------


def _manifest_dict(project: Project) -> dict:
    return {
        "schema": BUNDLE_SCHEMA,
        "name": project.name,
        "revision": project.revision,
        "coders": list(project.coders),
        "codebook_instructions": project.codebook.instructions,
        "rounds": [
            {"index": r.index, "mode": r.mode, "note": r.note, "coders": list(r.coders)}
            for r in project.rounds
        ],
    }


def _sheet_filename(coder_id: str, used: set[str]) -> str:
    base = re.sub(r"[^A-Za-z0-9._-]", "_", coder_id).strip(".") or "coder"
    name = f"{base}.csv"
    n = 2
    while name in used:
        name = f"{base}-{n}.csv"
        n += 1
    used.add(name)
    return name


def save_project(project: Project, directory: Path | str) -> None:
    """Write the whole bundle canonically; atomic per file, exclusive lock."""
    directory = Path(directory)
    with _bundle_lock(directory, exclusive=True):
        _atomic_write_text(
            directory / "manifest.json",
            json.dumps(_manifest_dict(project), indent=2, sort_keys=True) + "\n",
        )
        write_codebook(project.codebook, directory / "codebook.csv")
        write_units(project.units, directory / "units.csv")

        rounds_dir = directory / "rounds"
        expected_dirs = set()
        for rnd in project.rounds:
            round_dir = rounds_dir / f"round-{rnd.index}"
            expected_dirs.add(round_dir.name)
            round_dir.mkdir(parents=True, exist_ok=True)
            by_coder: dict[str, list[Assignment]] = {c: [] for c in rnd.coders}
            for a in rnd.assignments:
                by_coder.setdefault(a.coder_id, []).append(a)
            used: set[str] = set()
            expected_files = set()
            for coder in rnd.coders:
                name = _sheet_filename(coder, used)
                expected_files.add(name)
                write_coder_sheet(coder, by_coder[coder], round_dir / name)
            for stale in round_dir.glob("*.csv"):
                if stale.name not in expected_files:
                    stale.unlink()
        if rounds_dir.exists():
            for entry in rounds_dir.iterdir():
                if entry.is_dir() and entry.name not in expected_dirs:
                    shutil.rmtree(entry)


def load_project(directory: Path | str) -> Project:
    """Load a bundle; shared lock, so loads never observe a half-written save."""
    directory = Path(directory)
    if not directory.is_dir():
        raise BundleError(f"not a project bundle: {directory}")
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise BundleError(f"missing manifest.json in {directory}")
    with _bundle_lock(directory, exclusive=False):
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise BundleError(f"manifest.json is not valid JSON: {exc}") from exc
        schema = manifest.get("schema")
        if schema is None:
            raise BundleError("unversioned bundle: manifest has no schema field")
        if schema != BUNDLE_SCHEMA:
            m = re.match(r"^codewizard\.bundle@(\d+)$", str(schema))
            if m and int(m.group(1)) > 1:
                raise BundleError(f"bundle version {schema} is newer than supported ({BUNDLE_SCHEMA})")
            raise BundleError(f"unknown bundle schema {schema!r}")

        codebook = parse_codebook(directory / "codebook.csv")
        codebook = Codebook(
            codes=codebook.codes, instructions=manifest.get("codebook_instructions", "")
        )
        units = parse_units(directory / "units.csv")
        unit_ids = tuple(u.id for u in units)

        rounds: list[Round] = []
        rounds_dir = directory / "rounds"
        declared_dirs = set()
        for entry in manifest.get("rounds", []):
            index = entry["index"]
            round_dir = rounds_dir / f"round-{index}"
            declared_dirs.add(round_dir.name)
            if not round_dir.is_dir():
                raise BundleError(f"manifest lists round {index} but {round_dir} is missing")
            sheets: dict[str, tuple[Assignment, ...]] = {}
            for sheet_path in sorted(round_dir.glob("*.csv")):
                coder_id, assignments = parse_coder_sheet(sheet_path)
                if coder_id in sheets:
                    raise BundleError(
                        f"round {index}: two sheets claim coder id {coder_id!r}"
                    )
                sheets[coder_id] = assignments
            declared = list(entry["coders"])
            if set(sheets) != set(declared):
                raise BundleError(
                    f"round {index}: manifest coders {sorted(declared)} do not match "
                    f"sheets found {sorted(sheets)}"
                )
            order = {u: i for i, u in enumerate(unit_ids)}
            merged = [a for coder in declared for a in sheets[coder]]
            merged.sort(
                key=lambda a: (order.get(a.unit_id, len(order)), declared.index(a.coder_id))
            )
            rounds.append(
                Round(
                    index=index,
                    mode=entry["mode"],
                    units=unit_ids,
                    coders=tuple(declared),
                    assignments=tuple(merged),
                    note=entry.get("note", ""),
                )
            )
        if rounds_dir.is_dir():
            for entry in rounds_dir.iterdir():
                if entry.is_dir() and entry.name not in declared_dirs:
                    raise BundleError(f"round directory {entry.name} is not in the manifest")

        return Project(
            name=manifest.get("name", directory.name),
            codebook=codebook,
            units=units,
            coders=tuple(manifest.get("coders", [])),
            rounds=tuple(rounds),
            revision=int(manifest["revision"]),
        )


# --- metric exports -------------------------------------------------------------


def export_metrics(
    snapshot: MetricsSnapshot, dest: Path | str, fmt: str = "csv"
) -> list[Path]:
    """Write one file per metric family plus an export manifest.

    ``fmt="csv"`` writes tabular families as CSV (kappa stays JSON);
    ``fmt="json"`` writes every family as JSON slices that
    :func:`load_metrics_export` can reassemble into an equal snapshot.
    Families undefined for the round (certainty on a single-coded round) are
    omitted and the manifest records why.
    """
    if fmt not in ("csv", "json"):
        raise ValueError(f"format must be 'csv' or 'json', got {fmt!r}")
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    d = snapshot_to_dict(snapshot)

    written: list[Path] = []
    omitted: dict[str, str] = {}

    def emit_json(name: str, family: str, data) -> None:
        path = dest / name
        payload = {"schema": EXPORT_SCHEMA, "family": family, "data": data}
        _atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
        written.append(path)

    def emit_csv(name: str, rows: list[Sequence]) -> None:
        path = dest / name
        _atomic_write_text(path, _csv_text([[_fmt(v) for v in row] for row in rows]))
        written.append(path)

    emit_json("kappa.json", "kappa", d["kappa"])

    single_mode = "error" in d["certainty"]
    if single_mode:
        reason = d["certainty"]["error"]
        omitted["certainty"] = reason
        omitted["ps_matrix"] = reason

    if fmt == "json":
        emit_json("per_unit_agreement.json", "per_unit", d["per_unit"])
        emit_json("connection_degrees.json", "connection_degrees", d["connection_degrees"])
        emit_json("cdm.json", "cdm", d["cdm"])
        if not single_mode:
            emit_json("certainty.json", "certainty", d["certainty"])
            emit_json("ps_matrix.json", "ps_matrix", d["ps_matrix"])
    else:
        rows: list[Sequence] = [["unit_id", "p_i", "p_i_display", "shade", "n_coders", "error"]]
        for e in d["per_unit"]:
            rows.append(
                [e["unit_id"], e["p_i"], e["display"], e["shade"], e["n_coders"], e.get("error")]
            )
        emit_csv("per_unit_agreement.csv", rows)

        cg = d["connection_degrees"]
        pair_names = [f"{x}:{y}" for x, y in cg["pairs"]]
        rows = [["unit_id", *pair_names]]
        for row in cg["per_unit"]:
            rows.append([row["unit_id"], *row["degrees"]])
        rows.append(["SUM", *cg["sums"]])
        emit_csv("connection_degrees.csv", rows)

        rows = [["x", "y", "r", "r_display"]]
        for cell in d["cdm"]["cells"]:
            rows.append([cell["pair"][0], cell["pair"][1], cell["r"], cell["display"]])
        emit_csv("cdm.csv", rows)

        if not single_mode:
            rows = [["scope", "code", "certainty", "certainty_display", "n_primary_uses"]]
            scopes = [("team", d["certainty"]["team"])] + sorted(d["certainty"]["coders"].items())
            for scope_name, report in scopes:
                for code, entry in report["per_code"].items():
                    rows.append(
                        [
                            scope_name,
                            code,
                            entry["certainty"],
                            entry["display"],
                            entry["n_primary_uses"],
                        ]
                    )
            emit_csv("certainty.csv", rows)

            codes = d["ps_matrix"]["team"]["codes"]
            header = ["scope", "primary", "n_primary", *codes, *[f"{c}_pct" for c in codes]]
            rows = [header]
            scopes = [("team", d["ps_matrix"]["team"])] + sorted(d["ps_matrix"]["coders"].items())
            for scope_name, matrix in scopes:
                for i, code in enumerate(codes):
                    rows.append(
                        [
                            scope_name,
                            code,
                            matrix["row_counts"][i],
                            *matrix["cells"][i],
                            *matrix["cells_pct"][i],
                        ]
                    )
            emit_csv("ps_matrix.csv", rows)

    manifest = {
        "schema": EXPORT_SCHEMA,
        "format": fmt,
        "revision": d["revision"],
        "round": d["round"],
        "mode": d["mode"],
        "shade_thresholds": d["shade_thresholds"],
        "computed_at": d["computed_at"],
        "files": sorted(p.name for p in written),
        "omitted": omitted,
    }
    manifest_path = dest / "export_manifest.json"
    _atomic_write_text(manifest_path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    written.append(manifest_path)
    return written


def load_metrics_export(directory: Path | str) -> MetricsSnapshot:
    """Reassemble a JSON-format export into the snapshot that produced it."""
    directory = Path(directory)
    manifest = json.loads((directory / "export_manifest.json").read_text(encoding="utf-8"))
    if manifest.get("schema") != EXPORT_SCHEMA:
        raise BundleError(f"unknown export schema {manifest.get('schema')!r}")
    if manifest.get("format") != "json":
        raise BundleError("only json-format exports can be reloaded")

    def family(name: str, filename: str) -> dict | list:
        path = directory / filename
        if path.exists():
            return json.loads(path.read_text(encoding="utf-8"))["data"]
        if name in manifest["omitted"]:
            return {"error": manifest["omitted"][name]}
        raise BundleError(f"export is missing family file {filename}")

    d = {
        "schema": "codewizard.metrics@1",
        "revision": manifest["revision"],
        "round": manifest["round"],
        "mode": manifest["mode"],
        "shade_thresholds": manifest["shade_thresholds"],
        "computed_at": manifest["computed_at"],
        "kappa": family("kappa", "kappa.json"),
        "per_unit": family("per_unit", "per_unit_agreement.json"),
        "certainty": family("certainty", "certainty.json"),
        "ps_matrix": family("ps_matrix", "ps_matrix.json"),
        "connection_degrees": family("connection_degrees", "connection_degrees.json"),
        "cdm": family("cdm", "cdm.json"),
    }
    return snapshot_from_dict(d)


def write_round_delta(delta_dict: dict, dest: Path | str) -> Path:
    dest = Path(dest)
    dest.parent.mkdir(parents=True, exist_ok=True)
    _atomic_write_text(dest, json.dumps(delta_dict, indent=2, sort_keys=True) + "\n")
    return dest
