"""Immutable domain model: codebook, units, coders, rounds, and structural validation.

All types are frozen values. Mutation helpers on :class:`Project` return a new
project with the revision bumped, so snapshots can be shared freely across
threads.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

DOUBLE = "double"
SINGLE = "single"
MODES = (DOUBLE, SINGLE)

EDIT_FIELDS = ("primary", "secondary")

_HEX_COLOR = re.compile(r"^#[0-9A-F]{6}$")


class ModelError(ValueError):
    """Structural rejection: bad aggregation input, unknown round, bad edit target."""


@dataclass(frozen=True)
class Violation:
    """One broken invariant, reported as data rather than raised."""

    rule: str
    message: str
    unit_id: str | None = None
    coder_id: str | None = None
    code_id: str | None = None

    def as_dict(self) -> dict:
        d = {"rule": self.rule, "message": self.message}
        for key in ("unit_id", "coder_id", "code_id"):
            value = getattr(self, key)
            if value is not None:
                d[key] = value
        return d


@dataclass(frozen=True)
class Code:
    id: str
    label: str
    definition: str = ""
    color: str = ""


@dataclass(frozen=True)
class Codebook:
    codes: tuple[Code, ...]
    instructions: str = ""

    def ids(self) -> tuple[str, ...]:
        return tuple(c.id for c in self.codes)

    def index(self, code_id: str) -> int:
        for i, c in enumerate(self.codes):
            if c.id == code_id:
                return i
        raise ModelError(f"code {code_id!r} not in codebook")

    def __contains__(self, code_id: str) -> bool:
        return any(c.id == code_id for c in self.codes)

    def get(self, code_id: str) -> Code:
        return self.codes[self.index(code_id)]


@dataclass(frozen=True)
class Unit:
    id: str
    text: str
    timestamp: str = ""
    source_link: str = ""


@dataclass(frozen=True)
class Assignment:
    unit_id: str
    coder_id: str
    primary: str
    secondary: str | None = None


@dataclass(frozen=True)
class Round:
    """One complete coding pass: a units x coders assignment matrix.

    ``units`` and ``coders`` fix the matrix axes; a (unit, coder) cell with no
    Assignment is explicitly missing. Unit order must match the project; coder
    order is submission order.
    """

    index: int
    mode: str
    units: tuple[str, ...]
    coders: tuple[str, ...]
    assignments: tuple[Assignment, ...]
    note: str = ""

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ModelError(f"round mode must be one of {MODES}, got {self.mode!r}")
        if self.index < 1:
            raise ModelError("round index is 1-based")

    def cell_map(self) -> dict[tuple[str, str], Assignment]:
        return {(a.unit_id, a.coder_id): a for a in self.assignments}

    def cell(self, unit_id: str, coder_id: str) -> Assignment | None:
        return self.cell_map().get((unit_id, coder_id))

    def unit_assignments(self, unit_id: str) -> tuple[Assignment, ...]:
        return tuple(a for a in self.assignments if a.unit_id == unit_id)


@dataclass(frozen=True)
class Project:
    name: str
    codebook: Codebook
    units: tuple[Unit, ...]
    coders: tuple[str, ...]
    rounds: tuple[Round, ...]
    revision: int = 1

    def __post_init__(self) -> None:
        if self.revision < 1:
            raise ModelError("revision starts at 1")

    def unit_ids(self) -> tuple[str, ...]:
        return tuple(u.id for u in self.units)

    def round(self, index: int) -> Round:
        for r in self.rounds:
            if r.index == index:
                return r
        raise ModelError(f"no such round: {index}")

    def has_round(self, index: int) -> bool:
        return any(r.index == index for r in self.rounds)

    def with_round(self, rnd: Round) -> Project:
        if self.has_round(rnd.index):
            raise ModelError(f"round {rnd.index} already exists")
        coders = self.coders + tuple(c for c in rnd.coders if c not in self.coders)
        return replace(
            self,
            coders=coders,
            rounds=self.rounds + (rnd,),
            revision=self.revision + 1,
        )

    def with_codebook(self, codebook: Codebook) -> Project:
        return replace(self, codebook=codebook, revision=self.revision + 1)

    def with_edit(
        self, round_index: int, coder_id: str, unit_id: str, field: str, code_id: str
    ) -> Project:
        """Rewrite one assignment cell; returns a new project at revision+1.

        The target assignment must exist: edits modify codes, they never create
        or delete cells.
        """
        if field not in EDIT_FIELDS:
            raise ModelError(f"field must be one of {EDIT_FIELDS}, got {field!r}")
        rnd = self.round(round_index)
        hit = rnd.cell(unit_id, coder_id)
        if hit is None:
            raise ModelError(f"no assignment for unit {unit_id!r} / coder {coder_id!r}")
        edited = replace(hit, **{field: code_id})
        assignments = tuple(edited if a is hit else a for a in rnd.assignments)
        new_round = replace(rnd, assignments=assignments)
        rounds = tuple(new_round if r.index == round_index else r for r in self.rounds)
        return replace(self, rounds=rounds, revision=self.revision + 1)


def validate_codebook(codebook: Codebook) -> list[Violation]:
    """Check codebook invariants; an empty list means the codebook is sound."""
    violations: list[Violation] = []
    if len(codebook.codes) < 2:
        violations.append(
            Violation("codebook-too-small", "codebook has fewer than 2 codes")
        )
    seen_ids: dict[str, int] = {}
    seen_colors: dict[str, str] = {}
    for code in codebook.codes:
        if not code.id:
            violations.append(Violation("empty-code-id", "code id is empty"))
        elif re.search(r"\s", code.id):
            violations.append(
                Violation(
                    "code-id-whitespace",
                    f"code id {code.id!r} contains whitespace",
                    code_id=code.id,
                )
            )
        if code.id in seen_ids:
            violations.append(
                Violation(
                    "duplicate-code-id",
                    f"code id {code.id!r} appears more than once",
                    code_id=code.id,
                )
            )
        seen_ids[code.id] = seen_ids.get(code.id, 0) + 1
        if not _HEX_COLOR.match(code.color or ""):
            violations.append(
                Violation(
                    "bad-color",
                    f"code {code.id!r} color {code.color!r} is not #RRGGBB",
                    code_id=code.id,
                )
            )
        elif code.color in seen_colors:
            violations.append(
                Violation(
                    "duplicate-color",
                    f"color {code.color} shared by codes "
                    f"{seen_colors[code.color]!r} and {code.id!r}",
                    code_id=code.id,
                )
            )
        else:
            seen_colors[code.color] = code.id
    return violations


def validate_round(rnd: Round, project: Project) -> list[Violation]:
    """Report unknown codes, missing cells, and secondary-mode mismatches."""
    violations: list[Violation] = []
    if rnd.units != project.unit_ids():
        violations.append(
            Violation(
                "unit-axis-mismatch",
                f"round {rnd.index} unit axis differs from project unit order",
            )
        )
    for coder in rnd.coders:
        if coder not in project.coders:
            violations.append(
                Violation(
                    "unknown-coder",
                    f"round {rnd.index} references coder {coder!r} not in roster",
                    coder_id=coder,
                )
            )
    cells = rnd.cell_map()
    for unit_id in rnd.units:
        for coder_id in rnd.coders:
            a = cells.get((unit_id, coder_id))
            if a is None:
                violations.append(
                    Violation(
                        "missing-assignment",
                        f"missing assignment unit {unit_id!r} / coder {coder_id!r}",
                        unit_id=unit_id,
                        coder_id=coder_id,
                    )
                )
                continue
            if a.primary not in project.codebook:
                violations.append(
                    Violation(
                        "unknown-code",
                        f"unit {unit_id!r} / coder {coder_id!r}: "
                        f"primary code {a.primary!r} not in codebook",
                        unit_id=unit_id,
                        coder_id=coder_id,
                        code_id=a.primary,
                    )
                )
            if a.secondary is not None and a.secondary not in project.codebook:
                violations.append(
                    Violation(
                        "unknown-code",
                        f"unit {unit_id!r} / coder {coder_id!r}: "
                        f"secondary code {a.secondary!r} not in codebook",
                        unit_id=unit_id,
                        coder_id=coder_id,
                        code_id=a.secondary,
                    )
                )
            if rnd.mode == DOUBLE and a.secondary is None:
                violations.append(
                    Violation(
                        "missing-secondary",
                        f"double-coding round {rnd.index}: unit {unit_id!r} / "
                        f"coder {coder_id!r} has no secondary code",
                        unit_id=unit_id,
                        coder_id=coder_id,
                    )
                )
            if rnd.mode == SINGLE and a.secondary is not None:
                violations.append(
                    Violation(
                        "unexpected-secondary",
                        f"single-coding round {rnd.index}: unit {unit_id!r} / "
                        f"coder {coder_id!r} carries a secondary code",
                        unit_id=unit_id,
                        coder_id=coder_id,
                    )
                )
    # Assignments outside the declared axes are structural corruption.
    for a in rnd.assignments:
        if a.unit_id not in rnd.units:
            violations.append(
                Violation(
                    "unknown-unit",
                    f"assignment references unit {a.unit_id!r} outside the round",
                    unit_id=a.unit_id,
                    coder_id=a.coder_id,
                )
            )
        if a.coder_id not in rnd.coders:
            violations.append(
                Violation(
                    "unknown-coder",
                    f"assignment references coder {a.coder_id!r} outside the round",
                    unit_id=a.unit_id,
                    coder_id=a.coder_id,
                )
            )
    return violations


def validate_project(project: Project) -> list[Violation]:
    violations = validate_codebook(project.codebook)
    seen_units: set[str] = set()
    for unit in project.units:
        if unit.id in seen_units:
            violations.append(
                Violation(
                    "duplicate-unit-id",
                    f"unit id {unit.id!r} appears more than once",
                    unit_id=unit.id,
                )
            )
        seen_units.add(unit.id)
        if not unit.text:
            violations.append(
                Violation("empty-unit-text", f"unit {unit.id!r} has empty text", unit_id=unit.id)
            )
    if len(set(project.coders)) != len(project.coders):
        violations.append(Violation("duplicate-coder-id", "coder roster has duplicates"))
    for rnd in project.rounds:
        violations.extend(validate_round(rnd, project))
    return violations


def aggregate(
    coder_sheets: Sequence[tuple[str, Iterable[Assignment]]],
    codebook: Codebook,
    units: Sequence[Unit],
    index: int = 1,
    note: str = "",
) -> Round:
    """Merge per-coder assignment sheets into one round.

    Units land in project order regardless of sheet row order; coders keep
    submission order. Mode is inferred: double iff every assignment carries a
    secondary code. Sheets naming an unknown unit, or two sheets claiming the
    same coder id, are rejected outright.
    """
    unit_order = {u.id: i for i, u in enumerate(units)}
    coders: list[str] = []
    by_cell: dict[tuple[str, str], Assignment] = {}
    for coder_id, assignments in coder_sheets:
        if coder_id in coders:
            raise ModelError(f"two sheets claim coder id {coder_id!r}")
        coders.append(coder_id)
        for a in assignments:
            if a.unit_id not in unit_order:
                raise ModelError(f"sheet for {coder_id!r} references unknown unit id {a.unit_id!r}")
            key = (a.unit_id, coder_id)
            if key in by_cell:
                raise ModelError(
                    f"sheet for {coder_id!r} assigns unit {a.unit_id!r} more than once"
                )
            by_cell[key] = replace(a, coder_id=coder_id)
    ordered = tuple(
        by_cell[(unit.id, coder)]
        for unit in units
        for coder in coders
        if (unit.id, coder) in by_cell
    )
    mode = DOUBLE if ordered and all(a.secondary is not None for a in ordered) else SINGLE
    return Round(
        index=index,
        mode=mode,
        units=tuple(u.id for u in units),
        coders=tuple(coders),
        assignments=ordered,
        note=note,
    )
