"""Agreement, certainty, and code-overlap metrics over coding rounds.

Everything here is a pure function of an immutable :class:`~codewizard.model.Round`.
Reductions that must be invariant under relabeling or permutation (observed
agreement, chance agreement) use ``math.fsum``, which is exactly rounded and
therefore order-independent.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .model import DOUBLE, Codebook, Round

TEAM = "team"

DEFAULT_SHADE_THRESHOLDS = (0.34, 0.67)

SHADE_NONE = "none"
SHADE_LIGHT = "light"
SHADE_MEDIUM = "medium"
SHADE_DARK = "dark"


class MetricsError(ValueError):
    """A metric's precondition does not hold for the given round."""


@dataclass(frozen=True)
class UnitAgreement:
    """Pairwise agreement proportion for one unit.

    With n coders present and n_j of them choosing code j,
    p_i = sum_j n_j*(n_j-1) / (n*(n-1)): the fraction of coder pairs that
    agree. 1.0 iff everyone chose the same primary code.
    """

    unit_id: str
    p_i: float
    n_coders: int


@dataclass(frozen=True)
class KappaResult:
    """Chance-corrected multi-coder agreement over primary codes.

    kappa = (p_bar - p_e) / (1 - p_e) where p_bar is the mean per-unit
    pairwise agreement and p_e the sum of squared category proportions.
    Units with any missing primary assignment are excluded (and listed), so
    every included unit has the same number of ratings.
    """

    kappa: float
    p_bar: float
    p_e: float
    n_coders: int
    n_units_included: int
    excluded_units: tuple[str, ...]


@dataclass(frozen=True)
class CodeCertainty:
    certainty: float | None
    n_primary_uses: int


@dataclass(frozen=True)
class CertaintyReport:
    """Per-code certainty: how often a code's primary use repeats as secondary.

    certainty(c) = #(primary=c and secondary=c) / #(primary=c). A code never
    used as primary has no defined certainty (``None``), which is distinct
    from 0.
    """

    scope: str
    per_code: dict[str, CodeCertainty]


@dataclass(frozen=True)
class PrimarySecondaryMatrix:
    """Row-stochastic matrix of secondary-code choice given the primary code.

    ``cells[p][s]`` is the fraction of assignments with primary code p whose
    secondary was s; rows and columns follow codebook order. Rows with zero
    primary uses are undefined (``None`` cells). The matrix is not symmetric:
    which secondary a coder reaches for depends on the primary they chose.
    """

    scope: str
    codes: tuple[str, ...]
    counts: tuple[tuple[int, ...], ...]
    row_counts: tuple[int, ...]
    cells: tuple[tuple[float | None, ...], ...]

    def cell(self, primary: str, secondary: str) -> float | None:
        i = self.codes.index(primary)
        j = self.codes.index(secondary)
        return self.cells[i][j]

    def to_array(self) -> np.ndarray:
        """Cells as a float array with NaN for undefined rows."""
        return np.array(
            [[math.nan if c is None else c for c in row] for row in self.cells]
        )


@dataclass(frozen=True)
class ConnectionDegreeTable:
    """Per-unit and summed co-use counts for every unordered code pair.

    For a pair {X, Y} the per-unit degree is min(#X, #Y) over that unit's
    primary codes; the self-pair degree {X, X} is simply #X, so its sum equals
    the code's total primary-use count. ``pairs`` lists self-pairs in codebook
    order followed by mixed pairs.
    """

    codes: tuple[str, ...]
    pairs: tuple[tuple[str, str], ...]
    per_unit: dict[str, dict[tuple[str, str], int]]
    sums: dict[tuple[str, str], int]

    def sum_for(self, x: str, y: str) -> int:
        return self.sums[_ordered_pair(self.codes, x, y)]


@dataclass(frozen=True)
class CorrelatedDisagreementMatrix:
    """Normalized symmetric code-overlap matrix.

    r_XY = S_XY / sqrt(S_XX * S_YY): the pair's summed connection degree over
    the geometric mean of each code's total use. Values lie in [0, 1]; under
    perfect agreement every off-diagonal value is 0, and a high value flags
    two codes used interchangeably. Only the strict lower triangle is stored;
    the diagonal is identically 1 for used codes. ``self_sums`` keeps each
    code's total primary-use count for the diagonal rule.
    """

    codes: tuple[str, ...]
    self_sums: tuple[int, ...]
    cells: dict[tuple[str, str], float]

    def r(self, x: str, y: str) -> float:
        if x == y:
            if x not in self.codes:
                raise MetricsError(f"code {x!r} not in matrix")
            return 1.0 if self.self_sums[self.codes.index(x)] > 0 else 0.0
        return self.cells[_ordered_pair(self.codes, x, y)]

    def to_array(self) -> np.ndarray:
        """Full symmetric array (diagonal included) for display or plotting."""
        k = len(self.codes)
        arr = np.zeros((k, k))
        for (x, y), value in self.cells.items():
            i, j = self.codes.index(x), self.codes.index(y)
            arr[i, j] = arr[j, i] = value
        for i in range(k):
            arr[i, i] = 1.0 if self.self_sums[i] > 0 else 0.0
        return arr


@dataclass(frozen=True)
class RoundDelta:
    """What changed between two rounds over the same codebook and units."""

    kappa_before: float | None
    kappa_after: float | None
    cdm_deltas: dict[tuple[str, str], float]
    newly_zero_pairs: tuple[tuple[str, str], ...]
    newly_nonzero_pairs: tuple[tuple[str, str], ...]

    @property
    def kappa_delta(self) -> float | None:
        if self.kappa_before is None or self.kappa_after is None:
            return None
        return self.kappa_after - self.kappa_before


def _ordered_pair(codes: tuple[str, ...], x: str, y: str) -> tuple[str, str]:
    order = {c: i for i, c in enumerate(codes)}
    if x not in order or y not in order:
        missing = x if x not in order else y
        raise MetricsError(f"code {missing!r} not in codebook")
    return (x, y) if order[x] <= order[y] else (y, x)


def _pair_list(codes: tuple[str, ...]) -> tuple[tuple[str, str], ...]:
    selfs = [(c, c) for c in codes]
    mixed = [
        (codes[i], codes[j])
        for i in range(len(codes))
        for j in range(i + 1, len(codes))
    ]
    return tuple(selfs + mixed)


def _primary_counts(rnd: Round, unit_id: str) -> Counter:
    return Counter(a.primary for a in rnd.assignments if a.unit_id == unit_id)


def per_unit_agreement(rnd: Round, unit_id: str) -> UnitAgreement:
    """Pairwise agreement proportion over the unit's present primary codes."""
    if unit_id not in rnd.units:
        raise MetricsError(f"unknown unit {unit_id!r}")
    counts = _primary_counts(rnd, unit_id)
    n = sum(counts.values())
    if n < 2:
        raise MetricsError(f"insufficient coders for unit {unit_id!r} (need >= 2, have {n})")
    agreeing = sum(c * (c - 1) for c in counts.values())
    return UnitAgreement(unit_id=unit_id, p_i=agreeing / (n * (n - 1)), n_coders=n)


def fleiss_kappa(rnd: Round) -> KappaResult:
    """Multi-coder chance-corrected agreement over primary codes.

    Units missing any coder's primary assignment are excluded and reported in
    ``excluded_units`` so the remaining table has a constant number of ratings
    per unit. Raises when fewer than two coders rated, when no unit is
    complete, or when a single category was used everywhere (chance agreement
    is 1 and the statistic is undefined).
    """
    n = len(rnd.coders)
    if n < 2:
        raise MetricsError(f"kappa requires at least 2 coders, round has {n}")
    cells = rnd.cell_map()
    included: list[str] = []
    excluded: list[str] = []
    for unit_id in rnd.units:
        if all((unit_id, coder) in cells for coder in rnd.coders):
            included.append(unit_id)
        else:
            excluded.append(unit_id)
    if not included:
        raise MetricsError("kappa undefined: no unit has a complete set of assignments")

    per_unit = [per_unit_agreement(rnd, u) for u in included]
    p_bar = math.fsum(ua.p_i for ua in per_unit) / len(included)

    category_counts = Counter(
        cells[(unit_id, coder)].primary for unit_id in included for coder in rnd.coders
    )
    total = len(included) * n
    p_e = math.fsum((c / total) ** 2 for c in category_counts.values())
    if p_e == 1.0:
        raise MetricsError("kappa undefined: no category variance")
    return KappaResult(
        kappa=(p_bar - p_e) / (1.0 - p_e),
        p_bar=p_bar,
        p_e=p_e,
        n_coders=n,
        n_units_included=len(included),
        excluded_units=tuple(excluded),
    )


def _scoped_assignments(rnd: Round, scope: str):
    if scope == TEAM:
        return rnd.assignments
    if scope not in rnd.coders:
        raise MetricsError(f"unknown coder {scope!r}")
    return tuple(a for a in rnd.assignments if a.coder_id == scope)


def certainty(rnd: Round, codebook: Codebook, scope: str = TEAM) -> CertaintyReport:
    """Per-code certainty for the whole team or one coder.

    Requires a double-coding round: certainty is read off the repeated
    primary/secondary choice. Team scope pools all assignments rather than
    averaging per-coder ratios.
    """
    if rnd.mode != DOUBLE:
        raise MetricsError("certainty requires double coding")
    assignments = _scoped_assignments(rnd, scope)
    primary_uses: Counter = Counter()
    repeats: Counter = Counter()
    for a in assignments:
        if a.secondary is None:
            raise MetricsError(
                f"double-coding round has assignment without secondary "
                f"(unit {a.unit_id!r} / coder {a.coder_id!r})"
            )
        primary_uses[a.primary] += 1
        if a.secondary == a.primary:
            repeats[a.primary] += 1
    per_code = {}
    for code in codebook.ids():
        uses = primary_uses[code]
        value = repeats[code] / uses if uses else None
        per_code[code] = CodeCertainty(certainty=value, n_primary_uses=uses)
    return CertaintyReport(scope=scope, per_code=per_code)


def primary_secondary_matrix(
    rnd: Round, codebook: Codebook, scope: str = TEAM
) -> PrimarySecondaryMatrix:
    """Distribution of secondary codes for each primary code.

    Cell [p][s] divides the number of assignments (primary=p, secondary=s) by
    the total primary uses of p, so every defined row sums to one. The
    diagonal equals the certainty report for the same scope.
    """
    if rnd.mode != DOUBLE:
        raise MetricsError("certainty requires double coding")
    assignments = _scoped_assignments(rnd, scope)
    codes = codebook.ids()
    order = {c: i for i, c in enumerate(codes)}
    counts = np.zeros((len(codes), len(codes)), dtype=np.int64)
    for a in assignments:
        if a.secondary is None:
            raise MetricsError(
                f"double-coding round has assignment without secondary "
                f"(unit {a.unit_id!r} / coder {a.coder_id!r})"
            )
        if a.primary not in order:
            raise MetricsError(f"code {a.primary!r} not in codebook")
        if a.secondary not in order:
            raise MetricsError(f"code {a.secondary!r} not in codebook")
        counts[order[a.primary], order[a.secondary]] += 1
    row_counts = counts.sum(axis=1)
    cells = tuple(
        tuple(
            (int(counts[i, j]) / int(row_counts[i])) if row_counts[i] else None
            for j in range(len(codes))
        )
        for i in range(len(codes))
    )
    return PrimarySecondaryMatrix(
        scope=scope,
        codes=codes,
        counts=tuple(tuple(int(v) for v in row) for row in counts),
        row_counts=tuple(int(v) for v in row_counts),
        cells=cells,
    )


def connection_degrees(rnd: Round, codebook: Codebook) -> ConnectionDegreeTable:
    """Count pairwise code co-use per unit and in total.

    Only primary codes participate. For each unit and unordered pair {X, Y}
    the degree is min(#X, #Y) among that unit's assignments; self-pairs count
    plain uses, so the summed self-degree of X is its total primary-use count.
    """
    codes = codebook.ids()
    pairs = _pair_list(codes)
    per_unit: dict[str, dict[tuple[str, str], int]] = {}
    sums: dict[tuple[str, str], int] = {p: 0 for p in pairs}
    for unit_id in rnd.units:
        counts = _primary_counts(rnd, unit_id)
        for code in counts:
            if code not in codes:
                raise MetricsError(f"code {code!r} not in codebook")
        row = {}
        for x, y in pairs:
            degree = counts[x] if x == y else min(counts[x], counts[y])
            row[(x, y)] = degree
            sums[(x, y)] += degree
        per_unit[unit_id] = row
    return ConnectionDegreeTable(codes=codes, pairs=pairs, per_unit=per_unit, sums=sums)


def correlated_disagreement(table: ConnectionDegreeTable) -> CorrelatedDisagreementMatrix:
    """Normalize summed connection degrees into the overlap matrix.

    r_XY = S_XY / sqrt(S_XX * S_YY); a pair involving a code that was never
    used has no overlap evidence and is defined as 0 rather than an error, so
    the matrix stays total as codebooks evolve.
    """
    cells: dict[tuple[str, str], float] = {}
    for x, y in table.pairs:
        if x == y:
            continue
        s_xx = table.sums[(x, x)]
        s_yy = table.sums[(y, y)]
        if s_xx == 0 or s_yy == 0:
            cells[(x, y)] = 0.0
        else:
            cells[(x, y)] = table.sums[(x, y)] / math.sqrt(s_xx * s_yy)
    return CorrelatedDisagreementMatrix(
        codes=table.codes,
        self_sums=tuple(table.sums[(c, c)] for c in table.codes),
        cells=cells,
    )


def round_delta(before: Round, after: Round, codebook: Codebook) -> RoundDelta:
    """Compare agreement and overlap between two rounds.

    Both rounds must cover the same unit set and draw codes from the given
    codebook; a code present in either round but absent from the codebook
    (e.g. renamed between rounds) is a rejection.
    """
    if set(before.units) != set(after.units):
        raise MetricsError("rounds cover different unit sets")
    known = set(codebook.ids())
    used = {a.primary for a in before.assignments} | {a.primary for a in after.assignments}
    strays = sorted(used - known)
    if strays:
        raise MetricsError(f"codes not in the shared codebook: {', '.join(strays)}")

    def kappa_or_none(rnd: Round) -> float | None:
        try:
            return fleiss_kappa(rnd).kappa
        except MetricsError:
            return None

    cdm_before = correlated_disagreement(connection_degrees(before, codebook))
    cdm_after = correlated_disagreement(connection_degrees(after, codebook))
    deltas = {
        pair: cdm_after.cells[pair] - cdm_before.cells[pair] for pair in cdm_before.cells
    }
    newly_zero = tuple(
        pair
        for pair in cdm_before.cells
        if cdm_before.cells[pair] > 0.0 and cdm_after.cells[pair] == 0.0
    )
    newly_nonzero = tuple(
        pair
        for pair in cdm_before.cells
        if cdm_before.cells[pair] == 0.0 and cdm_after.cells[pair] > 0.0
    )
    return RoundDelta(
        kappa_before=kappa_or_none(before),
        kappa_after=kappa_or_none(after),
        cdm_deltas=deltas,
        newly_zero_pairs=newly_zero,
        newly_nonzero_pairs=newly_nonzero,
    )


def disagreement_shade(
    p_i: float, thresholds: tuple[float, float] = DEFAULT_SHADE_THRESHOLDS
) -> str:
    """Map a per-unit agreement value onto a red-shade severity level.

    Full agreement carries no shade; below that, lower agreement maps to a
    darker shade. The two breakpoints are configuration, defaulting to
    0.34 / 0.67.
    """
    low, high = thresholds
    if not 0.0 <= low < high <= 1.0:
        raise ValueError(f"thresholds must satisfy 0 <= low < high <= 1, got {thresholds}")
    if not 0.0 <= p_i <= 1.0:
        raise ValueError(f"agreement must lie in [0, 1], got {p_i}")
    if p_i == 1.0:
        return SHADE_NONE
    if p_i >= high:
        return SHADE_LIGHT
    if p_i >= low:
        return SHADE_MEDIUM
    return SHADE_DARK
