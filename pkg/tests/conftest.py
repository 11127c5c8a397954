from __future__ import annotations

import pytest

from codewizard import DOUBLE, Assignment, Project, Round, save_project
from oracles import complete_round, make_codebook

# Five coders, four codes (D deliberately unused), five units. Hand-checked
# expectations: S_AA=8 S_BB=7 S_CC=10 S_AB=5 S_AC=2 S_BC=1, kappa=0.1992/0.6592.
FIG10_GRID = {
    "u1": "CACCC",
    "u2": "ABBBA",
    "u3": "BACAA",
    "u4": "CCCCC",
    "u5": "BBBAA",
}
FIG10_CODERS = ("coder1", "coder2", "coder3", "coder4", "coder5")
FIG10_KAPPA = 0.1992 / 0.6592


@pytest.fixture
def codebook_abcd():
    return make_codebook(("A", "B", "C", "D"))


@pytest.fixture
def fig10_round():
    return complete_round(FIG10_GRID, FIG10_CODERS)


@pytest.fixture
def fig10_project(codebook_abcd, fig10_round):
    from codewizard import Unit

    units = tuple(Unit(id=u, text=f"field note {u}") for u in FIG10_GRID)
    return Project(
        name="hypothetical",
        codebook=codebook_abcd,
        units=units,
        coders=FIG10_CODERS,
        rounds=(fig10_round,),
    )


@pytest.fixture
def fig10_bundle(fig10_project, tmp_path):
    bundle = tmp_path / "bundle"
    save_project(fig10_project, bundle)
    return bundle


def make_double_round(cells: dict[tuple[str, str], tuple[str, str]], units, coders,
                      index: int = 1) -> Round:
    """Double-coding round from {(unit, coder): (primary, secondary)} cells."""
    assignments = tuple(
        Assignment(unit_id=u, coder_id=c, primary=p, secondary=s)
        for (u, c), (p, s) in cells.items()
    )
    return Round(index=index, mode=DOUBLE, units=tuple(units), coders=tuple(coders),
                 assignments=assignments)


@pytest.fixture
def double_round():
    """Two coders, three units; certainty by hand: A=2/3, B=1/2, C=1, D undefined."""
    cells = {
        ("u1", "c1"): ("A", "A"),
        ("u1", "c2"): ("A", "C"),
        ("u2", "c1"): ("A", "A"),
        ("u2", "c2"): ("B", "B"),
        ("u3", "c1"): ("C", "C"),
        ("u3", "c2"): ("B", "A"),
    }
    return make_double_round(cells, units=("u1", "u2", "u3"), coders=("c1", "c2"))
