"""
Measuring agreement and locating code overlap
=============================================

Five coders assign one of four codes (A, B, C, D) to five field-note units.
This walkthrough computes every agreement diagnostic the library offers for a
single-coded round: per-unit agreement, Fleiss' kappa, code connection
degrees, and the correlated disagreement matrix.
"""
import numpy as np

from codewizard import (
    PALETTE,
    Assignment,
    Code,
    Codebook,
    Round,
    SINGLE,
    connection_degrees,
    correlated_disagreement,
    disagreement_shade,
    fleiss_kappa,
    per_unit_agreement,
)

#%%
# The coding grid: rows are units, one letter per coder. Code D exists in the
# codebook but nobody used it, which the overlap matrix must tolerate.
grid = {
    "u1": "CACCC",
    "u2": "ABBBA",
    "u3": "BACAA",
    "u4": "CCCCC",
    "u5": "BBBAA",
}
coders = tuple(f"coder{i}" for i in range(1, 6))
codebook = Codebook(
    codes=tuple(
        Code(id=c, label=f"category {c}", color=PALETTE[i])
        for i, c in enumerate("ABCD")
    )
)

rnd = Round(
    index=1,
    mode=SINGLE,
    units=tuple(grid),
    coders=coders,
    assignments=tuple(
        Assignment(unit_id=u, coder_id=coders[i], primary=row[i])
        for u, row in grid.items()
        for i in range(len(coders))
    ),
)

#%%
# Per-unit agreement is the share of coder pairs that picked the same code.
# A unanimous unit scores 1.0; an even split scores low. The shade level is
# what a grid display would use for its red disagreement column.
for unit_id in rnd.units:
    ua = per_unit_agreement(rnd, unit_id)
    shade = disagreement_shade(ua.p_i)
    print(f"{unit_id}: {grid[unit_id]}  p_i={ua.p_i:.2f}  shade={shade}")

#%%
# Fleiss' kappa corrects the mean observed agreement for chance. Here it lands
# near 0.30: far below the 0.8 usually demanded before coding results are
# trusted, so the team needs to find out which codes are colliding.
kappa = fleiss_kappa(rnd)
print(f"kappa={kappa.kappa:.4f}  (p_bar={kappa.p_bar:.4f}, p_e={kappa.p_e:.4f})")

#%%
# Connection degrees count, per unit, how often two codes were used together:
# min(#X, #Y) for each unordered pair. The self-pair degree is just a code's
# use count, so the summed diagonal recovers total primary uses.
table = connection_degrees(rnd, codebook)
header = "  ".join(f"{x}:{y}" for x, y in table.pairs)
print(f"{'unit':>5}  {header}")
for unit_id in rnd.units:
    row = "  ".join(f"{table.per_unit[unit_id][p]:>3}" for p in table.pairs)
    print(f"{unit_id:>5}  {row}")
print(f"{'SUM':>5}  " + "  ".join(f"{table.sums[p]:>3}" for p in table.pairs))

#%%
# Normalizing each pair sum by the geometric mean of the two codes' totals
# gives the correlated disagreement matrix. Values near 1 flag codes used
# interchangeably; unused codes contribute zeros rather than errors.
cdm = correlated_disagreement(table)
print(np.round(cdm.to_array(), 2))
for (x, y), value in sorted(cdm.cells.items(), key=lambda kv: -kv[1]):
    if value > 0:
        print(f"r({x},{y}) = {value:.4f}")

#%%
# The A/B pair dominates at r=0.67: those two codes are being confused and the
# team should discuss their definitions first. A/C (0.22) and B/C (0.12) are
# mild by comparison, and every pair involving the unused D is exactly 0.
