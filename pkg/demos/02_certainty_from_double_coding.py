"""
Coder certainty from double coding
==================================

In a double-coding round every coder picks a primary code (the best fit) and
a secondary code: the same code again if they are sure, a plausible
alternative if not. The repeat rate is the coder's *certainty* per code, and
the full primary-by-secondary matrix shows exactly which codes absorb the
doubt.
"""
import numpy as np

from codewizard import (
    DOUBLE,
    PALETTE,
    Assignment,
    Code,
    Codebook,
    Round,
    certainty,
    primary_secondary_matrix,
)
from codewizard.snapshot import display_percent

#%%
# Two coders double-code six units against a four-code codebook. "swift" is
# confident almost everywhere; "newton" reaches for CT whenever SB was the
# primary pick.
codebook = Codebook(
    codes=tuple(
        Code(id=c, label=f"category {c}", color=PALETTE[i])
        for i, c in enumerate(("SB", "CT", "PM", "CD"))
    )
)
cells = {
    ("u1", "swift"): ("SB", "SB"),
    ("u2", "swift"): ("SB", "SB"),
    ("u3", "swift"): ("CT", "CT"),
    ("u4", "swift"): ("CT", "PM"),
    ("u5", "swift"): ("PM", "PM"),
    ("u6", "swift"): ("CD", "CD"),
    ("u1", "newton"): ("SB", "CT"),
    ("u2", "newton"): ("SB", "CT"),
    ("u3", "newton"): ("CT", "CT"),
    ("u4", "newton"): ("CT", "SB"),
    ("u5", "newton"): ("PM", "PM"),
    ("u6", "newton"): ("CD", "CD"),
}
rnd = Round(
    index=1,
    mode=DOUBLE,
    units=tuple(f"u{i}" for i in range(1, 7)),
    coders=("swift", "newton"),
    assignments=tuple(
        Assignment(u, c, p, s) for (u, c), (p, s) in cells.items()
    ),
)

#%%
# Team certainty pools every assignment. A code never used as primary has no
# certainty at all (rendered as a dash), which is different from certainty 0.
report = certainty(rnd, codebook)
for code, entry in report.per_code.items():
    shown = "-" if entry.certainty is None else f"{entry.certainty:.2f}"
    print(f"{code}: certainty={shown}  (primary uses: {entry.n_primary_uses})")

#%%
# Per-coder reports make the asymmetry visible: swift repeats SB every time,
# newton never does.
for coder in rnd.coders:
    row = certainty(rnd, codebook, coder).per_code
    print(coder, {c: None if e.certainty is None else round(e.certainty, 2)
                  for c, e in row.items()})

#%%
# The primary/secondary matrix generalizes certainty: row = primary code,
# column = where the secondary choices went. Rows sum to 1, the diagonal is
# the certainty, and the matrix is deliberately not symmetric; which
# alternative a coder reaches for depends on what they picked first.
matrix = primary_secondary_matrix(rnd, codebook)
print("codes:", matrix.codes)
print(np.round(matrix.to_array(), 3))

#%%
# Displayed as percentages (the usual rendering), rounding can push a row past
# 100 even though the exact fractions always partition each code's uses.
for i, code in enumerate(matrix.codes):
    if matrix.row_counts[i] == 0:
        continue
    pcts = [display_percent(v) for v in matrix.cells[i]]
    print(f"{code}: {pcts} -> sums to {sum(pcts)}%")
