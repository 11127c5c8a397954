"""
Project bundles, metric exports, and the command line
=====================================================

Projects live on disk as plain directories: a manifest, a codebook CSV, a
units CSV, and one sheet per coder per round. Everything the ``codewizard``
command does is also callable in-process, which is what this script uses.
"""
import json
import tempfile
from pathlib import Path

from codewizard import (
    aggregate,
    load_project,
    parse_codebook,
    parse_coder_sheet,
    parse_units,
    save_project,
    Project,
)
from codewizard.cli import main as codewizard

workdir = Path(tempfile.mkdtemp(prefix="codewizard-demo-"))

#%%
# Start from the raw files a coding lead would receive. The codebook has no
# color column, so deterministic palette colors are assigned on parse.
(workdir / "codebook.csv").write_text(
    "id,label,definition\n"
    "SB,Source Breakdown,Source not identified\n"
    "CT,Content Breakdown,Unclear or incomplete content\n"
    "PM,Paper Mechanism Issue,Paper form not working\n"
)
(workdir / "units.csv").write_text(
    "unit_id,timestamp,text,source_link\n"
    'n1,10:08 6/7/16,"Unclear if the information is from a citizen, or someone else.",slack://c1/p1\n'
    "n2,10:08 6/7/16,The agency the information came from is not on the form.,slack://c1/p2\n"
    "n3,10:20 6/7/16,Guesses are made based on pen color and handwriting.,slack://c1/p3\n"
)
for coder, picks in {"ana": "SB CT PM", "ben": "SB SB PM", "cam": "SB CT CT"}.items():
    rows = "".join(f"n{i+1},{p},\n" for i, p in enumerate(picks.split()))
    (workdir / f"{coder}.csv").write_text(
        f"# coder: {coder}\nunit_id,primary,secondary\n{rows}"
    )

codebook = parse_codebook(workdir / "codebook.csv")
units = parse_units(workdir / "units.csv")
print("palette colors:", [c.color for c in codebook.codes])

#%%
# Aggregate the three sheets into round 1 and save the bundle. The round mode
# is inferred from the sheets (no secondaries here, so single coding).
sheets = [parse_coder_sheet(workdir / f"{c}.csv") for c in ("ana", "ben", "cam")]
rnd = aggregate(sheets, codebook, units)
project = Project(name="demo", codebook=codebook, units=units,
                  coders=rnd.coders, rounds=(rnd,))
bundle = workdir / "bundle"
save_project(project, bundle)
print("bundle files:", sorted(p.name for p in bundle.rglob("*") if p.is_file()))

#%%
# The CLI validates structural invariants (exit code 0 = clean) and exports
# the full metric set for a round.
exit_code = codewizard(["validate", "--project", str(bundle)])
print("validate exit code:", exit_code)

out = workdir / "exports"
codewizard(["metrics", "--project", str(bundle), "--out", str(out)])
print("export files:", sorted(p.name for p in out.iterdir()))
print((out / "cdm.csv").read_text())

#%%
# Exports keep full precision alongside the display rounding, and kappa.json
# records the whole computation, not just the headline number.
kappa = json.loads((out / "kappa.json").read_text())["data"]
print(json.dumps(kappa, indent=2))

#%%
# Round-trips are exact: loading the bundle reproduces the in-memory project.
assert load_project(bundle) == project
print("load(save(project)) == project")
