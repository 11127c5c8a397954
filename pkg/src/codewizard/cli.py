"""Command line for validating bundles, aggregating sheets, exporting metrics,
diffing rounds, and running the live session service.

Exit codes: 0 clean, 1 domain violations or data rejections, 2 operational
errors (unreadable bundle, bad invocation, port in use).
"""

from __future__ import annotations

import argparse
import json
import os
import socket
import sys
from dataclasses import dataclass
from pathlib import Path

from .metrics import DEFAULT_SHADE_THRESHOLDS, MetricsError, round_delta
from .model import ModelError, Project, aggregate, validate_project, validate_round
from .snapshot import compute_snapshot, delta_to_dict
from .storage import (
    BundleError,
    ParseError,
    export_metrics,
    load_project,
    parse_coder_sheet,
    save_project,
    write_round_delta,
)

PROJECT_ENV = "CODEWIZARD_PROJECT"

# Violations metrics cannot compute through; the rest (missing cells and
# secondary-mode mismatches) degrade to exclusions or recorded reasons.
_FATAL_RULES = {"unknown-code", "unknown-unit", "unknown-coder", "unit-axis-mismatch"}


@dataclass
class CliConfig:
    project: Path | None = None
    round: int | None = None
    format: str = "csv"
    port: int = 8000
    host: str = "127.0.0.1"
    shade_thresholds: tuple[float, float] = DEFAULT_SHADE_THRESHOLDS


def resolve_config(args: argparse.Namespace) -> CliConfig:
    """Defaults (plus project env var), then config file, then flags."""
    cfg = CliConfig()
    env_project = os.environ.get(PROJECT_ENV)
    if env_project:
        cfg.project = Path(env_project)
    config_path = getattr(args, "config", None)
    if config_path:
        data = json.loads(Path(config_path).read_text(encoding="utf-8"))
        if "project" in data:
            cfg.project = Path(data["project"])
        if "round" in data:
            cfg.round = int(data["round"])
        if "format" in data:
            cfg.format = data["format"]
        if "port" in data:
            cfg.port = int(data["port"])
        if "host" in data:
            cfg.host = data["host"]
        if "shade_thresholds" in data:
            lo, hi = data["shade_thresholds"]
            cfg.shade_thresholds = (float(lo), float(hi))
    if getattr(args, "project", None):
        cfg.project = Path(args.project)
    if getattr(args, "round", None) is not None:
        cfg.round = args.round
    if getattr(args, "format", None):
        cfg.format = args.format
    if getattr(args, "port", None) is not None:
        cfg.port = args.port
    if getattr(args, "host", None):
        cfg.host = args.host
    return cfg


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 2


def _load(cfg: CliConfig) -> Project:
    if cfg.project is None:
        raise BundleError(f"no project path given (flag --project, config file, or ${PROJECT_ENV})")
    return load_project(cfg.project)


def _pick_round(cfg: CliConfig, project: Project) -> int:
    if cfg.round is not None:
        return cfg.round
    if not project.rounds:
        raise BundleError("project has no rounds")
    return project.rounds[-1].index


def cmd_validate(cfg: CliConfig) -> int:
    try:
        project = _load(cfg)
    except (BundleError, ParseError) as exc:
        return _fail(str(exc))
    violations = validate_project(project)
    if cfg.format == "json":
        print(json.dumps({"violations": [v.as_dict() for v in violations], "count": len(violations)}))
    else:
        for v in violations:
            print(f"[{v.rule}] {v.message}")
        print(f"{len(violations)} violations")
    return 0 if not violations else 1


def cmd_metrics(cfg: CliConfig, out: Path | None) -> int:
    try:
        project = _load(cfg)
        round_index = _pick_round(cfg, project)
    except (BundleError, ParseError) as exc:
        return _fail(str(exc))
    if not project.has_round(round_index):
        return _fail(f"no such round: {round_index}")

    violations = validate_project(project)
    fatal = [v for v in violations if v.rule in _FATAL_RULES]
    if fatal:
        for v in fatal:
            print(f"[{v.rule}] {v.message}", file=sys.stderr)
        print(f"{len(fatal)} blocking violations; run `codewizard validate`", file=sys.stderr)
        return 1
    for v in violations:
        print(f"warning: [{v.rule}] {v.message}", file=sys.stderr)

    snapshot = compute_snapshot(project, round_index, cfg.shade_thresholds)
    dest = out or Path(cfg.project) / "exports" / f"round-{round_index}"
    files = export_metrics(snapshot, dest, cfg.format)
    if snapshot.kappa is not None:
        k = snapshot.kappa
        print(
            f"kappa={k.kappa:.3f} (p_bar={k.p_bar:.3f}, p_e={k.p_e:.3f}, "
            f"{k.n_coders} coders, {k.n_units_included} units"
            + (f", {len(k.excluded_units)} excluded" if k.excluded_units else "")
            + ")"
        )
    else:
        print(f"kappa unavailable: {snapshot.kappa_error}")
    print(f"wrote {len(files)} files to {dest}")
    return 0


def cmd_diff(cfg: CliConfig, round_a: int, round_b: int, out: Path | None) -> int:
    try:
        project = _load(cfg)
    except (BundleError, ParseError) as exc:
        return _fail(str(exc))
    for r in (round_a, round_b):
        if not project.has_round(r):
            return _fail(f"no such round: {r}")
    try:
        delta = round_delta(project.round(round_a), project.round(round_b), project.codebook)
    except MetricsError as exc:
        print(f"rejected: {exc}", file=sys.stderr)
        return 1
    dest = out or Path(cfg.project) / "exports" / f"diff-{round_a}-{round_b}" / "round_delta.json"
    write_round_delta(delta_to_dict(delta, round_a, round_b), dest)

    def show(v: float | None) -> str:
        return "undefined" if v is None else f"{v:.3f}"

    print(f"kappa {show(delta.kappa_before)} -> {show(delta.kappa_after)}")
    changed = len(delta.newly_zero_pairs) + len(delta.newly_nonzero_pairs)
    if delta.kappa_delta is None:
        print(f"Δkappa = n/a, {changed} pairs changed")
    else:
        print(f"Δkappa = {delta.kappa_delta:.3f}, {changed} pairs changed")
    if delta.newly_zero_pairs:
        pairs = ", ".join(f"{x}/{y}" for x, y in delta.newly_zero_pairs)
        print(f"newly zero: {pairs}")
    print(f"wrote {dest}")
    return 0


def cmd_aggregate(cfg: CliConfig, sheets: list[Path], note: str) -> int:
    try:
        project = _load(cfg)
    except (BundleError, ParseError) as exc:
        return _fail(str(exc))
    try:
        parsed = [parse_coder_sheet(p) for p in sheets]
    except ParseError as exc:
        print(f"rejected: {exc}", file=sys.stderr)
        return 1
    index = max((r.index for r in project.rounds), default=0) + 1
    try:
        rnd = aggregate(parsed, project.codebook, project.units, index=index, note=note)
    except ModelError as exc:
        print(f"rejected: {exc}", file=sys.stderr)
        return 1
    project = project.with_round(rnd)
    save_project(project, cfg.project)
    print(f"aggregated round {index} (mode={rnd.mode}, {len(rnd.coders)} coders)")
    violations = validate_round(rnd, project)
    for v in violations:
        print(f"[{v.rule}] {v.message}")
    print(f"{len(violations)} violations")
    return 0 if not violations else 1


def cmd_serve(cfg: CliConfig, static_dir: Path | None) -> int:
    import uvicorn

    from .service import InvalidBundle, create_app

    try:
        app = create_app(cfg.project, shade_thresholds=cfg.shade_thresholds, static_dir=static_dir)
    except (BundleError, ParseError) as exc:
        return _fail(str(exc))
    except InvalidBundle as exc:
        print("refusing to serve an invalid bundle:", file=sys.stderr)
        for v in exc.violations:
            print(f"[{v.rule}] {v.message}", file=sys.stderr)
        return 1

    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.bind((cfg.host, cfg.port))
    except OSError as exc:
        return _fail(f"cannot bind {cfg.host}:{cfg.port}: {exc}")
    finally:
        probe.close()

    try:
        uvicorn.run(app, host=cfg.host, port=cfg.port, log_level="info")
    except SystemExit:
        return _fail(f"server failed to start on {cfg.host}:{cfg.port}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="codewizard",
        description="Collaborative qualitative-coding analytics: validation, "
        "agreement metrics, disagreement matrices, live sessions.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--project", help=f"project bundle directory (default ${PROJECT_ENV})")
    common.add_argument("--config", help="JSON config file (flags override it)")
    common.add_argument("--format", choices=["json", "csv"], help="output format")
    common.add_argument("--round", type=int, help="round selector (default: last round)")
    common.add_argument("--port", type=int, help="service port (serve)")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="check all bundle invariants")

    p_metrics = sub.add_parser("metrics", parents=[common], help="export the metric set for a round")
    p_metrics.add_argument("--out", help="destination directory (default <project>/exports/round-N)")

    p_diff = sub.add_parser("diff", parents=[common], help="compare two rounds")
    p_diff.add_argument("round_a", type=int)
    p_diff.add_argument("round_b", type=int)
    p_diff.add_argument("--out", help="destination for round_delta.json")

    p_agg = sub.add_parser("aggregate", parents=[common], help="merge coder sheets into a new round")
    p_agg.add_argument("sheets", nargs="+", help="per-coder sheet files")
    p_agg.add_argument("--note", default="", help="free-text note for the round")

    p_serve = sub.add_parser("serve", parents=[common], help="run the live session service")
    p_serve.add_argument("--host", help="bind address (default 127.0.0.1)")
    p_serve.add_argument("--static", help="directory of web UI assets to serve at /")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
    except (OSError, ValueError) as exc:
        return _fail(f"bad config: {exc}")
    if args.command == "validate":
        return cmd_validate(cfg)
    if args.command == "metrics":
        return cmd_metrics(cfg, Path(args.out) if args.out else None)
    if args.command == "diff":
        return cmd_diff(cfg, args.round_a, args.round_b, Path(args.out) if args.out else None)
    if args.command == "aggregate":
        return cmd_aggregate(cfg, [Path(s) for s in args.sheets], args.note)
    if args.command == "serve":
        return cmd_serve(cfg, Path(args.static) if args.static else None)
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
