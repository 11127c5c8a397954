"""Collaborative qualitative-coding analytics.

Aggregates per-coder code assignments, quantifies inter-coder reliability and
coder certainty, localizes code ambiguity via connection degrees and the
correlated disagreement matrix, and serves live reconciliation sessions where
edits recompute all metrics.
"""

from .metrics import (
    DEFAULT_SHADE_THRESHOLDS,
    TEAM,
    CertaintyReport,
    CodeCertainty,
    ConnectionDegreeTable,
    CorrelatedDisagreementMatrix,
    KappaResult,
    MetricsError,
    PrimarySecondaryMatrix,
    RoundDelta,
    UnitAgreement,
    certainty,
    connection_degrees,
    correlated_disagreement,
    disagreement_shade,
    fleiss_kappa,
    per_unit_agreement,
    primary_secondary_matrix,
    round_delta,
)
from .model import (
    DOUBLE,
    SINGLE,
    Assignment,
    Code,
    Codebook,
    ModelError,
    Project,
    Round,
    Unit,
    Violation,
    aggregate,
    validate_codebook,
    validate_project,
    validate_round,
)
from .snapshot import MetricsSnapshot, compute_snapshot, snapshot_from_dict, snapshot_to_dict
from .storage import (
    PALETTE,
    BundleError,
    ParseError,
    export_metrics,
    load_metrics_export,
    load_project,
    parse_codebook,
    parse_coder_sheet,
    parse_units,
    save_project,
    write_codebook,
    write_coder_sheet,
    write_units,
)

__version__ = "0.1.0"

__all__ = [
    "Assignment",
    "BundleError",
    "CertaintyReport",
    "Code",
    "CodeCertainty",
    "Codebook",
    "ConnectionDegreeTable",
    "CorrelatedDisagreementMatrix",
    "DEFAULT_SHADE_THRESHOLDS",
    "DOUBLE",
    "KappaResult",
    "MetricsError",
    "MetricsSnapshot",
    "ModelError",
    "PALETTE",
    "ParseError",
    "PrimarySecondaryMatrix",
    "Project",
    "Round",
    "RoundDelta",
    "SINGLE",
    "TEAM",
    "Unit",
    "UnitAgreement",
    "Violation",
    "aggregate",
    "certainty",
    "compute_snapshot",
    "connection_degrees",
    "correlated_disagreement",
    "disagreement_shade",
    "export_metrics",
    "fleiss_kappa",
    "load_metrics_export",
    "load_project",
    "parse_codebook",
    "parse_coder_sheet",
    "parse_units",
    "per_unit_agreement",
    "primary_secondary_matrix",
    "round_delta",
    "save_project",
    "snapshot_from_dict",
    "snapshot_to_dict",
    "validate_codebook",
    "validate_project",
    "validate_round",
    "write_codebook",
    "write_coder_sheet",
    "write_units",
]
