"""Barrier curves, temperature calibration, ensembles and layerwise diagnostics."""
from .barrier import (
    BarrierCurve,
    barrier_curve,
    ensemble_eval,
    ensemble_weights,
    lambda_grid,
    loss_barrier,
)
from .calibration import TemperatureFit, fit_beta, fit_temperature, scaled_nll
from .constructions import build_lewc_pair
from .diagnostics import (
    LayerMeans,
    PreactStats,
    RankStats,
    ReciprocalOrthogonality,
    commutativity_diagnostic,
    dist,
    lewc_diagnostic,
    overlap_stats,
    preactivation_stats,
    rank_profile,
    reciprocal_orthogonality_diagnostic,
    relu_additivity_cosine,
    relu_additivity_diagnostic,
)
from .report import REPORT_SCHEMA, DiagnosticsReport, diagnose, validate_report

__all__ = [
    "BarrierCurve", "barrier_curve", "ensemble_eval", "ensemble_weights", "lambda_grid",
    "loss_barrier", "TemperatureFit", "fit_beta", "fit_temperature", "scaled_nll",
    "build_lewc_pair", "LayerMeans", "PreactStats", "RankStats", "ReciprocalOrthogonality",
    "commutativity_diagnostic", "dist", "lewc_diagnostic", "overlap_stats",
    "preactivation_stats", "rank_profile", "reciprocal_orthogonality_diagnostic",
    "relu_additivity_cosine", "relu_additivity_diagnostic", "REPORT_SCHEMA",
    "DiagnosticsReport", "diagnose", "validate_report",
]
