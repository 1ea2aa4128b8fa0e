"""Full per-layer diagnostics for a model pair, serialisable to versioned JSON."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import jsonschema

from ..mlp import ParamSet, check_same_arch
from .diagnostics import (
    commutativity_diagnostic,
    lewc_diagnostic,
    overlap_stats,
    preactivation_stats,
    rank_profile,
    reciprocal_orthogonality_diagnostic,
    relu_additivity_diagnostic,
)

REPORT_SCHEMA_VERSION = 1

_unit = {"type": "number", "minimum": -1.0, "maximum": 1.0}
_frac = {"type": "number", "minimum": 0.0, "maximum": 1.0}
_nonneg = {"type": "number", "minimum": 0.0}
_count = {"type": "integer", "minimum": 0}


def _nullable(s: dict) -> dict:
    return {"oneOf": [s, {"type": "null"}]}


REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "lmclab diagnostics report",
    "type": "object",
    "required": ["schema_version", "metadata", "layers"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": REPORT_SCHEMA_VERSION},
        "metadata": {
            "type": "object",
            "required": ["lambda", "depth", "layer_dims", "n_samples", "overlap_mode", "aggregation"],
            "properties": {
                "lambda": _frac,
                "depth": {"type": "integer", "minimum": 1},
                "layer_dims": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "n_samples": _count,
                "overlap_mode": {"enum": ["min", "jaccard"]},
                "aggregation": {"enum": ["sample", "pooled"]},
                "width_multiplier": {"type": ["string", "null"]},
                "seeds": {"type": "array", "items": {"type": "integer"}},
            },
        },
        "layers": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": [
                    "layer", "width", "lewc_cos", "lewc_flagged", "relu_add_cos",
                    "ro_norm_ratio_ab", "ro_norm_ratio_ba", "merged_input_cos_a",
                    "merged_input_cos_b", "commutativity_dist", "small_std_fraction_a",
                    "small_std_fraction_b", "nonoverlap_fraction", "stable_rank_a",
                    "stable_rank_b", "eps_rank_a", "eps_rank_b",
                ],
                "properties": {
                    "layer": {"type": "integer", "minimum": 1},
                    "width": {"type": "integer", "minimum": 1},
                    "lewc_cos": _unit,
                    "lewc_flagged": _count,
                    "relu_add_cos": _nullable(_unit),
                    "ro_norm_ratio_ab": _nonneg,
                    "ro_norm_ratio_ba": _nonneg,
                    "merged_input_cos_a": _unit,
                    "merged_input_cos_b": _unit,
                    "commutativity_dist": _nonneg,
                    "small_std_fraction_a": _nullable(_frac),
                    "small_std_fraction_b": _nullable(_frac),
                    "nonoverlap_fraction": _nullable(_frac),
                    "stable_rank_a": _nonneg,
                    "stable_rank_b": _nonneg,
                    "eps_rank_a": _count,
                    "eps_rank_b": _count,
                },
            },
        },
    },
}


@dataclass
class DiagnosticsReport:
    metadata: dict
    layers: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"schema_version": REPORT_SCHEMA_VERSION, "metadata": self.metadata, "layers": self.layers}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DiagnosticsReport":
        d = json.loads(text)
        validate_report(d)
        return cls(d["metadata"], d["layers"])

    def column(self, key: str) -> list:
        return [row[key] for row in self.layers]


def validate_report(d: dict) -> None:
    jsonschema.validate(d, REPORT_SCHEMA)


def diagnose(a: ParamSet, b: ParamSet, d, lam: float = 0.5, overlap_mode: str = "min",
             aggregation: str = "sample", metadata: dict | None = None) -> DiagnosticsReport:
    """Run every diagnostic on the pair and collect one row per layer.

    Hidden-layer-only quantities (ReLU additivity, variance statistics) are
    ``None`` on the output layer.
    """
    check_same_arch(a, b)
    depth = a.arch.depth
    lewc = lewc_diagnostic(a, b, lam, d, aggregation)
    add = relu_additivity_diagnostic(a, b, d, lam, aggregation)
    ro = reciprocal_orthogonality_diagnostic(a, b, lam, d)
    comm = commutativity_diagnostic(a, b, d)
    pa, pb = preactivation_stats(a, d), preactivation_stats(b, d)
    overlap = overlap_stats(a, b, d, overlap_mode)
    ra, rb = rank_profile(a), rank_profile(b)

    rows = []
    for i in range(depth):
        hidden = i < depth - 1
        rows.append({
            "layer": i + 1,
            "width": a.arch.layer_dims[i + 1],
            "lewc_cos": float(lewc.values[i]),
            "lewc_flagged": int(lewc.flagged[i]),
            "relu_add_cos": float(add.values[i]) if hidden else None,
            "ro_norm_ratio_ab": float(ro.norm_ratio_ab[i]),
            "ro_norm_ratio_ba": float(ro.norm_ratio_ba[i]),
            "merged_input_cos_a": float(ro.merged_cos_a[i]),
            "merged_input_cos_b": float(ro.merged_cos_b[i]),
            "commutativity_dist": float(comm.values[i]),
            "small_std_fraction_a": pa[i].small_std_fraction if hidden else None,
            "small_std_fraction_b": pb[i].small_std_fraction if hidden else None,
            "nonoverlap_fraction": overlap[i] if hidden else None,
            "stable_rank_a": ra[i].stable_rank,
            "stable_rank_b": rb[i].stable_rank,
            "eps_rank_a": ra[i].eps_rank,
            "eps_rank_b": rb[i].eps_rank,
        })
    n = len(d) if hasattr(d, "__len__") else 0
    meta = {
        "lambda": float(lam),
        "depth": depth,
        "layer_dims": list(a.arch.layer_dims),
        "n_samples": n,
        "overlap_mode": overlap_mode,
        "aggregation": aggregation,
        **(metadata or {}),
    }
    report = DiagnosticsReport(meta, rows)
    validate_report(report.to_dict())
    return report
