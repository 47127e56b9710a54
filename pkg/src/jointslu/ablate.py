"""Directional ablation grids and their comparison report."""

from __future__ import annotations

from dataclasses import dataclass


def _stage(kind: str, **kw) -> dict:
    return {"kind": kind, **kw}


def directional_grids(stage: dict | None = None) -> dict[str, list[dict]]:
    """Three two-cell comparisons; ``stage`` holds shared stage fields (epochs, lr, ...)."""
    s = dict(stage or {})
    return {
        "jnt_vs_rnnt_only": [
            {"name": "jnt", "override": {"stages": [_stage("slu_adapt", **s)]}},
            {"name": "rnnt_only", "override": {"stages": [_stage("slu_adapt", **{**s, "lam": 1.0})]}},
        ],
        "asr_heads_vs_slu_heads": [
            {"name": "heads_asr_asr", "override": {"encoder": {"sctc_targets": ["asr", "asr"]},
                                                   "stages": [_stage("slu_adapt", **s)]}},
            {"name": "heads_slu_slu", "override": {"encoder": {"sctc_targets": ["slu", "slu"]},
                                                   "stages": [_stage("slu_adapt", **s)]}},
        ],
        "boe_vs_no_boe": [
            {"name": "kt_boe", "override": {"stages": [_stage("slu_adapt_kt", **{**s, "use_boe": True})]}},
            {"name": "kt_no_boe", "override": {"stages": [_stage("slu_adapt_kt", **{**s, "use_boe": False})]}},
        ],
    }


# (comparison, better cell, worse cell, metric)
EXPECTATIONS = [
    ("jnt_vs_rnnt_only", "jnt", "rnnt_only", "slu_f1"),
    ("asr_heads_vs_slu_heads", "heads_asr_asr", "heads_slu_slu", "slu_f1"),
    ("boe_vs_no_boe", "kt_boe", "kt_no_boe", "intent_acc"),
]


@dataclass
class Direction:
    comparison: str
    metric: str
    better: str
    worse: str
    better_mean: float
    worse_mean: float

    @property
    def holds(self) -> bool:
        # a tie (e.g. both cells at 0) says nothing about direction
        return self.better_mean > self.worse_mean

    def line(self) -> str:
        flag = "ok" if self.holds else ("FLAGGED tie" if self.better_mean == self.worse_mean else "FLAGGED")
        return (f"{self.comparison}: {self.better} {self.metric}={self.better_mean:.4f} vs "
                f"{self.worse} {self.metric}={self.worse_mean:.4f} [{flag}]")


def directions(summary: dict[str, dict[str, float]]) -> list[Direction]:
    out = []
    for comp, good, bad, metric in EXPECTATIONS:
        if good in summary and bad in summary:
            out.append(Direction(comp, metric, good, bad, summary[good][metric], summary[bad][metric]))
    return out
