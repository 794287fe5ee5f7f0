"""End-to-end extraction metrics: per-field precision-recall tables, Max F1,
field filtering, macro averaging, and learning-curve report assembly."""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from . import candgen
from .assign import PRPoint, sweep_thresholds
from .docmodel import Document, TargetSchema
from .neighborhood import FeatureConfig
from .scorer import (
    ScoredCandidate,
    ScorerParams,
    batch_logits_encoded,
    encode_neighbor_sets,
    _sigmoid,
)
from .training import FeatureCache


class NoIncludedFieldsError(ValueError):
    """Every field was filtered out; the macro average is undefined."""


@dataclass(frozen=True)
class EvalFilters:
    """Field inclusion rule: strictly more than ``min_coverage`` candidate
    coverage and at least ``min_ground_truth`` labeled documents."""

    min_coverage: float = 0.8
    min_ground_truth: int = 40

    def to_json(self) -> dict:
        return {"min_coverage": self.min_coverage, "min_ground_truth": self.min_ground_truth}

    @classmethod
    def from_json(cls, data: dict) -> "EvalFilters":
        return cls(**data)


@dataclass
class FieldMetrics:
    field_name: str
    coverage: float
    n_ground_truth: int
    pr_points: list[PRPoint]
    max_f1: float
    included: bool

    def to_json(self) -> dict:
        return {
            "field_name": self.field_name,
            "coverage": self.coverage,
            "n_ground_truth": self.n_ground_truth,
            "max_f1": self.max_f1,
            "included": self.included,
            "pr_points": [list(p) for p in self.pr_points],
        }


@dataclass
class EvaluationReport:
    fields: list[FieldMetrics]
    macro_f1: float

    def field(self, name: str) -> FieldMetrics:
        for fm in self.fields:
            if fm.field_name == name:
                return fm
        raise KeyError(name)

    def to_json(self) -> dict:
        return {"macro_f1": self.macro_f1, "fields": [fm.to_json() for fm in self.fields]}


def max_f1(points: Sequence[PRPoint]) -> float:
    """Max of 2PR/(P+R) along the curve; 0 where P+R is 0 or no points."""
    best = 0.0
    for p in points:
        s = p.precision + p.recall
        f1 = (2.0 * p.precision * p.recall / s) if s > 0 else 0.0
        best = max(best, f1)
    return best


def macro_average(metrics: Sequence[FieldMetrics]) -> float:
    """Unweighted mean of max_f1 over included fields only."""
    included = [m.max_f1 for m in metrics if m.included]
    if not included:
        raise NoIncludedFieldsError("no field passed the coverage/label-count filters")
    return sum(included) / len(included)


def median_over_seeds(values: Sequence[float]) -> tuple[float, float, float]:
    """(median, min, max); even-length medians average the middle two."""
    if not values:
        raise ValueError("no values")
    return statistics.median(values), min(values), max(values)


# ---------------------------------------------------------------------------
# Corpus scoring
# ---------------------------------------------------------------------------

@dataclass
class ScoredCorpus:
    """Model scores for every (document, field, candidate) triple, plus the
    candidate values needed downstream by assignment and metrics."""

    by_doc: dict[str, dict[str, list[ScoredCandidate]]]
    values: dict[str, str]  # candidate_id -> canonical value
    candidates_by_doc: dict[str, dict[str, candgen.Candidate]]


def score_corpus(
    params: ScorerParams,
    docs: Sequence[Document],
    schema: TargetSchema,
    feature_cfg: FeatureConfig,
    cache: FeatureCache | None = None,
) -> ScoredCorpus:
    """Run candidate generation, neighborhood extraction, and batched
    scoring of every (field, same-typed candidate) pair."""
    cache = cache or FeatureCache(feature_cfg)
    rows: list[tuple[str, str, str]] = []
    neighbor_sets = []
    field_idx: list[int] = []
    values: dict[str, str] = {}
    candidates_by_doc: dict[str, dict[str, candgen.Candidate]] = {}
    by_doc: dict[str, dict[str, list[ScoredCandidate]]] = {}
    for doc in docs:
        cands, sets = cache.features(doc, schema.field_types)
        candidates_by_doc[doc.doc_id] = {c.candidate_id: c for c in cands}
        by_doc[doc.doc_id] = {f.name: [] for f in schema.fields}
        by_type: dict[candgen.FieldType, list[candgen.Candidate]] = {}
        for c in cands:
            by_type.setdefault(c.field_type, []).append(c)
            values[c.candidate_id] = c.canonical_value
        for f in schema.fields:
            fi = params.field_index(f.name)
            for c in by_type.get(f.field_type, ()):
                rows.append((doc.doc_id, f.name, c.candidate_id))
                neighbor_sets.append(sets[c.candidate_id])
                field_idx.append(fi)
    if rows:
        enc = encode_neighbor_sets(neighbor_sets, params.vocab, field_idx=field_idx)
        logits = batch_logits_encoded(enc, params)
        scores = _sigmoid(logits)
        for (doc_id, fname, cid), logit, score in zip(rows, logits, scores):
            by_doc[doc_id][fname].append(
                ScoredCandidate(
                    candidate_id=cid, field_name=fname, score=float(score), logit=float(logit)
                )
            )
    return ScoredCorpus(by_doc=by_doc, values=values, candidates_by_doc=candidates_by_doc)


def metrics_from_scored(
    scored: ScoredCorpus,
    docs: Sequence[Document],
    schema: TargetSchema,
    filters: EvalFilters = EvalFilters(),
) -> list[FieldMetrics]:
    """Metrics from already-computed scores: usable with any scorer,
    including oracle scorers in tests."""
    accepted = {
        doc.doc_id: {f.name: doc.accepted_values(f.name) for f in schema.fields} for doc in docs
    }
    tables = sweep_thresholds(scored.by_doc, scored.values, accepted, schema)
    coverage = candgen.candidate_coverage(docs, schema)
    out = []
    for f in schema.fields:
        n_gt = sum(1 for doc in docs if doc.accepted_values(f.name))
        points = tables[f.name]
        cov = coverage[f.name]
        out.append(
            FieldMetrics(
                field_name=f.name,
                coverage=cov,
                n_ground_truth=n_gt,
                pr_points=points,
                max_f1=max_f1(points),
                included=(cov > filters.min_coverage and n_gt >= filters.min_ground_truth),
            )
        )
    return out


def evaluate(
    params: ScorerParams,
    test_docs: Sequence[Document],
    schema: TargetSchema,
    feature_cfg: FeatureConfig,
    filters: EvalFilters = EvalFilters(),
    cache: FeatureCache | None = None,
) -> EvaluationReport:
    """Full-pipeline evaluation on a labeled, held-out corpus."""
    for doc in test_docs:
        if doc.ground_truth is None:
            raise ValueError(f"test document {doc.doc_id!r} has no ground truth")
    scored = score_corpus(params, test_docs, schema, feature_cfg, cache)
    fields = metrics_from_scored(scored, test_docs, schema, filters)
    return EvaluationReport(fields=fields, macro_f1=macro_average(fields))


# ---------------------------------------------------------------------------
# Learning-curve reports
# ---------------------------------------------------------------------------

@dataclass
class RegimeReport:
    regime: str
    target_train_size: int
    macro_f1_by_seed: dict[int, float]
    median: float
    min: float
    max: float
    fields: list[FieldMetrics] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "regime": self.regime,
            "target_train_size": self.target_train_size,
            "macro_f1_by_seed": {str(k): v for k, v in sorted(self.macro_f1_by_seed.items())},
            "median": self.median,
            "min": self.min,
            "max": self.max,
            "fields": [fm.to_json() for fm in self.fields],
        }


def build_regime_report(
    regime: str, size: int, per_seed: Mapping[int, EvaluationReport]
) -> RegimeReport:
    """Aggregate one (regime, size) cell across seeds; per-field metrics
    come from the run whose macro F1 is closest to the median (lowest seed
    on ties)."""
    macros = {seed: rep.macro_f1 for seed, rep in per_seed.items()}
    med, lo, hi = median_over_seeds(list(macros.values()))
    rep_seed = min(sorted(macros), key=lambda s: (abs(macros[s] - med), s))
    return RegimeReport(
        regime=regime,
        target_train_size=size,
        macro_f1_by_seed=macros,
        median=med,
        min=lo,
        max=hi,
        fields=per_seed[rep_seed].fields,
    )


# ---------------------------------------------------------------------------
# Plotting (data-only SVG, byte-stable)
# ---------------------------------------------------------------------------

_SERIES_COLORS = {
    "scratch": "#d62728",
    "transfer": "#1f77b4",
    "multidomain": "#2ca02c",
}
_FALLBACK_COLORS = ["#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]


def render_learning_curve_svg(
    series: Mapping[str, Sequence[tuple[int, float, float, float]]],
    title: str = "Macro Max F1 vs labeled target documents",
) -> str:
    """Minimal SVG learning curve: one polyline with min/max error bars per
    regime, log-scaled document counts. Output is a pure function of the
    data (no timestamps or ids), so reruns are byte-identical."""
    import math

    w, h = 640, 440
    ml, mr, mt, mb = 70, 30, 50, 60
    all_sizes = sorted({s for pts in series.values() for s, *_ in pts})
    if not all_sizes:
        all_sizes = [1]
    lo_x, hi_x = math.log10(min(all_sizes)), math.log10(max(all_sizes))
    if hi_x - lo_x < 1e-9:
        lo_x, hi_x = lo_x - 0.5, hi_x + 0.5

    def sx(size: int) -> float:
        return ml + (math.log10(size) - lo_x) / (hi_x - lo_x) * (w - ml - mr)

    def sy(f1: float) -> float:
        return mt + (1.0 - f1) * (h - mt - mb)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
        f'<text x="{w / 2:.1f}" y="24" text-anchor="middle" font-size="15" '
        f'font-family="sans-serif">{title}</text>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = sy(frac)
        parts.append(
            f'<line x1="{ml}" y1="{y:.2f}" x2="{w - mr}" y2="{y:.2f}" '
            f'stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{ml - 8}" y="{y + 4:.2f}" text-anchor="end" font-size="11" '
            f'font-family="sans-serif">{frac:.2f}</text>'
        )
    for size in all_sizes:
        x = sx(size)
        parts.append(
            f'<text x="{x:.2f}" y="{h - mb + 18}" text-anchor="middle" font-size="11" '
            f'font-family="sans-serif">{size}</text>'
        )
    parts.append(
        f'<line x1="{ml}" y1="{sy(0.0):.2f}" x2="{w - mr}" y2="{sy(0.0):.2f}" '
        f'stroke="black" stroke-width="1"/>'
    )
    parts.append(
        f'<line x1="{ml}" y1="{sy(0.0):.2f}" x2="{ml}" y2="{sy(1.0):.2f}" '
        f'stroke="black" stroke-width="1"/>'
    )
    fallback = iter(_FALLBACK_COLORS)
    legend_y = mt
    for name in sorted(series):
        pts = sorted(series[name])
        color = _SERIES_COLORS.get(name) or next(fallback)
        for size, _, lo, hi in pts:
            x = sx(size)
            parts.append(
                f'<line x1="{x:.2f}" y1="{sy(lo):.2f}" x2="{x:.2f}" y2="{sy(hi):.2f}" '
                f'stroke="{color}" stroke-width="1"/>'
            )
        coords = " ".join(f"{sx(s):.2f},{sy(m):.2f}" for s, m, _, _ in pts)
        if len(pts) > 1:
            parts.append(
                f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>'
            )
        for size, med, _, _ in pts:
            parts.append(
                f'<circle cx="{sx(size):.2f}" cy="{sy(med):.2f}" r="3.5" fill="{color}"/>'
            )
        parts.append(
            f'<rect x="{w - mr - 150}" y="{legend_y}" width="12" height="12" fill="{color}"/>'
        )
        parts.append(
            f'<text x="{w - mr - 132}" y="{legend_y + 11}" font-size="12" '
            f'font-family="sans-serif">{name}</text>'
        )
        legend_y += 18
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def curve_points_csv(reports: Sequence[RegimeReport]) -> str:
    lines = ["regime,size,median,min,max"]
    for r in sorted(reports, key=lambda r: (r.regime, r.target_train_size)):
        lines.append(
            f"{r.regime},{r.target_train_size},{r.median:.6f},{r.min:.6f},{r.max:.6f}"
        )
    return "\n".join(lines) + "\n"
