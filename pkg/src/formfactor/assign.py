"""Final pipeline stage: per-field argmax assignment with optional score
thresholds and document-type business constraints, plus the threshold sweep
used to trace precision-recall tables."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

from .candgen import Candidate
from .docmodel import ConstraintKind, TargetSchema
from .scorer import ScoredCandidate


@dataclass(frozen=True)
class FieldAssignment:
    candidate_id: str
    canonical_value: str
    score: float


@dataclass(frozen=True)
class Extraction:
    """Per-document result: fields map to their winning candidate; fields
    with no eligible candidate are simply absent."""

    doc_id: str
    fields: Mapping[str, FieldAssignment]

    def to_json(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "fields": {
                name: {
                    "candidate_id": fa.candidate_id,
                    "value": fa.canonical_value,
                    "score": fa.score,
                }
                for name, fa in sorted(self.fields.items())
            },
        }


def _eligible(
    scored: Sequence[ScoredCandidate], threshold: float | None
) -> list[ScoredCandidate]:
    keep = [s for s in scored if threshold is None or s.score >= threshold]
    # Highest score first; candidate_id breaks ties deterministically.
    return sorted(keep, key=lambda s: (-s.score, s.candidate_id))


def assign(
    doc_id: str,
    scored_by_field: Mapping[str, Sequence[ScoredCandidate]],
    candidates: Mapping[str, Candidate],
    schema: TargetSchema,
) -> Extraction:
    """Pick each field's highest-scoring candidate at or above its threshold,
    then repair constraint violations greedily: drop the lower-scoring side
    of the first violated constraint and retry that field with its next-best
    candidate. Retries are bounded by the total candidate count, so this
    always terminates; unassignable fields end up absent."""
    ranked = {
        f.name: _eligible(scored_by_field.get(f.name, ()), f.threshold) for f in schema.fields
    }
    cursor = {name: 0 for name in ranked}

    def current(name: str) -> ScoredCandidate | None:
        lst = ranked[name]
        i = cursor[name]
        return lst[i] if i < len(lst) else None

    def value_of(sc: ScoredCandidate) -> str:
        return candidates[sc.candidate_id].canonical_value

    budget = sum(len(v) for v in ranked.values()) + len(ranked)
    for _ in range(budget + 1):
        violated = None
        for c in schema.constraints:
            a, b = current(c.field_a), current(c.field_b)
            if a is None or b is None:
                continue
            if c.kind == ConstraintKind.DATE_PRECEDES:
                if value_of(a) > value_of(b):  # ISO dates compare lexicographically
                    violated = (c, a, b)
                    break
            elif c.kind == ConstraintKind.DISTINCT_VALUES:
                if value_of(a) == value_of(b):
                    violated = (c, a, b)
                    break
        if violated is None:
            break
        c, a, b = violated
        # Drop the lower-scoring side; on an exact tie the second field yields.
        loser = c.field_a if a.score < b.score else c.field_b
        cursor[loser] += 1

    fields: dict[str, FieldAssignment] = {}
    for name in ranked:
        sc = current(name)
        if sc is not None:
            fields[name] = FieldAssignment(
                candidate_id=sc.candidate_id,
                canonical_value=value_of(sc),
                score=sc.score,
            )
    return Extraction(doc_id=doc_id, fields=fields)


# ---------------------------------------------------------------------------
# Threshold sweep
# ---------------------------------------------------------------------------

class PRPoint(NamedTuple):
    threshold: float
    precision: float
    recall: float
    predicted: int  # predicted == 0 means the 1.0 precision is by convention


def argmax_candidate(
    scored: Sequence[ScoredCandidate], values: Mapping[str, str]
) -> tuple[float, str] | None:
    """Highest-scoring candidate (score, canonical value), ties broken by
    candidate_id. Thresholds do not change the winner, only whether it is
    emitted, so the sweep can gate this single choice."""
    if not scored:
        return None
    best = min(scored, key=lambda s: (-s.score, s.candidate_id))
    return best.score, values[best.candidate_id]


def pr_table(
    observations: Sequence[tuple[float, bool]], n_ground_truth: int
) -> list[PRPoint]:
    """PR points for one field from per-document (argmax score, correct)
    observations, swept over every distinct observed score plus 0 and 1.

    Precision at zero predictions is reported as 1.0 by convention (the
    ``predicted`` count flags it); recall uses ``n_ground_truth`` as the
    denominator.
    """
    thresholds = sorted({0.0, 1.0} | {s for s, _ in observations})
    points = []
    for t in thresholds:
        kept = [(s, ok) for s, ok in observations if s >= t]
        predicted = len(kept)
        correct = sum(1 for _, ok in kept if ok)
        precision = correct / predicted if predicted else 1.0
        recall = correct / n_ground_truth if n_ground_truth else 0.0
        points.append(PRPoint(t, precision, recall, predicted))
    return points


def sweep_thresholds(
    scored_by_doc: Mapping[str, Mapping[str, Sequence[ScoredCandidate]]],
    values_by_candidate: Mapping[str, str],
    accepted_values: Mapping[str, Mapping[str, Sequence[str]]],
    schema: TargetSchema,
) -> dict[str, list[PRPoint]]:
    """Per-field precision/recall tables over a labeled corpus.

    ``scored_by_doc`` maps doc_id -> field -> scored candidates;
    ``accepted_values`` maps doc_id -> field -> ground-truth canonical
    values. A document counts toward a field's recall denominator iff it
    has at least one ground-truth value for it. Fields that were never
    scored anywhere yield empty tables.
    """
    out: dict[str, list[PRPoint]] = {}
    for f in schema.fields:
        observations: list[tuple[float, bool]] = []
        n_gt = 0
        any_scored = False
        for doc_id, by_field in scored_by_doc.items():
            accepted = set(accepted_values.get(doc_id, {}).get(f.name, ()))
            if accepted:
                n_gt += 1
            scored = by_field.get(f.name, ())
            if scored:
                any_scored = True
            best = argmax_candidate(scored, values_by_candidate)
            if best is not None:
                score, value = best
                observations.append((score, value in accepted))
        out[f.name] = pr_table(observations, n_gt) if any_scored else []
    return out
