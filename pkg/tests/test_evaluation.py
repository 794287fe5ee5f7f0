"""End-to-end metric tests: oracle scorers, brute-force recounts, field
filtering, and report assembly."""

import numpy as np
import pytest

import formfactor as ff
from formfactor.assign import PRPoint
from formfactor.candgen import candidate_coverage, generate_candidates
from formfactor.evaluation import (
    EvalFilters,
    EvaluationReport,
    FieldMetrics,
    NoIncludedFieldsError,
    ScoredCorpus,
    build_regime_report,
    curve_points_csv,
    macro_average,
    max_f1,
    median_over_seeds,
    metrics_from_scored,
    render_learning_curve_svg,
    score_corpus,
    evaluate,
)
from formfactor.neighborhood import FeatureConfig
from formfactor.scorer import ScoredCandidate
from formfactor.synthcorpus import CorpusSpec, generate_corpus

TIGHT = FeatureConfig(n_max=4, radius=0.14, weight_right=2.5, weight_below=2.5)
LOOSE_FILTERS = EvalFilters(min_coverage=0.8, min_ground_truth=1)


@pytest.fixture(scope="module")
def corpus():
    return generate_corpus(
        CorpusSpec(doc_type="invoice", language="en", n_docs=8, seed=77, test_fraction=0.0)
    )


def _oracle_scored(docs, schema, good=0.99, bad=0.01):
    """Scores 'good' for candidates whose canonical value matches the
    field's ground truth and 'bad' otherwise: the perfect-scorer bound."""
    by_doc = {}
    values = {}
    candidates_by_doc = {}
    for doc in docs:
        per_field = {f.name: [] for f in schema.fields}
        cands = {}
        for f in schema.fields:
            accepted = set(doc.accepted_values(f.name))
            for c in generate_candidates(doc, f.field_type):
                cands[c.candidate_id] = c
                values[c.candidate_id] = c.canonical_value
                score = good if c.canonical_value in accepted else bad
                per_field[f.name].append(
                    ScoredCandidate(c.candidate_id, f.name, score, 0.0)
                )
        by_doc[doc.doc_id] = per_field
        candidates_by_doc[doc.doc_id] = cands
    return ScoredCorpus(by_doc=by_doc, values=values, candidates_by_doc=candidates_by_doc)


class TestOracleScorer:
    def test_perfect_scorer_perfect_macro(self, corpus):
        scored = _oracle_scored(corpus.train_docs, corpus.schema)
        metrics = metrics_from_scored(scored, corpus.train_docs, corpus.schema, LOOSE_FILTERS)
        for fm in metrics:
            assert fm.included
            assert fm.max_f1 == 1.0
        assert macro_average(metrics) == 1.0

    def test_constant_scorer_matches_brute_force(self, corpus):
        # All scores equal: max F1 equals the F1 of the candidate_id-tie-broken
        # argmax at threshold zero, recomputed here by hand.
        schema = corpus.schema
        scored = _oracle_scored(corpus.train_docs, schema, good=0.5, bad=0.5)
        metrics = metrics_from_scored(scored, corpus.train_docs, schema, LOOSE_FILTERS)
        for fm in metrics:
            correct = assigned = n_gt = 0
            for doc in corpus.train_docs:
                accepted = set(doc.accepted_values(fm.field_name))
                if accepted:
                    n_gt += 1
                entries = scored.by_doc[doc.doc_id][fm.field_name]
                if entries:
                    best = min(entries, key=lambda s: (-s.score, s.candidate_id))
                    assigned += 1
                    correct += scored.values[best.candidate_id] in accepted
            if assigned and n_gt:
                p, r = correct / assigned, correct / n_gt
                expected = 2 * p * r / (p + r) if p + r else 0.0
            else:
                expected = 0.0
            assert fm.max_f1 == pytest.approx(expected)


class TestHandComputedPRTable:
    def test_three_doc_fixture(self):
        # Three documents, one field; argmax scores and correctness chosen by
        # hand; expected PR points enumerated manually.
        schema = ff.TargetSchema(
            "t", (ff.FieldSpec("f", ff.FieldType.INTEGER),)
        )
        scored_by_doc = {
            "d1": {"f": [ScoredCandidate("c1", "f", 0.9, 0.0)]},
            "d2": {"f": [ScoredCandidate("c2", "f", 0.6, 0.0)]},
            "d3": {"f": [ScoredCandidate("c3", "f", 0.3, 0.0)]},
        }
        values = {"c1": "1", "c2": "2", "c3": "3"}
        accepted = {
            "d1": {"f": ["1"]},   # correct at 0.9
            "d2": {"f": ["999"]},  # wrong at 0.6
            "d3": {"f": ["3"]},   # correct at 0.3
        }
        from formfactor.assign import sweep_thresholds

        table = sweep_thresholds(scored_by_doc, values, accepted, schema)["f"]
        expected = [
            PRPoint(0.0, 2 / 3, 2 / 3, 3),
            PRPoint(0.3, 2 / 3, 2 / 3, 3),
            PRPoint(0.6, 1 / 2, 1 / 3, 2),
            PRPoint(0.9, 1.0, 1 / 3, 1),
            PRPoint(1.0, 1.0, 0.0, 0),
        ]
        assert table == expected
        assert max_f1(table) == pytest.approx(2 / 3)


class TestMacroAverage:
    def _fm(self, name, f1, included=True):
        return FieldMetrics(name, 1.0, 50, [], f1, included)

    def test_simple_mean(self):
        assert macro_average([self._fm("a", 1.0), self._fm("b", 0.0)]) == 0.5

    def test_excluded_field_ignored(self):
        metrics = [self._fm("a", 1.0), self._fm("b", 0.0, included=False)]
        assert macro_average(metrics) == 1.0

    def test_twelve_field_recount(self):
        rng = np.random.default_rng(1)
        f1s = rng.uniform(size=12)
        metrics = [self._fm(f"f{i}", float(v)) for i, v in enumerate(f1s)]
        assert macro_average(metrics) == pytest.approx(float(np.mean(f1s)))

    def test_no_included_fields(self):
        with pytest.raises(NoIncludedFieldsError):
            macro_average([self._fm("a", 1.0, included=False)])


class TestMedianOverSeeds:
    def test_singleton(self):
        assert median_over_seeds([0.2]) == (0.2, 0.2, 0.2)

    def test_even_averages_middle_two(self):
        assert median_over_seeds([0.1, 0.3]) == (pytest.approx(0.2), 0.1, 0.3)

    def test_matches_sort_recount(self):
        rng = np.random.default_rng(3)
        values = [float(v) for v in rng.uniform(size=10)]
        med, lo, hi = median_over_seeds(values)
        s = sorted(values)
        assert med == pytest.approx((s[4] + s[5]) / 2)
        assert (lo, hi) == (min(values), max(values))


class TestEvaluate:
    def test_full_pipeline_report(self, corpus):
        vocab = ff.build_vocab([corpus], 500)
        params = ff.init_params(1, vocab, corpus.schema.field_names)
        report = evaluate(params, corpus.train_docs, corpus.schema, TIGHT, LOOSE_FILTERS)
        assert 0.0 <= report.macro_f1 <= 1.0
        assert {fm.field_name for fm in report.fields} == set(corpus.schema.field_names)
        for fm in report.fields:
            assert fm.coverage == 1.0
            assert fm.n_ground_truth == len(corpus.train_docs)

    def test_unlabeled_test_doc_rejected(self, corpus):
        doc = corpus.train_docs[0]
        unlabeled = ff.docmodel.make_document(
            "u", doc.language, doc.doc_type, "tx", doc.pages, doc.tokens
        )
        vocab = ff.build_vocab([corpus], 100)
        params = ff.init_params(1, vocab, corpus.schema.field_names)
        with pytest.raises(ValueError):
            evaluate(params, [unlabeled], corpus.schema, TIGHT, LOOSE_FILTERS)

    def test_coverage_matches_candgen(self, corpus):
        vocab = ff.build_vocab([corpus], 500)
        params = ff.init_params(1, vocab, corpus.schema.field_names)
        report = evaluate(params, corpus.train_docs, corpus.schema, TIGHT, LOOSE_FILTERS)
        cov = candidate_coverage(corpus.train_docs, corpus.schema)
        for fm in report.fields:
            assert fm.coverage == cov[fm.field_name]

    def test_filters_exclude_low_coverage_and_small_fields(self):
        noisy = generate_corpus(
            CorpusSpec(
                doc_type="invoice", language="en", n_docs=30, seed=15,
                test_fraction=0.0, noise=0.15,
            )
        )
        vocab = ff.build_vocab([noisy], 500)
        params = ff.init_params(1, vocab, noisy.schema.field_names)
        report = evaluate(
            params, noisy.train_docs, noisy.schema, TIGHT,
            EvalFilters(min_coverage=0.8, min_ground_truth=1),
        )
        cov = candidate_coverage(noisy.train_docs, noisy.schema)
        assert any(v <= 0.8 for v in cov.values()), "noise should break coverage"
        assert any(v > 0.8 for v in cov.values())
        for fm in report.fields:
            assert fm.included == (fm.coverage > 0.8 and fm.n_ground_truth >= 1)
        assert any(fm.included for fm in report.fields)
        assert any(not fm.included for fm in report.fields)
        with pytest.raises(NoIncludedFieldsError):
            evaluate(
                params, noisy.train_docs, noisy.schema, TIGHT,
                EvalFilters(min_coverage=0.8, min_ground_truth=1000),
            )

    def test_max_f1_monotone_when_wrong_score_lowered(self, corpus):
        # Lowering an incorrect argmax's score below every threshold never
        # hurts Max F1 (checked against the pipeline's own sweep).
        schema = corpus.schema
        scored = _oracle_scored(corpus.train_docs, schema, good=0.7, bad=0.65)
        metrics_before = metrics_from_scored(scored, corpus.train_docs, schema, LOOSE_FILTERS)
        # push all incorrect candidates to ~0
        for doc in corpus.train_docs:
            for f in schema.fields:
                accepted = set(doc.accepted_values(f.name))
                entries = scored.by_doc[doc.doc_id][f.name]
                for i, s in enumerate(entries):
                    if scored.values[s.candidate_id] not in accepted:
                        entries[i] = ScoredCandidate(s.candidate_id, s.field_name, 0.001, 0.0)
        metrics_after = metrics_from_scored(scored, corpus.train_docs, schema, LOOSE_FILTERS)
        for before, after in zip(metrics_before, metrics_after):
            assert after.max_f1 >= before.max_f1 - 1e-12


class TestRegimeReport:
    def _report(self, macro):
        return EvaluationReport(
            fields=[FieldMetrics("f", 1.0, 50, [], macro, True)], macro_f1=macro
        )

    def test_median_and_field_choice(self):
        per_seed = {1: self._report(0.3), 2: self._report(0.7), 3: self._report(0.5)}
        rr = build_regime_report("scratch", 10, per_seed)
        assert rr.median == 0.5
        assert rr.min == 0.3 and rr.max == 0.7
        assert rr.fields[0].max_f1 == 0.5  # median seed's fields

    def test_csv(self):
        per_seed = {1: self._report(0.4), 2: self._report(0.6)}
        rr = build_regime_report("transfer", 50, per_seed)
        csv = curve_points_csv([rr])
        assert csv.splitlines()[0] == "regime,size,median,min,max"
        assert csv.splitlines()[1].startswith("transfer,50,0.5")


class TestSvg:
    def test_single_point_valid_svg(self):
        svg = render_learning_curve_svg({"scratch": [(10, 0.5, 0.4, 0.6)]})
        import xml.etree.ElementTree as ET

        root = ET.fromstring(svg)
        assert root.tag.endswith("svg")

    def test_byte_stable(self):
        series = {"scratch": [(10, 0.5, 0.4, 0.6), (50, 0.7, 0.6, 0.8)]}
        assert render_learning_curve_svg(series) == render_learning_curve_svg(series)

    def test_multi_series(self):
        series = {
            "scratch": [(10, 0.2, 0.1, 0.3), (50, 0.4, 0.3, 0.5)],
            "transfer": [(10, 0.4, 0.3, 0.5), (50, 0.6, 0.5, 0.7)],
            "multidomain": [(10, 0.7, 0.6, 0.8), (50, 0.9, 0.8, 1.0)],
        }
        svg = render_learning_curve_svg(series)
        assert svg.count("<polyline") == 3
