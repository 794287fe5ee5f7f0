"""Candidate generator and parser tests, with independent oracles for the
derived values."""

from datetime import date
from decimal import Decimal

import numpy as np
import pytest

from formfactor.candgen import (
    Candidate,
    candidate_coverage,
    canonicalize,
    generate_candidates,
    parse_alphanumeric,
    parse_amount,
    parse_date,
    parse_integer,
    parse_numeric,
)
from formfactor.docmodel import BBox, FieldType, Token, make_document
from formfactor.synthcorpus import CorpusSpec, generate_corpus


def _make_doc(texts, language="en"):
    tokens = []
    for i, text in enumerate(texts):
        x = 0.05 + 0.09 * (i % 10)
        y = 0.05 + 0.05 * (i // 10)
        tokens.append(Token(text, BBox(x, y, x + 0.08, y + 0.02), 0))
    return make_document("doc", language, "test", "tpl", [(612, 792)], tokens)


class TestParseDate:
    def test_figure_example_slash_two_digit_year(self):
        # Day 22 > 12, so the reading is unambiguous.
        assert parse_date("10/22/18", "en") == "2018-10-22"

    def test_empty_string(self):
        assert parse_date("", "en") is None

    def test_french_month_name(self):
        # Cross-checked against the calendar library.
        assert parse_date("3 janvier 2020", "fr") == date(2020, 1, 3).isoformat()

    def test_english_month_name_with_comma(self):
        assert parse_date("October 22, 2018", "en") == "2018-10-22"

    def test_iso(self):
        assert parse_date("2019-02-28", "en") == "2019-02-28"

    def test_ambiguous_resolved_by_language(self):
        assert parse_date("03/04/2020", "en") == "2020-03-04"
        assert parse_date("03/04/2020", "fr") == "2020-04-03"

    def test_disambiguated_by_magnitude_overrides_language(self):
        assert parse_date("22/10/2018", "en") == "2018-10-22"

    def test_invalid_calendar_date(self):
        assert parse_date("02/30/2020", "en") is None
        assert parse_date("13/13/2020", "en") is None

    def test_two_digit_year_pivot(self):
        assert parse_date("01/15/68", "en") == "2068-01-15"
        assert parse_date("01/15/69", "en") == "1969-01-15"

    def test_dot_separated_french(self):
        assert parse_date("22.10.2018", "fr") == "2018-10-22"

    def test_garbage(self):
        assert parse_date("not a date", "en") is None
        assert parse_date("12/34", "en") is None


def _decimal_oracle(text: str, language: str):
    """Independent canonical-amount computation via decimal.Decimal."""
    cleaned = text
    for ch in "$€£¥":
        cleaned = cleaned.replace(ch, "")
    cleaned = cleaned.strip()
    if language == "fr":
        cleaned = cleaned.replace(" ", "").replace(" ", "").replace(".", "")
        cleaned = cleaned.replace(",", ".")
    else:
        cleaned = cleaned.replace(",", "").replace(" ", "")
    try:
        value = Decimal(cleaned)
    except Exception:
        return None
    sign, digits, exp = value.as_tuple()
    text_out = format(value, "f")
    if "." in text_out:
        int_part, frac = text_out.split(".")
        while len(frac) > 2 and frac.endswith("0"):
            frac = frac[:-1]
        int_part = str(int(int_part))  # strips zeros, keeps sign
        text_out = f"{int_part}.{frac}" if frac else int_part
    else:
        text_out = str(int(text_out))
    return text_out


class TestParseAmount:
    @pytest.mark.parametrize(
        "text,language",
        [
            ("$1,234.50", "en"),
            ("1 234,50 €", "fr"),
            ("1234.56", "en"),
            ("1.234,56", "fr"),
            ("$ 99.00", "en"),
            ("0,75", "fr"),
            ("12,345,678.01", "en"),
        ],
    )
    def test_against_decimal_oracle(self, text, language):
        assert parse_amount(text, language) == _decimal_oracle(text, language)

    def test_not_a_number(self):
        assert parse_amount("abc", "en") is None
        assert parse_amount("", "en") is None
        assert parse_amount("$", "en") is None

    def test_bad_grouping_rejected(self):
        assert parse_amount("1,23.45", "en") is None

    def test_trailing_zero_rule(self):
        assert parse_amount("1234.500", "en") == "1234.50"
        assert parse_amount("1234.5", "en") == "1234.5"
        assert parse_amount("1.2345", "en") == "1.2345"


class TestSimpleParsers:
    def test_integer_strips_leading_zeros(self):
        assert parse_integer("0042") == "42"
        assert parse_integer("0") == "0"
        assert parse_integer("-007") == "-7"
        assert parse_integer("+12") == "12"
        assert parse_integer("1,234") == "1234"

    def test_integer_rejects(self):
        assert parse_integer("12.5") is None
        assert parse_integer("abc") is None

    def test_numeric(self):
        assert parse_numeric("12.5") == "12.5"
        assert parse_numeric("012.500") == "12.5"
        assert parse_numeric("12.5.3") is None
        assert parse_numeric("42") == "42"

    def test_alphanumeric_uppercases(self):
        # Regex oracle: uppercase of the input when it matches the shape.
        assert parse_alphanumeric("INV-2021-0042") == "INV-2021-0042"
        assert parse_alphanumeric("inv-2021-0042") == "INV-2021-0042"

    def test_alphanumeric_requires_digit_and_length(self):
        assert parse_alphanumeric("ABC") is None  # no digit
        assert parse_alphanumeric("A1") is None  # too short
        assert parse_alphanumeric("-A1-") is None  # bad edges
        assert parse_alphanumeric("A 1 B") is None


class TestCanonicalizationProperties:
    def test_idempotence(self):
        samples = [
            (FieldType.DATE, "10/22/18", "en"),
            (FieldType.DATE, "3 janvier 2020", "fr"),
            (FieldType.DATE, "2020-02-29", "en"),
            (FieldType.AMOUNT, "$1,234.50", "en"),
            (FieldType.AMOUNT, "1 234,56 €", "fr"),
            (FieldType.AMOUNT, "0,75", "fr"),
            (FieldType.INTEGER, "0042", "en"),
            (FieldType.INTEGER, "-7", "en"),
            (FieldType.INTEGER, "1,234", "en"),
            (FieldType.NUMERIC, "012.500", "en"),
            (FieldType.NUMERIC, "42", "en"),
            (FieldType.ALPHANUMERIC, "inv-2021-0042", "en"),
            (FieldType.ALPHANUMERIC, "a1b2c3", "fr"),
        ]
        for ftype, text, language in samples:
            once = canonicalize(text, ftype, language)
            assert once is not None, (ftype, text)
            twice = canonicalize(once, ftype, language)
            assert twice == once


class TestGenerateCandidates:
    def test_figure_date_token(self):
        doc = _make_doc(["Date", "10/22/18"])
        cands = generate_candidates(doc, FieldType.DATE)
        assert [c.canonical_value for c in cands] == ["2018-10-22"]

    def test_no_digits_no_amounts(self):
        doc = _make_doc(["hello", "world", "foo"])
        assert generate_candidates(doc, FieldType.AMOUNT) == []

    def test_adjacent_symbol_amount_span(self):
        doc = _make_doc(["$", "1,234.50"])
        cands = generate_candidates(doc, FieldType.AMOUNT)
        values = {c.canonical_value for c in cands}
        assert "1234.50" in values
        two_token = [c for c in cands if c.token_span == (0, 2)]
        assert len(two_token) == 1
        assert two_token[0].canonical_value == _decimal_oracle("$ 1,234.50", "en")

    def test_deterministic(self):
        corpus = generate_corpus(
            CorpusSpec(doc_type="invoice", language="en", n_docs=2, seed=1, test_fraction=0.0)
        )
        doc = corpus.train_docs[0]
        for t in FieldType:
            assert generate_candidates(doc, t) == generate_candidates(doc, t)

    def test_type_soundness_and_dedup(self):
        corpus = generate_corpus(
            CorpusSpec(doc_type="invoice", language="fr", n_docs=3, seed=2, test_fraction=0.0)
        )
        for doc in corpus.train_docs:
            for t in FieldType:
                cands = generate_candidates(doc, t)
                spans = [(c.token_span, c.field_type) for c in cands]
                assert len(spans) == len(set(spans)), "dedup by (span, type)"
                for c in cands:
                    assert canonicalize(c.raw_text, t, doc.language) == c.canonical_value
                    assert c.token_span[0] < c.token_span[1]
                    pages = {doc.tokens[i].page_index for i in c.span_indices}
                    assert pages == {c.page_index}

    def test_candidate_ids_unique_within_document(self):
        corpus = generate_corpus(
            CorpusSpec(doc_type="paystub", language="en", n_docs=2, seed=4, test_fraction=0.0)
        )
        for doc in corpus.train_docs:
            ids = []
            for t in FieldType:
                ids.extend(c.candidate_id for c in generate_candidates(doc, t))
            assert len(ids) == len(set(ids))


class TestCandidateDump:
    def test_jsonl_round_trips_fields(self):
        import json

        from formfactor.candgen import candidates_to_jsonl

        doc = _make_doc(["Date", "10/22/18", "$", "1,234.50"])
        cands = generate_candidates(doc, FieldType.DATE) + generate_candidates(
            doc, FieldType.AMOUNT
        )
        dump = candidates_to_jsonl(cands)
        lines = [json.loads(l) for l in dump.splitlines()]
        assert len(lines) == len(cands)
        assert lines[0]["canonical_value"] == "2018-10-22"
        assert all(
            {"candidate_id", "doc_id", "field_type", "token_span", "raw_text",
             "canonical_value", "bbox", "page_index"} <= set(l) for l in lines
        )

    def test_empty_dump(self):
        from formfactor.candgen import candidates_to_jsonl

        assert candidates_to_jsonl([]) == ""


class TestCoverage:
    def test_verbatim_corpus_full_coverage(self):
        corpus = generate_corpus(
            CorpusSpec(doc_type="invoice", language="en", n_docs=6, seed=3, test_fraction=0.0)
        )
        cov = candidate_coverage(corpus.train_docs, corpus.schema)
        assert all(v == 1.0 for v in cov.values()), cov

    def test_absent_value_zero_coverage(self):
        from formfactor.docmodel import GroundTruthValue

        doc = _make_doc(["hello", "world"])
        doc = make_document(
            "d", "en", "test", "t", [(612, 792)], doc.tokens,
            ground_truth={"amount_due": [GroundTruthValue("99.00")]},
        )
        from formfactor.docmodel import FieldSpec, TargetSchema

        schema = TargetSchema("test", (FieldSpec("amount_due", FieldType.AMOUNT),))
        cov = candidate_coverage([doc], schema)
        assert cov["amount_due"] == 0.0

    def test_unlabeled_document_is_an_error(self):
        doc = _make_doc(["99.00"])
        from formfactor.docmodel import FieldSpec, TargetSchema

        schema = TargetSchema("test", (FieldSpec("amount_due", FieldType.AMOUNT),))
        with pytest.raises(ValueError):
            candidate_coverage([doc], schema)

    def test_coverage_matches_brute_force_recount(self):
        corpus = generate_corpus(
            CorpusSpec(
                doc_type="invoice", language="fr", n_docs=40, seed=8,
                test_fraction=0.0, noise=0.15,
            )
        )
        cov = candidate_coverage(corpus.train_docs, corpus.schema)
        # Independent recount over (doc, ground truth, candidates) triples.
        for f in corpus.schema.fields:
            total = matched = 0
            for doc in corpus.train_docs:
                values = {
                    c.canonical_value for c in generate_candidates(doc, f.field_type)
                }
                for gt in doc.ground_truth.get(f.name, ()):
                    total += 1
                    matched += gt.canonical_value in values
            expected = matched / total if total else 1.0
            assert cov[f.name] == expected
        # The noise knob must actually reduce coverage somewhere.
        assert any(v < 1.0 for v in cov.values())
