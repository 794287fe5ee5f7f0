"""Neighborhood extraction tests with brute-force ranking oracles."""

import math

import numpy as np
import pytest

from formfactor.candgen import generate_candidates
from formfactor.docmodel import BBox, FieldType, Token, make_document
from formfactor.neighborhood import (
    FeatureConfig,
    NeighborSet,
    extract_neighbors,
    weighted_distance,
)
from formfactor.synthcorpus import CorpusSpec, generate_corpus


def _doc_from_boxes(entries, language="en"):
    tokens = [Token(text, BBox(*box), 0) for text, box in entries]
    return make_document("d", language, "test", "t", [(612, 792)], tokens)


def _candidate_for(doc, text, field_type=FieldType.DATE):
    for c in generate_candidates(doc, field_type):
        if c.raw_text == text:
            return c
    raise AssertionError(f"no candidate {text!r}")


class TestExtractNeighbors:
    def test_lone_token_has_empty_neighborhood(self):
        doc = _doc_from_boxes([("10/22/18", (0.4, 0.4, 0.48, 0.42))])
        cand = _candidate_for(doc, "10/22/18")
        ns = extract_neighbors(doc, cand, FeatureConfig())
        assert ns.neighbors == ()
        assert ns.pad_count == FeatureConfig().n_max

    def test_key_left_of_value_ranks_before_token_below(self):
        # A date with its key directly left and another token two lines
        # below: the key must come out negative-x, same-line, and first.
        doc = _doc_from_boxes(
            [
                ("Date", (0.30, 0.400, 0.34, 0.416)),
                ("10/22/18", (0.36, 0.400, 0.44, 0.416)),
                ("Total", (0.36, 0.470, 0.41, 0.486)),
            ]
        )
        cand = _candidate_for(doc, "10/22/18")
        ns = extract_neighbors(doc, cand, FeatureConfig())
        assert [n.token_text for n in ns.neighbors] == ["Date", "Total"]
        key = ns.neighbors[0]
        assert key.rel_x < 0
        assert abs(key.rel_y) < 1e-9
        # Brute-force oracle: recompute zone-weighted distances and sort.
        cfg = FeatureConfig()
        cx, cy = cand.bbox.center
        expected = sorted(
            (
                (
                    weighted_distance(t.bbox.center[0] - cx, t.bbox.center[1] - cy, cfg),
                    i,
                )
                for i, t in enumerate(doc.tokens)
                if i not in cand.span_indices
            ),
        )
        assert [i for _, i in expected] == [n.token_index for n in ns.neighbors]

    def test_keeps_n_max_smallest_weighted_distances(self):
        rng = np.random.default_rng(3)
        entries = [("10/22/18", (0.48, 0.48, 0.54, 0.50))]
        for i in range(40):
            # Cluster tokens inside the radius around the candidate.
            x = 0.5 + rng.uniform(-0.2, 0.2)
            y = 0.5 + rng.uniform(-0.2, 0.2)
            entries.append((f"t{i}", (x, y, x + 0.02, y + 0.01)))
        doc = _doc_from_boxes(entries)
        cand = _candidate_for(doc, "10/22/18")
        cfg = FeatureConfig(n_max=16, radius=0.6)
        ns = extract_neighbors(doc, cand, cfg)
        assert len(ns.neighbors) == 16

        cx, cy = cand.bbox.center
        oracle = sorted(
            (
                (weighted_distance(t.bbox.center[0] - cx, t.bbox.center[1] - cy, cfg), i)
                for i, t in enumerate(doc.tokens)
                if i not in cand.span_indices
            )
        )
        oracle_kept = [i for wd, i in oracle if wd <= cfg.radius][:16]
        assert [n.token_index for n in ns.neighbors] == oracle_kept

    def test_candidate_span_excluded(self):
        corpus = generate_corpus(
            CorpusSpec(doc_type="invoice", language="fr", n_docs=3, seed=6, test_fraction=0.0)
        )
        cfg = FeatureConfig()
        for doc in corpus.train_docs:
            for t in (FieldType.DATE, FieldType.AMOUNT):
                for cand in generate_candidates(doc, t):
                    ns = extract_neighbors(doc, cand, cfg)
                    span = set(cand.span_indices)
                    assert not span & {n.token_index for n in ns.neighbors}
                    assert len(ns.neighbors) + ns.pad_count == cfg.n_max

    def test_cross_page_tokens_excluded(self):
        tokens = [
            Token("10/22/18", BBox(0.4, 0.4, 0.48, 0.42), 0),
            Token("same", BBox(0.41, 0.44, 0.45, 0.46), 0),
            Token("other", BBox(0.41, 0.41, 0.45, 0.43), 1),
        ]
        doc = make_document("d", "en", "x", "t", [(1, 1), (1, 1)], tokens)
        cand = _candidate_for(doc, "10/22/18")
        ns = extract_neighbors(doc, cand, FeatureConfig())
        assert [n.token_text for n in ns.neighbors] == ["same"]

    def test_span_outside_document_errors(self):
        doc = _doc_from_boxes([("10/22/18", (0.4, 0.4, 0.48, 0.42))])
        cand = _candidate_for(doc, "10/22/18")
        broken = type(cand)(
            candidate_id=cand.candidate_id,
            doc_id=cand.doc_id,
            field_type=cand.field_type,
            token_span=(0, 5),
            raw_text=cand.raw_text,
            canonical_value=cand.canonical_value,
            bbox=cand.bbox,
            page_index=0,
        )
        with pytest.raises(ValueError):
            extract_neighbors(doc, broken, FeatureConfig())

    def test_translation_invariance(self):
        corpus = generate_corpus(
            CorpusSpec(doc_type="invoice", language="en", n_docs=2, seed=12, test_fraction=0.0)
        )
        doc = corpus.train_docs[0]
        dx, dy = 0.013, 0.021
        shifted_tokens = [
            Token(
                t.text,
                BBox(t.bbox.x_min + dx, t.bbox.y_min + dy, t.bbox.x_max + dx, t.bbox.y_max + dy),
                t.page_index,
            )
            for t in doc.tokens
        ]
        shifted = make_document(
            doc.doc_id, doc.language, doc.doc_type, doc.template_id, doc.pages, shifted_tokens
        )
        cfg = FeatureConfig()
        for t in (FieldType.DATE, FieldType.AMOUNT):
            for c1, c2 in zip(generate_candidates(doc, t), generate_candidates(shifted, t)):
                n1 = extract_neighbors(doc, c1, cfg)
                n2 = extract_neighbors(shifted, c2, cfg)
                assert [n.token_index for n in n1.neighbors] == [
                    n.token_index for n in n2.neighbors
                ]
                for a, b in zip(n1.neighbors, n2.neighbors):
                    assert a.rel_x == pytest.approx(b.rel_x, abs=1e-12)
                    assert a.rel_y == pytest.approx(b.rel_y, abs=1e-12)

    def test_monotone_weighted_distance_order(self):
        corpus = generate_corpus(
            CorpusSpec(doc_type="paystub", language="en", n_docs=2, seed=13, test_fraction=0.0)
        )
        cfg = FeatureConfig()
        for doc in corpus.train_docs:
            for cand in generate_candidates(doc, FieldType.AMOUNT):
                ns = extract_neighbors(doc, cand, cfg)
                wds = [
                    weighted_distance(n.rel_x, n.rel_y, cfg) for n in ns.neighbors
                ]
                assert all(a <= b + 1e-12 for a, b in zip(wds, wds[1:]))
                for n in ns.neighbors:
                    assert n.distance == pytest.approx(math.hypot(n.rel_x, n.rel_y))
                    assert -1 <= n.rel_x <= 1 and -1 <= n.rel_y <= 1


class TestFeatureConfig:
    def test_defaults(self):
        cfg = FeatureConfig()
        assert cfg.n_max == 16
        assert cfg.radius == pytest.approx(0.35)
        assert (cfg.weight_left, cfg.weight_above) == (1.0, 1.0)
        assert (cfg.weight_right, cfg.weight_below) == (1.5, 1.5)

    def test_validation(self):
        with pytest.raises(ValueError):
            FeatureConfig(n_max=0)
        with pytest.raises(ValueError):
            FeatureConfig(radius=0.0)
        with pytest.raises(ValueError):
            FeatureConfig(radius=2.0)

    def test_json_round_trip(self):
        cfg = FeatureConfig(n_max=4, radius=0.14, weight_right=2.5, weight_below=2.5)
        assert FeatureConfig.from_json(cfg.to_json()) == cfg
