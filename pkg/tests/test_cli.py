"""CLI contract tests: exit codes, byte-identical outputs, and equivalence
with direct library calls."""

import json

import pytest

import formfactor as ff
from formfactor.cli import main
from formfactor.docmodel import load_corpus, schema_to_json, serialize_document
from formfactor.evaluation import EvalFilters, evaluate
from formfactor.neighborhood import FeatureConfig
from formfactor.synthcorpus import CorpusSpec, generate_corpus
from formfactor.training import load_checkpoint

TIGHT = {"n_max": 4, "radius": 0.14, "weight_left": 1.0, "weight_above": 1.0,
         "weight_right": 2.5, "weight_below": 2.5}


@pytest.fixture()
def config_path(tmp_path):
    config = {
        "source": {"doc_type": "invoice", "language": "en", "n_docs": 10,
                   "seed": 60, "test_fraction": 0.0},
        "target": {"doc_type": "invoice", "language": "fr", "n_docs": 12,
                   "seed": 61, "test_fraction": 1 / 3},
        "train": {"max_epochs": 2, "seed": 0},
        "features": TIGHT,
        "eval_filters": {"min_coverage": 0.8, "min_ground_truth": 1},
        "regimes": ["scratch", "multidomain"],
        "sizes": [4],
        "seeds": [1, 2],
        "vocab_size": 2000,
        "out_dir": "run",
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    return path


class TestGenCorpus:
    def test_idempotent_byte_identical(self, config_path, tmp_path):
        assert main(["gen-corpus", "--config", str(config_path), "--which", "target"]) == 0
        out = tmp_path / "run" / "corpora" / "target"
        first = {p: p.read_bytes() for p in out.rglob("*") if p.is_file()}
        assert main(["gen-corpus", "--config", str(config_path), "--which", "target"]) == 0
        second = {p: p.read_bytes() for p in out.rglob("*") if p.is_file()}
        assert first == second

    def test_generated_corpus_parses(self, config_path, tmp_path):
        main(["gen-corpus", "--config", str(config_path), "--which", "source"])
        out = tmp_path / "run" / "corpora" / "source"
        corpus = load_corpus(out)
        assert len(corpus.train_docs) == 10
        for doc in corpus.train_docs:
            again = ff.parse_document(serialize_document(doc))
            assert again == doc

    def test_zero_docs_rejected_at_config_validation(self, tmp_path):
        config = {"source": {"doc_type": "invoice", "language": "en",
                             "n_docs": 0, "seed": 1},
                  "target": {"doc_type": "invoice", "language": "fr",
                             "n_docs": 4, "seed": 2}}
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(config))
        assert main(["gen-corpus", "--config", str(path), "--which", "source"]) == 2


class TestTrainCommand:
    def test_cell_outputs_and_determinism(self, config_path, tmp_path):
        argv = ["train", "--config", str(config_path), "--regime", "scratch",
                "--size", "4", "--seed", "1"]
        assert main(argv) == 0
        cell = tmp_path / "run" / "cells" / "scratch-4-1"
        assert (cell / "best.ckpt").exists()
        assert (cell / "train_log.jsonl").exists()
        assert (cell / "metrics.json").exists()
        first = {
            name: (cell / name).read_bytes()
            for name in ("best.ckpt", "train_log.jsonl", "metrics.json")
        }
        log_lines = [json.loads(l) for l in (cell / "train_log.jsonl").read_text().splitlines()]
        assert all({"epoch", "train_loss", "val_auc"} <= set(l) for l in log_lines)

        assert main(argv) == 0
        for name, payload in first.items():
            assert (cell / name).read_bytes() == payload, f"{name} not byte-identical"

    def test_unknown_regime_usage_error(self, config_path):
        rc = main(["train", "--config", str(config_path), "--regime", "warp",
                   "--size", "4", "--seed", "1"])
        assert rc == 2


class TestEvalCommand:
    def test_report_macro_in_range_and_matches_library(self, config_path, tmp_path):
        main(["train", "--config", str(config_path), "--regime", "multidomain",
              "--size", "4", "--seed", "1"])
        ckpt_path = tmp_path / "run" / "cells" / "multidomain-4-1" / "best.ckpt"
        out_path = tmp_path / "report.json"
        assert main(["eval", "--config", str(config_path),
                     "--checkpoint", str(ckpt_path), "--out", str(out_path)]) == 0
        report = json.loads(out_path.read_text())
        assert 0.0 <= report["macro_f1"] <= 1.0

        target = generate_corpus(
            CorpusSpec(doc_type="invoice", language="fr", n_docs=12, seed=61,
                       test_fraction=1 / 3)
        )
        ckpt = load_checkpoint(ckpt_path)
        direct = evaluate(
            ckpt.params, target.test_docs, target.schema,
            FeatureConfig(**TIGHT), EvalFilters(min_coverage=0.8, min_ground_truth=1),
        )
        assert report == json.loads(json.dumps(direct.to_json()))

    def test_missing_checkpoint_runtime_error(self, config_path, tmp_path):
        rc = main(["eval", "--config", str(config_path),
                   "--checkpoint", str(tmp_path / "nope.ckpt")])
        assert rc == 1

    def test_plot_single_point_svg(self, config_path, tmp_path):
        main(["train", "--config", str(config_path), "--regime", "scratch",
              "--size", "4", "--seed", "1"])
        ckpt_path = tmp_path / "run" / "cells" / "scratch-4-1" / "best.ckpt"
        svg_path = tmp_path / "curve.svg"
        assert main(["eval", "--config", str(config_path),
                     "--checkpoint", str(ckpt_path),
                     "--out", str(tmp_path / "r.json"),
                     "--plot", str(svg_path)]) == 0
        import xml.etree.ElementTree as ET

        root = ET.fromstring(svg_path.read_text())
        assert root.tag.endswith("svg")


class TestExtractCommand:
    @pytest.fixture()
    def trained(self, config_path, tmp_path):
        main(["train", "--config", str(config_path), "--regime", "scratch",
              "--size", "4", "--seed", "1"])
        ckpt = tmp_path / "run" / "cells" / "scratch-4-1" / "best.ckpt"
        target = generate_corpus(
            CorpusSpec(doc_type="invoice", language="fr", n_docs=12, seed=61,
                       test_fraction=1 / 3)
        )
        schema_path = tmp_path / "schema.json"
        schema_path.write_text(json.dumps(schema_to_json(target.schema)))
        return ckpt, schema_path, target

    def test_no_candidates_all_fields_absent(self, trained, tmp_path):
        ckpt, schema_path, target = trained
        doc = ff.docmodel.make_document(
            "empty", "fr", "invoice", "tx", [(612, 792)],
            [ff.Token("bonjour", ff.BBox(0.1, 0.1, 0.2, 0.12), 0)],
        )
        doc_path = tmp_path / "empty.json"
        doc_path.write_text(serialize_document(doc))
        out = tmp_path / "ext.jsonl"
        assert main(["extract", "--checkpoint", str(ckpt), "--schema", str(schema_path),
                     "--out", str(out), str(doc_path)]) == 0
        line = json.loads(out.read_text().splitlines()[0])
        assert line["fields"] == {}

    def test_ground_truth_ignored(self, trained, tmp_path):
        ckpt, schema_path, target = trained
        labeled = target.test_docs[0]
        unlabeled = ff.docmodel.make_document(
            labeled.doc_id, labeled.language, labeled.doc_type,
            labeled.template_id, labeled.pages, labeled.tokens,
        )
        p1, p2 = tmp_path / "labeled.json", tmp_path / "unlabeled.json"
        p1.write_text(serialize_document(labeled))
        p2.write_text(serialize_document(unlabeled))
        o1, o2 = tmp_path / "o1.jsonl", tmp_path / "o2.jsonl"
        main(["extract", "--checkpoint", str(ckpt), "--schema", str(schema_path),
              "--out", str(o1), str(p1)])
        main(["extract", "--checkpoint", str(ckpt), "--schema", str(schema_path),
              "--out", str(o2), str(p2)])
        assert o1.read_bytes() == o2.read_bytes()

    def test_batch_equals_concatenated_singles(self, trained, tmp_path):
        ckpt, schema_path, target = trained
        # A real batch: 100 synthetic documents through one invocation.
        batch_corpus = generate_corpus(
            CorpusSpec(doc_type="invoice", language="fr", n_docs=100, seed=62,
                       test_fraction=0.0)
        )
        paths = []
        for doc in batch_corpus.train_docs:
            p = tmp_path / f"{doc.doc_id}.json"
            p.write_text(serialize_document(doc))
            paths.append(str(p))
        batch_out = tmp_path / "batch.jsonl"
        assert main(["extract", "--checkpoint", str(ckpt), "--schema", str(schema_path),
                     "--out", str(batch_out)] + paths) == 0
        singles = []
        for p in paths[:5]:
            single_out = tmp_path / "single.jsonl"
            main(["extract", "--checkpoint", str(ckpt), "--schema", str(schema_path),
                  "--out", str(single_out), p])
            singles.append(single_out.read_text())
        assert "".join(singles) == "".join(batch_out.read_text().splitlines(True)[:5])
        assert len(batch_out.read_text().splitlines()) == 100

    def test_parse_failure_reported_processing_continues(self, trained, tmp_path, capsys):
        ckpt, schema_path, target = trained
        bad = tmp_path / "bad.json"
        bad.write_text("{nope")
        good = tmp_path / "good.json"
        good.write_text(serialize_document(target.test_docs[0]))
        out = tmp_path / "mixed.jsonl"
        assert main(["extract", "--checkpoint", str(ckpt), "--schema", str(schema_path),
                     "--out", str(out), str(bad), str(good)]) == 0
        assert len(out.read_text().splitlines()) == 1
        err = capsys.readouterr().err
        assert "bad.json" in err


class TestCurveCommand:
    def test_curve_outputs(self, config_path, tmp_path):
        assert main(["curve", "--config", str(config_path), "--plot"]) == 0
        out = tmp_path / "run"
        report = json.loads((out / "report.json").read_text())
        assert len(report) == 2  # scratch + multidomain at one size
        for row in report:
            assert 0.0 <= row["median"] <= 1.0
        csv = (out / "curve.csv").read_text()
        assert csv.splitlines()[0] == "regime,size,median,min,max"
        assert (out / "curve.svg").exists()
        cells = list((out / "cells").glob("*.json"))
        assert len(cells) == 4  # 2 regimes x 1 size x 2 seeds

    def test_seeds_flag_overrides_config(self, config_path, tmp_path):
        assert main(["curve", "--config", str(config_path), "--seeds", "1"]) == 0
        cells = list((tmp_path / "run" / "cells").glob("*.json"))
        assert len(cells) == 2  # 2 regimes x 1 size x 1 seed

    def test_curve_cells_match_train_command(self, config_path, tmp_path):
        assert main(["curve", "--config", str(config_path)]) == 0
        cell = json.loads(
            (tmp_path / "run" / "cells" / "scratch-4-1.json").read_text()
        )
        assert main(["train", "--config", str(config_path), "--regime", "scratch",
                     "--size", "4", "--seed", "1"]) == 0
        metrics = json.loads(
            (tmp_path / "run" / "cells" / "scratch-4-1" / "metrics.json").read_text()
        )
        assert metrics["macro_f1"] == cell["macro_f1"]
        assert metrics["per_field_f1"] == cell["per_field_f1"]


class TestUsage:
    def test_no_command_usage_error(self):
        assert main([]) == 2

    def test_unknown_command_usage_error(self):
        assert main(["frobnicate"]) == 2

    def test_missing_config_usage_error(self, tmp_path):
        assert main(["curve", "--config", str(tmp_path / "missing.json")]) == 2
