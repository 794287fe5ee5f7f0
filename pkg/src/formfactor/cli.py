"""Command-line entry points: corpus generation, single-cell training,
evaluation, extraction, and full learning-curve experiments, all driven by
one experiment config file.

Primary outputs (checkpoints, metrics, reports, SVG) are byte-stable given
the same config and seed; wall-clock metadata is quarantined in a separate
run_meta.json so everything else diffs cleanly.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from .assign import assign as assign_fields
from .docmodel import Corpus, load_corpus, parse_document, parse_schema
from .evaluation import (
    EvalFilters,
    curve_points_csv,
    evaluate,
    render_learning_curve_svg,
)
from .neighborhood import FeatureConfig
from .scorer import CheckpointError
from .synthcorpus import CorpusSpec, generate_corpus
from .training import (
    FeatureCache,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
)
from .transfer import DomainPair, Regime, learning_curve, run_regime
from .evaluation import score_corpus

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class UsageError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    source: CorpusSpec
    target: CorpusSpec
    train: TrainConfig
    features: FeatureConfig
    eval_filters: EvalFilters
    regimes: list[Regime]
    sizes: list[int]
    seeds: list[int]
    vocab_size: int
    out_dir: str

    @classmethod
    def from_json(cls, data: dict, config_dir: Path) -> "ExperimentConfig":
        try:
            source = CorpusSpec.from_json(data["source"])
            target = CorpusSpec.from_json(data["target"])
            train = TrainConfig.from_json(data.get("train", {})) if data.get("train") else TrainConfig()
            features = (
                FeatureConfig.from_json(data["features"]) if data.get("features") else FeatureConfig()
            )
            filters = (
                EvalFilters.from_json(data["eval_filters"])
                if data.get("eval_filters")
                else EvalFilters()
            )
            regimes = [Regime(r) for r in data.get("regimes", [r.value for r in Regime])]
            sizes = [int(s) for s in data.get("sizes", [10, 50])]
            seeds = [int(s) for s in data.get("seeds", [1])]
            vocab_size = int(data.get("vocab_size", 2000))
            out_dir = data.get("out_dir", "runs/experiment")
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"invalid experiment config: {exc}") from exc
        if vocab_size < 2:
            raise UsageError(f"vocab_size must be >= 2, got {vocab_size}")
        if sizes != sorted(sizes):
            raise UsageError("sizes must be ascending")
        if not seeds:
            raise UsageError("need at least one seed")
        out_path = Path(out_dir)
        if not out_path.is_absolute():
            out_path = config_dir / out_path
        return cls(
            source=source,
            target=target,
            train=train,
            features=features,
            eval_filters=filters,
            regimes=regimes,
            sizes=sizes,
            seeds=seeds,
            vocab_size=vocab_size,
            out_dir=str(out_path),
        )


def load_config(path: str) -> ExperimentConfig:
    p = Path(path)
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_json(data, p.resolve().parent)


def _corpus_dir(config: ExperimentConfig, which: str) -> Path:
    return Path(config.out_dir) / "corpora" / which


def materialize_corpus(config: ExperimentConfig, which: str) -> Corpus:
    """Load the corpus from disk when gen-corpus already wrote it, otherwise
    generate it in memory (both paths are deterministic and identical)."""
    spec = config.source if which == "source" else config.target
    cdir = _corpus_dir(config, which)
    if (cdir / "manifest.jsonl").exists():
        logger.info("loading %s corpus from %s", which, cdir)
        return load_corpus(cdir)
    logger.info("generating %s corpus in memory (%s)", which, spec.to_json())
    return generate_corpus(spec)


def _write_run_meta(out_dir: Path, started: float, extra: dict | None = None) -> None:
    meta = {"elapsed_s": round(time.time() - started, 3), "started_unix": round(started, 3)}
    if extra:
        meta.update(extra)
    (out_dir / "run_meta.json").write_text(json.dumps(meta, sort_keys=True), encoding="utf-8")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen_corpus(args) -> int:
    config = load_config(args.config)
    which = args.which
    out = Path(args.out) if args.out else _corpus_dir(config, which)
    spec = config.source if which == "source" else config.target
    out.mkdir(parents=True, exist_ok=True)
    generate_corpus(spec, out_dir=out)
    print(f"wrote corpus to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    started = time.time()
    config = load_config(args.config)
    regime = Regime(args.regime)
    source = materialize_corpus(config, "source")
    target = materialize_corpus(config, "target")
    pair = DomainPair(source=source, target=target, target_train_size=args.size)
    ckpt = run_regime(
        regime, pair, config.train, args.seed,
        feature_cfg=config.features, vocab_k=config.vocab_size,
    )
    report = evaluate(
        ckpt.params, target.test_docs, target.schema, config.features, config.eval_filters
    )
    run_id = f"{regime.value}-{args.size}-{args.seed}"
    out = Path(args.out) if args.out else Path(config.out_dir) / "cells" / run_id
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, out / "best.ckpt")
    log_lines = [json.dumps(h, sort_keys=True) for h in ckpt.history]
    (out / "train_log.jsonl").write_text(
        "\n".join(log_lines) + ("\n" if log_lines else ""), encoding="utf-8"
    )
    metrics = {
        "regime": regime.value,
        "size": args.size,
        "seed": args.seed,
        "macro_f1": report.macro_f1,
        "per_field_f1": {fm.field_name: fm.max_f1 for fm in report.fields},
    }
    (out / "metrics.json").write_text(
        json.dumps(metrics, sort_keys=True, indent=2), encoding="utf-8"
    )
    _write_run_meta(out, started)
    print(f"checkpoint: {out / 'best.ckpt'}  val_auc={ckpt.val_auc}  macro_f1={report.macro_f1:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = load_config(args.config)
    target = materialize_corpus(config, "target")
    ckpt = load_checkpoint(args.checkpoint)
    report = evaluate(
        ckpt.params, target.test_docs, target.schema, config.features, config.eval_filters
    )
    payload = json.dumps(report.to_json(), sort_keys=True, indent=2)
    if args.out:
        Path(args.out).write_text(payload + "\n", encoding="utf-8")
    else:
        print(payload)
    if args.plot:
        svg_path = Path(args.plot)
        series = _series_from_cells(Path(config.out_dir) / "cells")
        if not series:
            # Nothing accumulated yet: plot this single evaluation.
            series = {"eval": [(len(target.test_docs), report.macro_f1, report.macro_f1, report.macro_f1)]}
        svg_path.write_text(render_learning_curve_svg(series), encoding="utf-8")
        print(f"wrote plot to {svg_path}", file=sys.stderr)
    return EXIT_OK


def _series_from_cells(cells_dir: Path) -> dict[str, list[tuple[int, float, float, float]]]:
    """Aggregate persisted per-cell metrics into per-regime curve points."""
    groups: dict[tuple[str, int], list[float]] = {}
    if cells_dir.is_dir():
        for path in sorted(cells_dir.glob("*.json")):
            cell = json.loads(path.read_text(encoding="utf-8"))
            groups.setdefault((cell["regime"], cell["size"]), []).append(cell["macro_f1"])
        for path in sorted(cells_dir.glob("*/metrics.json")):
            cell = json.loads(path.read_text(encoding="utf-8"))
            groups.setdefault((cell["regime"], cell["size"]), []).append(cell["macro_f1"])
    series: dict[str, list[tuple[int, float, float, float]]] = {}
    import statistics

    for (regime, size), macros in sorted(groups.items()):
        series.setdefault(regime, []).append(
            (size, statistics.median(macros), min(macros), max(macros))
        )
    return series


def cmd_extract(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    schema = parse_schema(Path(args.schema).read_bytes())
    feature_cfg = FeatureConfig()
    if args.config:
        feature_cfg = load_config(args.config).features
    out_fh = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    failures = 0
    try:
        for doc_path in args.documents:
            try:
                doc = parse_document(Path(doc_path).read_bytes())
            except Exception as exc:
                failures += 1
                print(
                    json.dumps({"error": type(exc).__name__, "path": doc_path, "message": str(exc)}),
                    file=sys.stderr,
                )
                continue
            # Documents are processed one at a time so a batch equals the
            # concatenation of single-document invocations.
            scored = score_corpus(ckpt.params, [doc], schema, feature_cfg)
            extraction = assign_fields(
                doc.doc_id,
                scored.by_doc[doc.doc_id],
                scored.candidates_by_doc[doc.doc_id],
                schema,
            )
            out_fh.write(json.dumps(extraction.to_json(), sort_keys=True) + "\n")
    finally:
        if args.out:
            out_fh.close()
    if failures:
        print(f"{failures} document(s) failed to parse", file=sys.stderr)
    return EXIT_OK


def cmd_curve(args) -> int:
    started = time.time()
    config = load_config(args.config)
    source = materialize_corpus(config, "source")
    target = materialize_corpus(config, "target")
    out = Path(args.out) if args.out else Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pair = DomainPair(source=source, target=target, target_train_size=max(config.sizes))
    reports = learning_curve(
        pair,
        config.train,
        config.sizes,
        args.seeds if args.seeds else config.seeds,
        regimes=config.regimes,
        feature_cfg=config.features,
        vocab_k=config.vocab_size,
        eval_filters=config.eval_filters,
        out_dir=out,
        jobs=args.jobs,
    )
    (out / "report.json").write_text(
        json.dumps([r.to_json() for r in reports], sort_keys=True, indent=2), encoding="utf-8"
    )
    (out / "curve.csv").write_text(curve_points_csv(reports), encoding="utf-8")
    if args.plot:
        series: dict[str, list[tuple[int, float, float, float]]] = {}
        for r in reports:
            series.setdefault(r.regime, []).append(
                (r.target_train_size, r.median, r.min, r.max)
            )
        (out / "curve.svg").write_text(render_learning_curve_svg(series), encoding="utf-8")
    _write_run_meta(out, started)
    for r in reports:
        print(
            f"{r.regime:12s} size={r.target_train_size:<5d} "
            f"median={r.median:.4f} min={r.min:.4f} max={r.max:.4f}"
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser / entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="formfactor",
        description="Field extraction from form-like documents: corpus generation, "
        "training regimes, evaluation, and extraction.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a synthetic corpus to disk")
    p.add_argument("--config", required=True)
    p.add_argument("--which", choices=["source", "target"], required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", help="train one (regime, size, seed) cell")
    p.add_argument("--config", required=True)
    p.add_argument("--regime", choices=[r.value for r in Regime], required=True)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the target test corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--plot", default=None, metavar="SVG_PATH")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("extract", help="run extraction on documents")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("documents", nargs="+")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("curve", help="run the full learning-curve experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seeds", type=int, nargs="+", default=None,
                   help="override the config's seed list")
    p.add_argument("--plot", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_curve)
    return parser


def _setup_logging() -> None:
    level_name = os.environ.get("FORMFACTOR_LOG_LEVEL", "WARNING").upper()
    level = getattr(logging, level_name, logging.WARNING)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError, CheckpointError, RuntimeError) as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
