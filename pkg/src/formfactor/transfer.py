"""The three training regimes and the learning-curve experiment driver.

scratch      trains on the target subsample alone.
transfer     trains on the source domain, then fine-tunes everything on the
             target subsample (source-only vocabulary; unseen target fields
             receive fresh seeded embeddings first).
multidomain  stage 1 trains on the union of source and target-subsample
             examples with a vocabulary pooled over both and a field table
             keyed by name (same-named fields share one row); stage 2
             fine-tunes everything on the target subsample alone.

All regimes share one backbone architecture and one hyperparameter set.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .docmodel import Corpus, Document, TargetSchema
from .evaluation import (
    EvalFilters,
    EvaluationReport,
    RegimeReport,
    build_regime_report,
    evaluate,
)
from .neighborhood import FeatureConfig
from .scorer import ModelDims, ScorerParams, glorot_bound
from .training import (
    Checkpoint,
    FeatureCache,
    TrainConfig,
    build_examples,
    build_vocab,
    train_examples,
)

logger = logging.getLogger(__name__)

_SUBSAMPLE_TAG = 0x5AB5
_FIELD_EXT_TAG = 0xF1E1D


class Regime(str, Enum):
    SCRATCH = "scratch"
    TRANSFER = "transfer"
    MULTIDOMAIN = "multidomain"


@dataclass(frozen=True)
class DomainPair:
    """Source domain with plentiful labels, target domain being generalized
    to with ``target_train_size`` labeled documents."""

    source: Corpus
    target: Corpus
    target_train_size: int

    def __post_init__(self):
        if self.target_train_size > len(self.target.train_docs):
            raise ValueError(
                f"target_train_size {self.target_train_size} exceeds target train corpus "
                f"({len(self.target.train_docs)} docs)"
            )


def subsample_target(pair: DomainPair, seed: int) -> list[Document]:
    """Seeded subsample of the target training documents. The permutation
    depends only on the seed, so smaller sizes are prefixes of larger ones
    and curves vary with data, not sampling."""
    rng = np.random.default_rng(np.random.SeedSequence([_SUBSAMPLE_TAG, seed]))
    perm = rng.permutation(len(pair.target.train_docs))
    return [pair.target.train_docs[i] for i in perm[: pair.target_train_size]]


def union_field_names(source: TargetSchema, target: TargetSchema) -> tuple[str, ...]:
    """Source fields first, then target fields not already present
    (same-named fields share one embedding row)."""
    names = list(source.field_names)
    names.extend(n for n in target.field_names if n not in names)
    return tuple(names)


# Fresh field rows start near zero: they contribute no ranking noise that
# fine-tuning would first have to unlearn, only a seeded symmetry break.
_FRESH_FIELD_SCALE = 0.01


def extend_field_table(params: ScorerParams, new_field_names: Sequence[str], seed: int) -> ScorerParams:
    """Grow the field-embedding table to cover ``new_field_names``: existing
    rows are kept (that is the transfer), added rows get small fresh seeded
    draws with zero bias."""
    added = [n for n in new_field_names if n not in params.field_names]
    if not added:
        return params.copy()
    out = params.copy()
    full_names = tuple(params.field_names) + tuple(added)
    rng = np.random.default_rng(np.random.SeedSequence([_FIELD_EXT_TAG, seed]))
    bound = _FRESH_FIELD_SCALE * glorot_bound((len(full_names), params.dims.d_out))
    fresh = rng.uniform(-bound, bound, size=(len(added), params.dims.d_out))
    out.field_embeddings = np.vstack([params.field_embeddings, fresh])
    out.field_bias = np.concatenate([params.field_bias, np.zeros(len(added))])
    out.field_names = full_names
    return out


def _subsample_corpus(pair: DomainPair, seed: int) -> Corpus:
    return Corpus(
        doc_type=pair.target.doc_type,
        language=pair.target.language,
        schema=pair.target.schema,
        train_docs=subsample_target(pair, seed),
    )


def run_scratch(
    pair: DomainPair,
    cfg: TrainConfig,
    seed: int,
    feature_cfg: FeatureConfig = FeatureConfig(),
    vocab_k: int = 2000,
    cache: FeatureCache | None = None,
    dims: ModelDims = ModelDims(),
) -> Checkpoint:
    """Train on the target subsample only: subsample-only vocabulary,
    target-only field embeddings, one training stage."""
    if pair.target_train_size < 2:
        raise ValueError("scratch training needs at least 2 target documents")
    cfg = replace(cfg, seed=seed)
    cache = cache or FeatureCache(feature_cfg)
    sub = _subsample_corpus(pair, seed)
    vocab = build_vocab([sub], vocab_k)
    examples = build_examples(
        sub.train_docs,
        pair.target.schema,
        feature_cfg,
        neg_cap=cfg.neg_per_pos_cap,
        seed=cfg.seed,
        cache=cache,
    )
    return train_examples(examples, vocab, pair.target.schema.field_names, cfg, dims=dims)


def run_transfer(
    pair: DomainPair,
    cfg: TrainConfig,
    seed: int,
    feature_cfg: FeatureConfig = FeatureConfig(),
    vocab_k: int = 2000,
    cache: FeatureCache | None = None,
    dims: ModelDims = ModelDims(),
    stage1_checkpoint: Checkpoint | None = None,
) -> Checkpoint:
    """Source training followed by target fine-tuning of all parameters.

    Stage 1 may be passed in (it is independent of the target subsample,
    so learning-curve runs reuse it across sizes); tokens missing from the
    source vocabulary map to UNK during fine-tuning.
    """
    if pair.target_train_size < 1:
        raise ValueError("transfer requires target data to fine-tune on")
    if not pair.source.train_docs:
        raise ValueError("transfer requires a non-empty source corpus")
    cfg = replace(cfg, seed=seed)
    cache = cache or FeatureCache(feature_cfg)
    if stage1_checkpoint is None:
        stage1_checkpoint = transfer_stage1(pair.source, cfg, seed, feature_cfg, vocab_k, cache, dims)
    params = extend_field_table(
        stage1_checkpoint.params, pair.target.schema.field_names, seed
    )
    sub = subsample_target(pair, seed)
    examples = build_examples(
        sub,
        pair.target.schema,
        feature_cfg,
        neg_cap=cfg.neg_per_pos_cap,
        seed=cfg.seed,
        field_order=params.field_names,
        cache=cache,
    )
    return train_examples(examples, params.vocab, params.field_names, cfg, initial_params=params)


def transfer_stage1(
    source: Corpus,
    cfg: TrainConfig,
    seed: int,
    feature_cfg: FeatureConfig,
    vocab_k: int,
    cache: FeatureCache | None = None,
    dims: ModelDims = ModelDims(),
) -> Checkpoint:
    cfg = replace(cfg, seed=seed)
    cache = cache or FeatureCache(feature_cfg)
    vocab = build_vocab([source], vocab_k)
    examples = build_examples(
        source.train_docs,
        source.schema,
        feature_cfg,
        neg_cap=cfg.neg_per_pos_cap,
        seed=cfg.seed,
        cache=cache,
    )
    return train_examples(examples, vocab, source.schema.field_names, cfg, dims=dims)


def run_multidomain(
    pair: DomainPair,
    cfg: TrainConfig,
    seed: int,
    feature_cfg: FeatureConfig = FeatureConfig(),
    vocab_k: int = 2000,
    cache: FeatureCache | None = None,
    dims: ModelDims = ModelDims(),
) -> Checkpoint:
    """Stage 1 on pooled source + target-subsample candidates with a common
    vocabulary and a name-keyed union field table; stage 2 fine-tunes all
    parameters on the target subsample alone."""
    if pair.target_train_size < 1:
        raise ValueError("multidomain requires target data")
    if not pair.source.train_docs:
        raise ValueError("multidomain requires a non-empty source corpus")
    cfg = replace(cfg, seed=seed)
    cache = cache or FeatureCache(feature_cfg)
    sub = _subsample_corpus(pair, seed)
    vocab = build_vocab([pair.source, sub], vocab_k)
    field_names = union_field_names(pair.source.schema, pair.target.schema)
    examples = build_examples(
        pair.source.train_docs,
        pair.source.schema,
        feature_cfg,
        neg_cap=cfg.neg_per_pos_cap,
        seed=cfg.seed,
        field_order=field_names,
        cache=cache,
    ) + build_examples(
        sub.train_docs,
        pair.target.schema,
        feature_cfg,
        neg_cap=cfg.neg_per_pos_cap,
        seed=cfg.seed,
        field_order=field_names,
        cache=cache,
    )
    stage1 = train_examples(examples, vocab, field_names, cfg, dims=dims)
    stage2_examples = build_examples(
        sub.train_docs,
        pair.target.schema,
        feature_cfg,
        neg_cap=cfg.neg_per_pos_cap,
        seed=cfg.seed,
        field_order=field_names,
        cache=cache,
    )
    return train_examples(stage2_examples, vocab, field_names, cfg, initial_params=stage1.params)


_RUNNERS = {
    Regime.SCRATCH: run_scratch,
    Regime.TRANSFER: run_transfer,
    Regime.MULTIDOMAIN: run_multidomain,
}


def run_regime(
    regime: Regime,
    pair: DomainPair,
    cfg: TrainConfig,
    seed: int,
    feature_cfg: FeatureConfig = FeatureConfig(),
    vocab_k: int = 2000,
    cache: FeatureCache | None = None,
    dims: ModelDims = ModelDims(),
    stage1_checkpoint: Checkpoint | None = None,
) -> Checkpoint:
    if regime == Regime.TRANSFER:
        return run_transfer(
            pair, cfg, seed, feature_cfg, vocab_k, cache, dims, stage1_checkpoint
        )
    return _RUNNERS[regime](pair, cfg, seed, feature_cfg, vocab_k, cache, dims)


# ---------------------------------------------------------------------------
# Learning curve
# ---------------------------------------------------------------------------

def _check_disjoint(pair: DomainPair, sub: Sequence[Document]) -> None:
    test_ids = {d.doc_id for d in pair.target.test_docs}
    test_templates = {d.template_id for d in pair.target.test_docs}
    for d in sub:
        if d.doc_id in test_ids or d.template_id in test_templates:
            raise ValueError(
                f"training subsample leaks into the test set: {d.doc_id} / {d.template_id}"
            )


def learning_curve(
    pair: DomainPair,
    cfg: TrainConfig,
    sizes: Sequence[int],
    seeds: Sequence[int],
    regimes: Sequence[Regime] = (Regime.SCRATCH, Regime.TRANSFER, Regime.MULTIDOMAIN),
    feature_cfg: FeatureConfig = FeatureConfig(),
    vocab_k: int = 2000,
    eval_filters: EvalFilters = EvalFilters(),
    out_dir: str | Path | None = None,
    jobs: int = 1,
) -> list[RegimeReport]:
    """Train and evaluate every (regime, size, seed) cell on the fixed
    held-out target test corpus; returns one report per (regime, size).

    Cells are independent; completed cell metrics persist to
    ``out_dir/cells`` as they finish. Transfer stage-1 checkpoints are
    reused across sizes for the same seed (they do not depend on the
    subsample), which changes nothing except wall time.
    """
    if list(sizes) != sorted(sizes):
        raise ValueError("sizes must be ascending")
    if not seeds:
        raise ValueError("need at least one seed")
    if not pair.target.test_docs:
        raise ValueError("target corpus has no held-out test documents")

    cache = FeatureCache(feature_cfg)
    eval_cache = FeatureCache(feature_cfg)
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        (out_path / "cells").mkdir(parents=True, exist_ok=True)

    stage1_by_seed: dict[int, Checkpoint] = {}

    def stage1_for(seed: int) -> Checkpoint:
        if seed not in stage1_by_seed:
            stage1_by_seed[seed] = transfer_stage1(
                pair.source, cfg, seed, feature_cfg, vocab_k, cache
            )
        return stage1_by_seed[seed]

    def run_cell(regime: Regime, size: int, seed: int) -> tuple:
        started = time.perf_counter()
        cell_pair = DomainPair(pair.source, pair.target, size)
        _check_disjoint(cell_pair, subsample_target(cell_pair, seed))
        stage1 = stage1_for(seed) if regime == Regime.TRANSFER else None
        ckpt = run_regime(
            regime, cell_pair, cfg, seed, feature_cfg, vocab_k, cache,
            stage1_checkpoint=stage1,
        )
        report = evaluate(
            ckpt.params,
            pair.target.test_docs,
            pair.target.schema,
            feature_cfg,
            eval_filters,
            cache=eval_cache,
        )
        elapsed = time.perf_counter() - started
        logger.info(
            "cell regime=%s size=%d seed=%d macro_f1=%.4f (%.1fs)",
            regime.value, size, seed, report.macro_f1, elapsed,
        )
        if out_path is not None:
            cell = {
                "regime": regime.value,
                "size": size,
                "seed": seed,
                "macro_f1": report.macro_f1,
                "per_field_f1": {fm.field_name: fm.max_f1 for fm in report.fields},
            }
            name = f"{regime.value}-{size}-{seed}.json"
            (out_path / "cells" / name).write_text(
                json.dumps(cell, sort_keys=True, indent=2), encoding="utf-8"
            )
        return regime, size, seed, report

    cells = [(r, s, seed) for r in regimes for s in sizes for seed in seeds]
    results: dict[tuple, EvaluationReport] = {}
    if jobs > 1:
        # Pre-warm shared stage-1 checkpoints serially, then fan cells out.
        if Regime.TRANSFER in regimes:
            for seed in seeds:
                stage1_for(seed)
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            for regime, size, seed, report in pool.map(lambda c: run_cell(*c), cells):
                results[(regime, size, seed)] = report
    else:
        for c in cells:
            regime, size, seed, report = run_cell(*c)
            results[(regime, size, seed)] = report

    reports = []
    for regime in regimes:
        for size in sizes:
            per_seed = {seed: results[(regime, size, seed)] for seed in seeds}
            reports.append(build_regime_report(regime.value, size, per_seed))
    return reports
