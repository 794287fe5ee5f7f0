"""Training protocol: example labeling, vocabulary construction,
document-level train/validation split, rectified-Adam optimization, and
checkpoint selection by validation ROC AUC."""

from __future__ import annotations

import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import candgen, scorer
from .docmodel import Corpus, Document, TargetSchema
from .neighborhood import FeatureConfig, NeighborSet, extract_neighbors
from .scorer import (
    ModelDims,
    ScorerParams,
    Vocab,
    batch_scores_encoded,
    encode_examples,
    init_params,
    loss_and_gradient_encoded,
)

logger = logging.getLogger(__name__)

# Rectification threshold on the approximated SMA length: below it the
# variance estimate is intractable and the step falls back to plain
# bias-corrected momentum.
RECT_THRESHOLD = 4.0

_SPLIT_TAG = 0x51D17
_LABEL_TAG = 0x1ABE1


class DegenerateLabelsError(ValueError):
    """All scores belong to a single class; ROC AUC is undefined."""


class NonFiniteGradientError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 0.001
    max_epochs: int = 25
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    neg_per_pos_cap: int = 10
    split_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (0.0 < self.split_fraction < 1.0):
            raise ValueError("split_fraction must be in (0, 1)")

    def to_json(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "max_epochs": self.max_epochs,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
            "neg_per_pos_cap": self.neg_per_pos_cap,
            "split_fraction": self.split_fraction,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, data: dict) -> "TrainConfig":
        return cls(**data)


@dataclass(frozen=True)
class LabeledExample:
    neighbor_set: NeighborSet
    field_index: int
    label: int
    doc_id: str

    def sort_key(self) -> tuple:
        return (self.doc_id, self.field_index, self.neighbor_set.candidate_id, self.label)


@dataclass
class OptimizerState:
    t: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def zeros(cls, params: ScorerParams) -> "OptimizerState":
        return cls(
            t=0,
            m={k: np.zeros_like(a) for k, a in params.matrices().items()},
            v={k: np.zeros_like(a) for k, a in params.matrices().items()},
        )


@dataclass
class Checkpoint:
    params: ScorerParams
    val_auc: float | None
    epoch: int
    config_fingerprint: str
    degenerate_validation: bool = False
    history: list[dict] = field(default_factory=list)


def _stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


def config_fingerprint(cfg: TrainConfig, dims: ModelDims, vocab: Vocab, field_names) -> str:
    payload = json.dumps(
        {
            "train": cfg.to_json(),
            "dims": dims.to_json(),
            "vocab_size": len(vocab),
            "field_names": list(field_names),
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------

def build_vocab(corpora: Sequence[Corpus], k: int) -> Vocab:
    """Top-k lowercased tokens by frequency over the training documents of
    every listed corpus, pooled before ranking; ties break lexicographically.
    PAD and UNK are prepended."""
    if k < 1:
        raise ValueError("vocabulary size must be >= 1")
    counts: Counter[str] = Counter()
    n_docs = 0
    for corpus in corpora:
        for doc in corpus.train_docs:
            n_docs += 1
            counts.update(t.text.lower() for t in doc.tokens)
    if n_docs == 0:
        raise ValueError("no training documents in the given corpora")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocab([tok for tok, _ in ranked[:k]])


# ---------------------------------------------------------------------------
# Labeling
# ---------------------------------------------------------------------------

def label_candidates(
    doc: Document,
    schema: TargetSchema,
    candidates: Sequence[candgen.Candidate],
    features: Mapping[str, NeighborSet],
    field_order: Sequence[str] | None = None,
    neg_cap: int = 10,
    seed: int = 0,
) -> list[LabeledExample]:
    """Pair every candidate with every schema field of its type; label 1 iff
    the canonical value matches that field's ground truth. Negatives are
    downsampled to ``neg_cap`` per (document, field) with seeded uniform
    sampling; positives are never dropped."""
    if doc.ground_truth is None:
        raise ValueError(f"document {doc.doc_id!r} has no ground truth")
    order = list(field_order) if field_order is not None else schema.field_names
    index_of = {name: i for i, name in enumerate(order)}
    missing = [f.name for f in schema.fields if f.name not in index_of]
    if missing:
        raise ValueError(f"field_order is missing schema fields: {missing}")
    rng = np.random.default_rng(np.random.SeedSequence([_LABEL_TAG, seed, _stable_hash(doc.doc_id)]))
    by_type: dict[candgen.FieldType, list[candgen.Candidate]] = {}
    for c in candidates:
        by_type.setdefault(c.field_type, []).append(c)
    out: list[LabeledExample] = []
    for f in schema.fields:
        accepted = set(doc.accepted_values(f.name))
        fi = index_of[f.name]
        positives, negatives = [], []
        for c in by_type.get(f.field_type, ()):
            (positives if c.canonical_value in accepted else negatives).append(c)
        if len(negatives) > neg_cap:
            chosen = rng.choice(len(negatives), size=neg_cap, replace=False)
            negatives = [negatives[i] for i in sorted(chosen)]
        for c in positives:
            out.append(LabeledExample(features[c.candidate_id], fi, 1, doc.doc_id))
        for c in negatives:
            out.append(LabeledExample(features[c.candidate_id], fi, 0, doc.doc_id))
    return out


class FeatureCache:
    """Memoizes per-document candidate generation and neighborhood
    extraction (both pure), so repeated training runs over the same corpus
    do not recompute them."""

    def __init__(self, feature_cfg: FeatureConfig):
        self.feature_cfg = feature_cfg
        self._store: dict[tuple[int, frozenset], tuple] = {}

    def features(
        self, doc: Document, field_types: Iterable[candgen.FieldType]
    ) -> tuple[list[candgen.Candidate], dict[str, NeighborSet]]:
        key = (id(doc), frozenset(field_types))
        hit = self._store.get(key)
        if hit is None:
            cands: list[candgen.Candidate] = []
            for t in sorted(key[1], key=lambda ft: ft.value):
                cands.extend(candgen.generate_candidates(doc, t))
            sets = {c.candidate_id: extract_neighbors(doc, c, self.feature_cfg) for c in cands}
            hit = (cands, sets)
            self._store[key] = hit
        return hit


def build_examples(
    docs: Sequence[Document],
    schema: TargetSchema,
    feature_cfg: FeatureConfig,
    neg_cap: int,
    seed: int,
    field_order: Sequence[str] | None = None,
    cache: FeatureCache | None = None,
) -> list[LabeledExample]:
    cache = cache or FeatureCache(feature_cfg)
    out: list[LabeledExample] = []
    for doc in docs:
        cands, sets = cache.features(doc, schema.field_types)
        out.extend(
            label_candidates(
                doc, schema, cands, sets, field_order=field_order, neg_cap=neg_cap, seed=seed
            )
        )
    return out


# ---------------------------------------------------------------------------
# Split
# ---------------------------------------------------------------------------

def split_examples(
    examples: Sequence[LabeledExample], fraction: float, seed: int
) -> tuple[list[LabeledExample], list[LabeledExample]]:
    """Document-granular split: all of a document's examples land on one
    side. ``round(fraction * n_docs)`` documents train (clamped so the
    validation side is never empty)."""
    if not (0.0 < fraction < 1.0):
        raise ValueError("fraction must be in (0, 1)")
    doc_ids: list[str] = []
    seen: set[str] = set()
    for ex in examples:
        if ex.doc_id not in seen:
            seen.add(ex.doc_id)
            doc_ids.append(ex.doc_id)
    if len(doc_ids) < 2:
        raise ValueError(f"need at least 2 documents to split, got {len(doc_ids)}")
    rng = np.random.default_rng(np.random.SeedSequence([_SPLIT_TAG, seed]))
    perm = rng.permutation(len(doc_ids))
    n_train = min(max(int(round(fraction * len(doc_ids))), 1), len(doc_ids) - 1)
    train_ids = {doc_ids[i] for i in perm[:n_train]}
    train = [ex for ex in examples if ex.doc_id in train_ids]
    val = [ex for ex in examples if ex.doc_id not in train_ids]
    return train, val


# ---------------------------------------------------------------------------
# Rectified Adam
# ---------------------------------------------------------------------------

def radam_step(
    params: ScorerParams,
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
    cfg: TrainConfig,
) -> tuple[ScorerParams, OptimizerState]:
    """One rectified-Adam update, in place.

    The bias-corrected first moment is always applied. When the
    approximated SMA length rho_t exceeds RECT_THRESHOLD the step is
    variance-adapted and multiplied by the rectification term; otherwise it
    is an un-adapted momentum step.
    """
    state.t += 1
    t = state.t
    beta1, beta2 = cfg.beta1, cfg.beta2
    beta2_t = beta2**t
    bias1 = 1.0 - beta1**t
    rho_inf = 2.0 / (1.0 - beta2) - 1.0
    rho_t = rho_inf - 2.0 * t * beta2_t / (1.0 - beta2_t)
    rect = None
    if rho_t > RECT_THRESHOLD:
        rect = np.sqrt(
            ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
            / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)
        )
    mats = params.matrices()
    for name, arr in mats.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for {name!r} at step {t}")
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / bias1
        if rect is None:
            arr -= cfg.learning_rate * m_hat
        else:
            denom = np.sqrt(v / (1.0 - beta2_t)) + cfg.epsilon
            arr -= cfg.learning_rate * rect * m_hat / denom
    return params, state


# ---------------------------------------------------------------------------
# ROC AUC
# ---------------------------------------------------------------------------

def roc_auc(pairs: Sequence[tuple[float, int]]) -> float:
    """Probability that a random positive outranks a random negative, ties
    counted half (Mann-Whitney). Raises DegenerateLabelsError if only one
    class is present."""
    scores = np.asarray([s for s, _ in pairs], dtype=np.float64)
    labels = np.asarray([l for _, l in pairs])
    return _auc_arrays(scores, labels)


def _auc_arrays(scores: np.ndarray, labels: np.ndarray) -> float:
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError(
            f"need both classes, got {n_pos} positives / {n_neg} negatives"
        )
    _, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    starts = ends - counts
    avg_rank = (starts + ends + 1) / 2.0  # 1-based average rank per tie group
    ranks = avg_rank[inverse]
    rank_sum = float(ranks[pos].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def examples_auc(examples: Sequence[LabeledExample], params: ScorerParams) -> float:
    enc = encode_examples([(e.neighbor_set, e.field_index, e.label) for e in examples], params.vocab)
    return _auc_arrays(batch_scores_encoded(enc, params), enc.labels.astype(int))


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def train_examples(
    examples: Sequence[LabeledExample],
    vocab: Vocab,
    field_names: Sequence[str],
    cfg: TrainConfig,
    initial_params: ScorerParams | None = None,
    dims: ModelDims = ModelDims(),
) -> Checkpoint:
    """Epoch loop over pre-built examples.

    Examples are canonically re-sorted first, so the result does not depend
    on construction order. Each epoch shuffles (seeded), iterates batches
    of ``batch_size`` keeping the short final batch, then scores the
    validation split; the best-AUC epoch's parameters are returned. If
    validation labels are degenerate in every epoch, the final epoch is
    returned with ``degenerate_validation`` set.
    """
    if not examples:
        raise ValueError("no training examples")
    if initial_params is not None:
        if initial_params.vocab != vocab or tuple(initial_params.field_names) != tuple(field_names):
            raise ValueError("initial_params vocab/fields incompatible with this run")
        dims = initial_params.dims
    ordered = sorted(examples, key=LabeledExample.sort_key)
    fingerprint = config_fingerprint(cfg, dims, vocab, field_names)

    params = initial_params.copy() if initial_params is not None else init_params(
        cfg.seed, vocab, field_names, dims
    )
    if cfg.max_epochs == 0:
        return Checkpoint(
            params=params,
            val_auc=None,
            epoch=0,
            config_fingerprint=fingerprint,
            degenerate_validation=True,
        )

    train_ex, val_ex = split_examples(ordered, cfg.split_fraction, cfg.seed)
    enc_train = encode_examples(
        [(e.neighbor_set, e.field_index, e.label) for e in train_ex], vocab
    )
    enc_val = encode_examples([(e.neighbor_set, e.field_index, e.label) for e in val_ex], vocab)
    val_labels = enc_val.labels.astype(int)

    state = OptimizerState.zeros(params)
    rng = np.random.default_rng(cfg.seed)
    history: list[dict] = []
    best: tuple[float, int, ScorerParams] | None = None
    n_train = len(enc_train)

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n_train)
        loss_sum = 0.0
        for lo in range(0, n_train, cfg.batch_size):
            rows = order[lo : lo + cfg.batch_size]
            loss, grads = loss_and_gradient_encoded(enc_train.take(rows), params)
            radam_step(params, grads, state, cfg)
            loss_sum += loss * len(rows)
        train_loss = loss_sum / n_train
        try:
            val_auc = _auc_arrays(batch_scores_encoded(enc_val, params), val_labels)
        except DegenerateLabelsError:
            val_auc = None
        history.append({"epoch": epoch, "train_loss": train_loss, "val_auc": val_auc})
        logger.debug("epoch %d train_loss=%.6f val_auc=%s", epoch, train_loss, val_auc)
        if val_auc is not None and (best is None or val_auc > best[0]):
            best = (val_auc, epoch, params.copy())

    if best is None:
        logger.warning("validation labels degenerate in every epoch; using final checkpoint")
        return Checkpoint(
            params=params,
            val_auc=None,
            epoch=cfg.max_epochs,
            config_fingerprint=fingerprint,
            degenerate_validation=True,
            history=history,
        )
    return Checkpoint(
        params=best[2],
        val_auc=best[0],
        epoch=best[1],
        config_fingerprint=fingerprint,
        degenerate_validation=False,
        history=history,
    )


def train(
    corpus: Corpus,
    vocab: Vocab,
    schema: TargetSchema,
    cfg: TrainConfig,
    feature_cfg: FeatureConfig = FeatureConfig(),
    initial_params: ScorerParams | None = None,
    field_order: Sequence[str] | None = None,
    cache: FeatureCache | None = None,
    dims: ModelDims = ModelDims(),
) -> Checkpoint:
    """Label the corpus's training documents and run the epoch loop."""
    if not corpus.train_docs:
        raise ValueError("corpus has no training documents")
    if initial_params is not None and initial_params.vocab != vocab:
        raise ValueError("initial_params were trained with a different vocabulary")
    if field_order is None:
        field_order = (
            initial_params.field_names if initial_params is not None else schema.field_names
        )
    examples = build_examples(
        corpus.train_docs,
        schema,
        feature_cfg,
        neg_cap=cfg.neg_per_pos_cap,
        seed=cfg.seed,
        field_order=field_order,
        cache=cache,
    )
    return train_examples(examples, vocab, field_order, cfg, initial_params, dims)


# ---------------------------------------------------------------------------
# Checkpoint files
# ---------------------------------------------------------------------------

def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    scorer.save_params(
        ckpt.params,
        path,
        extra={
            "val_auc": ckpt.val_auc,
            "epoch": ckpt.epoch,
            "config_fingerprint": ckpt.config_fingerprint,
            "degenerate_validation": ckpt.degenerate_validation,
            "history": ckpt.history,
        },
    )


def load_checkpoint(path: str | Path) -> Checkpoint:
    params, extra = scorer.load_params(path)
    return Checkpoint(
        params=params,
        val_auc=extra.get("val_auc"),
        epoch=extra.get("epoch", 0),
        config_fingerprint=extra.get("config_fingerprint", ""),
        degenerate_validation=extra.get("degenerate_validation", False),
        history=extra.get("history", []),
    )
