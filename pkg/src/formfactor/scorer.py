"""Neighborhood scorer: encodes a candidate's neighbor set with single-head
self-attention, holds one embedding per target field in the same space, and
scores (field, candidate) pairs by scaled dot product.

Everything is plain numpy in float64 with hand-written reverse-mode
gradients; reductions use fixed order so identical inputs give bitwise
identical losses and gradients.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .neighborhood import NeighborSet

PAD_INDEX = 0
UNK_INDEX = 1

CHECKPOINT_FORMAT = "formfactor-checkpoint"
CHECKPOINT_VERSION = 1

# Additive pre-softmax penalty for masked positions; large enough that
# exp(penalty) underflows to exactly 0.0 after max subtraction.
_MASK_PENALTY = 1e30


class CheckpointError(ValueError):
    pass


class CheckpointCorruptError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointSchemaError(CheckpointError):
    """Checkpoint does not carry the fields required for the requested schema."""


class Vocab:
    """Token list with reserved PAD=0 and UNK=1; lookups are lowercased and
    unknown tokens map to UNK."""

    PAD = "<pad>"
    UNK = "<unk>"

    def __init__(self, tokens: Iterable[str]):
        toks = [Vocab.PAD, Vocab.UNK] + [t for t in tokens]
        index: dict[str, int] = {}
        for i, t in enumerate(toks):
            if t in index:
                raise ValueError(f"duplicate vocab token {t!r}")
            index[t] = i
        self._tokens = tuple(toks)
        self._index = index

    def __len__(self) -> int:
        return len(self._tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self._tokens == other._tokens

    @property
    def tokens(self) -> tuple[str, ...]:
        return self._tokens

    def lookup(self, token: str) -> int:
        return self._index.get(token.lower(), UNK_INDEX)

    def __contains__(self, token: str) -> bool:
        return token.lower() in self._index


@dataclass(frozen=True)
class ModelDims:
    d_word: int = 64
    d_pos: int = 16
    d_out: int = 80

    @property
    def d_in(self) -> int:
        return self.d_word + self.d_pos

    def to_json(self) -> dict:
        return {"d_word": self.d_word, "d_pos": self.d_pos, "d_out": self.d_out}


@dataclass
class ScorerParams:
    """All learnable state. Matrices are float64, named by ``matrices()``;
    treat as immutable for inference (training mutates through radam_step)."""

    vocab: Vocab
    field_names: tuple[str, ...]
    dims: ModelDims
    token_embeddings: np.ndarray  # (|V|, d_word)
    pos_projection: np.ndarray  # (3, d_pos)
    w_query: np.ndarray  # (d_in, d_in)
    w_key: np.ndarray  # (d_in, d_in)
    w_value: np.ndarray  # (d_in, d_in)
    w_output: np.ndarray  # (d_in, d_out)
    field_embeddings: np.ndarray  # (F, d_out)
    field_bias: np.ndarray  # (F,)

    def matrices(self) -> dict[str, np.ndarray]:
        return {
            "token_embeddings": self.token_embeddings,
            "pos_projection": self.pos_projection,
            "w_query": self.w_query,
            "w_key": self.w_key,
            "w_value": self.w_value,
            "w_output": self.w_output,
            "field_embeddings": self.field_embeddings,
            "field_bias": self.field_bias,
        }

    def copy(self) -> "ScorerParams":
        return ScorerParams(
            vocab=self.vocab,
            field_names=self.field_names,
            dims=self.dims,
            **{k: v.copy() for k, v in self.matrices().items()},
        )

    def field_index(self, name: str) -> int:
        try:
            return self.field_names.index(name)
        except ValueError:
            raise CheckpointSchemaError(f"field {name!r} not in model") from None

    @property
    def n_fields(self) -> int:
        return len(self.field_names)


class ScoredCandidate(NamedTuple):
    candidate_id: str
    field_name: str
    score: float
    logit: float


def _glorot(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in, fan_out = (shape[0], shape[1]) if len(shape) == 2 else (shape[0], 1)
    s = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape)


def glorot_bound(shape: tuple[int, ...]) -> float:
    fan_in, fan_out = (shape[0], shape[1]) if len(shape) == 2 else (shape[0], 1)
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_params(
    seed: int,
    vocab: Vocab,
    field_names: Sequence[str],
    dims: ModelDims = ModelDims(),
) -> ScorerParams:
    """Seed-deterministic uniform Glorot init; PAD embedding and field
    biases start at zero."""
    rng = np.random.default_rng(seed)
    d_in = dims.d_in
    token_embeddings = _glorot(rng, (len(vocab), dims.d_word))
    token_embeddings[PAD_INDEX] = 0.0
    pos_projection = _glorot(rng, (3, dims.d_pos))
    w_query = _glorot(rng, (d_in, d_in))
    w_key = _glorot(rng, (d_in, d_in))
    w_value = _glorot(rng, (d_in, d_in))
    w_output = _glorot(rng, (d_in, dims.d_out))
    field_embeddings = _glorot(rng, (len(field_names), dims.d_out))
    field_bias = np.zeros(len(field_names))
    return ScorerParams(
        vocab=vocab,
        field_names=tuple(field_names),
        dims=dims,
        token_embeddings=token_embeddings,
        pos_projection=pos_projection,
        w_query=w_query,
        w_key=w_key,
        w_value=w_value,
        w_output=w_output,
        field_embeddings=field_embeddings,
        field_bias=field_bias,
    )


def zero_gradients(params: ScorerParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.matrices().items()}


# ---------------------------------------------------------------------------
# Featurization: neighbor sets -> fixed-shape arrays
# ---------------------------------------------------------------------------

class EncodedBatch(NamedTuple):
    """Model-ready arrays for a batch of (neighborhood, field, label) rows."""

    token_ids: np.ndarray  # (B, N) int64
    positions: np.ndarray  # (B, N, 3) float64: rel_x, rel_y, distance
    mask: np.ndarray  # (B, N) float64, 1.0 for real neighbors
    field_idx: np.ndarray  # (B,) int64
    labels: np.ndarray  # (B,) float64

    def take(self, rows: np.ndarray) -> "EncodedBatch":
        return EncodedBatch(
            self.token_ids[rows],
            self.positions[rows],
            self.mask[rows],
            self.field_idx[rows],
            self.labels[rows],
        )

    def __len__(self) -> int:
        return self.token_ids.shape[0]


def encode_neighbor_sets(
    neighbor_sets: Sequence[NeighborSet],
    vocab: Vocab,
    field_idx: Sequence[int] | None = None,
    labels: Sequence[float] | None = None,
) -> EncodedBatch:
    """Pad to the widest neighborhood in the batch; pads use PAD ids, zero
    positions, and a zero mask bit."""
    b = len(neighbor_sets)
    n = max((len(ns.neighbors) for ns in neighbor_sets), default=0)
    token_ids = np.full((b, n), PAD_INDEX, dtype=np.int64)
    positions = np.zeros((b, n, 3))
    mask = np.zeros((b, n))
    for i, ns in enumerate(neighbor_sets):
        for j, nb in enumerate(ns.neighbors):
            token_ids[i, j] = vocab.lookup(nb.token_text)
            positions[i, j, 0] = nb.rel_x
            positions[i, j, 1] = nb.rel_y
            positions[i, j, 2] = nb.distance
            mask[i, j] = 1.0
    fi = np.zeros(b, dtype=np.int64) if field_idx is None else np.asarray(field_idx, dtype=np.int64)
    ys = np.zeros(b) if labels is None else np.asarray(labels, dtype=np.float64)
    return EncodedBatch(token_ids, positions, mask, fi, ys)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

def _encode_forward(enc: EncodedBatch, p: ScorerParams, keep: bool):
    """Candidate embeddings for a batch; when ``keep`` is set, returns the
    intermediates the backward pass needs."""
    b, n = enc.token_ids.shape
    dims = p.dims
    if n == 0:
        emb = np.zeros((b, dims.d_out))
        return emb, None
    tok = p.token_embeddings[enc.token_ids]  # (B, N, d_word)
    pos = enc.positions @ p.pos_projection  # (B, N, d_pos)
    x = np.concatenate([tok, pos], axis=2)  # (B, N, d_in)
    x_flat = x.reshape(b * n, dims.d_in)
    q = (x_flat @ p.w_query).reshape(b, n, dims.d_in)
    k = (x_flat @ p.w_key).reshape(b, n, dims.d_in)
    v = (x_flat @ p.w_value).reshape(b, n, dims.d_in)
    scale = 1.0 / math.sqrt(dims.d_in)
    scores = (q @ k.transpose(0, 2, 1)) * scale  # (B, N, N)
    scores = scores + (enc.mask[:, None, :] - 1.0) * _MASK_PENALTY
    scores -= scores.max(axis=2, keepdims=True)
    attn = np.exp(scores)
    attn /= attn.sum(axis=2, keepdims=True)  # pad keys are exactly 0
    ctx = attn @ v  # (B, N, d_in)
    counts = np.maximum(enc.mask.sum(axis=1), 1.0)  # (B,)
    pooled = (ctx * enc.mask[:, :, None]).sum(axis=1) / counts[:, None]
    emb = pooled @ p.w_output  # (B, d_out)
    cache = (x_flat, q, k, v, attn, pooled, counts, scale) if keep else None
    return emb, cache


def _score_forward(enc: EncodedBatch, p: ScorerParams, keep: bool):
    emb, cache = _encode_forward(enc, p, keep)
    fe = p.field_embeddings[enc.field_idx]  # (B, d_out)
    scale_out = 1.0 / math.sqrt(p.dims.d_out)
    logits = (emb * fe).sum(axis=1) * scale_out + p.field_bias[enc.field_idx]
    return logits, emb, fe, scale_out, cache


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _bce_from_logits(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    # max(z, 0) - z*y + log(1 + exp(-|z|)): stable for any logit.
    return np.maximum(logits, 0.0) - logits * labels + np.log1p(np.exp(-np.abs(logits)))


def batch_logits_encoded(
    enc: EncodedBatch, p: ScorerParams, chunk: int = 4096
) -> np.ndarray:
    """Logits for every row, computed in fixed-size chunks with
    deterministic order."""
    out = np.empty(len(enc))
    for lo in range(0, len(enc), chunk):
        rows = np.arange(lo, min(lo + chunk, len(enc)))
        logits, _, _, _, _ = _score_forward(enc.take(rows), p, keep=False)
        out[lo : lo + len(rows)] = logits
    return out


def batch_scores_encoded(
    enc: EncodedBatch, p: ScorerParams, chunk: int = 4096
) -> np.ndarray:
    """Scores (sigmoid of logits) for every row."""
    return _sigmoid(batch_logits_encoded(enc, p, chunk))


def loss_and_gradient_encoded(
    enc: EncodedBatch, p: ScorerParams
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean binary cross-entropy over the batch and its exact gradient with
    respect to every parameter. PAD embedding gradient is forced to zero."""
    b = len(enc)
    if b == 0:
        raise ValueError("empty batch")
    logits, emb, fe, scale_out, cache = _score_forward(enc, p, keep=True)
    loss = float(_bce_from_logits(logits, enc.labels).mean())

    grads = zero_gradients(p)
    dz = (_sigmoid(logits) - enc.labels) / b  # (B,)

    np.add.at(grads["field_bias"], enc.field_idx, dz)
    np.add.at(grads["field_embeddings"], enc.field_idx, dz[:, None] * emb * scale_out)
    demb = dz[:, None] * fe * scale_out  # (B, d_out)

    if cache is None:  # batch where every row has zero neighbors
        return loss, grads
    x_flat, q, k, v, attn, pooled, counts, scale = cache
    n = enc.mask.shape[1]
    dims = p.dims

    grads["w_output"] += pooled.T @ demb
    dpooled = demb @ p.w_output.T  # (B, d_in)
    dctx = (dpooled[:, None, :] * enc.mask[:, :, None]) / counts[:, None, None]
    dattn = dctx @ v.transpose(0, 2, 1)  # (B, N, N)
    dv = attn.transpose(0, 2, 1) @ dctx  # (B, N, d_in)
    # Softmax backward: rows with pad queries have dctx == 0, hence 0 here.
    dscores = attn * (dattn - (dattn * attn).sum(axis=2, keepdims=True))
    dscores *= scale
    dq = dscores @ k
    dk = dscores.transpose(0, 2, 1) @ q
    dq_flat = dq.reshape(b * n, dims.d_in)
    dk_flat = dk.reshape(b * n, dims.d_in)
    dv_flat = dv.reshape(b * n, dims.d_in)
    grads["w_query"] += x_flat.T @ dq_flat
    grads["w_key"] += x_flat.T @ dk_flat
    grads["w_value"] += x_flat.T @ dv_flat
    dx = dq_flat @ p.w_query.T + dk_flat @ p.w_key.T + dv_flat @ p.w_value.T
    dx = dx.reshape(b, n, dims.d_in)
    dtok = dx[:, :, : dims.d_word]
    dpos_out = dx[:, :, dims.d_word :]
    grads["pos_projection"] += np.einsum("bnk,bnd->kd", enc.positions, dpos_out)
    np.add.at(grads["token_embeddings"], enc.token_ids, dtok)
    grads["token_embeddings"][PAD_INDEX] = 0.0
    return loss, grads


# ---------------------------------------------------------------------------
# Spec-level operations on neighbor sets
# ---------------------------------------------------------------------------

Example = tuple[NeighborSet, int, int]  # (neighborhood, field index, 0/1 label)


def encode_examples(examples: Sequence[Example], vocab: Vocab) -> EncodedBatch:
    return encode_neighbor_sets(
        [e[0] for e in examples],
        vocab,
        field_idx=[e[1] for e in examples],
        labels=[float(e[2]) for e in examples],
    )


def embed_candidate(ns: NeighborSet, p: ScorerParams) -> np.ndarray:
    """Candidate embedding in the shared field/candidate space. A
    neighborless candidate embeds to the zero vector."""
    enc = encode_neighbor_sets([ns], p.vocab)
    emb, _ = _encode_forward(enc, p, keep=False)
    return emb[0]

def score_pair(
    cand_emb: np.ndarray, field_index: int, p: ScorerParams, candidate_id: str = ""
) -> ScoredCandidate:
    """Similarity of a candidate embedding to one field: scaled dot product
    plus the field's bias, squashed to a probability."""
    if not 0 <= field_index < p.n_fields:
        raise IndexError(f"field index {field_index} out of range [0, {p.n_fields})")
    logit = float(
        cand_emb @ p.field_embeddings[field_index] / math.sqrt(p.dims.d_out)
        + p.field_bias[field_index]
    )
    score = float(_sigmoid(np.array([logit]))[0])
    return ScoredCandidate(
        candidate_id=candidate_id,
        field_name=p.field_names[field_index],
        score=score,
        logit=logit,
    )


def batch_loss(batch: Sequence[Example], p: ScorerParams) -> float:
    if not batch:
        raise ValueError("empty batch")
    enc = encode_examples(batch, p.vocab)
    logits, _, _, _, _ = _score_forward(enc, p, keep=False)
    return float(_bce_from_logits(logits, enc.labels).mean())


def batch_gradient(batch: Sequence[Example], p: ScorerParams) -> dict[str, np.ndarray]:
    if not batch:
        raise ValueError("empty batch")
    _, grads = loss_and_gradient_encoded(encode_examples(batch, p.vocab), p)
    return grads


# ---------------------------------------------------------------------------
# Checkpoint container
# ---------------------------------------------------------------------------

def _encode_array(arr: np.ndarray) -> dict:
    return {
        "shape": list(arr.shape),
        "data": base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode(
            "ascii"
        ),
    }


def _decode_array(entry, name: str) -> np.ndarray:
    if not isinstance(entry, dict) or "shape" not in entry or "data" not in entry:
        raise CheckpointCorruptError(f"matrix {name!r}: missing shape/data")
    try:
        raw = base64.b64decode(entry["data"], validate=True)
    except Exception as exc:
        raise CheckpointCorruptError(f"matrix {name!r}: bad base64") from exc
    shape = tuple(entry["shape"])
    expected = int(np.prod(shape)) * 8 if shape else 8
    if len(raw) != expected:
        raise CheckpointCorruptError(
            f"matrix {name!r}: payload {len(raw)} bytes, expected {expected}"
        )
    return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()


def params_to_container(p: ScorerParams, extra: Mapping | None = None) -> dict:
    container = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dtype": "float64",
        "dims": p.dims.to_json(),
        "vocab": list(p.vocab.tokens[2:]),  # PAD/UNK are implicit
        "field_names": list(p.field_names),
        "matrices": {k: _encode_array(v) for k, v in p.matrices().items()},
    }
    if extra:
        container["training"] = dict(extra)
    return container


def params_from_container(container) -> tuple[ScorerParams, dict]:
    if not isinstance(container, dict):
        raise CheckpointCorruptError("checkpoint top level must be an object")
    if container.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointCorruptError(f"unrecognized format {container.get('format')!r}")
    if container.get("version") != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {container.get('version')!r}, expected {CHECKPOINT_VERSION}"
        )
    if container.get("dtype") != "float64":
        raise CheckpointVersionError(f"unsupported dtype {container.get('dtype')!r}")
    try:
        dims = ModelDims(**container["dims"])
        vocab = Vocab(container["vocab"])
        field_names = tuple(container["field_names"])
        raw = container["matrices"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointCorruptError(f"bad checkpoint structure: {exc}") from exc
    expected_shapes = {
        "token_embeddings": (len(vocab), dims.d_word),
        "pos_projection": (3, dims.d_pos),
        "w_query": (dims.d_in, dims.d_in),
        "w_key": (dims.d_in, dims.d_in),
        "w_value": (dims.d_in, dims.d_in),
        "w_output": (dims.d_in, dims.d_out),
        "field_embeddings": (len(field_names), dims.d_out),
        "field_bias": (len(field_names),),
    }
    mats = {}
    for name, shape in expected_shapes.items():
        if name not in raw:
            raise CheckpointCorruptError(f"missing matrix {name!r}")
        arr = _decode_array(raw[name], name)
        if arr.shape != shape:
            raise CheckpointCorruptError(
                f"matrix {name!r} has shape {arr.shape}, expected {shape}"
            )
        mats[name] = arr
    params = ScorerParams(vocab=vocab, field_names=field_names, dims=dims, **mats)
    return params, dict(container.get("training") or {})


def save_params(p: ScorerParams, path: str | Path, extra: Mapping | None = None) -> None:
    """Versioned, byte-stable container; identical params serialize to
    identical bytes."""
    payload = json.dumps(params_to_container(p, extra), sort_keys=True, separators=(",", ":"))
    Path(path).write_text(payload, encoding="utf-8")


def load_params(path: str | Path) -> tuple[ScorerParams, dict]:
    """Bit-exact inverse of save_params; returns (params, training metadata)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CheckpointCorruptError(f"cannot read checkpoint: {exc}") from exc
    try:
        container = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointCorruptError(f"checkpoint is not valid JSON: {exc}") from exc
    return params_from_container(container)
