"""Document, schema, and corpus data model plus their on-disk JSON formats.

Input begins at tokenized OCR output: a document is a list of text tokens
with normalized bounding boxes, optionally carrying ground-truth field
values. All types here are immutable after construction and safe to share
across threads; parsing is reentrant and keeps no global state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence


class DocumentParseError(ValueError):
    """Malformed or invariant-violating document input.

    ``path`` names the first offending location in the input, using a
    JSONPath-like notation such as ``$.tokens[3].bbox[0]``.
    """

    def __init__(self, message: str, path: str = "$"):
        super().__init__(f"{path}: {message}")
        self.path = path


class SchemaValidationError(ValueError):
    """Schema failed validation. ``problems`` lists every violation found."""

    def __init__(self, problems: Sequence[str]):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


class FieldType(str, Enum):
    """Closed set of candidate/field types. Serialized as lowercase names."""

    DATE = "date"
    AMOUNT = "amount"
    INTEGER = "integer"
    NUMERIC = "numeric"
    ALPHANUMERIC = "alphanumeric"


class ConstraintKind(str, Enum):
    DATE_PRECEDES = "date_precedes"
    DISTINCT_VALUES = "distinct_values"


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in normalized page coordinates.

    Origin is the top-left corner, y increases downward, and all
    coordinates lie in [0, 1] with x_min <= x_max and y_min <= y_max.
    """

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        for name in ("x_min", "y_min", "x_max", "y_max"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not (0.0 <= v <= 1.0):
                raise ValueError(f"{name}={v!r} outside [0, 1]")
        if self.x_min > self.x_max:
            raise ValueError(f"x_min {self.x_min} > x_max {self.x_max}")
        if self.y_min > self.y_max:
            raise ValueError(f"y_min {self.y_min} > y_max {self.y_max}")

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)

    def union(self, other: "BBox") -> "BBox":
        return BBox(
            min(self.x_min, other.x_min),
            min(self.y_min, other.y_min),
            max(self.x_max, other.x_max),
            max(self.y_max, other.y_max),
        )

    def overlaps(self, other: "BBox") -> bool:
        return (
            self.x_min < other.x_max
            and other.x_min < self.x_max
            and self.y_min < other.y_max
            and other.y_min < self.y_max
        )

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


@dataclass(frozen=True)
class Token:
    """A single OCR word: non-empty, whitespace-free text plus its box."""

    text: str
    bbox: BBox
    page_index: int

    def __post_init__(self):
        if not self.text:
            raise ValueError("token text is empty")
        if any(ch.isspace() for ch in self.text):
            raise ValueError(f"token text {self.text!r} contains whitespace")
        if self.page_index < 0:
            raise ValueError(f"negative page_index {self.page_index}")


@dataclass(frozen=True)
class GroundTruthValue:
    """One accepted value for a field, already in canonical form."""

    canonical_value: str
    bbox: BBox | None = None

    def __post_init__(self):
        if not self.canonical_value:
            raise ValueError("ground-truth canonical_value is empty")


@dataclass(frozen=True)
class Constraint:
    """Business rule enforced at assignment time.

    date_precedes(a, b): the value assigned to ``field_a`` must not be a
    later calendar date than the one assigned to ``field_b``.
    distinct_values(a, b): the two fields must not be assigned the same
    canonical value.
    """

    kind: ConstraintKind
    field_a: str
    field_b: str

    def to_json(self) -> dict:
        return {"kind": self.kind.value, "field_a": self.field_a, "field_b": self.field_b}


@dataclass(frozen=True)
class FieldSpec:
    name: str
    field_type: FieldType
    threshold: float | None = None

    def __post_init__(self):
        if self.threshold is not None and not (0.0 <= self.threshold <= 1.0):
            raise ValueError(f"threshold {self.threshold} outside [0, 1]")


@dataclass(frozen=True)
class TargetSchema:
    """The extraction target: named, typed fields plus assignment constraints."""

    doc_type: str
    fields: tuple[FieldSpec, ...]
    constraints: tuple[Constraint, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(self.fields))
        object.__setattr__(self, "constraints", tuple(self.constraints))

    @property
    def field_names(self) -> list[str]:
        return [f.name for f in self.fields]

    def field(self, name: str) -> FieldSpec:
        for f in self.fields:
            if f.name == name:
                return f
        raise KeyError(name)

    def fields_of_type(self, field_type: FieldType) -> list[FieldSpec]:
        return [f for f in self.fields if f.field_type == field_type]

    @property
    def field_types(self) -> set[FieldType]:
        return {f.field_type for f in self.fields}


@dataclass(frozen=True)
class Document:
    """One OCR'd document, tokens in reading order.

    Construct through :func:`make_document` or :func:`parse_document` so
    that tokens are sorted and invariants checked.
    """

    doc_id: str
    language: str
    doc_type: str
    template_id: str
    pages: tuple[tuple[float, float], ...]  # (width, height) per page
    tokens: tuple[Token, ...]
    ground_truth: Mapping[str, tuple[GroundTruthValue, ...]] | None = None

    @property
    def labeled(self) -> bool:
        return self.ground_truth is not None

    def accepted_values(self, field_name: str) -> list[str]:
        if self.ground_truth is None:
            return []
        return [gt.canonical_value for gt in self.ground_truth.get(field_name, ())]


def reading_order_key(token: Token, input_index: int) -> tuple:
    """Total order over tokens: page, then line (y quantized to 1/100),
    then x, tie-broken by input position."""
    return (token.page_index, round(token.bbox.y_min * 100), token.bbox.x_min, input_index)


def make_document(
    doc_id: str,
    language: str,
    doc_type: str,
    template_id: str,
    pages: Sequence[tuple[float, float]],
    tokens: Iterable[Token],
    ground_truth: Mapping[str, Sequence[GroundTruthValue]] | None = None,
) -> Document:
    """Build a Document, sorting tokens into reading order and validating."""
    toks = list(tokens)
    n_pages = len(pages)
    for i, t in enumerate(toks):
        if t.page_index >= n_pages:
            raise DocumentParseError(
                f"page_index {t.page_index} >= page count {n_pages}", f"$.tokens[{i}].page"
            )
    order = sorted(range(len(toks)), key=lambda i: reading_order_key(toks[i], i))
    gt = None
    if ground_truth is not None:
        gt = {k: tuple(v) for k, v in ground_truth.items()}
    return Document(
        doc_id=doc_id,
        language=language,
        doc_type=doc_type,
        template_id=template_id,
        pages=tuple((float(w), float(h)) for w, h in pages),
        tokens=tuple(toks[i] for i in order),
        ground_truth=gt,
    )


# ---------------------------------------------------------------------------
# Document JSON format
# ---------------------------------------------------------------------------

def _require(obj: Any, key: str, kind, path: str):
    if not isinstance(obj, dict):
        raise DocumentParseError(f"expected object, got {type(obj).__name__}", path)
    if key not in obj:
        raise DocumentParseError(f"missing key {key!r}", path)
    v = obj[key]
    if kind is float:
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise DocumentParseError(f"{key!r} must be a number", f"{path}.{key}")
        return float(v)
    if not isinstance(v, kind) or (kind is int and isinstance(v, bool)):
        raise DocumentParseError(
            f"{key!r} must be {kind.__name__}, got {type(v).__name__}", f"{path}.{key}"
        )
    return v


def _parse_bbox(raw: Any, path: str) -> BBox:
    if not isinstance(raw, list) or len(raw) != 4:
        raise DocumentParseError("bbox must be a 4-element array", path)
    vals = []
    for i, v in enumerate(raw):
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise DocumentParseError("bbox entries must be numbers", f"{path}[{i}]")
        vals.append(float(v))
    try:
        return BBox(*vals)
    except ValueError as exc:
        raise DocumentParseError(str(exc), path) from exc


def parse_document(raw: bytes | str) -> Document:
    """Parse the document JSON format. Never aborts on arbitrary input:
    every failure raises DocumentParseError naming the offending path."""
    if isinstance(raw, bytes):
        try:
            raw = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DocumentParseError(f"not valid UTF-8: {exc}", "$") from exc
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise DocumentParseError(f"not valid JSON: {exc}", "$") from exc
    if not isinstance(data, dict):
        raise DocumentParseError("top level must be an object", "$")

    doc_id = _require(data, "doc_id", str, "$")
    language = _require(data, "language", str, "$")
    doc_type = _require(data, "doc_type", str, "$")
    template_id = _require(data, "template_id", str, "$")

    raw_pages = _require(data, "pages", list, "$")
    pages = []
    for i, p in enumerate(raw_pages):
        w = _require(p, "width", float, f"$.pages[{i}]")
        h = _require(p, "height", float, f"$.pages[{i}]")
        if w <= 0 or h <= 0:
            raise DocumentParseError("page size must be positive", f"$.pages[{i}]")
        pages.append((w, h))

    raw_tokens = _require(data, "tokens", list, "$")
    tokens = []
    for i, t in enumerate(raw_tokens):
        text = _require(t, "text", str, f"$.tokens[{i}]")
        page = _require(t, "page", int, f"$.tokens[{i}]")
        if not isinstance(t, dict) or "bbox" not in t:
            raise DocumentParseError("missing key 'bbox'", f"$.tokens[{i}]")
        bbox = _parse_bbox(t["bbox"], f"$.tokens[{i}].bbox")
        try:
            tokens.append(Token(text=text, bbox=bbox, page_index=page))
        except ValueError as exc:
            raise DocumentParseError(str(exc), f"$.tokens[{i}]") from exc

    ground_truth = None
    if data.get("ground_truth") is not None:
        gt_raw = data["ground_truth"]
        if not isinstance(gt_raw, dict):
            raise DocumentParseError("ground_truth must be an object", "$.ground_truth")
        ground_truth = {}
        for fname, values in gt_raw.items():
            if not isinstance(values, list):
                raise DocumentParseError("field values must be an array", f"$.ground_truth.{fname}")
            parsed = []
            for j, v in enumerate(values):
                value = _require(v, "value", str, f"$.ground_truth.{fname}[{j}]")
                bbox = None
                if isinstance(v, dict) and v.get("bbox") is not None:
                    bbox = _parse_bbox(v["bbox"], f"$.ground_truth.{fname}[{j}].bbox")
                try:
                    parsed.append(GroundTruthValue(canonical_value=value, bbox=bbox))
                except ValueError as exc:
                    raise DocumentParseError(str(exc), f"$.ground_truth.{fname}[{j}]") from exc
            ground_truth[fname] = parsed

    try:
        return make_document(doc_id, language, doc_type, template_id, pages, tokens, ground_truth)
    except DocumentParseError:
        raise
    except ValueError as exc:
        raise DocumentParseError(str(exc), "$") from exc


def document_to_json(doc: Document) -> dict:
    out: dict[str, Any] = {
        "doc_id": doc.doc_id,
        "language": doc.language,
        "doc_type": doc.doc_type,
        "template_id": doc.template_id,
        "pages": [{"width": w, "height": h} for w, h in doc.pages],
        "tokens": [
            {"text": t.text, "page": t.page_index, "bbox": t.bbox.as_list()} for t in doc.tokens
        ],
    }
    if doc.ground_truth is not None:
        gt = {}
        for fname in sorted(doc.ground_truth):
            entries = []
            for v in doc.ground_truth[fname]:
                e: dict[str, Any] = {"value": v.canonical_value}
                if v.bbox is not None:
                    e["bbox"] = v.bbox.as_list()
                entries.append(e)
            gt[fname] = entries
        out["ground_truth"] = gt
    return out


def serialize_document(doc: Document) -> str:
    """Canonical JSON serialization; byte-stable for identical documents."""
    return json.dumps(document_to_json(doc), sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# Schema JSON format and validation
# ---------------------------------------------------------------------------

def validate_schema(schema: TargetSchema) -> list[str]:
    """Return every invariant violation (empty list means the schema is valid)."""
    problems: list[str] = []
    if not schema.fields:
        problems.append("schema has no fields")
    seen: set[str] = set()
    for f in schema.fields:
        if f.name in seen:
            problems.append(f"duplicate field name {f.name!r}")
        seen.add(f.name)
    by_name = {f.name: f for f in schema.fields}
    for c in schema.constraints:
        for ref in (c.field_a, c.field_b):
            if ref not in by_name:
                problems.append(f"constraint {c.kind.value} references unknown field {ref!r}")
        if c.kind == ConstraintKind.DATE_PRECEDES:
            for ref in (c.field_a, c.field_b):
                f = by_name.get(ref)
                if f is not None and f.field_type != FieldType.DATE:
                    problems.append(
                        f"date_precedes field {ref!r} has type {f.field_type.value}, expected date"
                    )
    return problems


def parse_schema(raw: bytes | str | dict) -> TargetSchema:
    """Parse and validate the schema JSON format.

    Raises SchemaValidationError listing every problem, not only the first.
    """
    if isinstance(raw, (bytes, str)):
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise SchemaValidationError([f"not valid JSON: {exc}"]) from exc
    else:
        data = raw
    problems: list[str] = []
    if not isinstance(data, dict):
        raise SchemaValidationError(["top level must be an object"])
    doc_type = data.get("doc_type")
    if not isinstance(doc_type, str):
        problems.append("doc_type must be a string")
        doc_type = ""
    fields = []
    for i, f in enumerate(data.get("fields") or []):
        name = f.get("name") if isinstance(f, dict) else None
        ftype = f.get("type") if isinstance(f, dict) else None
        if not isinstance(name, str) or not name:
            problems.append(f"fields[{i}]: missing or invalid name")
            continue
        try:
            field_type = FieldType(ftype)
        except ValueError:
            problems.append(f"field {name!r}: unknown field type {ftype!r}")
            continue
        threshold = f.get("threshold")
        if threshold is not None and (
            not isinstance(threshold, (int, float)) or not 0.0 <= threshold <= 1.0
        ):
            problems.append(f"field {name!r}: threshold {threshold!r} outside [0, 1]")
            threshold = None
        fields.append(FieldSpec(name=name, field_type=field_type, threshold=threshold))
    constraints = []
    for i, c in enumerate(data.get("constraints") or []):
        kind_raw = c.get("kind") if isinstance(c, dict) else None
        try:
            kind = ConstraintKind(kind_raw)
        except ValueError:
            problems.append(f"constraints[{i}]: unknown kind {kind_raw!r}")
            continue
        field_a, field_b = c.get("field_a"), c.get("field_b")
        if not isinstance(field_a, str) or not isinstance(field_b, str):
            problems.append(f"constraints[{i}]: field_a/field_b must be strings")
            continue
        constraints.append(Constraint(kind=kind, field_a=field_a, field_b=field_b))
    schema = TargetSchema(doc_type=doc_type, fields=tuple(fields), constraints=tuple(constraints))
    problems.extend(validate_schema(schema))
    if problems:
        raise SchemaValidationError(problems)
    return schema


def schema_to_json(schema: TargetSchema) -> dict:
    fields = []
    for f in schema.fields:
        e: dict[str, Any] = {"name": f.name, "type": f.field_type.value}
        if f.threshold is not None:
            e["threshold"] = f.threshold
        fields.append(e)
    return {
        "doc_type": schema.doc_type,
        "fields": fields,
        "constraints": [c.to_json() for c in schema.constraints],
    }


# ---------------------------------------------------------------------------
# Corpus: documents sharing one schema and language, with a train/test split
# ---------------------------------------------------------------------------

@dataclass
class Corpus:
    doc_type: str
    language: str
    schema: TargetSchema
    train_docs: list[Document] = field(default_factory=list)
    test_docs: list[Document] = field(default_factory=list)

    def __post_init__(self):
        seen: set[str] = set()
        for d in self.all_docs:
            if d.doc_id in seen:
                raise ValueError(f"duplicate doc_id {d.doc_id!r} in corpus")
            seen.add(d.doc_id)

    @property
    def all_docs(self) -> list[Document]:
        return list(self.train_docs) + list(self.test_docs)


def save_corpus(corpus: Corpus, out_dir: str | Path) -> None:
    """Write documents, schema.json, and manifest.jsonl under ``out_dir``.

    Deterministic: rewriting the same corpus produces byte-identical files.
    """
    out = Path(out_dir)
    (out / "docs").mkdir(parents=True, exist_ok=True)
    lines = []
    for split, docs in (("train", corpus.train_docs), ("test", corpus.test_docs)):
        for doc in docs:
            rel = f"docs/{doc.doc_id}.json"
            (out / rel).write_text(serialize_document(doc), encoding="utf-8")
            lines.append(json.dumps({"path": rel, "split": split}, sort_keys=True))
    (out / "manifest.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    meta = {"doc_type": corpus.doc_type, "language": corpus.language}
    (out / "corpus.json").write_text(json.dumps(meta, sort_keys=True), encoding="utf-8")
    (out / "schema.json").write_text(
        json.dumps(schema_to_json(corpus.schema), sort_keys=True, indent=2), encoding="utf-8"
    )


def load_corpus(corpus_dir: str | Path) -> Corpus:
    root = Path(corpus_dir)
    schema = parse_schema((root / "schema.json").read_text(encoding="utf-8"))
    meta = json.loads((root / "corpus.json").read_text(encoding="utf-8"))
    train, test = [], []
    with open(root / "manifest.jsonl", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            entry = json.loads(line)
            split = entry.get("split")
            if split not in ("train", "test"):
                raise DocumentParseError(f"bad split {split!r}", f"manifest:{line_no}")
            doc = parse_document((root / entry["path"]).read_bytes())
            (train if split == "train" else test).append(doc)
    return Corpus(
        doc_type=meta["doc_type"],
        language=meta["language"],
        schema=schema,
        train_docs=train,
        test_docs=test,
    )
