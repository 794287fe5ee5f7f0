"""High-recall typed candidate generators.

Each generator finds every text span (up to MAX_SPAN_TOKENS tokens) whose
text parses under its type, canonicalizes the value, and emits a Candidate.
Unparseable spans are silently skipped; generators never fail on input text.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import date
from decimal import Decimal, InvalidOperation
from typing import Iterable, Sequence

from .docmodel import BBox, Document, FieldType, TargetSchema

# Spans longer than this are never considered; dates and amounts rarely
# exceed 4 tokens and this bounds the O(n * k) scan.
MAX_SPAN_TOKENS = 4

# Two-digit years: 00-68 -> 2000-2068, 69-99 -> 1969-1999.
_YEAR_PIVOT = 69

_CURRENCY_CHARS = "$€£¥"

_MONTH_NAMES = {
    # English full names and abbreviations.
    "january": 1, "february": 2, "march": 3, "april": 4, "may": 5, "june": 6,
    "july": 7, "august": 8, "september": 9, "october": 10, "november": 11,
    "december": 12,
    "jan": 1, "feb": 2, "mar": 3, "apr": 4, "jun": 6, "jul": 7, "aug": 8,
    "sep": 9, "sept": 9, "oct": 10, "nov": 11, "dec": 12,
    # French, with unaccented variants.
    "janvier": 1, "février": 2, "fevrier": 2, "mars": 3, "avril": 4,
    "mai": 5, "juin": 6, "juillet": 7, "août": 8, "aout": 8,
    "septembre": 9, "octobre": 10, "novembre": 11, "décembre": 12,
    "decembre": 12,
    "janv": 1, "févr": 2, "fevr": 2, "avr": 4, "juil": 7, "déc": 12,
}

_ISO_DATE_RE = re.compile(r"^(\d{4})[-/.](\d{1,2})[-/.](\d{1,2})$")
_NUMERIC_DATE_RE = re.compile(r"^(\d{1,2})[-/.](\d{1,2})[-/.](\d{2}|\d{4})$")
_DATE_WORDS_RE = re.compile(r"[\s,]+")

_INTEGER_RE = re.compile(r"^[+-]?\d{1,3}(?:[, ]\d{3})*$|^[+-]?\d+$")
_NUMERIC_RE = re.compile(r"^[+-]?\d+(?:\.\d+)?$")
_ALNUM_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9/_-]*[A-Za-z0-9]$")

# Amount bodies after currency stripping. Group separators are
# locale-specific; the decimal mark is '.' for en and ',' for fr.
_AMOUNT_EN_RE = re.compile(
    r"^[+-]?(?:\d{1,3}(?:,\d{3})+|\d{1,3}(?: \d{3})+|\d+)(?:\.\d+)?$"
)
_AMOUNT_FR_RE = re.compile(
    r"^[+-]?(?:\d{1,3}(?:[ .  ]\d{3})+|\d+)(?:,\d+)?$"
)


def _expand_year(y: int) -> int:
    if y >= 100:
        return y
    return 2000 + y if y < _YEAR_PIVOT else 1900 + y


def _valid_date(year: int, month: int, day: int) -> str | None:
    try:
        return date(year, month, day).isoformat()
    except ValueError:
        return None


def parse_date(text: str, language: str = "en") -> str | None:
    """Parse a date span to canonical ISO YYYY-MM-DD, or None.

    Recognizes numeric forms (MM/DD/YY, DD/MM/YYYY, YYYY-MM-DD, with
    '/', '-' or '.' separators) and month-name forms in English and
    French. When day and month are both <= 12 the language convention
    decides: month-first for English, day-first otherwise.
    """
    t = text.strip()
    if not t:
        return None

    m = _ISO_DATE_RE.match(t)
    if m:
        return _valid_date(int(m.group(1)), int(m.group(2)), int(m.group(3)))

    m = _NUMERIC_DATE_RE.match(t)
    if m:
        a, b = int(m.group(1)), int(m.group(2))
        year = _expand_year(int(m.group(3)))
        if a > 12 and b <= 12:
            month, day = b, a
        elif b > 12 and a <= 12:
            month, day = a, b
        elif language == "en":
            month, day = a, b
        else:
            month, day = b, a
        return _valid_date(year, month, day)

    words = [w for w in _DATE_WORDS_RE.split(t) if w]
    if len(words) == 3:
        w0, w1, w2 = (w.lower().rstrip(".") for w in words)
        # "October 22 2018" / "October 22, 2018"
        if w0 in _MONTH_NAMES and w1.isdigit() and w2.isdigit():
            return _valid_date(_expand_year(int(w2)), _MONTH_NAMES[w0], int(w1))
        # "22 October 2018" / "3 janvier 2020"
        if w1 in _MONTH_NAMES and w0.isdigit() and w2.isdigit():
            return _valid_date(_expand_year(int(w2)), _MONTH_NAMES[w1], int(w0))
    return None


def _strip_currency(text: str) -> str:
    t = text.strip()
    changed = True
    while changed and t:
        changed = False
        if t[0] in _CURRENCY_CHARS or t[-1] in _CURRENCY_CHARS:
            t = t.strip(_CURRENCY_CHARS).strip()
            changed = True
        for code in ("USD", "EUR", "GBP"):
            if t.upper().startswith(code + " "):
                t = t[len(code):].strip()
                changed = True
            if t.upper().endswith(" " + code):
                t = t[: -len(code) - 1].strip()
                changed = True
    return t


def _canonical_decimal(int_part: str, frac_part: str, negative: bool) -> str:
    int_part = int_part.lstrip("0") or "0"
    # Trailing zeros beyond two decimal places carry no meaning.
    while len(frac_part) > 2 and frac_part.endswith("0"):
        frac_part = frac_part[:-1]
    out = int_part if not frac_part else f"{int_part}.{frac_part}"
    if negative and (int_part != "0" or frac_part.strip("0")):
        out = "-" + out
    return out


def parse_amount(text: str, language: str = "en") -> str | None:
    """Parse a currency amount to a canonical decimal string, or None.

    Strips currency symbols/codes and locale grouping ("1,234.50" en,
    "1 234,50" or "1.234,50" fr); canonical form uses no grouping, a '.'
    decimal point, and drops trailing zeros beyond two decimals.
    """
    t = _strip_currency(text)
    if not t:
        return None
    negative = t.startswith("-")
    body = t.lstrip("+-")
    if language == "fr":
        if _AMOUNT_FR_RE.match(body):
            body = re.sub(r"[ .  ]", "", body)
            int_part, _, frac_part = body.partition(",")
        elif _NUMERIC_RE.match(body):
            # Canonical dot-decimal form must stay a fixed point everywhere.
            int_part, _, frac_part = body.partition(".")
        else:
            return None
    else:
        if not _AMOUNT_EN_RE.match(body):
            return None
        body = body.replace(",", "").replace(" ", "")
        int_part, _, frac_part = body.partition(".")
    try:
        Decimal(f"{int_part}.{frac_part or '0'}")
    except InvalidOperation:
        return None
    return _canonical_decimal(int_part, frac_part, negative)


def parse_integer(text: str) -> str | None:
    """Optional-sign digit string, possibly with grouping. Canonical form
    strips separators, leading zeros, and any '+' sign."""
    t = text.strip()
    if not _INTEGER_RE.match(t):
        return None
    negative = t.startswith("-")
    digits = re.sub(r"[+\-, ]", "", t).lstrip("0") or "0"
    return f"-{digits}" if negative and digits != "0" else digits


def parse_numeric(text: str) -> str | None:
    """Integer or dot-decimal number. Canonical form strips leading zeros
    and trailing fractional zeros."""
    t = text.strip()
    if not _NUMERIC_RE.match(t):
        return None
    negative = t.startswith("-")
    body = t.lstrip("+-")
    int_part, _, frac_part = body.partition(".")
    int_part = int_part.lstrip("0") or "0"
    frac_part = frac_part.rstrip("0")
    out = int_part if not frac_part else f"{int_part}.{frac_part}"
    if negative and out != "0":
        out = "-" + out
    return out


def parse_alphanumeric(text: str) -> str | None:
    """Identifier-like token: letters/digits with optional -/_ separators,
    at least one digit, length >= 3. Canonical form is uppercase."""
    t = text.strip()
    if len(t) < 3 or not _ALNUM_RE.match(t) or not any(c.isdigit() for c in t):
        return None
    return t.upper()


def canonicalize(text: str, field_type: FieldType, language: str = "en") -> str | None:
    """Canonical value of ``text`` under ``field_type``, or None if it does
    not parse. Idempotent: canonical values re-canonicalize to themselves."""
    if field_type == FieldType.DATE:
        return parse_date(text, language)
    if field_type == FieldType.AMOUNT:
        return parse_amount(text, language)
    if field_type == FieldType.INTEGER:
        return parse_integer(text)
    if field_type == FieldType.NUMERIC:
        return parse_numeric(text)
    if field_type == FieldType.ALPHANUMERIC:
        return parse_alphanumeric(text)
    raise ValueError(f"unsupported field type {field_type!r}")


@dataclass(frozen=True)
class Candidate:
    """A typed text span proposed as a possible value for fields of its type.

    ``token_span`` is a half-open [start, end) range of indices into the
    document's reading-ordered token list; the span is contiguous and lies
    on a single page.
    """

    candidate_id: str
    doc_id: str
    field_type: FieldType
    token_span: tuple[int, int]
    raw_text: str
    canonical_value: str
    bbox: BBox
    page_index: int

    @property
    def span_indices(self) -> range:
        return range(self.token_span[0], self.token_span[1])


def generate_candidates(doc: Document, field_type: FieldType) -> list[Candidate]:
    """All spans of up to MAX_SPAN_TOKENS same-page tokens whose joined text
    parses under ``field_type``. Pure function of (document, type);
    deduplicated by span, emitted in reading order."""
    out: list[Candidate] = []
    tokens = doc.tokens
    n = len(tokens)
    multi_token = field_type in (FieldType.DATE, FieldType.AMOUNT)
    max_len = MAX_SPAN_TOKENS if multi_token else 1
    for start in range(n):
        page = tokens[start].page_index
        for length in range(1, max_len + 1):
            end = start + length
            if end > n or tokens[end - 1].page_index != page:
                break
            raw = " ".join(tokens[i].text for i in range(start, end))
            value = canonicalize(raw, field_type, doc.language)
            if value is None:
                continue
            bbox = tokens[start].bbox
            for i in range(start + 1, end):
                bbox = bbox.union(tokens[i].bbox)
            out.append(
                Candidate(
                    candidate_id=f"{doc.doc_id}/{field_type.value}/{start}-{end}",
                    doc_id=doc.doc_id,
                    field_type=field_type,
                    token_span=(start, end),
                    raw_text=raw,
                    canonical_value=value,
                    bbox=bbox,
                    page_index=page,
                )
            )
    return out


def generate_all_candidates(
    doc: Document, field_types: Iterable[FieldType]
) -> dict[FieldType, list[Candidate]]:
    return {t: generate_candidates(doc, t) for t in field_types}


def candidate_coverage(
    docs: Sequence[Document], schema: TargetSchema
) -> dict[str, float]:
    """Fraction of ground-truth values matched by at least one candidate of
    the field's type (canonical-value equality). Fields with no ground
    truth anywhere report 1.0 (vacuously covered).

    Raises ValueError if any document lacks ground truth.
    """
    matched = {f.name: 0 for f in schema.fields}
    total = {f.name: 0 for f in schema.fields}
    types_needed = schema.field_types
    for doc in docs:
        if doc.ground_truth is None:
            raise ValueError(f"document {doc.doc_id!r} has no ground truth")
        values_by_type = {
            t: {c.canonical_value for c in generate_candidates(doc, t)} for t in types_needed
        }
        for f in schema.fields:
            for gt in doc.ground_truth.get(f.name, ()):
                total[f.name] += 1
                if gt.canonical_value in values_by_type[f.field_type]:
                    matched[f.name] += 1
    return {
        name: (matched[name] / total[name]) if total[name] else 1.0 for name in matched
    }


def candidates_to_jsonl(candidates: Iterable[Candidate]) -> str:
    """Debug/test dump: one candidate per line."""
    import json

    lines = []
    for c in candidates:
        lines.append(
            json.dumps(
                {
                    "candidate_id": c.candidate_id,
                    "doc_id": c.doc_id,
                    "field_type": c.field_type.value,
                    "token_span": list(c.token_span),
                    "raw_text": c.raw_text,
                    "canonical_value": c.canonical_value,
                    "bbox": c.bbox.as_list(),
                    "page_index": c.page_index,
                },
                sort_keys=True,
            )
        )
    return "\n".join(lines) + ("\n" if lines else "")
