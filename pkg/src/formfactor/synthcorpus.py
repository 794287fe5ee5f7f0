"""Synthetic form-like corpus generator.

Produces labeled invoice and paystub corpora in English and French where
every document gets its own template (seeded grid layout, key-phrase
synonyms, value placement) and every ground-truth value is rendered
verbatim as tokens, so candidate-generation coverage is 1.0 by
construction. A noise knob can drop or corrupt value tokens to push
coverage below 1.0 for testing the evaluation filters.

Template structure is drawn from a language-independent random stream, so
corpora generated for two languages from the same seed share grid
structure and differ only in lexicon and value formatting.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Callable, Sequence

import numpy as np

from . import candgen
from .docmodel import (
    BBox,
    Constraint,
    ConstraintKind,
    Corpus,
    Document,
    FieldSpec,
    FieldType,
    GroundTruthValue,
    TargetSchema,
    Token,
    make_document,
)

_STRUCT_TAG = 0x57C7
_STYLE_TAG = 0x57E1
_VALUE_TAG = 0x7A1E

PAGE_SIZE = (612.0, 792.0)
CHAR_W = 0.0065  # normalized width per character, space included
LINE_H = 0.018  # token box height
MAX_TEMPLATE_ATTEMPTS = 128


class LayoutOverflowError(RuntimeError):
    """The template grid cannot fit the rendered content."""


def _h(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


# ---------------------------------------------------------------------------
# Default schemas
# ---------------------------------------------------------------------------

def invoice_schema() -> TargetSchema:
    f = FieldType
    return TargetSchema(
        doc_type="invoice",
        fields=(
            FieldSpec("invoice_number", f.ALPHANUMERIC),
            FieldSpec("po_number", f.ALPHANUMERIC),
            FieldSpec("customer_id", f.ALPHANUMERIC),
            FieldSpec("invoice_date", f.DATE),
            FieldSpec("due_date", f.DATE),
            FieldSpec("order_date", f.DATE),
            FieldSpec("total_amount", f.AMOUNT),
            FieldSpec("subtotal_amount", f.AMOUNT),
            FieldSpec("tax_amount", f.AMOUNT),
            FieldSpec("balance_due", f.AMOUNT),
            FieldSpec("tax_rate", f.NUMERIC),
            FieldSpec("item_count", f.INTEGER),
        ),
        constraints=(
            Constraint(ConstraintKind.DATE_PRECEDES, "order_date", "invoice_date"),
            Constraint(ConstraintKind.DATE_PRECEDES, "invoice_date", "due_date"),
            Constraint(ConstraintKind.DISTINCT_VALUES, "invoice_number", "po_number"),
        ),
    )


def paystub_schema() -> TargetSchema:
    f = FieldType
    return TargetSchema(
        doc_type="paystub",
        fields=(
            FieldSpec("employee_id", f.ALPHANUMERIC),
            FieldSpec("employer_id", f.ALPHANUMERIC),
            FieldSpec("check_number", f.ALPHANUMERIC),
            FieldSpec("pay_date", f.DATE),
            FieldSpec("period_start", f.DATE),
            FieldSpec("period_end", f.DATE),
            FieldSpec("gross_pay", f.AMOUNT),
            FieldSpec("net_pay", f.AMOUNT),
            FieldSpec("federal_tax", f.AMOUNT),
            FieldSpec("state_tax", f.AMOUNT),
            FieldSpec("social_security", f.AMOUNT),
            FieldSpec("medicare", f.AMOUNT),
            FieldSpec("health_insurance", f.AMOUNT),
            FieldSpec("retirement_plan", f.AMOUNT),
            FieldSpec("ytd_gross", f.AMOUNT),
            FieldSpec("ytd_net", f.AMOUNT),
            FieldSpec("hours_worked", f.NUMERIC),
            FieldSpec("hourly_rate", f.NUMERIC),
            FieldSpec("dependents", f.INTEGER),
        ),
        constraints=(
            Constraint(ConstraintKind.DATE_PRECEDES, "period_start", "period_end"),
            Constraint(ConstraintKind.DATE_PRECEDES, "period_end", "pay_date"),
        ),
    )


DEFAULT_SCHEMAS: dict[str, Callable[[], TargetSchema]] = {
    "invoice": invoice_schema,
    "paystub": paystub_schema,
}


# ---------------------------------------------------------------------------
# Key-phrase lexicons
# ---------------------------------------------------------------------------

KEY_LEXICON: dict[tuple[str, str], dict[str, list[str]]] = {
    ("invoice", "en"): {
        "invoice_number": ["Invoice Number", "Invoice #", "Invoice No", "Inv No"],
        "po_number": ["PO Number", "Purchase Order", "PO #", "Order No"],
        "customer_id": ["Customer ID", "Account No", "Client ID", "Customer Code"],
        "invoice_date": ["Invoice Date", "Date", "Dated", "Date of Invoice"],
        "due_date": ["Due Date", "Payment Due", "Due By", "Pay By"],
        "order_date": ["Order Date", "Ordered", "Date of Order"],
        "total_amount": ["Total", "Grand Total", "Total Amount", "Invoice Total"],
        "subtotal_amount": ["Subtotal", "Sub Total", "Net Amount"],
        "tax_amount": ["Tax", "Sales Tax", "VAT", "Tax Amount"],
        "balance_due": ["Balance Due", "Balance", "Amount Due", "Outstanding"],
        "tax_rate": ["Tax Rate", "VAT Rate", "Rate"],
        "item_count": ["Items", "Item Count", "Quantity", "No of Items"],
    },
    ("invoice", "fr"): {
        "invoice_number": ["Numéro de facture", "Facture No", "No de facture"],
        "po_number": ["Bon de commande", "No de commande", "Commande No"],
        "customer_id": ["Code client", "No de client", "Référence client"],
        "invoice_date": ["Date de facture", "Date", "Facturé le"],
        "due_date": ["Échéance", "Payable le", "Date d'échéance"],
        "order_date": ["Date de commande", "Commandé le"],
        "total_amount": ["Total", "Montant total", "Total TTC"],
        "subtotal_amount": ["Sous-total", "Total HT", "Montant HT"],
        "tax_amount": ["TVA", "Montant TVA", "Taxe"],
        "balance_due": ["Solde dû", "Solde", "Reste à payer"],
        "tax_rate": ["Taux de TVA", "Taux"],
        "item_count": ["Articles", "Qté", "Quantité"],
    },
    ("paystub", "en"): {
        "employee_id": ["Employee ID", "Emp No", "Employee No", "Staff ID"],
        "employer_id": ["Employer ID", "Company ID", "EIN"],
        "check_number": ["Check No", "Check Number", "Advice No"],
        "pay_date": ["Pay Date", "Check Date", "Payment Date", "Paid On"],
        "period_start": ["Period Start", "Period Beginning", "From", "Start Date"],
        "period_end": ["Period End", "Period Ending", "To", "End Date"],
        "gross_pay": ["Gross Pay", "Gross", "Total Gross", "Gross Earnings"],
        "net_pay": ["Net Pay", "Net", "Take Home", "Net Amount"],
        "federal_tax": ["Federal Tax", "Fed Tax", "Fed Withholding"],
        "state_tax": ["State Tax", "State W/H", "State Withholding"],
        "social_security": ["Social Security", "SS Tax", "OASDI"],
        "medicare": ["Medicare", "Medicare Tax", "FICA Med"],
        "health_insurance": ["Health Insurance", "Medical", "Health Plan"],
        "retirement_plan": ["Retirement", "Pension", "Retirement Plan"],
        "ytd_gross": ["YTD Gross", "Gross YTD"],
        "ytd_net": ["YTD Net", "Net YTD"],
        "hours_worked": ["Hours", "Hours Worked", "Total Hours"],
        "hourly_rate": ["Rate", "Hourly Rate", "Pay Rate"],
        "dependents": ["Dependents", "Allowances", "Exemptions"],
    },
    ("paystub", "fr"): {
        "employee_id": ["Matricule", "No d'employé", "ID employé"],
        "employer_id": ["SIRET", "No employeur"],
        "check_number": ["No de bulletin", "Bulletin No"],
        "pay_date": ["Date de paiement", "Payé le", "Date de paie"],
        "period_start": ["Début de période", "Du", "Période du"],
        "period_end": ["Fin de période", "Au", "Période au"],
        "gross_pay": ["Salaire brut", "Brut", "Total brut"],
        "net_pay": ["Salaire net", "Net à payer", "Net"],
        "federal_tax": ["Impôt", "Prélèvement"],
        "state_tax": ["Taxe locale", "Taxe régionale"],
        "social_security": ["Sécurité sociale", "Cotisation SS"],
        "medicare": ["Assurance maladie", "Maladie"],
        "health_insurance": ["Mutuelle", "Complémentaire"],
        "retirement_plan": ["Retraite", "Cotisation retraite"],
        "ytd_gross": ["Brut cumulé", "Cumul brut"],
        "ytd_net": ["Net cumulé", "Cumul net"],
        "hours_worked": ["Heures", "Heures travaillées"],
        "hourly_rate": ["Taux horaire", "Taux"],
        "dependents": ["Personnes à charge", "Enfants"],
    },
}

DISTRACTOR_KEYS = {
    "en": ["Notes", "Ref", "Printed", "Page", "Terms", "Prepared By", "Memo", "Created"],
    "fr": ["Remarques", "Réf", "Imprimé le", "Page", "Conditions", "Préparé par", "Mémo"],
}

DISTRACTOR_WORDS = {
    "en": ["pending", "approved", "confidential", "original", "net30", "standard",
           "thank", "you", "for", "your", "business", "copy", "final"],
    "fr": ["en", "attente", "approuvé", "confidentiel", "original", "merci", "de",
           "votre", "confiance", "copie", "finale", "standard"],
}

COMPANY_WORDS = ["Acme", "Globex", "Initech", "Umbrella", "Stark", "Wayne", "Hooli",
                 "Vandelay", "Wonka", "Cyberdyne", "Tyrell", "Aperture"]
COMPANY_SUFFIX = ["Corp", "Inc", "Ltd", "LLC", "SARL", "Group", "Industries", "Partners"]

DATE_FORMATS = {
    "en": ["mdy_slash", "mdy_slash_2d", "iso", "month_name", "mdy_dash"],
    "fr": ["dmy_slash", "dmy_slash_2d", "iso", "month_name", "dmy_dot"],
}
AMOUNT_FORMATS = {
    "en": ["plain", "grouped", "symbol_attached", "symbol_token"],
    "fr": ["plain", "dot_grouped", "space_grouped", "symbol_after"],
}

_MONTHS_EN = ["January", "February", "March", "April", "May", "June", "July",
              "August", "September", "October", "November", "December"]
_MONTHS_FR = ["janvier", "février", "mars", "avril", "mai", "juin", "juillet",
              "août", "septembre", "octobre", "novembre", "décembre"]

_DISTRACTOR_KINDS = ["word", "date", "amount", "integer"]


def format_date(d: date, fmt: str, language: str) -> str:
    if fmt == "mdy_slash":
        return f"{d.month:02d}/{d.day:02d}/{d.year}"
    if fmt == "mdy_slash_2d":
        return f"{d.month:02d}/{d.day:02d}/{d.year % 100:02d}"
    if fmt == "mdy_dash":
        return f"{d.month:02d}-{d.day:02d}-{d.year}"
    if fmt == "dmy_slash":
        return f"{d.day:02d}/{d.month:02d}/{d.year}"
    if fmt == "dmy_slash_2d":
        return f"{d.day:02d}/{d.month:02d}/{d.year % 100:02d}"
    if fmt == "dmy_dot":
        return f"{d.day:02d}.{d.month:02d}.{d.year}"
    if fmt == "iso":
        return d.isoformat()
    if fmt == "month_name":
        if language == "fr":
            return f"{d.day} {_MONTHS_FR[d.month - 1]} {d.year}"
        return f"{_MONTHS_EN[d.month - 1]} {d.day}, {d.year}"
    raise ValueError(f"unknown date format {fmt!r}")


def format_amount(cents: int, fmt: str) -> str:
    units, frac = divmod(cents, 100)
    grouped_comma = f"{units:,}"
    if fmt == "plain":
        return f"{units}.{frac:02d}"
    if fmt == "grouped":
        return f"{grouped_comma}.{frac:02d}"
    if fmt == "symbol_attached":
        return f"${grouped_comma}.{frac:02d}"
    if fmt == "symbol_token":
        return f"$ {grouped_comma}.{frac:02d}"
    if fmt == "plain_comma":
        return f"{units},{frac:02d}"
    if fmt == "dot_grouped":
        return f"{grouped_comma.replace(',', '.')},{frac:02d}"
    if fmt == "space_grouped":
        return f"{grouped_comma.replace(',', ' ')},{frac:02d}"
    if fmt == "symbol_after":
        return f"{units},{frac:02d} €"
    raise ValueError(f"unknown amount format {fmt!r}")


def _amount_fmt_for(fmt: str, language: str) -> str:
    # "plain" means the locale's plain rendering.
    if language == "fr" and fmt == "plain":
        return "plain_comma"
    return fmt


# ---------------------------------------------------------------------------
# Templates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BlockSpec:
    kind: str  # "field" | "distractor" | "header"
    name: str  # field name, or distractor slot id
    key_phrase: str
    value_side: str  # "right" | "below"
    col: int
    row: int
    value_format: str = ""
    distractor_kind: str = ""  # for kind == "distractor"


@dataclass(frozen=True)
class CorpusSpec:
    doc_type: str
    language: str
    n_docs: int
    seed: int
    schema: TargetSchema | None = None
    test_fraction: float = 0.2
    noise: float = 0.0

    def __post_init__(self):
        if self.n_docs < 1:
            raise ValueError("n_docs must be >= 1")
        if self.doc_type not in DEFAULT_SCHEMAS and self.schema is None:
            raise ValueError(f"no default schema for doc_type {self.doc_type!r}")
        if not (0.0 <= self.test_fraction < 1.0):
            raise ValueError("test_fraction must be in [0, 1)")
        if not (0.0 <= self.noise <= 1.0):
            raise ValueError("noise must be in [0, 1]")

    def resolved_schema(self) -> TargetSchema:
        return self.schema if self.schema is not None else DEFAULT_SCHEMAS[self.doc_type]()

    def to_json(self) -> dict:
        return {
            "doc_type": self.doc_type,
            "language": self.language,
            "n_docs": self.n_docs,
            "seed": self.seed,
            "test_fraction": self.test_fraction,
            "noise": self.noise,
        }

    @classmethod
    def from_json(cls, data: dict) -> "CorpusSpec":
        return cls(**data)


@dataclass(frozen=True)
class Template:
    template_id: str
    doc_type: str
    language: str
    n_cols: int
    margin_x: float
    margin_y: float
    block_h: float
    key_colon: bool
    blocks: tuple[BlockSpec, ...]

    def structure_signature(self) -> str:
        """Layout identity with lexicon and formatting stripped: equal for
        templates drawn from the same structural seed in any language."""
        return json.dumps(
            {
                "doc_type": self.doc_type,
                "n_cols": self.n_cols,
                "margin_x": round(self.margin_x, 6),
                "margin_y": round(self.margin_y, 6),
                "block_h": round(self.block_h, 6),
                "blocks": [
                    [b.kind, b.name, b.value_side, b.col, b.row, b.distractor_kind]
                    for b in self.blocks
                ],
            },
            sort_keys=True,
        )


def _right_prob(n_cols: int, field_type: FieldType | None) -> float:
    # Long values (dates) go below more often so they fit narrow columns.
    if field_type == FieldType.DATE:
        return {2: 0.45, 3: 0.30}.get(n_cols, 0.15)
    return {2: 0.60, 3: 0.50}.get(n_cols, 0.35)


def generate_template(spec: CorpusSpec, template_seed: int) -> Template:
    """Seeded template: grid shape and block placement come from a
    language-independent stream; key phrases and value formats come from a
    language-specific stream."""
    schema = spec.resolved_schema()
    struct = np.random.default_rng(
        np.random.SeedSequence([_STRUCT_TAG, _h(spec.doc_type), template_seed])
    )
    style = np.random.default_rng(
        np.random.SeedSequence(
            [_STYLE_TAG, _h(spec.doc_type), _h(spec.language), template_seed]
        )
    )

    n_cols = int(struct.choice([2, 3] if len(schema.fields) <= 14 else [3, 4]))
    n_distractors = int(struct.integers(2, 5))
    margin_x = 0.04 + float(struct.uniform(0.0, 0.04))
    margin_y = 0.03 + float(struct.uniform(0.0, 0.03))
    # Blocks as tall as the page allows: keys sit close to their own value
    # and clearly apart from neighboring blocks.
    n_blocks = len(schema.fields) + n_distractors + 1
    n_rows = -(-n_blocks // n_cols)
    block_h = min(0.085 + float(struct.uniform(0.0, 0.02)), (0.96 - margin_y) / n_rows)

    field_types = {f.name: f.field_type for f in schema.fields}
    slots: list[tuple[str, str]] = [("field", f.name) for f in schema.fields]
    slots += [("distractor", f"distractor_{i}") for i in range(n_distractors)]
    order = struct.permutation(len(slots))
    placed = [slots[i] for i in order]
    # Header block (company name) always sits first.
    placed.insert(0, ("header", "header"))

    sides = []
    d_kinds = []
    for kind, name in placed:
        ftype = field_types.get(name) if kind == "field" else None
        p_right = _right_prob(n_cols, ftype) if kind != "header" else 0.0
        sides.append("right" if struct.uniform() < p_right else "below")
        d_kinds.append(
            str(struct.choice(_DISTRACTOR_KINDS)) if kind == "distractor" else ""
        )

    key_colon = bool(style.uniform() < 0.5)
    lexicon = KEY_LEXICON[(spec.doc_type, spec.language)]
    blocks = []
    for i, (kind, name) in enumerate(placed):
        col, row = i % n_cols, i // n_cols
        if kind == "field":
            phrase = str(style.choice(lexicon[name]))
            ftype = field_types[name]
            if ftype == FieldType.DATE:
                fmt = str(style.choice(DATE_FORMATS[spec.language]))
            elif ftype == FieldType.AMOUNT:
                fmt = _amount_fmt_for(
                    str(style.choice(AMOUNT_FORMATS[spec.language])), spec.language
                )
            else:
                fmt = "plain"
        elif kind == "distractor":
            phrase = str(style.choice(DISTRACTOR_KEYS[spec.language]))
            if d_kinds[i] == "date":
                fmt = str(style.choice(DATE_FORMATS[spec.language]))
            elif d_kinds[i] == "amount":
                fmt = _amount_fmt_for(
                    str(style.choice(AMOUNT_FORMATS[spec.language])), spec.language
                )
            else:
                fmt = "plain"
        else:  # header
            phrase = f"{style.choice(COMPANY_WORDS)} {style.choice(COMPANY_SUFFIX)}"
            fmt = "plain"
        blocks.append(
            BlockSpec(
                kind=kind,
                name=name,
                key_phrase=phrase,
                value_side=sides[i],
                col=col,
                row=row,
                value_format=fmt,
                distractor_kind=d_kinds[i],
            )
        )

    tpl = Template(
        template_id="",
        doc_type=spec.doc_type,
        language=spec.language,
        n_cols=n_cols,
        margin_x=margin_x,
        margin_y=margin_y,
        block_h=block_h,
        key_colon=key_colon,
        blocks=tuple(blocks),
    )
    payload = tpl.structure_signature() + json.dumps(
        [spec.language, key_colon] + [[b.key_phrase, b.value_format] for b in blocks]
    )
    tid = hashlib.sha1(payload.encode("utf-8")).hexdigest()[:16]
    return Template(**{**tpl.__dict__, "template_id": tid})


# ---------------------------------------------------------------------------
# Value sampling
# ---------------------------------------------------------------------------

def _sample_alnum(rng: np.random.Generator) -> str:
    prefix = str(rng.choice(["INV", "PO", "ACC", "REF", "DOC", "CUS", "EMP", "CHK", "ORD"]))
    if rng.uniform() < 0.5:
        return f"{prefix}-{int(rng.integers(2015, 2025))}-{int(rng.integers(0, 10000)):04d}"
    return f"{prefix}{int(rng.integers(10000, 1000000))}"


def _sample_field_values(schema: TargetSchema, rng: np.random.Generator) -> dict[str, object]:
    """Draw one raw value per field: date objects, amount cents, or strings.
    Values are distinct within a type, and date_precedes constraints are
    satisfied by sorting each constrained chain."""
    values: dict[str, object] = {}
    used: dict[FieldType, set] = {t: set() for t in FieldType}

    def draw(ftype: FieldType):
        for _ in range(64):
            if ftype == FieldType.DATE:
                v: object = date(2018, 1, 1) + timedelta(days=int(rng.integers(0, 1461)))
            elif ftype == FieldType.AMOUNT:
                v = int(rng.integers(1000, 1000000))  # cents
            elif ftype == FieldType.INTEGER:
                v = str(int(rng.integers(1, 500)))
            elif ftype == FieldType.NUMERIC:
                v = f"{int(rng.integers(50, 9900)) / 100:g}"
            else:
                v = _sample_alnum(rng)
            if v not in used[ftype]:
                used[ftype].add(v)
                return v
        raise RuntimeError(f"could not draw a distinct {ftype.value} value")

    for f in schema.fields:
        values[f.name] = draw(f.field_type)

    # Order date chains: assign sorted dates along each precedes-chain.
    chains: list[list[str]] = []
    for c in schema.constraints:
        if c.kind != ConstraintKind.DATE_PRECEDES:
            continue
        for chain in chains:
            if chain[-1] == c.field_a:
                chain.append(c.field_b)
                break
            if chain[0] == c.field_b:
                chain.insert(0, c.field_a)
                break
        else:
            chains.append([c.field_a, c.field_b])
    for chain in chains:
        sorted_dates = sorted(values[name] for name in chain)
        for name, d in zip(chain, sorted_dates):
            values[name] = d
    return values


def _render_value(value: object, ftype: FieldType, fmt: str, language: str) -> str:
    if ftype == FieldType.DATE:
        return format_date(value, fmt, language)  # type: ignore[arg-type]
    if ftype == FieldType.AMOUNT:
        return format_amount(value, fmt)  # type: ignore[arg-type]
    return str(value)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _emit_tokens(
    words: Sequence[str], x: float, y: float, limit_x: float
) -> tuple[list[Token], float]:
    toks = []
    for w in words:
        w_width = len(w) * CHAR_W
        if x + w_width > limit_x:
            raise LayoutOverflowError(f"token {w!r} exceeds cell at x={x:.3f}")
        toks.append(Token(text=w, bbox=BBox(x, y, x + w_width, y + LINE_H), page_index=0))
        x += w_width + CHAR_W
    return toks, x


def render_document(
    tpl: Template, value_seed: int, noise: float = 0.0, schema: TargetSchema | None = None
) -> Document:
    """Instantiate one labeled document from a template.

    Values are drawn from a language-independent stream (paired-language
    corpora sample the same underlying values); formatting is the
    template's. Ground truth stores canonical values; raises
    LayoutOverflowError when content cannot fit its grid cell.
    """
    if schema is None:
        if tpl.doc_type not in DEFAULT_SCHEMAS:
            raise ValueError(f"cannot render unknown doc_type {tpl.doc_type!r}")
        schema = DEFAULT_SCHEMAS[tpl.doc_type]()
    rng = np.random.default_rng(
        np.random.SeedSequence([_VALUE_TAG, _h(tpl.doc_type), value_seed])
    )
    values = _sample_field_values(schema, rng)
    field_types = {f.name: f.field_type for f in schema.fields}

    cell_w = (1.0 - 2 * tpl.margin_x) / tpl.n_cols
    # Key-to-value line gap well under the block pitch, so a value's own key
    # stays nearer than any neighboring block's content.
    line_dy = min(0.022, tpl.block_h * 0.35)
    tokens: list[Token] = []
    ground_truth: dict[str, list[GroundTruthValue]] = {}
    noise_rng = np.random.default_rng(
        np.random.SeedSequence([_VALUE_TAG + 1, _h(tpl.language), value_seed])
    )

    for block in tpl.blocks:
        x0 = tpl.margin_x + block.col * cell_w
        y0 = tpl.margin_y + block.row * tpl.block_h
        limit_x = x0 + cell_w - CHAR_W
        if y0 + tpl.block_h > 1.0:
            raise LayoutOverflowError(f"row {block.row} exceeds page height")

        key_words = block.key_phrase.split()
        if tpl.key_colon and block.kind != "header":
            key_words = key_words[:-1] + [key_words[-1] + ":"]
        key_tokens, key_end_x = _emit_tokens(key_words, x0, y0, limit_x)
        tokens.extend(key_tokens)
        if block.kind == "header":
            continue

        if block.kind == "field":
            ftype = field_types[block.name]
            raw = _render_value(values[block.name], ftype, block.value_format, tpl.language)
        else:
            ftype = None
            dk = block.distractor_kind
            if dk == "date":
                d = date(2018, 1, 1) + timedelta(days=int(rng.integers(0, 1461)))
                raw = format_date(d, block.value_format, tpl.language)
            elif dk == "amount":
                raw = format_amount(int(rng.integers(1000, 1000000)), block.value_format)
            elif dk == "integer":
                raw = str(int(rng.integers(1, 2000)))
            else:
                pool = DISTRACTOR_WORDS[tpl.language]
                k = int(rng.integers(1, 4))
                raw = " ".join(str(rng.choice(pool)) for _ in range(k))

        value_words = raw.split(" ")
        if block.value_side == "right":
            try:
                value_tokens, _ = _emit_tokens(value_words, key_end_x + CHAR_W, y0, limit_x)
            except LayoutOverflowError:
                value_tokens, _ = _emit_tokens(value_words, x0 + CHAR_W, y0 + line_dy, limit_x)
        else:
            value_tokens, _ = _emit_tokens(value_words, x0 + CHAR_W, y0 + line_dy, limit_x)

        if block.kind == "field":
            canonical = candgen.canonicalize(raw, ftype, tpl.language)
            if canonical is None:
                raise RuntimeError(
                    f"rendered value {raw!r} does not parse as {ftype.value} ({tpl.language})"
                )
            bbox = value_tokens[0].bbox
            for t in value_tokens[1:]:
                bbox = bbox.union(t.bbox)
            ground_truth.setdefault(block.name, []).append(
                GroundTruthValue(canonical_value=canonical, bbox=bbox)
            )
            if noise > 0.0:
                kept = []
                for t in value_tokens:
                    r = noise_rng.uniform()
                    if r < noise / 2.0:
                        continue  # drop
                    if r < noise:
                        corrupted = ("x" + t.text[1:]) if len(t.text) > 1 else "x"
                        t = Token(text=corrupted, bbox=t.bbox, page_index=t.page_index)
                    kept.append(t)
                value_tokens = kept
        tokens.extend(value_tokens)

    return make_document(
        doc_id=f"{tpl.doc_type}-{tpl.language}-{value_seed:012x}",
        language=tpl.language,
        doc_type=tpl.doc_type,
        template_id=tpl.template_id,
        pages=[PAGE_SIZE],
        tokens=tokens,
        ground_truth=ground_truth,
    )


# ---------------------------------------------------------------------------
# Corpus assembly
# ---------------------------------------------------------------------------

def generate_corpus(spec: CorpusSpec, out_dir=None) -> Corpus:
    """n_docs documents, one fresh template each, template ids globally
    distinct; the trailing test fraction uses templates never seen in
    training (trivially, since no template repeats). Writes corpus files
    when ``out_dir`` is given."""
    schema = spec.resolved_schema()
    seen: set[str] = set()
    docs: list[Document] = []
    for i in range(spec.n_docs):
        for attempt in range(MAX_TEMPLATE_ATTEMPTS):
            tseed = spec.seed * 1_000_003 + i * MAX_TEMPLATE_ATTEMPTS + attempt
            tpl = generate_template(spec, tseed)
            if tpl.template_id in seen:
                continue
            try:
                doc = render_document(tpl, value_seed=tseed, noise=spec.noise, schema=schema)
            except LayoutOverflowError:
                continue
            seen.add(tpl.template_id)
            docs.append(doc)
            break
        else:
            raise RuntimeError(f"could not place document {i} after {MAX_TEMPLATE_ATTEMPTS} tries")
    n_test = int(round(spec.n_docs * spec.test_fraction))
    n_train = spec.n_docs - n_test
    corpus = Corpus(
        doc_type=spec.doc_type,
        language=spec.language,
        schema=schema,
        train_docs=docs[:n_train],
        test_docs=docs[n_train:],
    )
    if out_dir is not None:
        from .docmodel import save_corpus

        save_corpus(corpus, out_dir)
    return corpus
