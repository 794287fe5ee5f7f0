"""formfactor: field extraction from form-like documents.

Pipeline: high-recall typed candidate generation over OCR tokens, a
self-attention scorer that matches candidate neighborhoods against learned
field embeddings, and constrained per-field assignment — plus from-scratch,
transfer, and multi-domain training regimes with a synthetic corpus
generator for desk-scale experiments.
"""

__version__ = "0.1.0"

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
    parse_document,
    parse_schema,
    serialize_document,
    validate_schema,
)
from .candgen import Candidate, candidate_coverage, generate_candidates
from .neighborhood import FeatureConfig, Neighbor, NeighborSet, extract_neighbors
from .scorer import (
    ModelDims,
    ScoredCandidate,
    ScorerParams,
    Vocab,
    batch_gradient,
    batch_loss,
    embed_candidate,
    init_params,
    load_params,
    save_params,
    score_pair,
)
from .training import (
    Checkpoint,
    LabeledExample,
    OptimizerState,
    TrainConfig,
    build_vocab,
    label_candidates,
    radam_step,
    roc_auc,
    split_examples,
    train,
)
from .assign import Extraction, FieldAssignment, assign, sweep_thresholds
from .evaluation import (
    EvalFilters,
    EvaluationReport,
    FieldMetrics,
    RegimeReport,
    evaluate,
    macro_average,
    median_over_seeds,
)
from .transfer import (
    DomainPair,
    Regime,
    learning_curve,
    run_multidomain,
    run_scratch,
    run_transfer,
)
from .synthcorpus import CorpusSpec, Template, generate_corpus, generate_template, render_document
