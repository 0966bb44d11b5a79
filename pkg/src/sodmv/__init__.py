"""Neural dependency model with valence, second-order extensions and direct marginal-likelihood training."""

from .archive import ArchiveError, load_model, save_model
from .chart import (
    ExpectedCounts,
    JointTables,
    ModelKind,
    ParseTree,
    dp_update_count,
    expected_counts,
    expected_counts_batch,
    inside,
    inside_batch,
    viterbi_batch,
    viterbi_parse,
)
from .data import (
    ConlluError,
    Corpus,
    build_parallel_views,
    generate_synthetic,
    load_grammar,
    random_grammar,
    read_conllu,
    save_grammar,
    to_sentences,
    write_conllu,
)
from .evaluate import EvalReport, PunctPolicy, evaluate_uas, random_projective_baseline
from .grammar import (
    Decision,
    Direction,
    GrammarError,
    Order,
    RuleTables,
    Sentence,
    ValidationReport,
    Valence,
    Vocab,
    VocabMode,
    build_vocab,
    validate_rule_tables,
)
from .neural import DimConfig, NeuralParams, backward_params, forward_tables, init_params
from .training import (
    Init,
    JointModel,
    Method,
    NeuralModel,
    TableModel,
    TrainConfig,
    TrainingError,
    TrainResult,
    build_model,
    parse,
    train,
    train_restarts,
)

__version__ = "0.1.0"
