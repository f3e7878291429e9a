"""Multimodal neural machine translation trained from scratch on numpy.

A bidirectional recurrent encoder reads subword source text; a
doubly-conditional recurrent decoder attends independently to the
source annotations and, optionally, to a grid of spatial image
features whose contribution a learned gate scales per step. Training,
decoding, evaluation metrics, and the feature file format all live
here with no deep-learning framework underneath.

Typical entry points: MultimodalTranslator for the scikit-learn style
API, the ``mnmt`` command line for file-based workflows, and the
module-level functions below for programmatic use.
"""

from .data import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    UNK_ID,
    BpeModel,
    PreparedCorpus,
    TrainingTriple,
    Vocabulary,
    bpe_apply,
    bpe_join,
    bpe_learn,
    build_corpus,
    tokenize,
)
from .decoder import Hypothesis, beam_search, greedy_decode
from .estimator import MultimodalTranslator
from .metrics import approx_randomization, bleu4, chrf, ter
from .model import (
    DropoutMasks,
    ModelConfig,
    ModelParams,
    NmtModel,
    param_count,
    parameter_specs,
)
from .tensor import (
    GradCheckError,
    NonFiniteError,
    ShapeError,
    Tape,
    Tensor,
    backward,
    constant,
    grad_check,
    grad_errors,
    parameter,
    set_default_dtype,
    using_dtype,
)
from .training import (
    AdadeltaState,
    Checkpoint,
    EarlyStopState,
    TrainConfig,
    TrainingDiverged,
    TrainResult,
    init_params,
    load_checkpoint,
    make_dropout_masks,
    save_checkpoint,
    train,
)
from .translate import back_translate_file, dump_attention, translate_lines
from .vision import load_features, load_index, save_features, synth_features

__version__ = "0.1.0"

__all__ = [
    "BOS_ID", "EOS_ID", "PAD_ID", "UNK_ID",
    "AdadeltaState", "BpeModel", "Checkpoint", "DropoutMasks",
    "EarlyStopState", "GradCheckError", "Hypothesis", "ModelConfig",
    "ModelParams", "MultimodalTranslator", "NmtModel", "NonFiniteError",
    "PreparedCorpus", "ShapeError", "Tape", "Tensor", "TrainConfig",
    "TrainResult", "TrainingDiverged", "TrainingTriple", "Vocabulary",
    "approx_randomization", "back_translate_file", "backward", "beam_search",
    "bleu4", "bpe_apply", "bpe_join", "bpe_learn", "build_corpus", "chrf",
    "constant", "dump_attention", "grad_check", "grad_errors",
    "greedy_decode", "init_params", "load_checkpoint", "load_features",
    "load_index", "make_dropout_masks", "param_count", "parameter",
    "parameter_specs", "save_checkpoint", "save_features",
    "set_default_dtype", "synth_features", "ter", "tokenize", "train",
    "translate_lines", "using_dtype",
]
