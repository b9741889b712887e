"""DeIsTe textual entailment: dynamic and position-aware attentive convolutions
over word-to-word interactions, with a small numpy autodiff engine."""

from .data import PairExample, load_tsv
from .errors import (
    ContractError,
    DegenerateInputError,
    DeisteError,
    DimensionError,
    EmptySequenceError,
    FormatError,
)
from .model import (
    Adagrad,
    DeisteModel,
    SentenceOnlyModel,
    TrainConfig,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .numerics import Graph, Tensor, grad_check
from .text import Vocabulary, tokenize

__version__ = "0.1.0"
