"""Neural CRF constituency parsing with anchored-rule potentials."""

__version__ = "0.1.0"

from .embeddings import EmbeddingTable, load_embeddings, load_embeddings_file
from .evaluation import brackets, score
from .grammar import Grammar, extract_grammar
from .inference import inside, outside, viterbi
from .model import Model, ModelConfig
from .training import TrainConfig, train
from .treebank import Leaf, Tree, normalize, read_ptb, read_ptb_file, write_ptb

__all__ = [
    "EmbeddingTable",
    "Grammar",
    "Leaf",
    "Model",
    "ModelConfig",
    "TrainConfig",
    "Tree",
    "brackets",
    "extract_grammar",
    "inside",
    "load_embeddings",
    "load_embeddings_file",
    "normalize",
    "outside",
    "read_ptb",
    "read_ptb_file",
    "score",
    "train",
    "viterbi",
    "write_ptb",
]
