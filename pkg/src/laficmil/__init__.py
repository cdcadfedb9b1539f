"""Long-sequence classification as correlated multiple-instance learning, in numpy."""

from .attention import AttentionConfig, exact_attention, multi_head_attention, nystrom_attention
from .corpus import Bag, Document, chunk, generate_correlated_task, mil_label, toy_embed
from .errors import CapacityError, DegenerateInputError, NonFiniteError, ShapeError
from .linalg import pinv_iterative
from .model import ModelConfig, forward, init_params, load_checkpoint, save_checkpoint, score_bag
from .training import TrainConfig, evaluate, loss, train

__all__ = [
    "AttentionConfig", "Bag", "CapacityError", "DegenerateInputError", "Document", "ModelConfig",
    "NonFiniteError", "ShapeError", "TrainConfig", "chunk", "evaluate", "exact_attention", "forward",
    "generate_correlated_task", "init_params", "load_checkpoint", "loss", "mil_label",
    "multi_head_attention", "nystrom_attention", "pinv_iterative", "save_checkpoint", "score_bag",
    "toy_embed", "train",
]
