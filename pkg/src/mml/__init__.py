"""Maximal multiverse learning: orthogonal parallel heads with MeanShift pruning."""

__version__ = "0.1.0"

from .data import Dataset, DatasetSpec, Example, binarize_stsb, collapse_nli_labels, load_tsv, synth_gaussian
from .encoder import EncoderParams, SentencePair, encode, encode_backward, featurize, init_encoder
from .evaluation import EvalReport, accuracy, cross_evaluate, evaluate, spearman
from .meanshift import ClusterResult, estimate_bandwidth, mean_shift_1d, min_centroid_members
from .model import MMLModel, load_checkpoint, save_checkpoint
from .multiverse import (HeadBank, TaskKind, aggregate_inference, forward_heads, init_head_bank,
                         multiverse_loss, orthogonality_tables, task_loss, total_loss)
from .trainer import EmaTracker, TrainerConfig, TrainTrace, ema_update, prune_heads, train, train_step
