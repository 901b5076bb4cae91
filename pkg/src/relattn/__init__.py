"""Relation-aware self-attention with clipped relative position
representations: kernels, a small encoder stack, and a toy training
harness, all on a minimal float64 autograd core."""

from .tensor import (Tensor, matmul, softmax_rows, log_softmax_rows, layer_norm,
                     gather_rows, stack, backward, finite_diff_grad,
                     ShapeMismatchError, MaskedRowError)
from .relpos import (clip, edge_label_matrix, RelativeEmbeddingTables,
                     init_tables, gather_edge_tensors)
from .attention import (AttentionConfig, AttentionParams, AttentionTrace,
                        baseline_attention, rel_attention_reference,
                        rel_attention_efficient, multi_head_forward,
                        relative_storage_report, StorageReport,
                        init_attention_params)
from .model import (EncoderConfig, init_model, named_parameters, model_forward,
                    sinusoidal_encoding, feed_forward, encoder_layer_forward)
from .training import (TrainConfig, RunMetrics, TrainingDiverged, lr_schedule,
                       AdamState, adam_step, label_smoothed_ce, make_toy_dataset,
                       train_run, evaluate_lengths, chance_accuracy,
                       position_blind_bound, smoothed_entropy, token_accuracy,
                       make_example)
from .checkpoint import save_checkpoint, load_checkpoint

__all__ = [name for name in dir() if not name.startswith("_")]
