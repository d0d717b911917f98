"""Ternary weight quantization, packed 2-bit storage and add/sub matmul kernels."""

from .errors import CorruptDataError, ModelFormatError, TernkitError
from .kernels import KernelVariant, Workspace, matmul_batch, matvec_reference, matvec_ternary, matvec_unpack
from .model import LayerState, TinyLM
from .quantizer import (
    InitResult,
    Int8Tensor,
    QuantizerConfig,
    int8_dequantize,
    int8_quantize,
    kmeans_init_layer,
    kmeans_init_neuron,
    kmeans_objective,
    quantization_error,
    ternarize_layer,
)
from .ternary import PackedTernaryMatrix, pack_matrix, sparsity, tern, tern_array, unpack_matrix
from .training import TrainConfig, cosine_lr, eval_perplexity, sgd_step, train

__version__ = "0.1.0"

__all__ = [
    "CorruptDataError",
    "ModelFormatError",
    "TernkitError",
    "KernelVariant",
    "Workspace",
    "matmul_batch",
    "matvec_reference",
    "matvec_ternary",
    "matvec_unpack",
    "LayerState",
    "TinyLM",
    "InitResult",
    "Int8Tensor",
    "QuantizerConfig",
    "int8_dequantize",
    "int8_quantize",
    "kmeans_init_layer",
    "kmeans_init_neuron",
    "kmeans_objective",
    "quantization_error",
    "ternarize_layer",
    "PackedTernaryMatrix",
    "pack_matrix",
    "sparsity",
    "tern",
    "tern_array",
    "unpack_matrix",
    "TrainConfig",
    "cosine_lr",
    "eval_perplexity",
    "sgd_step",
    "train",
]
