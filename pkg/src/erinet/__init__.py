"""Emotion reaction intensity pipeline on a self-contained autodiff core.

A frozen multi-task facial feature extractor (ResNet-style backbone with
spatial/channel cross-attention and three task heads) produces a 22-dim
descriptor per frame; an LSTM regression head maps the sampled frame
sequence of a video to seven bounded reaction intensities, trained and
evaluated with Pearson/concordance correlation.
"""

from . import tensor
from .attention import AttentionBlock, CrossAttentionHead, attention_block_forward, attention_head_forward
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, build_models
from .data import (
    Batch,
    Manifest,
    SequenceSample,
    SynthConfig,
    generate_synthetic,
    load_manifest,
    load_samples,
    make_batches,
    normalize_label,
    denormalize_label,
    sample_frame_indices,
)
from .eri_head import EriHead, ReactionVector, eri_forward, eri_train_step, predict_reactions
from .metrics import CATEGORIES, CorrelationReport, ccc, correlation_loss, evaluate_mean_pcc, pcc
from .mtl_dan import (
    DESCRIPTOR_DIM,
    EmotionDescriptor,
    MtlDanModel,
    extract_descriptors,
    mtl_dan_forward,
    mtl_pretrain_step,
    set_frozen,
)
from .nn import BackboneConfig, BatchNorm2d, Linear, LstmLayer, ResidualBlock, lstm_forward
from .optim import Adam
from .tensor import Tensor, backward, grad_check, no_grad, use_dtype
from .training import TrainResult, evaluate, train

__version__ = "0.1.0"
