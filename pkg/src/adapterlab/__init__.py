"""adapterlab: a desk-scale GPT-style transformer kit for comparing
feed-forward and adapter variants (MLP, LoRA, KAN, Hybrid KAN-LoRA, graph
attention and Graph-LoRA) under one training and evaluation harness."""

from .config import ConfigError, RunConfig, parse_config, write_config
from .graph import (
    GATLayer,
    GraphLoRAGATLayer,
    TokenGraph,
    build_causal_token_graph,
    build_token_graph,
    gat_multihead_forward,
    graph_lora_forward,
)
from .kan import (
    HybridKANLoRA,
    KANLinear,
    SplineGrid,
    bspline_basis,
    hybrid_kan_lora_forward,
    kan_linear_forward,
)
from .lora import LoRALinear, lora_forward, merge, trainable_param_count
from .metrics import ChrfParams, accuracy, chrf, corpus_chrf
from .model import FFN_KINDS, GPT, ModelConfig, causal_mask
from .runio import CheckpointError, MetricsWriter, load_checkpoint, read_header, read_metrics, save_checkpoint
from .tensor import (
    AutodiffError,
    Parameter,
    Tensor,
    backward,
    finite_diff_gradcheck,
    layer_norm,
    no_grad,
    softmax_rows,
)
from .tokenizer import BpeVocab, byte_level_vocab, decode, encode, load_vocab
from .training import (
    AdamW,
    ParaphraseTask,
    SentimentClassifier,
    SentimentTask,
    SonnetTask,
    TrainConfig,
    TrainingError,
    paraphrase_cloze_forward,
    sentiment_forward,
    train_loop,
)

__version__ = "0.1.0"
