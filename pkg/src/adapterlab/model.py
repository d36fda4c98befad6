"""GPT-style causal transformer with a swappable feed-forward slot.

Pre-norm residual blocks: ``x + Attn(LN(x))`` then ``y + FFN(LN(y))``.
The FFN slot dispatches on ``ffn_kind``:

* ``mlp``        two linear maps with a ReLU between them
* ``lora``       the MLP with low-rank adapters on its linears (and on the
                 attention query/value projections by default)
* ``kan``        two stacked spline layers
* ``kan_lora``   spline layers with frozen base + spline and trainable
                 low-rank factors
* ``gat``        one graph-attention layer over a causal token window
* ``graph_lora`` the graph-attention layer with frozen head weights plus
                 low-rank factors

Token embeddings are tied to the output head; positions use learned
absolute embeddings. Weights init at normal(0, 0.02), biases at zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import graph as graph_mod
from .kan import HybridKANLoRA, KANLinear, SplineGrid
from .lora import LoRALinear
from .tensor import (
    Parameter,
    Tensor,
    add,
    dropout,
    embedding,
    gather_positions,
    layer_norm,
    linear,
    masked_fill,
    matmul,
    mul,
    no_grad,
    relu,
    reshape,
    slice_rows,
    softmax_rows,
    transpose,
)

__all__ = ["FFN_KINDS", "ModelConfig", "causal_mask", "GPT", "sample_token"]

FFN_KINDS = ("mlp", "lora", "kan", "kan_lora", "gat", "graph_lora")

_NEG_FILL = -1e30


@dataclass
class ModelConfig:
    """Architecture hyperparameters; adapter knobs apply per ``ffn_kind``."""

    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 2
    max_seq_len: int = 128
    ffn_kind: str = "mlp"
    dropout_p: float = 0.0
    ffn_mult: int = 4
    lora_r: int = 32
    lora_alpha: float = 64.0
    lora_dropout_p: float = 0.0
    lora_targets: tuple = ("attn_q", "attn_v", "ffn")
    kan_grid_size: int = 5
    kan_spline_order: int = 3
    kan_grid_min: float = -1.0
    kan_grid_max: float = 1.0
    kan_scale_base: float = 1.0
    kan_scale_spline: float = 1.0
    gat_heads: int = 4
    gat_window: int = 3
    gat_leaky_slope: float = 0.2

    def __post_init__(self):
        if self.vocab_size < 1:
            raise ValueError(f"vocab_size must be >= 1, got {self.vocab_size}")
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.ffn_kind not in FFN_KINDS:
            raise ValueError(f"unknown ffn_kind {self.ffn_kind!r}; expected one of {FFN_KINDS}")
        if isinstance(self.lora_targets, str):
            self.lora_targets = tuple(t.strip() for t in self.lora_targets.split(",") if t.strip())


def causal_mask(seq_len: int) -> np.ndarray:
    """Boolean lower-triangular matrix; entry (i, j) is True iff j <= i."""
    return np.tril(np.ones((seq_len, seq_len), dtype=bool))


class Linear:
    def __init__(self, d_out: int, d_in: int, rng: np.random.Generator, bias: bool = True, dtype=np.float32):
        self.weight = Parameter("weight", rng.normal(0.0, 0.02, size=(d_out, d_in)).astype(dtype))
        self.bias = Parameter("bias", np.zeros(d_out, dtype=dtype), decay=False) if bias else None

    def named_parameters(self):
        yield "weight", self.weight
        if self.bias is not None:
            yield "bias", self.bias

    def __call__(self, x: Tensor, rng=None, training=False) -> Tensor:
        return linear(x, self.weight.tensor, None if self.bias is None else self.bias.tensor)


class LayerNorm:
    def __init__(self, d: int, dtype=np.float32, eps: float = 1e-5):
        self.gamma = Parameter("gamma", np.ones(d, dtype=dtype), decay=False)
        self.beta = Parameter("beta", np.zeros(d, dtype=dtype), decay=False)
        self.eps = eps

    def named_parameters(self):
        yield "gamma", self.gamma
        yield "beta", self.beta

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma.tensor, self.beta.tensor, self.eps)


def _maybe_lora(cfg: ModelConfig, target: str, d_out: int, d_in: int, rng, dtype):
    """A plain linear, or a LoRA-wrapped one when ``target`` is configured."""
    if cfg.ffn_kind == "lora" and target in cfg.lora_targets:
        w0 = rng.normal(0.0, 0.02, size=(d_out, d_in)).astype(dtype)
        b0 = np.zeros(d_out, dtype=dtype)
        return LoRALinear(w0, b0, cfg.lora_r, cfg.lora_alpha, rng, cfg.lora_dropout_p)
    return Linear(d_out, d_in, rng, dtype=dtype)


class CausalSelfAttention:
    """Masked multi-head self-attention with dropout on the probabilities."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        d = cfg.d_model
        self.n_heads = cfg.n_heads
        self.d_head = d // cfg.n_heads
        self.dropout_p = cfg.dropout_p
        self.wq = _maybe_lora(cfg, "attn_q", d, d, rng, dtype)
        self.wk = _maybe_lora(cfg, "attn_k", d, d, rng, dtype)
        self.wv = _maybe_lora(cfg, "attn_v", d, d, rng, dtype)
        self.wo = _maybe_lora(cfg, "attn_out", d, d, rng, dtype)

    def named_parameters(self):
        for sub, mod in (("wq", self.wq), ("wk", self.wk), ("wv", self.wv), ("wo", self.wo)):
            for name, p in mod.named_parameters():
                yield f"{sub}.{name}", p

    def __call__(self, x: Tensor, mask: np.ndarray, rng=None, training=False) -> Tensor:
        b, t, d = x.shape

        def split_heads(z):
            z = reshape(z, (b, t, self.n_heads, self.d_head))
            return transpose(z, (0, 2, 1, 3))

        q = split_heads(self.wq(x, rng=rng, training=training))
        k = split_heads(self.wk(x, rng=rng, training=training))
        v = split_heads(self.wv(x, rng=rng, training=training))
        scores = mul(matmul(q, transpose(k)), 1.0 / np.sqrt(self.d_head))
        scores = masked_fill(scores, mask[:t, :t], _NEG_FILL)
        probs = softmax_rows(scores)
        if training and self.dropout_p > 0.0:
            probs = dropout(probs, self.dropout_p, rng, training=True)
        ctx = matmul(probs, v)
        ctx = reshape(transpose(ctx, (0, 2, 1, 3)), (b, t, d))
        return self.wo(ctx, rng=rng, training=training)


class MLP:
    """Two linear maps with a ReLU and dropout between them."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        d, hidden = cfg.d_model, cfg.ffn_mult * cfg.d_model
        self.dropout_p = cfg.dropout_p
        self.fc1 = _maybe_lora(cfg, "ffn", hidden, d, rng, dtype)
        self.fc2 = _maybe_lora(cfg, "ffn", d, hidden, rng, dtype)

    def named_parameters(self):
        for sub, mod in (("fc1", self.fc1), ("fc2", self.fc2)):
            for name, p in mod.named_parameters():
                yield f"{sub}.{name}", p

    def __call__(self, x: Tensor, graph=None, rng=None, training=False) -> Tensor:
        h = relu(self.fc1(x, rng=rng, training=training))
        if training and self.dropout_p > 0.0:
            h = dropout(h, self.dropout_p, rng, training=True)
        return self.fc2(h, rng=rng, training=training)


class KANStack:
    """Two spline layers filling the feed-forward slot."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32, hybrid: bool = False):
        d, hidden = cfg.d_model, cfg.ffn_mult * cfg.d_model
        grid = SplineGrid(cfg.kan_grid_min, cfg.kan_grid_max, cfg.kan_grid_size, cfg.kan_spline_order)
        kwargs = dict(scale_base=cfg.kan_scale_base, scale_spline=cfg.kan_scale_spline, dtype=dtype)
        if hybrid:
            self.layers = [
                HybridKANLoRA(d, hidden, grid, cfg.lora_r, cfg.lora_alpha, rng, **kwargs),
                HybridKANLoRA(hidden, d, grid, cfg.lora_r, cfg.lora_alpha, rng, **kwargs),
            ]
        else:
            self.layers = [
                KANLinear(d, hidden, grid, rng, **kwargs),
                KANLinear(hidden, d, grid, rng, **kwargs),
            ]

    def named_parameters(self):
        for i, layer in enumerate(self.layers):
            for name, p in layer.named_parameters():
                yield f"layers.{i}.{name}", p

    def __call__(self, x: Tensor, graph=None, rng=None, training=False) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x


class GraphFFN:
    """Graph-attention layer over the causal token window."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32, lora: bool = False):
        if lora:
            self.gat = graph_mod.GraphLoRAGATLayer(
                cfg.d_model, cfg.gat_heads, cfg.lora_r, cfg.lora_alpha, rng,
                leaky_slope=cfg.gat_leaky_slope, dtype=dtype,
            )
        else:
            self.gat = graph_mod.GATLayer(
                cfg.d_model, cfg.gat_heads, rng, leaky_slope=cfg.gat_leaky_slope, dtype=dtype,
            )

    def named_parameters(self):
        for name, p in self.gat.named_parameters():
            yield f"gat.{name}", p

    def __call__(self, x: Tensor, graph=None, rng=None, training=False) -> Tensor:
        return self.gat(x, graph)


def _build_ffn(cfg: ModelConfig, rng: np.random.Generator, dtype):
    if cfg.ffn_kind in ("mlp", "lora"):
        return MLP(cfg, rng, dtype)
    if cfg.ffn_kind == "kan":
        return KANStack(cfg, rng, dtype, hybrid=False)
    if cfg.ffn_kind == "kan_lora":
        return KANStack(cfg, rng, dtype, hybrid=True)
    if cfg.ffn_kind == "gat":
        return GraphFFN(cfg, rng, dtype, lora=False)
    if cfg.ffn_kind == "graph_lora":
        return GraphFFN(cfg, rng, dtype, lora=True)
    raise ValueError(f"ffn_kind {cfg.ffn_kind!r} is not registered")


class Block:
    """Pre-norm residual block: x + Attn(LN(x)), then y + FFN(LN(y))."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        self.ln1 = LayerNorm(cfg.d_model, dtype)
        self.attn = CausalSelfAttention(cfg, rng, dtype)
        self.ln2 = LayerNorm(cfg.d_model, dtype)
        self.ffn = _build_ffn(cfg, rng, dtype)

    def named_parameters(self):
        for sub, mod in (("ln1", self.ln1), ("attn", self.attn), ("ln2", self.ln2), ("ffn", self.ffn)):
            for name, p in mod.named_parameters():
                yield f"{sub}.{name}", p

    def __call__(self, x: Tensor, mask: np.ndarray, graph, rng=None, training=False) -> Tensor:
        x = add(x, self.attn(self.ln1(x), mask, rng=rng, training=training))
        x = add(x, self.ffn(self.ln2(x), graph=graph, rng=rng, training=training))
        return x


class GPT:
    """Causal transformer language model with tied embeddings.

    Single-writer during training; evaluation passes on a frozen model may
    run concurrently since eval mode records no provenance and consumes no
    randomness.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype).type
        rng = np.random.default_rng(seed)
        self.tok_emb = Parameter("weight", rng.normal(0.0, 0.02, size=(cfg.vocab_size, cfg.d_model)).astype(dtype))
        self.pos_emb = Parameter("weight", rng.normal(0.0, 0.02, size=(cfg.max_seq_len, cfg.d_model)).astype(dtype))
        self.blocks = [Block(cfg, rng, dtype) for _ in range(cfg.n_layers)]
        self.ln_f = LayerNorm(cfg.d_model, dtype)
        self._mask = causal_mask(cfg.max_seq_len)
        self._graph_cache: dict[int, graph_mod.TokenGraph] = {}
        self.training = False
        self.rng = rng  # consumed by dropout in training mode
        self._params = self._collect_parameters()

    # -- registry ----------------------------------------------------------

    def _modules(self):
        yield "tok_emb", self.tok_emb
        yield "pos_emb", self.pos_emb
        for i, blk in enumerate(self.blocks):
            yield f"blocks.{i}", blk
        yield "ln_f", self.ln_f

    def _collect_parameters(self) -> dict[str, Parameter]:
        params: dict[str, Parameter] = {}

        def register(full_name: str, p: Parameter):
            if full_name in params:
                raise ValueError(f"duplicate parameter name {full_name!r}")
            p.name = full_name
            params[full_name] = p

        for prefix, mod in self._modules():
            if isinstance(mod, Parameter):
                register(f"{prefix}.weight", mod)
            else:
                for name, p in mod.named_parameters():
                    register(f"{prefix}.{name}", p)
        return params

    def named_parameters(self) -> dict[str, Parameter]:
        return self._params

    def param_counts(self) -> tuple[int, int]:
        total = sum(p.data.size for p in self._params.values())
        trainable = sum(p.data.size for p in self._params.values() if p.trainable)
        return total, trainable

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    # -- forward -------------------------------------------------------------

    def _graph_for(self, t: int) -> graph_mod.TokenGraph | None:
        if self.cfg.ffn_kind not in ("gat", "graph_lora"):
            return None
        g = self._graph_cache.get(t)
        if g is None:
            g = graph_mod.build_causal_token_graph(t, self.cfg.gat_window)
            self._graph_cache[t] = g
        return g

    def _check_tokens(self, tokens: np.ndarray) -> np.ndarray:
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim != 2:
            raise ValueError(f"expected a (B, T) token batch, got shape {tokens.shape}")
        if tokens.shape[1] > self.cfg.max_seq_len:
            raise ValueError(f"sequence length {tokens.shape[1]} exceeds max_seq_len {self.cfg.max_seq_len}")
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.cfg.vocab_size):
            bad = int(tokens.min()) if tokens.min() < 0 else int(tokens.max())
            raise ValueError(f"token id {bad} outside vocabulary of size {self.cfg.vocab_size}")
        return tokens

    def forward_hidden(self, tokens: np.ndarray) -> Tensor:
        """Final hidden states (B, T, d_model) after the last layer norm."""
        tokens = self._check_tokens(tokens)
        b, t = tokens.shape
        x = embedding(self.tok_emb.tensor, tokens)
        x = add(x, slice_rows(self.pos_emb.tensor, 0, t))
        graph = self._graph_for(t)
        rng = self.rng if self.training else None
        for blk in self.blocks:
            x = blk(x, self._mask, graph, rng=rng, training=self.training)
        return self.ln_f(x)

    def lm_logits(self, hidden: Tensor) -> Tensor:
        """Tied head: logits = hidden @ embedding matrix transposed."""
        return linear(hidden, self.tok_emb.tensor)

    def lm_forward(self, tokens: np.ndarray) -> Tensor:
        return self.lm_logits(self.forward_hidden(tokens))

    # -- generation ------------------------------------------------------------

    def generate(
        self,
        prompt: list[int],
        max_new_tokens: int,
        temperature: float = 1.2,
        top_p: float = 0.9,
        seed: int = 0,
        end_of_text_id: int | None = None,
    ) -> list[int]:
        """Autoregressive sampling, deterministic for a given seed.

        Exactly ``max_new_tokens`` ids are appended unless the end-of-text
        id is emitted first. Contexts longer than ``max_seq_len`` are
        cropped to the most recent window.
        """
        if len(prompt) == 0:
            raise ValueError("prompt must be non-empty")
        if temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {temperature}")
        was_training = self.training
        self.eval()
        rng = np.random.default_rng(seed)
        ids = list(prompt)
        try:
            with no_grad():
                for _ in range(max_new_tokens):
                    ctx = ids[-self.cfg.max_seq_len:]
                    logits = self.lm_forward(np.asarray([ctx])).data[0, -1]
                    nxt = sample_token(logits, temperature, top_p, rng)
                    ids.append(nxt)
                    if end_of_text_id is not None and nxt == end_of_text_id:
                        break
        finally:
            self.training = was_training
        return ids


def sample_token(logits: np.ndarray, temperature: float, top_p: float, rng: np.random.Generator) -> int:
    """Temperature plus nucleus sampling over one logit row; 0 means argmax."""
    if temperature == 0.0:
        return int(np.argmax(logits))
    z = logits.astype(np.float64) / temperature
    z -= z.max()
    p = np.exp(z)
    p /= p.sum()
    if top_p < 1.0:
        order = np.argsort(-p, kind="stable")
        csum = np.cumsum(p[order])
        cut = int(np.searchsorted(csum, top_p)) + 1
        keep = order[:cut]
        p_keep = p[keep] / p[keep].sum()
        return int(rng.choice(keep, p=p_keep))
    return int(rng.choice(len(p), p=p))
