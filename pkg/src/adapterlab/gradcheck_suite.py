"""Finite-difference battery over every differentiable layer type.

Each entry builds a tiny float64 layer in eval mode, wraps it in a
scalar-valued function of the input, and compares reverse-mode gradients
against central differences. Run via ``adapterlab gradcheck`` or the
acceptance suite; every entry must come in under 1e-4.
"""

from __future__ import annotations

import numpy as np

from .graph import GATLayer, GraphLoRAGATLayer, build_token_graph
from .kan import HybridKANLoRA, KANLinear, SplineGrid
from .lora import LoRALinear
from .model import CausalSelfAttention, ModelConfig, causal_mask
from .tensor import Tensor, finite_diff_gradcheck, layer_norm, linear, mul, softmax_rows, tsum

__all__ = ["gradcheck_battery", "LAYER_TYPES"]

LAYER_TYPES = (
    "linear",
    "softmax",
    "layer_norm",
    "causal_attention",
    "lora_linear",
    "kan_linear",
    "hybrid_kan_lora",
    "gat",
    "graph_lora",
)


def _weigher(shape: tuple, rng: np.random.Generator):
    """A fixed random projection to a scalar, drawn once so f is deterministic."""
    c = Tensor(rng.normal(size=shape))
    return lambda out: tsum(mul(out, c))


def _check_linear(rng, eps):
    w = Tensor(rng.normal(size=(4, 5)))
    b = Tensor(rng.normal(size=(4,)))
    x = Tensor(rng.normal(size=(2, 5)))
    weigh = _weigher((2, 4), rng)
    return finite_diff_gradcheck(lambda t: weigh(linear(t, w, b)), x, eps)


def _check_softmax(rng, eps):
    x = Tensor(rng.normal(size=(3, 6)))
    weigh = _weigher((3, 6), rng)
    return finite_diff_gradcheck(lambda t: weigh(softmax_rows(t)), x, eps)


def _check_layer_norm(rng, eps):
    gamma = Tensor(rng.normal(size=(6,)))
    beta = Tensor(rng.normal(size=(6,)))
    x = Tensor(rng.normal(size=(3, 6)))
    weigh = _weigher((3, 6), rng)
    return finite_diff_gradcheck(lambda t: weigh(layer_norm(t, gamma, beta)), x, eps)


def _check_causal_attention(rng, eps):
    cfg = ModelConfig(vocab_size=7, d_model=4, n_heads=2, max_seq_len=8)
    attn = CausalSelfAttention(cfg, rng, dtype=np.float64)
    mask = causal_mask(8)
    x = Tensor(rng.normal(size=(1, 3, 4)))
    weigh = _weigher((1, 3, 4), rng)
    return finite_diff_gradcheck(lambda t: weigh(attn(t, mask)), x, eps)


def _check_lora_linear(rng, eps):
    layer = LoRALinear(rng.normal(size=(5, 4)), rng.normal(size=(5,)), r=2, alpha=4.0, rng=rng)
    layer.lora_B.data[...] = rng.normal(size=layer.lora_B.shape)
    x = Tensor(rng.normal(size=(3, 4)))
    weigh = _weigher((3, 5), rng)
    return finite_diff_gradcheck(lambda t: weigh(layer(t)), x, eps)


def _check_kan_linear(rng, eps):
    grid = SplineGrid(-1.0, 1.0, grid_size=4, spline_order=3)
    layer = KANLinear(4, 3, grid, rng, dtype=np.float64)
    x = Tensor(rng.uniform(-1.3, 1.3, size=(2, 4)))
    weigh = _weigher((2, 3), rng)
    return finite_diff_gradcheck(lambda t: weigh(layer(t)), x, eps)


def _check_hybrid_kan_lora(rng, eps):
    grid = SplineGrid(-1.0, 1.0, grid_size=4, spline_order=3)
    layer = HybridKANLoRA(4, 3, grid, r=2, alpha=4.0, rng=rng, dtype=np.float64)
    layer.lora_B.data[...] = rng.normal(size=layer.lora_B.shape)
    x = Tensor(rng.uniform(-1.3, 1.3, size=(2, 4)))
    weigh = _weigher((2, 3), rng)
    return finite_diff_gradcheck(lambda t: weigh(layer(t)), x, eps)


def _check_gat(rng, eps):
    layer = GATLayer(4, 2, rng, dtype=np.float64)
    g = build_token_graph(4, window=1)
    x = Tensor(rng.normal(size=(4, 4)))
    weigh = _weigher((4, 4), rng)
    return finite_diff_gradcheck(lambda t: weigh(layer(t, g)), x, eps)


def _check_graph_lora(rng, eps):
    layer = GraphLoRAGATLayer(4, 2, r=1, alpha=2.0, rng=rng, dtype=np.float64)
    for head in layer.heads:
        head.lora_B.data[...] = rng.normal(size=head.lora_B.shape)
    g = build_token_graph(4, window=1)
    x = Tensor(rng.normal(size=(4, 4)))
    weigh = _weigher((4, 4), rng)
    return finite_diff_gradcheck(lambda t: weigh(layer(t, g)), x, eps)


_CHECKS = {
    "linear": _check_linear,
    "softmax": _check_softmax,
    "layer_norm": _check_layer_norm,
    "causal_attention": _check_causal_attention,
    "lora_linear": _check_lora_linear,
    "kan_linear": _check_kan_linear,
    "hybrid_kan_lora": _check_hybrid_kan_lora,
    "gat": _check_gat,
    "graph_lora": _check_graph_lora,
}


def gradcheck_battery(seed: int = 0, eps: float = 1e-5) -> dict[str, float]:
    """Worst finite-difference relative error per layer type."""
    results = {}
    for i, name in enumerate(LAYER_TYPES):
        rng = np.random.default_rng(seed * 1000 + i)
        results[name] = _CHECKS[name](rng, eps)
    return results
