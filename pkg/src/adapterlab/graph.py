"""Token graphs and multi-head graph attention layers.

A ``TokenGraph`` connects sequence positions within a sliding window
(symmetric, with self-loops). Inside the transformer the feed-forward slot
uses the causal restriction of that window (predecessors only) so the
language model stays autoregressive; the symmetric form is the standalone
contract.

Per head k the layer scores each edge with a learnable vector over the
concatenated transformed endpoint features, normalizes scores over each
neighborhood with a softmax, aggregates neighbor features, applies ELU,
concatenates heads, and projects back to the input width. The Graph-LoRA
variant freezes each head's weight matrix and learns a low-rank increment;
attention vectors and the output projection stay trainable.
"""

from __future__ import annotations

import numpy as np

from .tensor import (
    Parameter,
    Tensor,
    add,
    concat,
    elu,
    leaky_relu,
    linear,
    masked_fill,
    matmul,
    mul,
    pairwise_sum,
    slice_rows,
    softmax_rows,
    tsum,
)

__all__ = [
    "TokenGraph",
    "build_token_graph",
    "build_causal_token_graph",
    "GATLayer",
    "GraphLoRAGATLayer",
    "gat_multihead_forward",
    "graph_lora_forward",
]

_MASK_FILL = -1e30


class TokenGraph:
    """Adjacency over token positions: sorted neighbor lists with self-loops."""

    def __init__(self, neighbors: list[list[int]]):
        self.n_nodes = len(neighbors)
        self.neighbors = [sorted(ns) for ns in neighbors]
        for i, ns in enumerate(self.neighbors):
            if i not in ns:
                raise ValueError(f"node {i} is missing its self-loop")
        mask = np.zeros((self.n_nodes, self.n_nodes), dtype=bool)
        for i, ns in enumerate(self.neighbors):
            mask[i, ns] = True
        self.mask = mask

    def is_symmetric(self) -> bool:
        return bool(np.array_equal(self.mask, self.mask.T))


def build_token_graph(seq_len: int, window: int = 3) -> TokenGraph:
    """Symmetric sliding-window graph: j is a neighbor of i iff |i - j| <= window."""
    if seq_len < 1:
        raise ValueError(f"seq_len must be >= 1, got {seq_len}")
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    neighbors = [
        list(range(max(0, i - window), min(seq_len, i + window + 1)))
        for i in range(seq_len)
    ]
    return TokenGraph(neighbors)


def build_causal_token_graph(seq_len: int, window: int = 3) -> TokenGraph:
    """Causal sliding window: neighbors of i are {j : i - window <= j <= i}.

    Used in the transformer's feed-forward slot so position i never reads
    positions after it.
    """
    if seq_len < 1:
        raise ValueError(f"seq_len must be >= 1, got {seq_len}")
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    neighbors = [list(range(max(0, i - window), i + 1)) for i in range(seq_len)]
    return TokenGraph(neighbors)


class _GATHead:
    def __init__(self, d_in: int, d_head: int, rng: np.random.Generator, dtype):
        self.weight = Parameter("weight", rng.normal(0.0, 0.02, size=(d_head, d_in)).astype(dtype))
        self.attn_vec = Parameter("attn_vec", rng.normal(0.0, 0.02, size=(2 * d_head,)).astype(dtype), decay=False)

    def transform(self, h: Tensor) -> Tensor:
        return linear(h, self.weight.tensor)

    def named_parameters(self):
        yield "weight", self.weight
        yield "attn_vec", self.attn_vec


class GATLayer:
    """Multi-head graph attention with an output projection back to d_in."""

    def __init__(
        self,
        d_in: int,
        n_heads: int,
        rng: np.random.Generator,
        d_head: int | None = None,
        leaky_slope: float = 0.2,
        dtype=np.float32,
    ):
        if d_head is None:
            if d_in % n_heads != 0:
                raise ValueError(f"d_in={d_in} not divisible by n_heads={n_heads}")
            d_head = d_in // n_heads
        self.d_in = d_in
        self.n_heads = n_heads
        self.d_head = d_head
        self.leaky_slope = float(leaky_slope)
        self.heads = [_GATHead(d_in, d_head, rng, dtype) for _ in range(n_heads)]
        self.proj_weight = Parameter("proj.weight", rng.normal(0.0, 0.02, size=(d_in, n_heads * d_head)).astype(dtype))
        self.proj_bias = Parameter("proj.bias", np.zeros(d_in, dtype=dtype), decay=False)

    def named_parameters(self):
        for k, head in enumerate(self.heads):
            for name, p in head.named_parameters():
                yield f"heads.{k}.{name}", p
        yield "proj.weight", self.proj_weight
        yield "proj.bias", self.proj_bias

    def __call__(self, h: Tensor, g: TokenGraph) -> Tensor:
        return gat_multihead_forward(h, g, self)

    def attention_coefficients(self, h: Tensor, g: TokenGraph) -> list[np.ndarray]:
        """Per-head attention matrices (rows normalized over neighborhoods)."""
        return [_head_attention(h, g, head, self.leaky_slope)[0].data for head in self.heads]


def _head_attention(h: Tensor, g: TokenGraph, head, leaky_slope: float, z: Tensor | None = None):
    """Attention matrix and transformed features for one head.

    Scores on non-edges are replaced by a large negative constant before
    the softmax, so they carry exactly zero weight and zero gradient:
    output at node i is bit-exactly independent of non-neighbors.
    """
    if z is None:
        z = head.transform(h)
    d_head = z.shape[-1]
    a_src = slice_rows(head.attn_vec.tensor, 0, d_head)
    a_dst = slice_rows(head.attn_vec.tensor, d_head, 2 * d_head)
    s = tsum(mul(z, a_src), axis=-1)
    d = tsum(mul(z, a_dst), axis=-1)
    scores = leaky_relu(pairwise_sum(s, d), leaky_slope)
    scores = masked_fill(scores, g.mask, _MASK_FILL)
    return softmax_rows(scores), z


def gat_multihead_forward(h: Tensor, g: TokenGraph, layer: GATLayer) -> Tensor:
    """Per head: softmax-normalized neighborhood attention, aggregate, ELU;
    heads concatenate and project back to d_in.

    Accepts node features of shape (n, d_in) or batched (B, n, d_in); the
    same graph applies to every batch entry.
    """
    if h.shape[-1] != layer.d_in:
        raise ValueError(f"feature width {h.shape[-1]} does not match layer d_in {layer.d_in}")
    if h.shape[-2] != g.n_nodes:
        raise ValueError(f"feature rows {h.shape[-2]} do not match graph nodes {g.n_nodes}")
    outs = []
    for head in layer.heads:
        alpha, z = _head_attention(h, g, head, layer.leaky_slope)
        outs.append(elu(matmul(alpha, z)))
    stacked = concat(outs, axis=-1)
    return linear(stacked, layer.proj_weight.tensor, layer.proj_bias.tensor)


class _GraphLoRAHead(_GATHead):
    def __init__(self, d_in: int, d_head: int, r: int, alpha: float, rng: np.random.Generator, dtype):
        super().__init__(d_in, d_head, rng, dtype)
        self.weight.freeze()
        self.r = r
        self.alpha = float(alpha)
        self.lora_A = Parameter("lora_A", rng.normal(0.0, 0.02, size=(r, d_in)).astype(dtype))
        self.lora_B = Parameter("lora_B", np.zeros((d_head, r), dtype=dtype))

    def transform(self, h: Tensor) -> Tensor:
        base = linear(h, self.weight.tensor)
        delta = linear(linear(h, self.lora_A.tensor), self.lora_B.tensor)
        return add(base, mul(delta, self.alpha / self.r))

    def named_parameters(self):
        yield from super().named_parameters()
        yield "lora_A", self.lora_A
        yield "lora_B", self.lora_B


class GraphLoRAGATLayer(GATLayer):
    """GAT with each head's weight frozen plus trainable rank-r factors.

    Attention vectors and the output projection remain trainable; the
    low-rank decomposition applies to the per-head feature transform only.
    """

    def __init__(
        self,
        d_in: int,
        n_heads: int,
        r: int,
        alpha: float,
        rng: np.random.Generator,
        d_head: int | None = None,
        leaky_slope: float = 0.2,
        dtype=np.float32,
    ):
        super().__init__(d_in, n_heads, rng, d_head=d_head, leaky_slope=leaky_slope, dtype=dtype)
        if not 1 <= r < min(d_in, self.d_head):
            raise ValueError(f"rank r={r} must satisfy 1 <= r < min(d_in, d_head)={min(d_in, self.d_head)}")
        self.r = r
        self.alpha = float(alpha)
        self.heads = [_GraphLoRAHead(d_in, self.d_head, r, alpha, rng, dtype) for _ in range(n_heads)]

    def adapter_param_count(self) -> int:
        """Rank-r factors only: K * r * (d_in + d_head)."""
        return self.n_heads * self.r * (self.d_in + self.d_head)

    def trainable_param_count(self) -> int:
        return sum(p.data.size for _, p in self.named_parameters() if p.trainable)

    def __call__(self, h: Tensor, g: TokenGraph) -> Tensor:
        return graph_lora_forward(h, g, self)


def graph_lora_forward(h: Tensor, g: TokenGraph, layer: GraphLoRAGATLayer) -> Tensor:
    """Identical to the plain forward with W0 + (alpha/r) B A per head."""
    return gat_multihead_forward(h, g, layer)
