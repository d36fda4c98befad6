"""Low-rank adaptation of linear maps.

A ``LoRALinear`` keeps a frozen base weight ``W0`` (optional frozen bias)
and learns a rank-r increment ``B @ A`` scaled by ``alpha / r``. ``B``
starts at zero, so a freshly wrapped layer computes exactly what the base
layer computed.
"""

from __future__ import annotations

import numpy as np

from .tensor import Parameter, Tensor, dropout, linear, mul

__all__ = ["LoRALinear", "lora_forward", "merge", "trainable_param_count"]


class LoRALinear:
    """Frozen (out, in) base weight plus trainable rank-r factors."""

    def __init__(
        self,
        w0: np.ndarray,
        b0: np.ndarray | None,
        r: int,
        alpha: float,
        rng: np.random.Generator,
        lora_dropout_p: float = 0.0,
    ):
        w0 = np.asarray(w0)
        d, k = w0.shape
        if not 1 <= r < min(d, k):
            raise ValueError(f"rank r={r} must satisfy 1 <= r < min(d, k)={min(d, k)}")
        if alpha <= 0:
            raise ValueError(f"alpha must be positive, got {alpha}")
        self.d = d
        self.k = k
        self.r = r
        self.alpha = float(alpha)
        self.lora_dropout_p = float(lora_dropout_p)
        self.weight = Parameter("weight", w0, trainable=False)
        self.bias = None if b0 is None else Parameter("bias", np.asarray(b0), trainable=False)
        self.lora_A = Parameter("lora_A", rng.normal(0.0, 0.02, size=(r, k)).astype(w0.dtype))
        self.lora_B = Parameter("lora_B", np.zeros((d, r), dtype=w0.dtype))

    @property
    def scaling(self) -> float:
        return self.alpha / self.r

    def named_parameters(self):
        yield "weight", self.weight
        if self.bias is not None:
            yield "bias", self.bias
        yield "lora_A", self.lora_A
        yield "lora_B", self.lora_B

    def __call__(self, x: Tensor, rng: np.random.Generator | None = None, training: bool = False) -> Tensor:
        return lora_forward(x, self, rng=rng, training=training)

    def trainable_param_count(self) -> int:
        return trainable_param_count(self)

    def merge(self) -> np.ndarray:
        return merge(self)


def lora_forward(
    x: Tensor,
    layer: LoRALinear,
    rng: np.random.Generator | None = None,
    training: bool = False,
) -> Tensor:
    """``W0 x + b0 + (alpha/r) * B (A dropout(x))``; dropout only trains."""
    if x.shape[-1] != layer.k:
        raise ValueError(f"input trailing dim {x.shape[-1]} does not match layer in-dim {layer.k}")
    base = linear(x, layer.weight.tensor, None if layer.bias is None else layer.bias.tensor)
    xa = x
    if layer.lora_dropout_p > 0.0 and training:
        if rng is None:
            raise ValueError("training-mode adapter dropout requires an rng")
        xa = dropout(x, layer.lora_dropout_p, rng, training=True)
    delta = linear(linear(xa, layer.lora_A.tensor), layer.lora_B.tensor)
    return base + mul(delta, layer.scaling)


def merge(layer: LoRALinear) -> np.ndarray:
    """Collapse the adapter into one dense (out, in) weight: W0 + (alpha/r) B A."""
    return layer.weight.data + layer.scaling * (layer.lora_B.data @ layer.lora_A.data)


def trainable_param_count(layer: LoRALinear) -> int:
    """Adapter parameters only, r * (d + k); the frozen base is excluded."""
    return layer.r * (layer.d + layer.k)
