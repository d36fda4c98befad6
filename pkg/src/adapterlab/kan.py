"""Spline-based feed-forward layers.

``KANLinear`` combines a base path (a plain linear map over a smooth
activation of the input) with a spline path: each input coordinate is
expanded in a B-spline basis and contracted against learnable per-edge
coefficients. ``HybridKANLoRA`` freezes both the base weight and the
spline coefficients and learns only a low-rank increment on the base
weight.

The B-spline basis is evaluated by the vectorized Cox-de Boor recursion
over a uniform knot vector. Inputs outside the grid evaluate the boundary
interval's polynomial pieces (polynomial extrapolation), so the layer is
differentiable everywhere and the basis still sums to one.
"""

from __future__ import annotations

import numpy as np

from .tensor import Parameter, Tensor, _accum, _make, add, linear, mul, silu

__all__ = [
    "SplineGrid",
    "bspline_basis",
    "bspline_basis_derivative",
    "KANLinear",
    "HybridKANLoRA",
    "kan_linear_forward",
    "hybrid_kan_lora_forward",
]


class SplineGrid:
    """Uniform knot vector defining a B-spline basis of G + p functions."""

    def __init__(self, grid_min: float = -1.0, grid_max: float = 1.0, grid_size: int = 5, spline_order: int = 3):
        if grid_size < 1:
            raise ValueError(f"grid_size must be >= 1, got {grid_size}")
        if spline_order < 0:
            raise ValueError(f"spline_order must be >= 0, got {spline_order}")
        if not grid_min < grid_max:
            raise ValueError(f"grid range is degenerate: [{grid_min}, {grid_max}]")
        self.grid_min = float(grid_min)
        self.grid_max = float(grid_max)
        self.grid_size = int(grid_size)
        self.spline_order = int(spline_order)
        h = (self.grid_max - self.grid_min) / self.grid_size
        lo = -self.spline_order
        hi = self.grid_size + self.spline_order
        self.knots = self.grid_min + h * np.arange(lo, hi + 1, dtype=np.float64)

    @property
    def n_bases(self) -> int:
        return self.grid_size + self.spline_order

    def __repr__(self) -> str:
        return (
            f"SplineGrid([{self.grid_min}, {self.grid_max}], G={self.grid_size}, p={self.spline_order})"
        )


def _interval_one_hot(x: np.ndarray, grid: SplineGrid) -> np.ndarray:
    """Degree-0 basis: one-hot over knot intervals, clamped to the interior.

    Clamping the interval index to the interior span is what produces
    polynomial extrapolation outside [grid_min, grid_max].
    """
    p, g = grid.spline_order, grid.grid_size
    knots = grid.knots.astype(x.dtype)
    idx = np.searchsorted(knots, x, side="right") - 1
    idx = np.clip(idx, p, g + p - 1)
    n_intervals = len(knots) - 1
    out = np.zeros(x.shape + (n_intervals,), dtype=x.dtype)
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out


def _cox_de_boor(x: np.ndarray, grid: SplineGrid, order: int) -> np.ndarray:
    knots = grid.knots.astype(x.dtype)
    bases = _interval_one_hot(x, grid)
    xe = x[..., None]
    for k in range(1, order + 1):
        left = (xe - knots[: -k - 1]) / (knots[k:-1] - knots[: -k - 1])
        right = (knots[k + 1:] - xe) / (knots[k + 1:] - knots[1:-k])
        bases = left * bases[..., :-1] + right * bases[..., 1:]
    return bases


def bspline_basis(x: np.ndarray, grid: SplineGrid) -> np.ndarray:
    """Evaluate all G + p basis functions at each element of ``x``.

    Returns an array of shape ``x.shape + (G + p,)``. Inside the grid the
    values are non-negative and sum to one (partition of unity).
    """
    x = np.asarray(x)
    return _cox_de_boor(x, grid, grid.spline_order)


def bspline_basis_derivative(x: np.ndarray, grid: SplineGrid) -> np.ndarray:
    """First derivative of each basis function at each element of ``x``."""
    x = np.asarray(x)
    p = grid.spline_order
    if p == 0:
        return np.zeros(x.shape + (grid.n_bases,), dtype=x.dtype)
    knots = grid.knots.astype(x.dtype)
    lower = _cox_de_boor(x, grid, p - 1)  # G + p + 1 functions of degree p-1
    denom_left = knots[p:-1] - knots[:-p - 1]
    denom_right = knots[p + 1:] - knots[1:-p]
    return p * (lower[..., :-1] / denom_left - lower[..., 1:] / denom_right)


def _spline_path(x: Tensor, coeffs: Tensor, grid: SplineGrid) -> Tensor:
    """Contract per-element basis values against (out, in, G+p) coefficients."""
    bases = bspline_basis(x.data, grid)

    def back(g):
        if coeffs.requires_grad:
            _accum(coeffs, np.einsum("...o,...ik->oik", g, bases, optimize=True))
        if x.requires_grad:
            dbases = bspline_basis_derivative(x.data, grid)
            _accum(x, np.einsum("...o,oik,...ik->...i", g, coeffs.data, dbases, optimize=True))

    out_data = np.einsum("...ik,oik->...o", bases, coeffs.data, optimize=True)
    return _make(out_data, "spline_path", (x, coeffs), back)


class KANLinear:
    """Base path plus spline path, replacing a dense layer and its activation.

    Output: ``scale_base * (f_base(x) @ W_base.T) + scale_spline * spline(x)``
    with ``f_base`` = SiLU. The output mixing of the spline path is folded
    into the coefficient tensor (one contraction), which is algebraically
    the same as a separate mixing matrix applied to per-edge spline values.
    """

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        grid: SplineGrid,
        rng: np.random.Generator,
        scale_base: float = 1.0,
        scale_spline: float = 1.0,
        dtype=np.float32,
    ):
        if not (np.isfinite(scale_base) and np.isfinite(scale_spline)):
            raise ValueError("scale_base and scale_spline must be finite")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.grid = grid
        self.scale_base = float(scale_base)
        self.scale_spline = float(scale_spline)
        self.base_weight = Parameter("base_weight", rng.normal(0.0, 0.02, size=(out_dim, in_dim)).astype(dtype))
        coeff_std = 0.1 * abs(scale_spline) / np.sqrt(grid.grid_size)
        self.spline_coeffs = Parameter(
            "spline_coeffs",
            rng.normal(0.0, coeff_std, size=(out_dim, in_dim, grid.n_bases)).astype(dtype),
        )

    def named_parameters(self):
        yield "base_weight", self.base_weight
        yield "spline_coeffs", self.spline_coeffs

    def __call__(self, x: Tensor) -> Tensor:
        return kan_linear_forward(x, self)


def kan_linear_forward(x: Tensor, layer: KANLinear) -> Tensor:
    if x.shape[-1] != layer.in_dim:
        raise ValueError(f"input trailing dim {x.shape[-1]} does not match layer in-dim {layer.in_dim}")
    base = linear(silu(x), layer.base_weight.tensor)
    spline = _spline_path(x, layer.spline_coeffs.tensor, layer.grid)
    return add(mul(base, layer.scale_base), mul(spline, layer.scale_spline))


class HybridKANLoRA:
    """KANLinear whose base weight takes a low-rank increment.

    The base weight and the spline coefficients are frozen; the only
    trainable parameters are the rank-r factors, so fine-tuning leaves the
    spline activations untouched.
    """

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        grid: SplineGrid,
        r: int,
        alpha: float,
        rng: np.random.Generator,
        scale_base: float = 1.0,
        scale_spline: float = 1.0,
        dtype=np.float32,
    ):
        if not 1 <= r < min(in_dim, out_dim):
            raise ValueError(f"rank r={r} must satisfy 1 <= r < min(in_dim, out_dim)={min(in_dim, out_dim)}")
        self.kan = KANLinear(in_dim, out_dim, grid, rng, scale_base, scale_spline, dtype)
        self.kan.base_weight.freeze()
        self.kan.spline_coeffs.freeze()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.r = r
        self.alpha = float(alpha)
        self.lora_A = Parameter("lora_A", rng.normal(0.0, 0.02, size=(r, in_dim)).astype(dtype))
        self.lora_B = Parameter("lora_B", np.zeros((out_dim, r), dtype=dtype))

    @property
    def scaling(self) -> float:
        return self.alpha / self.r

    def named_parameters(self):
        for name, p in self.kan.named_parameters():
            yield name, p
        yield "lora_A", self.lora_A
        yield "lora_B", self.lora_B

    def __call__(self, x: Tensor) -> Tensor:
        return hybrid_kan_lora_forward(x, self)

    def trainable_param_count(self) -> int:
        return self.r * (self.in_dim + self.out_dim)


def hybrid_kan_lora_forward(x: Tensor, layer: HybridKANLoRA) -> Tensor:
    """Base path through ``W_base + (alpha/r) B A``, spline path frozen."""
    kan = layer.kan
    if x.shape[-1] != kan.in_dim:
        raise ValueError(f"input trailing dim {x.shape[-1]} does not match layer in-dim {kan.in_dim}")
    fb = silu(x)
    base = linear(fb, kan.base_weight.tensor)
    delta = linear(linear(fb, layer.lora_A.tensor), layer.lora_B.tensor)
    spline = _spline_path(x, kan.spline_coeffs.tensor, kan.grid)
    return add(mul(add(base, mul(delta, layer.scaling)), kan.scale_base), mul(spline, kan.scale_spline))
