"""Width-3 convolutional encoders over ``(d, n)`` feature maps.

All three use same-padding: out-of-range neighbours are zero columns, so
the output has as many columns as the input.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionError, EmptySequenceError
from .numerics import Graph, Tensor, parameter


def _glorot(rng, rows, cols, fan_in=None):
    limit = np.sqrt(6.0 / ((fan_in or cols) + rows))
    return rng.uniform(-limit, limit, size=(rows, cols))


@dataclass
class DynConvParams:
    w_minus: Tensor
    w_zero: Tensor
    w_plus: Tensor
    bias: Tensor

    @classmethod
    def init(cls, d: int, rng: np.random.Generator, prefix="dyn"):
        # scaled like the equivalent (d, 3d) ordinary filter
        ws = [_glorot(rng, d, d, fan_in=3 * d) for _ in range(3)]
        return cls(
            parameter(ws[0], f"{prefix}.w_minus"),
            parameter(ws[1], f"{prefix}.w_zero"),
            parameter(ws[2], f"{prefix}.w_plus"),
            parameter(np.zeros(d), f"{prefix}.bias"),
        )

    def tensors(self):
        return [self.w_minus, self.w_zero, self.w_plus, self.bias]

    def stacked(self) -> np.ndarray:
        """The equivalent ``(d, 3d)`` ordinary filter ``[W-, W0, W+]``."""
        return np.concatenate([self.w_minus.data, self.w_zero.data, self.w_plus.data], axis=1)


@dataclass
class PosConvParams:
    """Filter over ``[c_{i-1}, c_i, c_{i+1}, aligned_i]`` with ``c = [s; z]``."""

    w: Tensor
    b: Tensor

    @classmethod
    def init(cls, d: int, d_m: int, rng: np.random.Generator, with_aligned=True, prefix="pos"):
        cols = 3 * (d + d_m) + (d if with_aligned else 0)
        return cls(parameter(_glorot(rng, d, cols), f"{prefix}.w"), parameter(np.zeros(d), f"{prefix}.b"))

    def tensors(self):
        return [self.w, self.b]


def trigram_windows(g: Graph, x: Tensor) -> Tensor:
    """Stack ``[x_{i-1}; x_i; x_{i+1}]`` per column: ``(..., k, n) -> (..., 3k, n)``."""
    return g.concat([g.shift(x, 1), x, g.shift(x, -1)], axis=-2)


def standard_conv(g: Graph, S: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """``tanh(W . [s_{i-1}, s_i, s_{i+1}] + b)`` at every position."""
    d = S.shape[-2]
    if W.shape[-1] != 3 * d:
        raise DimensionError(f"filter {W.shape} does not fit width-3 windows over {S.shape}")
    return g.tanh(g.add_bias(g.matmul(W, trigram_windows(g, S)), b))


def dynamic_conv(g: Graph, S: Tensor, alpha: Tensor, params: DynConvParams) -> Tensor:
    """Trigram convolution whose three taps are scaled by per-position importance.

    Column ``i`` is ``tanh(a[i-1] W- s[i-1] + a[i] W0 s[i] + a[i+1] W+ s[i+1] + bias)``.
    Neighbours outside the sequence contribute nothing, and padded
    positions contribute nothing as long as their ``alpha`` is 0.
    """
    if alpha.shape != S.shape[:-2] + S.shape[-1:]:
        raise DimensionError(f"alpha {alpha.shape} does not match sequence {S.shape}")
    weighted = g.scale_columns(S, alpha)
    left = g.shift(g.matmul(params.w_minus, weighted), 1)
    centre = g.matmul(params.w_zero, weighted)
    right = g.shift(g.matmul(params.w_plus, weighted), -1)
    pre = g.add(g.add(left, centre), right)
    return g.tanh(g.add_bias(pre, params.bias))


def pos_attentive_conv(
    g: Graph, S: Tensor, Z: Tensor, aligned: Optional[Tensor], params: PosConvParams
) -> Tensor:
    """Convolution over position-augmented states plus the soft-aligned vector.

    ``aligned=None`` drops the aligned block from the window; ``params.w``
    must then have ``3 * (d + d_m)`` columns.
    """
    if Z.shape[:-2] != S.shape[:-2] or Z.shape[-1] != S.shape[-1]:
        raise DimensionError(f"position embeddings {Z.shape} do not match sequence {S.shape}")
    C = g.concat([S, Z], axis=-2)
    parts = [trigram_windows(g, C)]
    if aligned is not None:
        if aligned.shape != S.shape:
            raise DimensionError(f"aligned states {aligned.shape} do not match sequence {S.shape}")
        parts.append(aligned)
    window = g.concat(parts, axis=-2) if len(parts) > 1 else parts[0]
    if params.w.shape[1] != window.shape[-2]:
        raise DimensionError(f"filter {params.w.shape} does not fit window height {window.shape[-2]}")
    return g.tanh(g.add_bias(g.matmul(params.w, window), params.b))


def vanilla_cnn(g: Graph, S: Tensor, W: Tensor, b: Tensor, mask=None) -> Tensor:
    """Standard width-3 convolution followed by max-pooling over positions."""
    if S.shape[-1] == 0:
        raise EmptySequenceError("vanilla_cnn over an empty sentence")
    pooled, _ = g.max_pool_rows(standard_conv(g, S, W, b), mask)
    return pooled
