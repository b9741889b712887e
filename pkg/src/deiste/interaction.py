"""Word-to-word interactions between a premise and a hypothesis.

Everything downstream of the cosine matrix lives here: importance scores,
soft alignments, best-match indices and the position embeddings looked up
from those indices.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractError, DegenerateInputError, DimensionError
from .numerics import Graph, Tensor, _column_mask

MASK_FILL = -1.0
ALPHA_CLAMP = (0.1, 2.0)
DEFAULT_MAX_POSITIONS = 60


@dataclass
class InteractionResult:
    matrix: Tensor
    alpha_p: Tensor
    alpha_h: Tensor
    aligned_p: Optional[Tensor]
    aligned_h: Optional[Tensor]
    argmax_p: np.ndarray
    argmax_h: np.ndarray
    mask_p: np.ndarray
    mask_h: np.ndarray


@dataclass
class PositionTable:
    """Shared ``(max_len, d_m)`` table of best-match position embeddings."""

    matrix: Tensor

    @property
    def max_len(self):
        return self.matrix.shape[0]

    @property
    def dim(self):
        return self.matrix.shape[1]

    @classmethod
    def random(cls, max_len: int, dim: int, rng: np.random.Generator, init_range=0.05):
        m = rng.uniform(-init_range, init_range, size=(max_len, dim))
        return cls(Tensor(m, requires_grad=True, name="positions"))


def interaction_matrix(g: Graph, P: Tensor, H: Tensor, mask_p=None, mask_h=None) -> Tensor:
    """Cosine of every premise column with every hypothesis column.

    Entries involving a padded position are -1 and carry no gradient.
    """
    if P.shape[:-1] != H.shape[:-1]:
        raise DimensionError(f"premise {P.shape} and hypothesis {H.shape} feature maps disagree")
    return g.cosine_matrix(P, H, mask_p, mask_h, fill=MASK_FILL)


def importance_scores(g: Graph, I: Tensor, axis="premise", mask_self=None, mask_other=None) -> Tensor:
    """``1 / clamp(1 + best match, 0.1, 2.0)`` per position of one sentence.

    ``axis="premise"`` scores rows of ``I``, ``axis="hypothesis"`` scores
    columns. Padded positions of the scored sentence get 0, which the
    dynamic convolution relies on at sequence boundaries.
    """
    if axis == "hypothesis":
        I = g.transpose(I)
    elif axis != "premise":
        raise ContractError(f"axis must be 'premise' or 'hypothesis', not {axis!r}")
    best, _ = g.max_pool_rows(I, mask_other)
    lo, hi = ALPHA_CLAMP
    alpha = g.reciprocal(g.clip(g.add_scalar(best, 1.0), lo, hi))
    if mask_self is not None:
        keep = np.asarray(mask_self, dtype=np.float64)
        if keep.shape != alpha.shape:
            raise DimensionError(f"mask {keep.shape} vs scores {alpha.shape}")
        alpha = g.mul(alpha, Tensor(keep))
    return alpha


def soft_align(g: Graph, I: Tensor, other: Tensor, mask_other=None, mask_self=None) -> Tensor:
    """Softmax(I[i, :])-weighted average of ``other``'s columns, per row ``i``.

    Returns ``(..., d, n_self)``; padded self positions are zeroed.
    """
    if I.shape[:-2] != other.shape[:-2] or I.shape[-1] != other.shape[-1]:
        raise DimensionError(f"interaction {I.shape} does not match other sentence {other.shape}")
    row_mask = None
    if mask_other is not None:
        mo = _column_mask(mask_other, other.shape)
        if not mo.any(axis=-1).all():
            raise DegenerateInputError("soft_align: every position of the other sentence is masked")
        row_mask = np.broadcast_to(mo[..., None, :], I.shape)
    weights = g.masked_softmax(I, row_mask)
    aligned = g.matmul(other, g.transpose(weights))
    if mask_self is not None:
        aligned = g.scale_columns(aligned, np.asarray(mask_self, dtype=np.float64))
    return aligned


def best_match_indices(I, mask_other=None) -> np.ndarray:
    """Row-wise argmax over unmasked columns (lowest index on ties). Not differentiated."""
    scores = I.data if isinstance(I, Tensor) else np.asarray(I, dtype=np.float64)
    n = scores.shape[-1]
    if mask_other is None:
        valid = np.ones(scores.shape, dtype=bool)
    else:
        mo = np.asarray(mask_other, dtype=bool)
        valid = np.broadcast_to(mo[..., None, :], scores.shape)
    if not valid.reshape(-1, n).any(axis=1).all():
        raise DegenerateInputError("best_match_indices: a row has every position masked")
    return np.argmax(np.where(valid, scores, -np.inf), axis=-1).astype(np.int64)


def position_embed(g: Graph, x, table: PositionTable, mask_self=None) -> Tensor:
    """Columns ``M[min(x_i, max_len - 1)]``; padded positions are zeroed."""
    x = np.asarray(x, dtype=np.int64)
    if x.size and x.min() < 0:
        raise ContractError("position indices must be non-negative")
    z = g.gather_columns(table.matrix, np.minimum(x, table.max_len - 1))
    if mask_self is not None:
        z = g.scale_columns(z, np.asarray(mask_self, dtype=np.float64))
    return z


def interact(g: Graph, P: Tensor, H: Tensor, mask_p=None, mask_h=None, with_alignment=True) -> InteractionResult:
    """All interaction-derived quantities for a pair (or a padded batch of pairs)."""
    mp = _column_mask(mask_p, P.shape)
    mh = _column_mask(mask_h, H.shape)
    if not mp.any(axis=-1).all() or not mh.any(axis=-1).all():
        raise DegenerateInputError("empty premise or hypothesis")
    I = interaction_matrix(g, P, H, mp, mh)
    alpha_p = importance_scores(g, I, "premise", mask_self=mp, mask_other=mh)
    alpha_h = importance_scores(g, I, "hypothesis", mask_self=mh, mask_other=mp)
    aligned_p = aligned_h = None
    if with_alignment:
        aligned_p = soft_align(g, I, H, mask_other=mh, mask_self=mp)
        aligned_h = soft_align(g, g.transpose(I), P, mask_other=mp, mask_self=mh)
    argmax_p = best_match_indices(I, mh)
    argmax_h = best_match_indices(np.swapaxes(I.data, -1, -2), mp)
    g.note_decision(argmax_p)
    g.note_decision(argmax_h)
    return InteractionResult(I, alpha_p, alpha_h, aligned_p, aligned_h, argmax_p, argmax_h, mp, mh)
