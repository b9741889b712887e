"""Small dense-tensor engine with reverse-mode differentiation.

Computation is recorded on an explicit :class:`Graph` (a tape). Every op is
a ``Graph`` method that computes its result eagerly and appends one
:class:`Node` holding a backward closure. ``Graph.backward`` walks the tape
once in reverse insertion order.

Sequence tensors use a column layout: a sentence is ``(d, n)``, a padded
batch is ``(B, d, n)``, and masks are boolean ``(n,)`` / ``(B, n)`` arrays
marking real (non-padded) positions. Ops that care about padding take the
mask explicitly; there is no general broadcasting.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels
from .errors import ContractError, DegenerateInputError, DimensionError, EmptySequenceError

NORM_FLOOR = 1e-12


class Tensor:
    """A float64 array plus an optional gradient buffer of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "name", "row_sparse", "touched_rows")

    def __init__(self, data, requires_grad=False, name=None, row_sparse=False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = arr.copy(order="C")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        # row_sparse tensors (embedding tables) remember which rows received
        # gradient so the optimizer can skip untouched rows.
        self.row_sparse = row_sparse
        self.touched_rows: list = []

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None
        self.touched_rows = []

    def numpy(self):
        return self.data

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"


def parameter(data, name=None, row_sparse=False):
    return Tensor(data, requires_grad=True, name=name, row_sparse=row_sparse)


def _accumulate(t: Tensor, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _swap(x):
    return np.swapaxes(x, -1, -2)


def _fold(x):
    """(..., k, n) -> (k, prod(...) * n) so batched products become one gemm."""
    k, n = x.shape[-2:]
    return x.reshape(-1, k, n).transpose(1, 0, 2).reshape(k, -1)


def _unfold(y, lead, n):
    m = y.shape[0]
    return y.reshape(m, -1, n).transpose(1, 0, 2).reshape(*lead, m, n)


def _column_mask(mask, shape):
    """Boolean mask of shape ``shape[:-2] + (n,)``; all-True when None."""
    want = shape[:-2] + shape[-1:]
    if mask is None:
        return np.ones(want, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != want:
        raise DimensionError(f"mask shape {mask.shape} does not fit tensor shape {shape}")
    return mask


@dataclass
class Node:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable[[], None] = field(repr=False)


class Graph:
    """Append-only tape. Insertion order is a valid topological order."""

    def __init__(self, record=True):
        self.record = record
        self.nodes: list = []
        # discrete choices (max winners, clip regions, argmaxes) made while
        # building; lets grad_check spot finite differences that cross a kink
        self.decisions: list = []

    def note_decision(self, choice):
        self.decisions.append(np.asarray(choice))

    def _push(self, op, inputs, out, backward):
        if self.record and out.requires_grad:
            self.nodes.append(Node(op, tuple(inputs), out, backward))
        return out

    @staticmethod
    def _out(data, *inputs):
        return Tensor(data, requires_grad=any(t.requires_grad for t in inputs))

    def backward(self, loss: Tensor):
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar output, got shape {loss.shape}")
        if not np.isfinite(loss.data).all():
            raise DegenerateInputError("non-finite loss")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            if node.output.grad is not None:
                node.backward()

    # -- linear algebra ----------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        """``a @ b`` for 2-D @ 2-D, 2-D @ batched, or batched @ batched."""
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise DimensionError(f"matmul shapes {a.shape} and {b.shape} do not agree")
        if a.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
            raise DimensionError(f"matmul batch shapes {a.shape} and {b.shape} differ")
        if b.ndim > 2 and a.ndim == 2:
            lead, n = b.shape[:-2], b.shape[-1]
            data = _unfold(a.data @ _fold(b.data), lead, n)
        elif b.ndim == 2 and a.ndim > 2:
            raise DimensionError(f"matmul shapes {a.shape} and {b.shape}: batched @ plain unsupported")
        else:
            data = a.data @ b.data
        out = self._out(data, a, b)

        def backward():
            go = out.grad
            if a.ndim == 2 and b.ndim > 2:
                fg = _fold(go)
                _accumulate(a, fg @ _fold(b.data).T)
                if b.requires_grad:
                    _accumulate(b, _unfold(a.data.T @ fg, b.shape[:-2], b.shape[-1]))
            else:
                _accumulate(a, go @ _swap(b.data))
                _accumulate(b, _swap(a.data) @ go)

        return self._push("matmul", (a, b), out, backward)

    def transpose(self, x: Tensor) -> Tensor:
        """Swap the last two axes."""
        out = self._out(_swap(x.data), x)

        def backward():
            _accumulate(x, _swap(out.grad))

        return self._push("transpose", (x,), out, backward)

    def reshape(self, x: Tensor, shape) -> Tensor:
        out = self._out(x.data.reshape(shape), x)

        def backward():
            _accumulate(x, out.grad.reshape(x.shape))

        return self._push("reshape", (x,), out, backward)

    def concat(self, xs: Sequence[Tensor], axis: int) -> Tensor:
        ndim = xs[0].ndim
        ax = axis % ndim
        for t in xs:
            other = [s for i, s in enumerate(t.shape) if i != ax]
            first = [s for i, s in enumerate(xs[0].shape) if i != ax]
            if t.ndim != ndim or other != first:
                raise DimensionError(
                    f"concat along axis {axis}: shapes {[t.shape for t in xs]} disagree"
                )
        out = self._out(np.concatenate([t.data for t in xs], axis=ax), *xs)
        bounds = np.cumsum([t.shape[ax] for t in xs])[:-1]

        def backward():
            for t, g in zip(xs, np.split(out.grad, bounds, axis=ax)):
                _accumulate(t, g)

        return self._push("concat", tuple(xs), out, backward)

    def shift(self, x: Tensor, k: int) -> Tensor:
        """``out[..., i] = x[..., i - k]``, zero where ``i - k`` is out of range."""
        n = x.shape[-1]
        data = np.zeros_like(x.data)
        if 0 < k < n:
            data[..., k:] = x.data[..., : n - k]
        elif -n < k < 0:
            data[..., :k] = x.data[..., -k:]
        elif k == 0:
            data[...] = x.data
        out = self._out(data, x)

        def backward():
            g = np.zeros_like(x.data)
            go = out.grad
            if 0 < k < n:
                g[..., : n - k] = go[..., k:]
            elif -n < k < 0:
                g[..., -k:] = go[..., :k]
            elif k == 0:
                g[...] = go
            _accumulate(x, g)

        return self._push("shift", (x,), out, backward)

    # -- elementwise -------------------------------------------------------

    def _same_shape(self, op, a, b):
        if a.shape != b.shape:
            raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        self._same_shape("add", a, b)
        out = self._out(a.data + b.data, a, b)

        def backward():
            _accumulate(a, out.grad)
            _accumulate(b, out.grad)

        return self._push("add", (a, b), out, backward)

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        self._same_shape("mul", a, b)
        out = self._out(a.data * b.data, a, b)

        def backward():
            _accumulate(a, out.grad * b.data)
            _accumulate(b, out.grad * a.data)

        return self._push("mul", (a, b), out, backward)

    def scale(self, x: Tensor, c: float) -> Tensor:
        out = self._out(x.data * c, x)

        def backward():
            _accumulate(x, out.grad * c)

        return self._push("scale", (x,), out, backward)

    def add_scalar(self, x: Tensor, c: float) -> Tensor:
        out = self._out(x.data + c, x)

        def backward():
            _accumulate(x, out.grad)

        return self._push("add_scalar", (x,), out, backward)

    def tanh(self, x: Tensor) -> Tensor:
        y = np.tanh(x.data)
        out = self._out(y, x)

        def backward():
            _accumulate(x, out.grad * (1.0 - y * y))

        return self._push("tanh", (x,), out, backward)

    def sigmoid(self, x: Tensor) -> Tensor:
        z = x.data
        y = np.empty_like(z)
        pos = z >= 0
        y[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        y[~pos] = ez / (1.0 + ez)
        out = self._out(y, x)

        def backward():
            _accumulate(x, out.grad * y * (1.0 - y))

        return self._push("sigmoid", (x,), out, backward)

    def reciprocal(self, x: Tensor) -> Tensor:
        y = 1.0 / x.data
        out = self._out(y, x)

        def backward():
            _accumulate(x, -out.grad * y * y)

        return self._push("reciprocal", (x,), out, backward)

    def clip(self, x: Tensor, lo: float, hi: float) -> Tensor:
        inside = (x.data >= lo) & (x.data <= hi)
        self.note_decision(inside)
        out = self._out(np.clip(x.data, lo, hi), x)

        def backward():
            _accumulate(x, out.grad * inside)

        return self._push("clip", (x,), out, backward)

    def scale_columns(self, x: Tensor, w) -> Tensor:
        """Multiply column ``i`` of each ``(d, n)`` slice by ``w[..., i]``.

        ``w`` may be a Tensor (differentiable) or a plain array/mask.
        """
        wt = w if isinstance(w, Tensor) else Tensor(w)
        if wt.shape != x.shape[:-2] + x.shape[-1:]:
            raise DimensionError(f"scale_columns: weights {wt.shape} vs tensor {x.shape}")
        wexp = wt.data[..., None, :]
        out = self._out(x.data * wexp, x, wt)

        def backward():
            _accumulate(x, out.grad * wexp)
            if wt.requires_grad:
                _accumulate(wt, (out.grad * x.data).sum(axis=-2))

        return self._push("scale_columns", (x, wt), out, backward)

    def add_bias(self, x: Tensor, b: Tensor) -> Tensor:
        """Add ``b`` (length d) to every column of each ``(d, n)`` slice."""
        if b.ndim != 1 or x.ndim < 2 or b.shape[0] != x.shape[-2]:
            raise DimensionError(f"add_bias: bias {b.shape} vs tensor {x.shape}")
        out = self._out(x.data + b.data[:, None], x, b)

        def backward():
            _accumulate(x, out.grad)
            if b.requires_grad:
                g = out.grad.reshape(-1, *out.shape[-2:]).sum(axis=(0, 2))
                _accumulate(b, g)

        return self._push("add_bias", (x, b), out, backward)

    def sum(self, x: Tensor) -> Tensor:
        out = self._out(np.array(x.data.sum()), x)

        def backward():
            _accumulate(x, np.full_like(x.data, out.grad))

        return self._push("sum", (x,), out, backward)

    def mean(self, x: Tensor) -> Tensor:
        n = x.size
        out = self._out(np.array(x.data.sum() / n), x)

        def backward():
            _accumulate(x, np.full_like(x.data, out.grad / n))

        return self._push("mean", (x,), out, backward)

    # -- reductions / attention --------------------------------------------

    def max_pool_rows(self, m: Tensor, mask=None):
        """Per-row maximum over the last axis, skipping masked columns.

        Returns ``(values, indices)``; ties resolve to the lowest index and
        gradient flows only to the recorded index of each row.
        """
        if m.ndim < 2:
            raise DimensionError(f"max_pool_rows needs (..., d, n), got {m.shape}")
        n = m.shape[-1]
        if n == 0:
            raise EmptySequenceError("max_pool_rows over an empty sequence")
        cmask = _column_mask(mask, m.shape)
        full = np.ascontiguousarray(np.broadcast_to(cmask[..., None, :], m.shape)).reshape(-1, n)
        vals, idx = _kernels.masked_max_last(m.data.reshape(-1, n), full)
        if (idx < 0).any():
            raise DegenerateInputError("max_pool_rows: a row has every column masked")
        out_shape = m.shape[:-1]
        out = self._out(vals.reshape(out_shape), m)
        indices = idx.reshape(out_shape)
        self.note_decision(indices)

        def backward():
            g = np.zeros((idx.shape[0], n))
            g[np.arange(idx.shape[0]), idx] = out.grad.reshape(-1)
            _accumulate(m, g.reshape(m.shape))

        return self._push("max_pool_rows", (m,), out, backward), indices

    def masked_softmax(self, scores: Tensor, mask=None) -> Tensor:
        """Softmax over the last axis; masked entries get exactly 0."""
        n = scores.shape[-1]
        if mask is None:
            mask = np.ones(scores.shape, dtype=bool)
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != scores.shape:
            raise DimensionError(f"masked_softmax: mask {mask.shape} vs scores {scores.shape}")
        flat_mask = np.ascontiguousarray(mask.reshape(-1, n))
        if not flat_mask.any(axis=1).all():
            raise DegenerateInputError("masked_softmax: a row has every position masked")
        y = _kernels.masked_softmax_last(scores.data.reshape(-1, n), flat_mask)
        out = self._out(y.reshape(scores.shape), scores)

        def backward():
            g = _kernels.softmax_backward(y, np.ascontiguousarray(out.grad.reshape(-1, n)))
            _accumulate(scores, g.reshape(scores.shape))

        return self._push("masked_softmax", (scores,), out, backward)

    def cosine_matrix(self, p: Tensor, h: Tensor, mask_p=None, mask_h=None, fill=-1.0) -> Tensor:
        """Column-pair cosines: ``(..., d, n_p) x (..., d, n_h) -> (..., n_p, n_h)``.

        A column with norm below ``NORM_FLOOR`` has cosine 0 with everything.
        Entries touching a masked column are set to ``fill`` and carry no
        gradient.
        """
        if p.ndim < 2 or p.shape[:-1] != h.shape[:-1]:
            raise DimensionError(f"cosine_matrix: shapes {p.shape} and {h.shape} do not agree")
        mp = _column_mask(mask_p, p.shape)
        mh = _column_mask(mask_h, h.shape)
        na = np.sqrt((p.data * p.data).sum(axis=-2))
        nb = np.sqrt((h.data * h.data).sum(axis=-2))
        oka = na >= NORM_FLOOR
        okb = nb >= NORM_FLOOR
        inva = np.where(oka, 1.0 / np.where(oka, na, 1.0), 0.0)
        invb = np.where(okb, 1.0 / np.where(okb, nb, 1.0), 0.0)
        pn = p.data * inva[..., None, :]
        hn = h.data * invb[..., None, :]
        cos = _swap(pn) @ hn
        live = mp[..., :, None] & mh[..., None, :]
        out = self._out(np.where(live, cos, fill), p, h)

        def backward():
            go = np.where(live, out.grad, 0.0)
            if p.requires_grad:
                dpn = hn @ _swap(go)
                radial = (pn * dpn).sum(axis=-2, keepdims=True)
                _accumulate(p, (dpn - pn * radial) * inva[..., None, :])
            if h.requires_grad:
                dhn = pn @ go
                radial = (hn * dhn).sum(axis=-2, keepdims=True)
                _accumulate(h, (dhn - hn * radial) * invb[..., None, :])

        return self._push("cosine_matrix", (p, h), out, backward)

    def cosine(self, u: Tensor, v: Tensor) -> Tensor:
        """Cosine of two vectors as a 0-d tensor (0 when either is ~zero)."""
        if u.ndim != 1 or u.shape != v.shape:
            raise DimensionError(f"cosine: lengths {u.shape} and {v.shape} differ")
        d = u.shape[0]
        c = self.cosine_matrix(self.reshape(u, (d, 1)), self.reshape(v, (d, 1)))
        return self.reshape(c, ())

    def gather_columns(self, table: Tensor, idx) -> Tensor:
        """Rows of a ``(V, d)`` table laid out as columns: ``idx (..., n) -> (..., d, n)``."""
        idx = np.asarray(idx, dtype=np.int64)
        vsize, d = table.shape
        if idx.size and (idx.min() < 0 or idx.max() >= vsize):
            raise ContractError(f"gather index out of range [0, {vsize})")
        data = np.swapaxes(table.data[idx], -1, -2)
        out = self._out(data, table)

        def backward():
            if not table.requires_grad:
                return
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            flat_idx = np.ascontiguousarray(idx.reshape(-1))
            rows = np.ascontiguousarray(np.swapaxes(out.grad, -1, -2).reshape(-1, d))
            _kernels.scatter_add_rows(table.grad, flat_idx, rows)
            if table.row_sparse:
                table.touched_rows.append(flat_idx)

        return self._push("gather_columns", (table,), out, backward)

    def bce(self, prob: Tensor, labels, clip=1e-12) -> Tensor:
        """Mean binary cross-entropy of probabilities against 0/1 labels."""
        y = np.asarray(labels, dtype=np.float64)
        if y.shape != prob.shape:
            raise DimensionError(f"bce: labels {y.shape} vs probabilities {prob.shape}")
        pc = np.clip(prob.data, clip, 1.0 - clip)
        inside = (prob.data >= clip) & (prob.data <= 1.0 - clip)
        self.note_decision(inside)
        n = prob.size
        val = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)).sum() / n
        out = self._out(np.array(val), prob)

        def backward():
            g = (-y / pc + (1.0 - y) / (1.0 - pc)) * inside / n
            _accumulate(prob, g * out.grad)

        return self._push("bce", (prob,), out, backward)


@dataclass
class GradCheckReport:
    max_rel_error: float
    entries: int
    kinked: int
    worst: Optional[tuple] = None  # (parameter name, flat index)


def _same_decisions(a: Graph, b: Graph):
    return len(a.decisions) == len(b.decisions) and all(
        x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a.decisions, b.decisions)
    )


def grad_check_report(f, params, eps=1e-5) -> GradCheckReport:
    """Compare analytic gradients with central differences entry by entry.

    ``f(graph)`` must build a scalar on the graph it is given. Per entry the
    error is ``|a - n| / max(|a|, |n|, 1e-8)``. When the two perturbed
    evaluations make different discrete choices (a max winner, a clip region
    or an argmax flips) the difference quotient straddles a kink and says
    nothing about the derivative; such entries are counted in ``kinked``
    and left out of ``max_rel_error``.
    """
    g = Graph()
    out = f(g)
    if out.size != 1:
        raise ContractError(f"grad_check needs a scalar-valued function, got shape {out.shape}")
    for p in params:
        p.zero_grad()
    g.backward(out)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    report = GradCheckReport(0.0, 0, 0)
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        af = a.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            gp = Graph(record=False)
            fp = f(gp).item()
            flat[k] = orig - eps
            gm = Graph(record=False)
            fm = f(gm).item()
            flat[k] = orig
            report.entries += 1
            if not (_same_decisions(gp, g) and _same_decisions(gm, g)):
                report.kinked += 1
                continue
            num = (fp - fm) / (2.0 * eps)
            err = abs(af[k] - num) / max(abs(af[k]), abs(num), 1e-8)
            if err > report.max_rel_error:
                report.max_rel_error = err
                report.worst = (p.name, k)
    return report


def grad_check(f, params, eps=1e-5) -> float:
    """Largest relative gradient error over all non-kinked entries; see :func:`grad_check_report`."""
    return grad_check_report(f, params, eps).max_rel_error
