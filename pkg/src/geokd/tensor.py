"""Dense tensors with reverse-mode differentiation, plus fixed CSR operators.

Tensors are strictly rank-2 float64. Each differentiable op records its
parents and a backward closure; calling ``backward()`` on a scalar walks the
tape in reverse topological order. Sparse matrices are constants: gradients
flow only through their dense operands.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, NumericError, ValidationError


class Tensor:
    """A (rows, cols) float64 matrix participating in the autodiff tape."""

    __slots__ = ("values", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.atleast_2d(np.asarray(values, dtype=np.float64))
        if arr.ndim != 2:
            raise DimensionError(f"tensors are rank-2, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionError(f"empty tensor shape {arr.shape}")
        self.values = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.values.shape

    def item(self) -> float:
        if self.values.size != 1:
            raise DimensionError(f"item() on shape {self.shape}")
        return float(self.values[0, 0])

    def detach(self) -> "Tensor":
        """Copy of the value with no tape history."""
        return Tensor(self.values.copy())

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        # copy: upstream buffers may be aliased (e.g. both parents of add)
        if self.grad is None:
            self.grad = np.array(g)
        else:
            self.grad += g

    def _accumulate_owned(self, g: np.ndarray):
        # fast path for freshly allocated buffers the closure hands over
        if self.grad is None:
            self.grad = g
        else:
            self.grad += g

    def backward(self):
        """Reverse pass from this scalar; populates .grad on reachable tensors."""
        if self.values.size != 1:
            raise DimensionError("backward() requires a scalar loss")
        order = _toposort(self)
        self._accumulate(np.ones((1, 1)))
        for node in order:
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        # Free the tape; parameters keep their grads.
        for node in order:
            node._parents = ()
            node._backward = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _toposort(root: Tensor):
    """Reverse topological order of the tape reachable from root."""
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return list(reversed(order))


def _make(values: np.ndarray, parents, backward) -> Tensor:
    out = Tensor(values)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def constant(values) -> Tensor:
    return Tensor(values)


def parameter(values) -> Tensor:
    return Tensor(values, requires_grad=True)


# ---------------------------------------------------------------------------
# Sparse operators (fixed coefficients; never differentiated through)


class SparseMatrix:
    """CSR matrix with strictly increasing column indices per row."""

    def __init__(self, rows: int, cols: int, indptr, indices, data):
        self.rows = int(rows)
        self.cols = int(cols)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.data = np.asarray(data, dtype=np.float64)
        self._transpose = None
        self._nonempty_rows = None  # cached reduceat plan for matmul_dense
        self._validate()

    def _validate(self):
        if self.rows < 0 or self.cols < 0:
            raise ValidationError("negative dimensions")
        if self.indptr.shape != (self.rows + 1,):
            raise ValidationError("indptr length must be rows+1")
        if self.indptr[0] != 0 or self.indptr[-1] != len(self.indices):
            raise ValidationError("indptr endpoints inconsistent with indices")
        if np.any(np.diff(self.indptr) < 0):
            raise ValidationError("indptr must be nondecreasing")
        if len(self.indices) != len(self.data):
            raise ValidationError("indices/data length mismatch")
        if len(self.indices) and (self.indices.min() < 0 or self.indices.max() >= self.cols):
            raise ValidationError("column index out of range")
        for r in range(self.rows):
            seg = self.indices[self.indptr[r]:self.indptr[r + 1]]
            if len(seg) > 1 and np.any(np.diff(seg) <= 0):
                raise ValidationError(f"row {r}: column indices not strictly increasing")

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def nnz(self) -> int:
        return len(self.data)

    @classmethod
    def from_coo(cls, rows: int, cols: int, rr, cc, vv) -> "SparseMatrix":
        rr = np.asarray(rr, dtype=np.int64)
        cc = np.asarray(cc, dtype=np.int64)
        vv = np.asarray(vv, dtype=np.float64)
        order = np.lexsort((cc, rr))
        rr, cc, vv = rr[order], cc[order], vv[order]
        if len(rr) > 1 and np.any((np.diff(rr) == 0) & (np.diff(cc) == 0)):
            raise ValidationError("duplicate (row, col) entry")
        indptr = np.zeros(rows + 1, dtype=np.int64)
        np.add.at(indptr, rr + 1, 1)
        indptr = np.cumsum(indptr)
        return cls(rows, cols, indptr, cc, vv)

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        idx = np.arange(n, dtype=np.int64)
        return cls(n, n, np.arange(n + 1, dtype=np.int64), idx, np.ones(n))

    def densify(self) -> np.ndarray:
        out = np.zeros((self.rows, self.cols))
        for r in range(self.rows):
            seg = slice(self.indptr[r], self.indptr[r + 1])
            out[r, self.indices[seg]] = self.data[seg]
        return out

    def transpose(self) -> "SparseMatrix":
        if self._transpose is None:
            row_ids = np.repeat(np.arange(self.rows, dtype=np.int64), np.diff(self.indptr))
            self._transpose = SparseMatrix.from_coo(
                self.cols, self.rows, self.indices, row_ids, self.data
            )
        return self._transpose

    def matmul_dense(self, x: np.ndarray) -> np.ndarray:
        """CSR @ dense. Row segments are contiguous, so a single reduceat works."""
        if self.cols != x.shape[0]:
            raise DimensionError(f"spmm: {self.shape} @ {x.shape}")
        out = np.zeros((self.rows, x.shape[1]))
        if self.nnz == 0:
            return out
        if self._nonempty_rows is None:
            nz = np.flatnonzero(np.diff(self.indptr))
            self._nonempty_rows = (nz, self.indptr[nz])
        nz, starts = self._nonempty_rows
        prod = x[self.indices]
        prod *= self.data[:, None]
        out[nz] = np.add.reduceat(prod, starts, axis=0)
        return out


# ---------------------------------------------------------------------------
# Primitive operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    out_vals = a.values @ b.values

    def backward(g):
        if a.requires_grad:
            a._accumulate_owned(g @ b.values.T)
        if b.requires_grad:
            b._accumulate_owned(a.values.T @ g)

    return _make(out_vals, (a, b), backward)


def spmm(s: SparseMatrix, x: Tensor) -> Tensor:
    if s.cols != x.shape[0]:
        raise DimensionError(f"spmm: {s.shape} @ {x.shape}")
    out_vals = s.matmul_dense(x.values)

    def backward(g):
        if x.requires_grad:
            x._accumulate_owned(s.transpose().matmul_dense(g))

    return _make(out_vals, (x,), backward)


def transpose(a: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(g.T)

    return _make(a.values.T.copy(), (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.values > 0  # subgradient 0 at exactly 0

    def backward(g):
        if a.requires_grad:
            a._accumulate_owned(g * mask)

    return _make(np.where(mask, a.values, 0.0), (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out_vals = np.tanh(a.values)

    def backward(g):
        if a.requires_grad:
            a._accumulate_owned(g * (1.0 - out_vals * out_vals))

    return _make(out_vals, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out_vals = np.exp(a.values)

    def backward(g):
        if a.requires_grad:
            a._accumulate_owned(g * out_vals)

    return _make(out_vals, (a,), backward)


def _check_same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return _make(a.values + b.values, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate_owned(-g)

    return _make(a.values - b.values, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        if a.requires_grad:
            a._accumulate_owned(g * c)

    return _make(a.values * c, (a,), backward)


def mul_elem(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul_elem")

    def backward(g):
        if a.requires_grad:
            a._accumulate_owned(g * b.values)
        if b.requires_grad:
            b._accumulate_owned(g * a.values)

    return _make(a.values * b.values, (a, b), backward)


def take_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    if len(idx) == 0:
        raise ValidationError("take_rows: empty index set")
    if idx.min() < 0 or idx.max() >= a.shape[0]:
        raise ValidationError("take_rows: index out of range")

    def backward(g):
        if a.requires_grad:
            buf = np.zeros_like(a.values)
            np.add.at(buf, idx, g)
            a._accumulate_owned(buf)

    return _make(a.values[idx], (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate_owned(np.full_like(a.values, g[0, 0]))

    return _make(np.array([[a.values.sum()]]), (a,), backward)


def log_softmax(a: Tensor) -> Tensor:
    z = a.values - a.values.max(axis=1, keepdims=True)
    out_vals = z - np.log(np.exp(z).sum(axis=1, keepdims=True))

    def backward(g):
        if a.requires_grad:
            soft = np.exp(out_vals)
            a._accumulate_owned(g - soft * g.sum(axis=1, keepdims=True))

    return _make(out_vals, (a,), backward)


def pairwise_sqdist(h: Tensor) -> Tensor:
    """n x n matrix of squared Euclidean row distances; exact zero diagonal.

    Uses the Gram identity D_ij = G_ii + G_jj - G_ij - G_ji, symmetrized by
    construction; rounding can leave tiny negatives at coincident rows, which
    are clamped (their true derivative is zero, matching the backward rule:
    diagonal and coincident-row contributions cancel in s.sum(1)*h - s@h).
    """
    gm = h.values @ h.values.T
    r = np.diag(gm).copy()
    # r_i + r_j and gm_ij + gm_ji are each exactly symmetric (commutative
    # additions); one subtraction keeps the whole result exactly symmetric
    out_vals = r[:, None] + r[None, :]
    cross = gm + gm.T
    out_vals -= cross
    np.maximum(out_vals, 0.0, out=out_vals)
    np.fill_diagonal(out_vals, 0.0)

    def backward(g):
        if h.requires_grad:
            s = g + g.T
            h._accumulate_owned(2.0 * (s.sum(axis=1, keepdims=True) * h.values - s @ h.values))

    return _make(out_vals, (h,), backward)


# ---------------------------------------------------------------------------
# Composite operations


def gram(h: Tensor) -> Tensor:
    """H @ H^T; symmetric positive semidefinite."""
    return matmul(h, transpose(h))


def frobenius_sq(a: Tensor, b: Tensor, w: Tensor) -> Tensor:
    """sum of W_ij^2 (A_ij - B_ij)^2 as a scalar tensor."""
    _check_same_shape(a, b, "frobenius_sq")
    _check_same_shape(a, w, "frobenius_sq")
    weighted = mul_elem(sub(a, b), w)
    return sum_all(mul_elem(weighted, weighted))


def cross_entropy(logits: Tensor, labels, mask) -> Tensor:
    """Mean negative log-softmax at the true class over masked rows."""
    mask = np.asarray(mask, dtype=np.int64)
    if len(mask) == 0:
        raise ValidationError("cross_entropy: empty mask")
    labels = np.asarray(labels, dtype=np.int64)
    picked_labels = labels[mask]
    if picked_labels.min() < 0 or picked_labels.max() >= logits.shape[1]:
        raise ValidationError("cross_entropy: label out of range")
    ls = log_softmax(take_rows(logits, mask))
    onehot = np.zeros((len(mask), logits.shape[1]))
    onehot[np.arange(len(mask)), picked_labels] = 1.0
    return scale(sum_all(mul_elem(ls, constant(onehot))), -1.0 / len(mask))


# ---------------------------------------------------------------------------
# Gradient checking


def grad_check(f, params, eps: float = 1e-5) -> float:
    """Max relative error of analytic vs central finite-difference gradients.

    ``f`` is a zero-argument callable that rebuilds the forward computation
    and returns a scalar tensor; it must read parameter values live so that
    in-place perturbations take effect.
    """
    for p in params:
        p.zero_grad()
    loss = f()
    if not np.isfinite(loss.values).all():
        raise NumericError("loss is not finite")
    loss.backward()
    analytic = []
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.values)
        analytic.append(p.grad.copy())

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.values.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            v0 = flat[i]
            flat[i] = v0 + eps
            f_plus = f().item()
            flat[i] = v0 - eps
            f_minus = f().item()
            flat[i] = v0
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError("finite-difference evaluation not finite")
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = abs(gflat[i] - numeric) / max(1e-8, abs(gflat[i]) + abs(numeric))
            worst = max(worst, err)
    return worst
