"""Dense three-way arrays (samples x dim1 x dim2) and the linear algebra on them.

Vectorization is column-major within each sample: cell ``(j, k)`` of a
``p x m`` matrix lands at flat position ``k * p + j`` (dim1 varies fastest).
Every module relies on this ordering.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes do not conform."""


@dataclass(frozen=True)
class Tensor3:
    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64, copy=True)
        if arr.ndim != 3:
            raise DimensionError(f"expected a 3-way array, got ndim={arr.ndim}")
        if min(arr.shape) < 1:
            raise DimensionError(f"all axes must be non-empty, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor contains non-finite entries")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def m(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self):
        return self.values.shape

    def slice(self, i: int) -> np.ndarray:
        """The ``p x m`` matrix of sample ``i``."""
        return self.values[i]

    def vectorized(self) -> np.ndarray:
        """``n x pm`` matrix whose row ``i`` is ``vectorize(slice(i))``."""
        return vectorize_samples(self.values)

    def take(self, idx) -> "Tensor3":
        return Tensor3(self.values[np.asarray(idx)])


@dataclass(frozen=True)
class LabeledDataset:
    tensor: Tensor3
    labels: np.ndarray
    dim1_names: Optional[Sequence[str]] = None
    dim2_names: Optional[Sequence[str]] = None
    sample_ids: Optional[Sequence[str]] = field(default=None, compare=False)

    def __post_init__(self):
        y = np.asarray(self.labels, dtype=np.float64).ravel()
        if y.shape[0] != self.tensor.n:
            raise DimensionError(
                f"{y.shape[0]} labels for {self.tensor.n} samples")
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        y.setflags(write=False)
        object.__setattr__(self, "labels", y)
        for name, names, size in (("dim1_names", self.dim1_names, self.tensor.p),
                                  ("dim2_names", self.dim2_names, self.tensor.m)):
            if names is not None:
                names = tuple(str(s) for s in names)
                if len(names) != size:
                    raise DimensionError(f"{name} has {len(names)} entries, axis has {size}")
                object.__setattr__(self, name, names)
        if self.sample_ids is not None:
            ids = tuple(str(s) for s in self.sample_ids)
            if len(ids) != self.tensor.n:
                raise DimensionError("sample_ids length does not match n")
            object.__setattr__(self, "sample_ids", ids)

    @property
    def n(self) -> int:
        return self.tensor.n

    @property
    def p(self) -> int:
        return self.tensor.p

    @property
    def m(self) -> int:
        return self.tensor.m

    @property
    def X(self) -> np.ndarray:
        return self.tensor.values

    def class_counts(self):
        return int(np.sum(self.labels > 0)), int(np.sum(self.labels < 0))

    def require_both_classes(self):
        pos, neg = self.class_counts()
        if pos == 0 or neg == 0:
            raise ValueError("both classes must be present")

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx)
        ids = None if self.sample_ids is None else [self.sample_ids[i] for i in idx]
        return LabeledDataset(self.tensor.take(idx), self.labels[idx],
                              self.dim1_names, self.dim2_names, ids)

    def with_labels(self, labels) -> "LabeledDataset":
        return LabeledDataset(self.tensor, labels, self.dim1_names,
                              self.dim2_names, self.sample_ids)


def vectorize(b_matrix) -> np.ndarray:
    """Column-major flattening of a ``p x m`` matrix."""
    b = np.asarray(b_matrix, dtype=np.float64)
    if b.ndim != 2:
        raise DimensionError("vectorize expects a matrix")
    return b.ravel(order="F")


def unvectorize(vec, p: int, m: int) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (p * m,):
        raise DimensionError(f"vector of length {vec.size} cannot fill {p}x{m}")
    return vec.reshape((p, m), order="F")


def vectorize_samples(values: np.ndarray) -> np.ndarray:
    n, p, m = values.shape
    return np.ascontiguousarray(values.transpose(0, 2, 1)).reshape(n, p * m)


def kron(v, w) -> np.ndarray:
    """``v (x) w``; equals ``vectorize(outer(w, v))``."""
    return np.kron(np.asarray(v, dtype=np.float64), np.asarray(w, dtype=np.float64))


def _values(x) -> np.ndarray:
    return x.values if isinstance(x, Tensor3) else np.asarray(x, dtype=np.float64)


def mode2_product(x, v) -> np.ndarray:
    """Contract dim2: row ``i`` of the result is ``X_i @ v``."""
    vals = _values(x)
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != vals.shape[2]:
        raise DimensionError(f"v has shape {v.shape}, expected ({vals.shape[2]},)")
    return vals @ v


def mode1_product(x, w) -> np.ndarray:
    """Contract dim1: row ``i`` of the result is ``w @ X_i``."""
    vals = _values(x)
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] != vals.shape[1]:
        raise DimensionError(f"w has shape {w.shape}, expected ({vals.shape[1]},)")
    return np.einsum("ijk,j->ik", vals, w)


def stacked_mode2(x, V) -> np.ndarray:
    """``n x rp`` covariates ``[X_i v_1; ...; X_i v_r]`` for the columns of ``V``."""
    vals = _values(x)
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2 or V.shape[0] != vals.shape[2]:
        raise DimensionError(f"V has shape {V.shape}, expected ({vals.shape[2]}, r)")
    # (n, p, r) -> blocks of p per component
    return (vals @ V).transpose(0, 2, 1).reshape(vals.shape[0], -1)


def stacked_mode1(x, W) -> np.ndarray:
    """``n x rm`` covariates ``[X_i^T w_1; ...; X_i^T w_r]`` for the columns of ``W``."""
    vals = _values(x)
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != vals.shape[1]:
        raise DimensionError(f"W has shape {W.shape}, expected ({vals.shape[1]}, r)")
    return np.einsum("ijk,jz->izk", vals, W).reshape(vals.shape[0], -1)


def _fix_signs(U, V):
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs, V * signs


def thin_svd(b, r: int):
    """Rank-``r`` truncated SVD ``(U, S, V)`` with ``b ~= U diag(S) V^T``.

    Each column of ``V`` has its largest-magnitude entry positive; ``U`` is
    flipped with it so the product is unchanged.
    """
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 2:
        raise DimensionError("thin_svd expects a matrix")
    p, m = b.shape
    if not (1 <= int(r) <= min(p, m)):
        raise ValueError(f"rank {r} outside [1, {min(p, m)}]")
    U, S, Vt = np.linalg.svd(b, full_matrices=False)
    U, V = _fix_signs(U[:, :r], Vt[:r].T)
    return U, S[:r].copy(), V
