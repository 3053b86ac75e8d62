"""Dense complex tensor algebra.

Tensors are plain ``numpy.ndarray`` objects of complex128. Whenever a tensor
has to be laid out as a flat vector (serialization, matrix views of square
tensors) the canonical element order is *first index varies fastest*, i.e.
Fortran order. Use :func:`to_vector` / :func:`from_vector` / :func:`as_matrix`
instead of calling ``reshape`` directly so the order stays consistent.

All indices are 0-based.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import prod
from typing import Sequence

import numpy as np

CANONICAL_ORDER = "F"


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def to_vector(X: np.ndarray) -> np.ndarray:
    """Flatten ``X`` in canonical (first index fastest) order."""
    return np.asarray(X).reshape(-1, order=CANONICAL_ORDER)


def from_vector(v: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`to_vector`."""
    v = np.asarray(v)
    if v.size != prod(shape):
        raise ShapeError(f"cannot reshape {v.size} elements into {tuple(shape)}")
    return v.reshape(tuple(shape), order=CANONICAL_ORDER)


def as_matrix(A: np.ndarray, n_leading: int) -> np.ndarray:
    """View a tensor as a matrix: rows from the first ``n_leading`` modes."""
    rows = prod(A.shape[:n_leading])
    return A.reshape(rows, -1, order=CANONICAL_ORDER)


def identity_tensor(shape: Sequence[int]) -> np.ndarray:
    """Square identity tensor of shape ``shape + shape``."""
    n = prod(shape)
    eye = np.eye(n, dtype=complex)
    return eye.reshape(tuple(shape) * 2, order=CANONICAL_ORDER)


def m_mode_product(X: np.ndarray, M: np.ndarray, m: int) -> np.ndarray:
    """Multiply ``X`` along axis ``m`` by matrix ``M``.

    The output has axis ``m`` replaced by the row count of ``M``:
    ``Y[.., i, ..] = sum_n M[i, n] X[.., n, ..]``.
    """
    X = np.asarray(X)
    M = np.asarray(M)
    if M.ndim != 2:
        raise ShapeError("mode product needs a matrix")
    if not 0 <= m < X.ndim:
        raise ShapeError(f"axis {m} out of range for {X.ndim}-mode tensor")
    if M.shape[1] != X.shape[m]:
        raise ShapeError(
            f"matrix has {M.shape[1]} columns but axis {m} has size {X.shape[m]}"
        )
    return np.moveaxis(np.tensordot(M, X, axes=(1, m)), 0, m)


def einstein_product(A: np.ndarray, B: np.ndarray, K: int) -> np.ndarray:
    """Contract the last ``K`` modes of ``A`` with the first ``K`` modes of ``B``."""
    A = np.asarray(A)
    B = np.asarray(B)
    if K < 0 or K > A.ndim or K > B.ndim:
        raise ShapeError("contraction count out of range")
    if A.shape[A.ndim - K:] != B.shape[:K]:
        raise ShapeError(
            f"trailing modes {A.shape[A.ndim - K:]} do not match leading modes {B.shape[:K]}"
        )
    return np.tensordot(A, B, axes=K)


def outer_product(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Outer product; the result shape is the concatenation of both shapes."""
    return np.multiply.outer(np.asarray(X), np.asarray(Y))


def m_hermitian(A: np.ndarray, M: int) -> np.ndarray:
    """Move the first ``M`` modes behind the remaining ones and conjugate."""
    A = np.asarray(A)
    if not 1 <= M < A.ndim:
        raise ShapeError(f"leading mode count {M} out of range for {A.ndim}-mode tensor")
    order = list(range(M, A.ndim)) + list(range(M))
    return np.conj(np.transpose(A, order))


@dataclass(frozen=True)
class CyclicShiftSpec:
    """Left cyclic shift by ``length`` along ``axis``."""

    axis: int
    length: int


def cyclic_shift(X: np.ndarray, spec: CyclicShiftSpec) -> np.ndarray:
    """Output index ``i`` holds input index ``(i + length) mod size`` along the axis."""
    X = np.asarray(X)
    if not 0 <= spec.axis < X.ndim:
        raise ShapeError(f"axis {spec.axis} out of range for {X.ndim}-mode tensor")
    return np.roll(X, -int(spec.length), axis=spec.axis)


def shift_matrix(N: int, m: int) -> np.ndarray:
    """The permutation matrix whose left action is ``cyclic_shift`` by ``m``."""
    G = np.zeros((N, N))
    G[np.arange(N), (np.arange(N) + m) % N] = 1.0
    return G


@dataclass(frozen=True)
class PseudoDiagTensor:
    """Square ``2M``-mode tensor stored only through its pseudo-diagonal.

    ``diag`` has shape ``half_shape``; the represented tensor is
    ``T[i.., j..] = diag[i..] * (i.. == j..)``.
    """

    diag: np.ndarray

    @property
    def half_shape(self) -> tuple[int, ...]:
        return self.diag.shape

    @property
    def support(self) -> np.ndarray:
        """Boolean mask of non-zero pseudo-diagonal entries."""
        return self.diag != 0

    def einstein(self, X: np.ndarray) -> np.ndarray:
        """``self *_M X`` computed as elementwise scaling along the leading modes."""
        X = np.asarray(X)
        n = self.diag.ndim
        if X.shape[:n] != self.diag.shape:
            raise ShapeError(f"leading modes {X.shape[:n]} do not match {self.diag.shape}")
        return self.diag.reshape(self.diag.shape + (1,) * (X.ndim - n)) * X

    def rmul(self, X: np.ndarray) -> np.ndarray:
        """``X *_M self`` computed as elementwise scaling along the trailing modes."""
        X = np.asarray(X)
        n = self.diag.ndim
        if X.shape[X.ndim - n:] != self.diag.shape:
            raise ShapeError(f"trailing modes {X.shape[X.ndim - n:]} do not match {self.diag.shape}")
        return X * self.diag

    def to_dense(self) -> np.ndarray:
        """Materialize the square tensor. Tests only."""
        return identity_tensor(self.diag.shape) * self.diag.reshape(
            self.diag.shape + (1,) * self.diag.ndim
        )


def pseudo_inverse_elementwise(A: PseudoDiagTensor) -> PseudoDiagTensor:
    """Reciprocal on the non-zero pseudo-diagonal entries, zero elsewhere."""
    d = np.asarray(A.diag)
    out = np.zeros_like(d)
    nz = d != 0
    out[nz] = 1.0 / d[nz]
    return PseudoDiagTensor(out)


def tensor_trace(A) -> complex:
    """Trace of a square tensor (sum of the pseudo-diagonal)."""
    if isinstance(A, PseudoDiagTensor):
        return complex(np.sum(A.diag))
    A = np.asarray(A)
    if A.ndim % 2:
        raise ShapeError("square tensor needs an even number of modes")
    n = A.ndim // 2
    if A.shape[:n] != A.shape[n:]:
        raise ShapeError(f"tensor with shape {A.shape} is not square")
    return complex(np.trace(as_matrix(A, n)))
