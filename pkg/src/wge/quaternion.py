"""Quaternion algebra on numpy arrays.

Quaternion arrays are stored structure-of-arrays: axis 0 always has length 4
and holds the (r, i, j, k) components, so a vector of n quaternions is a
``(4, n)`` array and an m x n quaternion matrix is ``(4, m, n)``. The array
kernels here are shared by :mod:`wge.autodiff`, which differentiates them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateQuaternionError(ValueError):
    """Raised when normalizing a quaternion of zero norm."""


def _check_components(a: np.ndarray, name: str = "operand") -> None:
    if a.ndim < 1 or a.shape[0] != 4:
        raise ValueError(f"{name} must have a leading component axis of length 4, got shape {a.shape}")


# ---------------------------------------------------------------------------
# array kernels (component axis first)
# ---------------------------------------------------------------------------

def hamilton_array(q: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Hamilton product of two component-first arrays, element by element.

    Trailing axes broadcast like ordinary numpy arithmetic.
    """
    qr, qi, qj, qk = q
    pr, pi, pj, pk = p
    return np.stack(
        [
            qr * pr - qi * pi - qj * pj - qk * pk,
            qi * pr + qr * pi - qk * pj + qj * pk,
            qj * pr + qk * pi + qr * pj - qi * pk,
            qk * pr - qj * pi + qi * pj + qr * pk,
        ]
    )


def conjugate_array(q: np.ndarray) -> np.ndarray:
    out = -q
    out[0] = q[0]
    return out


def norm_array(q: np.ndarray) -> np.ndarray:
    """Per-quaternion norm; the component axis is reduced away."""
    return np.sqrt(np.sum(q * q, axis=0))


def normalize_array(q: np.ndarray) -> np.ndarray:
    """Scale every quaternion entry of ``q`` to unit norm independently."""
    n = norm_array(q)
    if np.any(n == 0):
        raise DegenerateQuaternionError("cannot normalize a zero quaternion")
    return q / n


def matmul_array(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Apply quaternion matrices ``w`` (4, m, n) to row batches ``x`` (4, ..., n).

    Each row ``x[:, b]`` is treated as a quaternion column vector p and mapped to
    ``W (x) p``; the result has shape (4, ..., m). This is the 4-block real
    matrix form computed as sixteen real products.
    """
    xr, xi, xj, xk = x
    wr, wi, wj, wk = (w[c].T for c in range(4))
    return np.stack(
        [
            xr @ wr - xi @ wi - xj @ wj - xk @ wk,
            xr @ wi + xi @ wr - xj @ wk + xk @ wj,
            xr @ wj + xi @ wk + xj @ wr - xk @ wi,
            xr @ wk - xi @ wj + xj @ wi + xk @ wr,
        ]
    )


def real_block_matrix(w: np.ndarray) -> np.ndarray:
    """The (4m, 4n) real matrix equivalent to left-multiplying by quaternion matrix ``w``."""
    wr, wi, wj, wk = w
    return np.block(
        [
            [wr, -wi, -wj, -wk],
            [wi, wr, -wk, wj],
            [wj, wk, wr, -wi],
            [wk, -wj, wi, wr],
        ]
    )


def inner_array(q: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Quaternion inner product over the component axis and the last axis."""
    return np.sum(q * p, axis=(0, -1))


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Quaternion:
    r: float
    i: float = 0.0
    j: float = 0.0
    k: float = 0.0

    def __post_init__(self):
        if not all(np.isfinite(c) for c in self.components):
            raise ValueError(f"quaternion components must be finite: {self.components}")

    @property
    def components(self) -> tuple[float, float, float, float]:
        return (self.r, self.i, self.j, self.k)

    def as_array(self) -> np.ndarray:
        return np.array(self.components, dtype=np.float64)

    @classmethod
    def from_array(cls, a) -> "Quaternion":
        a = np.asarray(a, dtype=np.float64)
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    def __add__(self, other: "Quaternion") -> "Quaternion":
        return q_add(self, other)

    def __mul__(self, other: "Quaternion") -> "Quaternion":
        return hamilton(self, other)

    def __rmul__(self, lam: float) -> "Quaternion":
        return q_scalar_mul(lam, self)


@dataclass(frozen=True, eq=False)
class QuaternionVector:
    """n quaternions held as a (4, n) float64 array."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] != 4:
            raise ValueError(f"QuaternionVector needs shape (4, n), got {data.shape}")
        if data.shape[1] == 0:
            raise ValueError("QuaternionVector must hold at least one quaternion")
        object.__setattr__(self, "data", data)

    @classmethod
    def from_components(cls, r, i, j, k) -> "QuaternionVector":
        return cls(np.stack([np.asarray(c, dtype=np.float64) for c in (r, i, j, k)]))

    r_vec = property(lambda self: self.data[0])
    i_vec = property(lambda self: self.data[1])
    j_vec = property(lambda self: self.data[2])
    k_vec = property(lambda self: self.data[3])

    def __len__(self) -> int:
        return self.data.shape[1]

    def __getitem__(self, t: int) -> Quaternion:
        return Quaternion.from_array(self.data[:, t])

    def allclose(self, other: "QuaternionVector", **kw) -> bool:
        return np.allclose(self.data, other.data, **kw)


@dataclass(frozen=True, eq=False)
class QuaternionMatrix:
    """An m x n quaternion matrix held as a (4, m, n) float64 array."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[0] != 4:
            raise ValueError(f"QuaternionMatrix needs shape (4, m, n), got {data.shape}")
        object.__setattr__(self, "data", data)

    @classmethod
    def identity(cls, n: int) -> "QuaternionMatrix":
        data = np.zeros((4, n, n))
        data[0] = np.eye(n)
        return cls(data)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]

    r_mat = property(lambda self: self.data[0])
    i_mat = property(lambda self: self.data[1])
    j_mat = property(lambda self: self.data[2])
    k_mat = property(lambda self: self.data[3])


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def q_add(q: Quaternion, p: Quaternion) -> Quaternion:
    return Quaternion(q.r + p.r, q.i + p.i, q.j + p.j, q.k + p.k)


def q_scalar_mul(lam: float, q: Quaternion) -> Quaternion:
    return Quaternion(lam * q.r, lam * q.i, lam * q.j, lam * q.k)


def q_conjugate(q: Quaternion) -> Quaternion:
    return Quaternion(q.r, -q.i, -q.j, -q.k)


def q_norm(q: Quaternion) -> float:
    return float(np.sqrt(q.r * q.r + q.i * q.i + q.j * q.j + q.k * q.k))


def q_normalize(q: Quaternion) -> Quaternion:
    n = q_norm(q)
    if n == 0:
        raise DegenerateQuaternionError("cannot normalize the zero quaternion")
    return q_scalar_mul(1.0 / n, q)


def hamilton(q, p):
    """Hamilton product of two quaternions or two equal-length quaternion vectors."""
    if isinstance(q, Quaternion) and isinstance(p, Quaternion):
        return Quaternion.from_array(hamilton_array(q.as_array(), p.as_array()))
    if isinstance(q, QuaternionVector) and isinstance(p, QuaternionVector):
        if len(q) != len(p):
            raise ValueError(f"length mismatch: {len(q)} vs {len(p)}")
        return QuaternionVector(hamilton_array(q.data, p.data))
    raise TypeError(f"unsupported operand types {type(q).__name__}, {type(p).__name__}")


def matvec_hamilton(w: QuaternionMatrix, p: QuaternionVector) -> QuaternionVector:
    m, n = w.shape
    if n != len(p):
        raise ValueError(f"matrix has {n} columns but vector has length {len(p)}")
    return QuaternionVector(matmul_array(p.data[:, None, :], w.data)[:, 0, :])


def q_inner(q: QuaternionVector, p: QuaternionVector) -> float:
    if len(q) != len(p):
        raise ValueError(f"length mismatch: {len(q)} vs {len(p)}")
    return float(inner_array(q.data, p.data))


def q_elementwise(q: QuaternionVector, p: QuaternionVector) -> QuaternionVector:
    if len(q) != len(p):
        raise ValueError(f"length mismatch: {len(q)} vs {len(p)}")
    return QuaternionVector(q.data * p.data)
