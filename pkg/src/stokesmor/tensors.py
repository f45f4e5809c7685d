"""Symmetric traceless 3x3 matrices and small tensor helpers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_S2 = np.sqrt(2.0)
_S6 = np.sqrt(6.0)

# Orthonormal basis of Sym0(3) under the Frobenius product A:B.
SYM0_BASIS = np.array([
    [[1 / _S2, 0, 0], [0, -1 / _S2, 0], [0, 0, 0]],
    [[-1 / _S6, 0, 0], [0, -1 / _S6, 0], [0, 0, 2 / _S6]],
    [[0, 1 / _S2, 0], [1 / _S2, 0, 0], [0, 0, 0]],
    [[0, 0, 1 / _S2], [0, 0, 0], [1 / _S2, 0, 0]],
    [[0, 0, 0], [0, 0, 1 / _S2], [0, 1 / _S2, 0]],
])

LEVI_CIVITA = np.zeros((3, 3, 3))
LEVI_CIVITA[0, 1, 2] = LEVI_CIVITA[1, 2, 0] = LEVI_CIVITA[2, 0, 1] = 1.0
LEVI_CIVITA[0, 2, 1] = LEVI_CIVITA[2, 1, 0] = LEVI_CIVITA[1, 0, 2] = -1.0


def sym(a):
    """Symmetric part of (a stack of) 3x3 matrices."""
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def sym_traceless(a):
    """Project (a stack of) 3x3 matrices onto Sym0(3)."""
    s = sym(a)
    tr = np.trace(s, axis1=-2, axis2=-1)
    return s - (tr / 3.0)[..., None, None] * np.eye(3)


def curl_from_gradient(grad):
    """Curl of a vector field given G[..., i, j] = d_j u_i."""
    return np.einsum("ijk,...kj->...i", LEVI_CIVITA, grad)


def to_coords(mats):
    """Coordinates of Sym0 matrices in SYM0_BASIS, shape (..., 5)."""
    return np.einsum("...ij,bij->...b", np.asarray(mats, dtype=float), SYM0_BASIS)


def from_coords(coords):
    """Inverse of :func:`to_coords`."""
    return np.einsum("...b,bij->...ij", np.asarray(coords, dtype=float), SYM0_BASIS)


@dataclass(frozen=True)
class TracelessSym3:
    """Symmetric traceless 3x3 matrix stored by five free entries.

    The zz entry is derived as -(xx + yy), so symmetry and zero trace are
    exact by construction.
    """

    xx: float = 0.0
    yy: float = 0.0
    xy: float = 0.0
    xz: float = 0.0
    yz: float = 0.0

    @classmethod
    def from_matrix(cls, a) -> "TracelessSym3":
        s = sym_traceless(a)
        return cls(float(s[0, 0]), float(s[1, 1]), float(s[0, 1]),
                   float(s[0, 2]), float(s[1, 2]))

    @classmethod
    def from_coords(cls, c) -> "TracelessSym3":
        return cls.from_matrix(from_coords(c))

    @classmethod
    def zero(cls) -> "TracelessSym3":
        return cls()

    @property
    def zz(self) -> float:
        return -(self.xx + self.yy)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([
            [self.xx, self.xy, self.xz],
            [self.xy, self.yy, self.yz],
            [self.xz, self.yz, self.zz],
        ])

    @property
    def coords(self) -> np.ndarray:
        return to_coords(self.matrix)

    def norm(self) -> float:
        """Frobenius norm."""
        return float(np.linalg.norm(self.matrix))

    def ddot(self, other) -> float:
        """Frobenius product S:T with another TracelessSym3 or matrix."""
        b = other.matrix if isinstance(other, TracelessSym3) else np.asarray(other)
        return float(np.sum(self.matrix * b))

    def __add__(self, other: "TracelessSym3") -> "TracelessSym3":
        return TracelessSym3(self.xx + other.xx, self.yy + other.yy, self.xy + other.xy,
                             self.xz + other.xz, self.yz + other.yz)

    def __sub__(self, other: "TracelessSym3") -> "TracelessSym3":
        return self + (-1.0) * other

    def __mul__(self, alpha: float) -> "TracelessSym3":
        return TracelessSym3(alpha * self.xx, alpha * self.yy, alpha * self.xy,
                             alpha * self.xz, alpha * self.yz)

    __rmul__ = __mul__

    def __neg__(self) -> "TracelessSym3":
        return (-1.0) * self


def as_matrix(s) -> np.ndarray:
    """Accept a TracelessSym3 or an array-like and return a float ndarray."""
    if isinstance(s, TracelessSym3):
        return s.matrix
    return np.asarray(s, dtype=float)
