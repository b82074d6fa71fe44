"""Complex matrices stored as real/imaginary planes, and Hermitian solves."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NumericError, ShapeError

JITTER = 1e-6


@dataclass
class ComplexMatrix:
    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        self.re = np.asarray(self.re, dtype=np.float64)
        self.im = np.asarray(self.im, dtype=np.float64)
        if self.re.shape != self.im.shape or self.re.ndim != 2:
            raise ShapeError(f"re {self.re.shape} and im {self.im.shape} must be equal 2-D shapes")

    @classmethod
    def from_complex(cls, z):
        z = np.atleast_2d(np.asarray(z))
        return cls(z.real, z.imag)

    def to_complex(self):
        return self.re + 1j * self.im

    @property
    def rows(self):
        return self.re.shape[0]

    @property
    def cols(self):
        return self.re.shape[1]


def complex_matmul(a: ComplexMatrix, b: ComplexMatrix) -> ComplexMatrix:
    """Product in the real 2x2 block form [[Ar, -Ai], [Ai, Ar]] @ [Br; Bi]."""
    if a.cols != b.rows:
        raise ShapeError(f"cannot multiply {a.rows}x{a.cols} by {b.rows}x{b.cols}")
    return ComplexMatrix(a.re @ b.re - a.im @ b.im, a.im @ b.re + a.re @ b.im)


def jitter(a):
    """Diagonal loading used before every Cholesky factorization."""
    n = a.shape[-1]
    return JITTER * float(np.real(np.trace(a))) / n


def solve_hermitian(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve (A + delta I) X = B for complex Hermitian PSD A via Cholesky."""
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"A must be square, got {a.shape}")
    if b.shape[0] != a.shape[0]:
        raise ShapeError(f"B has {b.shape[0]} rows, A is {a.shape[0]}x{a.shape[0]}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise NumericError("non-finite entries in Hermitian solve")
    scale = max(1.0, float(np.abs(a).max(initial=0.0)))
    if np.abs(a - a.conj().T).max(initial=0.0) > 1e-9 * scale:
        raise ShapeError("A is not Hermitian within 1e-9")
    loaded = a + jitter(a) * np.eye(a.shape[0])
    try:
        factor = scipy.linalg.cho_factor(loaded, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"Cholesky failed: {exc}") from exc
    return scipy.linalg.cho_solve(factor, b, check_finite=False)


def hermitian_solve(a: ComplexMatrix, b: ComplexMatrix) -> ComplexMatrix:
    return ComplexMatrix.from_complex(solve_hermitian(a.to_complex(), b.to_complex()))
