"""Complex linear algebra on explicit real/imaginary planes, seeded random
numbers and a central-difference gradient oracle.

Every complex quantity in the package is carried as a pair of real arrays
``(re, im)``. Products follow the real-pair expansion

    Re(AB) = Re(A)Re(B) - Im(A)Im(B)
    Im(AB) = Re(A)Im(B) + Im(A)Re(B)

which is the same convention the network layers use.

Random numbers come from NumPy's PCG64 bit generator. Child streams are
derived with :class:`numpy.random.SeedSequence` using the parent seed as
entropy and the stream index as spawn key, so ``child_seed(s, i)`` is a pure
function of ``(s, i)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "NumericError",
    "ComplexMatrix",
    "Rng",
    "child_seed",
    "cmat_mul",
    "cmat_hermitian",
    "frobenius_norm_sq",
    "randn_complex",
    "finite_diff_gradient",
]

RNG_ALGORITHM = "PCG64"


class ShapeError(ValueError):
    """Raised when operand dimensions do not conform."""


class NumericError(ArithmeticError):
    """Raised on non-finite values or degenerate numeric input."""


@dataclass(frozen=True, eq=False)
class ComplexMatrix:
    """Dense complex matrix stored as two real planes of equal shape.

    Rows index samples when a matrix holds a batch of vectors.
    """

    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        re = np.asarray(self.re, dtype=np.float64)
        im = np.asarray(self.im, dtype=np.float64)
        if re.ndim == 1:
            re = re[:, None]
        if im.ndim == 1:
            im = im[:, None]
        if re.ndim != 2 or re.shape != im.shape:
            raise ShapeError(
                f"real and imaginary planes differ: {re.shape} vs {im.shape}"
            )
        object.__setattr__(self, "re", re)
        object.__setattr__(self, "im", im)

    @property
    def rows(self) -> int:
        return self.re.shape[0]

    @property
    def cols(self) -> int:
        return self.re.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.re.shape

    @classmethod
    def from_complex(cls, a) -> "ComplexMatrix":
        a = np.asarray(a, dtype=np.complex128)
        if a.ndim == 0:
            a = a.reshape(1, 1)
        return cls(a.real.copy(), a.imag.copy())

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "ComplexMatrix":
        return cls(np.zeros((rows, cols)), np.zeros((rows, cols)))

    @classmethod
    def identity(cls, n: int) -> "ComplexMatrix":
        return cls(np.eye(n), np.zeros((n, n)))

    def to_complex(self) -> np.ndarray:
        return self.re + 1j * self.im

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.re).all() and np.isfinite(self.im).all())

    def __add__(self, other: "ComplexMatrix") -> "ComplexMatrix":
        if self.shape != other.shape:
            raise ShapeError(f"cannot add {self.shape} and {other.shape}")
        return ComplexMatrix(self.re + other.re, self.im + other.im)

    def __sub__(self, other: "ComplexMatrix") -> "ComplexMatrix":
        if self.shape != other.shape:
            raise ShapeError(f"cannot subtract {self.shape} and {other.shape}")
        return ComplexMatrix(self.re - other.re, self.im - other.im)

    def scale(self, c: float) -> "ComplexMatrix":
        return ComplexMatrix(c * self.re, c * self.im)

    def allclose(self, other: "ComplexMatrix", atol: float = 1e-12) -> bool:
        return self.shape == other.shape and bool(
            np.allclose(self.re, other.re, rtol=0, atol=atol)
            and np.allclose(self.im, other.im, rtol=0, atol=atol)
        )

    def __repr__(self):
        return f"ComplexMatrix(shape={self.shape})"


def _check_finite(m: ComplexMatrix, what: str) -> ComplexMatrix:
    if not m.is_finite():
        raise NumericError(f"{what} produced non-finite entries")
    return m


def cmat_mul(a: ComplexMatrix, b: ComplexMatrix) -> ComplexMatrix:
    """Complex matrix product via the real-pair expansion."""
    if a.cols != b.rows:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    with np.errstate(invalid="ignore", over="ignore"):
        re = a.re @ b.re - a.im @ b.im
        im = a.re @ b.im + a.im @ b.re
    return _check_finite(ComplexMatrix(re, im), "cmat_mul")


def cmat_hermitian(a: ComplexMatrix) -> ComplexMatrix:
    return ComplexMatrix(a.re.T.copy(), -a.im.T)


def frobenius_norm_sq(a: ComplexMatrix) -> float:
    return float(np.sum(a.re * a.re) + np.sum(a.im * a.im))


def child_seed(parent_seed: int, index: int) -> int:
    """Derive a 64-bit child seed for stream ``index`` of ``parent_seed``."""
    ss = np.random.SeedSequence(entropy=int(parent_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


class Rng:
    """Seeded PCG64 stream. Single owner; use :meth:`child` to fan out."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, index: int) -> "Rng":
        return Rng(child_seed(self.seed, index))

    def normal(self, size=None, scale: float = 1.0) -> np.ndarray:
        return self.generator.normal(0.0, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def laplace(self, scale: float, size=None) -> np.ndarray:
        return self.generator.laplace(0.0, scale, size)

    def integers(self, low, high=None, size=None) -> np.ndarray:
        return self.generator.integers(low, high, size)

    def __repr__(self):
        return f"Rng(seed={self.seed}, algorithm={RNG_ALGORITHM})"


def randn_complex(rng: Rng, rows: int, cols: int, variance: float = 1.0) -> ComplexMatrix:
    """Draw i.i.d. CN(0, variance) entries (each plane has variance/2)."""
    if not variance > 0:
        raise NumericError(f"variance must be positive, got {variance}")
    std = np.sqrt(variance / 2.0)
    re = rng.normal((rows, cols), std)
    im = rng.normal((rows, cols), std)
    return ComplexMatrix(re, im)


def finite_diff_gradient(
    f: Callable[[np.ndarray], float],
    params: Sequence[float],
    step: float = 1e-6,
) -> np.ndarray:
    """Central-difference gradient of a scalar function.

    Parameters
    ----------
    f : callable
        Maps a 1-D float array to a scalar.
    params : array_like
        Evaluation point.
    step : float
        Perturbation ``h``; each coordinate uses ``(f(p+h e_i) - f(p-h e_i)) / 2h``.

    Returns
    -------
    np.ndarray
        Gradient estimate with the same length as ``params``.
    """
    if not step > 0:
        raise NumericError(f"step must be positive, got {step}")
    p = np.array(params, dtype=np.float64).ravel()
    grad = np.empty_like(p)
    for i in range(p.size):
        orig = p[i]
        p[i] = orig + step
        fp = float(f(p))
        p[i] = orig - step
        fm = float(f(p))
        p[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value at coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * step)
    return grad
