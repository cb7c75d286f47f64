"""Fourier machinery on the time axis and on graphs.

DFT convention: unnormalised forward ``X_k = sum_t x_t exp(-2 pi i k t / L)``
and ``1/L`` on the inverse.  The dense transforms are recorded on the tape as
matrix products; :func:`fft_radix2` is an untaped fast path.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as T
from .errors import DimensionError, DomainError, NumericError
from .tensor import Tensor

GAP_CLAMP = 1e-6
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


@dataclass(frozen=True)
class ComplexMatrix:
    re: Tensor
    im: Tensor

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise DimensionError(f"real part {self.re.shape} vs imaginary {self.im.shape}")

    @property
    def shape(self):
        return self.re.shape

    def to_numpy(self) -> np.ndarray:
        return self.re.data + 1j * self.im.data


@dataclass(frozen=True)
class SpectralBasis:
    """Eigenvectors (columns of ``U``) and ascending eigenvalues of a Laplacian."""

    U: Tensor
    lam: Tensor
    source_laplacian: Tensor | None = None

    @property
    def n(self) -> int:
        return self.U.shape[-1]

    @classmethod
    def identity(cls, n: int, batch: tuple[int, ...] = ()) -> "SpectralBasis":
        eye = np.broadcast_to(np.eye(n), batch + (n, n))
        return cls(Tensor(eye), Tensor(np.zeros(batch + (n,))), Tensor(np.zeros(batch + (n, n))))


# --------------------------------------------------------------------------
# time-axis transforms


@lru_cache(maxsize=64)
def _dft_tables(L: int) -> tuple[Tensor, Tensor]:
    k = np.arange(L)
    # reduce k*t mod L before scaling so large products keep full precision
    ang = 2.0 * np.pi * (np.outer(k, k) % L) / L
    return Tensor(np.cos(ang)), Tensor(np.sin(ang))


def dft_dense(x: Tensor) -> ComplexMatrix:
    """DFT along the last axis as two taped matrix products."""
    L = x.shape[-1]
    if L < 1:
        raise DimensionError("dft needs a non-empty last axis")
    cos, sin = _dft_tables(L)
    xs = T.reshape(x, (1, L)) if x.ndim == 1 else x
    re, im = T.matmul(xs, cos), T.scale(T.matmul(xs, sin), -1.0)
    if x.ndim == 1:
        re, im = T.reshape(re, (L,)), T.reshape(im, (L,))
    return ComplexMatrix(re, im)


def idft_dense(X: ComplexMatrix) -> Tensor:
    """Real part of the inverse DFT along the last axis."""
    L = X.re.shape[-1]
    cos, sin = _dft_tables(L)
    re, im = X.re, X.im
    if re.ndim == 1:
        re, im = T.reshape(re, (1, L)), T.reshape(im, (1, L))
    out = T.scale(T.sub(T.matmul(re, cos), T.matmul(im, sin)), 1.0 / L)
    return T.reshape(out, (L,)) if X.re.ndim == 1 else out


def fft_radix2(x: Tensor | np.ndarray) -> ComplexMatrix:
    """Iterative Cooley-Tukey FFT over the last axis (length a power of two)."""
    a = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    L = a.shape[-1]
    if L < 1 or L & (L - 1):
        raise DimensionError(f"fft_radix2 needs a power-of-two length, got {L}")
    bits = L.bit_length() - 1
    rev = np.zeros(L, dtype=np.int64)
    for i in range(L):
        rev[i] = int(format(i, f"0{bits}b")[::-1], 2) if bits else 0
    y = a[..., rev].astype(np.complex128)
    size = 2
    while size <= L:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        y = y.reshape(a.shape[:-1] + (L // size, size))
        even = y[..., :half].copy()
        odd = y[..., half:] * tw
        y[..., :half] = even + odd
        y[..., half:] = even - odd
        y = y.reshape(a.shape[:-1] + (L,))
        size *= 2
    return ComplexMatrix(Tensor(y.real), Tensor(y.imag))


# --------------------------------------------------------------------------
# graph operators


def symmetrize(W: Tensor) -> Tensor:
    if W.ndim < 2 or W.shape[-1] != W.shape[-2]:
        raise DimensionError(f"symmetrize needs square matrices, got {W.shape}")
    return T.scale(T.add(W, T.transpose(W)), 0.5)


def normalized_laplacian(W: Tensor) -> Tensor:
    """``I - D^{-1/2} W D^{-1/2}``; zero-degree nodes get ``D^{-1/2} = 0``."""
    if W.ndim < 2 or W.shape[-1] != W.shape[-2]:
        raise DimensionError(f"laplacian needs square matrices, got {W.shape}")
    A = W.data
    if np.any(A < 0):
        raise DomainError("adjacency has negative entries")
    n = A.shape[-1]
    deg = A.sum(axis=-1)
    pos = deg > 0
    s = np.where(pos, 1.0 / np.sqrt(np.where(pos, deg, 1.0)), 0.0)
    out = np.eye(n) - s[..., :, None] * A * s[..., None, :]

    def vjp(g):
        ga = -g
        gw = ga * s[..., :, None] * s[..., None, :]
        gas = ga * A
        gs = (gas * s[..., None, :]).sum(-1) + (gas * s[..., :, None]).sum(-2)
        gd = gs * (-0.5) * s ** 3
        return (gw + gd[..., :, None],)

    return T.custom("laplacian", out, (W,), vjp)


# --------------------------------------------------------------------------
# symmetric eigensolver


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Rounds of disjoint index pairs covering every pair exactly once."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for i in range(m // 2):
            p, q = players[i], players[m - 1 - i]
            if p < n and q < n:
                ps.append(min(p, q))
                qs.append(max(p, q))
        if ps:
            rounds.append((np.array(ps), np.array(qs)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _offdiag_max(A: np.ndarray) -> float:
    n = A.shape[-1]
    if n < 2:
        return 0.0
    off = A * (1.0 - np.eye(n))
    return float(np.abs(off).max())


def _jacobi_arrays(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = A.shape[-1]
    A = 0.5 * (A + np.swapaxes(A, -1, -2))
    V = np.broadcast_to(np.eye(n), A.shape).copy()
    rounds = _round_robin(n)
    tol = JACOBI_TOL * max(1.0, float(np.abs(A).max()) if A.size else 1.0)
    sweeps = 0
    while _offdiag_max(A) >= tol:
        if sweeps == JACOBI_MAX_SWEEPS:
            raise NumericError(
                f"jacobi_eigh did not converge in {JACOBI_MAX_SWEEPS} sweeps "
                f"(residual {_offdiag_max(A):.3e})")
        for P, Q in rounds:
            app = A[..., P, P]
            aqq = A[..., Q, Q]
            apq = A[..., P, Q]
            active = apq != 0.0
            safe = np.where(active, apq, 1.0)
            theta = (aqq - app) / (2.0 * safe)
            t = np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0))
            t = np.where(theta == 0.0, 1.0, t)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            c = np.where(active, c, 1.0)
            s = np.where(active, s, 0.0)
            J = np.broadcast_to(np.eye(n), A.shape).copy()
            J[..., P, P] = c
            J[..., Q, Q] = c
            J[..., P, Q] = s
            J[..., Q, P] = -s
            A = np.swapaxes(J, -1, -2) @ A @ J
            V = V @ J
        A = 0.5 * (A + np.swapaxes(A, -1, -2))
        sweeps += 1
    lam = np.diagonal(A, axis1=-2, axis2=-1).copy()
    order = np.argsort(lam, axis=-1, kind="stable")
    lam = np.take_along_axis(lam, order, axis=-1)
    V = np.take_along_axis(V, order[..., None, :], axis=-1)
    # largest-magnitude entry of each eigenvector is made non-negative
    pivot = np.argmax(np.abs(V), axis=-2)
    sign = np.where(np.take_along_axis(V, pivot[..., None, :], axis=-2) < 0, -1.0, 1.0)
    return V * sign, lam


def _eigh_adjoint(U: np.ndarray, lam: np.ndarray, dU, dlam) -> np.ndarray:
    n = U.shape[-1]
    gap = lam[..., None, :] - lam[..., :, None]  # lam_j - lam_i
    gap = np.where(np.abs(gap) < GAP_CLAMP, np.where(gap < 0, -GAP_CLAMP, GAP_CLAMP), gap)
    F = np.where(np.eye(n, dtype=bool), 0.0, 1.0 / gap)
    inner = np.zeros(U.shape)
    if dU is not None:
        inner = F * (np.swapaxes(U, -1, -2) @ dU)
    if dlam is not None:
        inner = inner + dlam[..., :, None] * np.eye(n)
    dL = U @ inner @ np.swapaxes(U, -1, -2)
    return 0.5 * (dL + np.swapaxes(dL, -1, -2))


def jacobi_eigh(L: Tensor, sym_tol: float = 1e-10) -> SpectralBasis:
    """Cyclic Jacobi eigendecomposition, differentiable through the tape."""
    A = L.data
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise DimensionError(f"jacobi_eigh needs square matrices, got {A.shape}")
    asym = float(np.abs(A - np.swapaxes(A, -1, -2)).max()) if A.size else 0.0
    if asym > sym_tol:
        raise DomainError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    U, lam = _jacobi_arrays(A)
    U.flags.writeable = False
    lam.flags.writeable = False
    Ut = T.custom("eigh.U", U, (L,), lambda g: (_eigh_adjoint(U, lam, g, None),))
    lt = T.custom("eigh.lambda", lam, (L,), lambda g: (_eigh_adjoint(U, lam, None, g),))
    return SpectralBasis(Ut, lt, L)


def eigh_backward(basis: SpectralBasis, dU, dLambda) -> np.ndarray:
    """Adjoint of the eigendecomposition: cotangents of (U, lambda) -> dL."""
    dU = None if dU is None else np.asarray(getattr(dU, "data", dU), dtype=np.float64)
    dl = None if dLambda is None else np.asarray(getattr(dLambda, "data", dLambda), dtype=np.float64)
    return _eigh_adjoint(basis.U.data, basis.lam.data, dU, dl)


def min_eigengap(basis: SpectralBasis) -> float:
    lam = basis.lam.data
    if lam.shape[-1] < 2:
        return np.inf
    return float(np.diff(lam, axis=-1).min())


# --------------------------------------------------------------------------
# graph Fourier transform


def _lift_basis(U: Tensor, X: Tensor) -> Tensor:
    # give U singleton axes so it broadcasts against extra (channel) axes of X
    extra = X.ndim - U.ndim
    if extra > 0:
        U = T.reshape(U, U.shape[:-2] + (1,) * extra + U.shape[-2:])
    return U


def gft(basis: SpectralBasis, X: Tensor) -> Tensor:
    """``U^T X`` over the node axis (second to last)."""
    if X.ndim < 2 or X.shape[-2] != basis.n:
        raise DimensionError(f"gft: basis has {basis.n} nodes, signal shape {X.shape}")
    return T.matmul(T.transpose(_lift_basis(basis.U, X)), X)


def igft(basis: SpectralBasis, Xh: Tensor) -> Tensor:
    if Xh.ndim < 2 or Xh.shape[-2] != basis.n:
        raise DimensionError(f"igft: basis has {basis.n} nodes, signal shape {Xh.shape}")
    return T.matmul(_lift_basis(basis.U, Xh), Xh)
