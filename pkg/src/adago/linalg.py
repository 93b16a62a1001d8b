"""Dense matrix kernels: norms, reduced SVD and orthogonalization.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 with two
dimensions. Every public function validates its input through
:func:`as_matrix`, so NaN/Inf never reach the optimizers.

The SVD is a one-sided (Hestenes) Jacobi method compiled with numba. It works
on the taller orientation of the input and is accurate to working precision
for the small dense matrices found in the experiments (dims up to a few
hundred).
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import DegenerateInputError, InvalidInputError, NumericFailureError

RANK_RTOL = 1e-12
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 60
POWER_RTOL = 1e-10
POWER_MAX_ITERS = 10_000


@dataclass(frozen=True)
class SvdResult:
    """Reduced SVD ``m = u @ diag(sigma) @ v.T`` keeping ``k`` singular values."""

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    @property
    def k(self) -> int:
        return int(self.sigma.shape[0])

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.v.T


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Return ``m`` as a finite 2-D float64 array or raise InvalidInputError."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise InvalidInputError(f"{name} must be a non-empty 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return a


def frobenius_norm(m) -> float:
    a = as_matrix(m)
    scale = float(np.max(np.abs(a)))
    if scale == 0.0:
        return 0.0
    b = a / scale
    return scale * float(np.sqrt(np.sum(b * b)))


def spectral_norm(m) -> float:
    """Largest singular value by power iteration on ``m.T @ m``.

    Stops once the eigen-residual of the Gram matrix falls below
    ``POWER_RTOL`` relative to the current Rayleigh quotient, or after
    ``POWER_MAX_ITERS`` iterations.
    """
    a = as_matrix(m)
    scale = float(np.max(np.abs(a)))
    if scale == 0.0:
        return 0.0
    a = a / scale
    gram = a.T @ a if a.shape[0] >= a.shape[1] else a @ a.T
    if not np.any(gram):
        return 0.0
    # fixed start vector: results must not depend on global RNG state
    x = np.random.default_rng(0).standard_normal(gram.shape[0])
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(POWER_MAX_ITERS):
        y = gram @ x
        lam = float(x @ y)
        if np.linalg.norm(y - lam * x) <= POWER_RTOL * lam:
            break
        ny = np.linalg.norm(y)
        if ny == 0.0:
            # start vector was in the null space; restart deterministically
            x = np.ones_like(x) / np.sqrt(x.size)
            continue
        x = y / ny
    return scale * float(np.sqrt(max(lam, 0.0)))


@numba.njit(cache=True)
def _jacobi_sweeps(a, v, tol, max_sweeps, negligible):
    # a: (m, n) with m >= n, rotated in place so its columns become orthogonal
    m, n = a.shape
    for sweep in range(max_sweeps):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for r in range(m):
                    alpha += a[r, i] * a[r, i]
                    beta += a[r, j] * a[r, j]
                    gamma += a[r, i] * a[r, j]
                if alpha <= negligible or beta <= negligible:
                    continue
                if abs(gamma) <= tol * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = (1.0 if zeta >= 0.0 else -1.0) / (abs(zeta) + np.hypot(1.0, zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                for r in range(m):
                    ai = a[r, i]
                    aj = a[r, j]
                    a[r, i] = c * ai - s * aj
                    a[r, j] = s * ai + c * aj
                for r in range(n):
                    vi = v[r, i]
                    vj = v[r, j]
                    v[r, i] = c * vi - s * vj
                    v[r, j] = s * vi + c * vj
        if not rotated:
            return sweep + 1
    return -1


def svd_reduced(m) -> SvdResult:
    """Reduced SVD by one-sided Jacobi, dropping ``sigma <= 1e-12 * sigma_max``.

    Raises DegenerateInputError for the zero matrix and NumericFailureError
    if the sweeps do not converge within ``JACOBI_MAX_SWEEPS``.
    """
    a = as_matrix(m)
    scale = float(np.max(np.abs(a)))
    if scale == 0.0:
        raise DegenerateInputError("SVD of the zero matrix has no singular triplets")
    transposed = a.shape[1] > a.shape[0]
    # unit max-entry scaling keeps the column dot products clear of under/overflow
    work = np.array((a.T if transposed else a) / scale, dtype=np.float64, order="F")
    fro2 = float(np.sum(work * work))
    n = work.shape[1]
    v = np.eye(n, order="F")
    sweeps = _jacobi_sweeps(work, v, JACOBI_TOL, JACOBI_MAX_SWEEPS, 1e-30 * fro2)
    if sweeps < 0:
        raise NumericFailureError(f"Jacobi SVD did not converge in {JACOBI_MAX_SWEEPS} sweeps")

    sigma = np.sqrt(np.sum(work * work, axis=0))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    keep = sigma > RANK_RTOL * sigma[0]
    idx = order[keep]
    sigma = sigma[keep]
    u = work[:, idx] / sigma
    v = v[:, idx]
    sigma = sigma * scale
    if transposed:
        u, v = v, u
    return SvdResult(u=np.ascontiguousarray(u), sigma=sigma, v=np.ascontiguousarray(v))


def nuclear_norm(m) -> float:
    a = as_matrix(m)
    if not np.any(a):
        return 0.0
    return float(np.sum(svd_reduced(a).sigma))


def orthogonalize_exact(m) -> np.ndarray:
    """Nearest semi-orthogonal matrix ``U @ V.T`` from the reduced SVD."""
    a = as_matrix(m)
    if not np.any(a):
        raise DegenerateInputError("orthogonalization of the zero matrix is undefined")
    res = svd_reduced(a)
    return res.u @ res.v.T


def orthogonalize_newton_schulz(m, iters: int) -> np.ndarray:
    """Cubic Newton-Schulz approximation of :func:`orthogonalize_exact`.

    The input is scaled by its Frobenius norm so every singular value lies in
    (0, 1], inside the iteration's convergence region (0, sqrt(3)).
    """
    a = as_matrix(m)
    if iters < 1:
        raise InvalidInputError("iters must be a positive integer")
    fro = frobenius_norm(a)
    if fro == 0.0:
        raise DegenerateInputError("orthogonalization of the zero matrix is undefined")
    x = a / fro
    tall = x.shape[0] >= x.shape[1]
    for _ in range(iters):
        if tall:
            x = 1.5 * x - 0.5 * (x @ (x.T @ x))
        else:
            x = 1.5 * x - 0.5 * ((x @ x.T) @ x)
    return x


def orthogonalize(m, ns_iters: int = 0) -> np.ndarray:
    """Dispatch on ``ns_iters``: 0 means exact SVD, otherwise Newton-Schulz."""
    if ns_iters == 0:
        return orthogonalize_exact(m)
    return orthogonalize_newton_schulz(m, ns_iters)
