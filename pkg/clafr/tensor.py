"""Dense real-64 linear algebra used by every other module.

Matrices and vectors are plain numpy arrays that have been validated by
`as_matrix` / `as_vector`: real-64, finite, and frozen (read-only). All
operations are pure and return fresh frozen arrays.
"""
from __future__ import annotations

import logging
from typing import NamedTuple

import numpy as np
import numpy.typing as npt

from clafr.errors import NonFiniteError
from clafr.errors import NumericalError
from clafr.errors import ShapeError

logger = logging.getLogger(__name__)

Matrix = npt.NDArray[np.float64]
Vector = npt.NDArray[np.float64]

JACOBI_MAX_SWEEPS = 100
JACOBI_TOL = 1e-12
_EPS = float(np.finfo(np.float64).eps)


class SvdFactors(NamedTuple):
    """W = u @ diag(sigma) @ v.T, sigma descending and non-negative."""
    u: Matrix
    sigma: Vector
    v: Matrix
    sweeps: int = 0


def _freeze(arr: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    arr.setflags(write=False)
    return arr


def _check_finite(arr: npt.NDArray[np.float64], what: str) -> None:
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr))[0]
        raise NonFiniteError(
            f'{what} has a non-finite entry at index {tuple(int(i) for i in bad)}',
        )


def as_matrix(data: npt.ArrayLike, what: str = 'matrix') -> Matrix:
    """Validate, widen to real-64, copy and freeze a rank-2 array."""
    arr = np.array(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f'{what} must be 2-D, got {arr.ndim}-D')
    _check_finite(arr, what)
    return _freeze(arr)


def as_vector(data: npt.ArrayLike, what: str = 'vector') -> Vector:
    """Validate, widen to real-64, copy and freeze a rank-1 array."""
    arr = np.array(data, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f'{what} must be 1-D, got {arr.ndim}-D')
    _check_finite(arr, what)
    return _freeze(arr)


def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError('matmul expects two matrices')
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            'inner dimensions differ', expected=(a.shape[1],),
            actual=(b.shape[0],),
        )
    retv = np.matmul(a, b)
    if not np.all(np.isfinite(retv)):
        raise NumericalError('matrix product overflowed')
    return _freeze(retv)


def _pow2_scale(x: npt.NDArray[np.float64], axis: int) -> npt.NDArray[np.float64]:
    """Power of two at most the peak magnitude along axis, 1 where all zero.

    Dividing by it is exact and keeps squares clear of overflow and
    underflow.
    """
    peak = np.max(np.abs(x), axis=axis, keepdims=True, initial=0.0)
    _, exp = np.frexp(peak)
    return np.where(peak > 0, np.ldexp(1.0, exp - 1), 1.0)


def _scaled_norms(x: npt.NDArray[np.float64], axis: int) -> npt.NDArray[np.float64]:
    scale = _pow2_scale(x, axis)
    y = x / scale
    return np.sqrt(np.sum(y * y, axis=axis)) * np.squeeze(scale, axis=axis)


def l2_norm(v: Vector) -> float:
    return float(_scaled_norms(np.reshape(v, (1, -1)), axis=1)[0])


def frobenius_norm(m: Matrix) -> float:
    return float(_scaled_norms(np.reshape(m, (1, -1)), axis=1)[0])


def row_norms(z: Matrix) -> Vector:
    # row-wise reduction; a row's norm does not depend on its neighbours
    return _scaled_norms(z, axis=1)


def normalize_rows(z: Matrix) -> Matrix:
    """Scale each nonzero row to unit L2 norm; zero rows pass through."""
    if z.ndim != 2:
        raise ShapeError('normalize_rows expects a matrix')
    y = z / _pow2_scale(z, axis=1)
    norms = np.sqrt(np.sum(y * y, axis=1))[:, None]
    retv = np.divide(y, norms, out=np.array(y, dtype=np.float64), where=norms > 0)
    return _freeze(retv)


def orthonormality_defect(m: Matrix) -> float:
    """||M^T M - I||_F."""
    gram = m.T @ m
    return float(np.linalg.norm(gram - np.eye(gram.shape[0])))


def project_onto(z: Matrix, u_m: Matrix) -> Matrix:
    """Orthogonal projection of each row of z onto span(u_m): z U U^T."""
    if z.shape[1] != u_m.shape[0]:
        raise ShapeError(
            'row dimension does not match basis', expected=(u_m.shape[0],),
            actual=(z.shape[1],),
        )
    return _freeze((z @ u_m) @ u_m.T)


def round_robin_pairs(n: int) -> list[tuple[npt.NDArray[np.intp], npt.NDArray[np.intp]]]:
    """Return the rounds of a round-robin tournament over n columns.

    Every unordered pair (p, q) with p < q appears in exactly one round and
    the pairs inside a round are disjoint, so they can rotate together.
    """
    players = list(range(n)) + ([-1] if n % 2 else [])
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        p, q = [], []
        for i in range(size // 2):
            a, b = players[i], players[size - 1 - i]
            if a >= 0 and b >= 0:
                p.append(min(a, b))
                q.append(max(a, b))
        if p:
            rounds.append((np.array(p, dtype=np.intp), np.array(q, dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _complete_basis(u: Matrix, filled: npt.NDArray[np.bool_]) -> Matrix:
    """Fill the unset columns of u with an orthonormal completion.

    Candidates are the standard basis vectors; each time the one with the
    largest residual against the current columns is taken.
    """
    u = np.array(u)
    filled = np.array(filled)
    d = u.shape[0]
    for j in np.flatnonzero(~filled):
        basis = u[:, filled]
        residual = np.eye(d) - basis @ basis.T
        i = int(np.argmax(np.sum(residual * residual, axis=0)))
        x = residual[:, i]
        x = x - basis @ (basis.T @ x)
        u[:, j] = x / np.linalg.norm(x)
        filled[j] = True
    return u


def _jacobi_svd(a: Matrix) -> SvdFactors:
    """One-sided (Hestenes) Jacobi SVD of a tall matrix, rows >= cols."""
    d, c = a.shape
    # rotations run on a power-of-two rescaled copy; sigma is scaled back
    scale = float(_pow2_scale(np.reshape(a, (1, -1)), axis=1)[0, 0])
    work = np.array(a, dtype=np.float64) / scale
    v = np.eye(c)
    fro = frobenius_norm(work)
    floor = (_EPS * fro) ** 2
    rounds = round_robin_pairs(c)

    sweeps = 0
    converged = False
    while sweeps < JACOBI_MAX_SWEEPS:
        sweeps += 1
        rotated = False
        for p, q in rounds:
            ap, aq = work[:, p], work[:, q]
            alpha = np.sum(ap * ap, axis=0)
            beta = np.sum(aq * aq, axis=0)
            gamma = np.sum(ap * aq, axis=0)
            active = (
                (np.abs(gamma) > JACOBI_TOL * np.sqrt(alpha * beta))
                & (np.abs(gamma) > floor)
            )
            if not active.any():
                continue
            rotated = True
            p, q = p[active], q[active]
            ap, aq = ap[:, active], aq[:, active]
            alpha, beta, gamma = alpha[active], beta[active], gamma[active]

            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.hypot(1.0, zeta))
            cs = 1.0 / np.sqrt(1.0 + t * t)
            sn = cs * t

            work[:, p] = cs * ap - sn * aq
            work[:, q] = sn * ap + cs * aq
            vp, vq = v[:, p], v[:, q]
            v[:, p] = cs * vp - sn * vq
            v[:, q] = sn * vp + cs * vq
        if not rotated:
            converged = True
            break

    if not converged:
        raise NumericalError(
            'one-sided Jacobi SVD did not converge', iterations=sweeps,
        )
    logger.debug('jacobi svd of %dx%d converged in %d sweeps', d, c, sweeps)

    norms = _scaled_norms(work, axis=0)
    order = np.argsort(-norms, kind='stable')
    sigma = norms[order]
    work = work[:, order]
    v = v[:, order]

    cutoff = sigma[0] * max(d, c) * _EPS if sigma.size else 0.0
    keep = sigma > cutoff
    u = np.zeros((d, c))
    u[:, keep] = work[:, keep] / sigma[keep]
    sigma = np.where(keep, sigma, 0.0)
    if not keep.all():
        u = _complete_basis(u, keep)
    sigma = sigma * scale
    if not np.all(np.isfinite(sigma)):
        raise NumericalError('singular values overflow float64')

    return SvdFactors(
        u=_freeze(u), sigma=_freeze(sigma), v=_freeze(v), sweeps=sweeps,
    )


def svd(w: Matrix) -> SvdFactors:
    """Thin SVD via one-sided Jacobi rotations.

    For a D x C input, u is D x k, sigma has length k = min(D, C) and v is
    C x k. Pairs are visited in a fixed round-robin order, so the result is
    deterministic for a fixed input. Wide inputs are decomposed through
    their transpose.
    """
    a = as_matrix(w, 'svd input')
    rows, cols = a.shape
    if rows == 0 or cols == 0:
        raise ShapeError('svd input must be non-empty', actual=a.shape)
    if rows < cols:
        f = _jacobi_svd(a.T)
        return SvdFactors(u=f.v, sigma=f.sigma, v=f.u, sweeps=f.sweeps)
    return _jacobi_svd(a)


def reconstruct(factors: SvdFactors) -> Matrix:
    return _freeze(factors.u @ np.diag(factors.sigma) @ factors.v.T)
