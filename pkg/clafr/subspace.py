"""Class-known subspace built from classifier weights alone.

The subspace is spanned by the top-m left singular vectors of the D x C
weight matrix W. A feature z is scored by the norm of its projection onto
that span; no training features are involved anywhere in this module.
"""
from __future__ import annotations

import logging
from itertools import accumulate

import numpy as np
import numpy.typing as npt

from clafr._enums import Method
from clafr.errors import ConfigError
from clafr.errors import DegenerateWeightsError
from clafr.errors import NumericalError
from clafr.errors import ShapeError
from clafr.helpers import get_hash
from clafr.metrics import Fingerprint
from clafr.metrics import ScoredBatch
from clafr.tensor import as_matrix
from clafr.tensor import as_vector
from clafr.tensor import l2_norm
from clafr.tensor import Matrix
from clafr.tensor import normalize_rows
from clafr.tensor import orthonormality_defect
from clafr.tensor import project_onto
from clafr.tensor import row_norms
from clafr.tensor import svd
from clafr.tensor import SvdFactors
from clafr.tensor import Vector

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.9
# loose sanity bound for bases loaded from disk or assembled by hand
BASIS_TOL = 1e-8
# elements per projection block; bounds scratch memory at ~32 MiB
_BLOCK_ELEMENTS = 1 << 22


class SubspaceConfig:
    alpha: float
    normalize_features: bool
    m_override: int | None

    def __init__(
        self, alpha: float = DEFAULT_ALPHA, normalize_features: bool = True,
        m_override: int | None = None,
    ) -> None:
        if not 0.0 < alpha <= 1.0:
            raise ConfigError(f'alpha must lie in (0, 1], got {alpha}')
        if m_override is not None and m_override < 1:
            raise ConfigError(f'm must be at least 1, got {m_override}')
        self.alpha = float(alpha)
        self.normalize_features = normalize_features
        self.m_override = m_override

    def __repr__(self) -> str:
        return (
            f'SubspaceConfig(alpha={self.alpha}, '
            f'normalize_features={self.normalize_features}, '
            f'm_override={self.m_override})'
        )


class Subspace:
    """The frozen detector state: U_M plus where it came from."""
    u_m: Matrix
    m: int
    alpha_used: float
    sigma: Vector
    weight_fingerprint: str

    def __init__(
        self, u_m: npt.ArrayLike, alpha_used: float, sigma: npt.ArrayLike,
        weight_fingerprint: str,
    ) -> None:
        self.u_m = as_matrix(u_m, 'u_m')
        self.sigma = as_vector(sigma, 'sigma')
        self.m = self.u_m.shape[1]
        self.alpha_used = float(alpha_used)
        self.weight_fingerprint = weight_fingerprint
        self.validate()

    @property
    def dim(self) -> int:
        return self.u_m.shape[0]

    def validate(self) -> None:
        if not 1 <= self.m <= self.sigma.size:
            raise ShapeError(
                f'subspace rank m={self.m} outside [1, {self.sigma.size}]',
            )
        if np.any(self.sigma < 0) or np.any(np.diff(self.sigma) > 0):
            raise ConfigError('sigma must be non-negative and descending')
        defect = orthonormality_defect(self.u_m)
        if defect > BASIS_TOL:
            raise NumericalError(f'u_m columns are not orthonormal (defect {defect:.3g})')

    def fingerprint(self, normalize: bool, method: Method = Method.CLAFR) -> Fingerprint:
        return Fingerprint(
            method=method.label, alpha=self.alpha_used, m=self.m,
            normalize=normalize, weight_hash=self.weight_fingerprint,
        )

    def __str__(self) -> str:
        retv = f"\n{'CLASS-KNOWN SUBSPACE':~^{72}}\n"
        retv += f'Dim:  {self.dim} -> {self.m}\n'
        retv += f'Alpha:  {self.alpha_used:g}\n'
        retv += f'Weights:  {self.weight_fingerprint}\n'
        retv += f'Sigma (top {min(5, self.sigma.size)}):  '
        retv += ', '.join(f'{s:.4g}' for s in self.sigma[:5]) + '\n'
        return retv


def weight_fingerprint(w: npt.ArrayLike) -> str:
    return get_hash(w)


def select_m(sigma: npt.ArrayLike, alpha: float) -> int:
    """Smallest m whose leading singular-value sum strictly exceeds alpha
    times the total.

    With alpha = 1 no prefix can exceed the total, so every nonzero
    singular value is kept.
    """
    s = as_vector(sigma, 'sigma')
    if not 0.0 < alpha <= 1.0:
        raise ConfigError(f'alpha must lie in (0, 1], got {alpha}')
    if s.size == 0 or np.any(s < 0):
        raise ConfigError('sigma must be a non-empty, non-negative vector')
    partial = list(accumulate(float(x) for x in s))
    total = partial[-1]
    if total == 0.0:
        raise DegenerateWeightsError('all singular values are zero')
    cut = alpha * total
    for i, acc in enumerate(partial):
        if acc > cut:
            return i + 1
    return int(np.count_nonzero(s))


def subspace_from_factors(
    factors: SvdFactors, cfg: SubspaceConfig, weight_hash: str,
) -> Subspace:
    k = factors.sigma.size
    if cfg.m_override is not None:
        if cfg.m_override > k:
            raise ConfigError(f'm={cfg.m_override} exceeds min(D, C)={k}')
        if not np.any(factors.sigma > 0):
            raise DegenerateWeightsError('all singular values are zero')
        m = cfg.m_override
    else:
        m = select_m(factors.sigma, cfg.alpha)
    logger.info('class-known subspace: D=%d, m=%d of %d', factors.u.shape[0], m, k)
    return Subspace(
        u_m=factors.u[:, :m], alpha_used=cfg.alpha, sigma=factors.sigma,
        weight_fingerprint=weight_hash,
    )


def build_subspace(w: npt.ArrayLike, cfg: SubspaceConfig) -> Subspace:
    weights = as_matrix(w, 'weights')
    return subspace_from_factors(
        svd(weights), cfg, weight_fingerprint(weights),
    )


def _check_dim(cols: int, s: Subspace) -> None:
    if cols != s.dim:
        raise ShapeError(
            'feature dimension does not match subspace', expected=(s.dim,),
            actual=(cols,),
        )


def _prepare(z: Matrix, normalize: bool) -> Matrix:
    return normalize_rows(z) if normalize else z


def projection_norms(z: Matrix, u_m: Matrix) -> Vector:
    """||z_i U_M||_2 for every row of z.

    Each row is reduced on its own, in a fixed order, so a row's result is
    bitwise the same whether it is scored alone or inside a batch.
    """
    n, d = z.shape
    m = u_m.shape[1]
    retv = np.empty(n, dtype=np.float64)
    block = max(1, _BLOCK_ELEMENTS // max(1, d * m))
    for start in range(0, n, block):
        rows = z[start:start + block]
        proj = np.sum(rows[:, :, None] * u_m[None, :, :], axis=1)
        retv[start:start + block] = row_norms(proj)
    return retv


def clafr_score(z: npt.ArrayLike, s: Subspace, cfg: SubspaceConfig) -> float:
    """S(x) = ||z U_M||_2, with z unit-normalized first when configured."""
    v = as_vector(z, 'feature')
    _check_dim(v.size, s)
    rows = _prepare(v[None, :], cfg.normalize_features)
    return float(projection_norms(rows, s.u_m)[0])


def reconstruction_error(
    z: npt.ArrayLike, s: Subspace, cfg: SubspaceConfig,
) -> float:
    """e(x) = -||z U_M U_M^T - z||_2, computed from the reconstruction."""
    v = as_vector(z, 'feature')
    _check_dim(v.size, s)
    zz = _prepare(v[None, :], cfg.normalize_features)[0]
    reconstructed = project_onto(zz[None, :], s.u_m)[0]
    return -l2_norm(reconstructed - zz)


def score_batch(z: npt.ArrayLike, s: Subspace, cfg: SubspaceConfig) -> ScoredBatch:
    features = as_matrix(z, 'features')
    _check_dim(features.shape[1], s)
    scores = projection_norms(
        _prepare(features, cfg.normalize_features), s.u_m,
    )
    return ScoredBatch(
        scores, Method.CLAFR, s.fingerprint(cfg.normalize_features),
    )


def reconstruction_batch(
    z: npt.ArrayLike, s: Subspace, cfg: SubspaceConfig,
) -> ScoredBatch:
    features = as_matrix(z, 'features')
    _check_dim(features.shape[1], s)
    features = _prepare(features, cfg.normalize_features)
    residual = project_onto(features, s.u_m) - features
    return ScoredBatch(
        -row_norms(residual), Method.RECONSTRUCTION,
        s.fingerprint(cfg.normalize_features, Method.RECONSTRUCTION),
    )
