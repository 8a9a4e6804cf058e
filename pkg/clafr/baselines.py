"""Comparison scorers: logit-based (MSP, Energy, MaxLogit) and KNN.

Every score is oriented so that higher means more in-distribution.
"""
from __future__ import annotations

import numpy as np
import numpy.typing as npt
from scipy.special import logsumexp
from scipy.special import softmax

from clafr.errors import ConfigError
from clafr.errors import ShapeError
from clafr.helpers import get_hash
from clafr.tensor import as_matrix
from clafr.tensor import as_vector
from clafr.tensor import Matrix
from clafr.tensor import matmul
from clafr.tensor import normalize_rows
from clafr.tensor import row_norms
from clafr.tensor import Vector

DEFAULT_K = 10


class FeatureBank:
    """Stored training features, unit-normalized at ingestion."""
    features: Matrix
    source: str
    fingerprint: str

    def __init__(self, features: npt.ArrayLike, source: str = 'memory') -> None:
        raw = as_matrix(features, 'feature bank')
        if raw.shape[0] == 0:
            raise ConfigError('feature bank is empty')
        norms = row_norms(raw)
        if np.any(norms == 0):
            row = int(np.flatnonzero(norms == 0)[0])
            raise ConfigError(f'feature bank row {row} is all zeros')
        self.features = normalize_rows(raw)
        self.source = source
        self.fingerprint = get_hash(self.features)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def _as_logits(logits: npt.ArrayLike) -> Matrix:
    arr = as_matrix(logits, 'logits')
    if arr.shape[1] < 1:
        raise ShapeError('logits need at least one class')
    return arr


def msp_scores(logits: npt.ArrayLike) -> Vector:
    """Maximum softmax probability per row."""
    arr = _as_logits(logits)
    if arr.shape[0] == 0:
        return np.empty(0)
    return np.max(softmax(arr, axis=1), axis=1)


def energy_scores(logits: npt.ArrayLike) -> Vector:
    """log-sum-exp per row (negative free energy)."""
    arr = _as_logits(logits)
    if arr.shape[0] == 0:
        return np.empty(0)
    return np.asarray(logsumexp(arr, axis=1), dtype=np.float64)


def maxlogit_scores(logits: npt.ArrayLike) -> Vector:
    arr = _as_logits(logits)
    if arr.shape[0] == 0:
        return np.empty(0)
    return np.max(arr, axis=1)


def msp_score(logits: npt.ArrayLike) -> float:
    return float(msp_scores(as_vector(logits, 'logits')[None, :])[0])


def energy_score(logits: npt.ArrayLike) -> float:
    return float(energy_scores(as_vector(logits, 'logits')[None, :])[0])


def maxlogit_score(logits: npt.ArrayLike) -> float:
    return float(maxlogit_scores(as_vector(logits, 'logits')[None, :])[0])


def _check_k(k: int, bank: FeatureBank) -> None:
    if not 1 <= k <= len(bank):
        raise ConfigError(f'k={k} outside [1, {len(bank)}]')


def _kth_distance(z_hat: Vector, bank: FeatureBank, k: int) -> float:
    distances = np.linalg.norm(bank.features - z_hat, axis=1)
    return float(np.partition(distances, k - 1)[k - 1])


def knn_score(z: npt.ArrayLike, bank: FeatureBank, k: int = DEFAULT_K) -> float:
    """Negative distance from normalized z to its k-th nearest bank row.

    Exhaustive search: cost grows linearly with the bank size.
    """
    v = as_vector(z, 'feature')
    _check_k(k, bank)
    if v.size != bank.dim:
        raise ShapeError(
            'feature dimension does not match bank', expected=(bank.dim,),
            actual=(v.size,),
        )
    z_hat = normalize_rows(v[None, :])[0]
    return -_kth_distance(z_hat, bank, k)


def knn_scores(
    z: npt.ArrayLike, bank: FeatureBank, k: int = DEFAULT_K,
) -> Vector:
    features = as_matrix(z, 'features')
    _check_k(k, bank)
    if features.shape[1] != bank.dim:
        raise ShapeError(
            'feature dimension does not match bank', expected=(bank.dim,),
            actual=(features.shape[1],),
        )
    z_hat = normalize_rows(features)
    return np.array([-_kth_distance(row, bank, k) for row in z_hat])


def logits_from_features(z: npt.ArrayLike, w: npt.ArrayLike) -> Matrix:
    """N x D features times D x C weights -> N x C logits (bias ignored)."""
    return matmul(as_matrix(z, 'features'), as_matrix(w, 'weights'))
