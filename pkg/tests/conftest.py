from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from clafr.bench import BenchmarkData
from clafr.subspace import Subspace
from clafr.synth import SynthConfig

FIXTURES = Path(__file__).parent / 'fixtures'


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def identity_weights() -> np.ndarray:
    return np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])


@pytest.fixture
def plane_subspace() -> Subspace:
    """span(e1, e2) inside R^3."""
    return Subspace(
        u_m=[[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]], alpha_used=0.9,
        sigma=[1.0, 1.0], weight_fingerprint='plane',
    )


@pytest.fixture
def small_synth() -> SynthConfig:
    return SynthConfig(
        seed=7, d=16, c=4, n_train=200, n_id_test=80, n_ood_test=80,
    )


@pytest.fixture
def small_bench(small_synth) -> BenchmarkData:
    return BenchmarkData.from_synth(small_synth)


def random_orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


@pytest.fixture
def orthogonal(rng):
    """Draw Haar-random n x n orthogonal matrices from the shared rng."""
    return lambda n: random_orthogonal(rng, n)
