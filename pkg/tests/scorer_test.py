from __future__ import annotations

import numpy as np
import pytest

from clafr._enums import Method
from clafr.baselines import energy_scores
from clafr.baselines import FeatureBank
from clafr.baselines import msp_scores
from clafr.errors import ConfigError
from clafr.scorer import KnnScorerStrategy
from clafr.scorer import LogitScorerStrategy
from clafr.scorer import Scorer
from clafr.scorer import SubspaceScorerStrategy
from clafr.subspace import SubspaceConfig


@pytest.mark.parametrize(
    ('method', 'expected'),
    (
        (Method.CLAFR, SubspaceScorerStrategy),
        (Method.RECONSTRUCTION, SubspaceScorerStrategy),
        (Method.MSP, LogitScorerStrategy),
        (Method.ENERGY, LogitScorerStrategy),
        (Method.MAXLOGIT, LogitScorerStrategy),
        (Method.KNN, KnnScorerStrategy),
    ),
)
def test_get_strategy(method, expected):
    assert Scorer.get_strategy(method) is expected


def test_clafr_scorer(plane_subspace):
    scorer = Scorer(
        Method.CLAFR, subspace=plane_subspace,
        config=SubspaceConfig(normalize_features=False),
    )
    batch = scorer.score(features=[[3.0, 4.0, 0.0], [0.0, 0.0, 2.0]])
    np.testing.assert_allclose(batch.scores, [5.0, 0.0], atol=1e-15)
    assert batch.method is Method.CLAFR
    assert batch.elapsed_ns is not None and batch.elapsed_ns >= 0
    assert batch.fingerprint.m == 2


def test_recon_scorer(plane_subspace):
    scorer = Scorer(
        Method.RECONSTRUCTION, subspace=plane_subspace,
        config=SubspaceConfig(normalize_features=False),
    )
    batch = scorer.score(features=[[0.0, 0.0, 2.0]])
    np.testing.assert_allclose(batch.scores, [-2.0], atol=1e-15)
    assert batch.fingerprint.method == 'recon'


def test_subspace_scorer_needs_subspace():
    with pytest.raises(ConfigError):
        Scorer(Method.CLAFR)


def test_subspace_scorer_needs_features(plane_subspace):
    with pytest.raises(ConfigError):
        Scorer(Method.CLAFR, subspace=plane_subspace).score(logits=[[1.0]])


def test_logit_scorer_prefers_stored_logits(rng):
    logits = rng.standard_normal((10, 4))
    batch = Scorer(Method.ENERGY).score(logits=logits)
    np.testing.assert_array_equal(batch.scores, energy_scores(logits))
    assert batch.fingerprint.weight_hash is None


def test_logit_scorer_derives_logits(rng):
    features = rng.standard_normal((10, 5))
    weights = rng.standard_normal((5, 3))
    batch = Scorer(Method.MSP, weights=weights).score(features=features)
    np.testing.assert_allclose(
        batch.scores, msp_scores(features @ weights), atol=1e-15,
    )
    assert batch.fingerprint.weight_hash is not None


def test_logit_scorer_needs_inputs(rng):
    with pytest.raises(ConfigError):
        Scorer(Method.MAXLOGIT).score(features=rng.standard_normal((2, 3)))


def test_knn_scorer(rng):
    bank = FeatureBank(rng.standard_normal((30, 4)))
    batch = Scorer(Method.KNN, bank=bank, k=3).score(
        features=rng.standard_normal((5, 4)),
    )
    assert len(batch) == 5
    assert np.all(batch.scores <= 0.0)
    assert 'k=3' in batch.fingerprint.extra


def test_knn_scorer_needs_bank():
    with pytest.raises(ConfigError):
        Scorer(Method.KNN)


def test_fingerprints_match_across_batches(rng, plane_subspace):
    scorer = Scorer(Method.CLAFR, subspace=plane_subspace)
    a = scorer.score(features=rng.standard_normal((4, 3)))
    b = scorer.score(features=rng.standard_normal((7, 3)))
    assert a.fingerprint == b.fingerprint


def test_normalization_changes_fingerprint(plane_subspace):
    raw = Scorer(
        Method.CLAFR, subspace=plane_subspace,
        config=SubspaceConfig(normalize_features=False),
    )
    unit = Scorer(Method.CLAFR, subspace=plane_subspace)
    assert raw.strategy.fingerprint() != unit.strategy.fingerprint()
