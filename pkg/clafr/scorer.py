from __future__ import annotations

import logging
import time
from abc import ABC
from abc import abstractmethod

import numpy as np
import numpy.typing as npt

from clafr._enums import Method
from clafr.baselines import DEFAULT_K
from clafr.baselines import energy_scores
from clafr.baselines import FeatureBank
from clafr.baselines import knn_scores
from clafr.baselines import logits_from_features
from clafr.baselines import maxlogit_scores
from clafr.baselines import msp_scores
from clafr.errors import ConfigError
from clafr.helpers import get_hash
from clafr.helpers import require_non_none
from clafr.metrics import Fingerprint
from clafr.metrics import ScoredBatch
from clafr.subspace import reconstruction_batch
from clafr.subspace import score_batch
from clafr.subspace import Subspace
from clafr.subspace import SubspaceConfig
from clafr.tensor import as_matrix
from clafr.tensor import Matrix
from clafr.tensor import Vector

logger = logging.getLogger(__name__)


class ScorerStrategy(ABC):
    """Strategy to be used by Scorer class."""
    method: Method
    subspace: Subspace | None
    config: SubspaceConfig
    weights: Matrix | None
    bank: FeatureBank | None
    k: int

    def __init__(
        self,
        method: Method,
        subspace: Subspace | None = None,
        config: SubspaceConfig | None = None,
        weights: Matrix | None = None,
        bank: FeatureBank | None = None,
        k: int = DEFAULT_K,
    ) -> None:
        self.method = method
        self.subspace = subspace
        self.config = config if config is not None else SubspaceConfig()
        self.weights = weights
        self.bank = bank
        self.k = k
        self.validate()

    @abstractmethod
    def validate(self) -> None:
        """Check that the inputs this method needs are present."""

    @abstractmethod
    def compute(
        self, features: Matrix | None, logits: Matrix | None,
    ) -> Vector: pass

    @abstractmethod
    def fingerprint(self) -> Fingerprint: pass


class SubspaceScorerStrategy(ScorerStrategy):

    def validate(self) -> None:
        if self.subspace is None:
            raise ConfigError(
                f'{self.method.label} needs a subspace or classifier weights',
            )

    def compute(
        self, features: Matrix | None, logits: Matrix | None,
    ) -> Vector:
        if features is None:
            raise ConfigError(f'{self.method.label} scores features, none given')
        subspace = require_non_none(self.subspace)
        if self.method is Method.RECONSTRUCTION:
            return reconstruction_batch(features, subspace, self.config).scores
        return score_batch(features, subspace, self.config).scores

    def fingerprint(self) -> Fingerprint:
        return require_non_none(self.subspace).fingerprint(
            self.config.normalize_features, self.method,
        )


class LogitScorerStrategy(ScorerStrategy):

    def validate(self) -> None:
        pass

    def get_logits(
        self, features: Matrix | None, logits: Matrix | None,
    ) -> Matrix:
        if logits is not None:
            return logits
        if features is None or self.weights is None:
            raise ConfigError(
                f'{self.method.label} needs logits, or features and weights',
            )
        return logits_from_features(features, self.weights)

    def compute(
        self, features: Matrix | None, logits: Matrix | None,
    ) -> Vector:
        arr = self.get_logits(features, logits)
        if self.method is Method.MSP:
            return msp_scores(arr)
        elif self.method is Method.ENERGY:
            return energy_scores(arr)
        elif self.method is Method.MAXLOGIT:
            return maxlogit_scores(arr)
        else:
            raise NotImplementedError

    def fingerprint(self) -> Fingerprint:
        return Fingerprint(
            method=self.method.label,
            weight_hash=(
                get_hash(self.weights) if self.weights is not None else None
            ),
        )


class KnnScorerStrategy(ScorerStrategy):

    def validate(self) -> None:
        if self.bank is None:
            raise ConfigError('knn needs a feature bank')

    def compute(
        self, features: Matrix | None, logits: Matrix | None,
    ) -> Vector:
        if features is None:
            raise ConfigError('knn scores features, none given')
        return knn_scores(features, require_non_none(self.bank), self.k)

    def fingerprint(self) -> Fingerprint:
        bank = require_non_none(self.bank)
        return Fingerprint(
            method=self.method.label, normalize=True,
            extra=f'k={self.k} bank={bank.fingerprint[:12]}',
        )


class Scorer:
    method: Method
    strategy: ScorerStrategy

    def __init__(
        self, method: Method, subspace: Subspace | None = None,
        config: SubspaceConfig | None = None,
        weights: npt.ArrayLike | None = None,
        bank: FeatureBank | None = None, k: int = DEFAULT_K,
    ) -> None:
        self.method = method
        strategy = self.get_strategy(method)
        self.strategy = strategy(
            method=method, subspace=subspace, config=config,
            weights=(
                as_matrix(weights, 'weights') if weights is not None else None
            ),
            bank=bank, k=k,
        )

    @staticmethod
    def get_strategy(method: Method) -> type[ScorerStrategy]:
        if method in (Method.CLAFR, Method.RECONSTRUCTION):
            return SubspaceScorerStrategy
        elif method.uses_logits:
            return LogitScorerStrategy
        elif method is Method.KNN:
            return KnnScorerStrategy
        else:
            raise NotImplementedError

    def score(
        self, features: npt.ArrayLike | None = None,
        logits: npt.ArrayLike | None = None,
    ) -> ScoredBatch:
        """Score a batch and time it (perf counter, nanoseconds)."""
        f = as_matrix(features, 'features') if features is not None else None
        lg = as_matrix(logits, 'logits') if logits is not None else None
        start = time.perf_counter_ns()
        scores = self.strategy.compute(f, lg)
        elapsed = time.perf_counter_ns() - start
        retv = ScoredBatch(
            np.asarray(scores), self.method, self.strategy.fingerprint(),
            elapsed_ns=elapsed,
        )
        logger.debug('%s in %.3f ms', retv, elapsed / 1e6)
        return retv
