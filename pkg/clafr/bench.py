"""Benchmark runner, alpha ablation and the latency-vs-bank-size harness."""
from __future__ import annotations

import logging
import os
import time
from collections.abc import Sequence
from typing import NamedTuple

import numpy.typing as npt
import pandas as pd
from tqdm import tqdm

from clafr._enums import Method
from clafr.baselines import DEFAULT_K
from clafr.baselines import FeatureBank
from clafr.errors import ConfigError
from clafr.helpers import atomic_write
from clafr.helpers import median_ns
from clafr.manifest import check_dimensions
from clafr.manifest import DatasetManifest
from clafr.manifest import LoadedDataset
from clafr.metrics import DEFAULT_TPR
from clafr.metrics import evaluate
from clafr.metrics import EvalReport
from clafr.metrics import ScoredBatch
from clafr.scorer import Scorer
from clafr.subspace import build_subspace
from clafr.subspace import DEFAULT_ALPHA
from clafr.subspace import score_batch
from clafr.subspace import Subspace
from clafr.subspace import subspace_from_factors
from clafr.subspace import SubspaceConfig
from clafr.subspace import weight_fingerprint
from clafr.synth import fit_linear_classifier
from clafr.synth import generate
from clafr.synth import SynthConfig
from clafr.tensor import as_matrix
from clafr.tensor import Matrix
from clafr.tensor import svd

logger = logging.getLogger(__name__)

DEFAULT_REPETITIONS = 3
DEFAULT_QUERIES = 200
BENCH_METHODS = (
    Method.CLAFR, Method.RECONSTRUCTION, Method.MSP, Method.ENERGY,
    Method.MAXLOGIT, Method.KNN,
)
ABLATION_COLUMNS = (
    'alpha', 'm', 'method', 'ood_set', 'auroc', 'fpr95', 'tau', 'n_id',
    'n_ood',
)
TIMING_COLUMNS = ('method', 'n_train', 'ns_per_sample')


class BenchmarkData:
    """ID features, named OOD sets and the weights they are scored with."""
    id_features: Matrix
    ood_sets: dict[str, Matrix]
    weights: Matrix
    id_logits: Matrix | None
    ood_logits: dict[str, Matrix]
    bank: Matrix | None
    alpha: float
    normalize: bool
    k: int

    def __init__(
        self,
        id_features: npt.ArrayLike,
        ood_sets: dict[str, npt.ArrayLike],
        weights: npt.ArrayLike,
        id_logits: npt.ArrayLike | None = None,
        ood_logits: dict[str, npt.ArrayLike] | None = None,
        bank: npt.ArrayLike | None = None,
        alpha: float = DEFAULT_ALPHA,
        normalize: bool = True,
        k: int = DEFAULT_K,
    ) -> None:
        if not ood_sets:
            raise ConfigError('a benchmark needs at least one OOD set')
        self.id_features = as_matrix(id_features, 'id features')
        self.ood_sets = {
            name: as_matrix(m, f'ood set {name}') for name, m in ood_sets.items()
        }
        self.weights = as_matrix(weights, 'weights')
        self.id_logits = (
            as_matrix(id_logits, 'id logits') if id_logits is not None else None
        )
        self.ood_logits = {
            name: as_matrix(m, f'logits {name}')
            for name, m in (ood_logits or {}).items()
        }
        self.bank = as_matrix(bank, 'bank') if bank is not None else None
        self.alpha = alpha
        self.normalize = normalize
        self.k = k
        check_dimensions(
            LoadedDataset(
                self.id_features, self.ood_sets, self.weights,
                self.id_logits, self.ood_logits, self.bank,
            ),
        )

    @classmethod
    def from_synth(
        cls, cfg: SynthConfig, alpha: float = DEFAULT_ALPHA,
        normalize: bool = True, k: int = DEFAULT_K,
    ) -> BenchmarkData:
        data = generate(cfg)
        weights = fit_linear_classifier(
            data.train_features, data.train_labels, num_classes=cfg.c,
        )
        return cls(
            id_features=data.id_test, ood_sets={'synthetic': data.ood_test},
            weights=weights, bank=data.train_features, alpha=alpha,
            normalize=normalize, k=k,
        )

    @classmethod
    def from_manifest(cls, manifest: DatasetManifest) -> BenchmarkData:
        loaded = manifest.load()
        return cls(
            id_features=loaded.id_features, ood_sets=dict(loaded.ood_features),
            weights=loaded.weights, id_logits=loaded.id_logits,
            ood_logits=dict(loaded.ood_logits), bank=loaded.bank,
            alpha=manifest.alpha, normalize=manifest.normalize, k=manifest.k,
        )

    def logits_for(self, name: str | None) -> Matrix | None:
        """Stored logits for the ID set (name None) or an OOD set.

        Stored logits are only used when the ID set and this set both have
        them; otherwise scorers derive logits from features and weights.
        """
        if self.id_logits is None:
            return None
        if name is None:
            return self.id_logits
        return self.ood_logits.get(name)

    def uses_stored_logits(self) -> bool:
        return self.id_logits is not None and all(
            name in self.ood_logits for name in self.ood_sets
        )


def timed_score(
    scorer: Scorer, features: Matrix | None, logits: Matrix | None,
    repetitions: int = DEFAULT_REPETITIONS,
) -> ScoredBatch:
    """Score `repetitions` times; keep the first scores and the median time."""
    if repetitions < 1:
        raise ConfigError(f'repetitions must be at least 1, got {repetitions}')
    runs = [scorer.score(features, logits) for _ in range(repetitions)]
    elapsed = median_ns([r.elapsed_ns or 0 for r in runs])
    first = runs[0]
    return ScoredBatch(
        first.scores, first.method, first.fingerprint,
        elapsed_ns=int(round(elapsed)),
    )


def _check_methods(methods: Sequence[Method]) -> None:
    if not methods:
        raise ConfigError('no methods requested')
    for method in methods:
        if method not in BENCH_METHODS:
            raise ConfigError(f'{method.label} cannot be benchmarked')


def run_benchmark(
    data: BenchmarkData,
    methods: Sequence[Method],
    alpha: float | None = None,
    normalize: bool | None = None,
    k: int | None = None,
    repetitions: int = DEFAULT_REPETITIONS,
    tpr_target: float = DEFAULT_TPR,
) -> list[EvalReport]:
    """One EvalReport per (method, OOD set), methods in the order given."""
    _check_methods(methods)
    if Method.KNN in methods and data.bank is None:
        raise ConfigError('knn requested without a feature bank')
    cfg = SubspaceConfig(
        alpha=data.alpha if alpha is None else alpha,
        normalize_features=data.normalize if normalize is None else normalize,
    )
    neighbours = data.k if k is None else k

    subspace: Subspace | None = None
    if Method.CLAFR in methods or Method.RECONSTRUCTION in methods:
        subspace = build_subspace(data.weights, cfg)
    bank = FeatureBank(data.bank, source='bench') if Method.KNN in methods else None
    stored = data.uses_stored_logits()

    reports = []
    for method in tqdm(methods, desc='bench', unit='method', disable=None):
        scorer = Scorer(
            method, subspace=subspace, config=cfg, weights=data.weights,
            bank=bank, k=neighbours,
        )
        logits = method.uses_logits and stored
        id_batch = timed_score(
            scorer, data.id_features,
            data.logits_for(None) if logits else None, repetitions,
        )
        for name, features in data.ood_sets.items():
            ood_batch = timed_score(
                scorer, features,
                data.logits_for(name) if logits else None, repetitions,
            )
            reports.append(
                evaluate(id_batch, ood_batch, ood_set=name, tpr_target=tpr_target),
            )
    return reports


class AblationSweep:
    """Reports for one weight matrix at increasing alpha."""
    alphas: list[float]
    ms: list[int]
    reports: list[list[EvalReport]]

    def __init__(
        self, alphas: Sequence[float], ms: Sequence[int],
        reports: Sequence[Sequence[EvalReport]],
    ) -> None:
        self.alphas = [float(a) for a in alphas]
        self.ms = list(ms)
        self.reports = [list(r) for r in reports]
        self.validate()

    def validate(self) -> None:
        validate_alphas(self.alphas)
        if not len(self.alphas) == len(self.ms) == len(self.reports):
            raise ConfigError('one m and one report list per alpha')

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for alpha, m, reports in zip(self.alphas, self.ms, self.reports):
            for report in reports:
                row = {'alpha': f'{alpha:g}', 'm': str(m)}
                row.update(report.to_row(with_timing=False))
                rows.append(row)
        return pd.DataFrame(rows, columns=list(ABLATION_COLUMNS))

    def write_csv(self, path: str | os.PathLike[str]) -> None:
        frame = self.to_frame()
        with atomic_write(path) as tmp:
            frame.to_csv(tmp, index=False)


def validate_alphas(alphas: Sequence[float]) -> None:
    if not alphas:
        raise ConfigError('no alpha values given')
    for a in alphas:
        if not 0.0 < a <= 1.0:
            raise ConfigError(f'alpha must lie in (0, 1], got {a}')
    for lo, hi in zip(alphas, alphas[1:]):
        if not lo < hi:
            raise ConfigError(f'alphas must be strictly increasing: {lo}, {hi}')


def ablate_alpha(
    data: BenchmarkData, alphas: Sequence[float],
    normalize: bool | None = None, tpr_target: float = DEFAULT_TPR,
) -> AblationSweep:
    """Evaluate ClaFR at each alpha, reusing a single SVD of the weights."""
    validate_alphas(alphas)
    factors = svd(data.weights)
    weight_hash = weight_fingerprint(data.weights)
    logger.debug('ablation svd converged in %d sweeps', factors.sweeps)
    norm = data.normalize if normalize is None else normalize

    ms = []
    reports = []
    for alpha in tqdm(alphas, desc='ablate', unit='alpha', disable=None):
        cfg = SubspaceConfig(alpha=alpha, normalize_features=norm)
        subspace = subspace_from_factors(factors, cfg, weight_hash)
        id_batch = score_batch(data.id_features, subspace, cfg)
        ms.append(subspace.m)
        reports.append([
            evaluate(
                id_batch, score_batch(features, subspace, cfg),
                ood_set=name, tpr_target=tpr_target,
            )
            for name, features in data.ood_sets.items()
        ])
    return AblationSweep(alphas, ms, reports)


class TimingRow(NamedTuple):
    method: str
    n_train: int
    ns_per_sample: float


def measure_scaling(
    cfg: SynthConfig,
    n_train_sizes: Sequence[int],
    methods: Sequence[Method],
    n_queries: int = DEFAULT_QUERIES,
    repetitions: int = DEFAULT_REPETITIONS,
    k: int = DEFAULT_K,
) -> list[TimingRow]:
    """Per-sample latency of each method as the training set grows.

    ClaFR only ever touches the weights, so its cost does not depend on
    n_train; KNN searches the whole bank for every query.
    """
    _check_methods(methods)
    if not n_train_sizes or min(n_train_sizes) < 1:
        raise ConfigError('n_train sizes must be positive')
    if n_queries < 1 or repetitions < 1:
        raise ConfigError('need at least one query and one repetition')

    rows = []
    for n_train in tqdm(n_train_sizes, desc='scaling', unit='size', disable=None):
        data = BenchmarkData.from_synth(
            cfg.replace(n_train=n_train, n_id_test=n_queries, n_ood_test=0),
            k=k,
        )
        cfg_s = SubspaceConfig(alpha=data.alpha, normalize_features=data.normalize)
        subspace = None
        if Method.CLAFR in methods or Method.RECONSTRUCTION in methods:
            subspace = build_subspace(data.weights, cfg_s)
        bank = None
        if Method.KNN in methods:
            bank = FeatureBank(data.bank, source=f'synthetic n_train={n_train}')
        for method in methods:
            scorer = Scorer(
                method, subspace=subspace, config=cfg_s, weights=data.weights,
                bank=bank, k=k,
            )
            scorer.score(data.id_features)  # warm-up
            samples = []
            for _ in range(repetitions):
                start = time.perf_counter_ns()
                scorer.score(data.id_features)
                samples.append(time.perf_counter_ns() - start)
            row = TimingRow(
                method.label, n_train, median_ns(samples) / n_queries,
            )
            logger.info('%s n_train=%d: %.1f ns/sample', *row)
            rows.append(row)
    return rows


def timing_frame(rows: Sequence[TimingRow]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                'method': r.method, 'n_train': str(r.n_train),
                'ns_per_sample': f'{r.ns_per_sample:.1f}',
            }
            for r in rows
        ],
        columns=list(TIMING_COLUMNS),
    )


def write_timing_csv(
    rows: Sequence[TimingRow], path: str | os.PathLike[str],
) -> None:
    frame = timing_frame(rows)
    with atomic_write(path) as tmp:
        frame.to_csv(tmp, index=False)
