from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from typing import NamedTuple

import numpy as np
import numpy.typing as npt
import pandas as pd

from clafr._enums import Decision
from clafr._enums import Method
from clafr.errors import MetricError
from clafr.errors import MisuseError
from clafr.helpers import atomic_write
from clafr.helpers import format_percent
from clafr.tensor import as_vector
from clafr.tensor import Vector

logger = logging.getLogger(__name__)

DEFAULT_TPR = 0.95
REPORT_COLUMNS = (
    'method', 'ood_set', 'auroc', 'fpr95', 'tau', 'n_id', 'n_ood',
    'ns_per_sample',
)


class Fingerprint(NamedTuple):
    """Identifies the scorer configuration that produced a ScoredBatch."""
    method: str
    alpha: float | None = None
    m: int | None = None
    normalize: bool | None = None
    weight_hash: str | None = None
    extra: str | None = None

    def describe(self) -> str:
        parts = [self.method]
        if self.alpha is not None:
            parts.append(f'alpha={self.alpha:g}')
        if self.m is not None:
            parts.append(f'm={self.m}')
        if self.normalize is not None:
            parts.append(f'normalize={self.normalize}')
        if self.weight_hash is not None:
            parts.append(f'w={self.weight_hash[:12]}')
        if self.extra:
            parts.append(self.extra)
        return ' '.join(parts)


class ScoredBatch:
    """Per-sample scores (higher = more ID) and how they were produced."""
    scores: Vector
    method: Method
    fingerprint: Fingerprint
    elapsed_ns: int | None

    def __init__(
        self, scores: npt.ArrayLike, method: Method,
        fingerprint: Fingerprint, elapsed_ns: int | None = None,
    ) -> None:
        self.scores = as_vector(scores, 'scores')
        self.method = method
        self.fingerprint = fingerprint
        self.elapsed_ns = elapsed_ns

    def __len__(self) -> int:
        return len(self.scores)

    def __str__(self) -> str:
        return f'ScoredBatch({len(self)} scores, {self.fingerprint.describe()})'


class EvalReport:
    method: str
    ood_set: str
    auroc: float
    fpr_at_95tpr: float
    tau: float
    tpr_at_tau: float
    n_id: int
    n_ood: int
    ns_per_sample: float | None

    def __init__(
        self, method: str, ood_set: str, auroc: float, fpr_at_95tpr: float,
        tau: float, tpr_at_tau: float, n_id: int, n_ood: int,
        ns_per_sample: float | None = None,
    ) -> None:
        self.method = method
        self.ood_set = ood_set
        self.auroc = auroc
        self.fpr_at_95tpr = fpr_at_95tpr
        self.tau = tau
        self.tpr_at_tau = tpr_at_tau
        self.n_id = n_id
        self.n_ood = n_ood
        self.ns_per_sample = ns_per_sample

    def to_row(self, with_timing: bool = True) -> dict[str, str]:
        retv = {
            'method': self.method,
            'ood_set': self.ood_set,
            'auroc': format_percent(self.auroc),
            'fpr95': format_percent(self.fpr_at_95tpr),
            'tau': f'{self.tau:.6g}',
            'n_id': str(self.n_id),
            'n_ood': str(self.n_ood),
        }
        if with_timing:
            retv['ns_per_sample'] = (
                '' if self.ns_per_sample is None
                else f'{self.ns_per_sample:.1f}'
            )
        return retv

    def __str__(self) -> str:
        return (
            f'{self.method} vs {self.ood_set}: '
            f'AUROC {format_percent(self.auroc)}  '
            f'FPR95 {format_percent(self.fpr_at_95tpr)}  '
            f'(tau={self.tau:.6g}, TPR={format_percent(self.tpr_at_tau)})'
        )


def detect(score: float, tau: float) -> Decision:
    """Threshold detector: ID iff score >= tau."""
    return Decision.ID if score >= tau else Decision.OOD


def _as_scores(scores: npt.ArrayLike, what: str) -> Vector:
    if isinstance(scores, ScoredBatch):
        return scores.scores
    return as_vector(scores, what)


def auroc(id_scores: npt.ArrayLike, ood_scores: npt.ArrayLike) -> float:
    """Mann-Whitney AUROC with half credit for ties; ID is the positive class.

    Counts are exact integers, so the result equals the brute-force pairwise
    count (wins + 0.5 * ties) / (n_id * n_ood).
    """
    id_s = _as_scores(id_scores, 'id scores')
    ood_s = _as_scores(ood_scores, 'ood scores')
    if id_s.size == 0 or ood_s.size == 0:
        raise MetricError('auroc needs non-empty ID and OOD score sets')
    ood_sorted = np.sort(ood_s)
    below = np.searchsorted(ood_sorted, id_s, side='left')
    below_or_equal = np.searchsorted(ood_sorted, id_s, side='right')
    wins = int(below.sum())
    ties = int((below_or_equal - below).sum())
    return (wins + 0.5 * ties) / (id_s.size * ood_s.size)


def fpr_at_tpr(
    id_scores: npt.ArrayLike, ood_scores: npt.ArrayLike,
    tpr_target: float = DEFAULT_TPR,
) -> tuple[float, float]:
    """Return (fpr, tau) at the largest tau whose TPR reaches the target.

    TPR(tau) is the fraction of ID scores >= tau, FPR(tau) the fraction of
    OOD scores >= tau. Only ID scores are candidate thresholds.
    """
    fpr, tau, _ = _fpr_tau_tpr(id_scores, ood_scores, tpr_target)
    return fpr, tau


def _fpr_tau_tpr(
    id_scores: npt.ArrayLike, ood_scores: npt.ArrayLike, tpr_target: float,
) -> tuple[float, float, float]:
    if not 0.0 < tpr_target <= 1.0:
        raise MetricError(f'tpr target must lie in (0, 1], got {tpr_target}')
    id_s = _as_scores(id_scores, 'id scores')
    ood_s = _as_scores(ood_scores, 'ood scores')
    if id_s.size == 0:
        raise MetricError('fpr_at_tpr needs a non-empty ID score set')

    n_id = id_s.size
    id_sorted = np.sort(id_s)
    candidates = np.unique(id_sorted)[::-1]  # descending
    at_or_above = n_id - np.searchsorted(id_sorted, candidates, side='left')
    tprs = at_or_above / n_id
    reached = np.flatnonzero(tprs >= tpr_target)
    tau = float(candidates[reached[0]])  # tprs grow as tau falls
    tpr = float(tprs[reached[0]])
    if ood_s.size == 0:
        return 0.0, tau, tpr
    fpr = int(np.count_nonzero(ood_s >= tau)) / ood_s.size
    return fpr, tau, tpr


def evaluate(
    id_batch: ScoredBatch, ood_batch: ScoredBatch, ood_set: str = 'ood',
    tpr_target: float = DEFAULT_TPR,
) -> EvalReport:
    if id_batch.fingerprint != ood_batch.fingerprint:
        raise MisuseError(
            'refusing to compare scores from different scorers: '
            f'{id_batch.fingerprint.describe()!r} vs '
            f'{ood_batch.fingerprint.describe()!r}',
        )
    roc = auroc(id_batch.scores, ood_batch.scores)
    fpr, tau, tpr = _fpr_tau_tpr(id_batch.scores, ood_batch.scores, tpr_target)

    ns_per_sample = None
    if id_batch.elapsed_ns is not None and ood_batch.elapsed_ns is not None:
        ns_per_sample = (
            (id_batch.elapsed_ns + ood_batch.elapsed_ns)
            / (len(id_batch) + len(ood_batch))
        )
    retv = EvalReport(
        method=id_batch.fingerprint.method, ood_set=ood_set, auroc=roc,
        fpr_at_95tpr=fpr, tau=tau, tpr_at_tau=tpr, n_id=len(id_batch),
        n_ood=len(ood_batch), ns_per_sample=ns_per_sample,
    )
    logger.info('%s', retv)
    return retv


def reports_to_frame(
    reports: Sequence[EvalReport], with_timing: bool = True,
    with_average: bool = True,
) -> pd.DataFrame:
    """One row per report, plus an Average row per method when a method was
    evaluated against more than one OOD set."""
    columns = list(REPORT_COLUMNS if with_timing else REPORT_COLUMNS[:-1])
    rows = []
    by_method: dict[str, list[EvalReport]] = {}
    for r in reports:
        rows.append(r.to_row(with_timing))
        by_method.setdefault(r.method, []).append(r)

    if with_average:
        for method, group in by_method.items():
            if len(group) < 2:
                continue
            row = {c: '' for c in columns}
            row['method'] = method
            row['ood_set'] = 'Average'
            row['auroc'] = format_percent(
                math.fsum(r.auroc for r in group) / len(group),
            )
            row['fpr95'] = format_percent(
                math.fsum(r.fpr_at_95tpr for r in group) / len(group),
            )
            rows.append(row)
    return pd.DataFrame(rows, columns=columns)


def write_reports_csv(
    reports: Sequence[EvalReport], path: str, with_timing: bool = True,
) -> None:
    frame = reports_to_frame(reports, with_timing=with_timing)
    with atomic_write(path) as tmp:
        frame.to_csv(tmp, index=False)


def render_table(frame: pd.DataFrame) -> str:
    """Aligned plain-text table, one line per row."""
    return frame.to_string(index=False)
