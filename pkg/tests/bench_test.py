from __future__ import annotations

import io

import numpy as np
import pandas as pd
import pytest

from clafr._enums import Method
from clafr.bench import ablate_alpha
from clafr.bench import AblationSweep
from clafr.bench import BENCH_METHODS
from clafr.bench import BenchmarkData
from clafr.bench import measure_scaling
from clafr.bench import run_benchmark
from clafr.bench import timed_score
from clafr.bench import timing_frame
from clafr.bench import TimingRow
from clafr.bench import validate_alphas
from clafr.bench import write_timing_csv
from clafr.errors import ConfigError
from clafr.errors import ShapeError
from clafr.scorer import Scorer
from clafr.synth import SynthConfig
from tests.generate_goldens import ABLATION_GOLDEN
from tests.generate_goldens import BENCH_GOLDEN
from tests.generate_goldens import default_ablation_frame
from tests.generate_goldens import default_bench_frame


def _metrics(reports):
    return [
        (r.method, r.ood_set, r.auroc, r.fpr_at_95tpr, r.tau, r.n_id, r.n_ood)
        for r in reports
    ]


def test_run_benchmark_order_and_determinism(small_bench, small_synth):
    reports = run_benchmark(small_bench, BENCH_METHODS, repetitions=1)
    assert [r.method for r in reports] == [m.label for m in BENCH_METHODS]
    assert {r.ood_set for r in reports} == {'synthetic'}
    assert all(r.ns_per_sample is not None for r in reports)

    again = run_benchmark(
        BenchmarkData.from_synth(small_synth), BENCH_METHODS, repetitions=1,
    )
    assert _metrics(again) == _metrics(reports)


def test_clafr_separates_synthetic_ood(small_bench):
    (report,) = run_benchmark(small_bench, [Method.CLAFR], repetitions=1)
    assert report.auroc > 0.95
    assert (report.n_id, report.n_ood) == (80, 80)


def test_default_synthetic_benchmark():
    data = BenchmarkData.from_synth(SynthConfig())
    (report,) = run_benchmark(data, [Method.CLAFR], repetitions=1)
    assert report.auroc > 0.95


def _golden(path):
    if not path.exists():
        pytest.skip(
            f'{path.name} not recorded; run python -m tests.generate_goldens',
        )
    # tau is printed at full precision; the rest at printed precision
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    return frame.drop(columns='tau')


def _rendered(frame):
    return pd.read_csv(
        io.StringIO(frame.to_csv(index=False)), dtype=str, keep_default_na=False,
    ).drop(columns='tau')


@pytest.mark.parametrize(
    ('path', 'build'),
    (
        (BENCH_GOLDEN, default_bench_frame),
        (ABLATION_GOLDEN, default_ablation_frame),
    ),
)
def test_default_run_matches_recorded_csv(path, build):
    expected = _golden(path)
    pd.testing.assert_frame_equal(_rendered(build()), expected)


def test_perfect_separation_for_every_method(small_synth):
    data = BenchmarkData.from_synth(
        small_synth.replace(noise_sigma=1e-6, ood_shift=20.0),
    )
    for report in run_benchmark(data, BENCH_METHODS, repetitions=1):
        assert report.auroc == 1.0, report.method
        assert report.fpr_at_95tpr == 0.0, report.method


def test_knn_needs_bank(rng):
    data = BenchmarkData(
        rng.standard_normal((10, 4)), {'x': rng.standard_normal((5, 4))},
        rng.standard_normal((4, 3)),
    )
    with pytest.raises(ConfigError):
        run_benchmark(data, [Method.KNN])


def test_run_benchmark_needs_methods(small_bench):
    with pytest.raises(ConfigError):
        run_benchmark(small_bench, [])


def test_benchmark_data_rejects(rng):
    with pytest.raises(ConfigError):
        BenchmarkData(rng.standard_normal((3, 4)), {}, rng.standard_normal((4, 2)))
    with pytest.raises(ShapeError):
        BenchmarkData(
            rng.standard_normal((3, 4)), {'x': rng.standard_normal((3, 5))},
            rng.standard_normal((4, 2)),
        )


def test_stored_logits(rng):
    features = rng.standard_normal((6, 4))
    ood = rng.standard_normal((5, 4))
    weights = rng.standard_normal((4, 3))
    id_logits = rng.standard_normal((6, 3))
    ood_logits = rng.standard_normal((5, 3))

    data = BenchmarkData(
        features, {'x': ood}, weights, id_logits=id_logits,
        ood_logits={'x': ood_logits},
    )
    assert data.uses_stored_logits()
    np.testing.assert_array_equal(data.logits_for(None), id_logits)
    np.testing.assert_array_equal(data.logits_for('x'), ood_logits)

    (report,) = run_benchmark(data, [Method.MAXLOGIT], repetitions=1)
    expected = Scorer(Method.MAXLOGIT).score(logits=id_logits).scores
    assert report.tau in expected

    partial = BenchmarkData(
        features, {'x': ood, 'y': ood}, weights, id_logits=id_logits,
        ood_logits={'x': ood_logits},
    )
    assert not partial.uses_stored_logits()


def test_timed_score(plane_subspace, rng):
    scorer = Scorer(Method.CLAFR, subspace=plane_subspace)
    features = rng.standard_normal((4, 3))
    batch = timed_score(scorer, features, None, repetitions=3)
    np.testing.assert_array_equal(batch.scores, scorer.score(features).scores)
    assert batch.elapsed_ns is not None
    with pytest.raises(ConfigError):
        timed_score(scorer, features, None, repetitions=0)


@pytest.mark.parametrize(
    'alphas',
    ([], [0.0, 0.5], [0.5, 1.1], [0.9, 0.8], [0.9, 0.9]),
)
def test_validate_alphas_rejects(alphas):
    with pytest.raises(ConfigError):
        validate_alphas(alphas)


def test_ablate_alpha(small_bench):
    sweep = ablate_alpha(small_bench, [0.3, 0.6, 0.9, 1.0])
    assert sweep.ms == sorted(sweep.ms)
    assert sweep.ms[-1] == 4
    frame = sweep.to_frame()
    assert len(frame) == 4
    assert list(frame['alpha']) == ['0.3', '0.6', '0.9', '1']
    assert set(frame['method']) == {'clafr'}


def test_ablation_matches_benchmark_at_same_alpha(small_bench):
    sweep = ablate_alpha(small_bench, [0.9])
    (report,) = run_benchmark(small_bench, [Method.CLAFR], alpha=0.9, repetitions=1)
    assert sweep.reports[0][0].auroc == report.auroc
    assert sweep.reports[0][0].tau == report.tau


def test_ablation_csv_is_reproducible(small_bench, tmp_path):
    a, b = tmp_path / 'a.csv', tmp_path / 'b.csv'
    ablate_alpha(small_bench, [0.5, 0.95]).write_csv(a)
    ablate_alpha(small_bench, [0.5, 0.95]).write_csv(b)
    assert a.read_bytes() == b.read_bytes()
    assert a.read_text().splitlines()[0] == (
        'alpha,m,method,ood_set,auroc,fpr95,tau,n_id,n_ood'
    )


def test_ablation_sweep_lengths():
    with pytest.raises(ConfigError):
        AblationSweep([0.5, 0.9], [1], [[], []])


def test_timing_csv(tmp_path):
    rows = [TimingRow('clafr', 100, 12.345), TimingRow('knn', 100, 999.0)]
    assert list(timing_frame(rows)['ns_per_sample']) == ['12.3', '999.0']
    write_timing_csv(rows, tmp_path / 't.csv')
    assert (tmp_path / 't.csv').read_text().splitlines() == [
        'method,n_train,ns_per_sample',
        'clafr,100,12.3',
        'knn,100,999.0',
    ]


def test_measure_scaling_rejects(small_synth):
    with pytest.raises(ConfigError):
        measure_scaling(small_synth, [], [Method.CLAFR])
    with pytest.raises(ConfigError):
        measure_scaling(small_synth, [100], [Method.CLAFR], n_queries=0)


@pytest.mark.slow
def test_measure_scaling(small_synth):
    rows = measure_scaling(
        small_synth, [100, 2000], [Method.CLAFR, Method.KNN], n_queries=50,
        repetitions=3,
    )
    assert [(r.method, r.n_train) for r in rows] == [
        ('clafr', 100), ('knn', 100), ('clafr', 2000), ('knn', 2000),
    ]
    assert all(r.ns_per_sample >= 0 for r in rows)
    knn = {r.n_train: r.ns_per_sample for r in rows if r.method == 'knn'}
    assert knn[2000] > knn[100]


@pytest.mark.slow
def test_clafr_latency_is_flat_in_bank_size():
    rows = measure_scaling(
        SynthConfig(seed=1), [1_000, 10_000, 100_000],
        [Method.CLAFR, Method.KNN],
    )
    clafr = [r.ns_per_sample for r in rows if r.method == 'clafr']
    knn = {r.n_train: r.ns_per_sample for r in rows if r.method == 'knn'}
    assert max(clafr) <= 2 * min(clafr)
    assert knn[100_000] >= 10 * knn[1_000]
