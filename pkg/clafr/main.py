from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any
from typing import Callable
from typing import Sequence

from clafr._enums import DType
from clafr._enums import ExitCode
from clafr._enums import Method
from clafr.baselines import DEFAULT_K
from clafr.baselines import FeatureBank
from clafr.bench import ablate_alpha
from clafr.bench import BenchmarkData
from clafr.bench import DEFAULT_QUERIES
from clafr.bench import DEFAULT_REPETITIONS
from clafr.bench import measure_scaling
from clafr.bench import run_benchmark
from clafr.bench import timing_frame
from clafr.bench import validate_alphas
from clafr.bench import write_timing_csv
from clafr.errors import ClafrError
from clafr.helpers import atomic_write
from clafr.helpers import parse_number_list
from clafr.manifest import DatasetManifest
from clafr.manifest import load_manifest
from clafr.manifest import render_manifest
from clafr.metrics import DEFAULT_TPR
from clafr.metrics import evaluate
from clafr.metrics import render_table
from clafr.metrics import reports_to_frame
from clafr.metrics import write_reports_csv
from clafr.scorer import Scorer
from clafr.subspace import build_subspace
from clafr.subspace import DEFAULT_ALPHA
from clafr.subspace import SubspaceConfig
from clafr.synth import fit_linear_classifier
from clafr.synth import generate
from clafr.synth import SynthConfig
from clafr.tensor_io import read_matrix
from clafr.tensor_io import read_scored_batch
from clafr.tensor_io import read_subspace
from clafr.tensor_io import write_scored_batch
from clafr.tensor_io import write_subspace
from clafr.tensor_io import write_tensor

logger = logging.getLogger(__name__)

METHOD_CHOICES = ('clafr', 'recon', 'msp', 'energy', 'maxlogit', 'knn')
DEFAULT_ALPHAS = '0.70,0.75,0.80,0.85,0.90,0.95,0.99'
DEFAULT_BENCH_METHODS = 'clafr,msp,energy,maxlogit,knn'
# gen-synth flag -> SynthConfig field
_SYNTH_FLAGS = {
    'd': 'd', 'classes': 'c', 'n_train': 'n_train', 'n_id': 'n_id_test',
    'n_ood': 'n_ood_test', 'class_sep': 'class_sep',
    'ood_shift': 'ood_shift', 'noise': 'noise_sigma',
}


def _number_list(kind: type[Any]) -> Callable[[str], list[Any]]:
    def parse(string: str) -> list[Any]:
        try:
            retv = parse_number_list(string, kind)
        except ValueError:
            raise argparse.ArgumentTypeError(
                f'expected comma-separated {kind.__name__} values, got {string!r}',
            )
        if not retv:
            raise argparse.ArgumentTypeError('empty list')
        return retv
    return parse


def _method_list(string: str) -> list[Method]:
    labels = [p.strip() for p in string.split(',') if p.strip()]
    unknown = [label for label in labels if label not in METHOD_CHOICES]
    if unknown or not labels:
        raise argparse.ArgumentTypeError(
            f'unknown method(s) {unknown}; choose from {", ".join(METHOD_CHOICES)}',
        )
    return [Method.from_string(label) for label in labels]


def synth_config(args: argparse.Namespace) -> SynthConfig:
    given = {
        field: getattr(args, flag) for flag, field in _SYNTH_FLAGS.items()
        if getattr(args, flag) is not None
    }
    return SynthConfig(seed=args.seed, **given)


def get_benchmark_data(args: argparse.Namespace) -> BenchmarkData:
    if args.manifest is not None:
        manifest = load_manifest(args.manifest)
        logger.info('%s', manifest)
        return BenchmarkData.from_manifest(manifest)
    return BenchmarkData.from_synth(synth_config(args))


def cmd_decompose(args: argparse.Namespace) -> int:
    cfg = SubspaceConfig(alpha=args.alpha, m_override=args.m)
    subspace = build_subspace(read_matrix(args.weights), cfg)
    write_subspace(subspace, args.out)
    print(subspace)
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    method = Method.from_string(args.method)
    cfg = SubspaceConfig(
        alpha=args.alpha, normalize_features=not args.no_normalize,
    )
    subspace = read_subspace(args.subspace) if args.subspace else None
    if subspace is not None:
        cfg = SubspaceConfig(
            alpha=subspace.alpha_used,
            normalize_features=not args.no_normalize,
        )
    weights = read_matrix(args.weights) if args.weights else None
    if subspace is None and weights is not None and not method.uses_logits \
            and method is not Method.KNN:
        subspace = build_subspace(weights, cfg)
    bank = None
    if args.bank:
        bank = FeatureBank(read_matrix(args.bank), source=str(args.bank))

    scorer = Scorer(
        method, subspace=subspace, config=cfg, weights=weights, bank=bank,
        k=args.k,
    )
    batch = scorer.score(
        features=read_matrix(args.features) if args.features else None,
        logits=read_matrix(args.logits) if args.logits else None,
    )
    write_scored_batch(batch, args.out, DType.from_string(args.dtype))
    logger.info('wrote %s to %s', batch, args.out)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    id_batch = read_scored_batch(args.id_scores)
    reports = [
        evaluate(
            id_batch, read_scored_batch(path), ood_set=Path(path).stem,
            tpr_target=args.tpr,
        )
        for path in args.ood_scores
    ]
    print(render_table(reports_to_frame(reports)))
    write_reports_csv(reports, args.out)
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    validate_alphas(args.alphas)
    data = get_benchmark_data(args)
    sweep = ablate_alpha(
        data, args.alphas,
        normalize=False if args.no_normalize else None,
    )
    sweep.write_csv(args.out)
    print(render_table(sweep.to_frame()))
    return 0


def bench_methods(args: argparse.Namespace, has_bank: bool) -> list[Method]:
    if args.methods is not None:
        return args.methods
    methods = _method_list(DEFAULT_BENCH_METHODS)
    if not has_bank:
        logger.info('no feature bank; knn left out of the default methods')
        methods = [m for m in methods if m is not Method.KNN]
    return methods


def cmd_bench(args: argparse.Namespace) -> int:
    if args.ntr is not None:
        rows = measure_scaling(
            synth_config(args), args.ntr, bench_methods(args, True),
            n_queries=args.queries, repetitions=args.repetitions,
            k=args.k if args.k is not None else DEFAULT_K,
        )
        write_timing_csv(rows, args.out)
        print(render_table(timing_frame(rows)))
        return 0

    data = get_benchmark_data(args)
    reports = run_benchmark(
        data, bench_methods(args, data.bank is not None), alpha=args.alpha,
        k=args.k, repetitions=args.repetitions,
    )
    write_reports_csv(reports, args.out)
    print(render_table(reports_to_frame(reports)))
    return 0


def cmd_gen_synth(args: argparse.Namespace) -> int:
    cfg = synth_config(args)
    dtype = DType.from_string(args.dtype)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    data = generate(cfg)
    weights = fit_linear_classifier(
        data.train_features, data.train_labels, num_classes=cfg.c,
    )
    write_tensor(data.train_features, dtype, out_dir / 'train.ctf')
    write_tensor(data.train_labels, dtype, out_dir / 'train_labels.ctf')
    write_tensor(weights, dtype, out_dir / 'weights.ctf')
    write_tensor(data.id_test, dtype, out_dir / 'id.ctf')
    write_tensor(data.ood_test, dtype, out_dir / 'ood.ctf')

    manifest = DatasetManifest(
        id_features=out_dir / 'id.ctf',
        ood_features=[('synthetic', out_dir / 'ood.ctf')],
        weights=out_dir / 'weights.ctf',
        bank=out_dir / 'train.ctf',
        source=out_dir / 'manifest.cfg',
    )
    with atomic_write(out_dir / 'manifest.cfg') as tmp:
        tmp.write_text(render_manifest(manifest))
    print(f'wrote {cfg!r} to {out_dir}')
    return 0


def add_synth_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group('synthetic data')
    group.add_argument('--d', type=int, help='feature dimension (default 64)')
    group.add_argument(
        '--classes', type=int, help='number of classes (default 10)',
    )
    group.add_argument('--n-train', type=int, help='training samples')
    group.add_argument('--n-id', type=int, help='ID test samples')
    group.add_argument('--n-ood', type=int, help='OOD test samples')
    group.add_argument('--class-sep', type=float, help='class mean spacing')
    group.add_argument(
        '--ood-shift', type=float, help='OOD cluster displacement',
    )
    group.add_argument('--noise', type=float, help='per-coordinate noise std')


def add_source_flags(parser: argparse.ArgumentParser) -> None:
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument('--seed', type=int, help='use seeded synthetic data')
    source.add_argument('--manifest', help='use the features a manifest lists')
    add_synth_flags(parser)


def get_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='clafr-cli',
        description='Class-known subspace OOD detection from classifier weights.',
    )
    parser.add_argument(
        '-v', '--verbose', action='count', default=0,
        help='log progress (-v) or debug detail (-vv) to stderr',
    )
    subparsers = parser.add_subparsers(dest='command', required=True)

    decompose = subparsers.add_parser(
        'decompose', help='build the class-known subspace of a weight matrix',
    )
    decompose.add_argument('--weights', required=True, help='D x C weights')
    decompose.add_argument('--alpha', type=float, default=DEFAULT_ALPHA)
    decompose.add_argument(
        '--m', type=int, help='keep exactly m directions, ignoring --alpha',
    )
    decompose.add_argument('--out', required=True)
    decompose.set_defaults(func=cmd_decompose)

    score = subparsers.add_parser('score', help='score a feature batch')
    score.add_argument('--features', help='N x D features')
    score.add_argument('--subspace', help='output of decompose')
    score.add_argument('--weights', help='D x C weights')
    score.add_argument('--alpha', type=float, default=DEFAULT_ALPHA)
    score.add_argument('--no-normalize', action='store_true')
    score.add_argument('--method', choices=METHOD_CHOICES, default='clafr')
    score.add_argument('--logits', help='N x C logits for msp/energy/maxlogit')
    score.add_argument('--bank', help='training features for knn')
    score.add_argument('--k', type=int, default=DEFAULT_K)
    score.add_argument('--dtype', choices=('f32', 'f64'), default='f64')
    score.add_argument('--out', required=True)
    score.set_defaults(func=cmd_score, check=check_score_args)

    evaluate_ = subparsers.add_parser(
        'eval', help='AUROC and FPR at a TPR target',
    )
    evaluate_.add_argument('--id-scores', required=True)
    evaluate_.add_argument('--ood-scores', required=True, nargs='+')
    evaluate_.add_argument('--tpr', type=float, default=DEFAULT_TPR)
    evaluate_.add_argument('--out', required=True, help='report CSV')
    evaluate_.set_defaults(func=cmd_eval)

    ablate = subparsers.add_parser('ablate', help='sweep alpha')
    add_source_flags(ablate)
    ablate.add_argument(
        '--alphas', type=_number_list(float), default=DEFAULT_ALPHAS,
        help=f'strictly increasing (default {DEFAULT_ALPHAS})',
    )
    ablate.add_argument('--no-normalize', action='store_true')
    ablate.add_argument('--out', required=True, help='ablation CSV')
    ablate.set_defaults(func=cmd_ablate)

    bench = subparsers.add_parser(
        'bench', help='compare methods, or time them against n_train',
    )
    add_source_flags(bench)
    bench.add_argument(
        '--methods', type=_method_list,
        help=(
            f'comma-separated (default {DEFAULT_BENCH_METHODS}; '
            'knn is skipped when the manifest has no bank)'
        ),
    )
    bench.add_argument('--alpha', type=float)
    bench.add_argument('--k', type=int)
    bench.add_argument(
        '--repetitions', type=int, default=DEFAULT_REPETITIONS,
    )
    bench.add_argument(
        '--ntr', type=_number_list(int),
        help='time each method at these training-set sizes instead',
    )
    bench.add_argument('--queries', type=int, default=DEFAULT_QUERIES)
    bench.add_argument('--out', required=True, help='report or timing CSV')
    bench.set_defaults(func=cmd_bench, check=check_bench_args)

    gen = subparsers.add_parser(
        'gen-synth', help='write a seeded synthetic dataset and manifest',
    )
    gen.add_argument('--seed', type=int, required=True)
    add_synth_flags(gen)
    gen.add_argument('--dtype', choices=('f32', 'f64'), default='f64')
    gen.add_argument('--out-dir', required=True)
    gen.set_defaults(func=cmd_gen_synth)

    return parser


def check_score_args(
    parser: argparse.ArgumentParser, args: argparse.Namespace,
) -> None:
    method = Method.from_string(args.method)
    if method is Method.KNN:
        if not args.bank:
            parser.error('--method knn requires --bank')
        if not args.features:
            parser.error('--method knn requires --features')
    elif method.uses_logits:
        if not args.logits and not (args.features and args.weights):
            parser.error(
                f'--method {args.method} requires --logits, '
                'or --features with --weights',
            )
    else:
        if not args.features:
            parser.error(f'--method {args.method} requires --features')
        if not args.subspace and not args.weights:
            parser.error(
                f'--method {args.method} requires --subspace or --weights',
            )


def check_bench_args(
    parser: argparse.ArgumentParser, args: argparse.Namespace,
) -> None:
    if args.ntr is not None and args.manifest is not None:
        parser.error('--ntr times synthetic data and needs --seed')


def main(argv: Sequence[str] | None = None) -> int:
    parser = get_parser()
    args = parser.parse_args(argv)
    if getattr(args, 'check', None) is not None:
        args.check(parser, args)

    logging.basicConfig(
        level=(
            logging.WARNING, logging.INFO, logging.DEBUG,
        )[min(args.verbose, 2)],
        format='%(levelname)s %(name)s: %(message)s',
        stream=sys.stderr,
    )

    try:
        return int(args.func(args))
    except ClafrError as exc:
        print(f'clafr-cli {args.command}: {exc}', file=sys.stderr)
        return int(exc.exit_code)
    except OSError as exc:
        print(f'clafr-cli {args.command}: {exc}', file=sys.stderr)
        return int(ExitCode.INPUT)


if __name__ == '__main__':
    raise SystemExit(main())
