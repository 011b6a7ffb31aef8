import argparse
import csv
import dataclasses
import json
import logging
import sys
from logging.config import dictConfig
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from cfa_lab.checkpoints import save_checkpoint
from cfa_lab.config import RunConfig, load_config
from cfa_lab.exceptions import ConfigError, DatasetFormatError, ProbabilityError, ShapeError
from cfa_lab.report import report, report_seeds, write_sweep
from cfa_lab.runs import RunScope
from cfa_lab.toy_model import (
    DEFAULT_DELTA_W,
    SWEEP_HEADER,
    THEORY_PRESET,
    VISUALIZATION_PRESET,
    check_theorems,
    default_eps_grid,
    default_w_grid,
    draw_params,
    numeric_optimal_w,
    optimal_w_clean,
    optimal_w_train,
    oracle_mismatches,
    sample_per_class,
    sweep_rows,
)
from cfa_lab.training import check_run, sweep_beta, sweep_budget, sweep_margin, train, train_seeds

logger = logging.getLogger('cfa_lab')

EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2

DEFAULT_MARGINS = [0.02, 0.04, 0.06, 0.08, 0.1, 0.12, 0.14, 0.16]
DEFAULT_BETAS = [0.0, 1.0, 2.0, 4.0, 6.0, 8.0]
DEFAULT_BUDGETS = [0.3, 0.4, 0.5, 0.6, 0.7]

# Closed-form optima must match a bounded numeric search this closely
ARGMAX_TOLERANCE = 1e-3


def configure_logging(verbose: bool = False) -> None:
    dictConfig(
        {
            'version': 1,
            'disable_existing_loggers': False,
            'filters': {
                'run_id': {'()': 'cfa_lab.RunIdFilter'},
                'sweep_tracing': {'()': 'cfa_lab.SweepTracingIdsFilter', 'uuid_length': 8},
            },
            'formatters': {
                'run': {
                    'class': 'logging.Formatter',
                    'format': '[%(run_id)s] %(levelname)s %(message)s',
                },
            },
            'handlers': {
                'console': {
                    'class': 'logging.StreamHandler',
                    'filters': ['run_id', 'sweep_tracing'],
                    'formatter': 'run',
                },
            },
            'loggers': {
                'cfa_lab': {
                    'handlers': ['console'],
                    'level': 'DEBUG' if verbose else 'INFO',
                    'propagate': False,
                },
            },
        }
    )


def _floats(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f'Expected comma-separated numbers, got {text!r}') from None


def _ints(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f'Expected comma-separated integers, got {text!r}') from None


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--config', type=Path, help='JSON run configuration')
    parser.add_argument(
        '--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE', help='Override a config key'
    )
    seeds = parser.add_mutually_exclusive_group()
    seeds.add_argument('--seed', type=int, help='Run seed (defaults to the config seed)')
    seeds.add_argument('--seeds', type=_ints, help='Comma-separated run seeds')
    parser.add_argument('--workers', type=int, default=1, help='Worker processes for independent runs')


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--out', type=Path, default=Path('results'), help='Output directory')
    parser.add_argument('--check', action='store_true', help='Exit nonzero if an invariant check fails')
    parser.add_argument('--run-id', help='Run (or sweep) ID; a new one is generated if missing or invalid')
    parser.add_argument('--verbose', action='store_true', help='Log at DEBUG level')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='cfa-lab', description='Class-wise calibrated fair adversarial training')
    commands = parser.add_subparsers(dest='command', required=True)

    cmd = commands.add_parser('train', help='Train one configuration, optionally over several seeds')
    _add_run_options(cmd)
    _add_common(cmd)
    cmd.add_argument('--save-model', action='store_true', help='Also write the reported model as a checkpoint')

    cmd = commands.add_parser('sweep-margin', help='Class-wise robustness across training margins')
    _add_run_options(cmd)
    _add_common(cmd)
    cmd.add_argument('--values', type=_floats, default=DEFAULT_MARGINS, help='Comma-separated margins')

    cmd = commands.add_parser('sweep-beta', help='Class-wise accuracy across TRADES regularization weights')
    _add_run_options(cmd)
    _add_common(cmd)
    cmd.add_argument('--values', type=_floats, default=DEFAULT_BETAS, help='Comma-separated betas')

    cmd = commands.add_parser('sweep-budget', help='Average and worst-class robustness across base budgets')
    _add_run_options(cmd)
    _add_common(cmd)
    cmd.add_argument('--parameter', choices=('lambda1', 'lambda2'), default='lambda1')
    cmd.add_argument('--values', type=_floats, default=DEFAULT_BUDGETS, help='Comma-separated budgets')

    cmd = commands.add_parser('toy-verify', help='Check the toy-model statements and the closed forms')
    _add_common(cmd)
    cmd.add_argument('--seed', type=int, default=0)
    cmd.add_argument('--random', type=int, default=20, help='Random parameter sets checked besides the preset')
    cmd.add_argument('--mc-samples', type=int, default=1_000_000, help='Sampling oracle size (0 skips it)')
    cmd.add_argument(
        '--delta-w', type=float, default=DEFAULT_DELTA_W, help='Finite-difference step of the monotonicity checks'
    )

    cmd = commands.add_parser('toy-sweep', help='Class-wise clean/robust accuracy curves of the toy model')
    _add_common(cmd)
    cmd.add_argument('--preset', choices=('theory', 'visualization'), default='theory')
    cmd.add_argument('--samples', type=int, default=0, help='Also write this many sampled points per class')
    cmd.add_argument('--seed', type=int, default=0)
    return parser


def _seeds(args: argparse.Namespace, cfg: RunConfig) -> List[int]:
    if args.seeds:
        return list(args.seeds)
    return [args.seed if args.seed is not None else cfg.seed]


def run_train(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.overrides)
    seeds = _seeds(args, cfg)
    if len(seeds) == 1:
        with RunScope(supplied_id=args.run_id):
            results = [train(dataclasses.replace(cfg, seed=seeds[0]))]
        report(results[0].history, args.out, config=results[0].config)
    else:
        with RunScope(supplied_id=args.run_id, sweep=True):
            results = train_seeds(cfg, seeds, workers=args.workers)
        report_seeds([result.history for result in results], seeds, args.out, cfg)

    if args.save_model:
        for seed, result in zip(seeds, results):
            target = args.out if len(seeds) == 1 else args.out / f'seed-{seed}'
            save_checkpoint(result.reported_net, target / 'model')

    failures = [f'seed {seed}: {message}' for seed, result in zip(seeds, results) for message in check_run(result)]
    return _finish(args, failures)


def run_sweep(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.overrides)
    seeds = _seeds(args, cfg)
    with RunScope(supplied_id=args.run_id, sweep=True):
        if args.command == 'sweep-margin':
            sweep = sweep_margin(cfg, args.values, seeds, workers=args.workers)
        elif args.command == 'sweep-beta':
            sweep = sweep_beta(cfg, args.values, seeds, workers=args.workers)
        else:
            sweep = sweep_budget(cfg, args.parameter, args.values, seeds, workers=args.workers)
    write_sweep(sweep, args.out)
    failures = [
        f'{sweep.parameter}={value} seed {result.config.seed}: {message}'
        for value, results in sweep.runs.items()
        for result in results
        for message in check_run(result)
    ]
    return _finish(args, failures)


def _argmax_failures() -> List[str]:
    params = THEORY_PRESET
    oracles = {
        'w*(+1)': (optimal_w_clean(params, 1), numeric_optimal_w(params, 1)),
        'w*(-1)': (optimal_w_clean(params, -1), numeric_optimal_w(params, -1)),
        'w_hat(0)': (optimal_w_train(params, 0.0), numeric_optimal_w(params)),
    }
    failures = []
    for name, (closed, numeric) in oracles.items():
        logger.info('%s: closed form %.5f, numeric %.5f', name, closed, numeric)
        if abs(closed - numeric) > ARGMAX_TOLERANCE:
            failures.append(f'{name}: closed form {closed:.5f} vs numeric {numeric:.5f}')
    return failures


def run_toy_verify(args: argparse.Namespace) -> int:
    rng = np.random.default_rng(args.seed)
    parameter_sets = [THEORY_PRESET] + [draw_params(rng) for _ in range(args.random)]
    reports = []
    failures: List[str] = []
    for params in parameter_sets:
        theorem_report = check_theorems(params, default_w_grid(), args.delta_w, default_eps_grid(params))
        reports.append(theorem_report.as_dict())
        failures.extend(
            f'{result.name} at {result.location}' for result in theorem_report.results.values() if not result.passed
        )
    failures.extend(_argmax_failures())

    if args.mc_samples:
        w_grid = [0.5 * i for i in range(1, 11)]
        eps_grid = [0.0, THEORY_PRESET.eta, THEORY_PRESET.robust_eps]
        for mismatch in oracle_mismatches(THEORY_PRESET, w_grid, eps_grid, n=args.mc_samples, seed=args.seed):
            failures.append(
                f'oracle w={mismatch.w:g} eps={mismatch.eval_eps:g} y={mismatch.y}: '
                f'{mismatch.closed_form:.5f} vs {mismatch.estimate.value:.5f}'
            )

    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / 'theorems.json'
    payload: Dict[str, Any] = {'passed': not failures, 'failures': failures, 'reports': reports}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + '\n')
    logger.info('Checked %d parameter sets, wrote %s', len(parameter_sets), path)
    return _finish(args, failures)


def run_toy_sweep(args: argparse.Namespace) -> int:
    params = THEORY_PRESET if args.preset == 'theory' else VISUALIZATION_PRESET
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / 'toy_sweep.csv'
    with open(path, 'w', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(SWEEP_HEADER)
        for w, eps, y, kind, value in sweep_rows(params, default_w_grid()):
            writer.writerow([f'{w:g}', f'{eps:g}', y, kind, f'{value:.6f}'])

    if args.samples:
        sample = sample_per_class(VISUALIZATION_PRESET, args.samples, args.seed)
        with open(args.out / 'toy_samples.csv', 'w', newline='') as handle:
            writer = csv.writer(handle, lineterminator='\n')
            writer.writerow(['class'] + [f'x{i + 1}' for i in range(sample.x.shape[1])])
            for y, row in zip(sample.y, sample.x):
                writer.writerow([int(y)] + [repr(float(value)) for value in row])
    logger.info('Wrote %s', path)
    return 0


def _finish(args: argparse.Namespace, failures: Sequence[str]) -> int:
    if args.check and failures:
        for failure in failures:
            print(f'check failed: {failure}', file=sys.stderr)
        return EXIT_CHECK_FAILED
    return 0


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    'train': run_train,
    'sweep-margin': run_sweep,
    'sweep-beta': run_sweep,
    'sweep-budget': run_sweep,
    'toy-verify': run_toy_verify,
    'toy-sweep': run_toy_sweep,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DatasetFormatError, ShapeError, ProbabilityError, OSError) as exc:
        print(f'error: {exc}', file=sys.stderr)
        return EXIT_USAGE
