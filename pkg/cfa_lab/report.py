import csv
import json
import logging
from pathlib import Path
from typing import TYPE_CHECKING, Any, Dict, List, Optional, Sequence, Union

from cfa_lab.metrics import RunHistory, aggregate_seeds, class_variance, select_checkpoint, worst_and_average

if TYPE_CHECKING:
    from cfa_lab.attacks import AttackConfig
    from cfa_lab.config import RunConfig
    from cfa_lab.training import SweepReport

logger = logging.getLogger('cfa_lab')

METRICS_HEADER = ('epoch', 'class', 'clean', 'robust', 't_k', 'eps_k', 'beta_k')
AVERAGING_HEADER = ('epoch', 'worst_val_robust', 'fawa_accepted')

PathLike = Union[str, Path]


def _fmt(value: Any) -> str:
    if value is None:
        return ''
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return f'{value:.6f}'
    if isinstance(value, (list, tuple)):
        return ';'.join(_fmt(item) for item in value)
    return str(value)


def _at(values: List[float], k: int) -> Optional[float]:
    return values[k] if k < len(values) else None


def _block(history: RunHistory, epoch: int) -> Dict[str, Any]:
    record = history.record_at(epoch)
    average, worst, worst_class = worst_and_average(record)
    block = {
        'epoch': epoch,
        'avg_clean': record.overall_clean,
        'worst_clean': record.worst_clean,
        'avg_robust': record.overall_robust,
        'worst_robust': worst,
        'worst_class': worst_class,
        'class_mean_robust': average,
    }
    if len(record.present_robust()) > 1:
        block['class_variance'] = class_variance(record)
    return block


def summarize(history: RunHistory) -> Dict[str, Dict[str, Any]]:
    """Best (per checkpoint selection) and last epoch, each with average and worst-class accuracy"""
    return {'best': _block(history, select_checkpoint(history)), 'last': _block(history, history.records[-1].epoch)}


def _write_json(path: Path, payload: Any) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + '\n')


def write_metrics(history: RunHistory, path: PathLike) -> Path:
    """One row per epoch and class"""
    path = Path(path)
    with open(path, 'w', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(METRICS_HEADER)
        for record in history.records:
            for k in range(len(record.clean)):
                writer.writerow(
                    [
                        record.epoch,
                        k,
                        _fmt(record.clean[k]),
                        _fmt(record.robust[k]),
                        _fmt(_at(record.t, k)),
                        _fmt(_at(record.eps, k)),
                        _fmt(_at(record.beta, k)),
                    ]
                )
    return path


def write_averaging(history: RunHistory, path: PathLike) -> Optional[Path]:
    """Gate decisions per epoch; nothing is written for runs without averaging"""
    if all(record.fawa_accepted is None for record in history.records):
        return None
    path = Path(path)
    with open(path, 'w', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(AVERAGING_HEADER)
        for record in history.records:
            writer.writerow([record.epoch, _fmt(record.worst_val_robust), _fmt(record.fawa_accepted)])
    return path


def report(
    history: RunHistory,
    out: PathLike,
    config: 'Optional[RunConfig]' = None,
    eval_attack: 'Optional[AttackConfig]' = None,
) -> List[Path]:
    """
    Write the result files of one run into ``out``.

    Output depends only on the history and config, so rewriting a report
    from the same run is byte-identical.
    """
    if not history.records:
        raise ValueError('Cannot report an empty history')
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    written = [write_metrics(history, out / 'metrics.csv')]
    averaging = write_averaging(history, out / 'averaging.csv')
    if averaging is not None:
        written.append(averaging)

    summary: Dict[str, Any] = dict(summarize(history))
    summary['config_hash'] = history.config_hash
    summary['seeds'] = history.seeds
    summary['run_id'] = history.run_id
    if eval_attack is None and config is not None:
        eval_attack = config.eval_attack
    if eval_attack is not None:
        summary['eval_attack'] = eval_attack.provenance()
    _write_json(out / 'summary.json', summary)
    written.append(out / 'summary.json')

    if config is not None:
        _write_json(out / 'config.json', config.as_dict())
        written.append(out / 'config.json')
    logger.info('Wrote %s', ', '.join(path.name for path in written))
    return written


def report_seeds(histories: Sequence[RunHistory], seeds: Sequence[int], out: PathLike, config: 'RunConfig') -> Path:
    """Per-seed reports under ``seed-<n>/`` plus mean and std of the summary statistics"""
    out = Path(out)
    per_seed = []
    for seed, history in zip(seeds, histories):
        report(history, out / f'seed-{seed}', config=config)
        per_seed.append(summarize(history))

    aggregate = {
        block: aggregate_seeds([{k: v for k, v in summary[block].items() if k != 'epoch'} for summary in per_seed])
        for block in ('best', 'last')
    }
    path = out / 'aggregate.json'
    out.mkdir(parents=True, exist_ok=True)
    _write_json(path, {'seeds': list(seeds), 'config_hash': config.fingerprint(), **aggregate})
    return path


def write_sweep(sweep: 'SweepReport', out: PathLike) -> Path:
    """The consolidated sweep table as ``<name>.csv``"""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f'{sweep.name}.csv'
    with open(path, 'w', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(sweep.columns)
        for row in sweep.rows:
            writer.writerow([_fmt(row.get(column)) for column in sweep.columns])
    logger.info('Wrote %s (%d rows)', path, len(sweep.rows))
    return path
