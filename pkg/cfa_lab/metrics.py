import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from cfa_lab.attacks import AttackConfig, pgd_ce
from cfa_lab.data import LabeledDataset
from cfa_lab.nn import Batch, DenseNet

logger = logging.getLogger('cfa_lab')


@dataclass
class Evaluation:
    """Per-class clean and robust accuracy; ``None`` marks a class absent from the data"""

    counts: List[int]
    clean: List[Optional[float]]
    robust: List[Optional[float]]
    overall_clean: float
    overall_robust: float


def evaluate(net: DenseNet, dataset: LabeledDataset, attack_cfg: AttackConfig, batch_size: int = 512) -> Evaluation:
    """
    Clean accuracy and PGD-robust accuracy per class.

    An example counts as robust only if it is also classified correctly
    at the clean point, which lies in every ball.
    """
    rng = np.random.default_rng(attack_cfg.seed)
    cfg = attack_cfg
    if dataset.domain_bounds is not None and cfg.domain_bounds is None:
        cfg = replace(cfg, lower=dataset.lower, upper=dataset.upper)

    clean_hits = np.zeros(len(dataset), dtype=bool)
    robust_hits = np.zeros(len(dataset), dtype=bool)
    for start in range(0, len(dataset), batch_size):
        stop = min(start + batch_size, len(dataset))
        batch = Batch(dataset.features[start:stop], dataset.labels[start:stop])
        clean_hits[start:stop] = net.predict(batch.inputs) == batch.labels
        x_adv = pgd_ce(net, batch, cfg, rng=rng)
        robust_hits[start:stop] = clean_hits[start:stop] & (net.predict(x_adv) == batch.labels)

    counts = np.bincount(dataset.labels, minlength=dataset.num_classes)
    clean: List[Optional[float]] = []
    robust: List[Optional[float]] = []
    for k, count in enumerate(counts):
        if count == 0:
            clean.append(None)
            robust.append(None)
            continue
        mask = dataset.labels == k
        clean.append(float(clean_hits[mask].mean()))
        robust.append(float(robust_hits[mask].mean()))
    return Evaluation(
        counts=counts.tolist(),
        clean=clean,
        robust=robust,
        overall_clean=float(clean_hits.mean()),
        overall_robust=float(robust_hits.mean()),
    )


@dataclass
class EpochRecord:
    epoch: int
    clean: List[Optional[float]]
    robust: List[Optional[float]]
    overall_clean: float
    overall_robust: float
    t: List[float] = field(default_factory=list)
    eps: List[float] = field(default_factory=list)
    beta: List[float] = field(default_factory=list)
    fawa_accepted: Optional[bool] = None
    worst_val_robust: Optional[float] = None

    @classmethod
    def from_evaluation(cls, epoch: int, evaluation: Evaluation, **extra: object) -> 'EpochRecord':
        return cls(
            epoch=epoch,
            clean=evaluation.clean,
            robust=evaluation.robust,
            overall_clean=evaluation.overall_clean,
            overall_robust=evaluation.overall_robust,
            **extra,  # type: ignore[arg-type]
        )

    def present_robust(self) -> List[Tuple[int, float]]:
        return [(k, value) for k, value in enumerate(self.robust) if value is not None]

    @property
    def worst_robust(self) -> float:
        return min(value for _, value in self.present_robust())

    @property
    def worst_clean(self) -> float:
        return min(value for value in self.clean if value is not None)


@dataclass
class RunHistory:
    """
    Epoch records of the reported model (the averaged one when averaging is
    enabled) and of the raw live trajectory.
    """

    records: List[EpochRecord] = field(default_factory=list)
    raw_records: List[EpochRecord] = field(default_factory=list)
    config_hash: str = ''
    seeds: Dict[str, int] = field(default_factory=dict)
    run_id: Optional[str] = None

    def append(self, record: EpochRecord, raw: Optional[EpochRecord] = None) -> None:
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ValueError(f'Epoch {record.epoch} does not follow epoch {self.records[-1].epoch}')
        self.records.append(record)
        self.raw_records.append(raw if raw is not None else record)

    def record_at(self, epoch: int) -> EpochRecord:
        for record in self.records:
            if record.epoch == epoch:
                return record
        raise KeyError(epoch)

    def __len__(self) -> int:
        return len(self.records)


def worst_and_average(record: EpochRecord) -> Tuple[float, float, int]:
    """Mean and minimum robust accuracy over present classes, with the (lowest) argmin class"""
    present = record.present_robust()
    if not present:
        raise ValueError(f'Epoch {record.epoch} has no classes')
    worst_class, worst = min(present, key=lambda item: (item[1], item[0]))
    average = sum(value for _, value in present) / len(present)
    return average, worst, worst_class


def worst_fraction_average(record: EpochRecord, fraction: float) -> float:
    """Mean robust accuracy of the worst ``fraction`` of present classes (at least one class)"""
    if not 0 < fraction <= 1:
        raise ValueError(f'Fraction must lie in (0, 1], got {fraction}')
    values = sorted(value for _, value in record.present_robust())
    count = max(1, math.ceil(fraction * len(values) - 1e-9))
    return sum(values[:count]) / count


def _worst_series(history: Union[RunHistory, Sequence[EpochRecord]]) -> List[float]:
    records = history.records if isinstance(history, RunHistory) else history
    return [record.worst_robust for record in records]


def fluctuation_series(history: Union[RunHistory, Sequence[EpochRecord]]) -> List[float]:
    """``|worst_t - worst_{t-1}|`` over consecutive epochs"""
    worst = _worst_series(history)
    if len(worst) < 2:
        raise ValueError('Need at least two epochs to measure fluctuation')
    return [abs(current - previous) for previous, current in zip(worst, worst[1:])]


def select_checkpoint(history: RunHistory) -> int:
    """Epoch with the highest overall + worst-class robust accuracy; the earliest wins ties"""
    if not history.records:
        raise ValueError('Cannot select a checkpoint from an empty history')
    best = history.records[0]
    for record in history.records[1:]:
        if record.overall_robust + record.worst_robust > best.overall_robust + best.worst_robust:
            best = record
    return best.epoch


def class_variance(record: EpochRecord) -> float:
    """Population variance of class-wise robust accuracy"""
    values = np.array([value for _, value in record.present_robust()])
    if len(values) < 2:
        raise ValueError('Class variance needs at least two classes')
    # shifting by one sample keeps equal accuracies at exactly zero
    return float(np.var(values - values[0]))


def window_mean(history: RunHistory, start: int, stop: int) -> Tuple[List[Optional[float]], List[Optional[float]]]:
    """Per-class clean and robust accuracy averaged over epochs ``start..stop`` inclusive"""
    window = [record for record in history.records if start <= record.epoch <= stop]
    if not window:
        raise ValueError(f'No epochs in window [{start}, {stop}]')

    def _mean(column: List[List[Optional[float]]]) -> List[Optional[float]]:
        means: List[Optional[float]] = []
        for values in zip(*column):
            present = [value for value in values if value is not None]
            means.append(sum(present) / len(present) if present else None)
        return means

    return _mean([record.clean for record in window]), _mean([record.robust for record in window])


def aggregate_seeds(summaries: Sequence[Dict[str, float]]) -> Dict[str, Dict[str, float]]:
    """Mean and (population) standard deviation of each statistic across seeds"""
    if not summaries:
        raise ValueError('Nothing to aggregate')
    keys = summaries[0].keys()
    return {
        key: {
            'mean': float(np.mean([summary[key] for summary in summaries])),
            'std': float(np.std([summary[key] for summary in summaries])),
        }
        for key in keys
    }
