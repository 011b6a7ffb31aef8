"""
The adversarial training loop with class-wise calibration and weight
averaging, plus the sweep drivers built on top of it.

Per epoch: minibatch updates at the current class-wise margins, then the
robust train accuracy update, then margin/regularization calibration (used
from the next epoch on), then the averaging gate, then evaluation.
"""
import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from cfa_lab.attacks import AttackConfig, pgd_ce, pgd_kl
from cfa_lab.averaging import AveragedModel, fawa_step
from cfa_lab.config import RunConfig, build_datasets
from cfa_lab.context import run_id
from cfa_lab.data import BINARY_PRESETS, LabeledDataset, SyntheticMulti
from cfa_lab.exceptions import ConfigError
from cfa_lab.extensions.parallel import map_runs
from cfa_lab.metrics import (
    EpochRecord,
    RunHistory,
    evaluate,
    fluctuation_series,
    select_checkpoint,
    window_mean,
    worst_fraction_average,
)
from cfa_lab.nn import Batch, DenseNet, OptState, init_net, sgd_step, start_epoch
from cfa_lab.report import summarize
from cfa_lab.schedules import (
    ClassState,
    at_loss,
    calibrate,
    finish_epoch,
    track_robust_train_accuracy,
    trades_cfa_loss,
)

logger = logging.getLogger('cfa_lab')

# Offsets separating the random streams derived from one run seed
SHUFFLE_OFFSET = 1000
ATTACK_OFFSET = 2000

# delta_auto sets the gate to this share of the baseline's mean worst-class robustness
DELTA_AUTO_SHARE = 0.4


@dataclass
class TrainResult:
    net: DenseNet
    averaged: Optional[AveragedModel]
    history: RunHistory
    config: RunConfig
    class_state: Optional[ClassState] = None

    @property
    def reported_net(self) -> DenseNet:
        if self.averaged is not None and self.averaged.initialized:
            return self.averaged.params
        return self.net


def _with_bounds(cfg: AttackConfig, dataset: LabeledDataset) -> AttackConfig:
    if dataset.domain_bounds is None or cfg.domain_bounds is not None:
        return cfg
    return dataclasses.replace(cfg, lower=dataset.lower, upper=dataset.upper)


def _gate_statistic(cfg: RunConfig, record: EpochRecord) -> float:
    if cfg.averaging.gate_fraction is not None:
        return worst_fraction_average(record, cfg.averaging.gate_fraction)
    return record.worst_robust


def _tracking_pass(
    net: DenseNet, dataset: LabeledDataset, state: ClassState, attack: AttackConfig, batch_size: int, rng: Any
) -> None:
    for start in range(0, len(dataset), batch_size):
        batch = Batch(dataset.features[start : start + batch_size], dataset.labels[start : start + batch_size])
        x_adv = pgd_ce(net, batch, attack, eps=state.eps_for(batch.labels), rng=rng)
        track_robust_train_accuracy(state, batch.labels, net.predict(x_adv))


def resolve_delta(cfg: RunConfig) -> float:
    """Gate threshold as a share of a plain baseline's mean worst-class robustness"""
    baseline = dataclasses.replace(
        cfg,
        cfa=dataclasses.replace(cfg.cfa, ccm=False, ccr=False),
        averaging=dataclasses.replace(cfg.averaging, mode='none', delta_auto=False),
    )
    history = train(baseline).history
    worst = float(np.mean([record.worst_robust for record in history.records]))
    delta = DELTA_AUTO_SHARE * worst
    logger.info('delta_auto: baseline mean worst-class robustness %.4f, gate set to %.4f', worst, delta)
    return delta


def train(cfg: RunConfig) -> TrainResult:
    cfg.validate()
    if cfg.averaging.mode == 'fawa' and cfg.averaging.delta_auto:
        cfg = dataclasses.replace(
            cfg, averaging=dataclasses.replace(cfg.averaging, delta=resolve_delta(cfg), delta_auto=False)
        )

    budget = cfg.budget_config()
    train_set, valid_set, test_set = build_datasets(cfg)
    num_classes = train_set.num_classes

    net = init_net([train_set.dims, *cfg.arch.hidden, num_classes], seed=cfg.seed)
    opt = OptState.for_net(net, cfg.optim.lr, cfg.optim.momentum, cfg.optim.weight_decay, cfg.milestones())
    state = ClassState.create(num_classes, budget)
    averaged = None
    if cfg.averaging.mode != 'none':
        averaged = AveragedModel.track(
            net, decay=cfg.averaging.decay, start_epoch=cfg.averaging_start(), threshold_delta=cfg.averaging.delta
        )

    shuffle_rng = np.random.default_rng(cfg.seed + SHUFFLE_OFFSET)
    attack_rng = np.random.default_rng(cfg.seed + ATTACK_OFFSET)
    train_attack = _with_bounds(cfg.train_attack, train_set)
    eval_attack = cfg.eval_attack
    history = RunHistory(
        config_hash=cfg.fingerprint(),
        seeds={
            'init': cfg.seed,
            'shuffle': cfg.seed + SHUFFLE_OFFSET,
            'attack': cfg.seed + ATTACK_OFFSET,
            'data': cfg.data.seed,
            'eval_attack': eval_attack.seed,
        },
        run_id=run_id.get(),
    )
    logger.info(
        'Training %s (ccm=%s, ccr=%s, averaging=%s) on %d examples, %d classes, %d epochs',
        cfg.method,
        cfg.cfa.ccm,
        cfg.cfa.ccr,
        cfg.averaging.mode,
        len(train_set),
        num_classes,
        cfg.optim.epochs,
    )

    for epoch in range(1, cfg.optim.epochs + 1):
        start_epoch(opt, epoch)
        order = shuffle_rng.permutation(len(train_set))
        losses = []
        for start in range(0, len(order), cfg.optim.batch_size):
            index = order[start : start + cfg.optim.batch_size]
            batch = Batch(train_set.features[index], train_set.labels[index])
            eps = state.eps_for(batch.labels)
            if cfg.method == 'at':
                x_adv = pgd_ce(net, batch, train_attack, eps=eps, rng=attack_rng)
                loss, grads = at_loss(net, x_adv, batch.labels)
            else:
                x_adv = pgd_kl(net, batch, train_attack, eps=eps, rng=attack_rng)
                loss, grads = trades_cfa_loss(
                    net, batch.inputs, x_adv, batch.labels, state.beta_for(batch.labels), normalize=cfg.cfa.ccr
                )
            if cfg.cfa.track_mode == 'online':
                track_robust_train_accuracy(state, batch.labels, net.predict(x_adv))
            sgd_step(net, grads, opt)
            losses.append(loss)

        if cfg.cfa.track_mode == 'pass':
            _tracking_pass(net, train_set, state, train_attack, cfg.optim.batch_size, attack_rng)
        finish_epoch(state)
        calibrate(state, budget, ccm=cfg.cfa.ccm, ccr=cfg.cfa.ccr)
        t, eps_k, beta_k = state.snapshot()

        accepted = None
        worst_val = None
        if averaged is not None:
            if cfg.averaging.mode == 'fawa':
                assert valid_set is not None
                val_record = EpochRecord.from_evaluation(epoch, evaluate(net, valid_set, eval_attack))
                worst_val = _gate_statistic(cfg, val_record)
                averaged, accepted = fawa_step(averaged, net, worst_val, epoch)
            else:
                averaged, accepted = fawa_step(averaged, net, None, epoch)

        extra: Dict[str, Any] = {
            't': t,
            'eps': eps_k,
            'beta': beta_k,
            'fawa_accepted': accepted,
            'worst_val_robust': worst_val,
        }
        raw = EpochRecord.from_evaluation(epoch, evaluate(net, test_set, eval_attack), **extra)
        reported = raw
        if averaged is not None and averaged.initialized:
            reported = EpochRecord.from_evaluation(epoch, evaluate(averaged.params, test_set, eval_attack), **extra)
        history.append(reported, raw)

        logger.info(
            'epoch %d loss %.4f robust %.4f worst %.4f%s',
            epoch,
            float(np.mean(losses)),
            reported.overall_robust,
            reported.worst_robust,
            '' if accepted is None else (' averaged' if accepted else ' skipped'),
        )

    return TrainResult(net=net, averaged=averaged, history=history, config=cfg, class_state=state)


def train_seeds(cfg: RunConfig, seeds: Sequence[int], workers: int = 1) -> List[TrainResult]:
    return map_runs(train, [dataclasses.replace(cfg, seed=seed) for seed in seeds], workers=workers)


def difficulty_order(cfg: RunConfig, result: TrainResult) -> List[int]:
    """Class indices from hardest to easiest"""
    spec = cfg.dataset_spec()
    if isinstance(spec, SyntheticMulti):
        return [int(k) for k in np.argsort(spec.reliability, kind='stable')]
    if cfg.data.preset in BINARY_PRESETS:
        return [1, 0]
    clean = [value if value is not None else 0.0 for value in result.history.raw_records[-1].clean]
    return [int(k) for k in np.argsort(clean, kind='stable')]


def window_bounds(history: RunHistory, size: Optional[int] = None) -> Dict[str, List[int]]:
    """The epoch windows around the selected checkpoint and at the end of training"""
    epochs = [record.epoch for record in history.records]
    size = size or max(1, len(epochs) // 10)
    best = select_checkpoint(history)
    lo = max(epochs[0], min(best - size // 2, epochs[-1] - size + 1))
    return {'best': [lo, lo + size - 1], 'last': [epochs[-1] - size + 1, epochs[-1]]}


@dataclass
class SweepReport:
    name: str
    parameter: str
    columns: List[str]
    rows: List[Dict[str, Any]] = field(default_factory=list)
    runs: Dict[str, List[TrainResult]] = field(default_factory=dict)


def _mean_or_none(values: Sequence[Optional[float]]) -> Optional[float]:
    present = [value for value in values if value is not None]
    return float(np.mean(present)) if present else None


def _sweep(
    name: str,
    parameter: str,
    values: Sequence[float],
    configs: Sequence[RunConfig],
    seeds: Sequence[int],
    workers: int,
) -> Dict[str, List[TrainResult]]:
    if len(set(values)) != len(values):
        raise ConfigError(f'{name}: duplicate sweep values in {list(values)}')
    flat = [dataclasses.replace(cfg, seed=seed) for cfg in configs for seed in seeds]
    logger.info('%s: %d values x %d seeds', name, len(values), len(seeds))
    results = map_runs(train, flat, workers=workers)
    grouped: Dict[str, List[TrainResult]] = {}
    for index, value in enumerate(values):
        grouped[repr(value)] = results[index * len(seeds) : (index + 1) * len(seeds)]
    return grouped


def sweep_margin(
    base: RunConfig, eps_values: Sequence[float], seeds: Sequence[int] = (0,), workers: int = 1
) -> SweepReport:
    """Class-wise robustness of plain training at each training margin"""
    if len(eps_values) < 2:
        raise ConfigError('A margin sweep needs at least two margins')
    configs = [dataclasses.replace(base, budget=dataclasses.replace(base.budget, eps_base=eps)) for eps in eps_values]
    grouped = _sweep('sweep-margin', 'eps', eps_values, configs, seeds, workers)
    report = SweepReport(
        'sweep-margin', 'eps', ['eps', 'class', 'best_window_robust', 'last_window_robust', 'best_robust'], runs=grouped
    )
    for eps, results in zip(eps_values, grouped.values()):
        report.rows.extend(_class_rows('eps', eps, results))
    return report


def sweep_beta(
    base: RunConfig, beta_values: Sequence[float], seeds: Sequence[int] = (0,), workers: int = 1
) -> SweepReport:
    """Class-wise clean and robust accuracy of TRADES at each regularization weight"""
    if base.method != 'trades':
        raise ConfigError('A regularization sweep requires method=trades')
    if not beta_values:
        raise ConfigError('A regularization sweep needs at least one beta')
    configs = [
        dataclasses.replace(base, budget=dataclasses.replace(base.budget, beta_base=beta)) for beta in beta_values
    ]
    grouped = _sweep('sweep-beta', 'beta', beta_values, configs, seeds, workers)
    report = SweepReport(
        'sweep-beta',
        'beta',
        ['beta', 'class', 'best_window_clean', 'best_window_robust', 'last_clean', 'last_robust'],
        runs=grouped,
    )
    for beta, results in zip(beta_values, grouped.values()):
        num_classes = len(results[0].history.records[0].clean)
        for k in range(num_classes):
            best_clean, best_robust, last_clean, last_robust = [], [], [], []
            for result in results:
                window = window_bounds(result.history)['best']
                clean, robust = window_mean(result.history, *window)
                best_clean.append(clean[k])
                best_robust.append(robust[k])
                last_clean.append(result.history.records[-1].clean[k])
                last_robust.append(result.history.records[-1].robust[k])
            report.rows.append(
                {
                    'beta': beta,
                    'class': k,
                    'best_window_clean': _mean_or_none(best_clean),
                    'best_window_robust': _mean_or_none(best_robust),
                    'last_clean': _mean_or_none(last_clean),
                    'last_robust': _mean_or_none(last_robust),
                }
            )
    return report


def _class_rows(parameter: str, value: float, results: Sequence[TrainResult]) -> List[Dict[str, Any]]:
    num_classes = len(results[0].history.records[0].robust)
    rows = []
    for k in range(num_classes):
        best_window, last_window, best = [], [], []
        for result in results:
            bounds = window_bounds(result.history)
            best_window.append(window_mean(result.history, *bounds['best'])[1][k])
            last_window.append(window_mean(result.history, *bounds['last'])[1][k])
            best.append(result.history.record_at(select_checkpoint(result.history)).robust[k])
        rows.append(
            {
                parameter: value,
                'class': k,
                'best_window_robust': _mean_or_none(best_window),
                'last_window_robust': _mean_or_none(last_window),
                'best_robust': _mean_or_none(best),
            }
        )
    return rows


def sweep_budget(
    base: RunConfig, parameter: str, values: Sequence[float], seeds: Sequence[int] = (0,), workers: int = 1
) -> SweepReport:
    """
    Average and worst-class robustness across base budgets, next to the uncalibrated baseline.

    ``lambda1`` needs the calibrated margin enabled, ``lambda2`` the
    calibrated regularization.
    """
    if parameter not in ('lambda1', 'lambda2'):
        raise ConfigError(f'Budget sweeps take lambda1 or lambda2, got {parameter!r}')
    if parameter == 'lambda1' and not base.cfa.ccm:
        raise ConfigError('A lambda1 sweep needs cfa.ccm enabled')
    if parameter == 'lambda2' and not base.cfa.ccr:
        raise ConfigError('A lambda2 sweep needs cfa.ccr enabled')
    if not values:
        raise ConfigError('A budget sweep needs at least one value')

    baseline = dataclasses.replace(base, cfa=dataclasses.replace(base.cfa, ccm=False, ccr=False))
    configs = [baseline] + [
        dataclasses.replace(base, budget=dataclasses.replace(base.budget, **{parameter: value})) for value in values
    ]
    labels: List[Any] = ['baseline', *values]
    grouped = _sweep(f'sweep-{parameter}', parameter, labels, configs, seeds, workers)
    report = SweepReport(
        f'sweep-{parameter}',
        parameter,
        [parameter, 'avg_robust', 'worst_robust', 'class_eps', 'class_beta'],
        runs=grouped,
    )
    for label, results in zip(labels, grouped.values()):
        summaries = [summarize(result.history)['best'] for result in results]
        final = [result.history.records[-1] for result in results]
        report.rows.append(
            {
                parameter: label,
                'avg_robust': float(np.mean([summary['avg_robust'] for summary in summaries])),
                'worst_robust': float(np.mean([summary['worst_robust'] for summary in summaries])),
                'class_eps': np.mean([record.eps for record in final], axis=0).round(6).tolist(),
                'class_beta': np.mean([record.beta for record in final], axis=0).round(6).tolist(),
            }
        )
    return report


def check_run(result: TrainResult) -> List[str]:
    """
    Invariant suite over a finished run; returns one message per failure.

    Robust accuracy never exceeds clean accuracy, calibrated margins stay
    within their budget range, calibrated runs give the hardest class a
    strictly smaller margin than the easiest, and the averaged model
    fluctuates less in worst-class robustness than the raw trajectory.
    Every parameter of the live and reported models must be finite.
    """
    cfg = result.config
    budget = cfg.budget_config()
    history = result.history
    failures = []

    nets = {'live': result.net}
    if result.reported_net is not result.net:
        nets['averaged'] = result.reported_net
    for label, net in nets.items():
        if net is not None and not net.is_finite():
            failures.append(f'{label} model has non-finite parameters')

    # without averaging the raw and reported records are the same objects
    distinct = {id(record): record for record in history.records + history.raw_records}
    for record in distinct.values():
        for k, (clean, robust) in enumerate(zip(record.clean, record.robust)):
            if clean is not None and robust is not None and robust > clean:
                failures.append(f'epoch {record.epoch} class {k}: robust {robust:.4f} > clean {clean:.4f}')

    last = history.records[-1]
    low, high = budget.lambda1 * budget.eps_base, (budget.lambda1 + 1) * budget.eps_base
    if cfg.cfa.ccm:
        if any(not low - 1e-12 <= eps <= high + 1e-12 for eps in last.eps):
            failures.append(f'margins {last.eps} outside [{low:.4f}, {high:.4f}]')
        order = difficulty_order(cfg, result)
        if not last.eps[order[0]] < last.eps[order[-1]]:
            failures.append(
                f'hardest class {order[0]} margin {last.eps[order[0]]:.4f} '
                f'is not below easiest class {order[-1]} margin {last.eps[order[-1]]:.4f}'
            )

    if cfg.averaging.mode != 'none' and len(history) > 2:
        start = cfg.averaging_start()
        averaged = [record for record in history.records if record.epoch >= start]
        raw = [record for record in history.raw_records if record.epoch >= start]
        if len(averaged) > 1:
            smooth = float(np.mean(fluctuation_series(averaged)))
            rough = float(np.mean(fluctuation_series(raw)))
            if not smooth < rough:
                failures.append(f'averaged fluctuation {smooth:.4f} is not below raw fluctuation {rough:.4f}')

    for failure in failures:
        logger.warning('Check failed: %s', failure)
    return failures
