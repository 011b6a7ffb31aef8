import numpy as np
import pytest

from cfa_lab.attacks import AttackConfig
from cfa_lab.data import LabeledDataset, SyntheticBinary, generate
from cfa_lab.metrics import (
    EpochRecord,
    RunHistory,
    aggregate_seeds,
    class_variance,
    evaluate,
    fluctuation_series,
    select_checkpoint,
    window_mean,
    worst_and_average,
    worst_fraction_average,
)
from cfa_lab.nn import DenseLayer, DenseNet, init_net
from cfa_lab.toy_model import THEORY_PRESET, class_accuracy


def _record(epoch, robust, overall_robust=None, clean=None):
    present = [value for value in robust if value is not None]
    return EpochRecord(
        epoch=epoch,
        clean=clean or [1.0] * len(robust),
        robust=robust,
        overall_clean=1.0,
        overall_robust=overall_robust if overall_robust is not None else float(np.mean(present)),
    )


def _history(records):
    history = RunHistory()
    for record in records:
        history.append(record)
    return history


@pytest.fixture()
def dataset():
    rng = np.random.default_rng(0)
    return LabeledDataset(rng.normal(size=(300, 4)), rng.integers(0, 3, size=300), 3)


def test_zero_budget_makes_robust_equal_clean(dataset):
    net = init_net([4, 8, 3], seed=1)
    evaluation = evaluate(net, dataset, AttackConfig(eps=0.0, steps=5))
    assert evaluation.robust == evaluation.clean
    assert evaluation.overall_robust == evaluation.overall_clean


def test_robust_never_exceeds_clean(dataset):
    net = init_net([4, 8, 3], seed=2)
    evaluation = evaluate(net, dataset, AttackConfig(eps=0.5, steps=5), batch_size=64)
    for clean, robust in zip(evaluation.clean, evaluation.robust):
        assert robust <= clean
    assert sum(evaluation.counts) == len(dataset)


def test_constant_classifier(dataset):
    net = DenseNet([DenseLayer(np.zeros((3, 4)), np.array([0.0, 1.0, 0.0]), 'identity')])
    evaluation = evaluate(net, dataset, AttackConfig(eps=0.1, steps=2))
    assert evaluation.clean == [0.0, 1.0, 0.0]


def test_absent_class_is_reported_as_none():
    rng = np.random.default_rng(0)
    data = LabeledDataset(rng.normal(size=(20, 4)), np.zeros(20, dtype=np.int64), 3)
    evaluation = evaluate(init_net([4, 3], seed=0), data, AttackConfig(steps=1))
    assert evaluation.clean[1] is None
    assert evaluation.robust[2] is None


def test_toy_linear_network_matches_closed_form():
    w = 1.5
    data = generate(SyntheticBinary(THEORY_PRESET, 200_000), seed=4)
    # class 0 is y=+1; its logit is the toy score, class 1 sits at zero
    weight = np.array([[1.0, 1.0 / w], [0.0, 0.0]])
    net = DenseNet([DenseLayer(weight, np.zeros(2), 'identity')])
    evaluation = evaluate(net, data, AttackConfig(eps=0.0, steps=0))
    for k, y in enumerate((1, -1)):
        exact = class_accuracy(THEORY_PRESET, y, w)
        stderr = np.sqrt(exact * (1 - exact) / evaluation.counts[k])
        assert abs(evaluation.clean[k] - exact) < 4 * stderr


def test_worst_and_average():
    average, worst, worst_class = worst_and_average(_record(1, [0.5, 0.2, 0.4]))
    assert average == pytest.approx(0.3667, abs=1e-4)
    assert (worst, worst_class) == (0.2, 1)
    assert worst_and_average(_record(1, [0.3, 0.3]))[:2] == (0.3, 0.3)
    assert worst_and_average(_record(1, [0.4, 0.1, 0.1]))[2] == 1


def test_worst_and_average_skips_absent_classes():
    average, worst, worst_class = worst_and_average(_record(1, [0.5, None, 0.3]))
    assert (average, worst) == pytest.approx((0.4, 0.3))
    assert worst_class == 2


@pytest.mark.parametrize(('fraction', 'expected'), [(0.25, 0.1), (0.5, 0.15), (1.0, 0.35)])
def test_worst_fraction_average(fraction, expected):
    assert worst_fraction_average(_record(1, [0.6, 0.1, 0.5, 0.2]), fraction) == pytest.approx(expected)


def test_worst_fraction_rejects_bad_fraction():
    with pytest.raises(ValueError):
        worst_fraction_average(_record(1, [0.5, 0.5]), 0.0)


def test_fluctuation_series():
    history = _history([_record(108, [0.9, 0.235]), _record(110, [0.9, 0.281])])
    assert fluctuation_series(history) == pytest.approx([0.046])
    constant = _history([_record(e, [0.3, 0.4]) for e in range(1, 5)])
    assert fluctuation_series(constant) == [0.0, 0.0, 0.0]
    with pytest.raises(ValueError):
        fluctuation_series(_history([_record(1, [0.3, 0.4])]))


def test_select_checkpoint_prefers_the_fairer_epoch():
    history = _history([_record(108, [0.9, 0.235], 0.532), _record(110, [0.9, 0.281], 0.526)])
    assert select_checkpoint(history) == 110


def test_select_checkpoint_ties_and_single_epoch():
    assert select_checkpoint(_history([_record(3, [0.5, 0.2])])) == 3
    history = _history([_record(1, [0.5, 0.2], 0.4), _record(2, [0.6, 0.2], 0.4)])
    assert select_checkpoint(history) == 1
    with pytest.raises(ValueError):
        select_checkpoint(RunHistory())


def test_history_rejects_non_increasing_epochs():
    history = _history([_record(2, [0.5, 0.5])])
    with pytest.raises(ValueError):
        history.append(_record(2, [0.5, 0.5]))
    assert history.raw_records[0] is history.records[0]


def test_class_variance():
    assert class_variance(_record(1, [0.4, 0.4, 0.4])) == 0.0
    assert class_variance(_record(1, [0.1, 0.1, 0.1, 0.1])) == 0.0
    assert class_variance(_record(1, [0.0, 1.0])) == pytest.approx(0.25)


def test_window_mean():
    history = _history(
        [_record(1, [0.2, 0.4], clean=[0.5, 0.5]), _record(2, [0.4, 0.6]), _record(3, [0.9, 0.9])]
    )
    clean, robust = window_mean(history, 1, 2)
    assert robust == pytest.approx([0.3, 0.5])
    assert clean == pytest.approx([0.75, 0.75])
    with pytest.raises(ValueError):
        window_mean(history, 5, 9)


def test_aggregate_seeds():
    aggregate = aggregate_seeds([{'worst_robust': 0.2}, {'worst_robust': 0.4}])
    assert aggregate['worst_robust']['mean'] == pytest.approx(0.3)
    assert aggregate['worst_robust']['std'] == pytest.approx(0.1)
