import math

import numpy as np
import pytest

from cfa_lab.exceptions import ProbabilityError
from cfa_lab.nn import forward, init_net, softmax_cross_entropy
from cfa_lab.schedules import (
    BudgetConfig,
    ClassState,
    at_loss,
    calibrate,
    ccm_update,
    ccr_update,
    finish_epoch,
    track_robust_train_accuracy,
    trades_cfa_loss,
)

EPS = 8 / 255


@pytest.mark.parametrize(('t_k', 'expected'), [(0.0, 4 / 255), (0.5, 8 / 255), (1.0, 12 / 255)])
def test_ccm_endpoints(t_k, expected):
    assert ccm_update(t_k, BudgetConfig(lambda1=0.5, eps_base=EPS)) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize(('t_k', 'expected'), [(0.0, 3.0), (0.25, 4.5), (1.0, 9.0)])
def test_ccr_values(t_k, expected):
    assert ccr_update(t_k, BudgetConfig(lambda2=0.5, beta_base=6.0)) == pytest.approx(expected, rel=1e-15)


def test_lambda_plus_t_one_gives_base_margin():
    t_k = 0.3
    assert ccm_update(t_k, BudgetConfig(lambda1=1 - t_k, eps_base=0.1)) == pytest.approx(0.1, rel=1e-15)


@pytest.mark.parametrize('t_k', [-0.01, 1.01, math.nan])
def test_updates_reject_non_probabilities(t_k):
    with pytest.raises(ProbabilityError):
        ccm_update(t_k, BudgetConfig())
    with pytest.raises(ProbabilityError):
        ccr_update(t_k, BudgetConfig())


def test_budget_config_validation():
    with pytest.raises(ValueError):
        BudgetConfig(lambda1=-0.1)
    with pytest.raises(ValueError):
        BudgetConfig(eps_base=-1.0)
    assert BudgetConfig(beta_base=0.0).beta_base == 0.0


def test_tracking_counts_per_class():
    state = ClassState.create(3, BudgetConfig())
    track_robust_train_accuracy(state, np.array([0, 0, 1, 1]), np.array([0, 1, 1, 1]))
    track_robust_train_accuracy(state, np.array([0, 1]), np.array([0, 0]))
    finish_epoch(state)

    assert state.t[0] == pytest.approx(2 / 3)
    assert state.t[1] == pytest.approx(2 / 3)
    assert math.isnan(state.t[2])
    assert not state.seen.any()


def test_calibration_applies_after_the_epoch_and_skips_unseen_classes():
    cfg = BudgetConfig(lambda1=0.5, lambda2=0.5, eps_base=0.1, beta_base=6.0)
    state = ClassState.create(3, cfg)
    track_robust_train_accuracy(state, np.array([0, 1]), np.array([0, 0]))
    # nothing changes until the epoch is closed
    calibrate(state, cfg, ccm=True, ccr=True)
    assert np.array_equal(state.eps, [0.1, 0.1, 0.1])

    finish_epoch(state)
    calibrate(state, cfg, ccm=True, ccr=True)
    assert state.eps.tolist() == pytest.approx([0.15, 0.05, 0.1])
    assert state.beta.tolist() == pytest.approx([9.0, 3.0, 6.0])
    assert state.eps_for(np.array([1, 0, 1])).tolist() == pytest.approx([0.05, 0.15, 0.05])


def test_calibration_switched_off_keeps_base_values():
    cfg = BudgetConfig()
    state = ClassState.create(2, cfg)
    track_robust_train_accuracy(state, np.array([0, 1]), np.array([0, 0]))
    finish_epoch(state)
    calibrate(state, cfg, ccm=False, ccr=False)
    assert np.array_equal(state.eps, [cfg.eps_base, cfg.eps_base])
    assert np.array_equal(state.beta, [cfg.beta_base, cfg.beta_base])


@pytest.fixture()
def setup():
    rng = np.random.default_rng(0)
    net = init_net([5, 7, 3], seed=1)
    x = rng.normal(size=(6, 5))
    x_adv = x + rng.uniform(-0.1, 0.1, size=x.shape)
    labels = rng.integers(0, 3, size=6)
    return net, x, x_adv, labels


def test_at_loss_is_cross_entropy_on_adversarial_inputs(setup):
    net, _, x_adv, labels = setup
    loss, grads = at_loss(net, x_adv, labels)
    assert loss == pytest.approx(softmax_cross_entropy(forward(net, x_adv)[0], labels)[0])
    assert len(grads) == 2


def test_trades_loss_with_zero_beta_is_clean_cross_entropy(setup):
    net, x, x_adv, labels = setup
    clean = softmax_cross_entropy(forward(net, x)[0], labels)[0]
    for normalize in (True, False):
        loss, _ = trades_cfa_loss(net, x, x_adv, labels, np.zeros(6), normalize=normalize)
        assert loss == pytest.approx(clean)


def test_normalized_loss_weights(setup):
    net, x, x_adv, labels = setup
    beta = np.full(6, 3.0)
    plain, _ = trades_cfa_loss(net, x, x_adv, labels, beta, normalize=False)
    normalized, _ = trades_cfa_loss(net, x, x_adv, labels, beta, normalize=True)
    assert normalized == pytest.approx(plain / 4.0)


def test_trades_loss_at_clean_point_is_cross_entropy(setup):
    net, x, _, labels = setup
    loss, _ = trades_cfa_loss(net, x, x.copy(), labels, np.full(6, 6.0), normalize=False)
    assert loss == pytest.approx(softmax_cross_entropy(forward(net, x)[0], labels)[0])
