"""
Class-wise calibration of the perturbation margin and of the TRADES
regularization, driven by each class's robust train accuracy.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from cfa_lab.exceptions import ProbabilityError
from cfa_lab.nn import DenseNet, LayerGrad, add_grads, backward, forward, kl_divergence, softmax_cross_entropy

logger = logging.getLogger('cfa_lab')


@dataclass
class BudgetConfig:
    lambda1: float = 0.5
    lambda2: float = 0.5
    eps_base: float = 0.1
    beta_base: float = 6.0

    def __post_init__(self) -> None:
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError(f'Budgets must be non-negative, got lambda1={self.lambda1}, lambda2={self.lambda2}')
        # Zero bases are allowed: eps_base=0 is clean training, beta_base=0 drops the robustness term
        if self.eps_base < 0 or self.beta_base < 0:
            raise ValueError(f'Base eps and beta must be non-negative, got {self.eps_base}, {self.beta_base}')


def _check_probability(t_k: float) -> None:
    if not 0.0 <= t_k <= 1.0:
        raise ProbabilityError(f'Train robust accuracy must lie in [0, 1], got {t_k}')


def ccm_update(t_k: float, cfg: BudgetConfig) -> float:
    """Calibrated margin ``(lambda1 + t_k) * eps``"""
    _check_probability(t_k)
    return (cfg.lambda1 + t_k) * cfg.eps_base


def ccr_update(t_k: float, cfg: BudgetConfig) -> float:
    """Calibrated regularization ``(lambda2 + t_k) * beta``"""
    _check_probability(t_k)
    return (cfg.lambda2 + t_k) * cfg.beta_base


@dataclass
class ClassState:
    """
    Per-class calibration state.

    ``t`` is NaN for a class until its first epoch with examples; such a
    class keeps the base margin and regularization.
    """

    t: np.ndarray
    eps: np.ndarray
    beta: np.ndarray
    correct: np.ndarray
    seen: np.ndarray

    @classmethod
    def create(cls, num_classes: int, cfg: BudgetConfig) -> 'ClassState':
        return cls(
            t=np.full(num_classes, np.nan),
            eps=np.full(num_classes, cfg.eps_base),
            beta=np.full(num_classes, cfg.beta_base),
            correct=np.zeros(num_classes, dtype=np.int64),
            seen=np.zeros(num_classes, dtype=np.int64),
        )

    @property
    def num_classes(self) -> int:
        return len(self.t)

    def eps_for(self, labels: np.ndarray) -> np.ndarray:
        return self.eps[labels]

    def beta_for(self, labels: np.ndarray) -> np.ndarray:
        return self.beta[labels]

    def snapshot(self) -> Tuple[List[float], List[float], List[float]]:
        return self.t.tolist(), self.eps.tolist(), self.beta.tolist()


def track_robust_train_accuracy(state: ClassState, labels: np.ndarray, predictions: np.ndarray) -> ClassState:
    """Accumulate per-class robust hits of one minibatch"""
    k = state.num_classes
    state.seen += np.bincount(labels, minlength=k)
    state.correct += np.bincount(labels, weights=(predictions == labels), minlength=k).astype(np.int64)
    return state


def finish_epoch(state: ClassState) -> ClassState:
    """Turn the epoch counters into ``t`` and reset them; unseen classes keep their value"""
    present = state.seen > 0
    state.t[present] = state.correct[present] / state.seen[present]
    state.correct[:] = 0
    state.seen[:] = 0
    return state


def calibrate(state: ClassState, cfg: BudgetConfig, ccm: bool = True, ccr: bool = False) -> ClassState:
    """Recompute margins and regularizations from ``t``, for use in the next epoch"""
    for k in range(state.num_classes):
        t_k = state.t[k]
        if math.isnan(t_k):
            continue
        state.eps[k] = ccm_update(float(t_k), cfg) if ccm else cfg.eps_base
        state.beta[k] = ccr_update(float(t_k), cfg) if ccr else cfg.beta_base
    logger.debug('Calibrated eps=%s beta=%s from t=%s', np.round(state.eps, 4), np.round(state.beta, 3), state.t)
    return state


def at_loss(net: DenseNet, x_adv: np.ndarray, labels: np.ndarray) -> Tuple[float, List[LayerGrad]]:
    """Cross-entropy on adversarial inputs only"""
    logits, cache = forward(net, x_adv)
    loss, grad_logits = softmax_cross_entropy(logits, labels)
    grads, _ = backward(net, cache, grad_logits)
    return loss, grads


def trades_cfa_loss(
    net: DenseNet,
    x_clean: np.ndarray,
    x_adv: np.ndarray,
    labels: np.ndarray,
    beta_per_example: np.ndarray,
    normalize: bool = True,
) -> Tuple[float, List[LayerGrad]]:
    """
    ``mean[(CE(x, y) + beta_y * KL(f(x), f(x'))) / (1 + beta_y)]``.

    With ``normalize=False`` the denominator is dropped, which is plain
    TRADES. Parameter gradients flow through both KL arguments.
    """
    beta = np.asarray(beta_per_example, dtype=np.float64)
    if normalize:
        natural_weight = 1.0 / (1.0 + beta)
        robust_weight = beta / (1.0 + beta)
    else:
        natural_weight = np.ones_like(beta)
        robust_weight = beta

    logits_clean, cache_clean = forward(net, x_clean)
    logits_adv, cache_adv = forward(net, x_adv)
    natural, grad_natural = softmax_cross_entropy(logits_clean, labels, natural_weight)
    robust, grad_p, grad_q = kl_divergence(logits_clean, logits_adv, robust_weight)

    grads_clean, _ = backward(net, cache_clean, grad_natural + grad_p)
    grads_adv, _ = backward(net, cache_adv, grad_q)
    return natural + robust, add_grads(grads_clean, grads_adv)
