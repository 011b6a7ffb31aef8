import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from cfa_lab.nn import Batch, DenseNet, backward, forward, kl_divergence, softmax_cross_entropy

logger = logging.getLogger('cfa_lab')

Budget = Union[float, np.ndarray]


@dataclass
class AttackConfig:
    eps: float = 0.1
    # None means eps / 4, per example when margins are class-wise
    alpha_step: Optional[float] = None
    steps: int = 10
    random_start: bool = True
    lower: Optional[float] = None
    upper: Optional[float] = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.eps < 0:
            raise ValueError(f'eps must be non-negative, got {self.eps}')
        if self.steps < 0:
            raise ValueError(f'steps must be non-negative, got {self.steps}')
        if self.steps > 0 and self.alpha_step is not None and self.alpha_step <= 0:
            raise ValueError(f'alpha_step must be positive, got {self.alpha_step}')
        if self.lower is not None and self.upper is not None and not self.lower < self.upper:
            raise ValueError(f'Domain bounds must satisfy lower < upper, got [{self.lower}, {self.upper}]')

    @property
    def domain_bounds(self) -> Optional[Tuple[Optional[float], Optional[float]]]:
        if self.lower is None and self.upper is None:
            return None
        return self.lower, self.upper

    def provenance(self) -> Dict[str, Any]:
        """Parameters echoed into result files"""
        data = asdict(self)
        data['alpha_step'] = self.alpha_step if self.alpha_step is not None else 'eps/4'
        return data


def _column(eps: Budget, m: int) -> np.ndarray:
    """Budget as an (m, 1) column; accepts a scalar, a length-m vector or an (m, 1) column"""
    values = np.asarray(eps, dtype=np.float64)
    if values.ndim > 0:
        values = values.reshape(-1)
    column = np.broadcast_to(values, (m,)).reshape(m, 1)
    if (column < 0).any():
        raise ValueError('Perturbation budgets must be non-negative')
    return column


def project(
    x_adv: np.ndarray,
    x_orig: np.ndarray,
    eps: Budget,
    domain_bounds: Optional[Tuple[Optional[float], Optional[float]]] = None,
) -> np.ndarray:
    """Clip ``x_adv`` into the L-infinity ball around ``x_orig``, then into the domain"""
    radius = _column(eps, len(x_orig))
    projected = np.clip(x_adv, x_orig - radius, x_orig + radius)
    if domain_bounds is not None:
        lower, upper = domain_bounds
        projected = np.clip(projected, lower, upper)
    return projected


def _setup(
    batch: Batch, cfg: AttackConfig, eps: Optional[Budget], rng: Optional[np.random.Generator]
) -> Tuple[np.ndarray, np.ndarray, np.random.Generator]:
    m = len(batch)
    radius = _column(cfg.eps if eps is None else eps, m)
    alpha = radius / 4 if cfg.alpha_step is None else np.full_like(radius, cfg.alpha_step)
    return radius, alpha, rng if rng is not None else np.random.default_rng(cfg.seed)


def _start(batch: Batch, radius: np.ndarray, cfg: AttackConfig, rng: np.random.Generator) -> np.ndarray:
    x = batch.inputs
    if not cfg.random_start:
        return x.copy()
    noise = rng.uniform(-1.0, 1.0, size=x.shape) * radius
    return project(x + noise, x, radius, cfg.domain_bounds)


def pgd_ce(
    net: DenseNet,
    batch: Batch,
    cfg: AttackConfig,
    eps: Optional[Budget] = None,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """
    Signed-gradient ascent on cross-entropy inside the eps-ball.

    ``eps`` overrides ``cfg.eps`` and may be a per-example vector.
    """
    if cfg.steps == 0:
        return batch.inputs.copy()
    radius, alpha, rng = _setup(batch, cfg, eps, rng)
    x = batch.inputs
    x_adv = _start(batch, radius, cfg, rng)
    for _ in range(cfg.steps):
        logits, cache = forward(net, x_adv)
        _, grad_logits = softmax_cross_entropy(logits, batch.labels)
        _, grad_inputs = backward(net, cache, grad_logits)
        x_adv = project(x_adv + alpha * np.sign(grad_inputs), x, radius, cfg.domain_bounds)
    return x_adv


def pgd_kl(
    net: DenseNet,
    batch: Batch,
    cfg: AttackConfig,
    eps: Optional[Budget] = None,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """
    Signed-gradient ascent on KL(f(x) || f(x')) w.r.t. ``x'`` only.

    The clean logits are computed once and held fixed.
    """
    if cfg.steps == 0:
        return batch.inputs.copy()
    radius, alpha, rng = _setup(batch, cfg, eps, rng)
    x = batch.inputs
    reference, _ = forward(net, x)
    x_adv = _start(batch, radius, cfg, rng)
    for _ in range(cfg.steps):
        logits, cache = forward(net, x_adv)
        _, _, grad_q = kl_divergence(reference, logits)
        _, grad_inputs = backward(net, cache, grad_q)
        x_adv = project(x_adv + alpha * np.sign(grad_inputs), x, radius, cfg.domain_bounds)
    return x_adv
