import logging
from dataclasses import dataclass
from typing import Optional, Tuple

from cfa_lab.exceptions import ProbabilityError, ShapeError
from cfa_lab.nn import DenseNet

logger = logging.getLogger('cfa_lab')


@dataclass
class AveragedModel:
    """
    Exponential moving average of network parameters with an optional fairness gate.

    Until the first accepted checkpoint at or after ``start_epoch`` the
    average is the copy of the live network taken at construction; the
    first accepted checkpoint replaces it, later ones are blended in.
    """

    params: DenseNet
    decay: float = 0.85
    start_epoch: int = 1
    threshold_delta: float = 0.0
    initialized: bool = False
    accepted_count: int = 0
    skipped_count: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.decay < 1:
            raise ValueError(f'Decay must lie in (0, 1), got {self.decay}')
        if not 0 <= self.threshold_delta <= 1:
            raise ProbabilityError(f'Threshold must lie in [0, 1], got {self.threshold_delta}')

    @classmethod
    def track(
        cls, net: DenseNet, decay: float = 0.85, start_epoch: int = 1, threshold_delta: float = 0.0
    ) -> 'AveragedModel':
        return cls(net.copy(), decay=decay, start_epoch=start_epoch, threshold_delta=threshold_delta)


def _check_shapes(avg: AveragedModel, live: DenseNet) -> None:
    mine = [p.shape for p in avg.params.parameters()]
    theirs = [p.shape for p in live.parameters()]
    if mine != theirs:
        raise ShapeError(f'Averaged parameters {mine} do not match live parameters {theirs}')


def ema_update(avg: AveragedModel, live: DenseNet) -> AveragedModel:
    """``avg <- decay * avg + (1 - decay) * live``, elementwise and in place"""
    _check_shapes(avg, live)
    for mine, theirs in zip(avg.params.parameters(), live.parameters()):
        mine *= avg.decay
        mine += (1.0 - avg.decay) * theirs
    return avg


def _admit(avg: AveragedModel, live: DenseNet) -> None:
    if avg.initialized:
        ema_update(avg, live)
    else:
        _check_shapes(avg, live)
        for mine, theirs in zip(avg.params.parameters(), live.parameters()):
            mine[...] = theirs
        avg.initialized = True
    avg.accepted_count += 1


def fawa_step(
    avg: AveragedModel, live: DenseNet, worst_val_robust: Optional[float], epoch: int
) -> Tuple[AveragedModel, bool]:
    """
    Admit ``live`` into the average if the epoch has started and it clears the gate.

    ``worst_val_robust=None`` disables the gate, which is plain EMA from
    ``start_epoch`` on. The boundary ``worst == delta`` is accepted. A
    skipped step leaves every averaged parameter untouched.
    """
    if worst_val_robust is not None and not 0 <= worst_val_robust <= 1:
        raise ProbabilityError(f'Worst-class robustness must lie in [0, 1], got {worst_val_robust}')
    accepted = epoch >= avg.start_epoch and (worst_val_robust is None or worst_val_robust >= avg.threshold_delta)
    if accepted:
        _admit(avg, live)
    else:
        avg.skipped_count += 1
    logger.debug(
        'Weight averaging %s epoch %d (worst=%s, delta=%.3f)',
        'accepted' if accepted else 'skipped',
        epoch,
        worst_val_robust,
        avg.threshold_delta,
    )
    return avg, accepted
