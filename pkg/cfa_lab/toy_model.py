"""
Closed-form binary toy model with a hard and an easy class.

Inputs are ``x = (x1, x2, ..., x_{d+1})`` with label ``y`` uniform on
{+1, -1}. The robust feature ``x1`` equals ``y`` with probability ``p_y``
and ``-y`` otherwise; the ``d`` non-robust features are i.i.d.
``N(eta * y, sigma2)``. Classifiers are ``f_w(x) = sign(x1 + sum(x2..)/w)``
with ``w > 0``; a larger ``w`` leans more on the robust feature.

An L-infinity adversary with budget ``eps < 1`` cannot flip ``x1`` and, since
``f_w`` is linear, its worst case shifts every non-robust mean from
``eta * y`` to ``(eta - eps) * y``. ``eps = 2 * eta`` is the robust evaluation
setting; ``eps = 0`` is clean accuracy.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import erfc

logger = logging.getLogger('cfa_lab')

CLASSES = (1, -1)

# Strict inequalities in the theorem checks must hold by at least this much
THEOREM_MARGIN = 1e-9

# Finite-difference step for the monotonicity statements; far smaller steps
# push true differences near w=5 below THEOREM_MARGIN
DEFAULT_DELTA_W = 0.1

SWEEP_HEADER = ('w', 'eps', 'class', 'clean_or_robust', 'value')


@dataclass(frozen=True)
class ToyModelParams:
    p_plus: float
    p_minus: float
    eta: float
    d: int = 1
    sigma2: float = 1.0

    def __post_init__(self) -> None:
        if not 0.5 < self.p_minus < self.p_plus < 1:
            raise ValueError(f'Expected 0.5 < p_minus < p_plus < 1, got p_plus={self.p_plus}, p_minus={self.p_minus}')
        if not 0 < self.eta < 0.5:
            raise ValueError(f'Expected 0 < eta < 0.5, got {self.eta}')
        if self.d < 1:
            raise ValueError(f'Expected d >= 1, got {self.d}')
        if self.sigma2 <= 0:
            raise ValueError(f'Expected sigma2 > 0, got {self.sigma2}')

    def p(self, y: int) -> float:
        if y == 1:
            return self.p_plus
        if y == -1:
            return self.p_minus
        raise ValueError(f'Class must be +1 or -1, got {y}')

    @property
    def robust_eps(self) -> float:
        """The evaluation budget that flips every non-robust mean"""
        return 2 * self.eta


# Parameters used by the proofs (unit variance)
THEORY_PRESET = ToyModelParams(p_plus=0.85, p_minus=0.70, eta=0.4, d=1, sigma2=1.0)

# Same class reliabilities with the narrower noise used for the scatter data
VISUALIZATION_PRESET = ToyModelParams(p_plus=0.85, p_minus=0.70, eta=0.4, d=1, sigma2=0.6)


@dataclass(frozen=True)
class LinearToyClassifier:
    w: float

    def __post_init__(self) -> None:
        if not self.w > 0:
            raise ValueError(f'Expected w > 0, got {self.w}')

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Return +1/-1 predictions; a zero score counts as -1"""
        score = x[:, 0] + x[:, 1:].sum(axis=1) / self.w
        return np.where(score > 0, 1, -1)


def normal_cdf(x: float) -> float:
    """Standard normal distribution function, via the complementary error function"""
    return float(0.5 * erfc(-x / math.sqrt(2.0)))


def normal_pdf(x: float) -> float:
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def class_accuracy(params: ToyModelParams, y: int, w: float, eval_eps: float = 0.0) -> float:
    """
    Accuracy of ``f_w`` on class ``y`` against the worst-case ``eval_eps`` adversary.

    ``eval_eps=0`` is the clean accuracy, ``eval_eps=2*eta`` the robust one.
    """
    LinearToyClassifier(w)
    if not 0 <= eval_eps <= params.robust_eps:
        raise ValueError(f'eval_eps must lie in [0, {params.robust_eps}], got {eval_eps}')
    p = params.p(y)
    mean = params.d * (params.eta - eval_eps)
    scale = math.sqrt(params.d * params.sigma2)
    return p * normal_cdf((mean + w) / scale) + (1 - p) * normal_cdf((mean - w) / scale)


def robust_accuracy(params: ToyModelParams, y: int, w: float) -> float:
    return class_accuracy(params, y, w, params.robust_eps)


def optimal_w_clean(params: ToyModelParams, y: int) -> float:
    """The w maximising the clean accuracy of class ``y``"""
    p = params.p(y)
    return params.sigma2 * math.log(p / (1 - p)) / (2 * params.eta)


def optimal_w_train(params: ToyModelParams, train_eps: float) -> float:
    """The w maximising overall accuracy on data attacked with ``train_eps``"""
    if not 0 <= train_eps < params.eta:
        raise ValueError(f'train_eps must lie in [0, eta={params.eta}), got {train_eps}')
    p = params.p_plus + params.p_minus
    return params.sigma2 * math.log(p / (2 - p)) / (2 * (params.eta - train_eps))


@dataclass
class ToySample:
    x: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.y)


def sample_dataset(params: ToyModelParams, n: int, seed: int) -> ToySample:
    if n < 1:
        raise ValueError(f'Sample size must be positive, got {n}')
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, size=n) * 2 - 1
    p = np.where(y == 1, params.p_plus, params.p_minus)
    x1 = np.where(rng.random(n) < p, y, -y)
    noise = rng.normal(0.0, math.sqrt(params.sigma2), size=(n, params.d))
    x = np.empty((n, params.d + 1), dtype=np.float64)
    x[:, 0] = x1
    x[:, 1:] = params.eta * y[:, None] + noise
    return ToySample(x=x, y=y)


def sample_per_class(params: ToyModelParams, n_per_class: int, seed: int) -> ToySample:
    """Draw exactly ``n_per_class`` points of each class (the scatter setup)"""
    rng = np.random.default_rng(seed)
    y = np.repeat(np.array(CLASSES), n_per_class)
    p = np.where(y == 1, params.p_plus, params.p_minus)
    x1 = np.where(rng.random(len(y)) < p, y, -y)
    noise = rng.normal(0.0, math.sqrt(params.sigma2), size=(len(y), params.d))
    x = np.column_stack([x1, params.eta * y[:, None] + noise]).astype(np.float64)
    return ToySample(x=x, y=y)


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    count: int


def monte_carlo_accuracy(params: ToyModelParams, w: float, eval_eps: float, n: int, seed: int) -> Dict[int, Estimate]:
    """
    Sampling estimate of :func:`class_accuracy` for both classes.

    The adversary is the analytic worst case: every non-robust coordinate is
    moved by ``-eval_eps * y``.
    """
    classifier = LinearToyClassifier(w)
    if not 0 <= eval_eps <= params.robust_eps:
        raise ValueError(f'eval_eps must lie in [0, {params.robust_eps}], got {eval_eps}')
    sample = sample_dataset(params, n, seed)
    x = sample.x.copy()
    x[:, 1:] -= eval_eps * sample.y[:, None]
    correct = classifier.predict(x) == sample.y

    estimates = {}
    for y in CLASSES:
        mask = sample.y == y
        count = int(mask.sum())
        if count == 0:
            estimates[y] = Estimate(value=float('nan'), stderr=float('nan'), count=0)
            continue
        value = float(correct[mask].mean())
        estimates[y] = Estimate(value=value, stderr=math.sqrt(value * (1 - value) / count), count=count)
    return estimates


@dataclass
class TheoremResult:
    name: str
    statement: str
    points_checked: int = 0
    min_slack: float = math.inf
    location: Optional[str] = None

    def record(self, slack: float, location: str) -> None:
        self.points_checked += 1
        if slack < self.min_slack:
            self.min_slack = slack
            self.location = location

    @property
    def worst_violation(self) -> float:
        """How far the tightest inequality fell short of the required margin"""
        return max(0.0, THEOREM_MARGIN - self.min_slack)

    @property
    def passed(self) -> bool:
        return self.points_checked > 0 and self.worst_violation <= 0.0

    def as_dict(self) -> Dict[str, object]:
        return {
            'name': self.name,
            'statement': self.statement,
            'passed': self.passed,
            'points_checked': self.points_checked,
            'min_slack': self.min_slack,
            'worst_violation': self.worst_violation,
            'location': self.location if not self.passed else None,
        }


@dataclass
class TheoremReport:
    params: ToyModelParams
    w_grid: List[float]
    eps_grid: List[float]
    delta_w: float
    results: Dict[str, TheoremResult] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(result.passed for result in self.results.values())

    def as_dict(self) -> Dict[str, object]:
        return {
            'params': {
                'p_plus': self.params.p_plus,
                'p_minus': self.params.p_minus,
                'eta': self.params.eta,
                'd': self.params.d,
                'sigma2': self.params.sigma2,
            },
            'w_grid': self.w_grid,
            'eps_grid': self.eps_grid,
            'delta_w': self.delta_w,
            'margin': THEOREM_MARGIN,
            'passed': self.passed,
            'theorems': [result.as_dict() for result in self.results.values()],
        }


def check_theorems(
    params: ToyModelParams, w_grid: Sequence[float], delta_w: float, eps_grid: Sequence[float]
) -> TheoremReport:
    """
    Evaluate the four class-wise statements on a grid and report the tightest point of each.

    T1: the easy class beats the hard class, clean and robust.
    T2: the train-optimal w grows with the training budget.
    T3: the hard class peaks in clean accuracy at a smaller w.
    T4: increasing w costs the hard class more clean accuracy (beyond the
        easy optimum) and buys it less robust accuracy.
    """
    if not w_grid or not eps_grid:
        raise ValueError('Both grids must be non-empty')
    if any(w <= 0 for w in w_grid):
        raise ValueError('Every grid w must be positive')
    if delta_w <= 0:
        raise ValueError(f'delta_w must be positive, got {delta_w}')

    report = TheoremReport(params=params, w_grid=list(w_grid), eps_grid=sorted(eps_grid), delta_w=delta_w)
    t1 = TheoremResult('T1', 'A(+1) > A(-1) and R(+1) > R(-1) for every w > 0')
    t2 = TheoremResult('T2', 'train-optimal w is strictly increasing in the training budget')
    t3 = TheoremResult('T3', 'clean-optimal w of class +1 exceeds that of class -1')
    t4 = TheoremResult('T4', 'dA(-1) < dA(+1) < 0 beyond the +1 optimum and 0 < dR(-1) < dR(+1) for all w')

    for w in w_grid:
        clean = {y: class_accuracy(params, y, w) for y in CLASSES}
        robust = {y: robust_accuracy(params, y, w) for y in CLASSES}
        t1.record(clean[1] - clean[-1], f'w={w:g} clean')
        t1.record(robust[1] - robust[-1], f'w={w:g} robust')

    w_hat = [optimal_w_train(params, eps) for eps in report.eps_grid]
    if len(w_hat) == 1:
        t2.record(math.inf, f'eps={report.eps_grid[0]:g}')
    for (eps_lo, lo), (eps_hi, hi) in zip(zip(report.eps_grid, w_hat), zip(report.eps_grid[1:], w_hat[1:])):
        t2.record(hi - lo, f'eps={eps_lo:g}->{eps_hi:g}')

    t3.record(optimal_w_clean(params, 1) - optimal_w_clean(params, -1), 'closed form')

    w_star = optimal_w_clean(params, 1)
    for w in w_grid:
        d_robust = {y: robust_accuracy(params, y, w + delta_w) - robust_accuracy(params, y, w) for y in CLASSES}
        t4.record(d_robust[-1], f'w={w:g} dR(-1) > 0')
        t4.record(d_robust[1] - d_robust[-1], f'w={w:g} dR(+1) > dR(-1)')
        if w > w_star:
            d_clean = {y: class_accuracy(params, y, w + delta_w) - class_accuracy(params, y, w) for y in CLASSES}
            t4.record(-d_clean[1], f'w={w:g} dA(+1) < 0')
            t4.record(d_clean[1] - d_clean[-1], f'w={w:g} dA(-1) < dA(+1)')

    for result in (t1, t2, t3, t4):
        report.results[result.name] = result
        if result.passed:
            logger.debug(
                '%s passed on %d points (min slack %.3g)', result.name, result.points_checked, result.min_slack
            )
        else:
            logger.warning('%s violated at %s (slack %.3g)', result.name, result.location, result.min_slack)
    return report


def draw_params(rng: np.random.Generator, max_d: int = 5) -> ToyModelParams:
    """Draw a random valid parameter set with a visible gap between the classes"""
    p_minus = float(rng.uniform(0.55, 0.90))
    p_plus = float(rng.uniform(p_minus + 0.03, 0.98))
    eta = float(rng.uniform(0.1, 0.45))
    d = int(rng.integers(1, max_d + 1))
    return ToyModelParams(p_plus=p_plus, p_minus=p_minus, eta=eta, d=d)


def default_w_grid(stop: float = 5.0, step: float = 0.1) -> List[float]:
    count = int(round(stop / step))
    return [round(step * i, 10) for i in range(1, count + 1)]


def default_eps_grid(params: ToyModelParams, points: int = 5) -> List[float]:
    """Evenly spaced training budgets in [0, eta)"""
    return [params.eta * i / points for i in range(points)]


def sweep_rows(params: ToyModelParams, w_grid: Sequence[float]) -> List[Tuple[float, float, int, str, float]]:
    """Rows of the class-wise clean/robust accuracy curves over ``w_grid``"""
    rows = []
    for w in w_grid:
        for y in CLASSES:
            rows.append((w, 0.0, y, 'clean', class_accuracy(params, y, w)))
            rows.append((w, params.robust_eps, y, 'robust', robust_accuracy(params, y, w)))
    return rows


def numeric_optimal_w(
    params: ToyModelParams, y: Optional[int] = None, train_eps: float = 0.0, upper: float = 20.0
) -> float:
    """
    Bounded numeric maximiser of the accuracy at budget ``train_eps``.

    ``y=None`` maximises the mean over both classes, the counterpart of
    :func:`optimal_w_train`; otherwise only class ``y`` counts, the
    counterpart of :func:`optimal_w_clean`.
    """
    classes = CLASSES if y is None else (y,)

    def loss(w: float) -> float:
        return -sum(class_accuracy(params, c, w, train_eps) for c in classes) / len(classes)

    result = minimize_scalar(loss, bounds=(1e-6, upper), method='bounded', options={'xatol': 1e-9})
    return float(result.x)


@dataclass(frozen=True)
class OracleMismatch:
    w: float
    eval_eps: float
    y: int
    closed_form: float
    estimate: Estimate


def oracle_mismatches(
    params: ToyModelParams,
    w_grid: Sequence[float],
    eps_grid: Sequence[float],
    n: int = 1_000_000,
    seed: int = 0,
    tolerance: float = 4.0,
) -> List[OracleMismatch]:
    """
    Grid points where the closed form and sampling disagree by more than ``tolerance`` standard errors.

    Every grid point is compared for both classes at once, so the default
    sits above the single-comparison 3 to keep chance mismatches rare.
    """
    mismatches = []
    for i, w in enumerate(w_grid):
        for j, eps in enumerate(eps_grid):
            estimates = monte_carlo_accuracy(params, w, eps, n, seed + i * len(eps_grid) + j)
            for y, estimate in estimates.items():
                exact = class_accuracy(params, y, w, eps)
                # a zero stderr (all hits or all misses) still admits one example's worth of slack
                bound = tolerance * max(estimate.stderr, 1.0 / max(estimate.count, 1))
                if abs(exact - estimate.value) > bound:
                    mismatches.append(OracleMismatch(w, eps, y, exact, estimate))
    logger.debug('Oracle check on %d points: %d mismatches', len(w_grid) * len(eps_grid) * 2, len(mismatches))
    return mismatches
