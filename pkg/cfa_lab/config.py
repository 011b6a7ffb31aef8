import dataclasses
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from cfa_lab.attacks import AttackConfig
from cfa_lab.data import DatasetSpec, FileSource, LabeledDataset, SyntheticMulti, generate, preset, split_validation
from cfa_lab.exceptions import ConfigError
from cfa_lab.schedules import BudgetConfig

logger = logging.getLogger('cfa_lab')

METHODS = ('at', 'trades')
AVERAGING_MODES = ('none', 'ema', 'fawa')
TRACK_MODES = ('online', 'pass')

# Default base perturbation budget per method
DEFAULT_LAMBDA1 = {'at': 0.5, 'trades': 0.3}


@dataclass
class DataConfig:
    preset: Optional[str] = 'multi4-easyhard'
    path: Optional[str] = None
    test_path: Optional[str] = None
    n: int = 4000
    test_n: int = 2000
    # Overrides for the multi-class generator
    reliability: Optional[List[float]] = None
    eta: float = 0.4
    d: int = 16
    lower: Optional[float] = None
    upper: Optional[float] = None
    seed: int = 0


@dataclass
class ArchConfig:
    hidden: List[int] = field(default_factory=lambda: [64, 64])


@dataclass
class OptimConfig:
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    # None means 50% and 75% of the epochs
    milestones: Optional[List[int]] = None
    epochs: int = 40
    batch_size: int = 128


@dataclass
class BudgetSection:
    # None picks the method's default
    lambda1: Optional[float] = None
    lambda2: float = 0.5
    eps_base: float = 0.1
    beta_base: float = 6.0


@dataclass
class CfaConfig:
    ccm: bool = False
    ccr: bool = False
    track_mode: str = 'online'


@dataclass
class AveragingConfig:
    mode: str = 'none'
    decay: float = 0.85
    # None means 25% of the epochs
    start_epoch: Optional[int] = None
    delta: float = 0.2
    delta_auto: bool = False
    gate_fraction: Optional[float] = None
    valid_fraction: float = 0.02


@dataclass
class RunConfig:
    method: str = 'at'
    data: DataConfig = field(default_factory=DataConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    budget: BudgetSection = field(default_factory=BudgetSection)
    cfa: CfaConfig = field(default_factory=CfaConfig)
    averaging: AveragingConfig = field(default_factory=AveragingConfig)
    train_attack: AttackConfig = field(default_factory=AttackConfig)
    eval_attack: AttackConfig = field(default_factory=AttackConfig)
    seed: int = 0

    def validate(self) -> 'RunConfig':
        """Check cross-field invariants before any compute"""
        if self.method not in METHODS:
            raise ConfigError(f'method must be one of {METHODS}, got {self.method!r}')
        if self.cfa.ccr and self.method != 'trades':
            raise ConfigError('Calibrated regularization (cfa.ccr) requires method=trades')
        if self.cfa.track_mode not in TRACK_MODES:
            raise ConfigError(f'cfa.track_mode must be one of {TRACK_MODES}, got {self.cfa.track_mode!r}')
        if self.averaging.mode not in AVERAGING_MODES:
            raise ConfigError(f'averaging.mode must be one of {AVERAGING_MODES}, got {self.averaging.mode!r}')
        if self.averaging.mode != 'none' and not 0 < self.averaging.valid_fraction < 1:
            raise ConfigError('Weight averaging needs a validation fraction in (0, 1)')
        if self.averaging.gate_fraction is not None and not 0 < self.averaging.gate_fraction <= 1:
            raise ConfigError('averaging.gate_fraction must lie in (0, 1]')
        if self.optim.epochs < 1 or self.optim.batch_size < 1:
            raise ConfigError('epochs and batch_size must be positive')
        if not self.arch.hidden or any(width < 1 for width in self.arch.hidden):
            raise ConfigError(f'Hidden widths must be positive, got {self.arch.hidden}')
        if self.data.preset is None and self.data.path is None:
            raise ConfigError('Either data.preset or data.path must be set')
        if self.train_attack.eps != AttackConfig.eps:
            # the training margin is budget.eps_base, scaled per class when calibrated
            raise ConfigError('train_attack.eps is not used; set budget.eps_base for the training margin')
        try:
            self.budget_config()
            self.dataset_spec()
            AttackConfig(**asdict(self.train_attack))
            AttackConfig(**asdict(self.eval_attack))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def budget_config(self) -> BudgetConfig:
        lambda1 = self.budget.lambda1 if self.budget.lambda1 is not None else DEFAULT_LAMBDA1[self.method]
        return BudgetConfig(lambda1, self.budget.lambda2, self.budget.eps_base, self.budget.beta_base)

    def milestones(self) -> List[int]:
        if self.optim.milestones is not None:
            return list(self.optim.milestones)
        return [round(self.optim.epochs * 0.5), round(self.optim.epochs * 0.75)]

    def averaging_start(self) -> int:
        if self.averaging.start_epoch is not None:
            return self.averaging.start_epoch
        return max(1, round(self.optim.epochs * 0.25))

    def dataset_spec(self, n: Optional[int] = None) -> DatasetSpec:
        if self.data.path is not None:
            return FileSource(self.data.path, self.data.lower, self.data.upper)
        assert self.data.preset is not None
        spec = preset(self.data.preset, n or self.data.n)
        if isinstance(spec, SyntheticMulti):
            spec = dataclasses.replace(
                spec,
                reliability=tuple(self.data.reliability) if self.data.reliability else spec.reliability,
                num_classes=len(self.data.reliability) if self.data.reliability else spec.num_classes,
                eta=self.data.eta,
                d=self.data.d,
            )
        return spec

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def fingerprint(self) -> str:
        canonical = json.dumps(self.as_dict(), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode()).hexdigest()


def _build(cls: Any, values: Dict[str, Any], path: str) -> Any:
    if not isinstance(values, dict):
        raise ConfigError(f'{path or "config"} must be an object')
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigError(f'Unknown config key(s) {sorted(f"{path}{key}" for key in unknown)}')
    kwargs = {}
    defaults = cls()
    for name, value in values.items():
        current = getattr(defaults, name)
        if dataclasses.is_dataclass(current):
            kwargs[name] = _build(type(current), value, f'{path}{name}.')
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f'{path or "config"}: {exc}') from exc


def from_dict(values: Dict[str, Any]) -> RunConfig:
    config: RunConfig = _build(RunConfig, values, '')
    return config


def parse_value(text: str) -> Any:
    """JSON value, or the raw text when it is not valid JSON"""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(values: Dict[str, Any], assignment: str) -> Dict[str, Any]:
    """Apply ``dotted.key=value`` to a nested dict in place"""
    if '=' not in assignment:
        raise ConfigError(f'Override {assignment!r} is not of the form key=value')
    key, text = assignment.split('=', 1)
    parts = key.strip().split('.')
    target = values
    for part in parts[:-1]:
        target = target.setdefault(part, {})
        if not isinstance(target, dict):
            raise ConfigError(f'Override {key!r} descends into a non-object')
    target[parts[-1]] = parse_value(text)
    return values


def load_config(path: Optional[Union[str, Path]] = None, overrides: Sequence[str] = ()) -> RunConfig:
    values: Dict[str, Any] = {}
    if path is not None:
        try:
            values = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f'{path}: {exc}') from exc
    for assignment in overrides:
        apply_override(values, assignment)
    return from_dict(values).validate()


def build_datasets(cfg: RunConfig) -> Tuple[LabeledDataset, Optional[LabeledDataset], LabeledDataset]:
    """
    Train split, stratified validation split, and test set.

    Both averaging modes hold out the validation split, so EMA and FAWA
    runs of one config train on the same examples. Without averaging the
    validation split is None.
    """
    full = generate(cfg.dataset_spec(), cfg.data.seed)
    if cfg.data.path is not None:
        if cfg.data.test_path is None:
            raise ConfigError('data.test_path is required with data.path')
        test = generate(FileSource(cfg.data.test_path, cfg.data.lower, cfg.data.upper), cfg.data.seed)
    else:
        test = generate(cfg.dataset_spec(cfg.data.test_n), cfg.data.seed + 1)

    valid = None
    if cfg.averaging.mode != 'none':
        train, valid = split_validation(full, cfg.averaging.valid_fraction, cfg.data.seed)
    else:
        train = full
    logger.debug('Datasets: %d train, %s valid, %d test', len(train), len(valid) if valid else 0, len(test))
    return train, valid, test
