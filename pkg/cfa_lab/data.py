"""
Datasets: the binary toy distribution, a K-class generalization whose class
difficulty is set by the reliability of a robust feature block, and a
plain CSV format for anything else.
"""
import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from cfa_lab.exceptions import DatasetFormatError
from cfa_lab.toy_model import THEORY_PRESET, VISUALIZATION_PRESET, ToyModelParams, sample_dataset

logger = logging.getLogger('cfa_lab')


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    lower: Optional[float] = None
    upper: Optional[float] = None

    def __post_init__(self) -> None:
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise DatasetFormatError(f'{len(self.labels)} labels for features of shape {self.features.shape}')
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DatasetFormatError(f'Labels must lie in [0, {self.num_classes})')

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dims(self) -> int:
        return int(self.features.shape[1])

    @property
    def domain_bounds(self) -> Optional[Tuple[Optional[float], Optional[float]]]:
        if self.lower is None and self.upper is None:
            return None
        return self.lower, self.upper

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, indices: np.ndarray) -> 'LabeledDataset':
        return LabeledDataset(self.features[indices], self.labels[indices], self.num_classes, self.lower, self.upper)


@dataclass(frozen=True)
class SyntheticBinary:
    """The toy distribution; class 0 is y=+1 (easy), class 1 is y=-1 (hard)"""

    params: ToyModelParams
    n: int


@dataclass(frozen=True)
class SyntheticMulti:
    num_classes: int
    reliability: Tuple[float, ...]
    eta: float = 0.4
    d: int = 16
    n: int = 4000
    sigma2: float = 1.0

    def __post_init__(self) -> None:
        if self.num_classes < 2:
            raise ValueError(f'Need at least two classes, got {self.num_classes}')
        if len(self.reliability) != self.num_classes:
            raise ValueError(f'{len(self.reliability)} reliabilities for {self.num_classes} classes')
        if not all(0.5 < p < 1 for p in self.reliability):
            raise ValueError(f'Every reliability must lie in (0.5, 1), got {list(self.reliability)}')
        if self.n < self.num_classes:
            raise ValueError(f'Need n >= number of classes, got n={self.n}')
        if self.d < self.num_classes:
            raise ValueError(f'Need at least one non-robust feature per class, got d={self.d}')
        if self.eta <= 0 or self.sigma2 <= 0:
            raise ValueError('eta and sigma2 must be positive')


@dataclass(frozen=True)
class FileSource:
    path: str
    lower: Optional[float] = None
    upper: Optional[float] = None


DatasetSpec = Union[SyntheticBinary, SyntheticMulti, FileSource]


def class_means(spec: SyntheticMulti) -> np.ndarray:
    """Non-robust mean of each class: +eta on its own coordinates, -eta elsewhere"""
    owner = np.arange(spec.d) % spec.num_classes
    return np.where(owner[None, :] == np.arange(spec.num_classes)[:, None], spec.eta, -spec.eta)


def _generate_multi(spec: SyntheticMulti, rng: np.random.Generator) -> LabeledDataset:
    k = spec.num_classes
    labels = rng.permutation(np.arange(spec.n) % k)
    reliability = np.asarray(spec.reliability)[labels]

    # With probability 1 - p_k the robust block points at a uniformly drawn other class
    reliable = rng.random(spec.n) < reliability
    offset = rng.integers(1, k, size=spec.n)
    shown = np.where(reliable, labels, (labels + offset) % k)
    robust = np.where(np.arange(k)[None, :] == shown[:, None], 1.0, -1.0)

    noise = rng.normal(0.0, math.sqrt(spec.sigma2), size=(spec.n, spec.d))
    non_robust = class_means(spec)[labels] + noise
    return LabeledDataset(np.hstack([robust, non_robust]), labels.astype(np.int64), k)


def generate(spec: DatasetSpec, seed: int) -> LabeledDataset:
    if isinstance(spec, SyntheticBinary):
        if spec.n < 2:
            raise ValueError(f'Need n >= 2, got {spec.n}')
        sample = sample_dataset(spec.params, spec.n, seed)
        return LabeledDataset(sample.x, np.where(sample.y == 1, 0, 1).astype(np.int64), 2)
    if isinstance(spec, SyntheticMulti):
        return _generate_multi(spec, np.random.default_rng(seed))
    if isinstance(spec, FileSource):
        dataset = load_file(spec.path)
        if spec.lower is not None:
            dataset.lower = spec.lower
        if spec.upper is not None:
            dataset.upper = spec.upper
        return dataset
    raise ValueError(f'Unknown dataset spec {spec!r}')


def split_validation(dataset: LabeledDataset, fraction: float, seed: int) -> Tuple[LabeledDataset, LabeledDataset]:
    """
    Stratified split: ``round(fraction * n_k)`` examples of each class (at least one) go to validation.
    """
    if not 0 < fraction < 1:
        raise ValueError(f'Validation fraction must lie in (0, 1), got {fraction}')
    rng = np.random.default_rng(seed)
    minimum = math.ceil(1 / fraction)
    valid_parts: List[np.ndarray] = []
    for k, count in enumerate(dataset.class_counts()):
        if count == 0:
            continue
        if count < minimum:
            raise ValueError(f'Class {k} has {count} examples, need at least {minimum} for fraction {fraction}')
        members = np.flatnonzero(dataset.labels == k)
        take = max(1, int(math.floor(fraction * count + 0.5)))
        valid_parts.append(rng.permutation(members)[:take])
    valid_index = np.sort(np.concatenate(valid_parts))
    train_mask = np.ones(len(dataset), dtype=bool)
    train_mask[valid_index] = False
    return dataset.subset(np.flatnonzero(train_mask)), dataset.subset(valid_index)


def _format_bound(value: Optional[float]) -> str:
    return 'none' if value is None else repr(float(value))


def _parse_bound(text: str, line: int) -> Optional[float]:
    if text == 'none':
        return None
    try:
        return float(text)
    except ValueError:
        raise DatasetFormatError(f'Row {line}: invalid bound {text!r}') from None


def save_file(dataset: LabeledDataset, path: Union[str, Path]) -> None:
    with open(path, 'w', newline='') as handle:
        handle.write(
            f'# classes={dataset.num_classes} dims={dataset.dims} '
            f'lo={_format_bound(dataset.lower)} hi={_format_bound(dataset.upper)}\n'
        )
        writer = csv.writer(handle, lineterminator='\n')
        for label, row in zip(dataset.labels, dataset.features):
            writer.writerow([int(label)] + [repr(float(value)) for value in row])


def _parse_header(line: str) -> Tuple[int, int, Optional[float], Optional[float]]:
    if not line.startswith('#'):
        raise DatasetFormatError('Row 1: missing "# classes=K dims=D lo=.. hi=.." header')
    fields = dict(part.split('=', 1) for part in line[1:].split() if '=' in part)
    if set(fields) != {'classes', 'dims', 'lo', 'hi'}:
        raise DatasetFormatError(f'Row 1: header needs classes, dims, lo and hi, got {sorted(fields)}')
    try:
        classes, dims = int(fields['classes']), int(fields['dims'])
    except ValueError:
        raise DatasetFormatError('Row 1: classes and dims must be integers') from None
    if classes < 2 or dims < 1:
        raise DatasetFormatError(f'Row 1: need classes >= 2 and dims >= 1, got {classes}, {dims}')
    return classes, dims, _parse_bound(fields['lo'], 1), _parse_bound(fields['hi'], 1)


def load_file(path: Union[str, Path]) -> LabeledDataset:
    with open(path, newline='') as handle:
        header = handle.readline().strip()
        if not header:
            raise DatasetFormatError(f'{path}: empty file')
        classes, dims, lower, upper = _parse_header(header)

        labels: List[int] = []
        rows: List[Sequence[float]] = []
        for line, record in enumerate(csv.reader(handle), start=2):
            if not record:
                continue
            if len(record) != dims + 1:
                raise DatasetFormatError(f'Row {line}: expected {dims + 1} columns, got {len(record)}')
            try:
                label = int(record[0])
                values = [float(value) for value in record[1:]]
            except ValueError:
                raise DatasetFormatError(f'Row {line}: non-numeric value') from None
            if not 0 <= label < classes:
                raise DatasetFormatError(f'Row {line}: label {label} outside [0, {classes})')
            labels.append(label)
            rows.append(values)

    if not labels:
        raise DatasetFormatError(f'{path}: no data rows')
    logger.debug('Loaded %d rows from %s', len(labels), path)
    features = np.asarray(rows, dtype=np.float64).reshape(len(rows), dims)
    return LabeledDataset(features, np.asarray(labels, dtype=np.int64), classes, lower, upper)


def preset(name: str, n: int = 4000) -> DatasetSpec:
    """Named synthetic datasets; ``toy-scatter-binary`` is an alias of ``toy-paper-binary``"""
    if name in ('toy-paper-binary', 'toy-scatter-binary'):
        return SyntheticBinary(VISUALIZATION_PRESET, n)
    if name == 'toy-theory-binary':
        return SyntheticBinary(THEORY_PRESET, n)
    if name == 'multi4-easyhard':
        return SyntheticMulti(num_classes=4, reliability=(0.95, 0.90, 0.75, 0.70), n=n)
    raise ValueError(f'Unknown dataset preset {name!r}')


PRESETS = ('toy-paper-binary', 'toy-scatter-binary', 'toy-theory-binary', 'multi4-easyhard')
BINARY_PRESETS = ('toy-paper-binary', 'toy-scatter-binary', 'toy-theory-binary')
