import numpy as np
import pytest
from scipy.stats import chi2_contingency

from cfa_lab.data import (
    PRESETS,
    FileSource,
    LabeledDataset,
    SyntheticBinary,
    SyntheticMulti,
    class_means,
    generate,
    load_file,
    preset,
    save_file,
    split_validation,
)
from cfa_lab.exceptions import DatasetFormatError
from cfa_lab.toy_model import THEORY_PRESET, VISUALIZATION_PRESET


def _shows_true_class(dataset):
    k = dataset.num_classes
    return np.argmax(dataset.features[:, :k], axis=1) == dataset.labels


@pytest.mark.parametrize('name', ['toy-paper-binary', 'toy-scatter-binary'])
def test_binary_preset_uses_visualization_parameters(name):
    spec = preset(name, n=100)
    assert isinstance(spec, SyntheticBinary)
    assert spec.params == VISUALIZATION_PRESET
    data = generate(spec, seed=0)
    assert data.dims == 2
    assert data.num_classes == 2


def test_binary_labels_map_easy_class_to_zero():
    data = generate(SyntheticBinary(VISUALIZATION_PRESET, 100_000), seed=1)
    easy = data.features[data.labels == 0, 0] == 1
    hard = data.features[data.labels == 1, 0] == -1
    assert easy.mean() == pytest.approx(0.85, abs=0.01)
    assert hard.mean() == pytest.approx(0.70, abs=0.01)


def test_multi_reliability_controls_the_robust_block():
    data = generate(preset('multi4-easyhard', n=40_000), seed=2)
    shown = _shows_true_class(data)
    for k, p in enumerate((0.95, 0.90, 0.75, 0.70)):
        assert shown[data.labels == k].mean() == pytest.approx(p, abs=0.015)


def test_multi_equal_reliability_gives_indistinguishable_classes():
    spec = SyntheticMulti(num_classes=4, reliability=(0.8, 0.8, 0.8, 0.8), n=100_000)
    data = generate(spec, seed=3)
    shown = _shows_true_class(data)
    table = [[int((shown & (data.labels == k)).sum()), int((~shown & (data.labels == k)).sum())] for k in range(4)]
    _, p_value, _, _ = chi2_contingency(table)
    assert p_value > 0.01


def test_multi_one_example_per_class():
    data = generate(SyntheticMulti(num_classes=3, reliability=(0.9, 0.8, 0.7), d=3, n=3), seed=0)
    assert sorted(data.labels.tolist()) == [0, 1, 2]


def test_class_means_pattern():
    means = class_means(SyntheticMulti(num_classes=2, reliability=(0.9, 0.8), eta=0.4, d=4))
    assert means.tolist() == [[0.4, -0.4, 0.4, -0.4], [-0.4, 0.4, -0.4, 0.4]]


def test_multi_spec_validation():
    with pytest.raises(ValueError):
        SyntheticMulti(num_classes=2, reliability=(0.9,))
    with pytest.raises(ValueError):
        SyntheticMulti(num_classes=2, reliability=(0.9, 0.4))
    with pytest.raises(ValueError):
        SyntheticMulti(num_classes=4, reliability=(0.9,) * 4, d=3)


def test_generate_is_deterministic():
    spec = preset('multi4-easyhard', n=500)
    first, second = generate(spec, seed=7), generate(spec, seed=7)
    assert np.array_equal(first.features, second.features)
    assert np.array_equal(first.labels, second.labels)


def test_stratified_split():
    spec = SyntheticMulti(num_classes=4, reliability=(0.95, 0.9, 0.75, 0.7), n=4000)
    data = generate(spec, seed=0)
    train, valid = split_validation(data, 0.02, seed=0)

    assert valid.class_counts().tolist() == [20, 20, 20, 20]
    assert len(train) + len(valid) == len(data)
    rows = {tuple(row) for row in data.features}
    assert {tuple(row) for row in train.features} | {tuple(row) for row in valid.features} == rows
    assert not {tuple(row) for row in train.features} & {tuple(row) for row in valid.features}

    again = split_validation(data, 0.02, seed=0)[1]
    assert np.array_equal(again.features, valid.features)


def test_split_rounds_half_up_and_rejects_small_classes():
    labels = np.array([0] * 25 + [1] * 30)
    data = LabeledDataset(np.arange(55, dtype=float).reshape(55, 1), labels, 2)
    _, valid = split_validation(data, 0.1, seed=0)
    assert valid.class_counts().tolist() == [3, 3]
    with pytest.raises(ValueError):
        split_validation(data, 0.02, seed=0)


def test_file_round_trip(tmp_path):
    data = generate(preset('multi4-easyhard', n=50), seed=5)
    data.lower, data.upper = -3.0, 3.0
    save_file(data, tmp_path / 'data.csv')
    loaded = load_file(tmp_path / 'data.csv')
    assert np.array_equal(loaded.features, data.features)
    assert np.array_equal(loaded.labels, data.labels)
    assert (loaded.num_classes, loaded.lower, loaded.upper) == (4, -3.0, 3.0)


def test_file_source_bounds_override(tmp_path):
    data = generate(preset('toy-theory-binary', n=10), seed=0)
    save_file(data, tmp_path / 'data.csv')
    loaded = generate(FileSource(str(tmp_path / 'data.csv'), lower=-5.0), seed=0)
    assert loaded.domain_bounds == (-5.0, None)


@pytest.mark.parametrize(
    ('content', 'message'),
    [
        ('', 'empty file'),
        ('0,1.0\n', 'Row 1'),
        ('# classes=2 dims=1 lo=none hi=none\n0,1.0\n2,0.5\n', 'Row 3'),
        ('# classes=2 dims=2 lo=none hi=none\n0,1.0\n', 'Row 2'),
        ('# classes=2 dims=1 lo=none hi=none\n0,abc\n', 'Row 2'),
        ('# classes=2 dims=1 lo=none hi=none\n', 'no data rows'),
    ],
)
def test_malformed_files_are_rejected(tmp_path, content, message):
    path = tmp_path / 'bad.csv'
    path.write_text(content)
    with pytest.raises(DatasetFormatError, match=message):
        load_file(path)


def test_presets():
    assert set(PRESETS) == {'toy-paper-binary', 'toy-scatter-binary', 'toy-theory-binary', 'multi4-easyhard'}
    assert preset('toy-theory-binary').params == THEORY_PRESET
    with pytest.raises(ValueError):
        preset('cifar')
