import json

import numpy as np
import pytest

from cfa_lab.checkpoints import FORMAT, load_checkpoint, save_checkpoint
from cfa_lab.exceptions import ShapeError
from cfa_lab.nn import forward, init_net


def test_saved_network_reloads_exactly(tmp_path):
    net = init_net([6, 5, 4, 3], seed=9)
    stream, sidecar = save_checkpoint(net, tmp_path / 'model')

    assert stream.name == 'model.bin'
    assert stream.stat().st_size == 8 * sum(p.size for p in net.parameters())
    meta = json.loads(sidecar.read_text())
    assert meta['format'] == FORMAT
    assert [layer['activation'] for layer in meta['layers']] == ['relu', 'relu', 'identity']

    loaded = load_checkpoint(tmp_path / 'model')
    for a, b in zip(net.parameters(), loaded.parameters()):
        assert np.array_equal(a, b)
    x = np.random.default_rng(0).normal(size=(3, 6))
    assert np.array_equal(forward(net, x)[0], forward(loaded, x)[0])


def test_stream_layout_is_weight_then_bias_little_endian(tmp_path):
    net = init_net([2, 2], seed=0)
    net.layers[0].bias[:] = [7.0, 8.0]
    stream, _ = save_checkpoint(net, tmp_path / 'tiny')
    values = np.frombuffer(stream.read_bytes(), dtype='<f8')
    assert np.array_equal(values[:4], net.layers[0].weight.ravel())
    assert np.array_equal(values[4:], [7.0, 8.0])


def test_truncated_stream_is_rejected(tmp_path):
    stream, _ = save_checkpoint(init_net([3, 2], seed=0), tmp_path / 'model')
    stream.write_bytes(stream.read_bytes()[:-8])
    with pytest.raises(ShapeError):
        load_checkpoint(tmp_path / 'model')


def test_unknown_format_is_rejected(tmp_path):
    _, sidecar = save_checkpoint(init_net([3, 2], seed=0), tmp_path / 'model')
    meta = json.loads(sidecar.read_text())
    meta['format'] = 'other/9'
    sidecar.write_text(json.dumps(meta))
    with pytest.raises(ShapeError):
        load_checkpoint(tmp_path / 'model')
