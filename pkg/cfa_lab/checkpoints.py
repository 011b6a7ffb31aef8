import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np

from cfa_lab.exceptions import ShapeError
from cfa_lab.nn import DenseLayer, DenseNet

logger = logging.getLogger('cfa_lab')

FORMAT = 'cfa-lab-dense/1'
DTYPE = '<f8'


def _paths(path: Union[str, Path]) -> Tuple[Path, Path]:
    base = Path(path)
    return base.with_suffix('.bin'), base.with_suffix('.json')


def save_checkpoint(net: DenseNet, path: Union[str, Path]) -> Tuple[Path, Path]:
    """
    Write ``net`` as a flat little-endian float64 stream plus a JSON sidecar.

    Each layer contributes its weight (row-major) followed by its bias.
    """
    stream_path, sidecar_path = _paths(path)
    layers: List[Dict[str, Any]] = [
        {'weight': list(layer.weight.shape), 'bias': list(layer.bias.shape), 'activation': layer.activation}
        for layer in net.layers
    ]
    sidecar = {
        'format': FORMAT,
        'dtype': DTYPE,
        'input_dim': net.input_dim,
        'num_classes': net.num_classes,
        'layers': layers,
    }
    stream = b''.join(param.astype(DTYPE).tobytes(order='C') for param in net.parameters())
    stream_path.write_bytes(stream)
    sidecar_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + '\n')
    logger.debug('Saved checkpoint %s (%d bytes)', stream_path, len(stream))
    return stream_path, sidecar_path


def load_checkpoint(path: Union[str, Path]) -> DenseNet:
    stream_path, sidecar_path = _paths(path)
    sidecar = json.loads(sidecar_path.read_text())
    if sidecar.get('format') != FORMAT:
        raise ShapeError(f'Unsupported checkpoint format {sidecar.get("format")!r}')
    values = np.frombuffer(stream_path.read_bytes(), dtype=DTYPE).astype(np.float64)

    expected = sum(int(np.prod(spec['weight'])) + int(np.prod(spec['bias'])) for spec in sidecar['layers'])
    if values.size != expected:
        raise ShapeError(f'Checkpoint stream holds {values.size} values, sidecar describes {expected}')

    layers = []
    offset = 0
    for spec in sidecar['layers']:
        weight_size = int(np.prod(spec['weight']))
        weight = values[offset : offset + weight_size].reshape(spec['weight'])
        offset += weight_size
        bias_size = int(np.prod(spec['bias']))
        bias = values[offset : offset + bias_size].reshape(spec['bias'])
        offset += bias_size
        layers.append(DenseLayer(weight.copy(), bias.copy(), spec['activation']))
    return DenseNet(layers)
