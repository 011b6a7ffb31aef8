"""
A small dense-network engine with hand-written reverse mode.

Everything is float64 so gradients can be checked against central
finite differences.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from cfa_lab.exceptions import ShapeError

logger = logging.getLogger('cfa_lab')

ACTIVATIONS = ('relu', 'identity')

# log arguments are clamped here
LOG_FLOOR = 1e-12

LayerGrad = Tuple[np.ndarray, np.ndarray]


@dataclass
class DenseLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = 'relu'

    def __post_init__(self) -> None:
        if self.activation not in ACTIVATIONS:
            raise ValueError(f'Unknown activation {self.activation!r}')
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f'Bias of shape {self.bias.shape} does not match weight of shape {self.weight.shape}')

    @property
    def fan_in(self) -> int:
        return int(self.weight.shape[1])

    @property
    def fan_out(self) -> int:
        return int(self.weight.shape[0])


@dataclass
class DenseNet:
    layers: List[DenseLayer]

    def __post_init__(self) -> None:
        if not self.layers:
            raise ShapeError('A network needs at least one layer')
        for previous, layer in zip(self.layers, self.layers[1:]):
            if previous.fan_out != layer.fan_in:
                raise ShapeError(f'Layer widths do not chain: {previous.fan_out} -> {layer.fan_in}')
        if self.layers[-1].activation != 'identity':
            raise ShapeError('The final layer must produce logits (identity activation)')

    @property
    def input_dim(self) -> int:
        return self.layers[0].fan_in

    @property
    def num_classes(self) -> int:
        return self.layers[-1].fan_out

    def parameters(self) -> List[np.ndarray]:
        """Weight and bias arrays in layer order; views, not copies"""
        params = []
        for layer in self.layers:
            params.extend((layer.weight, layer.bias))
        return params

    def copy(self) -> 'DenseNet':
        return DenseNet(
            [DenseLayer(layer.weight.copy(), layer.bias.copy(), layer.activation) for layer in self.layers]
        )

    def is_finite(self) -> bool:
        return all(bool(np.isfinite(p).all()) for p in self.parameters())

    def predict(self, inputs: np.ndarray) -> np.ndarray:
        logits, _ = forward(self, inputs)
        return np.argmax(logits, axis=1)


@dataclass
class ForwardCache:
    inputs: np.ndarray
    pre_activations: List[np.ndarray] = field(default_factory=list)
    activations: List[np.ndarray] = field(default_factory=list)

    @property
    def depth(self) -> int:
        return len(self.pre_activations)


@dataclass
class Batch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        if self.inputs.ndim != 2 or len(self.inputs) != len(self.labels) or len(self.labels) < 1:
            raise ShapeError(f'Batch of {self.inputs.shape} inputs and {self.labels.shape} labels')

    def __len__(self) -> int:
        return len(self.labels)

    def check(self, net: DenseNet) -> None:
        if self.inputs.shape[1] != net.input_dim:
            raise ShapeError(f'Batch width {self.inputs.shape[1]} does not match network input {net.input_dim}')
        if self.labels.min() < 0 or self.labels.max() >= net.num_classes:
            raise ShapeError(f'Labels must lie in [0, {net.num_classes})')


def init_net(dims: Sequence[int], seed: int) -> DenseNet:
    """
    Build an MLP with layer widths ``dims = [input, hidden..., classes]``.

    Hidden layers are relu with He-scaled Gaussian weights; the output
    layer is identity with variance 1/fan_in. Biases start at zero.
    """
    if len(dims) < 2 or any(dim < 1 for dim in dims):
        raise ShapeError(f'Invalid layer widths {list(dims)}')
    rng = np.random.default_rng(seed)
    layers = []
    for index, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        last = index == len(dims) - 2
        std = np.sqrt((1.0 if last else 2.0) / fan_in)
        layers.append(
            DenseLayer(
                weight=rng.normal(0.0, std, size=(fan_out, fan_in)),
                bias=np.zeros(fan_out),
                activation='identity' if last else 'relu',
            )
        )
    return DenseNet(layers)


def forward(net: DenseNet, inputs: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    if inputs.ndim != 2 or inputs.shape[1] != net.input_dim:
        raise ShapeError(f'Expected inputs of width {net.input_dim}, got shape {inputs.shape}')
    cache = ForwardCache(inputs=inputs)
    hidden = inputs
    for layer in net.layers:
        pre = hidden @ layer.weight.T + layer.bias
        hidden = np.maximum(pre, 0.0) if layer.activation == 'relu' else pre
        cache.pre_activations.append(pre)
        cache.activations.append(hidden)
    return hidden, cache


def backward(net: DenseNet, cache: ForwardCache, grad_logits: np.ndarray) -> Tuple[List[LayerGrad], np.ndarray]:
    """Return per-layer (weight, bias) gradients and the gradient w.r.t. the inputs"""
    if cache.depth != len(net.layers) or grad_logits.shape != cache.activations[-1].shape:
        raise ShapeError('Cache does not belong to this network or gradient shape differs from the logits')
    grads: List[LayerGrad] = []
    upstream = grad_logits
    for index in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[index]
        if layer.activation == 'relu':
            upstream = upstream * (cache.pre_activations[index] > 0)
        below = cache.activations[index - 1] if index > 0 else cache.inputs
        grads.append((upstream.T @ below, upstream.sum(axis=0)))
        upstream = upstream @ layer.weight
    grads.reverse()
    return grads, upstream


def add_grads(first: List[LayerGrad], second: List[LayerGrad]) -> List[LayerGrad]:
    return [(w1 + w2, b1 + b2) for (w1, b1), (w2, b2) in zip(first, second)]


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def _sample_weight(weight: Optional[np.ndarray], m: int) -> np.ndarray:
    if weight is None:
        return np.ones(m)
    if weight.shape != (m,):
        raise ShapeError(f'Sample weights of shape {weight.shape} for a batch of {m}')
    return weight


def softmax_cross_entropy(
    logits: np.ndarray, labels: np.ndarray, sample_weight: Optional[np.ndarray] = None
) -> Tuple[float, np.ndarray]:
    """Mean (optionally per-example weighted) cross-entropy and its gradient w.r.t. the logits"""
    if logits.ndim != 2 or len(logits) != len(labels):
        raise ShapeError(f'Logits of shape {logits.shape} for {len(labels)} labels')
    m = len(labels)
    weight = _sample_weight(sample_weight, m)
    log_probs = log_softmax(logits)
    rows = np.arange(m)
    per_example = -log_probs[rows, labels]
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    grad *= (weight / m)[:, None]
    return float(np.mean(weight * per_example)), grad


def kl_divergence(
    logits_p: np.ndarray, logits_q: np.ndarray, sample_weight: Optional[np.ndarray] = None
) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    Mean KL(softmax(logits_p) || softmax(logits_q)) with gradients w.r.t. both logit sets.
    """
    if logits_p.shape != logits_q.shape or logits_p.ndim != 2:
        raise ShapeError(f'KL between logits of shape {logits_p.shape} and {logits_q.shape}')
    m = len(logits_p)
    weight = _sample_weight(sample_weight, m)
    p = softmax(logits_p)
    q = softmax(logits_q)
    log_ratio = np.log(np.maximum(p, LOG_FLOOR)) - np.log(np.maximum(q, LOG_FLOOR))
    per_example = (p * log_ratio).sum(axis=1)
    scale = (weight / m)[:, None]
    grad_p = p * (log_ratio - per_example[:, None]) * scale
    grad_q = (q - p) * scale
    return float(np.mean(weight * per_example)), grad_p, grad_q


@dataclass
class OptState:
    velocity: List[LayerGrad]
    base_lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    milestones: Tuple[int, ...] = ()
    lr: float = field(init=False)

    def __post_init__(self) -> None:
        if self.base_lr <= 0:
            raise ValueError(f'Learning rate must be positive, got {self.base_lr}')
        if not 0 <= self.momentum < 1:
            raise ValueError(f'Momentum must lie in [0, 1), got {self.momentum}')
        if self.weight_decay < 0:
            raise ValueError(f'Weight decay must be non-negative, got {self.weight_decay}')
        self.lr = self.base_lr

    @classmethod
    def for_net(
        cls,
        net: DenseNet,
        lr: float = 0.1,
        momentum: float = 0.9,
        weight_decay: float = 5e-4,
        milestones: Sequence[int] = (),
    ) -> 'OptState':
        velocity = [(np.zeros_like(layer.weight), np.zeros_like(layer.bias)) for layer in net.layers]
        return cls(velocity, lr, momentum, weight_decay, tuple(sorted(milestones)))


def lr_at_epoch(opt: OptState, epoch: int) -> float:
    """The learning rate for a 1-based epoch, divided by 10 after each milestone"""
    passed = sum(1 for milestone in opt.milestones if epoch > milestone)
    return opt.base_lr * 0.1**passed


def start_epoch(opt: OptState, epoch: int) -> None:
    lr = lr_at_epoch(opt, epoch)
    if lr != opt.lr:
        logger.debug('Learning rate %.4g -> %.4g at epoch %d', opt.lr, lr, epoch)
    opt.lr = lr


def sgd_step(net: DenseNet, grads: List[LayerGrad], opt: OptState) -> Tuple[DenseNet, OptState]:
    """
    One momentum SGD update, in place.

    ``v <- mu * v + (g + wd * theta)`` then ``theta <- theta - lr * v``.
    """
    if len(grads) != len(net.layers) or len(opt.velocity) != len(net.layers):
        raise ShapeError('Gradients or momentum buffers do not match the network depth')
    for layer, (grad_w, grad_b), (vel_w, vel_b) in zip(net.layers, grads, opt.velocity):
        if grad_w.shape != layer.weight.shape or vel_w.shape != layer.weight.shape:
            raise ShapeError(f'Gradient of shape {grad_w.shape} for weight of shape {layer.weight.shape}')
        vel_w *= opt.momentum
        vel_w += grad_w + opt.weight_decay * layer.weight
        vel_b *= opt.momentum
        vel_b += grad_b + opt.weight_decay * layer.bias
        layer.weight -= opt.lr * vel_w
        layer.bias -= opt.lr * vel_b
    return net, opt
