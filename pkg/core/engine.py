"""
Classical forward engine for P-LYR / U-LYR / N-LYR networks.
Computes the exact output probabilities the compiled circuits produce.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from core.errors import (
    DatasetError,
    EmptyInputError,
    EngineError,
    ProblemSizeError,
    ShapeMismatchError,
    WidthMismatchError,
    ZeroVectorError,
)

logger = logging.getLogger(__name__)

BRUTEFORCE_MAX_INPUTS = 20


class LayerKind(Enum):
    """Neural computation layer types."""
    PLYR = "PLYR"
    ULYR = "ULYR"


class NetworkKind(Enum):
    """Network families: all P-LYR, or U-LYR first then P-LYR."""
    PNET = "pnet"
    HNET = "hnet"


@dataclass(frozen=True)
class TwoPointInput:
    """Random variable that is -1 with probability p and +1 otherwise."""
    p: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise EngineError(f"probability {self.p} outside [0, 1]")

    @property
    def expectation(self) -> float:
        return 1.0 - 2.0 * self.p


@dataclass
class BinaryWeightVector:
    """Real latent weights and their sign binarization (ties go to +1)."""
    latent: np.ndarray

    def __post_init__(self):
        self.latent = np.asarray(self.latent, dtype=float).ravel()
        if self.latent.size == 0:
            raise EmptyInputError("weight vector is empty")

    @classmethod
    def from_signs(cls, signs: Sequence[int]) -> 'BinaryWeightVector':
        return cls(np.where(np.asarray(signs) < 0, -1.0, 1.0))

    @property
    def binarized(self) -> np.ndarray:
        return np.where(self.latent >= 0, 1, -1)

    @property
    def width(self) -> int:
        return int(self.latent.size)


@dataclass
class BNParams:
    """Quantum-friendly batch normalization parameters of one neuron."""
    t: int = 0
    theta: float = 0.0
    gamma: float = math.pi
    lam: float = 1.0
    momentum: float = 0.1
    running_t: int = 0
    running_theta: float = 0.0
    running_gamma: float = math.pi
    fitted: bool = False

    def inference(self) -> 'BNParams':
        """Parameters to use at inference: the running averages."""
        return replace(self, t=self.running_t, theta=self.running_theta, gamma=self.running_gamma)

    def to_dict(self) -> dict:
        return {
            "t": self.t, "theta": self.theta, "gamma": self.gamma, "lambda": self.lam,
            "momentum": self.momentum, "running_t": self.running_t,
            "running_theta": self.running_theta, "running_gamma": self.running_gamma,
            "fitted": self.fitted,
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'BNParams':
        t = int(data["t"])
        theta = float(data["theta"])
        gamma = float(data["gamma"])
        return cls(
            t=t, theta=theta, gamma=gamma,
            lam=float(data.get("lambda", 1.0)),
            momentum=float(data.get("momentum", 0.1)),
            running_t=int(data.get("running_t", t)),
            running_theta=float(data.get("running_theta", theta)),
            running_gamma=float(data.get("running_gamma", gamma)),
            fitted=bool(data.get("fitted", True)),
        )


@dataclass
class LayerSpec:
    """One layer: a weight vector (and optional BN parameters) per neuron."""
    kind: LayerKind
    neurons: List[BinaryWeightVector]
    bn: Optional[List[BNParams]] = None

    def __post_init__(self):
        if not self.neurons:
            raise EmptyInputError("layer has no neurons")
        widths = {n.width for n in self.neurons}
        if len(widths) != 1:
            raise WidthMismatchError(f"neurons of one layer disagree on input width: {sorted(widths)}")
        if self.kind == LayerKind.ULYR and not _is_power_of_two(self.width):
            raise WidthMismatchError(f"U-LYR width {self.width} is not a power of two")
        if self.bn is not None and len(self.bn) != len(self.neurons):
            raise WidthMismatchError("BN parameter count differs from neuron count")

    @property
    def width(self) -> int:
        return self.neurons[0].width

    @property
    def size(self) -> int:
        return len(self.neurons)

    def weight_matrix(self) -> np.ndarray:
        """Binarized weights, one row per neuron."""
        return np.stack([n.binarized for n in self.neurons])

    def latent_matrix(self) -> np.ndarray:
        return np.stack([n.latent for n in self.neurons])


@dataclass
class NetworkSpec:
    """Layer stack with input shape and class count."""
    kind: NetworkKind
    layers: List[LayerSpec]
    input_shape: Tuple[int, int]
    class_count: int

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        if not self.layers:
            raise EmptyInputError("network has no layers")
        for position, layer in enumerate(self.layers):
            expected = LayerKind.ULYR if (self.kind == NetworkKind.HNET and position == 0) else LayerKind.PLYR
            if layer.kind != expected:
                raise EngineError(
                    f"{self.kind.value} layer {position} must be {expected.value}, got {layer.kind.value}"
                )
        width = self.input_shape[0] * self.input_shape[1]
        for position, layer in enumerate(self.layers):
            if layer.width != width:
                raise WidthMismatchError(
                    f"layer {position} expects {layer.width} inputs, receives {width}"
                )
            width = layer.size
        if not (width == self.class_count or (width == 1 and self.class_count == 2)):
            raise DatasetError(f"{width} output neurons cannot encode {self.class_count} classes")

    @property
    def output_size(self) -> int:
        return self.layers[-1].size

    @property
    def has_bn(self) -> bool:
        return any(layer.bn is not None for layer in self.layers)


@dataclass
class TrainConfig:
    """SGD settings for binary-weight training."""
    learning_rate: float = 0.5
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    momentum: float = 0.1
    latent_clip: float = 1.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise EngineError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise EngineError(f"epochs must be >= 0, got {self.epochs}")
        if not 0.0 < self.momentum < 1.0:
            raise EngineError(f"momentum must lie in (0, 1), got {self.momentum}")


@dataclass
class UnitEmbedding:
    """Amplitude embedding u and the orthogonal matrix whose first column is u."""
    u: np.ndarray
    matrix: np.ndarray = field(repr=False)


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def _check_probabilities(p: np.ndarray):
    if p.size == 0:
        raise EmptyInputError("no inputs")
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise EngineError("input probabilities must lie in [0, 1]")


def _as_signs(w: Sequence[int]) -> np.ndarray:
    w = np.asarray(w, dtype=float).ravel()
    if w.size == 0:
        raise EmptyInputError("no weights")
    return w


def plyr_forward(p, w) -> np.ndarray:
    """E(y^2) of a P-LYR neuron; p may be one input vector or a batch of rows."""
    p = np.asarray(p, dtype=float)
    w = _as_signs(w)
    _check_probabilities(p)
    if p.shape[-1] != w.size:
        raise WidthMismatchError(f"{p.shape[-1]} inputs but {w.size} weights")
    m = w.size
    e = 1.0 - 2.0 * p
    we = e * w
    # 2*sum_{i<j} a_i a_j = (sum a)^2 - sum a^2
    pair_sum = np.sum(we, axis=-1) ** 2 - np.sum(we * we, axis=-1)
    return (m + pair_sum) / (m * m)


def plyr_forward_bruteforce(p, w) -> float:
    """E(y^2) by enumerating every outcome of the m two-point inputs."""
    p = np.asarray(p, dtype=float).ravel()
    w = _as_signs(w)
    _check_probabilities(p)
    if p.size != w.size:
        raise WidthMismatchError(f"{p.size} inputs but {w.size} weights")
    m = p.size
    if m > BRUTEFORCE_MAX_INPUTS:
        raise ProblemSizeError(f"enumeration over m={m} > {BRUTEFORCE_MAX_INPUTS} inputs")

    outcomes = (np.arange(1 << m)[:, None] >> np.arange(m)) & 1  # 1 means x = -1
    x = 1 - 2 * outcomes
    weights = np.prod(np.where(outcomes == 1, p, 1.0 - p), axis=1)
    y = (x @ w) / m
    return float(np.sum(weights * y * y))


def normalize_amplitudes(images) -> np.ndarray:
    """Row-wise I/||I|| over flattened inputs."""
    data = np.asarray(images, dtype=float)
    flat = data.reshape(data.shape[0], -1) if data.ndim > 1 else data[None, :]
    norms = np.linalg.norm(flat, axis=1)
    if np.any(norms == 0.0):
        raise ZeroVectorError("cannot amplitude-embed an all-zero input")
    return flat / norms[:, None]


def ulyr_embed(values) -> UnitEmbedding:
    """Nearest orthogonal matrix to [I, 0, ..., 0]; its first column is I/||I||."""
    values = np.asarray(values, dtype=float).ravel()
    m = values.size
    if not _is_power_of_two(m) or m < 2:
        raise WidthMismatchError(f"U-LYR input length {m} is not a power of two >= 2")
    if not np.any(values):
        raise ZeroVectorError("cannot amplitude-embed an all-zero input")

    square = np.zeros((m, m))
    square[:, 0] = values
    left, _, right_t = np.linalg.svd(square)
    matrix = left @ right_t
    if matrix[:, 0] @ values < 0:
        matrix = -matrix
    return UnitEmbedding(u=matrix[:, 0].copy(), matrix=matrix)


def ulyr_forward(u, w) -> np.ndarray:
    """(u.w)^2 / m: probability of projecting the signed state onto the uniform state."""
    u = np.asarray(u, dtype=float)
    w = _as_signs(w)
    if u.shape[-1] != w.size:
        raise WidthMismatchError(f"{u.shape[-1]} amplitudes but {w.size} weights")
    return (u @ w) ** 2 / w.size


def batch_adj_coefficients(t, theta):
    # batch_adj is affine in z: zhat = scale * z + shift
    s_theta = np.sin(np.asarray(theta, dtype=float) / 2.0) ** 2
    t = np.asarray(t)
    scale = np.where(t == 0, 1.0 - s_theta, s_theta)
    shift = np.where(t == 0, s_theta, 0.0)
    return scale, shift


def batch_adj(z, t, theta):
    scale, shift = batch_adj_coefficients(t, theta)
    return scale * np.asarray(z, dtype=float) + shift


def bn_forward(z, params: BNParams):
    """batch_adj followed by indiv_adj scaling with sin^2(gamma/2)."""
    zhat = batch_adj(z, params.t, params.theta)
    return zhat * math.sin(params.gamma / 2.0) ** 2


def fit_theta(p_mean: float) -> Tuple[int, float]:
    """(t, theta) moving a batch mean of p_mean to 0.5."""
    if p_mean <= 0.5:
        return 0, 2.0 * math.asin(math.sqrt((0.5 - p_mean) / (1.0 - p_mean)))
    return 1, 2.0 * math.asin(math.sqrt(0.5 / p_mean))


def gamma_start_points(zhat, lam: float, batch_size: int) -> np.ndarray:
    """Point A = (p_z/n + 0.5) * lambda, floored at 0.5 so the arcsin stays defined."""
    return np.maximum((np.asarray(zhat, dtype=float) / batch_size + 0.5) * lam, 0.5)


def fit_gamma(zhat, lam: float) -> float:
    """Mean over samples of the angle moving each start point back to 0.5."""
    zhat = np.asarray(zhat, dtype=float)
    start = gamma_start_points(zhat, lam, zhat.size)
    return float(np.mean(2.0 * np.arcsin(np.sqrt(0.5 / start))))


def bn_fit_batch(z, params: BNParams, fit_gamma_stage: bool = True) -> BNParams:
    """Refit t/theta/gamma from one batch of neuron outputs and update running stats."""
    z = np.asarray(z, dtype=float).ravel()
    if z.size == 0:
        raise EmptyInputError("cannot fit BN on an empty batch")
    p_mean = float(np.mean(z))
    t, theta = fit_theta(p_mean)
    gamma = fit_gamma(batch_adj(z, t, theta), params.lam) if fit_gamma_stage else math.pi

    mom = params.momentum
    if not params.fitted or t != params.running_t:
        # theta averaged across a switch of t has no meaning
        running_theta = theta
    else:
        running_theta = mom * params.running_theta + (1.0 - mom) * theta
    if params.fitted:
        running_gamma = mom * params.running_gamma + (1.0 - mom) * gamma
    else:
        running_gamma = gamma

    logger.debug("bn fit: mean=%.4f t=%d theta=%.4f gamma=%.4f", p_mean, t, theta, gamma)
    return replace(params, t=t, theta=theta, gamma=gamma, running_t=t,
                   running_theta=running_theta, running_gamma=running_gamma, fitted=True)


def layer_inputs(net: NetworkSpec, images) -> np.ndarray:
    """First-layer input rows: amplitudes for U-LYR, grey levels as p for P-LYR."""
    images = np.asarray(images, dtype=float)
    if images.ndim == 2:
        images = images[None, :, :]
    if images.shape[1:] != net.input_shape:
        raise ShapeMismatchError(f"image shape {images.shape[1:]} != network input {net.input_shape}")
    if net.layers[0].kind == LayerKind.ULYR:
        return normalize_amplitudes(images)
    return images.reshape(images.shape[0], -1)


def layer_forward(layer: LayerSpec, inputs: np.ndarray, use_bn: bool = True) -> np.ndarray:
    """Inference-mode outputs of every neuron for a batch of input rows."""
    outputs = np.empty((inputs.shape[0], layer.size))
    forward = ulyr_forward if layer.kind == LayerKind.ULYR else plyr_forward
    for j, neuron in enumerate(layer.neurons):
        z = forward(inputs, neuron.binarized)
        if use_bn and layer.bn is not None:
            z = bn_forward(z, layer.bn[j].inference())
        outputs[:, j] = z
    return outputs


def class_probabilities(outputs: np.ndarray, class_count: int) -> np.ndarray:
    """A single output neuron encodes P(class 0); otherwise one neuron per class."""
    if outputs.shape[1] == 1 and class_count == 2:
        return np.hstack([outputs, 1.0 - outputs])
    return outputs


def forward_batch(net: NetworkSpec, images) -> np.ndarray:
    """Class probabilities for a batch of images (rows)."""
    activations = layer_inputs(net, images)
    for layer in net.layers:
        activations = layer_forward(layer, activations)
    return class_probabilities(activations, net.class_count)


def network_forward(net: NetworkSpec, image) -> np.ndarray:
    """Class probabilities for one image, using BN running statistics."""
    image = np.asarray(image, dtype=float)
    if image.shape != net.input_shape:
        raise ShapeMismatchError(f"image shape {image.shape} != network input {net.input_shape}")
    return forward_batch(net, image[None, :, :])[0]


def predict(net: NetworkSpec, images) -> np.ndarray:
    return np.argmax(forward_batch(net, images), axis=1)


def evaluate(net: NetworkSpec, dataset) -> float:
    """Accuracy of net on a dataset exposing `images` and `labels`."""
    labels = np.asarray(dataset.labels)
    if labels.size == 0:
        raise EmptyInputError("cannot evaluate on an empty dataset")
    return float(np.mean(predict(net, dataset.images) == labels))


def build_network(kind: NetworkKind, input_shape: Tuple[int, int], arch: Sequence[int],
                  class_count: int, bn: bool = True, seed: int = 0,
                  momentum: float = 0.1) -> NetworkSpec:
    """Randomly initialized network: latent weights uniform in [-1, 1], identity BN."""
    if not arch:
        raise EngineError("architecture needs at least one layer")
    rng = np.random.default_rng(seed)
    width = int(input_shape[0]) * int(input_shape[1])
    layers: List[LayerSpec] = []
    for position, size in enumerate(arch):
        if size < 1:
            raise EngineError(f"layer {position} must have at least one neuron")
        layer_kind = LayerKind.ULYR if (kind == NetworkKind.HNET and position == 0) else LayerKind.PLYR
        neurons = [BinaryWeightVector(rng.uniform(-1.0, 1.0, width)) for _ in range(size)]
        bn_params = [BNParams(momentum=momentum) for _ in range(size)] if bn else None
        layers.append(LayerSpec(layer_kind, neurons, bn_params))
        width = size
    net = NetworkSpec(kind, layers, tuple(input_shape), class_count)
    logger.debug("built %s %s with %d parameters", kind.value, list(arch),
                 sum(layer.size * layer.width for layer in layers))
    return net
