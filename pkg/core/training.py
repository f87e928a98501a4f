"""
Binary-weight training for P-LYR / U-LYR / N-LYR networks.
SGD on latent weights with a straight-through sign, BN refit per batch.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from core.engine import (
    LayerKind,
    LayerSpec,
    NetworkSpec,
    TrainConfig,
    batch_adj_coefficients,
    bn_fit_batch,
    evaluate,
    gamma_start_points,
    layer_forward,
    layer_inputs,
)
from core.errors import DatasetError, EmptyInputError

logger = logging.getLogger(__name__)

PROBABILITY_FLOOR = 1e-12
LAMBDA_FLOOR = 1e-3


@dataclass
class BatchStats:
    """Per-batch BN statistics held fixed during one gradient step."""
    t: np.ndarray                # (neurons,)
    theta: np.ndarray            # (neurons,)
    zhat_ref: np.ndarray         # (samples, neurons) batch_adj outputs that seed gamma


@dataclass
class LayerCache:
    inputs: np.ndarray
    dots: np.ndarray
    z: np.ndarray
    zhat: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None
    s_gamma: Optional[np.ndarray] = None
    ds_gamma_dlam: Optional[np.ndarray] = None


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_acc: float
    test_acc: Optional[float] = None

    def to_row(self) -> Dict:
        return {
            "epoch": self.epoch,
            "loss": round(self.loss, 10),
            "train_acc": round(self.train_acc, 10),
            "test_acc": "" if self.test_acc is None else round(self.test_acc, 10),
        }


@dataclass
class TrainHistory:
    records: List[EpochRecord] = field(default_factory=list)

    @property
    def final_train_acc(self) -> float:
        return self.records[-1].train_acc if self.records else 0.0

    @property
    def final_test_acc(self) -> Optional[float]:
        return self.records[-1].test_acc if self.records else None


def fit_batch_stats(layer: LayerSpec, z: np.ndarray) -> BatchStats:
    """Refit every neuron's BN on this batch; running stats are updated in place."""
    ts = np.zeros(layer.size, dtype=int)
    thetas = np.zeros(layer.size)
    for j in range(layer.size):
        fitted = bn_fit_batch(z[:, j], layer.bn[j])
        layer.bn[j] = fitted
        ts[j], thetas[j] = fitted.t, fitted.theta
    scale, shift = batch_adj_coefficients(ts, thetas)
    return BatchStats(ts, thetas, scale * z + shift)


def _gamma_terms(zhat_ref: np.ndarray, lam: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """sin^2(gamma/2) per neuron and its derivative with respect to lambda."""
    n = zhat_ref.shape[0]
    raw = (zhat_ref / n + 0.5) * lam
    start = gamma_start_points(zhat_ref, lam, n)
    r = np.sqrt(0.5 / start)
    angles = 2.0 * np.arcsin(r)
    gamma = angles.mean(axis=0)

    active = raw > 0.5 + 1e-12
    dangle_dstart = np.zeros_like(start)
    dangle_dstart[active] = -r[active] / (start[active] * np.sqrt(1.0 - r[active] ** 2))
    dgamma_dlam = np.mean(dangle_dstart * (zhat_ref / n + 0.5), axis=0)

    s_gamma = np.sin(gamma / 2.0) ** 2
    return s_gamma, 0.5 * np.sin(gamma) * dgamma_dlam


def _weights(layer: LayerSpec, relaxed: bool) -> np.ndarray:
    return layer.latent_matrix() if relaxed else layer.weight_matrix().astype(float)


def forward_layer(layer: LayerSpec, inputs: np.ndarray, stats: Optional[BatchStats] = None,
                  use_bn: bool = True, relaxed: bool = False) -> Tuple[np.ndarray, LayerCache]:
    """Differentiable forward of one layer on a batch.

    P-LYR uses (m - sum e^2 + (w.e)^2)/m^2 and U-LYR uses (u.w)^2/m, both exact on
    +/-1 weights. With BN, t/theta come from `stats` and gamma is rebuilt from lambda.
    `relaxed` evaluates the surrogate at the real latent weights.
    """
    w = _weights(layer, relaxed)
    m = layer.width
    if layer.kind == LayerKind.PLYR:
        e = 1.0 - 2.0 * inputs
        dots = e @ w.T
        z = (m - np.sum(e * e, axis=1, keepdims=True) + dots ** 2) / (m * m)
    else:
        dots = inputs @ w.T
        z = dots ** 2 / m
    cache = LayerCache(inputs=inputs, dots=dots, z=z)
    if not use_bn or layer.bn is None or stats is None:
        return z, cache

    lam = np.array([p.lam for p in layer.bn])
    scale, shift = batch_adj_coefficients(stats.t, stats.theta)
    zhat = scale * z + shift
    s_gamma, ds_dlam = _gamma_terms(stats.zhat_ref, lam)
    cache.zhat, cache.scale, cache.s_gamma, cache.ds_gamma_dlam = zhat, scale, s_gamma, ds_dlam
    return zhat * s_gamma, cache


def backward_layer(layer: LayerSpec, cache: LayerCache, grad_out: np.ndarray,
                   relaxed: bool = False) -> Tuple[np.ndarray, Optional[np.ndarray], np.ndarray]:
    """Returns (dL/dweights, dL/dlambda or None, dL/dinputs)."""
    grad_lam = None
    grad_z = grad_out
    if cache.zhat is not None:
        grad_lam = np.sum(grad_out * cache.zhat, axis=0) * cache.ds_gamma_dlam
        grad_z = grad_out * cache.s_gamma * cache.scale

    w = _weights(layer, relaxed)
    m = layer.width
    if layer.kind == LayerKind.PLYR:
        e = 1.0 - 2.0 * cache.inputs
        coeff = grad_z * 2.0 * cache.dots / (m * m)
        grad_w = coeff.T @ e
        grad_e = coeff @ w - 2.0 * e * np.sum(grad_z, axis=1, keepdims=True) / (m * m)
        grad_in = -2.0 * grad_e
    else:
        coeff = grad_z * 2.0 * cache.dots / m
        grad_w = coeff.T @ cache.inputs
        grad_in = coeff @ w
    return grad_w, grad_lam, grad_in


def output_loss(outputs: np.ndarray, labels: np.ndarray,
                class_count: int) -> Tuple[float, np.ndarray]:
    """NLL and its gradient with respect to the output-neuron probabilities."""
    n = outputs.shape[0]
    if outputs.shape[1] == 1 and class_count == 2:
        o = np.clip(outputs[:, 0], PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR)
        is_zero = labels == 0
        loss = -np.mean(np.where(is_zero, np.log(o), np.log(1.0 - o)))
        grad = np.where(is_zero, -1.0 / o, 1.0 / (1.0 - o)) / n
        return float(loss), grad[:, None]

    shifted = outputs - outputs.max(axis=1, keepdims=True)
    soft = np.exp(shifted)
    soft /= soft.sum(axis=1, keepdims=True)
    loss = -np.mean(np.log(np.maximum(soft[np.arange(n), labels], PROBABILITY_FLOOR)))
    onehot = np.zeros_like(soft)
    onehot[np.arange(n), labels] = 1.0
    return float(loss), (soft - onehot) / n


def loss_and_grads(net: NetworkSpec, images: np.ndarray, labels: np.ndarray,
                   stats: Optional[List[Optional[BatchStats]]] = None,
                   use_bn: bool = True, relaxed: bool = False
                   ) -> Tuple[float, List[Dict[str, np.ndarray]], List[Optional[BatchStats]]]:
    """Loss and gradients for one batch.

    When `stats` is None the BN statistics are fitted on this batch (and the
    running averages updated); pass the returned stats back to hold them fixed.
    """
    labels = np.asarray(labels, dtype=int)
    activations = layer_inputs(net, images)
    caches: List[LayerCache] = []
    used_stats: List[Optional[BatchStats]] = []
    for position, layer in enumerate(net.layers):
        layer_stats = stats[position] if stats is not None else None
        if layer_stats is None and use_bn and layer.bn is not None and stats is None:
            z, _ = forward_layer(layer, activations, use_bn=False, relaxed=relaxed)
            layer_stats = fit_batch_stats(layer, z)
        activations, cache = forward_layer(layer, activations, layer_stats, use_bn, relaxed)
        caches.append(cache)
        used_stats.append(layer_stats)

    loss, grad = output_loss(activations, labels, net.class_count)
    grads: List[Dict[str, np.ndarray]] = [dict() for _ in net.layers]
    for position in reversed(range(len(net.layers))):
        grad_w, grad_lam, grad = backward_layer(net.layers[position], caches[position], grad, relaxed)
        grads[position]["weights"] = grad_w
        if grad_lam is not None:
            grads[position]["lambda"] = grad_lam
    return loss, grads, used_stats


def apply_update(net: NetworkSpec, grads: List[Dict[str, np.ndarray]], cfg: TrainConfig):
    """SGD step; sign() is passed straight through to the latent weights."""
    for layer, layer_grads in zip(net.layers, grads):
        for j, neuron in enumerate(layer.neurons):
            neuron.latent = np.clip(neuron.latent - cfg.learning_rate * layer_grads["weights"][j],
                                    -cfg.latent_clip, cfg.latent_clip)
        if "lambda" in layer_grads:
            for j, params in enumerate(layer.bn):
                params.lam = max(params.lam - cfg.learning_rate * layer_grads["lambda"][j], LAMBDA_FLOOR)


def _check_dataset(net: NetworkSpec, dataset):
    labels = np.asarray(dataset.labels)
    if labels.size == 0:
        raise EmptyInputError("cannot train on an empty dataset")
    if labels.min() < 0 or labels.max() >= net.class_count:
        raise DatasetError(
            f"labels span [{labels.min()}, {labels.max()}] but the network has {net.class_count} classes"
        )


def train(net: NetworkSpec, dataset, cfg: TrainConfig, test_set=None,
          use_bn: bool = True,
          on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> Tuple[NetworkSpec, TrainHistory]:
    """Train net in place; identical seeds give identical trajectories."""
    _check_dataset(net, dataset)
    rng = np.random.default_rng(cfg.seed)
    images = np.asarray(dataset.images, dtype=float)
    labels = np.asarray(dataset.labels, dtype=int)
    for layer in net.layers:
        for params in layer.bn or []:
            params.momentum = cfg.momentum

    history = TrainHistory()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(labels.size)
        losses = []
        for start in range(0, labels.size, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            loss, grads, _ = loss_and_grads(net, images[batch], labels[batch], use_bn=use_bn)
            apply_update(net, grads, cfg)
            losses.append(loss * batch.size)

        record = EpochRecord(
            epoch=epoch,
            loss=float(np.sum(losses) / labels.size),
            train_acc=evaluate(net, dataset),
            test_acc=evaluate(net, test_set) if test_set is not None else None,
        )
        history.records.append(record)
        logger.info("epoch %d: loss=%.4f train_acc=%.4f%s", epoch, record.loss, record.train_acc,
                    "" if record.test_acc is None else f" test_acc={record.test_acc:.4f}")
        if on_epoch:
            on_epoch(record)
    return net, history


def calibrate_bn(net: NetworkSpec, dataset) -> NetworkSpec:
    """Refit every BN neuron on the whole dataset and make that fit its running value.

    Layers are calibrated front to back so each one sees its predecessors'
    calibrated outputs.
    """
    if len(dataset.labels) == 0:
        raise EmptyInputError("cannot calibrate BN on an empty dataset")
    activations = layer_inputs(net, dataset.images)
    for position, layer in enumerate(net.layers):
        if layer.bn is not None:
            z = layer_forward(layer, activations, use_bn=False)
            layer.bn = [bn_fit_batch(z[:, j], replace(params, fitted=False))
                        for j, params in enumerate(layer.bn)]
            logger.debug("calibrated BN of layer %d on %d samples", position + 1, z.shape[0])
        activations = layer_forward(layer, activations)
    return net
