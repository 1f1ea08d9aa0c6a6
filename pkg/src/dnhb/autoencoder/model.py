"""End-to-end hybrid transceiver network.

Pipeline per batch of symbol vectors ``S`` (rows, K*N_s complex columns)::

    tx digital layers -> tx phase shifters -> power control -> channel + noise
        -> split by user -> rx phase shifters_k -> rx digital layers_k -> S~_k
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..channel import ChannelRealization, SystemConfig
from ..numerics import ComplexMatrix, Rng, ShapeError
from .layers import (
    ComplexDenseLayer,
    PhaseShiftLayer,
    channel_layer_backward,
    channel_layer_forward,
    complex_dense_backward,
    complex_dense_forward,
    concat_users,
    phase_layer_backward,
    phase_layer_forward,
    power_normalize_backward,
    power_normalize_forward,
    split_users,
)

__all__ = [
    "DnhbModel",
    "RxChain",
    "ForwardCache",
    "UnsupportedModeError",
    "StaleCacheError",
    "build_model",
    "forward",
    "loss",
    "loss_gradient",
    "backward",
    "extract_matrices",
    "ExtractedMatrices",
]

MODES = ("linear", "nonlinear")


class UnsupportedModeError(ValueError):
    pass


class StaleCacheError(ValueError):
    pass


@dataclass(eq=False)
class RxChain:
    analog: PhaseShiftLayer
    digital: list[ComplexDenseLayer]


@dataclass(eq=False)
class DnhbModel:
    cfg: SystemConfig
    tx_digital: list[ComplexDenseLayer]
    tx_analog: PhaseShiftLayer
    rx: list[RxChain]
    mode: str = "nonlinear"
    topology: str = "fully_connected"
    version: int = field(default=0, repr=False)  # bumped on every parameter update

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        self._check_dims()

    def _check_dims(self):
        cfg = self.cfg
        dim = cfg.total_streams
        for i, layer in enumerate(self.tx_digital):
            if layer.in_dim != dim:
                raise ShapeError(f"tx_digital[{i}] expects {layer.in_dim} inputs, chain gives {dim}")
            dim = layer.out_dim
        if dim != cfg.n_rf_t or self.tx_analog.in_dim != cfg.n_rf_t or self.tx_analog.out_dim != cfg.n_t:
            raise ShapeError("transmit chain does not map to n_rf_t RF chains and n_t antennas")
        if len(self.rx) != cfg.k_users:
            raise ShapeError(f"{len(self.rx)} receive chains for {cfg.k_users} users")
        for k, chain in enumerate(self.rx):
            if chain.analog.in_dim != cfg.n_r or chain.analog.out_dim != cfg.n_rf_r:
                raise ShapeError(f"rx[{k}] analog layer must map n_r -> n_rf_r")
            dim = cfg.n_rf_r
            for i, layer in enumerate(chain.digital):
                if layer.in_dim != dim:
                    raise ShapeError(f"rx[{k}].digital[{i}] expects {layer.in_dim} inputs, chain gives {dim}")
                dim = layer.out_dim
            if dim != cfg.n_s:
                raise ShapeError(f"rx[{k}] digital chain ends at {dim}, expected n_s={cfg.n_s}")
        if self.mode == "linear":
            for name, layer in self.dense_layers():
                if layer.activation != "identity":
                    raise ValueError(f"{name}: linear mode requires identity activations")

    def dense_layers(self):
        for i, layer in enumerate(self.tx_digital):
            yield f"tx_digital.{i}", layer
        for k, chain in enumerate(self.rx):
            for i, layer in enumerate(chain.digital):
                yield f"rx.{k}.digital.{i}", layer

    def phase_layers(self):
        yield "tx_analog", self.tx_analog
        for k, chain in enumerate(self.rx):
            yield f"rx.{k}.analog", chain.analog

    def parameters(self) -> dict[str, np.ndarray]:
        """Trainable arrays by name (live references, updated in place).

        Biases are frozen at zero in linear mode and are not listed.
        """
        params = {}
        for name, layer in self.dense_layers():
            params[f"{name}.w_re"] = layer.w_re
            params[f"{name}.w_im"] = layer.w_im
            if self.mode == "nonlinear":
                params[f"{name}.b_re"] = layer.b_re
                params[f"{name}.b_im"] = layer.b_im
        for name, layer in self.phase_layers():
            params[f"{name}.theta"] = layer.theta
        return params

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters().values()])

    def set_flat(self, vec: np.ndarray) -> None:
        pos = 0
        for p in self.parameters().values():
            p[...] = np.reshape(vec[pos:pos + p.size], p.shape)
            pos += p.size
        self.version += 1

    def architecture(self) -> dict:
        return {
            "topology": self.topology,
            "tx_widths": [self.cfg.total_streams] + [l.out_dim for l in self.tx_digital],
            "tx_activations": [l.activation for l in self.tx_digital],
            "rx_widths": [self.cfg.n_rf_r] + [l.out_dim for l in self.rx[0].digital],
            "rx_activations": [l.activation for l in self.rx[0].digital],
        }


def _chain_layers(widths: Sequence[int], rng: Rng, mode: str) -> list[ComplexDenseLayer]:
    layers = []
    for i in range(len(widths) - 1):
        last = i == len(widths) - 2
        act = "identity" if (mode == "linear" or last) else "tanh"
        layers.append(ComplexDenseLayer.init(widths[i], widths[i + 1], rng, act))
    return layers


def build_model(
    cfg: SystemConfig,
    rng: Rng,
    topology: str = "fully_connected",
    mode: str = "nonlinear",
    tx_layers: int = 2,
    rx_layers: int = 2,
    tx_hidden: int | None = None,
    rx_hidden: int | None = None,
) -> DnhbModel:
    """Freshly initialised model bound to ``cfg``.

    Hidden widths default to the larger endpoint dimension of each digital
    stage. Phases start uniform on [0, 2pi); dense weights uniform in
    +-sqrt(1/fan_in); biases zero.
    """
    if tx_layers < 1 or rx_layers < 1:
        raise ValueError("each digital stage needs at least one layer")
    th = tx_hidden or max(cfg.total_streams, cfg.n_rf_t)
    rh = rx_hidden or max(cfg.n_rf_r, cfg.n_s)
    tx_widths = [cfg.total_streams] + [th] * (tx_layers - 1) + [cfg.n_rf_t]
    rx_widths = [cfg.n_rf_r] + [rh] * (rx_layers - 1) + [cfg.n_s]
    tx_digital = _chain_layers(tx_widths, rng, mode)
    tx_analog = PhaseShiftLayer.init(cfg.n_rf_t, cfg.n_t, "tx", topology, rng)
    rx = []
    for _ in range(cfg.k_users):
        analog = PhaseShiftLayer.init(cfg.n_r, cfg.n_rf_r, "rx", topology, rng)
        rx.append(RxChain(analog, _chain_layers(rx_widths, rng, mode)))
    return DnhbModel(cfg, tx_digital, tx_analog, rx, mode=mode, topology=topology)


# -- forward / loss / backward -------------------------------------------------


@dataclass
class ForwardCache:
    model_version: int
    tx_dense: list
    tx_analog: object
    power: object
    tx_signal: ComplexMatrix  # after power control
    pre_norm: ComplexMatrix  # phase-shifter output before power control
    channel: object
    rx_analog: list
    rx_dense: list
    outputs: list[ComplexMatrix]


def forward(
    model: DnhbModel,
    symbols: ComplexMatrix,
    realization: ChannelRealization,
    noise_variance: float,
    rng: Rng | None = None,
    noise: Sequence[ComplexMatrix] | None = None,
):
    """Run the network; return ``(per-user outputs, cache)``."""
    cfg = model.cfg
    if symbols.cols != cfg.total_streams:
        raise ShapeError(f"symbol batch has {symbols.cols} columns, expected K*N_s={cfg.total_streams}")
    x = symbols
    tx_dense = []
    for i, layer in enumerate(model.tx_digital):
        try:
            x, c = complex_dense_forward(layer, x)
        except ShapeError as exc:
            raise ShapeError(f"tx_digital[{i}]: {exc}") from None
        tx_dense.append(c)
    pre_norm, tx_analog = phase_layer_forward(model.tx_analog, x)
    tx_signal, power = power_normalize_forward(pre_norm, cfg.power_budget)
    channels = [u.h for u in realization.per_user]
    received, chan = channel_layer_forward(channels, tx_signal, noise_variance, rng, noise)
    per_user = split_users(concat_users(received), cfg.k_users)
    outputs, rx_analog, rx_dense = [], [], []
    for k, (chain, y) in enumerate(zip(model.rx, per_user)):
        z, ca = phase_layer_forward(chain.analog, y)
        caches = []
        for i, layer in enumerate(chain.digital):
            try:
                z, c = complex_dense_forward(layer, z)
            except ShapeError as exc:
                raise ShapeError(f"rx[{k}].digital[{i}]: {exc}") from None
            caches.append(c)
        outputs.append(z)
        rx_analog.append(ca)
        rx_dense.append(caches)
    cache = ForwardCache(
        model.version, tx_dense, tx_analog, power, tx_signal, pre_norm, chan, rx_analog, rx_dense, outputs
    )
    return outputs, cache


def _user_targets(symbols: ComplexMatrix, k_users: int) -> list[ComplexMatrix]:
    return split_users(symbols, k_users)


def loss(symbols: ComplexMatrix, outputs: Sequence[ComplexMatrix]) -> float:
    """Sum over users of the batch-mean squared reconstruction error."""
    targets = _user_targets(symbols, len(outputs))
    total = 0.0
    for s, o in zip(targets, outputs):
        if s.shape != o.shape:
            raise ShapeError(f"target {s.shape} and output {o.shape} differ")
        total += float(np.sum((s.re - o.re) ** 2 + (s.im - o.im) ** 2)) / s.rows
    return total


def loss_gradient(symbols: ComplexMatrix, outputs: Sequence[ComplexMatrix]) -> list[ComplexMatrix]:
    targets = _user_targets(symbols, len(outputs))
    return [
        ComplexMatrix(2.0 * (o.re - s.re) / s.rows, 2.0 * (o.im - s.im) / s.rows)
        for s, o in zip(targets, outputs)
    ]


def backward(model: DnhbModel, cache: ForwardCache, symbols: ComplexMatrix) -> dict[str, np.ndarray]:
    """Gradient of :func:`loss` for every entry of ``model.parameters()``."""
    if cache.model_version != model.version:
        raise StaleCacheError("forward cache predates the latest parameter update")
    grads: dict[str, np.ndarray] = {}
    linear = model.mode == "linear"

    def put_dense(name, g):
        grads[f"{name}.w_re"] = g["w_re"]
        grads[f"{name}.w_im"] = g["w_im"]
        if not linear:
            grads[f"{name}.b_re"] = g["b_re"]
            grads[f"{name}.b_im"] = g["b_im"]

    upstream = loss_gradient(symbols, cache.outputs)
    rx_grads = []
    for k, chain in enumerate(model.rx):
        g = upstream[k]
        for i in reversed(range(len(chain.digital))):
            g, pg = complex_dense_backward(chain.digital[i], cache.rx_dense[k][i], g)
            put_dense(f"rx.{k}.digital.{i}", pg)
        g, dtheta = phase_layer_backward(chain.analog, cache.rx_analog[k], g)
        grads[f"rx.{k}.analog.theta"] = dtheta
        rx_grads.append(g)
    g = channel_layer_backward(cache.channel, rx_grads)
    g = power_normalize_backward(cache.power, g)
    g, dtheta = phase_layer_backward(model.tx_analog, cache.tx_analog, g)
    grads["tx_analog.theta"] = dtheta
    for i in reversed(range(len(model.tx_digital))):
        g, pg = complex_dense_backward(model.tx_digital[i], cache.tx_dense[i], g)
        put_dense(f"tx_digital.{i}", pg)
    return {name: grads[name] for name in model.parameters()}


# -- linear-mode matrices ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ExtractedMatrices:
    """Equivalent transceiver matrices of a linear-mode model.

    ``x = F_A F_D s`` is the pre-power-control transmit signal and
    ``s~_k = W_Dk^H W_Ak^H y_k`` the receiver output.
    """

    f_a: ComplexMatrix  # n_t x n_rf_t
    f_d: ComplexMatrix  # n_rf_t x K N_s
    w_a: list[ComplexMatrix]  # n_r x n_rf_r
    w_d: list[ComplexMatrix]  # n_rf_r x N_s
    f_a_mask: np.ndarray
    w_a_mask: list[np.ndarray]


def _product(layers: Sequence[ComplexDenseLayer]) -> np.ndarray:
    m = layers[0].matrix()
    for layer in layers[1:]:
        m = layer.matrix() @ m
    return m


def extract_matrices(model: DnhbModel) -> ExtractedMatrices:
    if model.mode != "linear":
        raise UnsupportedModeError("matrix extraction requires a linear-mode model")
    f_a = model.tx_analog.coefficients().T
    f_d = _product(model.tx_digital)
    w_a, w_d, w_masks = [], [], []
    for chain in model.rx:
        # receiver computes C^T y with C = exp(j theta), hence W_A = conj(C)
        w_a.append(ComplexMatrix.from_complex(chain.analog.coefficients().conj()))
        w_d.append(ComplexMatrix.from_complex(_product(chain.digital).conj().T))
        w_masks.append(chain.analog.mask())
    return ExtractedMatrices(
        f_a=ComplexMatrix.from_complex(f_a),
        f_d=ComplexMatrix.from_complex(f_d),
        w_a=w_a,
        w_d=w_d,
        f_a_mask=model.tx_analog.mask().T,
        w_a_mask=w_masks,
    )
