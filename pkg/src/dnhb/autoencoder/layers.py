"""Differentiable building blocks of the hybrid-beamforming autoencoder.

Batches are :class:`~dnhb.numerics.ComplexMatrix` objects with one sample
per row. Gradients are carried the same way: the ``re`` plane holds
dL/dRe(.) and the ``im`` plane holds dL/dIm(.).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..numerics import ComplexMatrix, NumericError, Rng, ShapeError

__all__ = [
    "ComplexDenseLayer",
    "PhaseShiftLayer",
    "complex_dense_forward",
    "complex_dense_backward",
    "phase_layer_forward",
    "phase_layer_backward",
    "power_normalize_forward",
    "power_normalize_backward",
    "channel_layer_forward",
    "channel_layer_backward",
    "split_users",
    "concat_users",
    "CacheError",
]

ACTIVATIONS = ("identity", "tanh")
TOPOLOGIES = ("fully_connected", "partially_connected")


class CacheError(ValueError):
    """Backward pass called with a cache that does not belong to the layer."""


# -- complex fully connected layer -------------------------------------------


@dataclass(eq=False)
class ComplexDenseLayer:
    """``y = act(W x + b)`` with ``W = w_re + j w_im`` of shape (out, in).

    ``tanh`` is applied to the real and imaginary planes separately.
    """

    w_re: np.ndarray
    w_im: np.ndarray
    b_re: np.ndarray
    b_im: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.w_re.shape != self.w_im.shape or self.w_re.ndim != 2:
            raise ShapeError(f"weight planes differ: {self.w_re.shape} vs {self.w_im.shape}")
        if self.b_re.shape != (self.out_dim,) or self.b_im.shape != (self.out_dim,):
            raise ShapeError("bias length must equal out_dim")

    @property
    def in_dim(self) -> int:
        return self.w_re.shape[1]

    @property
    def out_dim(self) -> int:
        return self.w_re.shape[0]

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng: Rng, activation="identity"):
        bound = np.sqrt(1.0 / in_dim)
        return cls(
            w_re=rng.uniform(-bound, bound, (out_dim, in_dim)),
            w_im=rng.uniform(-bound, bound, (out_dim, in_dim)),
            b_re=np.zeros(out_dim),
            b_im=np.zeros(out_dim),
            activation=activation,
        )

    def matrix(self) -> np.ndarray:
        return self.w_re + 1j * self.w_im


@dataclass
class DenseCache:
    layer: ComplexDenseLayer
    x: ComplexMatrix
    z: ComplexMatrix  # pre-activation
    y: ComplexMatrix


def complex_dense_forward(layer: ComplexDenseLayer, x: ComplexMatrix):
    if x.cols != layer.in_dim:
        raise ShapeError(f"dense layer expects {layer.in_dim} inputs, got {x.cols}")
    w_re, w_im = layer.w_re, layer.w_im
    # non-finite values are left to propagate; the trainer reports them
    with np.errstate(invalid="ignore", over="ignore"):
        z_re = x.re @ w_re.T - x.im @ w_im.T + layer.b_re
        z_im = x.im @ w_re.T + x.re @ w_im.T + layer.b_im
    z = ComplexMatrix(z_re, z_im)
    if layer.activation == "tanh":
        y = ComplexMatrix(np.tanh(z_re), np.tanh(z_im))
    else:
        y = z
    return y, DenseCache(layer, x, z, y)


def complex_dense_backward(layer: ComplexDenseLayer, cache: DenseCache, grad: ComplexMatrix):
    """Return ``(input_grad, {"w_re", "w_im", "b_re", "b_im"})``."""
    if cache.layer is not layer:
        raise CacheError("cache was produced by a different dense layer")
    if grad.shape != cache.y.shape:
        raise ShapeError(f"upstream gradient {grad.shape} != output {cache.y.shape}")
    if layer.activation == "tanh":
        g_re = grad.re * (1.0 - cache.y.re**2)
        g_im = grad.im * (1.0 - cache.y.im**2)
    else:
        g_re, g_im = grad.re, grad.im
    x = cache.x
    grads = {
        "w_re": g_re.T @ x.re + g_im.T @ x.im,
        "w_im": g_im.T @ x.re - g_re.T @ x.im,
        "b_re": g_re.sum(axis=0),
        "b_im": g_im.sum(axis=0),
    }
    dx = ComplexMatrix(
        g_re @ layer.w_re + g_im @ layer.w_im,
        g_im @ layer.w_re - g_re @ layer.w_im,
    )
    return dx, grads


# -- analog phase-shifter layer ----------------------------------------------


@dataclass(eq=False)
class PhaseShiftLayer:
    """Phase-only network between RF chains and antennas.

    ``y_o = sum_i x_i exp(j theta_io)`` over connected pairs ``(i, o)``.
    For the fully connected topology ``theta`` has shape ``(in_dim, out_dim)``:
    ``(n_rf_t, n_t)`` on the transmit side and ``(n_r, n_rf_r)`` on the receive
    side. Partially connected layers own one phase per antenna, antennas
    being split into contiguous equal blocks with one block per RF chain.
    """

    in_dim: int
    out_dim: int
    side: str  # "tx": antennas are outputs; "rx": antennas are inputs
    topology: str
    theta: np.ndarray
    _rows: np.ndarray = field(init=False, repr=False)
    _cols: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.side not in ("tx", "rx"):
            raise ValueError(f"side must be 'tx' or 'rx', got {self.side!r}")
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"unknown topology {self.topology!r}")
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.topology == "fully_connected":
            if self.theta.shape != (self.in_dim, self.out_dim):
                raise ShapeError(
                    f"theta shape {self.theta.shape} != {(self.in_dim, self.out_dim)}"
                )
            rows, cols = np.indices((self.in_dim, self.out_dim))
            self._rows, self._cols = rows.ravel(), cols.ravel()
        else:
            n_ant, n_rf = (
                (self.out_dim, self.in_dim) if self.side == "tx" else (self.in_dim, self.out_dim)
            )
            if n_ant % n_rf:
                raise ShapeError(
                    f"partially connected layer needs antennas ({n_ant}) "
                    f"divisible by RF chains ({n_rf})"
                )
            if self.theta.shape != (n_ant,):
                raise ShapeError(f"theta shape {self.theta.shape} != ({n_ant},)")
            ant = np.arange(n_ant)
            chain = ant // (n_ant // n_rf)
            if self.side == "tx":
                self._rows, self._cols = chain, ant
            else:
                self._rows, self._cols = ant, chain

    @property
    def n_antennas(self) -> int:
        return self.out_dim if self.side == "tx" else self.in_dim

    @property
    def n_rf(self) -> int:
        return self.in_dim if self.side == "tx" else self.out_dim

    @classmethod
    def init(cls, in_dim: int, out_dim: int, side: str, topology: str, rng: Rng):
        if topology == "fully_connected":
            shape = (in_dim, out_dim)
        else:
            shape = (out_dim if side == "tx" else in_dim,)
        return cls(in_dim, out_dim, side, topology, rng.uniform(0.0, 2 * np.pi, shape))

    def mask(self) -> np.ndarray:
        m = np.zeros((self.in_dim, self.out_dim), dtype=bool)
        m[self._rows, self._cols] = True
        return m

    def coefficient_planes(self) -> tuple[np.ndarray, np.ndarray]:
        """``(cos, sin)`` planes of the (in, out) coefficient matrix."""
        c = np.zeros((self.in_dim, self.out_dim))
        s = np.zeros((self.in_dim, self.out_dim))
        th = self.theta.ravel()
        c[self._rows, self._cols] = np.cos(th)
        s[self._rows, self._cols] = np.sin(th)
        return c, s

    def coefficients(self) -> np.ndarray:
        """Complex (in, out) matrix with ``exp(j theta)`` on connected pairs."""
        c = np.zeros((self.in_dim, self.out_dim), dtype=np.complex128)
        c[self._rows, self._cols] = np.exp(1j * self.theta.ravel())
        return c


@dataclass
class PhaseCache:
    layer: PhaseShiftLayer
    x: ComplexMatrix
    cos: np.ndarray
    sin: np.ndarray


def phase_layer_forward(layer: PhaseShiftLayer, x: ComplexMatrix):
    if x.cols != layer.in_dim:
        raise ShapeError(f"phase layer expects {layer.in_dim} inputs, got {x.cols}")
    c, s = layer.coefficient_planes()
    y = ComplexMatrix(x.re @ c - x.im @ s, x.re @ s + x.im @ c)
    return y, PhaseCache(layer, x, c, s)


def phase_layer_backward(layer: PhaseShiftLayer, cache: PhaseCache, grad: ComplexMatrix):
    """Return ``(input_grad, dL/dtheta)``; the latter has ``theta``'s shape."""
    if cache.layer is not layer:
        raise CacheError("cache was produced by a different phase layer")
    c, s, x = cache.cos, cache.sin, cache.x
    if grad.shape != (x.rows, layer.out_dim):
        raise ShapeError(f"upstream gradient {grad.shape} != {(x.rows, layer.out_dim)}")
    dx = ComplexMatrix(grad.re @ c.T + grad.im @ s.T, grad.im @ c.T - grad.re @ s.T)
    rr = x.re.T @ grad.re
    ir = x.im.T @ grad.re
    ri = x.re.T @ grad.im
    ii = x.im.T @ grad.im
    # d/dtheta of (x_re cos - x_im sin, x_re sin + x_im cos)
    full = -s * rr - c * ir + c * ri - s * ii
    dtheta = full[layer._rows, layer._cols].reshape(layer.theta.shape)
    return dx, dtheta


# -- transmit power control ---------------------------------------------------


@dataclass
class PowerCache:
    x: ComplexMatrix
    norms: np.ndarray  # (batch, 1)
    power: float


def power_normalize_forward(x: ComplexMatrix, power: float):
    """Scale every row to total power ``power``: ``rho = sqrt(P) / ||x||``."""
    norms = np.sqrt(np.sum(x.re**2 + x.im**2, axis=1, keepdims=True))
    if not np.all(norms > 0):
        raise NumericError("zero-norm transmit vector in batch (degenerate input)")
    rho = np.sqrt(power) / norms
    return ComplexMatrix(rho * x.re, rho * x.im), PowerCache(x, norms, float(power))


def power_normalize_backward(cache: PowerCache, grad: ComplexMatrix) -> ComplexMatrix:
    x = cache.x
    if grad.shape != x.shape:
        raise CacheError(f"upstream gradient {grad.shape} != cached input {x.shape}")
    u_re, u_im = x.re / cache.norms, x.im / cache.norms
    radial = np.sum(u_re * grad.re + u_im * grad.im, axis=1, keepdims=True)
    k = np.sqrt(cache.power) / cache.norms
    return ComplexMatrix(k * (grad.re - radial * u_re), k * (grad.im - radial * u_im))


# -- fixed channel + noise ----------------------------------------------------


@dataclass
class ChannelCache:
    channels: list[ComplexMatrix]
    noise: list[ComplexMatrix]


def channel_layer_forward(
    channels: Sequence[ComplexMatrix],
    x: ComplexMatrix,
    noise_variance: float,
    rng: Rng | None = None,
    noise: Sequence[ComplexMatrix] | None = None,
):
    """``y_k = H_k x + n_k`` for every user; returns per-user batches.

    Noise is drawn CN(0, noise_variance) per receive antenna unless given
    explicitly through ``noise``. ``noise_variance == 0`` disables it.
    """
    channels = list(channels)
    n_t = channels[0].cols
    if x.cols != n_t:
        raise ShapeError(f"channel layer expects {n_t} transmit antennas, got {x.cols}")
    outs, used = [], []
    for k, h in enumerate(channels):
        y_re = x.re @ h.re.T - x.im @ h.im.T
        y_im = x.im @ h.re.T + x.re @ h.im.T
        if noise is not None:
            n = noise[k]
            if n.shape != y_re.shape:
                raise ShapeError(f"noise for user {k} has shape {n.shape}, expected {y_re.shape}")
        elif noise_variance > 0:
            if rng is None:
                raise ValueError("rng required to draw channel noise")
            std = np.sqrt(noise_variance / 2.0)
            n = ComplexMatrix(rng.normal(y_re.shape, std), rng.normal(y_re.shape, std))
        elif noise_variance == 0:
            n = ComplexMatrix.zeros(*y_re.shape)
        else:
            raise NumericError(f"noise variance must be >= 0, got {noise_variance}")
        outs.append(ComplexMatrix(y_re + n.re, y_im + n.im))
        used.append(n)
    return outs, ChannelCache(channels, used)


def channel_layer_backward(cache: ChannelCache, grads: Sequence[ComplexMatrix]) -> ComplexMatrix:
    """Input gradient ``sum_k H_k^H g_k`` (row form ``g_k conj(H_k)``)."""
    if len(grads) != len(cache.channels):
        raise CacheError(f"{len(grads)} user gradients for {len(cache.channels)} users")
    d_re = d_im = 0.0
    for h, g in zip(cache.channels, grads):
        d_re = d_re + g.re @ h.re + g.im @ h.im
        d_im = d_im + g.im @ h.re - g.re @ h.im
    return ComplexMatrix(d_re, d_im)


# -- multi-user split ---------------------------------------------------------


def split_users(x: ComplexMatrix, k_users: int) -> list[ComplexMatrix]:
    """Partition columns into ``k_users`` equal contiguous blocks."""
    if k_users < 1 or x.cols % k_users:
        raise ShapeError(f"cannot split {x.cols} columns among {k_users} users")
    w = x.cols // k_users
    return [ComplexMatrix(x.re[:, k * w:(k + 1) * w], x.im[:, k * w:(k + 1) * w]) for k in range(k_users)]


def concat_users(parts: Sequence[ComplexMatrix]) -> ComplexMatrix:
    return ComplexMatrix(
        np.concatenate([p.re for p in parts], axis=1),
        np.concatenate([p.im for p in parts], axis=1),
    )
