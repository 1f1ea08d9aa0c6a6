"""Self-supervised training: the transmitted symbols are the targets."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from ..channel import ChannelRealization
from ..modulation import ConstellationSpec
from ..numerics import ComplexMatrix, NumericError, Rng
from .model import DnhbModel, backward, forward, loss

__all__ = ["TrainConfig", "TrainingReport", "TrainingDiverged", "Adam", "Sgd", "train", "train_with_restarts", "Trainer", "sample_symbols"]

log = logging.getLogger(__name__)


class TrainingDiverged(NumericError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation settings.

    ``train_snr_db`` is either a scalar or a ``(low, high)`` range sampled
    uniformly per batch. SNR is ``P / sigma^2``.
    """

    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 100
    batches_per_epoch: int = 100
    train_snr_db: float | tuple[float, float] = (-10.0, 20.0)
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_final_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batches_per_epoch < 1:
            raise ValueError(f"batches_per_epoch must be >= 1, got {self.batches_per_epoch}")
        if not 0 < self.lr_final_fraction <= 1:
            raise ValueError(f"lr_final_fraction must be in (0, 1], got {self.lr_final_fraction}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        snr = self.train_snr_db
        if isinstance(snr, (list, tuple)):
            if len(snr) != 2 or snr[0] > snr[1]:
                raise ValueError(f"train_snr_db range must be (low, high), got {snr!r}")
            object.__setattr__(self, "train_snr_db", (float(snr[0]), float(snr[1])))

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(self.train_snr_db, tuple):
            d["train_snr_db"] = list(self.train_snr_db)
        return d


class Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: dict, grads: dict) -> None:
        for name, p in params.items():
            p -= self.lr * grads[name]


class Adam:
    def __init__(self, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1**self.t
        corr2 = 1.0 - b2**self.t
        for name, p in params.items():
            g = grads[name]
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)


@dataclass
class TrainingReport:
    model: DnhbModel
    loss_trace: list[float]  # per-epoch mean loss
    steps: int
    seed: int
    config: TrainConfig = field(repr=False)

    @property
    def final_loss(self) -> float:
        return self.loss_trace[-1]


def sample_symbols(n: int, n_streams: int, spec: ConstellationSpec, rng: Rng) -> ComplexMatrix:
    idx = rng.integers(0, spec.order, (n, n_streams))
    pts = spec.points[idx]
    return ComplexMatrix(pts.real, pts.imag)


def _noise_variance(power: float, snr_db: float) -> float:
    return power / 10.0 ** (snr_db / 10.0)


class Trainer:
    """Stateful optimisation of one model; :meth:`run` may be called repeatedly."""

    def __init__(self, model: DnhbModel, realization: ChannelRealization, config: TrainConfig,
                 spec: ConstellationSpec, rng: Rng | None = None, callback=None):
        if realization.cfg != model.cfg:
            raise ValueError("model and realization are bound to different system configs")
        self.model = model
        self.realization = realization
        self.config = config
        self.spec = spec
        self.rng = rng if rng is not None else Rng(config.seed)
        self.callback = callback
        if config.optimizer == "adam":
            self.opt = Adam(config.learning_rate, config.beta1, config.beta2, config.eps)
        else:
            self.opt = Sgd(config.learning_rate)
        self.trace: list[float] = []
        self.step = 0

    def _lr(self, epoch: int) -> float:
        c = self.config
        if c.epochs <= 1:
            return c.learning_rate
        return c.learning_rate * c.lr_final_fraction ** (epoch / (c.epochs - 1))

    def run(self, epochs: int) -> list[float]:
        model, cfg, c = self.model, self.model.cfg, self.config
        params = model.parameters()
        snr = c.train_snr_db
        rng = self.rng
        for _ in range(epochs):
            epoch = len(self.trace)
            self.opt.lr = self._lr(epoch)
            total = 0.0
            for _ in range(c.batches_per_epoch):
                if isinstance(snr, tuple):
                    snr_db = float(rng.uniform(snr[0], snr[1]))
                else:
                    snr_db = float(snr)
                sigma2 = _noise_variance(cfg.power_budget, snr_db)
                s = sample_symbols(c.batch_size, cfg.total_streams, self.spec, rng)
                outputs, cache = forward(model, s, self.realization, sigma2, rng)
                value = loss(s, outputs)
                if not np.isfinite(value):
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch} (step {self.step})")
                if self.callback is not None:
                    self.callback(self.step, model, cache)
                grads = backward(model, cache, s)
                self.opt.step(params, grads)
                model.version += 1
                total += value
                self.step += 1
            self.trace.append(total / c.batches_per_epoch)
            log.debug("epoch %d mean loss %.6g", epoch, self.trace[-1])
        return self.trace

    def report(self) -> TrainingReport:
        return TrainingReport(self.model, list(self.trace), self.step, self.rng.seed, self.config)


def train(
    model: DnhbModel,
    realization: ChannelRealization,
    config: TrainConfig,
    spec: ConstellationSpec,
    rng: Rng | None = None,
    callback: Callable[[int, DnhbModel, object], None] | None = None,
) -> TrainingReport:
    """Train ``model`` in place on a fixed channel realization.

    Each step samples a symbol batch and a training SNR, runs the network
    with fresh noise, and applies one optimizer update. ``callback(step,
    model, cache)`` is invoked after each forward pass, before the update.
    """
    trainer = Trainer(model, realization, config, spec, rng, callback)
    trainer.run(config.epochs)
    return trainer.report()


def train_with_restarts(
    builder: Callable[[Rng], DnhbModel],
    realization: ChannelRealization,
    config: TrainConfig,
    spec: ConstellationSpec,
    rng: Rng,
    restarts: int = 1,
    warmup_epochs: int = 5,
) -> TrainingReport:
    """Warm up ``restarts`` independently initialised models, finish the best.

    Candidate ``i`` is built and trained from ``rng.child(i)``. The candidate
    with the lowest last warm-up epoch loss continues (optimizer state
    included) for the remaining ``config.epochs - warmup_epochs`` epochs.
    """
    if restarts < 1:
        raise ValueError(f"restarts must be >= 1, got {restarts}")
    if restarts == 1:
        r = rng.child(0)
        return train(builder(r.child(0)), realization, config, spec, r.child(1))
    warm = min(warmup_epochs, config.epochs)
    trainers = []
    for i in range(restarts):
        r = rng.child(i)
        t = Trainer(builder(r.child(0)), realization, config, spec, r.child(1))
        t.run(warm)
        trainers.append(t)
    best = min(trainers, key=lambda t: t.trace[-1])
    best.run(config.epochs - warm)
    return best.report()
