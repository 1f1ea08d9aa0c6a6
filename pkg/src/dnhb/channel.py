"""Narrowband geometric (cluster/ray) mmWave channels for multi-user MIMO.

Each user's channel is

    H = sqrt(n_t n_r / (N_cl N_ray)) * sum_{i,l} alpha_il a_r(phi^r_il) a_t(phi^t_il)^H

with half-wavelength ULAs at both ends, cluster mean angles uniform on
[0, 2pi), Laplacian ray offsets around each cluster mean and CN(0, 1) ray
gains. With this scaling E||H||_F^2 = n_t n_r.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .numerics import ComplexMatrix, Rng

__all__ = [
    "ConfigError",
    "ChannelFileError",
    "UnsupportedVersionError",
    "SystemConfig",
    "GeometryParams",
    "ChannelGeometry",
    "UserChannel",
    "ChannelRealization",
    "array_response_ula",
    "channel_from_geometry",
    "generate_channel",
    "generate_channel_set",
    "save_channel_set",
    "load_channel_set",
    "CHANNEL_FORMAT_VERSION",
]

CHANNEL_FORMAT_VERSION = 1


class ConfigError(ValueError):
    """Invalid system or experiment configuration."""


class ChannelFileError(ValueError):
    """Malformed channel-set file."""


class UnsupportedVersionError(ChannelFileError):
    pass


@dataclass(frozen=True)
class SystemConfig:
    """Antenna, RF-chain, user and stream counts plus power and noise."""

    n_t: int = 16
    n_r: int = 4
    n_rf_t: int = 4
    n_rf_r: int = 2
    n_s: int = 2
    k_users: int = 2
    power_budget: float = 1.0
    noise_variance: float = 1.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("n_t", "n_r", "n_rf_t", "n_rf_r", "n_s", "k_users"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if not self.k_users * self.n_s <= self.n_rf_t <= self.n_t:
            raise ConfigError(
                "transmit dimensions violate K*N_s <= N_t^rf <= N_t: "
                f"k_users*n_s={self.k_users * self.n_s}, n_rf_t={self.n_rf_t}, n_t={self.n_t}"
            )
        if not self.n_s <= self.n_rf_r <= self.n_r:
            raise ConfigError(
                "receive dimensions violate N_s <= N_r^rf <= N_r: "
                f"n_s={self.n_s}, n_rf_r={self.n_rf_r}, n_r={self.n_r}"
            )
        if not self.power_budget > 0:
            raise ConfigError(f"power_budget must be positive, got {self.power_budget}")
        if not self.noise_variance > 0:
            raise ConfigError(f"noise_variance must be positive, got {self.noise_variance}")

    @property
    def total_streams(self) -> int:
        return self.k_users * self.n_s

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SystemConfig":
        return cls(**d)


@dataclass(frozen=True)
class GeometryParams:
    n_clusters: int = 2
    n_rays: int = 2
    angular_spread: float = math.radians(10.0)

    def __post_init__(self):
        if self.n_clusters < 1 or self.n_rays < 1:
            raise ConfigError("n_clusters and n_rays must be positive")
        if self.angular_spread < 0:
            raise ConfigError("angular_spread must be non-negative")


@dataclass(frozen=True, eq=False)
class ChannelGeometry:
    """Cluster/ray angles and gains behind one user's channel.

    Ray-level arrays have shape ``(n_clusters, n_rays)``.
    """

    n_clusters: int
    n_rays: int
    angular_spread: float
    cluster_aoa: np.ndarray
    cluster_aod: np.ndarray
    aoa: np.ndarray
    aod: np.ndarray
    gains: np.ndarray  # complex

    @property
    def n_paths(self) -> int:
        return self.n_clusters * self.n_rays

    def to_dict(self) -> dict:
        return {
            "n_clusters": self.n_clusters,
            "n_rays": self.n_rays,
            "angular_spread": self.angular_spread,
            "cluster_aoa": self.cluster_aoa.tolist(),
            "cluster_aod": self.cluster_aod.tolist(),
            "aoa": self.aoa.tolist(),
            "aod": self.aod.tolist(),
            "gains_re": self.gains.real.tolist(),
            "gains_im": self.gains.imag.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelGeometry":
        shape = (int(d["n_clusters"]), int(d["n_rays"]))
        arrays = {}
        for key in ("aoa", "aod", "gains_re", "gains_im"):
            arrays[key] = np.array(d[key], dtype=np.float64).reshape(shape)
        return cls(
            n_clusters=shape[0],
            n_rays=shape[1],
            angular_spread=float(d["angular_spread"]),
            cluster_aoa=np.array(d["cluster_aoa"], dtype=np.float64),
            cluster_aod=np.array(d["cluster_aod"], dtype=np.float64),
            aoa=arrays["aoa"],
            aod=arrays["aod"],
            gains=arrays["gains_re"] + 1j * arrays["gains_im"],
        )


@dataclass(frozen=True, eq=False)
class UserChannel:
    h: ComplexMatrix  # n_r x n_t
    geometry: ChannelGeometry


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    cfg: SystemConfig
    per_user: tuple[UserChannel, ...]
    realization_id: int = 0
    seed: int = 0

    def __post_init__(self):
        if len(self.per_user) != self.cfg.k_users:
            raise ConfigError(
                f"expected {self.cfg.k_users} user channels, got {len(self.per_user)}"
            )
        for k, u in enumerate(self.per_user):
            if u.h.shape != (self.cfg.n_r, self.cfg.n_t):
                raise ConfigError(
                    f"user {k} channel has shape {u.h.shape}, "
                    f"expected {(self.cfg.n_r, self.cfg.n_t)}"
                )

    def h(self, k: int) -> np.ndarray:
        """User ``k``'s channel as a complex ndarray."""
        return self.per_user[k].h.to_complex()

    @property
    def channels(self) -> list[np.ndarray]:
        return [u.h.to_complex() for u in self.per_user]


def array_response_ula(n_elements: int, angle: float) -> ComplexMatrix:
    """Unit-norm half-wavelength ULA steering vector, shape ``(n, 1)``."""
    if n_elements < 1:
        raise ConfigError(f"n_elements must be >= 1, got {n_elements}")
    phase = np.pi * np.arange(n_elements) * np.sin(angle)
    scale = 1.0 / np.sqrt(n_elements)
    return ComplexMatrix(scale * np.cos(phase)[:, None], scale * np.sin(phase)[:, None])


def _steering_matrix(n: int, angles: np.ndarray) -> np.ndarray:
    # columns are unit-norm steering vectors
    m = np.arange(n)[:, None]
    return np.exp(1j * np.pi * m * np.sin(np.ravel(angles))[None, :]) / np.sqrt(n)


def channel_from_geometry(n_r: int, n_t: int, geometry: ChannelGeometry) -> ComplexMatrix:
    a_r = _steering_matrix(n_r, geometry.aoa)
    a_t = _steering_matrix(n_t, geometry.aod)
    gains = np.ravel(geometry.gains)
    scale = np.sqrt(n_t * n_r / geometry.n_paths)
    h = scale * (a_r * gains[None, :]) @ a_t.conj().T
    return ComplexMatrix.from_complex(h)


def _draw_geometry(params: GeometryParams, rng: Rng) -> ChannelGeometry:
    n_cl, n_ray = params.n_clusters, params.n_rays
    cluster_aoa = rng.uniform(0.0, 2 * np.pi, n_cl)
    cluster_aod = rng.uniform(0.0, 2 * np.pi, n_cl)
    # Laplacian with standard deviation equal to the angular spread
    b = params.angular_spread / np.sqrt(2.0)
    if b > 0:
        off_r = rng.laplace(b, (n_cl, n_ray))
        off_t = rng.laplace(b, (n_cl, n_ray))
    else:
        off_r = off_t = np.zeros((n_cl, n_ray))
    g = rng.normal((n_cl, n_ray, 2), np.sqrt(0.5))
    return ChannelGeometry(
        n_clusters=n_cl,
        n_rays=n_ray,
        angular_spread=params.angular_spread,
        cluster_aoa=cluster_aoa,
        cluster_aod=cluster_aod,
        aoa=cluster_aoa[:, None] + off_r,
        aod=cluster_aod[:, None] + off_t,
        gains=g[..., 0] + 1j * g[..., 1],
    )


def generate_channel(
    cfg: SystemConfig,
    geom: GeometryParams,
    rng: Rng,
    realization_id: int = 0,
) -> ChannelRealization:
    """Draw one multi-user realization; users are mutually independent."""
    if not isinstance(cfg, SystemConfig):
        raise ConfigError("cfg must be a SystemConfig")
    cfg.validate()
    users = []
    for _ in range(cfg.k_users):
        g = _draw_geometry(geom, rng)
        users.append(UserChannel(channel_from_geometry(cfg.n_r, cfg.n_t, g), g))
    return ChannelRealization(cfg, tuple(users), realization_id, rng.seed)


def generate_channel_set(
    cfg: SystemConfig,
    geom: GeometryParams,
    count: int,
    rng: Rng,
) -> list[ChannelRealization]:
    """``count`` independent realizations; realization ``i`` uses ``rng.child(i)``."""
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    return [generate_channel(cfg, geom, rng.child(i), realization_id=i) for i in range(count)]


# -- persistence ------------------------------------------------------------


def _realization_to_dict(r: ChannelRealization) -> dict:
    return {
        "realization_id": r.realization_id,
        "seed": r.seed,
        "users": [
            {"re": u.h.re.tolist(), "im": u.h.im.tolist(), "geometry": u.geometry.to_dict()}
            for u in r.per_user
        ],
    }


def save_channel_set(
    path,
    realizations: list[ChannelRealization],
    master_seed: int,
) -> None:
    if not realizations:
        raise ConfigError("cannot save an empty channel set")
    doc = {
        "format_version": CHANNEL_FORMAT_VERSION,
        "config": realizations[0].cfg.to_dict(),
        "master_seed": int(master_seed),
        "count": len(realizations),
        "realizations": [_realization_to_dict(r) for r in realizations],
    }
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)


def _field(d, key, ctx):
    if not isinstance(d, dict) or key not in d:
        raise ChannelFileError(f"missing field {ctx}.{key}")
    return d[key]


def load_channel_set(path) -> tuple[list[ChannelRealization], int]:
    """Load a channel set. Returns ``(realizations, master_seed)``."""
    with open(path) as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ChannelFileError(
            f"{path}: parse error at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from None
    version = _field(doc, "format_version", "$")
    if version != CHANNEL_FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"{path}: unsupported format_version {version!r} "
            f"(this build reads version {CHANNEL_FORMAT_VERSION})"
        )
    try:
        cfg = SystemConfig.from_dict(_field(doc, "config", "$"))
    except (TypeError, ConfigError) as exc:
        raise ChannelFileError(f"{path}: invalid $.config: {exc}") from None
    master_seed = int(_field(doc, "master_seed", "$"))
    count = int(_field(doc, "count", "$"))
    entries = _field(doc, "realizations", "$")
    if len(entries) != count:
        raise ChannelFileError(f"{path}: $.count is {count} but {len(entries)} realizations present")
    out = []
    for i, entry in enumerate(entries):
        ctx = f"$.realizations[{i}]"
        users = []
        for k, u in enumerate(_field(entry, "users", ctx)):
            uctx = f"{ctx}.users[{k}]"
            try:
                h = ComplexMatrix(
                    np.array(_field(u, "re", uctx), dtype=np.float64),
                    np.array(_field(u, "im", uctx), dtype=np.float64),
                )
                geometry = ChannelGeometry.from_dict(_field(u, "geometry", uctx))
            except (KeyError, ValueError, TypeError) as exc:
                if isinstance(exc, ChannelFileError):
                    raise
                raise ChannelFileError(f"{path}: bad field in {uctx}: {exc}") from None
            users.append(UserChannel(h, geometry))
        try:
            out.append(
                ChannelRealization(
                    cfg,
                    tuple(users),
                    int(_field(entry, "realization_id", ctx)),
                    int(_field(entry, "seed", ctx)),
                )
            )
        except ConfigError as exc:
            raise ChannelFileError(f"{path}: {ctx}: {exc}") from None
    return out, master_seed
