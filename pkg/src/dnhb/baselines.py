"""Classical linear transceivers used as references for the autoencoder.

* :func:`full_digital_bd` -- block diagonalization with per-user SVD.
* :func:`omp_hybrid_precoder` -- spatially sparse precoding by orthogonal
  matching pursuit over a steering-vector dictionary.
* :func:`mmse_combiner` -- linear MMSE digital combining.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .channel import ChannelRealization, ConfigError, SystemConfig
from .numerics import ComplexMatrix, Rng, ShapeError

__all__ = [
    "InfeasibleConfigError",
    "RegularizationWarning",
    "LinearTransceiver",
    "OmpResult",
    "OmpHybridDesign",
    "full_digital_bd",
    "omp_hybrid_precoder",
    "omp_hybrid_transceiver",
    "mmse_combiner",
    "evaluate_linear_transceiver",
    "transmit_dictionary",
    "receive_dictionary",
    "from_extracted",
    "transceiver_to_dict",
    "transceiver_from_dict",
]

OMP_RIDGE = 1e-10


class InfeasibleConfigError(ConfigError):
    pass


class RegularizationWarning(RuntimeWarning):
    """A least-squares or inverse step fell back to regularization."""


def _as_complex(a) -> np.ndarray:
    if isinstance(a, ComplexMatrix):
        return a.to_complex()
    return np.asarray(a, dtype=np.complex128)


@dataclass(frozen=True, eq=False)
class LinearTransceiver:
    """Explicit-matrix transceiver ``s~_k = W_Dk^H W_Ak^H (H_k F_A F_D s + n_k)``.

    ``f_a=None`` (or ``w_a[k]=None``) marks a full-digital stage, i.e. the
    identity. Masks mark structurally connected analog entries; unconnected
    entries of a partially connected network are exactly zero.
    """

    f_a: ComplexMatrix | None
    f_d: ComplexMatrix
    w_a: tuple[ComplexMatrix | None, ...]
    w_d: tuple[ComplexMatrix, ...]
    label: str = "linear"
    f_a_mask: np.ndarray | None = field(default=None, repr=False)
    w_a_mask: tuple[np.ndarray | None, ...] | None = field(default=None, repr=False)

    @property
    def is_hybrid(self) -> bool:
        return self.f_a is not None

    def precoder(self) -> np.ndarray:
        f_d = self.f_d.to_complex()
        return f_d if self.f_a is None else self.f_a.to_complex() @ f_d

    def combiner(self, k: int) -> np.ndarray:
        """Overall n_r x N_s combiner ``W_Ak W_Dk`` of user ``k``."""
        w_d = self.w_d[k].to_complex()
        w_a = self.w_a[k]
        return w_d if w_a is None else w_a.to_complex() @ w_d

    def transmit_power(self) -> float:
        f = self.precoder()
        return float(np.real(np.trace(f @ f.conj().T)))

    def check_invariants(self, power: float, atol: float = 1e-9) -> None:
        if self.transmit_power() > power + atol:
            raise AssertionError(f"{self.label}: transmit power {self.transmit_power()} exceeds {power}")
        for name, m, mask in [("F_A", self.f_a, self.f_a_mask)] + [
            (f"W_A[{k}]", w, None if self.w_a_mask is None else self.w_a_mask[k])
            for k, w in enumerate(self.w_a)
        ]:
            if m is None:
                continue
            mod = np.abs(m.to_complex())
            sel = mod[mask] if mask is not None else mod
            if not np.allclose(sel, 1.0, rtol=0, atol=1e-12):
                raise AssertionError(f"{self.label}: {name} violates the unit-modulus constraint")


# -- full-digital block diagonalization ------------------------------------------


def full_digital_bd(
    realization: ChannelRealization,
    cfg: SystemConfig | None = None,
    equalize: bool = False,
) -> LinearTransceiver:
    """Block-diagonalization precoder with SVD combiners.

    User ``k``'s precoder lies in the null space of every other user's
    channel; within it the ``N_s`` strongest right singular vectors of the
    projected channel carry equal power ``P / (K N_s)``. Combiners are the
    matching left singular vectors. With ``equalize=True`` each combiner
    column is additionally scaled so the desired stream arrives with unit
    gain.
    """
    cfg = cfg or realization.cfg
    k_users, n_t, n_s = cfg.k_users, cfg.n_t, cfg.n_s
    if n_t < k_users * cfg.n_r:
        raise InfeasibleConfigError(
            f"block diagonalization needs n_t >= K*n_r ({n_t} < {k_users * cfg.n_r})"
        )
    chans = realization.channels
    p_stream = cfg.power_budget / (k_users * n_s)
    f_cols, w_d = [], []
    for k in range(k_users):
        if k_users > 1:
            others = np.vstack([chans[l] for l in range(k_users) if l != k])
            _, sv, vh = np.linalg.svd(others)
            tol = max(others.shape) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)
            rank = int(np.sum(sv > tol))
            null = vh[rank:].conj().T
        else:
            null = np.eye(n_t, dtype=np.complex128)
        if null.shape[1] < n_s:
            raise InfeasibleConfigError(f"user {k}: null space has dimension {null.shape[1]} < N_s")
        u, sv, vh = np.linalg.svd(chans[k] @ null)
        f_k = null @ vh[:n_s].conj().T * np.sqrt(p_stream)
        w_k = u[:, :n_s].copy()
        if equalize:
            gain = sv[:n_s] * np.sqrt(p_stream)
            good = gain > 1e-12
            w_k[:, good] = w_k[:, good] / gain[good]
        f_cols.append(f_k)
        w_d.append(ComplexMatrix.from_complex(w_k))
    return LinearTransceiver(
        f_a=None,
        f_d=ComplexMatrix.from_complex(np.hstack(f_cols)),
        w_a=(None,) * k_users,
        w_d=tuple(w_d),
        label="bd_full_digital",
    )


# -- orthogonal matching pursuit ----------------------------------------------------


@dataclass(frozen=True, eq=False)
class OmpResult:
    f_a: ComplexMatrix
    f_d: ComplexMatrix
    residuals: list[float]  # ||F_opt - F_A F_D||_F, before the first and after each iteration
    selected: list[int]
    regularized: bool


def _least_squares(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, bool]:
    gram = a.conj().T @ a
    if np.linalg.matrix_rank(a) < a.shape[1]:
        warnings.warn("rank-deficient OMP least-squares system; using ridge regularization", RegularizationWarning, stacklevel=3)
        gram = gram + OMP_RIDGE * np.eye(gram.shape[0])
        return np.linalg.solve(gram, a.conj().T @ b), True
    return np.linalg.solve(gram, a.conj().T @ b), False


def _omp(target: np.ndarray, dictionary: np.ndarray, n_atoms: int):
    if n_atoms > dictionary.shape[1]:
        raise ShapeError(f"cannot select {n_atoms} atoms from a dictionary of {dictionary.shape[1]}")
    residual = target.copy()
    chosen: list[int] = []
    trace = [float(np.linalg.norm(target))]
    regularized = False
    coef = np.zeros((0, target.shape[1]), dtype=np.complex128)
    for _ in range(n_atoms):
        corr = dictionary.conj().T @ residual
        chosen.append(int(np.argmax(np.sum(np.abs(corr) ** 2, axis=1))))
        atoms = dictionary[:, chosen]
        coef, reg = _least_squares(atoms, target)
        regularized |= reg
        residual = target - atoms @ coef
        trace.append(float(np.linalg.norm(residual)))
    return dictionary[:, chosen], coef, trace, chosen, regularized


def omp_hybrid_precoder(f_opt, dictionary, n_rf: int, power: float) -> OmpResult:
    """Spatially sparse approximation ``F_opt ~ F_A F_D``.

    ``dictionary`` columns must have unit-modulus entries. ``F_D`` is finally
    rescaled so that ``||F_A F_D||_F^2 = power``.
    """
    f_opt = _as_complex(f_opt)
    dictionary = _as_complex(dictionary)
    if not np.allclose(np.abs(dictionary), 1.0, atol=1e-12):
        raise ValueError("dictionary entries must have unit modulus")
    f_a, f_d, trace, chosen, reg = _omp(f_opt, dictionary, n_rf)
    scale = np.linalg.norm(f_a @ f_d)
    if scale > 0:
        f_d = f_d * (np.sqrt(power) / scale)
    return OmpResult(ComplexMatrix.from_complex(f_a), ComplexMatrix.from_complex(f_d), trace, chosen, reg)


def transmit_dictionary(realization: ChannelRealization) -> np.ndarray:
    """Unit-modulus transmit steering vectors at every user's true AoDs."""
    n_t = realization.cfg.n_t
    angles = np.concatenate([u.geometry.aod.ravel() for u in realization.per_user])
    return np.exp(1j * np.pi * np.arange(n_t)[:, None] * np.sin(angles)[None, :])


def receive_dictionary(realization: ChannelRealization, k: int) -> np.ndarray:
    n_r = realization.cfg.n_r
    angles = realization.per_user[k].geometry.aoa.ravel()
    return np.exp(1j * np.pi * np.arange(n_r)[:, None] * np.sin(angles)[None, :])


# -- MMSE combining ---------------------------------------------------------------


def mmse_combiner(h_eff, noise_variance: float, n_s: int, user: int = 0, noise_cov=None) -> np.ndarray:
    """Linear MMSE combiner ``W = (H H^H + sigma^2 R)^-1 H[:, user streams]``.

    ``h_eff`` maps all transmitted streams to the receiver's observation
    (so inter-user interference is accounted for); ``R`` is the noise
    covariance shape, identity unless given. Returns ``W`` such that the
    estimate is ``W^H y``. Falls back to a pseudo-inverse, with a
    :class:`RegularizationWarning`, when the covariance is singular.
    """
    h = _as_complex(h_eff)
    if h.ndim != 2:
        raise ShapeError(f"effective channel must be 2-D, got shape {h.shape}")
    cols = slice(user * n_s, (user + 1) * n_s)
    if cols.stop > h.shape[1]:
        raise ShapeError(f"user {user} streams exceed {h.shape[1]} columns")
    r = np.eye(h.shape[0]) if noise_cov is None else _as_complex(noise_cov)
    cov = h @ h.conj().T + noise_variance * r
    if np.linalg.matrix_rank(cov) < cov.shape[0]:
        warnings.warn("singular MMSE covariance; using pseudo-inverse", RegularizationWarning, stacklevel=2)
        return np.linalg.pinv(cov) @ h[:, cols]
    return np.linalg.solve(cov, h[:, cols])


# -- OMP hybrid transceiver -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class OmpHybridDesign:
    """OMP analog stages plus an MMSE digital combiner chosen per noise level."""

    realization: ChannelRealization
    precoder: OmpResult
    combiners: tuple[OmpResult, ...]
    label: str = "omp_hybrid"

    def at_noise(self, noise_variance: float) -> LinearTransceiver:
        cfg = self.realization.cfg
        f = self.precoder.f_a.to_complex() @ self.precoder.f_d.to_complex()
        w_d = []
        for k, comb in enumerate(self.combiners):
            w_a = comb.f_a.to_complex()
            g = w_a.conj().T @ self.realization.h(k) @ f
            w = mmse_combiner(g, noise_variance, cfg.n_s, user=k, noise_cov=w_a.conj().T @ w_a)
            w_d.append(ComplexMatrix.from_complex(w))
        return LinearTransceiver(
            f_a=self.precoder.f_a,
            f_d=self.precoder.f_d,
            w_a=tuple(c.f_a for c in self.combiners),
            w_d=tuple(w_d),
            label=self.label,
        )


def omp_hybrid_transceiver(realization: ChannelRealization) -> OmpHybridDesign:
    """OMP approximations of the BD precoder and combiners."""
    cfg = realization.cfg
    bd = full_digital_bd(realization)
    pre = omp_hybrid_precoder(bd.f_d, transmit_dictionary(realization), cfg.n_rf_t, cfg.power_budget)
    combs = []
    for k in range(cfg.k_users):
        target = bd.w_d[k].to_complex()
        combs.append(omp_hybrid_precoder(target, receive_dictionary(realization, k), cfg.n_rf_r, 1.0))
    return OmpHybridDesign(realization, pre, tuple(combs))


# -- evaluation ---------------------------------------------------------------------


def evaluate_linear_transceiver(
    tx: LinearTransceiver,
    realization: ChannelRealization,
    symbols: ComplexMatrix,
    noise_variance: float,
    rng: Rng | None = None,
    noise: Sequence[ComplexMatrix] | None = None,
    normalize_power: bool = False,
) -> list[ComplexMatrix]:
    """Per-user combiner outputs for a batch of symbol vectors (one per row).

    ``normalize_power=True`` rescales every transmit vector to power ``P``
    before the channel (the autoencoder's power control), which makes a
    linear-mode network and its extracted matrices comparable.
    """
    cfg = realization.cfg
    f = tx.precoder()
    if symbols.cols != f.shape[1]:
        raise ShapeError(f"symbol batch has {symbols.cols} columns, precoder takes {f.shape[1]}")
    if f.shape[0] != cfg.n_t:
        raise ShapeError(f"precoder has {f.shape[0]} rows, expected n_t={cfg.n_t}")
    s = symbols.to_complex()
    x = s @ f.T
    if normalize_power:
        x = x * (np.sqrt(cfg.power_budget) / np.linalg.norm(x, axis=1, keepdims=True))
    out = []
    for k in range(cfg.k_users):
        y = x @ realization.h(k).T
        if noise is not None:
            y = y + noise[k].to_complex()
        elif noise_variance > 0:
            if rng is None:
                raise ValueError("rng required to draw noise")
            std = np.sqrt(noise_variance / 2.0)
            y = y + rng.normal(y.shape, std) + 1j * rng.normal(y.shape, std)
        w = tx.combiner(k)
        if w.shape[0] != cfg.n_r:
            raise ShapeError(f"user {k} combiner has {w.shape[0]} rows, expected n_r={cfg.n_r}")
        out.append(ComplexMatrix.from_complex(y @ w.conj()))
    return out


def from_extracted(mats, label: str = "dnhb_linear") -> LinearTransceiver:
    """Wrap :class:`~dnhb.autoencoder.ExtractedMatrices` as a transceiver."""
    return LinearTransceiver(
        f_a=mats.f_a,
        f_d=mats.f_d,
        w_a=tuple(mats.w_a),
        w_d=tuple(mats.w_d),
        label=label,
        f_a_mask=mats.f_a_mask,
        w_a_mask=tuple(mats.w_a_mask),
    )


def _planes(m: ComplexMatrix | None):
    return None if m is None else {"re": m.re.tolist(), "im": m.im.tolist()}


def _unplanes(d) -> ComplexMatrix | None:
    return None if d is None else ComplexMatrix(np.array(d["re"], dtype=np.float64), np.array(d["im"], dtype=np.float64))


def transceiver_to_dict(tx: LinearTransceiver) -> dict:
    """JSON-ready matrices and label; ``null`` marks a full-digital stage."""
    return {
        "format_version": 1,
        "label": tx.label,
        "f_a": _planes(tx.f_a),
        "f_d": _planes(tx.f_d),
        "w_a": [_planes(w) for w in tx.w_a],
        "w_d": [_planes(w) for w in tx.w_d],
    }


def transceiver_from_dict(doc: dict) -> LinearTransceiver:
    if doc.get("format_version") != 1:
        raise ValueError(f"unsupported transceiver format_version {doc.get('format_version')!r}")
    return LinearTransceiver(
        f_a=_unplanes(doc["f_a"]),
        f_d=_unplanes(doc["f_d"]),
        w_a=tuple(_unplanes(w) for w in doc["w_a"]),
        w_d=tuple(_unplanes(w) for w in doc["w_d"]),
        label=doc["label"],
    )
