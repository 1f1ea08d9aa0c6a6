"""Monte Carlo BER measurement and SNR sweeps.

SNR is defined as ``P / sigma^2``: total transmit power over the noise
variance per receive antenna. Bit errors are pooled over all users and
streams.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autoencoder.model import DnhbModel, forward
from .baselines import LinearTransceiver, evaluate_linear_transceiver
from .channel import ChannelRealization
from .modulation import ConstellationSpec, constellation, demodulate, modulate
from .numerics import ComplexMatrix, Rng

__all__ = [
    "BerCurve",
    "TrialError",
    "ber_trial",
    "snr_sweep",
    "noise_variance_for_snr",
    "qpsk_awgn_ber",
    "write_curves_csv",
    "read_curves_csv",
    "snr_at_ber",
    "snr_gap",
    "SnrGap",
    "sweep_realization",
    "curve_from_counts",
    "CSV_HEADER",
    "constellation",
    "modulate",
    "demodulate",
    "ConstellationSpec",
]

CSV_HEADER = ["method", "snr_db", "ber", "errors", "bits", "realizations", "seed"]
_CHUNK_VECTORS = 8192


class TrialError(RuntimeError):
    pass


def noise_variance_for_snr(power: float, snr_db: float) -> float:
    return power / 10.0 ** (snr_db / 10.0)


def qpsk_awgn_ber(ebn0_db: float) -> float:
    """Closed-form Gray QPSK bit error rate ``Q(sqrt(2 Eb/N0))``."""
    gamma = 10.0 ** (ebn0_db / 10.0)
    return 0.5 * math.erfc(math.sqrt(gamma))


def _run(transceiver, realization: ChannelRealization, symbols: ComplexMatrix, sigma2: float, rng: Rng):
    if isinstance(transceiver, DnhbModel):
        outputs, _ = forward(transceiver, symbols, realization, sigma2, rng)
        return outputs
    if hasattr(transceiver, "at_noise"):
        transceiver = transceiver.at_noise(sigma2)
    if isinstance(transceiver, LinearTransceiver):
        return evaluate_linear_transceiver(transceiver, realization, symbols, sigma2, rng)
    raise TypeError(f"unsupported transceiver type {type(transceiver).__name__}")


def ber_trial(
    transceiver,
    realization: ChannelRealization,
    snr_db: float,
    n_bits: int,
    spec: ConstellationSpec,
    rng: Rng,
) -> tuple[int, int]:
    """Count bit errors over roughly ``n_bits`` random bits.

    The bit count is rounded down to whole symbol vectors; the count actually
    used is returned alongside the errors.
    """
    cfg = realization.cfg
    per_vector = spec.bits_per_symbol * cfg.total_streams
    if n_bits < per_vector:
        raise ValueError(f"n_bits={n_bits} is smaller than one symbol vector ({per_vector} bits)")
    n_vectors = n_bits // per_vector
    sigma2 = noise_variance_for_snr(cfg.power_budget, snr_db)
    errors = bits = 0
    done = 0
    while done < n_vectors:
        n = min(_CHUNK_VECTORS, n_vectors - done)
        tx_bits = rng.integers(0, 2, n * per_vector).astype(np.uint8)
        sym = modulate(tx_bits, spec).reshape(n, cfg.total_streams)
        outputs = _run(transceiver, realization, ComplexMatrix.from_complex(sym), sigma2, rng)
        est = np.hstack([o.to_complex() for o in outputs])
        rx_bits = demodulate(est, spec)
        errors += int(np.count_nonzero(rx_bits != tx_bits))
        bits += tx_bits.size
        done += n
    return errors, bits


@dataclass
class BerCurve:
    method: str
    snr_db: list[float]
    errors: list[int]
    bits: list[int]
    realizations: int
    seed: int
    extra: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not (len(self.snr_db) == len(self.errors) == len(self.bits)):
            raise ValueError("snr_db, errors and bits must have equal length")
        if any(b <= 0 for b in self.bits):
            raise ValueError("every SNR point needs a positive bit count")

    @property
    def ber(self) -> list[float]:
        return [e / b for e, b in zip(self.errors, self.bits)]

    def standard_error(self) -> list[float]:
        return [math.sqrt(max(p * (1 - p), 0.0) / b) for p, b in zip(self.ber, self.bits)]


def sweep_realization(factory, realization, snr_grid, bits_per_point, spec, seed):
    """Per-SNR ``(errors, bits)`` for one realization, drawing from ``Rng(seed)``.

    The transceiver comes from ``factory(realization, Rng(seed).child(0))``
    and trial ``j`` uses ``Rng(seed).child(j + 1)``.
    """
    rng = Rng(seed)
    try:
        tx = factory(realization, rng.child(0))
    except Exception as exc:
        raise TrialError(f"realization {realization.realization_id}, transceiver setup: {exc}") from exc
    counts = []
    for j, snr in enumerate(snr_grid):
        try:
            counts.append(ber_trial(tx, realization, snr, bits_per_point, spec, rng.child(j + 1)))
        except Exception as exc:
            raise TrialError(f"realization {realization.realization_id}, SNR {snr} dB: {exc}") from exc
    return counts


def curve_from_counts(method, snr_grid, per_realization, seed) -> BerCurve:
    """Sum integer counts over realizations (order-independent)."""
    n = len(snr_grid)
    errors = [sum(r[j][0] for r in per_realization) for j in range(n)]
    bits = [sum(r[j][1] for r in per_realization) for j in range(n)]
    return BerCurve(method, [float(x) for x in snr_grid], errors, bits, len(per_realization), seed)


def snr_sweep(
    factory: Callable[[ChannelRealization, Rng], object],
    channel_set: Sequence[ChannelRealization],
    snr_grid: Sequence[float],
    bits_per_point: int,
    spec: ConstellationSpec,
    rng: Rng,
    jobs: int = 1,
    method: str = "method",
) -> BerCurve:
    """Aggregate BER over realizations for every SNR point.

    ``factory(realization, rng)`` returns the transceiver for a realization
    (a trained model or a baseline design). Realization ``i`` draws from
    ``rng.child(i)``, so results do not depend on ``jobs``.
    """
    if not snr_grid:
        raise ValueError("empty SNR grid")
    if not channel_set:
        raise ValueError("empty channel set")
    seeds = [rng.child(i).seed for i in range(len(channel_set))]
    args = [(factory, r, list(snr_grid), bits_per_point, spec, s) for r, s in zip(channel_set, seeds)]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(sweep_realization, *zip(*args)))
    else:
        results = [sweep_realization(*a) for a in args]
    return curve_from_counts(method, snr_grid, results, rng.seed)


# -- CSV export / import --------------------------------------------------------


def write_curves_csv(path, curves: Sequence[BerCurve]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for c in curves:
            for snr, ber, e, b in zip(c.snr_db, c.ber, c.errors, c.bits):
                w.writerow([c.method, repr(float(snr)), repr(float(ber)), e, b, c.realizations, c.seed])


def read_curves_csv(path) -> list[BerCurve]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"{path}: expected header {','.join(CSV_HEADER)}")
        rows: dict[str, list[dict]] = {}
        for row in reader:
            rows.setdefault(row["method"], []).append(row)
    curves = []
    for method, rs in rows.items():
        curves.append(
            BerCurve(
                method,
                [float(r["snr_db"]) for r in rs],
                [int(r["errors"]) for r in rs],
                [int(r["bits"]) for r in rs],
                int(rs[0]["realizations"]),
                int(rs[0]["seed"]),
            )
        )
    return curves


def snr_at_ber(snr_db: Sequence[float], ber: Sequence[float], target: float = 1e-2) -> float | None:
    """SNR where the curve crosses ``target``, interpolating log10(BER) linearly in dB.

    Returns ``None`` when the curve never crosses the target.
    """
    lt = math.log10(target)
    pts = [(s, math.log10(b)) for s, b in zip(snr_db, ber) if b > 0]
    for (s0, l0), (s1, l1) in zip(pts, pts[1:]):
        if l0 == lt:
            return s0
        if (l0 - lt) * (l1 - lt) < 0:
            return s0 + (lt - l0) * (s1 - s0) / (l1 - l0)
    if pts and pts[-1][1] == lt:
        return pts[-1][0]
    return None


@dataclass(frozen=True)
class SnrGap:
    """How much less SNR ``other`` needs than ``reference`` to reach the target BER.

    ``kind`` is ``"exact"`` when both curves cross the target,
    ``"lower_bound"`` when only ``other`` does (the reference is taken to
    cross just beyond the grid), and ``"undefined"`` otherwise.
    """

    db: float | None
    kind: str


def snr_gap(reference: BerCurve, other: BerCurve, target: float = 1e-2) -> SnrGap:
    a = snr_at_ber(reference.snr_db, reference.ber, target)
    b = snr_at_ber(other.snr_db, other.ber, target)
    if a is not None and b is not None:
        return SnrGap(a - b, "exact")
    if a is None and b is not None and min(reference.ber) > target:
        return SnrGap(max(reference.snr_db) - b, "lower_bound")
    return SnrGap(None, "undefined")
