"""Gray-mapped unit-energy QPSK and 16-QAM.

QPSK maps bit pair ``(b0, b1)`` to ``((1 - 2 b0) + j (1 - 2 b1)) / sqrt(2)``,
so ``00 -> (1+j)/sqrt(2)``. 16-QAM maps ``(b0, b1)`` to the in-phase level
and ``(b2, b3)`` to the quadrature level through the per-axis Gray code
``00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3``, scaled by ``1/sqrt(10)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["ConstellationSpec", "constellation", "modulate", "demodulate"]


@dataclass(frozen=True, eq=False)
class ConstellationSpec:
    scheme: str
    points: np.ndarray  # complex, index = integer value of the bit pattern (MSB first)
    bits_per_symbol: int
    bit_table: np.ndarray = field(repr=False)  # (M, bits_per_symbol) uint8

    @property
    def order(self) -> int:
        return len(self.points)

    @property
    def average_energy(self) -> float:
        return float(np.mean(np.abs(self.points) ** 2))


def _bit_table(m: int, bps: int) -> np.ndarray:
    idx = np.arange(m)[:, None]
    return ((idx >> np.arange(bps - 1, -1, -1)[None, :]) & 1).astype(np.uint8)


def constellation(scheme: str = "qpsk") -> ConstellationSpec:
    scheme = scheme.lower()
    if scheme == "qpsk":
        table = _bit_table(4, 2)
        b = table.astype(np.int64)
        pts = ((1 - 2 * b[:, 0]) + 1j * (1 - 2 * b[:, 1])) / np.sqrt(2)
        return ConstellationSpec("qpsk", pts, 2, table)
    if scheme == "qam16":
        table = _bit_table(16, 4)
        level = {(0, 0): -3, (0, 1): -1, (1, 1): 1, (1, 0): 3}
        i = np.array([level[(a, b)] for a, b in table[:, :2]])
        q = np.array([level[(a, b)] for a, b in table[:, 2:]])
        return ConstellationSpec("qam16", (i + 1j * q) / np.sqrt(10), 4, table)
    raise ValueError(f"unknown constellation {scheme!r}; expected 'qpsk' or 'qam16'")


def modulate(bits, spec: ConstellationSpec) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    bps = spec.bits_per_symbol
    if bits.size % bps:
        raise ValueError(f"bit count {bits.size} is not a multiple of {bps}")
    groups = bits.reshape(-1, bps).astype(np.int64)
    idx = groups @ (1 << np.arange(bps - 1, -1, -1))
    return spec.points[idx]


def demodulate(symbols, spec: ConstellationSpec) -> np.ndarray:
    """Minimum-distance hard decisions, returned as a flat bit array."""
    s = np.asarray(symbols, dtype=np.complex128).ravel()
    if spec.scheme == "qpsk":
        # nearest QPSK point is fixed by the quadrant
        out = np.empty((s.size, 2), dtype=np.uint8)
        out[:, 0] = s.real < 0
        out[:, 1] = s.imag < 0
        return out.ravel()
    d = np.abs(s[:, None] - spec.points[None, :])
    return spec.bit_table[np.argmin(d, axis=1)].ravel()
