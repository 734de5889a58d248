"""Signed fixed-point arithmetic on integer arrays.

Values are carried as raw ``int64`` numpy arrays; a :class:`FixedFormat`
interprets them as ``raw * 2**-frac_bits``.  Every operation rounds to
nearest-even and saturates to the format's range.  Reductions accumulate in
wide (64-bit or arbitrary precision) integers and round once at the end, the
way a DSP accumulator would.
"""
from __future__ import annotations

import threading
from collections import Counter
from dataclasses import dataclass

import numpy as np

_stats_lock = threading.Lock()
_saturations: Counter = Counter()


def saturation_count(fmt: "FixedFormat | None" = None) -> int:
    with _stats_lock:
        if fmt is None:
            return sum(_saturations.values())
        return _saturations[fmt.name]


def reset_saturation_stats() -> None:
    with _stats_lock:
        _saturations.clear()


def _rshift_rne(v: np.ndarray, s: int) -> np.ndarray:
    if s == 0:
        return v
    if v.dtype == object:
        q = v >> s
        r = v - (q << s)
        half = 1 << (s - 1)
        up = (r > half) | ((r == half) & ((q & 1) == 1))
        return q + up.astype(np.int64)
    q = v >> s
    r = v & ((1 << s) - 1)
    half = 1 << (s - 1)
    return q + ((r > half) | ((r == half) & ((q & 1) == 1)))


def _div_rne(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    num = np.asarray(num, dtype=np.int64)
    den = np.asarray(den, dtype=np.int64)
    neg = (num < 0) != (den < 0)
    n = np.abs(num)
    d = np.abs(den)
    q = n // d
    r = n - q * d
    up = (2 * r > d) | ((2 * r == d) & ((q & 1) == 1))
    q = q + up
    return np.where(neg, -q, q)


@dataclass(frozen=True)
class FixedFormat:
    name: str
    total_bits: int
    frac_bits: int

    @property
    def one(self) -> int:
        return 1 << self.frac_bits

    @property
    def raw_max(self) -> int:
        return (1 << (self.total_bits - 1)) - 1

    @property
    def raw_min(self) -> int:
        return -(1 << (self.total_bits - 1))

    @property
    def lsb(self) -> float:
        return 2.0 ** -self.frac_bits

    # conversion -------------------------------------------------------
    def saturate(self, raw) -> np.ndarray:
        raw = np.asarray(raw)
        lo, hi = self.raw_min, self.raw_max
        over = int(np.count_nonzero((raw > hi) | (raw < lo)))
        if over:
            with _stats_lock:
                _saturations[self.name] += over
            raw = np.clip(raw, lo, hi)
        return raw.astype(np.int64)

    def quantize(self, x) -> np.ndarray:
        scaled = np.rint(np.asarray(x, dtype=np.float64) * self.one)
        lo, hi = float(self.raw_min), float(self.raw_max)
        over = int(np.count_nonzero((scaled > hi) | (scaled < lo)))
        if over:
            with _stats_lock:
                _saturations[self.name] += over
            scaled = np.clip(scaled, lo, hi)
        return scaled.astype(np.int64)

    def dequantize(self, raw) -> np.ndarray:
        return np.asarray(raw, dtype=np.float64) / self.one

    # arithmetic -------------------------------------------------------
    def add(self, a, b) -> np.ndarray:
        return self.saturate(np.asarray(a, dtype=np.int64) + np.asarray(b, dtype=np.int64))

    def sub(self, a, b) -> np.ndarray:
        return self.saturate(np.asarray(a, dtype=np.int64) - np.asarray(b, dtype=np.int64))

    def mul(self, a, b) -> np.ndarray:
        prod = np.asarray(a, dtype=np.int64) * np.asarray(b, dtype=np.int64)
        return self.saturate(_rshift_rne(prod, self.frac_bits))

    def div(self, a, b) -> np.ndarray:
        """a / b; a zero divisor yields 0."""
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        safe = np.where(b == 0, 1, b)
        q = _div_rne(a << self.frac_bits, safe)
        return self.saturate(np.where(b == 0, 0, q))

    def div_int(self, a, n) -> np.ndarray:
        """Divide by a plain (unscaled) integer count."""
        n = np.asarray(n, dtype=np.int64)
        safe = np.where(n == 0, 1, n)
        q = _div_rne(np.asarray(a, dtype=np.int64), safe)
        return self.saturate(np.where(n == 0, 0, q))

    def sqrt(self, a) -> np.ndarray:
        a = np.maximum(np.asarray(a, dtype=np.int64), 0)
        n = a << self.frac_bits
        r = np.floor(np.sqrt(n.astype(np.float64))).astype(np.int64)
        r = np.where(r * r > n, r - 1, r)
        r = np.where((r + 1) * (r + 1) <= n, r + 1, r)
        r = np.where(n - r * r > r, r + 1, r)
        return self.saturate(r)

    def exp(self, a) -> np.ndarray:
        # table lookup semantics: exact function of the raw input
        return self.quantize(np.exp(self.dequantize(a)))

    def relu(self, a) -> np.ndarray:
        return np.maximum(np.asarray(a, dtype=np.int64), 0)

    def matvec(self, w, x, bias=None) -> np.ndarray:
        """Rounded ``w @ x + bias`` with a single rounding after a wide accumulate."""
        w = np.asarray(w, dtype=np.int64)
        x = np.asarray(x, dtype=np.int64)
        k = w.shape[-1]
        if k and w.size and x.size:
            bound = int(np.abs(w).max()) * int(np.abs(x).max()) * k
        else:
            bound = 0
        if bound >= (1 << 62):
            acc = w.astype(object) @ x.astype(object)
            if bias is not None:
                acc = acc + (np.asarray(bias, dtype=np.int64).astype(object) << self.frac_bits)
            out = _rshift_rne(np.asarray(acc, dtype=object), self.frac_bits)
            return self.saturate(np.array([int(v) for v in np.ravel(out)]).reshape(np.shape(out)))
        acc = w @ x
        if bias is not None:
            acc = acc + (np.asarray(bias, dtype=np.int64) << self.frac_bits)
        return self.saturate(_rshift_rne(acc, self.frac_bits))


Q16_16 = FixedFormat("Q16.16", 32, 16)
Q8_8 = FixedFormat("Q8.8", 16, 8)
FORMATS = {f.name: f for f in (Q16_16, Q8_8)}


@dataclass(frozen=True)
class Fixed:
    raw: int
    fmt: FixedFormat = Q16_16

    @property
    def value(self) -> float:
        return self.raw / self.fmt.one

    def __float__(self) -> float:
        return self.value


def quantize(x: float, fmt: FixedFormat = Q16_16) -> Fixed:
    return Fixed(int(fmt.quantize(x)), fmt)


def dequantize(f: Fixed) -> float:
    return f.value
