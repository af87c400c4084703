"""Two's-complement fixed-point words, DSP-style multiply, shift-only scaling
and the sigmoid lookup table.

Raw words are plain Python ints or ``np.int64`` arrays; every function here
accepts either. Rounding is always floor on the raw integer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import FixedPointRangeError, ScaleOverflowError


@dataclass(frozen=True)
class QFormat:
    int_bits: int   # including sign
    frac_bits: int

    @property
    def width(self) -> int:
        return self.int_bits + self.frac_bits

    @property
    def raw_min(self) -> int:
        return -(1 << (self.width - 1))

    @property
    def raw_max(self) -> int:
        return (1 << (self.width - 1)) - 1

    @property
    def lsb(self) -> float:
        return 2.0 ** -self.frac_bits

    @property
    def hex_digits(self) -> int:
        return (self.width + 3) // 4

    def __str__(self) -> str:
        return f"Q{self.int_bits}.{self.frac_bits}"


Q10_17 = QFormat(10, 17)   # activations, inputs, biases
Q6_12 = QFormat(6, 12)     # weights
Q16_29 = QFormat(16, 29)   # full 18x27 product

WIDE_BITS = 64  # emulator's wide-integer register for scaling intermediates


def _is_array(x) -> bool:
    return isinstance(x, np.ndarray)


def encode(x, fmt: QFormat = Q10_17):
    """Quantize real ``x`` to a raw word: floor(x * 2**frac_bits).

    Raises FixedPointRangeError if the value does not fit ``fmt``.
    """
    if _is_array(x):
        raw = np.floor(np.asarray(x, dtype=float) * (1 << fmt.frac_bits))
        bad = ~np.isfinite(raw) | (raw < fmt.raw_min) | (raw > fmt.raw_max)
        if bad.any():
            idx = int(np.flatnonzero(bad)[0])
            raise FixedPointRangeError(
                f"value {float(np.ravel(x)[idx])!r} at index {idx} out of range for {fmt}")
        return raw.astype(np.int64)
    xf = float(x)
    if not math.isfinite(xf):
        raise FixedPointRangeError(f"non-finite value {x!r}")
    raw = math.floor(xf * (1 << fmt.frac_bits))
    if raw < fmt.raw_min or raw > fmt.raw_max:
        raise FixedPointRangeError(f"value {x!r} out of range for {fmt}")
    return raw


def decode(raw, fmt: QFormat = Q10_17):
    if _is_array(raw):
        return raw.astype(float) / (1 << fmt.frac_bits)
    return raw / (1 << fmt.frac_bits)


def encode_q10_17(x):
    return encode(x, Q10_17)


def decode_q10_17(raw):
    return decode(raw, Q10_17)


def encode_q6_12(x):
    return encode(x, Q6_12)


def decode_q6_12(raw):
    return decode(raw, Q6_12)


def to_bits(raw: int, fmt: QFormat) -> str:
    return format(raw & ((1 << fmt.width) - 1), f"0{fmt.width}b")


def to_hex(raw: int, fmt: QFormat) -> str:
    return format(raw & ((1 << fmt.width) - 1), f"0{fmt.hex_digits}x")


def from_hex(text: str, fmt: QFormat) -> int:
    """Parse a zero-padded two's-complement hex word. Raises ValueError."""
    if len(text) != fmt.hex_digits:
        raise ValueError(f"expected {fmt.hex_digits} hex digits, got {len(text)}")
    u = int(text, 16)
    if u >> fmt.width:
        raise ValueError(f"word {text} wider than {fmt.width} bits")
    if u >> (fmt.width - 1):
        u -= 1 << fmt.width
    return u


def saturate(raw, fmt: QFormat):
    """Clamp to ``fmt``. Returns (raw, overflowed)."""
    if _is_array(raw):
        over = (raw > fmt.raw_max) | (raw < fmt.raw_min)
        return np.clip(raw, fmt.raw_min, fmt.raw_max), over
    if raw > fmt.raw_max:
        return fmt.raw_max, True
    if raw < fmt.raw_min:
        return fmt.raw_min, True
    return raw, False


def mul_dsp(w, x):
    """Exact 18x27 -> 45-bit product (Q6.12 * Q10.17 -> Q16.29)."""
    return w * x


def slice_product(p, w_fmt: QFormat = Q6_12, x_fmt: QFormat = Q10_17,
                  out_fmt: QFormat = Q10_17):
    """Keep ``out_fmt.frac_bits`` top fraction bits of a product and the low
    ``out_fmt.int_bits`` integer bits, saturating when the discarded integer
    bits are not a sign extension. Returns (raw, overflowed)."""
    drop = w_fmt.frac_bits + x_fmt.frac_bits - out_fmt.frac_bits
    return saturate(p >> drop, out_fmt)


def slice_27(p):
    """Q16.29 product -> Q10.17 (bits [38:12] of the product word)."""
    return slice_product(p, Q6_12, Q10_17, Q10_17)


def scale_shift(value, n: int, mu: int, fmt: QFormat = Q10_17):
    """Shift-only min-max scaling of an integer accumulate.

    raw = ((value - mu + 2**n) << frac_bits) >> (n + 1), floor semantics.
    Returns (raw, overflowed) where overflow means the result left ``fmt``
    and was saturated. An intermediate that does not fit the 64-bit wide
    register raises ScaleOverflowError.
    """
    if n < 1:
        raise ValueError(f"shift exponent must be >= 1, got {n}")
    lim = 1 << (WIDE_BITS - 1)
    if _is_array(value):
        if value.size:
            for extreme in (int(value.max()), int(value.min())):
                if not -lim <= (extreme - int(mu) + (1 << n)) << fmt.frac_bits < lim:
                    raise ScaleOverflowError(
                        f"scaling intermediate exceeds {WIDE_BITS}-bit register")
        tmp = np.asarray(value, dtype=np.int64) - np.int64(mu) + np.int64(1 << n)
        raw = (tmp << fmt.frac_bits) >> (n + 1)
        return saturate(raw, fmt)
    tmp = int(value) - int(mu) + (1 << n)
    shifted = tmp << fmt.frac_bits
    if not -lim <= shifted < lim:
        raise ScaleOverflowError(
            f"scaling intermediate {shifted} exceeds {WIDE_BITS}-bit register")
    return saturate(shifted >> (n + 1), fmt)


def scale_shift_staged(value: int, n: int, mu: int, pre: int = 14, frac_bits: int = 17):
    """Three-step variant that widens by ``pre`` bits before the divide.

    Returns (widened, divided, raw) so each stage can be inspected.
    """
    widened = (int(value) - int(mu) + (1 << n)) << pre
    divided = widened >> (n + 1)
    raw = (divided << frac_bits) >> pre
    return widened, divided, raw


def relu_q(x):
    if _is_array(x):
        return np.where(x < 0, 0, x).astype(np.int64)
    return 0 if x < 0 else x


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass(frozen=True)
class SigmoidLut:
    """Bin table for sigmoid. ``edges`` are the interior bin boundaries
    as raw words; the address of ``x`` is the number of edges strictly
    below it."""

    lo: int
    hi: int
    entries: tuple[int, ...]
    fmt: QFormat = Q10_17

    @property
    def size(self) -> int:
        return len(self.entries)

    @property
    def edges(self) -> np.ndarray:
        k = np.arange(1, self.size, dtype=np.int64)
        return self.lo + ((self.hi - self.lo) * k) // self.size


def sigmoid_lut_build(size: int = 256, lo: float = -8.0, hi: float = 8.0,
                      fmt: QFormat = Q10_17) -> SigmoidLut:
    if size < 2:
        raise ValueError("LUT needs at least 2 entries")
    if not lo < hi:
        raise ValueError("LUT bounds need lo < hi")
    width = (hi - lo) / size
    mids = lo + (np.arange(size) + 0.5) * width
    entries = tuple(int(v) for v in encode(_sigmoid(mids), fmt))
    return SigmoidLut(encode(lo, fmt), encode(hi, fmt), entries, fmt)


def sigmoid_lut_address(lut: SigmoidLut, x):
    edges = lut.edges
    if _is_array(x):
        xc = np.clip(x, lut.lo, lut.hi)
        return np.searchsorted(edges, xc, side="left")
    xc = min(max(int(x), lut.lo), lut.hi)
    return int(np.searchsorted(edges, xc, side="left"))


def sigmoid_lut_eval(lut: SigmoidLut, x):
    addr = sigmoid_lut_address(lut, x)
    if _is_array(addr):
        return np.asarray(lut.entries, dtype=np.int64)[addr]
    return lut.entries[addr]
