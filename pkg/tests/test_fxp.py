import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qreadout import fxp
from qreadout.errors import FixedPointRangeError, ScaleOverflowError
from qreadout.fxp import Q6_12, Q10_17, Q16_29


def test_format_geometry():
    assert Q10_17.width == 27 and Q6_12.width == 18 and Q16_29.width == 45
    assert Q10_17.raw_max == 2 ** 26 - 1 and Q10_17.raw_min == -(2 ** 26)
    assert Q6_12.lsb == 2.0 ** -12


def test_encode_worked_value():
    raw = fxp.encode_q10_17(0.5454)
    assert raw == 71486
    assert fxp.to_bits(raw, Q10_17) == "000000000010001011100111110"
    assert abs(fxp.decode_q10_17(raw) - 0.5454) < 2.0 ** -17


def test_encode_minus_one_is_exact():
    raw = fxp.encode_q10_17(-1.0)
    assert raw == -(1 << 17)
    assert fxp.decode_q10_17(raw) == -1.0
    assert fxp.to_bits(raw, Q10_17) == "1" * 10 + "0" * 17


def test_encode_is_floor():
    # just below one LSB rounds down, negative values round toward -inf
    assert fxp.encode_q10_17(0.99 * 2.0 ** -17) == 0
    assert fxp.encode_q10_17(-0.01 * 2.0 ** -17) == -1


@pytest.mark.parametrize("x", [512.0, -512.0 - 2.0 ** -17, 1e9, math.inf, math.nan])
def test_encode_out_of_range_raises(x):
    with pytest.raises(FixedPointRangeError):
        fxp.encode_q10_17(x)


def test_encode_array_matches_scalar(rng):
    xs = rng.uniform(-500, 500, 1000)
    arr = fxp.encode(xs, Q10_17)
    assert arr.dtype == np.int64
    assert arr.tolist() == [fxp.encode(float(x), Q10_17) for x in xs]


@settings(max_examples=300, deadline=None)
@given(st.floats(-511.0, 511.0, allow_nan=False))
def test_encode_decode_error_below_one_lsb(x):
    raw = fxp.encode_q10_17(x)
    err = Fraction(x) - Fraction(raw, 1 << 17)
    assert 0 <= err < Fraction(1, 1 << 17)


@settings(max_examples=200, deadline=None)
@given(st.integers(-(2 ** 26), 2 ** 26 - 1))
def test_hex_roundtrip(raw):
    text = fxp.to_hex(raw, Q10_17)
    assert len(text) == Q10_17.hex_digits
    assert fxp.from_hex(text, Q10_17) == raw


@pytest.mark.parametrize("text", ["", "zz", "1234567890"])
def test_from_hex_rejects_garbage(text):
    with pytest.raises(ValueError):
        fxp.from_hex(text, Q10_17)


def test_product_saturates_with_flag():
    w, x = fxp.encode_q6_12(31.0), fxp.encode_q10_17(511.0)
    p = fxp.mul_dsp(w, x)
    assert fxp.decode(p, Q16_29) == 15841.0
    raw, ovf = fxp.slice_27(p)
    assert raw == 2 ** 26 - 1 and ovf


def test_slice_in_range_has_no_flag():
    p = fxp.mul_dsp(fxp.encode_q6_12(1.5), fxp.encode_q10_17(0.5))
    raw, ovf = fxp.slice_27(p)
    assert not ovf and fxp.decode_q10_17(raw) == 0.75


def test_product_truncation_bound(rng):
    # 10k random in-range pairs: the sliced product is the floor of the exact one
    w = rng.integers(Q6_12.raw_min, Q6_12.raw_max + 1, 10_000)
    x = rng.integers(-(1 << 21), 1 << 21, 10_000)  # keep |w*x| inside Q10.17
    raw, ovf = fxp.slice_27(fxp.mul_dsp(w, x))
    assert not ovf.any()
    exact = (w.astype(float) * 2.0 ** -12) * (x.astype(float) * 2.0 ** -17)
    err = exact - raw * 2.0 ** -17
    assert np.all(err >= 0) and np.all(err < 2.0 ** -17)


def test_scale_shift_worked_value():
    raw, ovf = fxp.scale_shift(48, 22, 0)
    assert raw == 65536 and not ovf
    assert fxp.scale_shift_staged(48, 22, 0) == (68720263168, 8192, 65536)


def test_scale_shift_lower_bound_maps_to_zero():
    raw, ovf = fxp.scale_shift(-(2 ** 22), 22, 0)
    assert raw == 0 and not ovf


def test_scale_shift_array_matches_scalar(rng):
    v = rng.integers(-(2 ** 30), 2 ** 30, 500)
    raw, ovf = fxp.scale_shift(v, 24, 12345)
    for k in range(0, 500, 37):
        r, o = fxp.scale_shift(int(v[k]), 24, 12345)
        assert (r, o) == (int(raw[k]), bool(ovf[k]))


def test_scale_shift_wide_register_overflow():
    with pytest.raises(ScaleOverflowError):
        fxp.scale_shift(2 ** 50, 1, 0)
    with pytest.raises(ScaleOverflowError):
        fxp.scale_shift(np.array([0, 2 ** 50]), 1, 0)


@settings(max_examples=300, deadline=None)
@given(st.integers(-(2 ** 31), 2 ** 31), st.integers(2, 32), st.integers(-(2 ** 20), 2 ** 20))
def test_scale_shift_agrees_with_float_scaling(v, n, mu):
    raw, ovf = fxp.scale_shift(v, n, mu)
    ref = (v - mu + 2.0 ** n) / 2.0 ** (n + 1)
    if ovf:
        assert ref >= 512.0 - 2.0 ** -17 or ref < -512.0
    else:
        assert abs(raw * 2.0 ** -17 - ref) <= 2.0 ** -17


def test_relu():
    assert fxp.relu_q(-5) == 0 and fxp.relu_q(7) == 7
    assert fxp.relu_q(np.array([-1, 0, 3])).tolist() == [0, 0, 3]


def test_lut_geometry_and_ends():
    lut = fxp.sigmoid_lut_build()
    assert lut.size == 256
    s = lambda v: 1 / (1 + math.exp(-v))
    # below the range reads entry 0, above reads the last entry
    lo = fxp.sigmoid_lut_eval(lut, fxp.encode_q10_17(-20.0))
    hi = fxp.sigmoid_lut_eval(lut, fxp.encode_q10_17(20.0))
    assert abs(fxp.decode_q10_17(lo) - s(-8.0)) < 2e-5
    assert abs(fxp.decode_q10_17(hi) - s(8.0)) < 2e-5
    assert lo == lut.entries[0] and hi == lut.entries[-1]


def _lut_max_error(size, x):
    lut = fxp.sigmoid_lut_build(size)
    got = fxp.decode_q10_17(fxp.sigmoid_lut_eval(lut, fxp.encode(x, Q10_17)))
    return float(np.max(np.abs(got - 1 / (1 + np.exp(-x)))))


def test_lut_monotone():
    lut = fxp.sigmoid_lut_build()
    assert all(a <= b for a, b in zip(lut.entries, lut.entries[1:]))
    x = fxp.encode(np.sort(np.random.default_rng(3).uniform(-10, 10, 2000)), Q10_17)
    assert np.all(np.diff(fxp.sigmoid_lut_eval(lut, x)) >= 0)


@pytest.mark.parametrize("size", [256, 512, 1024])
def test_lut_error_within_half_bin_bound(size, rng):
    # piecewise-constant table holding sigma at bin centres: the worst case is
    # half a bin times the peak slope 1/4, plus one output LSB
    x = rng.uniform(-8, 8, 1000)
    bound = 0.5 * (16 / size) * 0.25 + 2.0 ** -17
    assert _lut_max_error(size, x) <= bound


def test_lut_512_entries_meet_five_thousandths(rng):
    assert _lut_max_error(512, rng.uniform(-8, 8, 1000)) <= 0.005


def test_lut_zero_reads_just_below_half():
    lut = fxp.sigmoid_lut_build()
    assert fxp.sigmoid_lut_address(lut, 0) == 127
    assert fxp.sigmoid_lut_eval(lut, 0) <= 1 << 16


def test_identity_multiply():
    p = fxp.mul_dsp(fxp.encode_q6_12(1.0), fxp.encode_q10_17(0.5))
    assert fxp.decode(p, Q16_29) == 0.5
    assert fxp.slice_27(p) == (65536, False)


def test_lut_zero_within_one_table_step_of_half():
    lut = fxp.sigmoid_lut_build()
    step = 16 / 256 * 0.25
    assert abs(fxp.decode_q10_17(fxp.sigmoid_lut_eval(lut, 0)) - 0.5) <= step
