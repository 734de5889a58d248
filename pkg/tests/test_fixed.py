from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from streamgnn.fixed import (Q8_8, Q16_16, dequantize, quantize, reset_saturation_stats,
                             saturation_count)


def test_quantize_examples():
    assert quantize(1.5, Q16_16).raw == 0x00018000
    assert quantize(0.0, Q16_16).raw == 0
    assert quantize(70000.0, Q16_16).raw == 0x7FFFFFFF
    assert quantize(-70000.0, Q16_16).raw == -0x80000000
    assert dequantize(quantize(1.5, Q16_16)) == 1.5


def test_saturation_is_counted():
    reset_saturation_stats()
    Q16_16.quantize([70000.0, 1.0, -1e9])
    assert saturation_count(Q16_16) == 2
    Q8_8.add(Q8_8.raw_max, 1)
    assert saturation_count(Q8_8) == 1
    assert saturation_count() == 3
    reset_saturation_stats()
    assert saturation_count() == 0


def test_round_half_even():
    lsb = Q16_16.lsb
    assert Q16_16.quantize(0.5 * lsb) == 0
    assert Q16_16.quantize(1.5 * lsb) == 2
    assert Q16_16.quantize(2.5 * lsb) == 2
    # product rounding: 0.5 lsb * 1.0 -> ties to even
    assert Q16_16.mul(1, Q16_16.one // 2) == 0
    assert Q16_16.mul(3, Q16_16.one // 2) == 2


@pytest.mark.parametrize("fmt,bound", [(Q16_16, 2.0 ** -17), (Q8_8, 2.0 ** -9)])
def test_round_trip_half_lsb(fmt, bound, rng):
    hi = 2.0 ** (fmt.total_bits - fmt.frac_bits - 1) - 1
    x = rng.uniform(-hi, hi, 100_000)
    assert np.abs(fmt.dequantize(fmt.quantize(x)) - x).max() <= bound


@given(st.floats(-100, 100, allow_nan=False), st.floats(-100, 100, allow_nan=False))
def test_mul_add_close_to_real(a, b):
    f = Q16_16
    ra, rb = f.quantize(a), f.quantize(b)
    va, vb = f.dequantize(ra), f.dequantize(rb)
    assert abs(f.dequantize(f.mul(ra, rb)) - va * vb) <= f.lsb / 2 + 1e-12
    assert f.dequantize(f.add(ra, rb)) == va + vb


@given(st.floats(-50, 50, allow_nan=False), st.floats(0.01, 50, allow_nan=False))
def test_div_close_to_real(a, b):
    f = Q16_16
    ra, rb = f.quantize(a), f.quantize(b)
    got = f.dequantize(f.div(ra, rb))
    assert abs(got - f.dequantize(ra) / f.dequantize(rb)) <= f.lsb / 2 + 1e-12


def test_div_by_zero_is_zero():
    assert Q16_16.div(Q16_16.one, 0) == 0
    assert Q16_16.div_int(5, 0) == 0


def test_div_int_rounding():
    assert Q16_16.div_int(np.array([1, 3, 5, -5]), 2).tolist() == [0, 2, 2, -2]


@given(st.integers(0, 2 ** 31 - 1))
def test_sqrt_is_nearest(raw):
    f = Q16_16
    r = int(f.sqrt(raw))
    exact = (raw * f.one) ** 0.5
    assert abs(r - exact) <= 0.5 + 1e-9


def test_matvec_single_rounding(rng):
    f = Q16_16
    w = rng.uniform(-1, 1, (7, 13))
    x = rng.uniform(-1, 1, 13)
    b = rng.uniform(-1, 1, 7)
    got = f.dequantize(f.matvec(f.quantize(w), f.quantize(x), f.quantize(b)))
    exact = f.dequantize(f.quantize(w)) @ f.dequantize(f.quantize(x)) + f.dequantize(f.quantize(b))
    assert np.abs(got - exact).max() <= f.lsb / 2 + 1e-12


def test_matvec_wide_accumulator_path():
    f = Q16_16
    w = np.full((1, 4), f.raw_max, dtype=np.int64)
    x = np.full(4, f.raw_max, dtype=np.int64)
    reset_saturation_stats()
    assert f.matvec(w, x).tolist() == [f.raw_max]
    assert saturation_count(f) == 1
    small = f.matvec(np.array([[f.one] * 4]), np.array([f.raw_max, -f.raw_max, 5, -5]))
    assert small.tolist() == [0]


def test_exp_matches_float():
    f = Q16_16
    z = f.quantize(np.linspace(-8, 0, 50))
    assert np.abs(f.dequantize(f.exp(z)) - np.exp(f.dequantize(z))).max() <= f.lsb / 2
