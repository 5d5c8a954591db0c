import math
from fractions import Fraction

import numpy as np
import pytest

from winolab.analysis import (CSV_HEADER, DEFAULT_KERNELS, count_mults, instrumented_mults,
                              measure_error, oracle_suite, relative_error, speedup_ratio, sweep,
                              to_csv)
from winolab.engines import EngineKind
from winolab.kerngen import generate_kernel

K22, K33, K44, K63 = (generate_kernel(*mr) for mr in DEFAULT_KERNELS)


def oracle_cost(method, R, m, r, dims=2):
    """Per-axis cost written from the closed forms, independent of the module."""
    l = m + r - 1
    if method == "native":
        per = Fraction(R)
    elif method == "direct_winograd":
        per = Fraction(m + R - 1, m)
    elif method == "ola":
        per = Fraction(math.ceil(R / r) * l, m)
    else:
        d = max(1, math.ceil(math.log(R, r) - 1e-12)) if R > 1 else 1
        o = m
        for j in range(2, d + 1):
            o = (m - 1) * r ** (j - 1) + o
        per = Fraction(l**d, o)
    return per**dims


def test_examples():
    assert count_mults("ola", 9, K33).mults_per_output == 25
    assert count_mults("nested", 9, K33).mults_per_output == Fraction(625, 81)
    assert count_mults("native", 3).mults_per_output == 9


@pytest.mark.parametrize("mr", DEFAULT_KERNELS)
@pytest.mark.parametrize("R", range(1, 13))
@pytest.mark.parametrize("method", ["ola", "nested", "direct_winograd", "native"])
@pytest.mark.parametrize("dims", [1, 2])
def test_closed_form_matches_oracle(mr, R, method, dims):
    k = generate_kernel(*mr)
    assert count_mults(method, R, k, dims).mults_per_output == oracle_cost(method, R, *mr, dims)


@pytest.mark.parametrize("mr", DEFAULT_KERNELS)
def test_degenerate_filters_cost_equal(mr):
    k = generate_kernel(*mr)
    R = k.r
    costs = {count_mults(m, R, k).mults_per_output for m in ("ola", "nested", "direct_winograd")}
    assert len(costs) == 1


def test_speedup_examples():
    assert speedup_ratio(9, K33) == Fraction(81, 25)
    assert speedup_ratio(5, K33) == Fraction(36, 25)
    assert speedup_ratio(3, K33) == 1


def test_nested_advantage_grows_for_f22():
    gaps = [count_mults("ola", R, K22).mults_per_output - count_mults("nested", R, K22).mults_per_output
            for R in range(3, 13)]
    assert all(b >= a for a, b in zip(gaps, gaps[1:]))


def test_stride_cost_sums_phases():
    # R=5, S=2, F(2,2): nested phase 9 mults / 4 outputs, leaf phase 3 / 2 -> (9 + 2*3) / 4 per axis
    c = count_mults("plan", 5, K22, dims=1, stride=2)
    assert c.mults_per_output == Fraction(15, 4)
    assert count_mults("nested", 5, K22, dims=2, stride=2).mults_per_output == Fraction(15, 4) ** 2


def test_mixed_kernel_cost():
    k63 = K63
    assert count_mults("nested", 5, k63).mults_per_output / count_mults("ola", 5, k63).mults_per_output \
        == Fraction(256, 196)
    mixed = count_mults("nested", 5, k63, mixed=True).mults_per_output
    assert mixed == count_mults("ola", 5, k63).mults_per_output


def test_count_mults_errors():
    with pytest.raises(ValueError):
        count_mults("ola", 5)
    with pytest.raises(ValueError):
        count_mults("ola", 5, K22, dims=3)
    with pytest.raises(ValueError):
        count_mults("nested", 9, generate_kernel(2, 3))


@pytest.mark.parametrize("method,R,mr,S", [
    ("ola", 9, (3, 3), 1), ("nested", 9, (3, 3), 1), ("direct_winograd", 5, (2, 2), 1),
    ("nested", 7, (6, 3), 1), ("ola", 12, (4, 4), 1), ("plan", 5, (2, 2), 2),
    ("nested", 10, (2, 2), 3), ("ola", 7, (2, 2), 2),
])
def test_counter_matches_formula(method, R, mr, S):
    k = generate_kernel(*mr)
    for dims in (1, 2):
        count, tiles = instrumented_mults(method, R, k, dims=dims, stride=S)
        assert count == count_mults(method, R, k, dims, S).mults_per_tile * tiles


def test_sweep_and_csv():
    reports = sweep()
    assert len(reports) == 10 * 4 * 3
    text = to_csv(reports)
    lines = text.splitlines()
    assert lines[0] == CSV_HEADER and len(lines) == 121
    assert to_csv(sweep()) == text
    assert all(math.isfinite(float(r.mults_per_output)) for r in reports)


def test_relative_error():
    assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 4.0])) == 0.5
    assert relative_error(np.zeros(2), np.zeros(2)) == 0.0


def test_native_error_tiny():
    assert measure_error("native", 5, None, precision=64, trials=5).max_relative_error <= 1e-12


def test_error_is_seeded():
    a = measure_error("nested", 9, K22, 32, trials=3, seed=5)
    b = measure_error("nested", 9, K22, 32, trials=3, seed=5)
    assert a == b


def test_oracle_suite_small_and_thread_independent():
    kw = dict(trials=2, seed=3, kernels=[(2, 2), (3, 3)], sides=[3, 7], strides=[1, 2])
    rows = oracle_suite(threads=1, **kw)
    assert rows == oracle_suite(threads=3, **kw)
    assert len(rows) == 2 * 2 * 2 * 4
    assert all(r.passed for r in rows)
    assert {r.engine for r in rows} >= {"nested", "stride[ola]", "plan"}
    assert not all(r.passed for r in oracle_suite(threads=1, tolerance=0.0, **kw))
