import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_phi_ranks, dense_contraction, dense_contraction_norm, dense_kernel
from ustat_fclt import kernels as K
from ustat_fclt.kernels import (
    DepthOutOfRange,
    DiagonalKey,
    DuplicateKey,
    IndexOutOfRange,
    InvalidArity,
    KeyOutOfRange,
    MomentBelowOne,
    NonPositiveEntry,
    TooSmall,
    ZeroKernel,
)


@st.composite
def small_kernels(draw, max_m=7, max_p=3):
    p = draw(st.integers(1, max_p))
    m = draw(st.integers(p, max_m))
    seed = draw(st.integers(0, 2**32 - 1))
    density = draw(st.sampled_from([0.3, 0.7, 1.0]))
    return K.random_kernel(p, m, np.random.default_rng(seed), density)


# construction --------------------------------------------------------------


def test_make_kernel_canonicalizes_keys():
    k = K.make_kernel(2, 4, {(3, 1): 2.0, (2, 4): -1.0})
    assert k.supports.tolist() == [[1, 3], [2, 4]]
    assert k.point(3, 1) == k.point(1, 3) == 1.0
    assert k.point(1, 1) == 0.0
    assert k.point(1, 2) == 0.0


@pytest.mark.parametrize(
    "entries, exc",
    [
        ({(1, 5): 1.0}, KeyOutOfRange),
        ({(0, 2): 1.0}, KeyOutOfRange),
        ({(2, 2): 1.0}, DiagonalKey),
        ({(1, 2): 1.0, (2, 1): 3.0}, DuplicateKey),
        ({(1, 2, 3): 1.0}, KeyOutOfRange),
    ],
)
def test_make_kernel_rejects(entries, exc):
    with pytest.raises(exc):
        K.make_kernel(2, 4, entries)


def test_normalize_zero_kernel():
    k = K.make_kernel(2, 3, {(1, 2): 0.0})
    with pytest.raises(ZeroKernel):
        K.normalize(k)


@given(small_kernels())
def test_random_kernels_are_normalized(k):
    assert k.normalized
    assert math.isclose(k.sum_of_squares(), 1.0, abs_tol=1e-12)
    assert K.normalize(k) is k


# influence and variance profile ---------------------------------------------


@given(small_kernels())
def test_influences_match_dense_function(k):
    f = dense_kernel(k)
    p = k.order
    infl = K.influences(k)
    for i in range(1, k.size + 1):
        # ordered tuples starting with i cover each support through i exactly (p-1)! times
        expected = float(np.sum(f[i - 1] ** 2)) / math.factorial(p - 1)
        assert math.isclose(infl[i - 1], expected, rel_tol=1e-9, abs_tol=1e-15)
        assert math.isclose(K.influence(k, i), infl[i - 1], rel_tol=1e-12, abs_tol=1e-15)


@given(small_kernels())
def test_rho_squared_is_scaled_max_influence(k):
    assert math.isclose(K.rho_squared(k), math.factorial(k.order) ** 2 * K.influences(k).max(), rel_tol=1e-12)
    assert math.isclose(K.influences(k).sum(), k.order * k.sum_of_squares() / math.factorial(k.order) ** 2,
                        rel_tol=1e-12)


@given(small_kernels())
def test_prefix_variance_is_monotone_and_complete(k):
    prof = K.sigma_sq_prefix(k, np.arange(k.size + 1))
    assert np.all(np.diff(prof) >= 0)
    assert prof[0] == 0.0
    assert math.isclose(prof[-1], k.sum_of_squares(), rel_tol=1e-12)
    for j in range(k.size + 1):
        direct = sum(a * a for J, a in k.as_dict().items() if max(J) <= j)
        assert math.isclose(prof[j], direct, rel_tol=1e-12, abs_tol=1e-15)


def test_prefix_variance_range():
    k = K.make_kernel(1, 3, {1: 1.0})
    with pytest.raises(IndexOutOfRange):
        K.sigma_sq_prefix(k, 4)
    with pytest.raises(IndexOutOfRange):
        K.influence(k, 0)


def test_integer_part_is_robust_to_binary_rounding():
    assert K.integer_part(100, 0.29) == 29
    assert K.integer_part(10, 0.7) == 7
    assert K.integer_part(3, 1 / 3) == 1


# contractions --------------------------------------------------------------


def test_contraction_two_point_example():
    k = K.make_kernel(2, 2, {(1, 2): 1.0})
    table = K.contraction(k, 1)
    assert table.values == {(1, 1): 0.25, (2, 2): 0.25}
    assert math.isclose(K.contraction_norm(k, 1) ** 2, 0.125)


@given(small_kernels(max_m=6, max_p=3))
def test_contraction_matches_dense_oracle(k):
    for r in range(1, k.order):
        dense = dense_contraction(k, r)
        table = K.contraction(k, r)
        rebuilt = np.zeros_like(dense)
        for key, v in table.values.items():
            rebuilt[tuple(i - 1 for i in key)] = v
        np.testing.assert_allclose(rebuilt, dense, atol=1e-14)
        assert math.isclose(K.contraction_norm(k, r), float(np.sqrt(np.sum(dense**2))), rel_tol=1e-9,
                            abs_tol=1e-15)
        assert math.isclose(table.norm(), K.contraction_norm(k, r), rel_tol=1e-9, abs_tol=1e-15)


def test_contraction_norm_fractional_against_dense_matrix_oracle():
    k = K.fractional_kernel(3, 2, 100)
    for r in (1, 2):
        assert math.isclose(K.contraction_norm(k, r), dense_contraction_norm(k, r), rel_tol=1e-10)
    # frozen from the dense oracle
    assert math.isclose(K.contraction_norm(k, 1), 0.024845199749997653, rel_tol=1e-10)


def test_contraction_depth_checked():
    k = K.make_kernel(2, 3, {(1, 2): 1.0})
    for r in (0, 2):
        with pytest.raises(DepthOutOfRange):
            K.contraction_norm(k, r)


# fractional products -------------------------------------------------------


@pytest.mark.parametrize("a, top", [(2, 5), (3, 3)])
def test_phi_matches_bruteforce_ranking(a, top):
    ranks = brute_phi_ranks(a, top)
    table = K.phi_table(a, top)
    for t, rank in ranks.items():
        assert K.phi_map(a, t) == rank
        assert table[tuple(v - 1 for v in t)] == rank


def test_phi_small_values():
    assert [K.phi_map(2, t) for t in [(1, 1), (1, 2), (2, 1), (2, 2)]] == [1, 2, 3, 4]
    with pytest.raises(NonPositiveEntry):
        K.phi_map(2, (0, 1))


@given(st.integers(2, 3), st.integers(1, 6))
def test_phi_preserves_shells(a, k):
    shell = [t for t in brute_phi_ranks(a, k) if max(t) == k]
    values = sorted(K.phi_map(a, t) for t in shell)
    assert values == list(range((k - 1) ** a + 1, k**a + 1))


@given(st.integers(1, 10**7), st.integers(2, 4))
def test_integer_root(m, a):
    r = K.integer_root(m, a)
    assert r**a <= m < (r + 1) ** a


def test_cyclic_windows():
    assert K.cyclic_windows(3, 2) == [(1, 2), (2, 3), (1, 3)]
    assert K.cyclic_windows(4, 3) == [(1, 2, 3), (2, 3, 4), (1, 3, 4), (1, 2, 4)]


def test_fractional_kernel_small():
    k = K.fractional_kernel(3, 2, 100)
    assert k.n_supports == math.comb(10, 3) == 120
    assert math.isclose(k.sum_of_squares(), 1.0, abs_tol=1e-12)
    assert np.all(np.diff(k.supports, axis=1) > 0)


def test_fractional_size_rule():
    with pytest.raises(TooSmall):
        K.fractional_kernel(3, 2, 9)
    assert K.fractional_kernel(3, 2, 26).n_supports == math.comb(5, 3)
    with pytest.raises(InvalidArity):
        K.fractional_kernel(3, 3, 100)
    with pytest.raises(InvalidArity):
        K.fractional_kernel(2, 1, 100)


def test_fractional_rows_are_injective_images():
    p, a, m = 4, 3, 200
    base = K.fractional_base_supports(p, a, m)
    top = K.integer_root(m, a)
    ts = list(itertools.combinations(range(1, top + 1), p))
    assert len(ts) == base.shape[0]
    for t, row in zip(ts, base):
        expect = [K.phi_map(a, tuple(t[w - 1] for w in win)) for win in K.cyclic_windows(p, a)]
        assert row.tolist() == expect


def test_fractional_time_change_and_counting():
    k = K.fractional_kernel(3, 2, 10_000)
    grid = np.linspace(0, 1, 11)
    assert np.max(np.abs(K.sf_profile(k, grid) - grid**1.5)) < 0.01
    for t in (0.25, 0.5, 0.75):
        assert 0.9 <= K.fractional_counting_ratio(3, 2, 10_000, int(t * 10_000)) <= 1.1


def test_growth_constant_tends_to_one():
    b = [K.fractional_growth_constant(3, 2, m) for m in (10**2, 10**4, 10**6)]
    assert abs(b[-1] - 1) < abs(b[0] - 1)
    assert abs(b[-1] - 1) < 0.01


# fourth moments and serialization -------------------------------------------


def test_d_factor():
    k = K.make_kernel(2, 3, {(1, 2): 1.0, (2, 3): 0.0})
    assert K.d_factor(k, [3.0, 2.0, 10.0]) == 6.0
    with pytest.raises(MomentBelowOne):
        K.d_factor(k, [0.5, 1.0, 1.0])


@given(small_kernels())
def test_text_and_json_round_trip(k):
    for text, load in ((K.kernel_to_text(k, "a\nb"), K.kernel_from_text), (K.kernel_to_json(k), K.kernel_from_json)):
        back = load(text)
        assert back.order == k.order and back.size == k.size
        np.testing.assert_array_equal(back.supports, k.supports)
        np.testing.assert_array_equal(back.values, k.values)


def test_load_kernel_by_suffix(tmp_path):
    k = K.fractional_kernel(3, 2, 26)
    (tmp_path / "k.json").write_text(K.kernel_to_json(k))
    (tmp_path / "k.txt").write_text(K.kernel_to_text(k))
    for name in ("k.json", "k.txt"):
        np.testing.assert_array_equal(K.load_kernel(tmp_path / name).supports, k.supports)
