import itertools

import numpy as np
import pytest

from dqic.errors import DomainError
from dqic.influence import (EMPTY, SB, SF, build_influence_exact, build_uniform_influence, cache_key,
                            compress_influence, coupling_gate, decode, encode, gauge_transform,
                            influence_exponent, load_influence, reconstruction_error, save_influence,
                            trivial_uniform_influence)
from dqic.model import BathSpec, build_kernel_table, build_time_grid, kappa_by_separation

SWAP = [encode(*decode(i)[::-1]) for i in range(4)]


def test_composite_encoding_roundtrip():
    for s, sb in itertools.product((1, -1), repeat=2):
        i = encode(s, sb)
        assert decode(i) == (s, sb)
        assert (SF[i], SB[i]) == (s, sb)


def test_exact_tensor_matches_direct_exponent(table_m6, rng):
    exact = build_influence_exact(table_m6)
    assert exact.shape == (4,) * 7
    configs = rng.integers(0, 4, size=(20, 7))
    direct = np.exp(influence_exponent(configs, table_m6))
    np.testing.assert_allclose(exact[tuple(configs.T)], direct, rtol=1e-13)


def test_exact_tensor_refuses_large_m(bath):
    tab = build_kernel_table(build_time_grid(0.5, 0.05), bath)
    with pytest.raises(DomainError):
        build_influence_exact(tab)


def test_diagonal_paths_share_one_constant(table_m6):
    # sigma = sigma_b on every slice: the bath cannot tell the branches apart, so
    # only the same-slice constant exp(kappa_0) per slice survives
    exact = build_influence_exact(table_m6)
    const = np.exp(7 * table_m6.kappa[0])
    for c in itertools.product((0, 3), repeat=7):
        assert abs(exact[c] - const) < 1e-12


@pytest.mark.invariant
def test_branch_conjugation(table_m6):
    exact = build_influence_exact(table_m6)
    swapped = exact[np.ix_(*[SWAP] * 7)]
    np.testing.assert_allclose(swapped, exact.conj(), rtol=1e-10, atol=0)


@pytest.mark.invariant
def test_monotone_fidelity_in_chi_t(table_m6):
    exact = build_influence_exact(table_m6)
    errs = [reconstruction_error(compress_influence(table_m6, chi, 0.0), exact)[0]
            for chi in (2, 4, 8, 16, 32, 64)]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(errs, errs[1:])), errs


@pytest.mark.invariant
def test_window_locality(bath):
    t_a, dt = 0.3, 0.05
    a = build_kernel_table(build_time_grid(t_a, dt, 2 * t_a + dt), bath)
    b = build_kernel_table(build_time_grid(t_a, dt, 1e6), bath)
    assert np.array_equal(a.matrix(), b.matrix())
    assert np.array_equal(build_influence_exact(a), build_influence_exact(b))


@pytest.mark.invariant
def test_gauge_invariance(table_m6, rng):
    mps = compress_influence(table_m6, 64, 0.0)
    dense = mps.to_dense()
    for bond in range(mps.n_slices - 1):
        D = mps.tensors[bond].shape[2]
        X = np.eye(D) + 0.3 * (rng.standard_normal((D, D)) + 1j * rng.standard_normal((D, D)))
        np.testing.assert_allclose(gauge_transform(mps, bond, X).to_dense(), dense,
                                   rtol=1e-12, atol=1e-12 * np.abs(dense).max())


def test_truncation_loss_reported(table_m6):
    assert compress_influence(table_m6, 256, 0.0).truncation_loss < 1e-20
    assert compress_influence(table_m6, 2, 0.0).truncation_loss > 0


def test_coupling_gate_is_causal():
    # a later slice with sigma = sigma_b (or empty) does not couple to anything earlier
    g = coupling_gate(0.3 - 0.2j)
    for row in (encode(1, 1), encode(-1, -1), EMPTY):
        np.testing.assert_array_equal(g[row], np.ones(5))
    assert np.all(g[:, EMPTY] == 1)


def test_uniform_matches_exact_up_to_per_slice_constant(bath):
    # a short window keeps the uniform build exact at moderate chi_t
    dt, tau_c = 0.05, 0.2
    kmax = 3
    infl = build_uniform_influence(dt, tau_c, bath, chi_t=256, svd_tol=0.0)
    tab = build_kernel_table(build_time_grid(0.2, dt, tau_c), bath)
    assert tab.kmax == kmax
    exact = build_influence_exact(tab)
    ratios = []
    for c in itertools.product(range(4), repeat=5):
        ratios.append(infl.value(c) / exact[c])
    ratios = np.array(ratios)
    np.testing.assert_allclose(ratios, ratios[0], rtol=1e-8)


def test_trivial_influence_is_one():
    infl = trivial_uniform_influence()
    assert infl.value([0, 1, 2, 3]) == 1


def test_uniform_cache_roundtrip(tmp_path, bath):
    infl = build_uniform_influence(0.05, 0.3, bath, chi_t=8)
    key = cache_key(bath, 0.05, 0.3, 8, 1e-12)
    path = tmp_path / "u.bin"
    save_influence(path, infl, key)
    back = load_influence(path, key)
    np.testing.assert_array_equal(back.A, infl.A)
    np.testing.assert_array_equal(back.right, infl.right)
    assert back.chi_t == 8
    with pytest.raises(DomainError):
        load_influence(path, "other")
    (tmp_path / "bad.bin").write_bytes(b"nope" * 10)
    with pytest.raises(DomainError):
        load_influence(tmp_path / "bad.bin")


def test_mps_cache_roundtrip(tmp_path, table_m6):
    mps = compress_influence(table_m6, 16, 0.0)
    save_influence(tmp_path / "m.bin", mps, "k")
    back = load_influence(tmp_path / "m.bin")
    np.testing.assert_array_equal(back.to_dense(), mps.to_dense())


def test_kappa_table_is_cached_and_readonly(bath):
    a = kappa_by_separation(0.05, 10, bath)
    assert a is kappa_by_separation(0.05, 10, bath)
    with pytest.raises(ValueError):
        a[0] = 0
