import math

import numpy as np
import pytest

from dqic.errors import ConfigError, DomainError
from dqic.model import (AnnealingSchedule, BathSpec, ChainModel, bath_correlation, build_kernel_table,
                        build_time_grid, eval_schedule, field_propagator, kappa_by_separation,
                        kernel_coefficient, memory_steps, schedule_point, spectral_density, tail_bound,
                        trotter_factors)


@pytest.mark.invariant
@pytest.mark.parametrize("alpha", [0.25, 0.5, 1.0, 2.0])
def test_schedule_endpoints(alpha):
    sched = AnnealingSchedule(alpha)
    assert eval_schedule(0.0, sched) == (1.0, 0.0)
    assert eval_schedule(1.0, sched) == (0.0, 1.0)


def test_schedule_interior_and_domain():
    A, B = eval_schedule(0.5, AnnealingSchedule(2.0))
    assert A == pytest.approx(0.25) and B == 0.5
    with pytest.raises(DomainError):
        eval_schedule(1.5, AnnealingSchedule(1.0))
    with pytest.raises(ConfigError):
        AnnealingSchedule(0.0)


def test_bath_validation():
    with pytest.raises(ConfigError):
        BathSpec(-0.1)
    with pytest.warns(UserWarning):
        BathSpec(0.1, omega_c=1.0, T_B=2.0)
    assert spectral_density(0.0, BathSpec(0.18)) == 0.0
    assert spectral_density(5.0, BathSpec(0.18)) == pytest.approx(0.09 * 5 * math.exp(-1))


def test_chain_model_fixes_coupling():
    with pytest.raises(ConfigError):
        ChainModel(AnnealingSchedule(), coupling=2.0)


def test_grid_size_and_commensurability():
    g = build_time_grid(200.0, 0.05)
    assert g.M == 4000 and len(g.times) == 8002
    with pytest.raises(ConfigError):
        build_time_grid(1.0, 0.03)


def test_memory_window_is_strict():
    assert memory_steps(0.05, 10.0) == 199
    assert memory_steps(0.1, 0.35) == 3
    g = build_time_grid(20.0, 0.05)
    assert g.in_window(199, 0) and not g.in_window(200, 0)


@pytest.mark.invariant
def test_folded_grid_symmetry():
    g = build_time_grid(1.0, 0.05)
    P = 2 * g.M + 2
    for l in range(P):
        assert g.times[l] == g.times[P - 1 - l]
        assert g.slice_of(l) == g.slice_of(P - 1 - l)


@pytest.mark.invariant
def test_equal_time_forward_pairs_have_positive_real_part(bath):
    # equal-time pairs only exist across branches; forward pairs at zero separation use kappa_0
    k = kappa_by_separation(0.05, 10, bath)
    assert k[0].real > 0 and k[0].imag == 0
    g = build_time_grid(0.3, 0.05)
    tab = build_kernel_table(g, bath)
    for p in range(g.M + 1):
        assert tab.coefficient(2 * g.M + 1 - p, p).real > 0


@pytest.mark.invariant
def test_kernel_is_linear_in_eta():
    g = build_time_grid(0.3, 0.05)
    a = build_kernel_table(g, BathSpec(0.09)).matrix()
    b = build_kernel_table(g, BathSpec(0.18)).matrix()
    np.testing.assert_allclose(b, 2 * a, rtol=0, atol=1e-10 * np.abs(b).max())


@pytest.mark.invariant
def test_kernel_branch_symmetry(bath):
    # reversing both points of a pair conjugates the coefficient
    g = build_time_grid(0.3, 0.05)
    tab = build_kernel_table(g, bath)
    P = 2 * g.M + 2
    for l, m in tab.pairs():
        lr, mr = P - 1 - m, P - 1 - l
        assert abs(tab.coefficient(lr, mr) - np.conj(tab.coefficient(l, m))) < 1e-10


@pytest.mark.invariant
def test_quadrature_converged(bath):
    taus = np.linspace(0, 10, 41)
    a = bath_correlation(taus, bath)
    b = bath_correlation(taus, bath, panel=0.05, order=32)
    assert np.abs(a - b).max() < 1e-10


def test_correlation_at_zero_matches_closed_form_at_zero_temperature():
    bath = BathSpec(0.18, 5.0, 0.0)
    # int (eta/2) w e^{-w/wc} dw = eta wc^2 / 2
    assert bath_correlation([0.0], bath)[0] == pytest.approx(0.18 * 25 / 2, rel=1e-12)


def test_tail_bound_is_negligible(bath):
    assert tail_bound(bath) < 1e-15  # far below the 1e-10 kernel tolerance


def test_kernel_coefficient_sign_rule(bath):
    g = build_time_grid(0.3, 0.05)
    k = kappa_by_separation(0.05, 6, bath)
    # forward pair separated by 2 steps, mixed pair at equal slice
    assert kernel_coefficient(3, 1, g, bath) == pytest.approx(-k[2])
    assert kernel_coefficient(2 * g.M + 1 - 2, 2, g, bath) == pytest.approx(k[0])
    with pytest.raises(DomainError):
        kernel_coefficient(1, 3, g, bath)


def test_trotter_factors_unitary_and_conjugate(sched):
    g = build_time_grid(1.0, 0.05)
    u, bond = trotter_factors(3, g, sched)
    ub, bondb = trotter_factors(3, g, sched, branch="backward")
    np.testing.assert_allclose(u @ u.conj().T, np.eye(2), atol=1e-14)
    np.testing.assert_allclose(ub, u.conj())
    np.testing.assert_allclose(bondb, bond.conj())
    A, _ = eval_schedule(schedule_point(3, g), sched)
    np.testing.assert_allclose(u, field_propagator(A, 0.05))
    assert schedule_point(3, g) == pytest.approx(3.5 * 0.05)
    with pytest.raises(DomainError):
        trotter_factors(g.M, g, sched)
