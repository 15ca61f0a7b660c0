"""Acceptance criteria 1-9; the session summary prints one PASS/FAIL line per criterion.

Criteria 6-8 read the long anneals from tests/_production.py (cached on disk
by config snapshot, recomputed when missing) and are marked slow.
"""
import math

import numpy as np
import pytest

from dqic.engine import build_column, measurement_steps, run_trajectory
from dqic.influence import build_influence_exact, compress_influence, reconstruction_error
from dqic.model import AnnealingSchedule, BathSpec, build_kernel_table, build_time_grid
from dqic.oracles import (SpinBosonPathSum, classical_chain_energy, classical_enumeration_bond_energy,
                          dephasing_coherence, ed_ground_energy_per_site, ed_trotter_evolve,
                          light_cone_limit, path_sum_rdm, tfic_equilibrium_energy)
from dqic.runner import format_fit, write_csv
from dqic.theory import (FreezingModel, fit_power_law, freezing_point, gibbs_marginal, kl_divergence,
                         predicted_exponent)

BATH = BathSpec(0.18, 5.0, 1.0)


def test_criterion_1_closed_system_matches_ed():
    sched = AnnealingSchedule(1.0)
    grid = build_time_grid(1.0, 0.05)
    col = build_column(None, grid, sched)
    meas, _, _ = run_trajectory(col, 64, range(grid.M + 1))
    ed = ed_trotter_evolve(12, sched, grid)
    t_max = light_cone_limit(12, 1.0)
    window = [i for i, s in enumerate(ed.s) if s * grid.t_a <= t_max]
    assert len(window) == grid.M + 1
    diff = max(abs(meas[i].energy - ed.energy[i]) for i in window)
    print(f"criterion 1: max |E_chain - E_ed| = {diff:.2e}")
    assert diff < 1e-3


def test_criterion_2_influence_fidelity():
    tab = build_kernel_table(build_time_grid(0.3, 0.05, 10.0), BATH)
    exact = build_influence_exact(tab)
    assert exact.size == 4 ** 7
    errs = {chi: reconstruction_error(compress_influence(tab, chi, 0.0), exact)[0]
            for chi in (2, 4, 8, 16, 32, 64, 256)}
    print("criterion 2: max rel error by chi_t", {k: f"{v:.1e}" for k, v in errs.items()})
    assert errs[256] < 1e-8
    vals = list(errs.values())
    assert all(b <= a * (1 + 1e-12) for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("t,dts", [(0.2, (0.05, 0.025)), (0.4, (0.1, 0.05))])
def test_criterion_3_dephasing_pins_branch_signs(t, dts):
    coh = []
    for dt in dts:
        grid = build_time_grid(t, dt)
        rho = path_sum_rdm(SpinBosonPathSum(grid, build_kernel_table(grid, BATH), A_fixed=0.0))
        coh.append(2 * abs(rho[0, 1]))
    extrap = 2 * coh[1] - coh[0]
    exact = dephasing_coherence(t, BATH)
    print(f"criterion 3: t={t} extrapolated {extrap:.6f} vs analytic {exact:.6f}")
    assert abs(extrap - exact) < 1e-3


def test_criterion_4_theory_closed_forms():
    assert predicted_exponent(1.0) == 1 / 3
    assert predicted_exponent(0.5) == 1 / 2
    assert predicted_exponent(0.25) == 1 / 3
    assert predicted_exponent(2.0) == 1 / 5
    for alpha in (0.25, 0.5, 1.0, 2.0):
        x = np.array([50.0, 100.0, 400.0, 1600.0])
        y = np.array([1 - freezing_point(FreezingModel(alpha, 1.0, t)).s_star for t in x])
        slope = np.polyfit(np.log(x), np.log(y), 1)[0]
        assert abs(slope + 1 / (2 * alpha + 1)) < 1e-9


def test_criterion_5_equilibrium_anchors():
    e = tfic_equilibrium_energy(1.0, 1.0, 0.0)
    assert abs(e + 4 / math.pi) < 1e-6
    assert abs(ed_ground_energy_per_site(12, 1.0, 1.0) - e) < 1e-2
    assert abs(classical_chain_energy(1.0, 1.0) + math.tanh(1.0)) < 1e-10
    assert abs(classical_enumeration_bond_energy(12, 1.0, 1.0) - classical_chain_energy(1.0, 1.0)) < 1e-10


@pytest.mark.slow
def test_criterion_6_freezing_phenomenology():
    from _production import production_run

    rec = production_run(1.0, 0.18, 200.0)
    traj = np.array(rec.trajectory)
    s, E = traj[:, 0], traj[:, 1]
    eq = np.array([tfic_equilibrium_energy((1 - x), x, 1.0) for x in s])
    gap = E - eq
    band = (s >= 0.3) & (s <= 0.6)
    late = s >= 0.7
    print(f"criterion 6: max |E - E_eq| on [0.3, 0.6] = {np.abs(gap[band]).max():.4f}; "
          f"E_exc={rec.E_exc:.4f} T*={rec.T_star:.4f} s*={rec.s_star_empirical:.4f}")
    assert rec.E_exc > 0
    assert rec.T_star > 1.0 and not rec.T_star_boundary
    assert 0.5 < rec.s_star_empirical < 1
    assert np.all(np.diff(gap[late]) > 0) and gap[-1] > 0.02
    assert np.abs(gap[band]).max() < 0.02


@pytest.mark.slow
@pytest.mark.parametrize("alpha", [0.5, 1.0])
def test_criterion_7_exponent(alpha):
    from _production import ROOT, T_A_SWEEP, production_run

    pts = [(t, production_run(alpha, 0.18, t).E_exc) for t in T_A_SWEEP]
    fit = fit_power_law(pts, (100.0, math.inf))
    rows = [(t, e, production_run(alpha, 0.18, t).T_star, fit.b, fit.stderr_b) for t, e in pts]
    write_csv(ROOT / f"sweep_t_a_alpha{alpha:g}.csv", ["axis", "E_exc", "T_star", "b_fit", "stderr_b"], rows,
              [format_fit(fit)])
    target = predicted_exponent(alpha)
    print(f"criterion 7: alpha={alpha} b={fit.b:.4f} +- {fit.stderr_b:.4f} (target {target:.4f})")
    assert abs(fit.b - target) <= 0.15


@pytest.mark.slow
def test_criterion_8_nonmonotonic_in_eta():
    from _production import ETA_SWEEP, ROOT, production_run

    recs = [production_run(1.0, eta, 200.0) for eta in ETA_SWEEP]
    E = np.array([r.E_exc for r in recs])
    write_csv(ROOT / "sweep_eta.csv", ["axis", "E_exc", "T_star", "b_fit", "stderr_b"],
              [(eta, r.E_exc, r.T_star, None, None) for eta, r in zip(ETA_SWEEP, recs)], ["# fit: none"])
    print("criterion 8: E_exc by eta", dict(zip(ETA_SWEEP, np.round(E, 5))))
    i = int(np.argmin(E))
    assert 0 < i < len(E) - 1
    assert E[i] < E[0] and E[i] < E[-1]


def test_criterion_9_invariant_core():
    # the full invariant suite is every test marked `invariant`; the summary line
    # for this criterion also fails if any of those failed
    tab = build_kernel_table(build_time_grid(0.3, 0.05), BATH)
    half = build_kernel_table(build_time_grid(0.3, 0.05), BathSpec(0.09, 5.0, 1.0))
    np.testing.assert_allclose(tab.matrix(), 2 * half.matrix(), rtol=0, atol=1e-10)
    p = gibbs_marginal(1.7, 8)
    assert abs(kl_divergence(np.diag(p), 1.7).D) < 1e-12
    assert kl_divergence(np.diag(gibbs_marginal(1.0, 8)), 1.7).D > 0
    pts = [(t, 3.0 * t ** -0.4 * (1 + 0.01 * k)) for k, t in enumerate((100, 150, 200, 300))]
    f1, f2 = fit_power_law(pts), fit_power_law([(5 * t, e) for t, e in pts])
    assert abs(f1.b - f2.b) < 1e-9 and abs(f2.a / f1.a - 5 ** f1.b) < 1e-9 * f2.a / f1.a
    grid = build_time_grid(2.0, 0.05)
    from dqic.influence import build_uniform_influence
    col = build_column(build_uniform_influence(0.05, 10.0, BATH, 8), grid, AnnealingSchedule(1.0))
    meas, state, _ = run_trajectory(col, 16, measurement_steps(grid.M, 5))
    assert all(abs(m.norm - 1) < 1e-8 for m in meas)
