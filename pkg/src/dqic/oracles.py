"""Brute-force and analytic references.

Everything here is deliberately independent of the tensor-network code:
explicit path sums, dense state vectors, closed-form thermodynamics.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.integrate as si
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.polynomial.legendre import leggauss

from . import _accel
from .errors import DomainError
from .model import (AnnealingSchedule, BathSpec, KernelTable, TimeGrid, eval_schedule,
                    field_propagator, schedule_point)

PATH_SUM_MAX_STEPS = 9
ED_MAX_SITES = 12


# ------------------------------------------------------------ single spin

@dataclass(frozen=True)
class SpinBosonPathSum:
    grid: TimeGrid
    kernel: KernelTable
    schedule: AnnealingSchedule | None = None
    A_fixed: float | None = None
    sampling: str = "midpoint"

    def __post_init__(self):
        if self.grid.M > PATH_SUM_MAX_STEPS:
            raise DomainError(f"path sum limited to M <= {PATH_SUM_MAX_STEPS}, got {self.grid.M}")
        if (self.schedule is None) == (self.A_fixed is None):
            raise DomainError("give exactly one of schedule or A_fixed")

    def field(self, step: int) -> float:
        if self.A_fixed is not None:
            return self.A_fixed
        return eval_schedule(schedule_point(step, self.grid, self.sampling), self.schedule)[0]


def path_sum_rdm(ps: SpinBosonPathSum) -> np.ndarray:
    """Sum over all 2^(2M+2) folded spin paths, normalized to unit trace."""
    M = ps.grid.M
    props = np.array([field_propagator(ps.field(p), ps.grid.dt) for p in range(M)]).reshape(M, 2, 2)
    init = np.full(2, 1 / math.sqrt(2), complex)
    rho = _accel.path_sum(M, props, ps.kernel.matrix(), init)
    return rho / np.trace(rho)


def unitary_spin_rdm(ps: SpinBosonPathSum) -> np.ndarray:
    psi = np.full(2, 1 / math.sqrt(2), complex)
    for p in range(ps.grid.M):
        psi = field_propagator(ps.field(p), ps.grid.dt) @ psi
    return np.outer(psi, psi.conj())


def dephasing_coherence(t: float, bath: BathSpec, panel: float | None = None, order: int = 32) -> float:
    """exp(-4 int J(w) coth(w/2T) (1 - cos wt)/w^2 dw), the |<sigma^+>| decay of a dephasing spin."""
    if t < 0:
        raise DomainError("t must be >= 0")
    if bath.eta == 0 or t == 0:
        return 1.0
    cap = max(50 * bath.omega_c, 50 * bath.T_B)
    if panel is None:
        panel = min(0.25, math.pi / (2 * t))
    x, w = leggauss(order)
    n = int(math.ceil(cap / panel))
    edges = np.linspace(0, n * panel, n + 1)
    om = ((edges[1:] - edges[:-1])[:, None] * (x + 1) / 2 + edges[:-1, None]).ravel()
    wt = (np.diff(edges)[:, None] * w / 2).ravel()
    if bath.T_B == 0:
        jc = 0.5 * bath.eta * om
    else:
        y = om / (2 * bath.T_B)
        jc = bath.eta * bath.T_B * np.where(y < 1e-4, 1 + y * y / 3, y / np.tanh(np.maximum(y, 1e-300)))
    # (1 - cos wt)/w^2 = 2 sin^2(wt/2)/w^2, written to avoid cancellation
    kern = 2.0 * (np.sin(om * t / 2) / om) ** 2
    phi = float(np.sum(jc * np.exp(-om / bath.omega_c) * kern * wt))
    return math.exp(-4 * phi)


# -------------------------------------------------------------------- ED

def _chain_tables(n: int):
    idx = np.arange(2 ** n)
    bits = (idx[:, None] >> np.arange(n - 1, -1, -1)[None, :]) & 1
    spins = 1.0 - 2.0 * bits  # site 0 is the most significant bit
    return idx, spins


def _apply_field(psi: np.ndarray, u: np.ndarray, n: int) -> np.ndarray:
    t = psi.reshape((2,) * n)
    for j in range(n):
        t = np.moveaxis(np.tensordot(u, t, axes=(1, j)), 0, j)
    return t.reshape(-1)


@dataclass
class EDTrajectory:
    s: np.ndarray
    energy: np.ndarray
    sx: np.ndarray
    zz: np.ndarray
    norm_drift: float

    def rows(self):
        return list(zip(self.s, self.energy, self.sx, self.zz))


def _central(n: int) -> int:
    return n // 2 - 1


def _observe(psi, spins, flip, c, s, sched):
    p = np.abs(psi) ** 2
    zz = float(np.sum(p * spins[:, c] * spins[:, c + 1]))
    sx = float(np.real(np.vdot(psi, psi[flip])))
    A, B = eval_schedule(min(1.0, s), sched)
    return -A * sx - B * zz, sx, zz


def ed_trotter_evolve(n: int, sched: AnnealingSchedule, grid: TimeGrid,
                      sampling: str = "midpoint", every: int = 1) -> EDTrajectory:
    """Open chain from all |+>, same first-order splitting as the network; central site and bond."""
    if n > ED_MAX_SITES or n < 2:
        raise DomainError(f"ED needs 2 <= n <= {ED_MAX_SITES}")
    idx, spins = _chain_tables(n)
    zz_all = (spins[:, :-1] * spins[:, 1:]).sum(1)
    c = _central(n)
    flip = idx ^ (1 << (n - 1 - c))
    psi = np.full(2 ** n, 2 ** (-n / 2), complex)
    rows = [(0.0, *_observe(psi, spins, flip, c, 0.0, sched))]
    drift = 0.0
    for l in range(grid.M):
        A, B = eval_schedule(schedule_point(l, grid, sampling), sched)
        psi = _apply_field(psi, field_propagator(A, grid.dt), n)
        psi = psi * np.exp(1j * B * grid.dt * zz_all)
        drift = max(drift, abs(np.vdot(psi, psi).real - 1))
        if (l + 1) % every == 0 or l + 1 == grid.M:
            s = (l + 1) * grid.dt / grid.t_a
            rows.append((s, *_observe(psi, spins, flip, c, s, sched)))
    arr = np.array(rows)
    return EDTrajectory(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], drift)


def _hamiltonian_parts(n: int, periodic: bool = False):
    idx, spins = _chain_tables(n)
    bonds = [(j, j + 1) for j in range(n - 1)] + ([(n - 1, 0)] if periodic else [])
    zz = sum(spins[:, i] * spins[:, j] for i, j in bonds)
    rows, cols = [], []
    for j in range(n):
        rows.append(idx)
        cols.append(idx ^ (1 << (n - 1 - j)))
    X = sp.csr_matrix((np.ones(n * 2 ** n), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(2 ** n, 2 ** n))
    return -X, sp.diags(-zz)


def ed_continuous_evolve(n: int, sched: AnnealingSchedule, t_a: float, s_points) -> EDTrajectory:
    """Time-dependent Schroedinger evolution without splitting (adaptive Runge-Kutta)."""
    if n > ED_MAX_SITES:
        raise DomainError(f"ED needs n <= {ED_MAX_SITES}")
    HX, HZ = _hamiltonian_parts(n)
    idx, spins = _chain_tables(n)
    c = _central(n)
    flip = idx ^ (1 << (n - 1 - c))

    def rhs(t, y):
        A, B = eval_schedule(min(1.0, t / t_a), sched)
        return -1j * (A * (HX @ y) + B * (HZ @ y))

    psi0 = np.full(2 ** n, 2 ** (-n / 2), complex)
    ts = np.asarray(s_points, float) * t_a
    sol = si.solve_ivp(rhs, (0, ts[-1]), psi0, t_eval=ts, method="DOP853", rtol=1e-11, atol=1e-12)
    rows = [(t / t_a, *_observe(sol.y[:, i], spins, flip, c, t / t_a, sched)) for i, t in enumerate(sol.t)]
    arr = np.array(rows)
    drift = float(np.abs(np.linalg.norm(sol.y, axis=0) - 1).max())
    return EDTrajectory(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], drift)


def light_cone_limit(n: int, max_B: float) -> float:
    """Largest time for which a central-bond observable of an n-site chain matches the infinite chain."""
    return (n / 2 - 1) / (2 * max_B)


def ed_ground_energy_per_site(n: int, A: float, B: float, periodic: bool = True) -> float:
    HX, HZ = _hamiltonian_parts(n, periodic)
    H = A * HX + B * HZ
    e = spla.eigsh(H, k=1, which="SA", tol=1e-12)[0][0]
    return float(e / n)


# ----------------------------------------------------------- equilibrium

def tfic_equilibrium_energy(A: float, B: float, T: float) -> float:
    """Per-spin thermal energy of the infinite transverse-field Ising chain (free fermions)."""
    if A < 0 or B < 0 or T < 0:
        raise DomainError("A, B, T must be >= 0")
    if A == 0 and B == 0:
        warnings.warn("A = B = 0: energy is identically zero", stacklevel=2)
        return 0.0

    def eps(k):
        return 2.0 * math.sqrt(max(A * A + B * B - 2 * A * B * math.cos(k), 0.0))

    def f(k):
        e = eps(k)
        return e if T == 0 else e * math.tanh(e / (2 * T))

    # integrand is even in k; the kink at k=0 when A=B is at the endpoint
    val, _ = si.quad(f, 0.0, math.pi, epsabs=1e-13, epsrel=1e-13, limit=200)
    return -val / (2 * math.pi)


def classical_chain_energy(B: float, T: float) -> float:
    """Per-bond energy of the classical Ising chain -B tanh(B/T)."""
    if not T > 0:
        raise DomainError("T must be > 0")
    return -B * math.tanh(B / T)


def classical_enumeration_bond_energy(n: int, B: float, T: float, bond: int | None = None) -> float:
    """Exhaustive Gibbs average of -B s_i s_{i+1} on an open n-site chain."""
    if not T > 0:
        raise DomainError("T must be > 0")
    if not 2 <= n <= 20:
        raise DomainError("enumeration needs 2 <= n <= 20")
    w, s = _accel.classical_weights(n, B / T)
    i = _central(n) if bond is None else bond
    return float(-B * np.sum(w * s[:, i] * s[:, i + 1]) / np.sum(w))
