"""Annealing model, Ohmic bath, folded time grid and bath-kernel coefficients.

Units: hbar = k_B = 1, Ising coupling fixed to 1.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import ConfigError, DomainError

SIGMA = np.array([1.0, -1.0])  # spin value for basis index 0, 1
SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]])


@dataclass(frozen=True)
class AnnealingSchedule:
    alpha: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")

    def __call__(self, s: float) -> tuple[float, float]:
        return eval_schedule(s, self)


def eval_schedule(s: float, sched: AnnealingSchedule) -> tuple[float, float]:
    """Return (A(s), B(s)) = ((1-s)^alpha, s)."""
    if not 0.0 <= s <= 1.0:
        raise DomainError(f"s={s} outside [0, 1]")
    return (1.0 - s) ** sched.alpha, float(s)


@dataclass(frozen=True)
class BathSpec:
    eta: float = 0.0
    omega_c: float = 5.0
    T_B: float = 1.0

    def __post_init__(self):
        if self.eta < 0:
            raise ConfigError(f"eta must be >= 0, got {self.eta}")
        if not self.omega_c > 0:
            raise ConfigError(f"omega_c must be positive, got {self.omega_c}")
        if self.T_B < 0:
            raise ConfigError(f"T_B must be >= 0, got {self.T_B}")
        if self.omega_c <= self.T_B:
            warnings.warn(f"omega_c={self.omega_c} <= T_B={self.T_B}: outside the intended regime",
                          stacklevel=2)


def spectral_density(omega, bath: BathSpec):
    """J(omega) = (eta/2) omega exp(-omega/omega_c)."""
    w = np.asarray(omega, dtype=float)
    if np.any(w < 0):
        raise DomainError("spectral density needs omega >= 0")
    out = 0.5 * bath.eta * w * np.exp(-w / bath.omega_c)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ChainModel:
    schedule: AnnealingSchedule
    n_sites: int | None = None  # None is the infinite chain
    coupling: float = 1.0

    def __post_init__(self):
        if self.n_sites is not None and self.n_sites < 2:
            raise ConfigError("a finite chain needs n_sites >= 2")
        if self.coupling != 1.0:
            raise ConfigError("the Ising coupling is fixed to 1")


@dataclass(frozen=True)
class TimeGrid:
    t_a: float
    dt: float
    M: int
    tau_c: float
    times: np.ndarray = field(repr=False, compare=False)

    @property
    def memory_steps(self) -> int:
        """Largest slice separation k with k*dt strictly below tau_c."""
        return memory_steps(self.dt, self.tau_c)

    def in_window(self, l: int, m: int) -> bool:
        return abs(round((self.times[l] - self.times[m]) / self.dt)) <= self.memory_steps

    def branch(self, l: int) -> int:
        """+1 on the forward (ket) branch, -1 on the backward (bra) branch."""
        return 1 if l <= self.M else -1

    def slice_of(self, l: int) -> int:
        return l if l <= self.M else 2 * self.M + 1 - l


def memory_steps(dt: float, tau_c: float) -> int:
    # strict inequality k*dt < tau_c, with equality decided up to rounding
    ratio = tau_c / dt
    k = math.ceil(ratio - 1e-9) - 1
    return max(k, 0)


def build_time_grid(t_a: float, dt: float, tau_c: float = 10.0) -> TimeGrid:
    if not (t_a > 0 and dt > 0):
        raise ConfigError("t_a and dt must be positive")
    if not tau_c > 0:
        raise ConfigError("tau_c must be positive")
    ratio = t_a / dt
    M = int(round(ratio))
    if M < 1 or abs(ratio - M) > 1e-9 * max(1.0, ratio):
        raise ConfigError(f"t_a/dt = {ratio} is not a positive integer")
    l = np.arange(2 * M + 2)
    times = np.where(l <= M, l, 2 * M + 1 - l) * dt
    times.flags.writeable = False
    return TimeGrid(t_a=float(t_a), dt=float(dt), M=M, tau_c=float(tau_c), times=times)


# ---------------------------------------------------------------- bath kernel

def _nodes(cap: float, panel: float, order: int):
    x, w = leggauss(order)
    n_panels = max(1, int(math.ceil(cap / panel)))
    edges = np.linspace(0.0, n_panels * panel, n_panels + 1)
    a, b = edges[:-1], edges[1:]
    om = ((b - a)[:, None] * (x[None, :] + 1) / 2 + a[:, None]).ravel()
    wt = ((b - a)[:, None] * w[None, :] / 2).ravel()
    return om, wt


def _j_coth(om: np.ndarray, bath: BathSpec) -> np.ndarray:
    """J(omega) coth(omega/2T), finite at omega -> 0 where it tends to eta*T."""
    if bath.T_B == 0:
        return 0.5 * bath.eta * om * np.exp(-om / bath.omega_c)
    x = om / (2 * bath.T_B)
    small = x < 1e-4
    xs = np.where(small, 1.0, x)
    xcoth = np.where(small, 1.0 + x * x / 3.0, xs / np.tanh(xs))
    return bath.eta * bath.T_B * xcoth * np.exp(-om / bath.omega_c)


def default_cap(bath: BathSpec) -> float:
    return max(50.0 * bath.omega_c, 50.0 * bath.T_B)


def tail_bound(bath: BathSpec, cap: float | None = None) -> float:
    """Upper bound on the integrand mass of |J coth| beyond the cap."""
    cap = default_cap(bath) if cap is None else cap
    wc = bath.omega_c
    cth = 1.0 if bath.T_B == 0 else 1.0 / math.tanh(cap / (2 * bath.T_B))
    return 0.5 * bath.eta * cth * wc * (cap + wc) * math.exp(-cap / wc)


def bath_correlation(taus, bath: BathSpec, cap: float | None = None,
                     panel: float | None = None, order: int = 24) -> np.ndarray:
    """C(tau) = int_0^inf J(w) [coth(w/2T) cos(w tau) - i sin(w tau)] dw.

    Composite Gauss-Legendre on [0, cap]. The default panel keeps at least
    four panels per oscillation period of the largest |tau|.
    """
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    if bath.eta == 0:
        return np.zeros(taus.shape, complex)
    cap = default_cap(bath) if cap is None else cap
    if panel is None:
        tmax = float(np.abs(taus).max()) if taus.size else 0.0
        panel = 0.25 if tmax <= 2 * math.pi else min(0.25, math.pi / (2 * tmax))
    om, wt = _nodes(cap, panel, order)
    re_w = _j_coth(om, bath) * wt
    im_w = 0.5 * bath.eta * om * np.exp(-om / bath.omega_c) * wt
    out = np.empty(taus.shape, complex)
    # chunk to bound the (tau, omega) phase table
    step = max(1, 2_000_000 // om.size)
    for i in range(0, taus.size, step):
        ph = np.outer(taus[i:i + step], om)
        out[i:i + step] = np.cos(ph) @ re_w - 1j * (np.sin(ph) @ im_w)
    return out


@lru_cache(maxsize=64)
def _kappa_cached(dt: float, kmax: int, bath: BathSpec, panel, order: int) -> np.ndarray:
    kap = dt * dt * bath_correlation(np.arange(kmax + 1) * dt, bath, panel=panel, order=order)
    kap[0] = kap[0].real
    kap.flags.writeable = False
    return kap


def kappa_by_separation(dt: float, kmax: int, bath: BathSpec,
                        panel: float | None = None, order: int = 24) -> np.ndarray:
    """kappa_k = dt^2 C(k dt) for k = 0..kmax (kappa_0 is real)."""
    return _kappa_cached(float(dt), int(kmax), bath, panel, order)


@dataclass(frozen=True)
class KernelTable:
    """Pair coefficients of the influence action on the folded grid.

    Only kappa_k = dt^2 C(k dt) is stored; kappa_{l,m} follows from the
    contour position of the pair (see ``coefficient``).
    """
    grid: TimeGrid
    bath: BathSpec
    kappa: np.ndarray = field(repr=False, compare=False)

    @property
    def kmax(self) -> int:
        return min(self.grid.memory_steps, self.grid.M)

    def coefficient(self, l: int, m: int) -> complex:
        g = self.grid
        if not l > m:
            raise DomainError(f"kernel pair needs l > m, got ({l}, {m})")
        k = int(round((g.times[l] - g.times[m]) / g.dt))
        if abs(k) > g.memory_steps:
            raise DomainError(f"pair ({l}, {m}) is outside the memory window")
        val = self.kappa[abs(k)]
        if k < 0:
            val = np.conj(val)
        # same-branch pairs carry the opposite sign to mixed pairs
        same = g.branch(l) == g.branch(m)
        return complex(-val if same else val)

    def __getitem__(self, lm: tuple[int, int]) -> complex:
        return self.coefficient(*lm)

    def pairs(self):
        g = self.grid
        P = 2 * g.M + 2
        for l in range(P):
            for m in range(l):
                if g.in_window(l, m):
                    yield l, m

    def entries(self) -> dict[tuple[int, int], complex]:
        return {lm: self.coefficient(*lm) for lm in self.pairs()}

    def matrix(self) -> np.ndarray:
        """Strictly lower-triangular (2M+2)^2 matrix of kappa_{l,m}, zero outside the window."""
        g = self.grid
        P = 2 * g.M + 2
        out = np.zeros((P, P), complex)
        for l, m in self.pairs():
            out[l, m] = self.coefficient(l, m)
        return out


def build_kernel_table(grid: TimeGrid, bath: BathSpec, panel: float | None = None,
                       order: int = 24) -> KernelTable:
    kmax = min(grid.memory_steps, grid.M)
    return KernelTable(grid, bath, kappa_by_separation(grid.dt, kmax, bath, panel, order))


def kernel_coefficient(l: int, m: int, grid: TimeGrid, bath: BathSpec) -> complex:
    return build_kernel_table(grid, bath).coefficient(l, m)


# ----------------------------------------------------------- Trotter factors

def schedule_point(step: int, grid: TimeGrid, sampling: str = "midpoint") -> float:
    if sampling == "midpoint":
        return (step + 0.5) * grid.dt / grid.t_a
    if sampling == "endpoint":
        return step * grid.dt / grid.t_a
    raise ConfigError(f"unknown schedule sampling {sampling!r}")


def field_propagator(A: float, dt: float) -> np.ndarray:
    """exp(i A dt sigma_x): one step of -A sum(sigma_x)."""
    return math.cos(A * dt) * np.eye(2) + 1j * math.sin(A * dt) * SIGMA_X


def trotter_factors(step: int, grid: TimeGrid, sched: AnnealingSchedule,
                    branch: str = "forward", sampling: str = "midpoint"):
    """Field factor exp(+-i A dt sx) and diagonal bond phase exp(+-i B dt sz sz).

    The bond factor is returned as a 4x4 diagonal matrix over the two-spin
    basis (s1, s2) with basis index 2*i1 + i2.
    """
    if not 0 <= step <= grid.M - 1:
        raise DomainError(f"step {step} outside 0..{grid.M - 1}")
    if branch not in ("forward", "backward"):
        raise DomainError(f"unknown branch {branch!r}")
    A, B = eval_schedule(schedule_point(step, grid, sampling), sched)
    u = field_propagator(A, grid.dt)
    zz = np.outer(SIGMA, SIGMA).ravel()
    bond = np.diag(np.exp(1j * B * grid.dt * zz))
    if branch == "backward":
        return u.conj(), bond.conj()
    return u, bond
