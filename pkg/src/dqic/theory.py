"""Quasistatic-freezing theory and the estimators applied to simulation output."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .oracles import classical_chain_energy

EPS_CLIP = 1e-12


@dataclass(frozen=True)
class FreezingModel:
    alpha: float
    eta: float
    t_a: float
    C: float = 1.0

    def __post_init__(self):
        if min(self.alpha, self.eta, self.t_a, self.C) <= 0:
            raise DomainError("freezing model parameters must be positive")

    def relaxation_time(self, s):
        return self.C / self.eta * (1 - np.asarray(s)) ** (-2 * self.alpha)


@dataclass(frozen=True)
class FreezingPoint:
    s_star: float
    frozen: bool  # False: relaxation is never slower than the sweep, s_star pinned at 0


def freezing_point(model: FreezingModel) -> FreezingPoint:
    """Solve d tau_rel / dt = 1 with t = s t_a: 1 - s* = (2 alpha C / (eta t_a))^(1/(2 alpha + 1))."""
    ratio = 2 * model.alpha * model.C / (model.eta * model.t_a)
    if ratio >= 1:
        return FreezingPoint(0.0, False)
    return FreezingPoint(1.0 - ratio ** (1.0 / (2 * model.alpha + 1)), True)


def predicted_exponent(alpha: float) -> float:
    if not alpha > 0:
        raise DomainError("alpha must be positive")
    return min(1.0, 2 * alpha) / (2 * alpha + 1)


def effective_temperature(s_star: float, T_B: float) -> float:
    """T* = T_B / B(s*) with B(s) = s."""
    if not s_star > 0:
        raise DomainError("s_star must be positive")
    return T_B / s_star


def excess_energy(E_final_per_spin: float, T_B: float) -> float:
    if not T_B > 0:
        raise DomainError("T_B must be positive")
    return E_final_per_spin - classical_chain_energy(1.0, T_B)


# ------------------------------------------------------------ KL and T*

def gibbs_marginal(T: float, n: int = 8) -> np.ndarray:
    """Diagonal of the n-site marginal of the infinite classical chain at temperature T.

    In one dimension the outer bonds sum out to a constant, leaving
    p(s) proportional to exp((1/T) sum_i s_i s_{i+1}) on the window. Basis order
    matches the RDMs: site 1 most significant, bit 0 = up.
    """
    idx = np.arange(2 ** n)
    s = 1.0 - 2.0 * ((idx[:, None] >> np.arange(n - 1, -1, -1)) & 1)
    if not np.isfinite(T):
        return np.full(2 ** n, 2.0 ** -n)
    if not T > 0:
        raise DomainError("T must be positive")
    e = (s[:, :-1] * s[:, 1:]).sum(1)
    logw = (e - e.max()) / T
    w = np.exp(logw)
    return w / w.sum()


@dataclass(frozen=True)
class KLResult:
    D: float
    clipped_mass: float

    @property
    def untrusted(self) -> bool:
        return self.clipped_mass > 1e-3


def _spectrum(rho) -> tuple[np.ndarray, np.ndarray, float]:
    data = np.asarray(rho) if isinstance(rho, np.ndarray) else np.asarray(getattr(rho, "data", rho))
    data = 0.5 * (data + data.conj().T)
    lam, V = np.linalg.eigh(data)
    clipped = float(np.sum(np.abs(lam[lam < EPS_CLIP])))
    lam = np.where(lam < EPS_CLIP, EPS_CLIP, lam)
    return lam, V, clipped


def kl_divergence(rho8, T: float) -> KLResult:
    """Quantum relative entropy D(rho || rho_eq(T)); rho_eq is diagonal, so only diag(rho) enters the cross term."""
    lam, V, clipped = _spectrum(rho8)
    n = int(round(math.log2(len(lam))))
    diag = np.einsum("ij,j,ij->i", V, lam, V.conj()).real  # diag of the clipped rho
    p = gibbs_marginal(T, n)
    D = float(np.sum(lam * np.log(lam)) - np.sum(diag * np.log(p)))
    if D < -1e-10:
        warnings.warn(f"relative entropy {D:.3e} below numerical zero", stacklevel=2)
    return KLResult(max(D, 0.0), clipped)


@dataclass
class KLCurve:
    samples: list
    T_star: float
    D_min: float
    boundary: bool = False
    refined: bool = True
    clipped_mass: float = 0.0


def find_T_star(rho8, T_range=(0.5, 10.0), n_coarse: int = 64, rtol: float = 1e-4) -> KLCurve:
    """Coarse log-spaced scan, then golden-section refinement around the minimum."""
    lo, hi = T_range
    if not 0 < lo < hi:
        raise DomainError("T_range must satisfy 0 < T_min < T_max")
    lam, V, clipped = _spectrum(rho8)
    n = int(round(math.log2(len(lam))))
    diag = np.einsum("ij,j,ij->i", V, lam, V.conj()).real
    neg_entropy = float(np.sum(lam * np.log(lam)))

    def D(T):
        return max(neg_entropy - float(np.sum(diag * np.log(gibbs_marginal(T, n)))), 0.0)

    Ts = np.geomspace(lo, hi, n_coarse)
    Ds = np.array([D(T) for T in Ts])
    i = int(np.argmin(Ds))
    samples = list(zip(Ts.tolist(), Ds.tolist()))
    if np.ptp(Ds) <= 1e-14 * max(1.0, abs(Ds).max()) or i in (0, n_coarse - 1):
        return KLCurve(samples, float(Ts[i]), float(Ds[i]), boundary=True, refined=False,
                       clipped_mass=clipped)
    a, b = math.log(Ts[i - 1]), math.log(Ts[i + 1])
    invphi = (math.sqrt(5) - 1) / 2
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = D(math.exp(c)), D(math.exp(d))
    while b - a > rtol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = D(math.exp(c))
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = D(math.exp(d))
    T_star = math.exp(0.5 * (a + b))
    D_star = D(T_star)
    refined = True
    if D_star > Ds[i] + 1e-12:
        # not unimodal near the coarse minimum: dense scan of the bracket instead
        dense = np.geomspace(Ts[i - 1], Ts[i + 1], 2001)
        dvals = np.array([D(T) for T in dense])
        j = int(np.argmin(dvals))
        T_star, D_star, refined = float(dense[j]), float(dvals[j]), False
    samples.append((T_star, D_star))
    samples.sort()
    return KLCurve(samples, T_star, D_star, False, refined, clipped)


# ------------------------------------------------------------ power laws

@dataclass(frozen=True)
class ScalingFit:
    a: float
    b: float
    stderr_b: float
    window: tuple
    n_points: int


class FitError(DomainError):
    pass


def fit_power_law(points, window=(0.0, math.inf)) -> ScalingFit:
    """Least squares of log E_exc = log a - b log t_a over points with t_a in the window."""
    lo, hi = window
    sel = [(t, e) for t, e in points if lo <= t <= hi]
    bad = [(t, e) for t, e in sel if not e > 0]
    if bad:
        warnings.warn(f"excluding {len(bad)} non-positive E_exc points from the fit", stacklevel=2)
    sel = [(t, e) for t, e in sel if e > 0]
    if len(sel) < 3:
        raise FitError(f"power-law fit needs >= 3 positive points in window, got {len(sel)}")
    x = np.log([t for t, _ in sel])
    y = np.log([e for _, e in sel])
    X = np.column_stack([np.ones_like(x), x])
    coef, res, *_ = np.linalg.lstsq(X, y, rcond=None)
    r = y - X @ coef
    dof = len(x) - 2
    s2 = float(r @ r) / dof if dof > 0 else 0.0
    cov = s2 * np.linalg.inv(X.T @ X)
    return ScalingFit(float(math.exp(coef[0])), float(-coef[1]), float(math.sqrt(cov[1, 1])),
                      (lo, hi), len(sel))
