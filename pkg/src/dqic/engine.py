"""Contraction of the space-time network for the infinite chain.

The network is contracted along time: the state after l Trotter steps is a
two-site-cell infinite MPS over the chain whose physical leg on each site is
(S, mu), the composite spin of the latest slice times the open influence
bond. One step applies, on every site,

    K[(S, mu), (S', mu')] = F(S', S) * A[mu, S', mu']

(field propagator on both branches times the next influence slice) and then
the diagonal Ising phases on both bond sublattices with truncation to chi_s.
Closing every site with the trace of S and the influence closure vector
gives the spatial transfer matrix; its dominant eigenvectors are the left
and right boundaries used for all observables.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import ConvergenceError, DomainError, NumericalError
from .influence import InfluenceMPS, UniformInfluence, trivial_uniform_influence
from .model import (SIGMA, AnnealingSchedule, TimeGrid, eval_schedule, field_propagator,
                    schedule_point)

TRACE = np.array([1.0, 0.0, 0.0, 1.0])  # composite (s, sb) -> delta(s, sb)
SX_VEC = np.array([0.0, 1.0, 1.0, 0.0])  # <sb| sx |s> on the composite
SZ_VEC = np.array([1.0, 0.0, 0.0, -1.0])
PLUS_WEIGHT = 0.5 * np.ones(4)  # |+><+| on the composite

_SF = np.repeat(SIGMA, 2)
_SB = np.tile(SIGMA, 2)


def composite_field(A: float, dt: float) -> np.ndarray:
    """F[S', S] = u[s', s] conj(u[sb', sb]) for u = exp(i A dt sx)."""
    u = field_propagator(A, dt)
    return np.kron(u, u.conj())


def composite_ising(B: float, dt: float) -> np.ndarray:
    """g[S1, S2] = exp(i B dt (s1 s2 - sb1 sb2))."""
    return np.exp(1j * B * dt * (np.outer(_SF, _SF) - np.outer(_SB, _SB)))


def _gate_factors(g: np.ndarray):
    U, S, V = np.linalg.svd(g)
    r = max(1, int((S > 1e-14 * S[0]).sum()))
    L = U[:, :r] * np.sqrt(S[:r])
    R = np.sqrt(S[:r])[:, None] * V[:r]
    return L, R


# ------------------------------------------------------------------- columns

@dataclass
class ColumnTensor:
    """Everything needed to evolve one lattice column up to ``upto_step``.

    ``influence`` is either the translation-invariant slice tensor (any
    number of steps) or a finite MPS with exactly ``grid.M + 1`` slices; the
    finite form only supports measurements at the final step.
    """
    influence: UniformInfluence | InfluenceMPS
    grid: TimeGrid
    schedule: AnnealingSchedule
    upto_step: int
    sampling: str = "midpoint"

    @property
    def finite(self) -> bool:
        return isinstance(self.influence, InfluenceMPS)

    def slice_tensor(self, p: int) -> np.ndarray:
        if self.finite:
            return self.influence.tensors[p]
        return self.influence.slice_tensor

    def past_boundary(self) -> np.ndarray:
        if self.finite:
            return np.ones(1, complex)
        return self.influence.left

    def closure(self, p: int) -> np.ndarray:
        """Influence closure after slice p (valid for every p in the uniform form)."""
        if self.finite:
            if p != self.grid.M:
                raise DomainError("a finite influence MPS can only be closed at its last slice")
            return np.ones(1, complex)
        return self.influence.right

    def fields(self, step: int) -> tuple[float, float]:
        return eval_schedule(schedule_point(step, self.grid, self.sampling), self.schedule)

    def step_operator(self, step: int) -> np.ndarray:
        """K for the step from slice ``step`` to ``step + 1``, shape (4 m_in, 4 m_out)."""
        A, _ = self.fields(step)
        F = composite_field(A, self.grid.dt)
        T = self.slice_tensor(step + 1)
        mi, _, mo = T.shape
        K = np.einsum("ts,mtn->smtn", F, T)
        return K.reshape(4 * mi, 4 * mo)


def build_column(infl, grid: TimeGrid, sched: AnnealingSchedule, upto_step: int | None = None,
                 sampling: str = "midpoint") -> ColumnTensor:
    upto_step = grid.M if upto_step is None else upto_step
    if not 0 <= upto_step <= grid.M:
        raise DomainError(f"upto_step {upto_step} outside 0..{grid.M}")
    if infl is None:
        infl = trivial_uniform_influence()
    if isinstance(infl, InfluenceMPS) and infl.n_slices != grid.M + 1:
        raise DomainError(f"influence MPS has {infl.n_slices} slices, grid needs {grid.M + 1}")
    return ColumnTensor(infl, grid, sched, upto_step, sampling)


# --------------------------------------------------------------- chain state

@dataclass
class ChainState:
    """Two-site-cell iMPS; tensors in right-canonical-like form, lam on their left bonds."""
    BA: np.ndarray
    BB: np.ndarray
    lamA: np.ndarray
    lamB: np.ndarray
    m: int  # current influence bond dimension on the physical leg
    step: int = 0
    discarded: float = 0.0
    max_chi: int = 1

    def site(self, which: str) -> np.ndarray:
        return self.BA if which == "A" else self.BB


def initial_state(col: ColumnTensor) -> ChainState:
    T0 = col.slice_tensor(0)
    head = np.einsum("a,asm->sm", col.past_boundary(), T0) * PLUS_WEIGHT[:, None]
    m = T0.shape[2]
    B = head.reshape(1, 4 * m, 1).astype(complex)
    return ChainState(B.copy(), B.copy(), np.ones(1), np.ones(1), m)


def _truncate_order(U, S, V, keep):
    # deterministic choice inside a degenerate block cut by the truncation
    if keep < len(S) and abs(S[keep] - S[keep - 1]) <= 1e-12 * S[0]:
        lo = keep - 1
        while lo > 0 and abs(S[lo - 1] - S[keep]) <= 1e-12 * S[0]:
            lo -= 1
        hi = keep
        while hi + 1 < len(S) and abs(S[hi + 1] - S[keep]) <= 1e-12 * S[0]:
            hi += 1
        block = np.arange(lo, hi + 1)
        order = block[np.argsort(np.argmax(np.abs(U[:, block]), axis=0), kind="stable")]
        perm = np.concatenate([np.arange(lo), order, np.arange(hi + 1, len(S))])
        U, S, V = U[:, perm], S[perm], V[perm]
    return U[:, :keep], S[:keep], V[:keep]


def _bond_update(BL, BR, lam_out, L, R, chi, tol):
    """Apply a diagonal two-site gate g = L @ R on the composite parts and truncate.

    Returns (BL', lam', BR', discarded weight). The SVD runs on the product of
    the two R factors from QR, so its size is (4 chi)^2 regardless of the
    physical dimension.
    """
    a, dL, b = BL.shape
    _, dR, c = BR.shape
    mL, mR = dL // 4, dR // 4
    r = L.shape[1]
    BL4 = BL.reshape(a, 4, mL, b)
    BR4 = BR.reshape(b, 4, mR, c)
    Xn = np.einsum("asmb,sk->asmkb", BL4, L).reshape(a * dL, r * b)
    Y = np.einsum("ks,bsmc->kbsmc", R, BR4).reshape(r * b, dR * c)
    X = (lam_out[:, None] * Xn.reshape(a, -1)).reshape(a * dL, r * b)
    Rx = sla.qr(X, mode="r", check_finite=False)[0][:min(X.shape)]
    Qy, Ry = sla.qr(Y.T, mode="economic", check_finite=False)
    U, S, V = np.linalg.svd(Rx @ Ry.T, full_matrices=False)
    if not np.all(np.isfinite(S)) or S[0] == 0:
        raise NumericalError("bond update produced a non-finite or zero spectrum")
    keep = int((S > max(tol, 1e-15) * S[0]).sum())
    keep = max(1, min(chi, keep))
    lost = float((S[keep:] ** 2).sum() / (S ** 2).sum())
    U, S, V = _truncate_order(U, S, V, keep)
    nrm = np.linalg.norm(S)
    BRn = (V @ Qy.T).reshape(keep, dR, c)
    BLn = (Xn @ (Ry.T @ V.conj().T)).reshape(a, dL, keep) / nrm
    return BLn, S / nrm, BRn, lost


def _apply_site(B: np.ndarray, K: np.ndarray) -> np.ndarray:
    return np.matmul(B.transpose(0, 2, 1), K).transpose(0, 2, 1)


def evolve(state: ChainState, col: ColumnTensor, steps: int, chi_s: int,
           svd_tol: float = 1e-12) -> ChainState:
    """Advance ``state`` in place by ``steps`` Trotter steps."""
    if state.step + steps > col.upto_step:
        raise DomainError("cannot evolve past the column's last step")
    for _ in range(steps):
        l = state.step
        K = col.step_operator(l)
        BA = _apply_site(state.BA, K)
        BB = _apply_site(state.BB, K)
        _, B = col.fields(l)
        L, R = _gate_factors(composite_ising(B, col.grid.dt))
        BA, lamA, BB, lost1 = _bond_update(BA, BB, state.lamB, L, R, chi_s, svd_tol)
        BB, lamB, BA, lost2 = _bond_update(BB, BA, lamA, L, R, chi_s, svd_tol)
        state.BA, state.BB, state.lamA, state.lamB = BA, BB, lamA, lamB
        state.m = K.shape[1] // 4
        state.step = l + 1
        state.discarded += lost1 + lost2
        state.max_chi = max(state.max_chi, len(lamA), len(lamB))
    return state


# ------------------------------------------------------------- boundaries

@dataclass
class BoundaryMPS:
    """Dominant left/right eigenvectors of the closed spatial transfer matrix E_A E_B."""
    left: np.ndarray
    right: np.ndarray
    eigenvalue: complex
    gap_ratio: float
    residual: float
    closure: np.ndarray = field(repr=False)
    iterations: int = 1


def _closed(B: np.ndarray, vec: np.ndarray) -> np.ndarray:
    return np.einsum("asb,s->ab", B, vec)


def _site_closure(obs: np.ndarray, closure: np.ndarray) -> np.ndarray:
    return np.kron(obs, closure)


def boundaries(state: ChainState, closure: np.ndarray, conv_tol: float = 1e-8,
               max_iter: int = 50) -> BoundaryMPS:
    """Fixed point of the spatial transfer matrix.

    Dense eigendecomposition followed by inverse-iteration polishing until
    the eigen-residual falls below conv_tol.
    """
    w = _site_closure(TRACE, closure)
    Tm = _closed(state.BA, w) @ _closed(state.BB, w)
    ev, vl, vr = _dominant(Tm)
    lam = ev[0]
    if not np.isfinite(lam) or lam == 0:
        raise NumericalError("transfer matrix has no finite dominant eigenvalue")
    gap = float(abs(ev[1]) / abs(lam)) if len(ev) > 1 else 0.0
    if gap > 1 - 1e-10:
        raise ConvergenceError("dominant transfer eigenvalue is degenerate", distance=gap)
    it = 1
    res = _residual(Tm, lam, vl, vr)
    while res > conv_tol and it < max_iter:
        # one step of power iteration on both sides
        vr = Tm @ vr
        vr /= np.linalg.norm(vr)
        vl = vl @ Tm
        vl /= np.linalg.norm(vl)
        lam = (vl @ Tm @ vr) / (vl @ vr)
        res = _residual(Tm, lam, vl, vr)
        it += 1
    if res > conv_tol:
        raise ConvergenceError(f"boundary residual {res:.3e} above {conv_tol:.1e}",
                               distance=res, iterations=it)
    return BoundaryMPS(vl, vr, lam, gap, res, closure, it)


def _dominant(Tm):
    w, vl, vr = sla.eig(Tm, left=True, right=True, check_finite=False)
    order = np.argsort(-np.abs(w), kind="stable")
    i = order[0]
    return w[order], vl[:, i].conj(), vr[:, i]


def _residual(Tm, lam, vl, vr):
    nr = np.linalg.norm(Tm @ vr - lam * vr) / np.linalg.norm(vr)
    nl = np.linalg.norm(vl @ Tm - lam * vl) / np.linalg.norm(vl)
    return float(max(nr, nl) / abs(lam))


# ------------------------------------------------------------ measurements

def _expect_sites(state: ChainState, bnd: BoundaryMPS, ops: list[np.ndarray]) -> complex:
    """<op_1 ... op_k> on consecutive sites starting at A, with op a closure vector over (S, mu).

    Uses the trace closure on sites with op None. Normalized by the same
    number of unit cells closed with the trace.
    """
    w = _site_closure(TRACE, bnd.closure)
    n_cells = (len(ops) + 1) // 2
    sites = [state.BA, state.BB] * n_cells
    v = bnd.left
    norm = bnd.left
    for i, B in enumerate(sites):
        op = ops[i] if i < len(ops) else None
        v = v @ _closed(B, w if op is None else op)
        norm = norm @ _closed(B, w)
    return complex((v @ bnd.right) / (norm @ bnd.right))


def _zz_bond(state: ChainState, bnd: BoundaryMPS, first: str) -> complex:
    r = bnd.closure
    zz = np.outer(_SF * TRACE, _SF * TRACE)
    SA = np.einsum("asmb,m->asb", state.BA.reshape(state.BA.shape[0], 4, state.m, -1), r)
    SBt = np.einsum("asmb,m->asb", state.BB.reshape(state.BB.shape[0], 4, state.m, -1), r)
    EA = _closed(SA, TRACE)
    EB = _closed(SBt, TRACE)
    X, Y = (SA, SBt) if first == "A" else (SBt, SA)
    two = sum(zz[i, j] * X[:, i, :] @ Y[:, j, :] for i in (0, 3) for j in (0, 3))
    if first == "A":
        val = bnd.left @ two @ bnd.right
        norm = bnd.left @ EA @ EB @ bnd.right
    else:
        val = bnd.left @ EA @ two @ EB @ bnd.right
        norm = bnd.left @ EA @ EB @ EA @ EB @ bnd.right
    return complex(val / norm)


def measure_local(state: ChainState, bnd: BoundaryMPS, observable: str, site: str = "A") -> float:
    """<sx> on a site, <sz sz> on the bond starting at ``site``, or the normalization."""
    if observable == "identity":
        val = _expect_sites(state, bnd, [])
    elif observable == "sx":
        op = _site_closure(SX_VEC, bnd.closure)
        val = _expect_sites(state, bnd, [op] if site == "A" else [None, op])
    elif observable == "zz":
        val = _zz_bond(state, bnd, site)
    else:
        raise DomainError(f"unknown observable {observable!r}")
    if not np.isfinite(val):
        raise NumericalError(f"non-finite {observable} expectation")
    return float(val.real)


@dataclass
class ReducedDensityMatrix:
    n_sites: int
    data: np.ndarray
    hermiticity_error: float
    eps_pos: float
    trace_norm_applied: bool = True

    @property
    def untrusted(self) -> bool:
        return self.eps_pos > 1e-2


def extract_rdm(state: ChainState, bnd: BoundaryMPS, n: int) -> ReducedDensityMatrix:
    """n-site RDM on consecutive sites starting at A. Basis order: site 1 most significant, 0 = up."""
    if not 1 <= n <= 8:
        raise DomainError("RDM size must be 1..8")
    r = bnd.closure
    sites = []
    for B in [state.BA, state.BB] * (n // 2 + 1):
        sites.append(np.einsum("asmb,m->asb", B.reshape(B.shape[0], 4, state.m, -1), r))
    X = bnd.left[None, :]  # (open composites, bond)
    for T in sites[:n]:
        X = np.einsum("xa,asb->xsb", X, T).reshape(-1, T.shape[2])
    right = bnd.right
    if n % 2 == 1:
        right = _closed(sites[n], TRACE) @ right
    vec = X @ right
    # composite digits (s_i, sb_i) per site -> ket digits then bra digits
    t = vec.reshape((2, 2) * n)
    perm = list(range(0, 2 * n, 2)) + list(range(1, 2 * n, 2))
    rho = t.transpose(perm).reshape(2 ** n, 2 ** n)
    rho = rho / np.trace(rho)
    herm = float(np.abs(rho - rho.conj().T).max())
    rho = 0.5 * (rho + rho.conj().T)
    eps = float(max(0.0, -np.linalg.eigvalsh(rho).min()))
    return ReducedDensityMatrix(n, rho, herm, eps)


def reflect(state: ChainState) -> ChainState:
    """Spatially mirrored chain: A and B swap and every bond is transposed."""
    BA = state.BB.transpose(2, 1, 0).copy()
    BB = state.BA.transpose(2, 1, 0).copy()
    return ChainState(BA, BB, state.lamB, state.lamA, state.m, state.step, state.discarded, state.max_chi)


# ----------------------------------------------------------------- drivers

@dataclass
class Measurement:
    step: int
    s: float
    energy: float
    sx: float
    zz: float
    norm: float
    gap_ratio: float
    residual: float
    bond_dim: int


def initial_measurement() -> Measurement:
    return Measurement(0, 0.0, -1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1)


def measure_energy(state: ChainState, col: ColumnTensor, conv_tol: float = 1e-8) -> Measurement:
    l = state.step
    if l == 0:
        # the column holds only the initial product state
        return initial_measurement()
    s = l * col.grid.dt / col.grid.t_a
    bnd = boundaries(state, col.closure(l), conv_tol)
    sx = measure_local(state, bnd, "sx")
    zz = measure_local(state, bnd, "zz")
    norm = measure_local(state, bnd, "identity")
    A, B = eval_schedule(min(1.0, s), col.schedule)
    return Measurement(l, s, -A * sx - B * zz, sx, zz, norm, bnd.gap_ratio, bnd.residual,
                       max(len(state.lamA), len(state.lamB)))


def itebd_fixed_point(col: ColumnTensor, chi_s: int, conv_tol: float = 1e-8, max_iter: int = 50,
                      svd_tol: float = 1e-12):
    """Evolve the column to its last step and return (state, boundaries, iterations)."""
    if chi_s < 1 or conv_tol <= 0:
        raise DomainError("need chi_s >= 1 and conv_tol > 0")
    state = evolve(initial_state(col), col, col.upto_step, chi_s, svd_tol)
    bnd = boundaries(state, col.closure(col.upto_step), conv_tol, max_iter)
    return state, bnd, bnd.iterations


def measurement_steps(M: int, points: int) -> list[int]:
    """Evenly spaced steps 0..M, ``points`` of them (at least the two ends)."""
    points = max(2, min(points, M + 1))
    return sorted(set(int(round(x)) for x in np.linspace(0, M, points)))


def run_trajectory(col: ColumnTensor, chi_s: int, measure_at, svd_tol: float = 1e-12,
                   conv_tol: float = 1e-8, callback=None):
    """Evolve once and measure at the given steps; returns (measurements, final state, seconds)."""
    t0 = time.perf_counter()
    state = initial_state(col)
    out = []
    for l in sorted(set(measure_at)):
        if l > col.upto_step:
            break
        evolve(state, col, l - state.step, chi_s, svd_tol)
        meas = measure_energy(state, col, conv_tol)
        out.append(meas)
        if callback is not None:
            callback(meas, state)
    return out, state, time.perf_counter() - t0


def single_spin_rdm(col: ColumnTensor, step: int | None = None) -> np.ndarray:
    """2x2 RDM of an isolated spin (no Ising bonds) from the same column."""
    step = col.upto_step if step is None else step
    v = np.einsum("a,asm->sm", col.past_boundary(), col.slice_tensor(0)) * PLUS_WEIGHT[:, None]
    v = v.ravel()
    for l in range(step):
        v = v @ col.step_operator(l)
    comp = v.reshape(4, -1) @ col.closure(step)
    rho = comp.reshape(2, 2)
    return rho / np.trace(rho)
