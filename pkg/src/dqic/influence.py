"""Influence functional of one site as a tensor over composite time variables.

A composite S = (sigma, sigma_b) pairs the ket spin at slice l with the bra
spin at the same physical time (folded index 2M+1-l). Encoding:
S = 2*i(sigma) + i(sigma_b) with i(+1)=0, i(-1)=1.

Three constructions live here:
  * ``build_influence_exact``: dense tensor, small M only.
  * ``compress_influence``: finite MPS built slice by slice with SVD truncation.
  * ``build_uniform_influence``: translation-invariant slice tensor for long
    anneals, built by a brick network of two-slice gates.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _accel
from .errors import DomainError
from .model import BathSpec, KernelTable, kappa_by_separation

SF = np.array([1.0, 1.0, -1.0, -1.0])
SB = np.array([1.0, -1.0, 1.0, -1.0])
# five-valued variant: index 4 means "no spin" (outside the simulated window)
SF5 = np.append(SF, 0.0)
SB5 = np.append(SB, 0.0)
EMPTY = 4

EXACT_MAX_SLICES = 10


def encode(sigma: int, sigma_b: int) -> int:
    if sigma not in (1, -1) or sigma_b not in (1, -1):
        raise DomainError("spin values must be +1 or -1")
    return 2 * (sigma == -1) + (sigma_b == -1)


def decode(idx: int) -> tuple[int, int]:
    if idx not in (0, 1, 2, 3):
        raise DomainError(f"composite index {idx} outside 0..3")
    return int(SF[idx]), int(SB[idx])


def folded_spins(configs: np.ndarray) -> np.ndarray:
    """Map composite configurations (n, M+1) to folded spins (n, 2M+2)."""
    configs = np.asarray(configs)
    return np.concatenate([SF[configs], SB[configs][:, ::-1]], axis=1)


def _all_configs(n_slices: int) -> np.ndarray:
    codes = np.arange(4 ** n_slices)
    digits = (codes[:, None] // 4 ** np.arange(n_slices - 1, -1, -1)[None, :]) % 4
    return digits


def influence_exponent(configs, table: KernelTable) -> np.ndarray:
    """S_infl for each composite configuration (rows of ``configs``)."""
    configs = np.atleast_2d(configs)
    if configs.shape[1] != table.grid.M + 1:
        raise DomainError("configuration length must be M+1")
    return _accel.quadratic_forms(folded_spins(configs), table.matrix())


def build_influence_exact(table: KernelTable) -> np.ndarray:
    n = table.grid.M + 1
    if n > EXACT_MAX_SLICES:
        raise DomainError(f"exact influence tensor limited to M+1 <= {EXACT_MAX_SLICES} slices, got {n}")
    ex = influence_exponent(_all_configs(n), table)
    return np.exp(ex).reshape((4,) * n)


# ------------------------------------------------------------ slice couplings

def _pair_blocks(table: KernelTable, p: int, q: int) -> np.ndarray:
    """Exponent matrix E[S_p, S_q] for the four folded pairs joining slices p > q."""
    g = table.grid
    P = 2 * g.M + 2
    lp, lq = (p, P - 1 - p), (q, P - 1 - q)
    vp, vq = (SF, SB), (SF, SB)
    E = np.zeros((4, 4), complex)
    for a in range(2):
        for b in range(2):
            l, m = lp[a], lq[b]
            if l < m:
                l, m = m, l
            E += table.coefficient(l, m) * np.outer(vp[a], vq[b])
    return E


def _self_weight(table: KernelTable, p: int) -> np.ndarray:
    g = table.grid
    l = 2 * g.M + 1 - p
    return np.exp(table.coefficient(l, p) * SF * SB)


# ------------------------------------------------------------------ finite MPS

@dataclass
class InfluenceMPS:
    """Chain of M+1 tensors (left, composite, right); full value = exp(log_scale) * contraction."""
    tensors: list
    chi_t: int
    svd_tol: float
    log_scale: complex = 0.0
    truncation_loss: float = 0.0
    max_bond: int = 1

    @property
    def n_slices(self) -> int:
        return len(self.tensors)

    def bond_dims(self) -> list[int]:
        return [t.shape[2] for t in self.tensors[:-1]]

    def value(self, config) -> complex:
        v = np.ones(1, complex)
        for t, s in zip(self.tensors, config):
            v = v @ t[:, s, :]
        return complex(v[0] * np.exp(self.log_scale))

    def to_dense(self) -> np.ndarray:
        n = self.n_slices
        if n > EXACT_MAX_SLICES:
            raise DomainError("dense expansion limited to small M")
        out = np.ones((1, 1), complex)
        for t in self.tensors:
            out = np.einsum("xa,asb->xsb", out, t).reshape(-1, t.shape[2])
        return (out[:, 0] * np.exp(self.log_scale)).reshape((4,) * n)


def _truncate(S: np.ndarray, chi: int, tol: float) -> tuple[int, float]:
    keep = int((S > tol * S[0]).sum()) if tol > 0 else int((S > 0).sum())
    keep = max(1, min(chi, keep))
    total = float((S ** 2).sum())
    lost = float((S[keep:] ** 2).sum()) / total if total > 0 else 0.0
    return keep, lost


def compress_influence(table: KernelTable, chi_t: int, svd_tol: float = 1e-12) -> InfluenceMPS:
    """Left-to-right construction with truncation after every slice.

    Adding slice p multiplies the tensors of slices p-W..p-1 by their coupling
    to S_p, carried along the bond as a copy of S_p. The window is then
    brought to left-canonical form with truncation. A final right-to-left
    sweep leaves a right-canonical MPS.
    """
    if chi_t < 1:
        raise DomainError("chi_t must be >= 1")
    g = table.grid
    M = g.M
    W = table.kmax
    T = [(_self_weight(table, 0)).reshape(1, 4, 1).astype(complex)]
    log_scale = 0j
    loss = 0.0
    max_bond = 1
    for p in range(1, M + 1):
        w0 = max(0, p - W)
        for q in range(w0, p):
            G = np.exp(_pair_blocks(table, p, q))  # [S_p, S_q]
            A = T[q]
            Dl, _, Dr = A.shape
            if q == w0:
                # open a carrier leg of dimension 4 holding S_p
                B = np.einsum("asb,xs->asbx", A, G).reshape(Dl, 4, Dr * 4)
            else:
                C = np.zeros((Dl, 4, 4, Dr, 4), complex)
                for x in range(4):
                    C[:, x, :, :, x] = A * G[x][None, :, None]
                B = C.reshape(Dl * 4, 4, Dr * 4)
            T[q] = B
        new = np.zeros((4, 4, 1), complex)
        new[np.arange(4), np.arange(4), 0] = _self_weight(table, p)
        T.append(new)
        # right-to-left QR over the touched window, then truncating left-to-right SVD
        for q in range(p, w0, -1):
            A = T[q]
            Dl, d, Dr = A.shape
            Q, R = np.linalg.qr(A.reshape(Dl, d * Dr).T)
            T[q] = Q.T.reshape(-1, d, Dr)
            T[q - 1] = np.einsum("asb,cb->asc", T[q - 1], R)
        for q in range(w0, p):
            A = T[q]
            Dl, d, Dr = A.shape
            U, S, V = np.linalg.svd(A.reshape(Dl * d, Dr), full_matrices=False)
            keep, lost = _truncate(S, chi_t, svd_tol)
            loss += lost
            T[q] = U[:, :keep].reshape(Dl, d, keep)
            T[q + 1] = np.einsum("ab,bsc->asc", S[:keep, None] * V[:keep], T[q + 1])
            max_bond = max(max_bond, keep)
        nrm = np.linalg.norm(T[p])
        T[p] = T[p] / nrm
        log_scale += math.log(nrm)
    # final right-to-left canonical sweep; the norm ends up in the first tensor
    for q in range(M, 0, -1):
        A = T[q]
        Dl, d, Dr = A.shape
        Q, R = np.linalg.qr(A.reshape(Dl, d * Dr).T)
        T[q] = Q.T.reshape(-1, d, Dr)
        T[q - 1] = np.einsum("asb,cb->asc", T[q - 1], R)
    nrm = np.linalg.norm(T[0])
    T[0] = T[0] / nrm
    log_scale += math.log(nrm)
    return InfluenceMPS(T, chi_t, svd_tol, log_scale, loss, max_bond)


def reconstruction_error(mps: InfluenceMPS, exact: np.ndarray) -> tuple[float, float]:
    if exact.ndim != mps.n_slices:
        raise DomainError(f"shape mismatch: MPS has {mps.n_slices} slices, tensor has {exact.ndim}")
    approx = mps.to_dense()
    rel = np.abs(approx - exact) / np.abs(exact)
    return float(rel.max()), float(np.sqrt(np.mean(rel ** 2)))


def gauge_transform(mps: InfluenceMPS, bond: int, X: np.ndarray) -> InfluenceMPS:
    """Insert X X^-1 on the bond between tensors ``bond`` and ``bond+1``."""
    T = [t.copy() for t in mps.tensors]
    T[bond] = np.einsum("asb,bc->asc", T[bond], X)
    T[bond + 1] = np.einsum("cb,bsd->csd", np.linalg.inv(X), T[bond + 1])
    return InfluenceMPS(T, mps.chi_t, mps.svd_tol, mps.log_scale, mps.truncation_loss, mps.max_bond)


# --------------------------------------------------------------- uniform build

def coupling_gate(kappa: complex) -> np.ndarray:
    """exp of the coupling between a later slice (row) and an earlier one (column), 5x5."""
    return np.exp(-np.outer(SF5 - SB5, kappa * SF5 - np.conj(kappa) * SB5))


@dataclass
class UniformInfluence:
    """Translation-invariant influence slice tensor for the bulk of a long anneal.

    ``A[mu, S, nu]`` carries the memory of earlier slices in ``mu`` and of later
    ones in ``nu``. Index 4 of S is the empty variable. ``left`` and ``right``
    are the boundary vectors reached by empty slices before t=0 and after the
    measured time. The tensor is normalized so that the empty transfer matrix
    has dominant eigenvalue 1, which makes the functional trace-preserving
    up to the constant from the same-slice pairs.
    """
    A: np.ndarray
    left: np.ndarray
    right: np.ndarray
    kappa: np.ndarray = field(repr=False)
    chi_t: int = 64
    svd_tol: float = 1e-12
    truncation_loss: float = 0.0

    @property
    def bond(self) -> int:
        return self.A.shape[0]

    @property
    def slice_tensor(self) -> np.ndarray:
        return self.A[:, :4, :]

    def value(self, config) -> complex:
        """Influence of a configuration on consecutive slices starting at t=0."""
        v = self.left
        for s in config:
            v = v @ self.A[:, s, :]
        return complex(v @ self.right)


def _hastings_update(BL, BR, lam_out, g, chi, tol):
    th = np.einsum("aib,bjc->aijc", BL, BR) * g[None, :, :, None]
    th = th.transpose(0, 2, 1, 3)  # the gate crosses the two lines
    D = th.shape
    U, S, V = np.linalg.svd((lam_out[:, None, None, None] * th).reshape(D[0] * D[1], D[2] * D[3]),
                            full_matrices=False)
    keep, lost = _truncate(S, chi, max(tol, 1e-15))
    V = V[:keep].reshape(keep, D[2], D[3])
    S = S[:keep]
    nrm = np.linalg.norm(S)
    BLn = np.einsum("aijc,kjc->aik", th, V.conj()) / nrm
    return BLn, S / nrm, V, lost


def _dominant(Tm: np.ndarray):
    w, vr = np.linalg.eig(Tm)
    i = int(np.argmax(np.abs(w)))
    w2, vl = np.linalg.eig(Tm.T)
    j = int(np.argmax(np.abs(w2)))
    return w[i], vl[:, j], vr[:, i]


def build_uniform_influence(dt: float, tau_c: float, bath: BathSpec, chi_t: int,
                            svd_tol: float = 1e-12, kappa: np.ndarray | None = None) -> UniformInfluence:
    """Infinite-time influence slice tensor via a brick network of two-slice gates.

    Every slice is a line carrying a five-valued variable; gate k couples lines
    that are k slices apart and swaps them, so after gates kmax..1 each line has
    met every other line within the window exactly once.
    """
    from .model import memory_steps
    kmax = memory_steps(dt, tau_c)
    if kappa is None:
        kappa = kappa_by_separation(dt, kmax, bath)
    BA = np.ones((1, 5, 1), complex)
    BB = BA.copy()
    lA = np.ones(1)
    lB = np.ones(1)
    loss = 0.0
    for k in range(kmax, 0, -1):
        g = coupling_gate(kappa[k])
        if k % 2 == 0:
            BA, lA, BB, lost = _hastings_update(BA, BB, lB, g, chi_t, svd_tol)
        else:
            BB, lB, BA, lost = _hastings_update(BB, BA, lA, g, chi_t, svd_tol)
        loss += lost
    f = np.exp(kappa[0].real * SF5 * SB5)
    f[EMPTY] = 1.0
    th = np.einsum("aib,bjc->aijc", BA, BB)
    A = np.einsum("aiic,i->aic", th, f)
    lam, left, right = _dominant(A[:, EMPTY, :])
    A = A / lam
    left = left / np.linalg.norm(left)
    right = right / (left @ right)
    return UniformInfluence(A, left, right, np.asarray(kappa), chi_t, svd_tol, loss)


def trivial_uniform_influence() -> UniformInfluence:
    return UniformInfluence(np.ones((1, 5, 1), complex), np.ones(1, complex), np.ones(1, complex),
                            np.zeros(1, complex), 1, 0.0, 0.0)


# -------------------------------------------------------------- serialization

_MAGIC = b"DQICINF\x01"


def cache_key(bath: BathSpec, dt: float, tau_c: float, chi_t: int, svd_tol: float,
              t_a: float | None = None) -> str:
    """t_a is None for the translation-invariant tensor, which does not depend on it."""
    parts = [t_a, dt, tau_c, bath.eta, bath.omega_c, bath.T_B, chi_t, svd_tol]
    return "_".join("inf" if p is None else repr(float(p)) for p in parts)


def save_influence(path, obj, key: str) -> None:
    if isinstance(obj, UniformInfluence):
        arrays = {"A": obj.A, "left": obj.left, "right": obj.right, "kappa": obj.kappa}
        meta = {"kind": "uniform", "chi_t": obj.chi_t, "svd_tol": obj.svd_tol,
                "truncation_loss": obj.truncation_loss}
    elif isinstance(obj, InfluenceMPS):
        arrays = {f"T{i}": t for i, t in enumerate(obj.tensors)}
        meta = {"kind": "mps", "chi_t": obj.chi_t, "svd_tol": obj.svd_tol,
                "log_scale": [complex(obj.log_scale).real, complex(obj.log_scale).imag],
                "truncation_loss": obj.truncation_loss, "max_bond": obj.max_bond}
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")
    meta["key"] = key
    meta["arrays"] = [[name, list(a.shape)] for name, a in arrays.items()]
    head = json.dumps(meta).encode()
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(len(head).to_bytes(4, "little"))
    buf.write(head)
    for a in arrays.values():
        buf.write(np.ascontiguousarray(a, dtype="<c16").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_influence(path, key: str | None = None):
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise DomainError(f"{path}: not an influence cache file")
    n = int.from_bytes(raw[8:12], "little")
    meta = json.loads(raw[12:12 + n])
    if key is not None and meta["key"] != key:
        raise DomainError(f"{path}: cache key mismatch")
    off = 12 + n
    arrays = {}
    for name, shape in meta["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(raw, dtype="<c16", count=count, offset=off).reshape(shape).astype(complex)
        off += 16 * count
    if meta["kind"] == "uniform":
        return UniformInfluence(arrays["A"], arrays["left"], arrays["right"], arrays["kappa"],
                                meta["chi_t"], meta["svd_tol"], meta["truncation_loss"])
    tensors = [arrays[f"T{i}"] for i in range(len(arrays))]
    re, im = meta["log_scale"]
    return InfluenceMPS(tensors, meta["chi_t"], meta["svd_tol"], complex(re, im),
                        meta["truncation_loss"], meta["max_bond"])
