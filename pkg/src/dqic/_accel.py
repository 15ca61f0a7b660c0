"""Enumeration kernels with a numba path and a vectorized numpy path.

Set DQIC_NO_NUMBA=1 to force the numpy path (also used when numba is
missing). Tensor-network contractions elsewhere are BLAS-bound and do not
go through here.
"""
from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and os.environ.get("DQIC_NO_NUMBA", "0") in ("", "0")

_CHUNK = 1 << 15


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------- numpy

def _spins_from_codes(codes: np.ndarray, n_bits: int) -> np.ndarray:
    # bit i (from the most significant) set means spin -1
    shifts = np.arange(n_bits - 1, -1, -1)
    return 1.0 - 2.0 * ((codes[:, None] >> shifts[None, :]) & 1)


def quadratic_forms_np(spins: np.ndarray, K: np.ndarray) -> np.ndarray:
    """sum_{l,m} K[l,m] s_l s_m for each row of spins."""
    out = np.empty(spins.shape[0], complex)
    for i in range(0, spins.shape[0], _CHUNK):
        s = spins[i:i + _CHUNK]
        out[i:i + _CHUNK] = np.einsum("nl,nl->n", s @ K.T, s)
    return out


def path_sum_np(n_steps: int, props: np.ndarray, K: np.ndarray, init: np.ndarray) -> np.ndarray:
    """Single-spin folded path sum; see oracles.path_sum_rdm for the layout."""
    M = n_steps
    P = 2 * M + 2
    rho = np.zeros((2, 2), complex)
    total = 1 << P
    for start in range(0, total, _CHUNK):
        codes = np.arange(start, min(total, start + _CHUNK), dtype=np.int64)
        bits = (codes[:, None] >> np.arange(P - 1, -1, -1)[None, :]) & 1
        s = 1.0 - 2.0 * bits
        w = np.exp(np.einsum("nl,nl->n", s @ K.T, s))
        f, b = bits[:, :M + 1], bits[:, P - 1:M:-1]  # b[:, p] is the bra spin at slice p
        w = w * init[f[:, 0]] * np.conj(init[b[:, 0]])
        for p in range(M):
            w = w * props[p, f[:, p + 1], f[:, p]] * np.conj(props[p, b[:, p + 1], b[:, p]])
        np.add.at(rho, (f[:, M], b[:, M]), w)
    return rho


def classical_weights_np(n: int, beta: float) -> tuple[np.ndarray, np.ndarray]:
    codes = np.arange(1 << n, dtype=np.int64)
    s = _spins_from_codes(codes, n)
    e = -(s[:, :-1] * s[:, 1:]).sum(1)
    return np.exp(-beta * (e - e.min())), s


# ---------------------------------------------------------------- numba

if numba is not None:
    @numba.njit(cache=True)
    def quadratic_forms_nb(spins, K):
        n, P = spins.shape
        out = np.empty(n, np.complex128)
        for i in range(n):
            acc = 0j
            for l in range(P):
                sl = spins[i, l]
                for m in range(P):
                    if K[l, m] != 0:
                        acc += K[l, m] * sl * spins[i, m]
            out[i] = acc
        return out

    @numba.njit(cache=True)
    def path_sum_nb(n_steps, props, K, init):
        M = n_steps
        P = 2 * M + 2
        rho = np.zeros((2, 2), np.complex128)
        bits = np.empty(P, np.int64)
        s = np.empty(P)
        for code in range(1 << P):
            for l in range(P):
                bits[l] = (code >> (P - 1 - l)) & 1
                s[l] = 1.0 - 2.0 * bits[l]
            ex = 0j
            for l in range(P):
                for m in range(l):
                    if K[l, m] != 0:
                        ex += K[l, m] * s[l] * s[m]
            w = np.exp(ex) * init[bits[0]] * np.conj(init[bits[P - 1]])
            for p in range(M):
                fp, fn = bits[p], bits[p + 1]
                bp, bn = bits[P - 1 - p], bits[P - 2 - p]
                w *= props[p, fn, fp] * np.conj(props[p, bn, bp])
            rho[bits[M], bits[M + 1]] += w
        return rho

    @numba.njit(cache=True)
    def classical_weights_nb(n, beta):
        total = 1 << n
        s = np.empty((total, n))
        e = np.empty(total)
        for c in range(total):
            for i in range(n):
                s[c, i] = 1.0 - 2.0 * ((c >> (n - 1 - i)) & 1)
            acc = 0.0
            for i in range(n - 1):
                acc -= s[c, i] * s[c, i + 1]
            e[c] = acc
        emin = e.min()
        return np.exp(-beta * (e - emin)), s


def quadratic_forms(spins, K):
    spins = np.ascontiguousarray(spins, dtype=float)
    K = np.ascontiguousarray(K, dtype=complex)
    if USE_NUMBA:
        return quadratic_forms_nb(spins, K)
    return quadratic_forms_np(spins, K)


def path_sum(n_steps, props, K, init):
    props = np.ascontiguousarray(props, dtype=complex)
    K = np.ascontiguousarray(K, dtype=complex)
    init = np.ascontiguousarray(init, dtype=complex)
    if USE_NUMBA:
        return path_sum_nb(n_steps, props, K, init)
    return path_sum_np(n_steps, props, K, init)


def classical_weights(n, beta):
    if USE_NUMBA:
        return classical_weights_nb(n, float(beta))
    return classical_weights_np(n, float(beta))
