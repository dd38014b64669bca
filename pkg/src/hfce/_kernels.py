"""Inner loops, compiled with numba when available.

Every kernel has a numba implementation (``*_nb``) and a vectorised numpy
implementation (``*_np``). The public name is bound to one of them at import
time: setting ``HFCE_DISABLE_NUMBA=1`` (or running without numba installed)
selects the numpy path.
"""
from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and os.environ.get("HFCE_DISABLE_NUMBA", "").lower() not in ("1", "true", "yes")


def _njit(fn):
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


# -- near-field steering matrix ---------------------------------------------


def _near_field_matrix_np(y, theta, r, k):
    # r_n - r = (y^2 - 2 y r sin) / (r_n + r): no cancellation for large r
    y = y[:, None]
    rs = r * np.sin(theta)
    rc = r * np.cos(theta)
    rn = np.sqrt(rc**2 + (y - rs) ** 2)
    delta = (y * y - 2 * y * rs) / (rn + r)
    return np.exp(-1j * k * delta) / np.sqrt(y.shape[0])


@_njit
def _near_field_matrix_nb(y, theta, r, k):
    n_ant = y.shape[0]
    m = theta.shape[0]
    out = np.empty((n_ant, m), dtype=np.complex128)
    scale = 1.0 / np.sqrt(n_ant)
    for j in range(m):
        rs = r[j] * np.sin(theta[j])
        rc = r[j] * np.cos(theta[j])
        for n in range(n_ant):
            dy = y[n] - rs
            rn = np.sqrt(rc * rc + dy * dy)
            delta = (y[n] * y[n] - 2.0 * y[n] * rs) / (rn + r[j])
            ph = -k * delta
            out[n, j] = complex(np.cos(ph), np.sin(ph)) * scale
    return out


# -- power-diffusion range walk ---------------------------------------------


def _pd_walk_np(atoms, seed, n_ant, n_blocks, thresh):
    """Vectorised walk: per block, coherence against all columns, then the
    first offset where both directions fail ends the block."""
    base = seed % n_ant
    fs = atoms[seed]
    max_step = n_ant - 1
    di = np.arange(max_step + 1)
    up = base + di
    dn = base - di
    up_ok = up < n_ant
    dn_ok = dn >= 0
    chosen = []
    steps = 0
    for s in range(n_blocks):
        block = atoms[s * n_ant:(s + 1) * n_ant]
        mu = np.abs(block.conj() @ fs)
        if s * n_ant + base == seed:
            mu[base] = 1.0
        p1 = np.zeros(di.size, dtype=bool)
        p2 = np.zeros(di.size, dtype=bool)
        p1[up_ok] = mu[up[up_ok]] >= thresh
        p2[dn_ok] = mu[dn[dn_ok]] >= thresh
        fail = ~(p1 | p2)
        stop = int(np.argmax(fail)) if fail.any() else di.size
        steps += min(stop + 1, di.size)
        keep = slice(0, stop)
        chosen.append(s * n_ant + up[keep][p1[keep]])
        chosen.append(s * n_ant + dn[keep][p2[keep]])
    idx = np.unique(np.concatenate(chosen)) if chosen else np.empty(0, np.int64)
    return idx.astype(np.int64), steps


@_njit
def _pd_walk_nb(atoms, seed, n_ant, n_blocks, thresh):
    base = seed % n_ant
    max_step = n_ant - 1
    flags = np.zeros(atoms.shape[0], dtype=np.bool_)
    steps = 0
    for s in range(n_blocks):
        off = s * n_ant
        for di in range(max_step + 1):
            steps += 1
            mu1 = -1.0
            mu2 = -1.0
            if base + di < n_ant:
                i1 = off + base + di
                if i1 == seed:
                    mu1 = 1.0
                else:
                    acc = 0j
                    for n in range(atoms.shape[1]):
                        acc += np.conj(atoms[i1, n]) * atoms[seed, n]
                    mu1 = abs(acc)
                if mu1 >= thresh:
                    flags[i1] = True
            if base - di >= 0:
                i2 = off + base - di
                if i2 == seed:
                    mu2 = 1.0
                else:
                    acc = 0j
                    for n in range(atoms.shape[1]):
                        acc += np.conj(atoms[i2, n]) * atoms[seed, n]
                    mu2 = abs(acc)
                if mu2 >= thresh:
                    flags[i2] = True
            if mu1 < thresh and mu2 < thresh:
                break
    return np.nonzero(flags)[0].astype(np.int64), steps


# -- greedy atom selection --------------------------------------------------


def _masked_argmax_np(values, mask):
    v = np.where(mask, -np.inf, values)
    return int(np.argmax(v))


@_njit
def _masked_argmax_nb(values, mask):
    best = -1
    best_v = -np.inf
    for i in range(values.shape[0]):
        if not mask[i] and values[i] > best_v:
            best_v = values[i]
            best = i
    return best


# -- fused greedy loop (numba only) -------------------------------------------
#
# Mirrors estimators._greedy_py step for step. The numpy backend runs that
# Python loop instead; there is no vectorised equivalent of a sequential
# greedy search.

EXPAND_NONE, EXPAND_PD, EXPAND_WINDOW = 0, 1, 2
FLAG_OVERFLOW, FLAG_DEFICIENT = 1, 2


@_njit
def _greedy_nb(phi, y, atoms, n_ant, n_blocks, n_iter, mode, alpha, window, resid_tol, rank_tol):
    n_meas, n_atoms = phi.shape
    cap = n_meas - 1
    in_support = np.zeros(n_atoms, dtype=np.bool_)
    support = np.empty(cap, dtype=np.int64)
    k = 0
    seeds = np.empty(n_iter, dtype=np.int64)
    mbars = np.empty(n_iter, dtype=np.float64)
    ends = np.empty(n_iter, dtype=np.int64)
    n_paths = 0
    history = np.empty(n_iter + 1, dtype=np.float64)
    Qm = np.zeros((cap, n_meas), dtype=np.complex128)  # orthonormal rows
    Rm = np.zeros((cap, cap), dtype=np.complex128)
    qy = np.zeros(cap, dtype=np.complex128)
    R = y.copy()
    ynorm = np.sqrt(np.sum(np.abs(y) ** 2))
    history[0] = ynorm
    m1 = -1.0
    steps_total = 0
    flags = 0
    deficient = False
    c2 = np.empty(n_atoms, dtype=np.float64)
    coef = np.zeros(0, dtype=np.complex128)
    v = np.empty(n_meas, dtype=np.complex128)
    for it in range(n_iter):
        if history[n_paths] <= resid_tol * max(ynorm, 1e-300) or k >= cap:
            break
        corr = np.zeros(n_atoms, dtype=np.complex128)
        for m in range(n_meas):
            rc = np.conj(R[m])
            for j in range(n_atoms):
                corr[j] += rc * phi[m, j]
        for j in range(n_atoms):
            c2[j] = corr[j].real * corr[j].real + corr[j].imag * corr[j].imag
        seed = _masked_argmax_nb(c2, in_support)
        if seed < 0:
            break
        mval = np.sqrt(c2[seed])
        if m1 < 0:
            m1 = mval
        m_bar = min(mval / m1, 1.0) if m1 > 0 else 1.0
        if mode == EXPAND_PD:
            members, steps = _pd_walk_nb(atoms, seed, n_ant, n_blocks, alpha / m_bar)
            steps_total += steps
        elif mode == EXPAND_WINDOW:
            lo = max(seed - window, 0)
            hi = min(seed + window, n_atoms - 1)
            members = np.arange(lo, hi + 1).astype(np.int64)
        else:
            members = np.empty(0, dtype=np.int64)
        new = np.empty(members.shape[0], dtype=np.int64)
        n_new = 0
        for i in members:
            if not in_support[i] and i != seed:
                new[n_new] = i
                n_new += 1
        new = new[:n_new]
        room = cap - k - 1
        if n_new > room:
            mu = np.empty(n_new, dtype=np.float64)
            for a in range(n_new):
                acc = 0j
                for n in range(atoms.shape[1]):
                    acc += np.conj(atoms[new[a], n]) * atoms[seed, n]
                mu[a] = -abs(acc)
            order = np.argsort(mu, kind="mergesort")
            keep = max(room, 0)
            new = new[order[:keep]]
            n_new = keep
            flags |= FLAG_OVERFLOW
        for a in range(n_new + 1):
            idx = seed if a == 0 else new[a - 1]
            in_support[idx] = True
            support[k] = idx
            k += 1
            if deficient:
                continue
            # two-pass classical Gram-Schmidt against the current basis
            for m in range(n_meas):
                v[m] = phi[m, idx]
            scale = np.sqrt(np.sum(np.abs(v) ** 2))
            kk = k - 1
            for _ in range(2):
                for b in range(kk):
                    acc = 0j
                    for m in range(n_meas):
                        acc += np.conj(Qm[b, m]) * v[m]
                    Rm[b, kk] += acc
                    for m in range(n_meas):
                        v[m] -= acc * Qm[b, m]
            nv = np.sqrt(np.sum(np.abs(v) ** 2))
            if nv <= rank_tol * max(scale, 1e-300):
                deficient = True
                continue
            Rm[kk, kk] = nv
            acc = 0j
            for m in range(n_meas):
                Qm[kk, m] = v[m] / nv
                acc += np.conj(Qm[kk, m]) * y[m]
            qy[kk] = acc
        seeds[n_paths] = seed
        mbars[n_paths] = m_bar
        ends[n_paths] = k
        if deficient:
            flags |= FLAG_DEFICIENT
            A = np.empty((n_meas, k), dtype=np.complex128)
            for a in range(k):
                A[:, a] = phi[:, support[a]]
            coef = np.linalg.lstsq(A, y, rcond=-1.0)[0]
            R = y - A @ coef
        else:
            coef = np.zeros(k, dtype=np.complex128)
            for a in range(k - 1, -1, -1):
                acc = qy[a]
                for b in range(a + 1, k):
                    acc -= Rm[a, b] * coef[b]
                coef[a] = acc / Rm[a, a]
            R = y.copy()
            for a in range(k):
                for m in range(n_meas):
                    R[m] -= qy[a] * Qm[a, m]
        n_paths += 1
        history[n_paths] = np.sqrt(np.sum(np.abs(R) ** 2))
    return (support[:k].copy(), coef, seeds[:n_paths].copy(), mbars[:n_paths].copy(),
            ends[:n_paths].copy(), history[:n_paths + 1].copy(), steps_total, flags)


IMPLEMENTATIONS = {
    "numba": {
        "near_field_matrix": _near_field_matrix_nb,
        "pd_walk": _pd_walk_nb,
        "masked_argmax": _masked_argmax_nb,
        "greedy": _greedy_nb,
    },
    "numpy": {
        "near_field_matrix": _near_field_matrix_np,
        "pd_walk": _pd_walk_np,
        "masked_argmax": _masked_argmax_np,
        "greedy": None,
    },
}



def use_backend(name: str) -> str:
    """Rebind the public kernels to ``name`` ("numba" or "numpy"); returns the previous backend."""
    global BACKEND, near_field_matrix, pd_walk, masked_argmax, greedy
    if name not in IMPLEMENTATIONS:
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    prev = BACKEND
    impl = IMPLEMENTATIONS[name]
    near_field_matrix = impl["near_field_matrix"]
    pd_walk = impl["pd_walk"]
    masked_argmax = impl["masked_argmax"]
    greedy = impl["greedy"]
    BACKEND = name
    return prev


BACKEND = ""
use_backend("numba" if USE_NUMBA else "numpy")
