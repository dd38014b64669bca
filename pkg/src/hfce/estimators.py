"""PD-OMP and baseline channel estimators.

All greedy estimators work on the whitened problem ``D^{-1} y = Phi h_J + w``
with ``Phi = D^{-1} W F``. ``Phi`` is rebuilt from the observation unless a
precomputed one is passed in, which the experiment harness does once per
trial and then slices for the single-domain baselines.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import _kernels
from .dictionary import Dictionary
from .measurement import PilotObservation, Whitener, build_whitener, measurement_matrix

NMSE_FLOOR_DB = -200.0
_RESIDUAL_TOL = 1e-12


@dataclass(frozen=True)
class PathSupport:
    seed: int
    m_bar: float
    members: tuple


@dataclass(frozen=True)
class SupportSet:
    indices: tuple = ()
    per_path: tuple = ()


@dataclass
class Estimate:
    sparse_coeffs: np.ndarray
    spatial: np.ndarray
    support: SupportSet
    per_path_params: list = field(default_factory=list)  # (theta, r or inf, gain)
    iterations: int = 0
    residual_norm: float = 0.0
    residual_history: list = field(default_factory=list)
    flags: set = field(default_factory=set)

    def to_json(self, truth=None) -> str:
        out = {
            "support": [int(i) for i in self.support.indices],
            "paths": [{"theta": float(t), "r": None if np.isinf(r) else float(r),
                       "gain_re": complex(g).real, "gain_im": complex(g).imag}
                      for t, r, g in self.per_path_params],
            "iterations": int(self.iterations),
            "flags": sorted(self.flags),
        }
        if truth is not None:
            out["nmse_db"] = nmse(self, truth)
        return json.dumps(out)


@dataclass(frozen=True)
class PdOmpConfig:
    n_paths: int
    alpha: float = 0.7
    n_rings: int = 5
    rho: float | None = None

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")


class _Problem:
    """Whitened measurements and operator for one observation."""

    def __init__(self, obs: PilotObservation, columns: np.ndarray, phi=None, whitener: Whitener | None = None):
        wh = whitener or build_whitener(obs.codebook)
        self.phi = measurement_matrix(obs.codebook, wh, columns) if phi is None else phi
        if self.phi.shape[1] != columns.shape[1]:
            raise ValueError("measurement operator and dictionary disagree on the number of atoms")
        # x is folded into the operator scale so the coefficients describe h itself
        self.yw = wh.apply_inverse(obs.y) / obs.pilot_symbol
        self.n_meas = self.phi.shape[0]


def _lstsq(A, b):
    """Minimum-norm least squares by pivoted QR; also reports rank deficiency."""
    coef, _, rank, _ = sla.lstsq(A, b, lapack_driver="gelsy", check_finite=False)
    return coef, rank < A.shape[1]


class _GrowingQR:
    """Least-squares fit on a column set that only grows.

    Keeps a thin QR factorisation updated by block Gram-Schmidt (two passes).
    Once an added column is numerically dependent the fit switches to the
    pivoted minimum-norm solver for the rest of the run.
    """

    RANK_TOL = 1e-9

    def __init__(self, A, y):
        self.A = A
        self.y = y
        self.cols: list[int] = []
        self.Q = np.empty((A.shape[0], 0), dtype=complex)
        self.R = np.empty((0, 0), dtype=complex)
        self.qy = np.empty(0, dtype=complex)
        self.deficient = False

    def extend(self, idx):
        self.cols.extend(idx)
        if self.deficient:
            return
        B = self.A[:, idx]
        k = self.Q.shape[1]
        C = np.zeros((k, len(idx)), dtype=complex)
        if k:
            for _ in range(2):
                D = self.Q.conj().T @ B
                B = B - self.Q @ D
                C += D
        Qb, Rb = np.linalg.qr(B)
        scale = np.linalg.norm(self.A[:, idx], axis=0)
        if np.any(np.abs(np.diag(Rb)) <= self.RANK_TOL * np.maximum(scale, 1e-300)):
            self.deficient = True
            return
        R = np.zeros((k + len(idx), k + len(idx)), dtype=complex)
        R[:k, :k] = self.R
        R[:k, k:] = C
        R[k:, k:] = Rb
        self.R = R
        self.Q = np.hstack([self.Q, Qb])
        self.qy = np.concatenate([self.qy, Qb.conj().T @ self.y])

    def solve(self):
        """Return (coefficients, residual vector)."""
        if self.deficient:
            A = self.A[:, self.cols]
            coef, _ = _lstsq(A, self.y)
            return coef, self.y - A @ coef
        coef = sla.solve_triangular(self.R, self.qy, check_finite=False)
        return coef, self.y - self.Q @ self.qy


def pd_range(d: Dictionary, seed_idx: int, m_bar: float, alpha: float, return_steps: bool = False,
             force_seed: bool = True):
    """Atoms whose coherence with ``seed_idx`` reaches ``alpha / m_bar``.

    Each block of ``d`` is walked outward from the column sharing the seed's
    angle index; the walk in a block stops at the first offset where both
    directions fail. The seed itself is part of the range unless
    ``force_seed`` is off, in which case ``m_bar < alpha`` gives an empty set.
    """
    if not 0 < m_bar <= 1:
        raise ValueError("m_bar must lie in (0, 1]")
    if not 0 <= seed_idx < d.n_atoms:
        raise IndexError("seed index out of range")
    idx, steps = _kernels.pd_walk(d.atoms, int(seed_idx), d.n_antennas, d.n_blocks, alpha / m_bar)
    if force_seed:
        idx = np.union1d(idx, [seed_idx])
    idx = np.asarray(idx, dtype=np.int64)
    return (idx, int(steps)) if return_steps else idx


def _greedy_py(prob: _Problem, d: Dictionary, n_iter: int, expand, y, warn=True):
    """Reference select / expand / refit loop.

    ``expand(seed, m_bar) -> (indices, steps)`` returns the atoms to add for a
    detection.
    """
    phi = prob.phi
    n_atoms = phi.shape[1]
    in_support = np.zeros(n_atoms, dtype=np.bool_)
    support: list[int] = []
    per_path = []
    flags = set()
    coef = np.zeros(0, dtype=complex)
    R = y.copy()
    history = [float(np.linalg.norm(R))]
    y_norm = history[0]
    m1 = None
    steps_total = 0
    ls = _GrowingQR(phi, y)
    for _ in range(n_iter):
        if history[-1] <= _RESIDUAL_TOL * max(y_norm, 1e-300) or len(support) >= prob.n_meas - 1:
            break
        c2 = np.abs(R.conj() @ phi) ** 2
        seed = _kernels.masked_argmax(c2, in_support)
        if seed < 0:
            break
        m = float(np.sqrt(c2[seed]))
        if m1 is None:
            m1 = m
        m_bar = min(m / m1, 1.0) if m1 > 0 else 1.0
        members, steps = expand(seed, m_bar)
        steps_total += steps
        new = [int(i) for i in members if not in_support[i] and i != seed]
        room = prob.n_meas - 1 - len(support) - 1
        if len(new) > room:
            mu = np.abs(d.columns[:, new].conj().T @ d.columns[:, seed])
            order = np.argsort(-mu, kind="stable")
            new = [new[i] for i in order[:max(room, 0)]]
            flags.add("support_overflow")
            _overflow_warning(warn)
        added = [seed] + new
        for i in added:
            in_support[i] = True
        support.extend(added)
        per_path.append(PathSupport(seed, m_bar, tuple(sorted(added))))
        ls.extend(added)
        coef, R = ls.solve()
        if ls.deficient:
            flags.add("rank_deficient")
        history.append(float(np.linalg.norm(R)))
    return support, coef, per_path, flags, history, steps_total


def _overflow_warning(warn):
    if warn:
        warnings.warn("support growth truncated to keep the least-squares fit overdetermined",
                      RuntimeWarning, stacklevel=4)


def _greedy(prob: _Problem, d: Dictionary, n_iter: int, mode: str = "none", alpha: float = 1.0,
            window: int = 0, target=None, warn=True):
    """Shared select / expand / refit loop.

    ``mode`` is "none" (plain OMP), "pd" (power-diffusion range with threshold
    ``alpha``) or "window" (``window`` neighbours on each side). Returns
    (support, coefficients, per-path supports, flags, residual history, walk steps).
    """
    y = prob.yw if target is None else target
    if _kernels.greedy is None:
        if mode == "pd":
            def expand(seed, m_bar):
                return pd_range(d, seed, m_bar, alpha, return_steps=True)
        elif mode == "window":
            expand = _window_expand(d.n_atoms, window)
        else:
            expand = _no_expand
        return _greedy_py(prob, d, n_iter, expand, y, warn)
    code = {"none": _kernels.EXPAND_NONE, "pd": _kernels.EXPAND_PD, "window": _kernels.EXPAND_WINDOW}[mode]
    phi = np.ascontiguousarray(prob.phi)
    sup, coef, seeds, mbars, ends, hist, steps, fl = _kernels.greedy(
        phi, np.ascontiguousarray(y, dtype=complex), d.atoms, d.n_antennas, d.n_blocks, int(n_iter), code,
        float(alpha), int(window), _RESIDUAL_TOL, _GrowingQR.RANK_TOL)
    support = [int(i) for i in sup]
    per_path = []
    lo = 0
    for sd, mb, hi in zip(seeds, mbars, ends):
        per_path.append(PathSupport(int(sd), float(mb), tuple(sorted(support[lo:hi]))))
        lo = hi
    flags = set()
    if fl & _kernels.FLAG_OVERFLOW:
        flags.add("support_overflow")
        _overflow_warning(warn)
    if fl & _kernels.FLAG_DEFICIENT:
        flags.add("rank_deficient")
    return support, coef, per_path, flags, [float(x) for x in hist], int(steps)


def _finish(d_columns, meta_angles, meta_dists, support, coef, per_path, flags, history, iterations):
    support_arr = np.asarray(support, dtype=np.int64)
    spatial = d_columns[:, support_arr] @ coef if support else np.zeros(d_columns.shape[0], dtype=complex)
    pos = {i: k for k, i in enumerate(support)}
    params = [(float(meta_angles[p.seed]), float(meta_dists[p.seed]), complex(coef[pos[p.seed]]))
              for p in per_path]
    return Estimate(coef, spatial, SupportSet(tuple(support), tuple(per_path)), params,
                    iterations, history[-1], history, flags)


def _run_omp(obs, d: Dictionary, n_iter, mode="none", alpha=1.0, phi=None, whitener=None, count_steps=False,
             warn=True):
    prob = _Problem(obs, d.columns, phi, whitener)
    support, coef, per_path, flags, history, steps = _greedy(prob, d, n_iter, mode, alpha, warn=warn)
    iterations = steps if count_steps else len(per_path)
    return _finish(d.columns, d.angles, d.distances, support, coef, per_path, flags, history, iterations)


def _no_expand(seed, m_bar):
    return (seed,), 0


def pd_omp(obs: PilotObservation, d: Dictionary, cfg: PdOmpConfig, phi=None, whitener=None,
           warn: bool = True) -> Estimate:
    """Power-diffusion-aware OMP.

    ``Estimate.iterations`` counts the executed steps of the power-diffusion
    range walk, summed over detected paths.
    """
    return _run_omp(obs, d, cfg.n_paths, "pd", cfg.alpha, phi, whitener, count_steps=True, warn=warn)


def npd_omp(obs: PilotObservation, d: Dictionary, L: int, phi=None, whitener=None) -> Estimate:
    return _run_omp(obs, d, L, phi=phi, whitener=whitener)


def far_omp(obs: PilotObservation, d_angular: Dictionary, L: int, phi=None, whitener=None) -> Estimate:
    return _run_omp(obs, d_angular, L, phi=phi, whitener=whitener)


def near_omp(obs: PilotObservation, d_polar: Dictionary, L: int, phi=None, whitener=None) -> Estimate:
    return _run_omp(obs, d_polar, L, phi=phi, whitener=whitener)


def _window_expand(n_ant: int, w: int):
    def expand(seed, m_bar):
        lo = max(seed - w, 0)
        hi = min(seed + w, n_ant - 1)
        return tuple(range(lo, hi + 1)), 0
    return expand


def _separate(obs, d_angular, d_polar, L_far, L_near, window, phi_far=None, phi_near=None, whitener=None):
    wh = whitener or build_whitener(obs.codebook)
    far = _Problem(obs, d_angular.columns, phi_far, wh)
    near = _Problem(obs, d_polar.columns, phi_near, wh)
    mode = "none" if window is None else "window"
    s_far, c_far, pp_far, flags, h_far, _ = _greedy(far, d_angular, L_far, mode, window=window or 0)
    target = far.yw - far.phi[:, s_far] @ c_far if s_far else far.yw
    s_near, _, pp_near, flags_n, h_near, _ = _greedy(near, d_polar, L_near, target=target)
    flags |= flags_n
    n_far_atoms = d_angular.n_atoms
    support = list(s_far) + [n_far_atoms + i for i in s_near]
    phi_joint = np.hstack([far.phi, near.phi])
    if support:
        coef, deficient = _lstsq(phi_joint[:, support], far.yw)
        if deficient:
            flags.add("rank_deficient")
        residual = float(np.linalg.norm(far.yw - phi_joint[:, support] @ coef))
    else:
        coef, residual = np.zeros(0, dtype=complex), float(np.linalg.norm(far.yw))
    history = h_far + h_near[1:] + [residual]
    cols = np.hstack([d_angular.columns, d_polar.columns])
    angles = np.concatenate([d_angular.angles, d_polar.angles])
    dists = np.concatenate([d_angular.distances, d_polar.distances])
    pp = list(pp_far) + [PathSupport(p.seed + n_far_atoms, p.m_bar, tuple(i + n_far_atoms for i in p.members))
                         for p in pp_near]
    return _finish(cols, angles, dists, support, coef, pp, flags, history, len(pp))


def hf_omp(obs, d_angular, d_polar, L_far: int, L_near: int, phi_far=None, phi_near=None, whitener=None) -> Estimate:
    """Far-field OMP, then near-field OMP on the remainder, then a joint refit.

    Support indices address the concatenation ``[angular, polar]``.
    """
    return _separate(obs, d_angular, d_polar, L_far, L_near, None, phi_far, phi_near, whitener)


def sd_omp(obs, d_angular, d_polar, L_far: int, L_near: int, window: int = 2,
           phi_far=None, phi_near=None, whitener=None) -> Estimate:
    """:func:`hf_omp` where each far-field detection also pulls in the
    ``window`` neighbouring angular atoms on each side."""
    if window < 0:
        raise ValueError("window must be >= 0")
    return _separate(obs, d_angular, d_polar, L_far, L_near, window, phi_far, phi_near, whitener)


def lmmse(obs: PilotObservation, cov: np.ndarray, sigma2: float | None = None) -> Estimate:
    """Linear MMSE estimate from a channel covariance ``cov``."""
    cb = obs.codebook
    sigma2 = obs.sigma2 if sigma2 is None else sigma2
    W = cb.stacked
    x = obs.pilot_symbol
    C = sla.block_diag(*cb.slot_grams())
    A = abs(x) ** 2 * (W @ cov @ W.conj().T) + sigma2 * C
    flags = set()
    try:
        z = sla.solve(A, obs.y, assume_a="her", check_finite=False)
    except (np.linalg.LinAlgError, sla.LinAlgWarning):
        z = sla.solve(A + 1e-10 * np.eye(A.shape[0]), obs.y, assume_a="her", check_finite=False)
        flags.add("regularized")
    h = np.conj(x) * (cov @ (W.conj().T @ z))
    n = h.size
    return Estimate(h, h, SupportSet(tuple(range(n))), [], 0, float(np.linalg.norm(obs.y - x * W @ h)), [], flags)


def nmse_ratio(est, truth) -> float:
    truth = np.asarray(truth)
    p = float(np.vdot(truth, truth).real)
    if p <= 0:
        raise ValueError("NMSE is undefined for an all-zero channel")
    h = getattr(est, "spatial", est)
    e = h - truth
    return float(np.vdot(e, e).real) / p


def nmse(est, truth) -> float:
    """Per-trial NMSE in dB, floored at -200 dB."""
    r = nmse_ratio(est, truth)
    return max(10 * np.log10(r), NMSE_FLOOR_DB) if r > 0 else NMSE_FLOOR_DB
