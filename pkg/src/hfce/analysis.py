"""CRLB chain, power-diffusion-range size approximation and Monte-Carlo checks."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla

from .dictionary import build_joint
from .estimators import pd_range
from .geometry import ArrayConfig, near_steering
from .measurement import build_whitener, gen_beamforming, measurement_matrix


@dataclass
class CrlbReport:
    exact_sparse: float
    bound_sparse: float
    bound_spatial: float
    normalized: float
    sigma_min_fj: float
    eigen_range: tuple
    flags: list = field(default_factory=list)

    def to_json(self) -> str:
        d = asdict(self)
        d["eigen_range"] = list(self.eigen_range)
        # inf is not valid JSON
        return json.dumps({k: (None if isinstance(v, float) and not np.isfinite(v) else v) for k, v in d.items()})


def crlb_sparse_exact(phi_support: np.ndarray, sigma2: float, return_flag: bool = False):
    """sigma^2 Tr((Phi^H Phi)^-1); +inf if the columns are dependent."""
    A = np.asarray(phi_support)
    s = sla.svdvals(A)
    deficient = A.shape[1] > A.shape[0] or s.size == 0 or s[-1] <= s[0] * max(A.shape) * np.finfo(float).eps
    val = np.inf if deficient else float(sigma2 * np.sum(1.0 / s**2))
    return (val, deficient) if return_flag else val


def crlb_bound(sigma2: float, card_gamma: int, Q: int, N_RF: int, N: int) -> float:
    """Expectation bound sigma^2 card / (1 + card Q N_RF / N)."""
    return sigma2 * card_gamma / (1 + card_gamma * Q * N_RF / N)


def sigma_min(columns) -> float:
    F = getattr(columns, "columns", columns)
    return float(sla.svdvals(F)[min(F.shape) - 1])


def crlb_spatial(bound_sparse: float, dict_joint, smin: float | None = None) -> float:
    if smin is None:
        smin = sigma_min(dict_joint)
    return bound_sparse * smin**2


def normalized_crlb(sigma2, card_gamma, Q, N_RF, N, h_norm2) -> float:
    if h_norm2 <= 0:
        raise ValueError("channel power must be positive")
    return crlb_bound(sigma2, card_gamma, Q, N_RF, N) / h_norm2


def gershgorin_interval(gram: np.ndarray) -> tuple:
    """Interval holding all eigenvalues of a Hermitian Gram matrix.

    Uses the max off-diagonal coherence so that for unit-norm columns it is
    [max(1 - k mu, 0), 1 + k mu].
    """
    k = gram.shape[0]
    diag = np.real(np.diag(gram))
    off = np.abs(gram - np.diag(np.diag(gram)))
    mu = float(off.max()) if k > 1 else 0.0
    return max(float(diag.min()) - k * mu, 0.0), float(diag.max()) + k * mu


def crlb_report(phi_support, sigma2, Q, N_RF, h_norm2, dict_joint, smin=None) -> CrlbReport:
    A = np.asarray(phi_support)
    k = A.shape[1]
    N = dict_joint.n_antennas
    exact, bad = crlb_sparse_exact(A, sigma2, return_flag=True)
    gram = A.conj().T @ A
    lo, hi = gershgorin_interval(gram)
    # Tr(G^-1) = sum 1/lambda >= k / lambda_max
    bound = sigma2 * k / hi
    smin = sigma_min(dict_joint) if smin is None else smin
    return CrlbReport(exact, bound, crlb_spatial(bound, dict_joint, smin),
                      normalized_crlb(sigma2, k, Q, N_RF, N, h_norm2), smin, (lo, hi),
                      ["rank_deficient"] if bad else [])


# -- power-diffusion range size --------------------------------------------


def mu_ring(cfg: ArrayConfig, s: int, rho: float) -> float:
    """Fresnel-approximate coherence between same-direction atoms s rings apart."""
    if s == 0:
        return 1.0
    N = cfg.n_antennas
    n = np.arange(N) - (N - 1) / 2
    ph = cfg.wavenumber * n**2 * cfg.spacing**2 * s * rho
    return float(abs(np.exp(1j * ph).sum()) / N)


def pd_range_size_approx(m_bar: float, alpha: float, S: int, s0: int, cfg: ArrayConfig, rho: float) -> float:
    """Rectangle approximation of card(Gamma_l); ``s0`` is the seed's submatrix index plus one."""
    if not 1 <= s0 <= S + 1:
        raise ValueError("s0 must lie in [1, S+1]")
    total = 0.0
    for s in range(1 - s0, S - s0 + 2):
        mu = mu_ring(cfg, s, rho)
        if m_bar * mu - alpha >= 0:
            total += 1.0 / mu**2
    return total


# -- Monte-Carlo checks ----------------------------------------------------


def verify_lemma1(cfg: ArrayConfig, submatrix: np.ndarray, test_paths) -> dict:
    """Transform energy sum_n |b_n^H b_p|^2 of each (theta, r) path on one ring."""
    th = np.array([p[0] for p in test_paths], dtype=float)
    r = np.array([p[1] for p in test_paths], dtype=float)
    B = near_steering(cfg, th, r)
    energy = np.sum(np.abs(submatrix.conj().T @ B) ** 2, axis=0)
    return {"energy": energy.tolist(), "mean": float(energy.mean()),
            "min": float(energy.min()), "max": float(energy.max())}


def random_incoverage_paths(rng, cfg: ArrayConfig, count: int, S: int, rho: float,
                            angle_range=(-np.pi / 3, np.pi / 3), r_max: float = 300.0):
    """Near paths between the innermost ring and ``r_max`` at their angle."""
    out = []
    for _ in range(count):
        t = rng.uniform(*angle_range)
        r_in = np.cos(t) ** 2 / (2 * S * rho)
        out.append((t, rng.uniform(r_in, max(r_max, r_in * 1.01))))
    return out


def verify_lemma3(cfg: ArrayConfig, Q: int, N_RF: int, n_codebooks: int, n_pairs: int, rng,
                  S: int = 5, rho: float | None = None) -> dict:
    """Mean |phi_i^H phi_j| over random codebooks and distinct column pairs of Phi."""
    if n_codebooks < 1 or n_pairs < 1:
        raise ValueError("counts must be >= 1")
    d = build_joint(cfg, S, rho)
    M = d.n_atoms
    vals = []
    vmax = 0.0
    for _ in range(n_codebooks):
        cb = gen_beamforming(rng, Q, N_RF, cfg)
        wh = build_whitener(cb)
        i = rng.integers(0, M, n_pairs)
        j = (i + rng.integers(1, M, n_pairs)) % M  # never equal to i
        Pi = measurement_matrix(cb, wh, d.columns[:, i])
        Pj = measurement_matrix(cb, wh, d.columns[:, j])
        c = np.abs(np.sum(Pi.conj() * Pj, axis=0))
        vals.append(c)
        vmax = max(vmax, float(c.max()))
    vals = np.concatenate(vals)
    return {"mean": float(vals.mean()), "bound": Q * N_RF / cfg.n_antennas,
            "empirical_max": vmax, "samples": int(vals.size)}


def verify_all(seed: int = 0) -> dict:
    """Quick numerical verification report used by ``hfce verify``."""
    rng = np.random.default_rng(seed)
    cfg = ArrayConfig(200, 0.01)
    S = 5
    d = build_joint(cfg, S)
    out = {}
    paths = random_incoverage_paths(rng, cfg, 100, S, d.rho)
    out["lemma1"] = verify_lemma1(cfg, d.block(1), paths)
    out["lemma1"].pop("energy")
    out["lemma3"] = verify_lemma3(cfg, 10, 10, 20, 200, rng, S, d.rho)
    mid = cfg.n_antennas // 2
    exact = abs(np.vdot(d.columns[:, mid], d.columns[:, cfg.n_antennas + mid]))
    out["mu_ring"] = {"approx": mu_ring(cfg, 1, d.rho), "exact": float(exact)}
    approx = pd_range_size_approx(1.0, 0.5, S, 1, cfg, d.rho)
    out["prop1"] = {"approx": approx, "actual": int(pd_range(d, mid, 1.0, 0.5).size)}
    A = rng.standard_normal((100, 20)) + 1j * rng.standard_normal((100, 20))
    ev = np.linalg.eigvalsh(A.conj().T @ A)
    out["trace_identity"] = {"trace": crlb_sparse_exact(A, 1.0), "eig_sum": float(np.sum(1 / ev))}
    out["checks"] = {
        "lemma1": 0.95 <= out["lemma1"]["mean"] <= 1.05,
        "lemma3": out["lemma3"]["mean"] < out["lemma3"]["bound"],
        "mu_ring": abs(out["mu_ring"]["approx"] - exact) <= 0.02 * exact,
        "prop1": 0.5 * out["prop1"]["actual"] <= approx <= 2 * out["prop1"]["actual"],
        "trace_identity": np.isclose(out["trace_identity"]["trace"], out["trace_identity"]["eig_sum"], rtol=1e-8),
    }
    out["checks"] = {k: bool(v) for k, v in out["checks"].items()}
    return out


__all__ = ["CrlbReport", "crlb_sparse_exact", "crlb_bound", "crlb_spatial", "normalized_crlb",
           "crlb_report", "gershgorin_interval", "sigma_min", "mu_ring", "pd_range_size_approx",
           "verify_lemma1", "verify_lemma3", "random_incoverage_paths", "verify_all"]
