"""Random analog beamforming, pilot observation and noise pre-whitening."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .geometry import ArrayConfig

MAX_REGENERATIONS = 16


@dataclass(frozen=True, eq=False)
class BeamformingCodebook:
    slots: np.ndarray  # (Q, N_RF, N), entries +-1/sqrt(N)

    @property
    def n_slots(self) -> int:
        return self.slots.shape[0]

    @property
    def n_rf(self) -> int:
        return self.slots.shape[1]

    @property
    def n_antennas(self) -> int:
        return self.slots.shape[2]

    @property
    def n_measurements(self) -> int:
        return self.n_slots * self.n_rf

    @cached_property
    def stacked(self) -> np.ndarray:
        return self.slots.reshape(self.n_measurements, self.n_antennas)

    def slot_grams(self) -> np.ndarray:
        """W_q W_q^H for every slot, shape (Q, N_RF, N_RF)."""
        return np.einsum("qan,qbn->qab", self.slots, self.slots.conj())


@dataclass(frozen=True, eq=False)
class PilotObservation:
    y: np.ndarray
    sigma2: float
    codebook: BeamformingCodebook
    pilot_symbol: complex = 1.0


@dataclass(frozen=True, eq=False)
class Whitener:
    """Block Cholesky factor D with D D^H = blockdiag(W_q W_q^H)."""

    blocks: np.ndarray  # (Q, N_RF, N_RF), lower triangular

    @property
    def d_factor(self) -> np.ndarray:
        return sla.block_diag(*self.blocks)

    def apply_inverse(self, x: np.ndarray) -> np.ndarray:
        """D^{-1} x for a stacked vector or (Q*N_RF, k) matrix, by batched block solves."""
        q, k, _ = self.blocks.shape
        x = np.asarray(x)
        vec = x.ndim == 1
        out = np.linalg.solve(self.blocks, x.reshape(q, k, -1)).reshape(q * k, -1)
        return out[:, 0] if vec else out


def gen_beamforming(rng: np.random.Generator, Q: int, N_RF: int, cfg: ArrayConfig) -> BeamformingCodebook:
    N = cfg.n_antennas
    if Q < 1:
        raise ValueError("Q must be >= 1")
    if not 1 <= N_RF < N:
        raise ValueError(f"need 1 <= N_RF < N, got N_RF={N_RF}, N={N}")
    slots = np.empty((Q, N_RF, N))
    for q in range(Q):
        for _ in range(MAX_REGENERATIONS):
            w = rng.choice((-1.0, 1.0), size=(N_RF, N)) / np.sqrt(N)
            if np.linalg.matrix_rank(w) == N_RF:
                slots[q] = w
                break
        else:
            raise RuntimeError(f"could not draw a full-rank beamforming slot in {MAX_REGENERATIONS} attempts")
    return BeamformingCodebook(slots.astype(complex))


def observe(rng: np.random.Generator, h, cb: BeamformingCodebook, sigma2: float, x: complex = 1.0) -> PilotObservation:
    h = np.asarray(h)
    if h.shape != (cb.n_antennas,):
        raise ValueError(f"channel has shape {h.shape}, codebook expects ({cb.n_antennas},)")
    W = cb.stacked
    y = W @ h * x
    if sigma2 > 0:
        n = np.sqrt(sigma2 / 2) * (rng.standard_normal((cb.n_slots, cb.n_antennas))
                                   + 1j * rng.standard_normal((cb.n_slots, cb.n_antennas)))
        y = y + np.einsum("qan,qn->qa", cb.slots, n).reshape(-1)
    return PilotObservation(y, float(sigma2), cb, x)


def build_whitener(cb: BeamformingCodebook) -> Whitener:
    grams = cb.slot_grams()
    try:
        blocks = np.stack([np.linalg.cholesky(g) for g in grams])
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("slot Gram matrix is not positive definite") from exc
    return Whitener(blocks)


def measurement_matrix(cb: BeamformingCodebook, wh: Whitener, columns) -> np.ndarray:
    """Phi = D^{-1} W F for a dictionary (or a raw N x M matrix)."""
    F = getattr(columns, "columns", columns)
    if F.shape[0] != cb.n_antennas:
        raise ValueError("dictionary and codebook disagree on the number of antennas")
    return wh.apply_inverse(cb.stacked) @ F


def snr_to_sigma2(h, snr_db: float, x: complex = 1.0) -> float:
    """Noise variance for a per-antenna SNR of ||h||^2 |x|^2 / (N sigma^2)."""
    h = np.asarray(h)
    p = float(np.vdot(h, h).real)
    if p <= 0:
        raise ValueError("cannot set SNR for an all-zero channel")
    return p * abs(x) ** 2 / (h.size * 10 ** (snr_db / 10))
