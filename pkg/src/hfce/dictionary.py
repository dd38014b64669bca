"""Angular, polar and joint angular-polar transform dictionaries."""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .geometry import ArrayConfig, far_steering, near_steering

# innermost broadside ring must clear this multiple of the aperture
REACTIVE_MARGIN = 1.2


@dataclass(frozen=True)
class AtomMeta:
    angle: float
    distance: float  # np.inf for far-field atoms
    submatrix: int  # 0 = angular block, 1..S = polar rings


@dataclass(frozen=True, eq=False)
class Dictionary:
    """Column dictionary with per-atom metadata.

    ``columns`` is N x M; blocks of N consecutive columns share a sampling
    ring and follow the angle grid in increasing order.
    """

    columns: np.ndarray
    meta: tuple
    n_rings: int
    rho: float | None
    first_block: int  # submatrix index of the first block (0 if angular block present)

    @property
    def n_antennas(self) -> int:
        return self.columns.shape[0]

    @property
    def n_atoms(self) -> int:
        return self.columns.shape[1]

    @property
    def n_blocks(self) -> int:
        return self.n_atoms // self.n_antennas

    @cached_property
    def atoms(self) -> np.ndarray:
        """Row-per-atom contiguous copy used by the compiled kernels."""
        return np.ascontiguousarray(self.columns.T)

    @cached_property
    def angles(self) -> np.ndarray:
        return np.array([m.angle for m in self.meta])

    @cached_property
    def distances(self) -> np.ndarray:
        return np.array([m.distance for m in self.meta])

    @cached_property
    def submatrices(self) -> np.ndarray:
        return np.array([m.submatrix for m in self.meta])

    def block(self, b: int) -> np.ndarray:
        n = self.n_antennas
        return self.columns[:, b * n:(b + 1) * n]

    def dump(self, path) -> None:
        """Write raw complex128 columns (column-major) plus a JSON sidecar."""
        path = Path(path)
        np.asfortranarray(self.columns).T.tofile(path)
        side = {"shape": list(self.columns.shape), "dtype": "complex128", "order": "F",
                "n_rings": self.n_rings, "rho": self.rho, "first_block": self.first_block,
                "meta": [[m.angle, None if np.isinf(m.distance) else m.distance, m.submatrix]
                         for m in self.meta]}
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(side))

    @classmethod
    def load(cls, path) -> "Dictionary":
        path = Path(path)
        side = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        n, m = side["shape"]
        cols = np.fromfile(path, dtype=np.complex128).reshape(m, n).T.copy()
        meta = tuple(AtomMeta(a, np.inf if d is None else d, s) for a, d, s in side["meta"])
        return cls(cols, meta, side["n_rings"], side["rho"], side["first_block"])


def angle_grid(cfg: ArrayConfig) -> np.ndarray:
    N = cfg.n_antennas
    n = np.arange(1, N + 1)
    return np.arcsin((2 * n - 1 - N) / N)


def ring_distances(cfg: ArrayConfig, s: int, rho: float) -> np.ndarray:
    """Sampled distances of ring ``s``: (1 - sin^2 theta_n) / r = 2 s rho."""
    sin2 = np.sin(angle_grid(cfg)) ** 2
    return (1 - sin2) / (2 * s * rho)


def default_rho(n_rings: int, r_min: float = 30.0) -> float:
    """Inverse-distance step that puts the innermost broadside ring at ``r_min``."""
    return 1.0 / (2 * n_rings * r_min)


def _check_rings(cfg: ArrayConfig, S: int, rho: float) -> None:
    if S < 1:
        raise ValueError("number of rings must be >= 1")
    if rho <= 0:
        raise ValueError("rho must be positive")
    innermost = 1.0 / (2 * S * rho)
    if innermost < REACTIVE_MARGIN * cfg.aperture:
        raise ValueError(f"innermost ring at {innermost:.3g} m lies inside the reactive zone "
                         f"(< {REACTIVE_MARGIN} x aperture {cfg.aperture:.3g} m); decrease rho")


def build_angular(cfg: ArrayConfig) -> Dictionary:
    th = angle_grid(cfg)
    meta = tuple(AtomMeta(float(t), np.inf, 0) for t in th)
    return Dictionary(far_steering(cfg, th), meta, 0, None, 0)


def _polar_blocks(cfg, S, rho):
    th = angle_grid(cfg)
    cols, meta = [], []
    for s in range(1, S + 1):
        r = ring_distances(cfg, s, rho)
        cols.append(near_steering(cfg, th, r))
        meta.extend(AtomMeta(float(t), float(d), s) for t, d in zip(th, r))
    return cols, meta


def build_polar(cfg: ArrayConfig, S: int, rho: float) -> Dictionary:
    _check_rings(cfg, S, rho)
    cols, meta = _polar_blocks(cfg, S, rho)
    return Dictionary(np.hstack(cols), tuple(meta), S, rho, 1)


def build_joint(cfg: ArrayConfig, S: int, rho: float | None = None) -> Dictionary:
    ang = build_angular(cfg)
    if S == 0:
        return ang
    if rho is None:
        rho = default_rho(S)
    _check_rings(cfg, S, rho)
    cols, meta = _polar_blocks(cfg, S, rho)
    return Dictionary(np.hstack([ang.columns] + cols), ang.meta + tuple(meta), S, rho, 0)


def coherence(d: Dictionary, i: int, j: int) -> float:
    m = d.n_atoms
    if not (0 <= i < m and 0 <= j < m):
        raise IndexError(f"atom index out of range for dictionary with {m} atoms")
    if i == j:
        return 1.0
    return float(abs(np.vdot(d.columns[:, i], d.columns[:, j])))


def transform_magnitude(d: Dictionary, h) -> np.ndarray:
    h = np.asarray(h)
    if h.shape != (d.n_antennas,):
        raise ValueError(f"expected a length-{d.n_antennas} vector, got shape {h.shape}")
    return np.abs(d.columns.conj().T @ h)
