"""Linear-array geometry and far/near-field steering vectors."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class ArrayConfig:
    """Uniform linear array centred at the origin along the y-axis.

    ``spacing`` defaults to half a wavelength.
    """

    n_antennas: int
    wavelength: float
    spacing: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.spacing is None:
            object.__setattr__(self, "spacing", self.wavelength / 2)
        if int(self.n_antennas) != self.n_antennas or self.n_antennas < 2:
            raise ValueError(f"n_antennas must be an integer >= 2, got {self.n_antennas}")
        if self.wavelength <= 0:
            raise ValueError("wavelength must be positive")
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")
        object.__setattr__(self, "n_antennas", int(self.n_antennas))

    @classmethod
    def from_frequency(cls, n_antennas: int, freq_hz: float, spacing: float | None = None):
        return cls(n_antennas, SPEED_OF_LIGHT / freq_hz, spacing)

    @property
    def aperture(self) -> float:
        return (self.n_antennas - 1) * self.spacing

    @property
    def wavenumber(self) -> float:
        return 2 * np.pi / self.wavelength


def element_offsets(cfg: ArrayConfig) -> np.ndarray:
    """Centred element index t_n = (2n - N + 1) / 2 for n = 0..N-1."""
    n = np.arange(cfg.n_antennas)
    return (2 * n - cfg.n_antennas + 1) / 2


def element_positions(cfg: ArrayConfig) -> np.ndarray:
    """(N, 2) array of (x, y) element coordinates in meters."""
    pos = np.zeros((cfg.n_antennas, 2))
    pos[:, 1] = element_offsets(cfg) * cfg.spacing
    return pos


def far_steering(cfg: ArrayConfig, theta) -> np.ndarray:
    """Far-field steering vector(s) a(theta).

    A scalar ``theta`` gives a length-N vector; an array of angles gives an
    (N, len(theta)) matrix with one steering vector per column.
    """
    theta = np.asarray(theta, dtype=float)
    n = np.arange(cfg.n_antennas)
    phase = (2 * np.pi * cfg.spacing / cfg.wavelength) * np.multiply.outer(n, np.sin(np.atleast_1d(theta)))
    out = np.exp(1j * phase) / np.sqrt(cfg.n_antennas)
    return out[:, 0] if theta.ndim == 0 else out


def near_steering(cfg: ArrayConfig, theta, r) -> np.ndarray:
    """Near-field steering vector(s) b(theta, r) using exact element distances.

    Broadcasts like :func:`far_steering`; ``theta`` and ``r`` must have matching
    shapes.
    """
    theta = np.asarray(theta, dtype=float)
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("distance must be positive")
    th, rr = np.broadcast_arrays(np.atleast_1d(theta), np.atleast_1d(r))
    y = element_offsets(cfg) * cfg.spacing
    out = _kernels.near_field_matrix(y, np.ascontiguousarray(th, dtype=float),
                                     np.ascontiguousarray(rr, dtype=float), cfg.wavenumber)
    return out[:, 0] if theta.ndim == 0 and r.ndim == 0 else out


def rayleigh_distance(cfg: ArrayConfig) -> float:
    return 2 * cfg.aperture**2 / cfg.wavelength
