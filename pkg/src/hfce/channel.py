"""Hybrid near/far-field multipath channels and random scenario sampling."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .geometry import ArrayConfig, far_steering, near_steering, rayleigh_distance


class FieldType(str, Enum):
    FAR = "far"
    NEAR = "near"


@dataclass(frozen=True)
class PathComponent:
    field_type: FieldType
    gain: complex
    angle: float
    distance: float
    is_los: bool = False

    def __post_init__(self):
        object.__setattr__(self, "field_type", FieldType(self.field_type))
        if self.distance <= 0:
            raise ValueError("path distance must be positive")
        if not -np.pi / 2 < self.angle < np.pi / 2:
            raise ValueError("path angle must lie in (-pi/2, pi/2)")
        if self.is_los and self.gain != 1:
            raise ValueError("a LoS path has unit gain")

    def to_dict(self) -> dict:
        g = complex(self.gain)
        return {"type": self.field_type.value, "gain_re": g.real, "gain_im": g.imag,
                "angle_rad": float(self.angle), "distance_m": float(self.distance),
                "is_los": bool(self.is_los)}

    @classmethod
    def from_dict(cls, d: dict) -> "PathComponent":
        return cls(FieldType(d["type"]), complex(d["gain_re"], d["gain_im"]),
                   float(d["angle_rad"]), float(d["distance_m"]), bool(d.get("is_los", False)))


@dataclass(frozen=True)
class Scenario:
    paths: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "paths", tuple(self.paths))

    @property
    def far_set(self) -> list[int]:
        return [i for i, p in enumerate(self.paths) if p.field_type is FieldType.FAR]

    @property
    def near_set(self) -> list[int]:
        return [i for i, p in enumerate(self.paths) if p.field_type is FieldType.NEAR]

    def __add__(self, other: "Scenario") -> "Scenario":
        return Scenario(self.paths + other.paths)

    def __len__(self):
        return len(self.paths)

    def to_json(self) -> str:
        return json.dumps({"paths": [p.to_dict() for p in self.paths]})

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        return cls(tuple(PathComponent.from_dict(d) for d in json.loads(text)["paths"]))


def synth_path(cfg: ArrayConfig, p: PathComponent) -> np.ndarray:
    if p.field_type is FieldType.FAR:
        return p.gain * far_steering(cfg, p.angle)
    return p.gain * near_steering(cfg, p.angle, p.distance)


def synth_hybrid(cfg: ArrayConfig, s: Scenario) -> np.ndarray:
    h = np.zeros(cfg.n_antennas, dtype=complex)
    for p in s.paths:
        h += synth_path(cfg, p)
    return h


@dataclass(frozen=True)
class ScenarioSampler:
    """Random scatterer geometry.

    ``gamma=None`` labels each path near-field when its sampled distance is
    below the Rayleigh distance; an explicit ``gamma`` makes the first
    ``gamma * n_paths`` paths near-field regardless of distance.
    """

    n_paths: int = 7
    gamma: float | None = None
    angle_range: tuple = (-math.pi / 3, math.pi / 3)
    distance_range: tuple = (30.0, 300.0)
    include_los: bool = False

    def __post_init__(self):
        if self.n_paths < 0:
            raise ValueError("n_paths must be non-negative")
        lo, hi = self.angle_range
        if not -math.pi / 2 < lo < hi < math.pi / 2:
            raise ValueError("angle_range must lie within (-pi/2, pi/2)")
        lo, hi = self.distance_range
        if not 0 < lo < hi:
            raise ValueError("distance_range must satisfy 0 < lo < hi")
        if self.gamma is not None:
            if not 0 <= self.gamma <= 1:
                raise ValueError("gamma must lie in [0, 1]")
            if abs(self.gamma * self.n_paths - round(self.gamma * self.n_paths)) > 1e-9:
                raise ValueError(f"gamma * n_paths must be an integer, got {self.gamma * self.n_paths}")

    @property
    def n_near(self) -> int | None:
        return None if self.gamma is None else int(round(self.gamma * self.n_paths))


def sample_scenario(rng: np.random.Generator, sampler: ScenarioSampler, cfg: ArrayConfig) -> Scenario:
    L = sampler.n_paths
    angles = rng.uniform(*sampler.angle_range, size=L)
    dists = rng.uniform(*sampler.distance_range, size=L)
    gains = (rng.standard_normal(L) + 1j * rng.standard_normal(L)) / np.sqrt(2)
    if sampler.n_near is None:
        near = dists < rayleigh_distance(cfg)
    else:
        near = np.arange(L) < sampler.n_near
    paths = []
    for l in range(L):
        los = sampler.include_los and l == 0
        paths.append(PathComponent(FieldType.NEAR if near[l] else FieldType.FAR,
                                   1.0 + 0j if los else complex(gains[l]),
                                   float(angles[l]), float(dists[l]), los))
    return Scenario(tuple(paths))


def sample_channels(rng: np.random.Generator, sampler: ScenarioSampler, cfg: ArrayConfig, count: int) -> np.ndarray:
    """(count, N) array of independently sampled channel vectors.

    Draws the same distribution as :func:`sample_scenario`, vectorised over
    ``count`` (the random stream is consumed in a different order).
    """
    L = sampler.n_paths
    N = cfg.n_antennas
    if count < 1 or L == 0:
        return np.zeros((max(count, 0), N), dtype=complex)
    angles = rng.uniform(*sampler.angle_range, size=(count, L))
    dists = rng.uniform(*sampler.distance_range, size=(count, L))
    gains = (rng.standard_normal((count, L)) + 1j * rng.standard_normal((count, L))) / np.sqrt(2)
    if sampler.include_los:
        gains[:, 0] = 1.0
    if sampler.n_near is None:
        near = dists < rayleigh_distance(cfg)
    else:
        near = np.broadcast_to(np.arange(L) < sampler.n_near, (count, L))
    th, r, nf = angles.ravel(), dists.ravel(), near.ravel()
    V = np.empty((N, th.size), dtype=complex)
    if nf.any():
        V[:, nf] = near_steering(cfg, th[nf], r[nf])
    if (~nf).any():
        V[:, ~nf] = far_steering(cfg, th[~nf])
    return np.einsum("ncl,cl->cn", V.reshape(N, count, L), gains, optimize=True)
