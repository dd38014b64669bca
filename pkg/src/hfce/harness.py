"""Seeded Monte-Carlo experiment engine, result tables and the scaling probe.

Random streams: every trial ``t`` draws its scenario, codebook and noise from
``SeedSequence(seed, spawn_key=(stream, t[, point]))``, so results depend only
on the seed and never on the number of worker threads. Sweeps over SNR or
alpha reuse the same scenario, codebook and unit noise at every point.
"""
from __future__ import annotations

import csv
import io
import json
import os
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .analysis import normalized_crlb
from .channel import ScenarioSampler, sample_channels, sample_scenario, synth_hybrid
from .dictionary import Dictionary, build_angular, build_joint, build_polar, default_rho
from .estimators import (PdOmpConfig, far_omp, hf_omp, lmmse, near_omp, nmse_ratio, npd_omp,
                         pd_omp, sd_omp)
from .geometry import ArrayConfig
from .measurement import build_whitener, gen_beamforming, measurement_matrix, observe, snr_to_sigma2

CAMPAIGNS = ("nmse_vs_snr", "nmse_vs_pilot", "nmse_vs_alpha", "nmse_vs_gamma",
             "joint_vs_polar", "iterations_vs_alpha")
SWEEP_AXIS = {"nmse_vs_snr": "snr_db", "joint_vs_polar": "snr_db", "nmse_vs_pilot": "Q",
              "nmse_vs_alpha": "alpha", "iterations_vs_alpha": "alpha", "nmse_vs_gamma": "gamma"}
ESTIMATORS = ("pd_omp", "npd_omp", "far_omp", "near_omp", "hf_omp", "sd_omp", "lmmse")
DEFAULT_ALPHA = 0.7

_STREAM_SCENARIO, _STREAM_CODEBOOK, _STREAM_NOISE, _STREAM_COVARIANCE = range(4)

CSV_COLUMNS = ("sweep_value", "estimator", "mean_nmse_db", "std_nmse_db", "mean_db_nmse", "mean_noi",
               "crlb_db", "alpha", "trial_count", "excluded")


# -- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class EstimatorSpec:
    """One estimator column of a campaign.

    ``alpha`` is a number or a grid; with a grid the alpha minimising mean
    NMSE is chosen per sweep point. ``domain`` (pd_omp only) is "joint" or
    "polar"; ``S`` overrides the dictionary ring count for this estimator.
    ``split`` is the L_far/L_near policy of hf_omp and sd_omp: "oracle" uses
    the true per-scenario counts, a number in [0, 1] fixes the near fraction.
    """

    name: str
    label: str | None = None
    alpha: object = None
    window: int = 2
    domain: str = "joint"
    S: int | None = None
    split: object = "oracle"

    def __post_init__(self):
        if self.name not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.name!r}; choose from {ESTIMATORS}")
        if self.domain not in ("joint", "polar"):
            raise ValueError("domain must be 'joint' or 'polar'")
        if self.domain == "polar" and self.name != "pd_omp":
            raise ValueError("domain='polar' applies to pd_omp only")
        if self.split != "oracle" and not 0 <= float(self.split) <= 1:
            raise ValueError("split must be 'oracle' or a near fraction in [0, 1]")

    @property
    def key(self) -> str:
        if self.label:
            return self.label
        if self.name == "pd_omp" and (self.domain != "joint" or self.S is not None):
            return f"pd_omp[{self.domain},S={self.S}]"
        return self.name

    def alphas(self) -> tuple:
        a = DEFAULT_ALPHA if self.alpha is None else self.alpha
        return tuple(float(x) for x in np.atleast_1d(a))


@dataclass(frozen=True)
class ExperimentConfig:
    campaign: str
    array: dict = field(default_factory=lambda: {"n_antennas": 200, "wavelength": 0.01})
    dictionary: dict = field(default_factory=lambda: {"S": 5, "rho": None})
    pilot: dict = field(default_factory=lambda: {"Q": 10, "N_RF": 10})
    scenario: dict = field(default_factory=lambda: {"n_paths": 10})
    estimators: tuple = ()
    sweep: tuple = ()
    trials: int = 100
    seed: int = 0
    snr_db: float = 10.0
    covariance_draws: int = 10_000

    def __post_init__(self):
        if self.campaign not in CAMPAIGNS:
            raise ValueError(f"unknown campaign {self.campaign!r}; choose from {CAMPAIGNS}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if len(self.sweep) == 0:
            raise ValueError("sweep must be non-empty")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        ests = tuple(e if isinstance(e, EstimatorSpec) else EstimatorSpec(**e) for e in self.estimators)
        if not ests:
            raise ValueError("at least one estimator is required")
        keys = [e.key for e in ests]
        if len(set(keys)) != len(keys):
            raise ValueError(f"estimator labels must be unique, got {keys}")
        object.__setattr__(self, "estimators", ests)
        object.__setattr__(self, "sweep", tuple(float(v) for v in self.sweep))
        object.__setattr__(self, "seed", int(self.seed))
        self.array_config()
        for v in self.sweep if self.axis == "gamma" else (None,):
            self.sampler(gamma=v)

    @property
    def axis(self) -> str:
        return SWEEP_AXIS[self.campaign]

    def array_config(self) -> ArrayConfig:
        a = dict(self.array)
        if "freq_hz" in a:
            return ArrayConfig.from_frequency(a["n_antennas"], a["freq_hz"], a.get("spacing"))
        return ArrayConfig(a["n_antennas"], a["wavelength"], a.get("spacing"))

    def sampler(self, gamma=None) -> ScenarioSampler:
        s = dict(self.scenario)
        for k in ("angle_range", "distance_range"):
            if k in s:
                s[k] = tuple(s[k])
        if gamma is not None:
            s["gamma"] = gamma
        return ScenarioSampler(**s)

    @property
    def rho(self) -> float:
        rho = self.dictionary.get("rho")
        return default_rho(self.dictionary.get("S", 5)) if rho is None else float(rho)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["estimators"] = [asdict(e) for e in self.estimators]
        d["sweep"] = list(self.sweep)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        d = dict(d)
        d["estimators"] = tuple(d.get("estimators", ()))
        d["sweep"] = tuple(d.get("sweep", ()))
        return cls(**d)


def load_raw_config(path) -> dict:
    """Parse a ``.json`` file as JSON and anything else as TOML."""
    path = Path(path)
    text = path.read_bytes()
    if path.suffix.lower() == ".json":
        return json.loads(text)
    try:
        import tomllib
    except ImportError:  # python < 3.11
        import tomli as tomllib
    return tomllib.loads(text.decode("utf-8"))


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(load_raw_config(path))


# -- result table ----------------------------------------------------------


@dataclass
class ResultRow:
    sweep_value: float
    estimator: str
    mean_nmse_db: float
    std_nmse_db: float
    mean_db_nmse: float
    mean_noi: float
    crlb_db: float | None
    alpha: float | None
    trial_count: int
    excluded: int
    wall_time: float = 0.0


@dataclass
class ResultTable:
    rows: list = field(default_factory=list)

    def select(self, estimator: str) -> list:
        return [r for r in self.rows if r.estimator == estimator]

    def series(self, estimator: str, column: str = "mean_nmse_db") -> tuple:
        rs = self.select(estimator)
        return np.array([r.sweep_value for r in rs]), np.array([getattr(r, column) for r in rs])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ResultTable":
        rd = csv.DictReader(io.StringIO(text))
        if tuple(rd.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV header {rd.fieldnames}")
        rows = []
        for rec in rd:
            rows.append(ResultRow(
                float(rec["sweep_value"]), rec["estimator"], float(rec["mean_nmse_db"]),
                float(rec["std_nmse_db"]), float(rec["mean_db_nmse"]), float(rec["mean_noi"]),
                _opt_float(rec["crlb_db"]), _opt_float(rec["alpha"]),
                int(rec["trial_count"]), int(rec["excluded"])))
        return cls(rows)

    def write(self, path) -> None:
        Path(path).write_bytes(self.to_csv().encode("utf-8"))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def _opt_float(s: str):
    return None if s == "" else float(s)


# -- campaign engine ---------------------------------------------------------


def _stream(seed: int, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


class _Context:
    """Read-only state shared by all trials of one campaign."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.array = cfg.array_config()
        S = cfg.dictionary.get("S", 5)
        self.rho = cfg.rho
        self.joint = build_joint(self.array, S, self.rho)
        self.angular = build_angular(self.array)
        self.polar = build_polar(self.array, S, self.rho) if S else None
        self._dicts = {}
        for e in cfg.estimators:
            if e.name == "pd_omp":
                self._dicts[e.key] = self._pd_dict(e, S)
        self.points = list(cfg.sweep)
        self.samplers = [cfg.sampler(gamma=v) if cfg.axis == "gamma" else cfg.sampler() for v in self.points]
        self.covs = {}
        if any(e.name == "lmmse" for e in cfg.estimators):
            for p, smp in enumerate(self.samplers):
                if cfg.axis != "gamma" and p > 0:
                    self.covs[p] = self.covs[0]
                    continue
                H = sample_channels(_stream(cfg.seed, _STREAM_COVARIANCE, p), smp, self.array,
                                    cfg.covariance_draws)
                self.covs[p] = H.T @ H.conj() / H.shape[0]

    def _pd_dict(self, e: EstimatorSpec, S_default: int) -> Dictionary:
        S = S_default if e.S is None else e.S
        if e.domain == "polar":
            return build_polar(self.array, S, self.rho)
        if e.S is None:
            return self.joint
        return build_joint(self.array, S, self.rho)

    def pd_dict(self, e: EstimatorSpec) -> Dictionary:
        return self._dicts[e.key]


def _split_counts(scn, spec: EstimatorSpec, L: int) -> tuple:
    if spec.split == "oracle":
        return len(scn.far_set), len(scn.near_set)
    n_near = int(round(float(spec.split) * L))
    return L - n_near, n_near


def _run_trial(ctx: _Context, t: int) -> dict:
    """All sweep points and estimators for trial ``t``.

    Returns {(point, key, alpha_index): (ratio, noi, crlb_ratio) or None}.
    """
    cfg = ctx.cfg
    axis = cfg.axis
    arr = ctx.array
    out = {}
    shared = {}
    for p, value in enumerate(ctx.points):
        smp = ctx.samplers[p]
        scn_rng = _stream(cfg.seed, _STREAM_SCENARIO, t, p) if axis == "gamma" else _stream(cfg.seed, _STREAM_SCENARIO, t)
        scn = sample_scenario(scn_rng, smp, arr)
        h = synth_hybrid(arr, scn)
        Q = int(value) if axis == "Q" else int(cfg.pilot["Q"])
        N_RF = int(cfg.pilot["N_RF"])
        cb_rng = _stream(cfg.seed, _STREAM_CODEBOOK, t, p) if axis == "Q" else _stream(cfg.seed, _STREAM_CODEBOOK, t)
        cb = gen_beamforming(cb_rng, Q, N_RF, arr)
        snr = value if axis == "snr_db" else cfg.snr_db
        sigma2 = snr_to_sigma2(h, snr)
        obs = observe(_stream(cfg.seed, _STREAM_NOISE, t), h, cb, sigma2)
        wh = build_whitener(cb)
        phi_j = measurement_matrix(cb, wh, ctx.joint)
        N = arr.n_antennas
        phi_a = phi_j[:, :N]
        phi_p = phi_j[:, N:]
        L = smp.n_paths
        hn2 = float(np.vdot(h, h).real)

        def score(est):
            return nmse_ratio(est, h)

        for e in cfg.estimators:
            alphas = (value,) if axis == "alpha" and e.name == "pd_omp" else e.alphas()
            reusable = axis == "alpha" and e.name != "pd_omp"
            if reusable and e.key in shared:
                out[(p, e.key, 0)] = shared[e.key]
                continue
            for ai, alpha in enumerate(alphas if e.name == "pd_omp" else (None,)):
                try:
                    if e.name == "pd_omp":
                        d = ctx.pd_dict(e)
                        phi = phi_j if d is ctx.joint else phi_p if d is ctx.polar else None
                        est = pd_omp(obs, d, PdOmpConfig(L, alpha), phi=phi, whitener=wh, warn=False)
                        if "support_overflow" in est.flags:
                            raise OverflowError("support overflow")
                        crlb = normalized_crlb(sigma2, len(est.support.indices), Q, N_RF, N, hn2)
                        res = (score(est), float(est.iterations), crlb)
                    elif e.name == "npd_omp":
                        est = npd_omp(obs, ctx.joint, L, phi=phi_j, whitener=wh)
                        res = (score(est), float(est.iterations), None)
                    elif e.name == "far_omp":
                        est = far_omp(obs, ctx.angular, L, phi=phi_a, whitener=wh)
                        res = (score(est), float(est.iterations), None)
                    elif e.name == "near_omp":
                        est = near_omp(obs, ctx.polar, L, phi=phi_p, whitener=wh)
                        res = (score(est), float(est.iterations), None)
                    elif e.name in ("hf_omp", "sd_omp"):
                        lf, ln = _split_counts(scn, e, L)
                        if e.name == "hf_omp":
                            est = hf_omp(obs, ctx.angular, ctx.polar, lf, ln, phi_a, phi_p, wh)
                        else:
                            est = sd_omp(obs, ctx.angular, ctx.polar, lf, ln, e.window, phi_a, phi_p, wh)
                        res = (score(est), float(est.iterations), None)
                    else:
                        est = lmmse(obs, ctx.covs[p])
                        res = (score(est), 0.0, None)
                except (ArithmeticError, ValueError, np.linalg.LinAlgError):
                    res = None
                out[(p, e.key, ai)] = res
                if reusable:
                    shared[e.key] = res
    return out


def _db(x: float) -> float:
    return float(max(10 * np.log10(x), -200.0)) if x > 0 else -200.0


def _aggregate(values: list) -> dict | None:
    ok = [v for v in values if v is not None]
    if not ok:
        return None
    ratio = np.array([v[0] for v in ok])
    dbs = np.array([_db(r) for r in ratio])
    crlb = [v[2] for v in ok if v[2] is not None]
    return {
        "mean_nmse_db": _db(float(ratio.mean())),
        "std_nmse_db": float(dbs.std(ddof=1)) if dbs.size > 1 else 0.0,
        "mean_db_nmse": float(dbs.mean()),
        "mean_noi": float(np.mean([v[1] for v in ok])),
        "crlb_db": _db(float(np.mean(crlb))) if crlb else None,
        "trial_count": len(ok),
        "excluded": len(values) - len(ok),
    }


def resolve_threads(threads: int | None = None) -> int:
    env = os.environ.get("HFCE_THREADS")
    if env:
        threads = int(env)
    if threads is None:
        threads = 1
    if threads < 1:
        raise ValueError("thread count must be >= 1")
    return threads


def run_campaign(cfg: ExperimentConfig, threads: int | None = None) -> ResultTable:
    threads = resolve_threads(threads)
    t0 = time.perf_counter()
    ctx = _Context(cfg)
    trials = range(cfg.trials)
    if threads == 1:
        results = [_run_trial(ctx, t) for t in trials]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda t: _run_trial(ctx, t), trials))
    wall = time.perf_counter() - t0
    rows = []
    for p, value in enumerate(ctx.points):
        for e in cfg.estimators:
            alphas = (value,) if cfg.axis == "alpha" and e.name == "pd_omp" else e.alphas()
            n_alpha = len(alphas) if e.name == "pd_omp" else 1
            best, best_alpha = None, None
            for ai in range(n_alpha):
                agg = _aggregate([r[(p, e.key, ai)] for r in results])
                if agg is not None and (best is None or agg["mean_nmse_db"] < best["mean_nmse_db"]):
                    best, best_alpha = agg, alphas[ai] if e.name == "pd_omp" else None
            if best is None:
                best = {"mean_nmse_db": float("nan"), "std_nmse_db": float("nan"), "mean_db_nmse": float("nan"),
                        "mean_noi": float("nan"), "crlb_db": None, "trial_count": 0, "excluded": cfg.trials}
            rows.append(ResultRow(value, e.key, alpha=best_alpha, wall_time=wall, **best))
    return ResultTable(rows)


def run_gamma_study(cfg: ExperimentConfig, threads: int | None = None, table: ResultTable | None = None) -> dict:
    """Mean, population std, min and max over the gamma grid of each estimator's NMSE."""
    if cfg.campaign != "nmse_vs_gamma":
        raise ValueError("run_gamma_study needs campaign = nmse_vs_gamma")
    table = run_campaign(cfg, threads) if table is None else table
    summary = {}
    for e in cfg.estimators:
        _, v = table.series(e.key)
        summary[e.key] = {"mean": float(v.mean()), "std": float(v.std(ddof=0)),
                          "min": float(v.min()), "max": float(v.max())}
    return summary


def git_describe() -> str:
    try:
        r = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], capture_output=True,
                           text=True, timeout=10, cwd=Path(__file__).resolve().parent)
        return r.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def write_outputs(cfg: ExperimentConfig, table: ResultTable, out_dir, threads: int, wall: float,
                  extra: dict | None = None) -> tuple:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{cfg.campaign}.csv"
    table.write(csv_path)
    manifest = {
        "campaign": cfg.campaign,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "git_describe": git_describe(),
        "wall_time_s": wall,
        "threads": threads,
        "backend": _kernels.BACKEND,
        "csv": csv_path.name,
    }
    if extra:
        manifest.update(extra)
    man_path = out / f"{cfg.campaign}.manifest.json"
    man_path.write_text(json.dumps(manifest, indent=2, default=_json_default))
    return csv_path, man_path


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


# -- complexity probe --------------------------------------------------------


@dataclass(frozen=True)
class ProbeConfig:
    """Fixed problem size for the timing probe.

    Q * N_RF stays below the smallest N, and alpha = 1 keeps card(Gamma) at
    one atom per detection; with alpha < 1 the range widens as the aperture
    shrinks, so the support size would change with N.
    """

    Q: int = 7
    N_RF: int = 8
    n_paths: int = 6
    S: int = 5
    alpha: float = 1.0
    snr_db: float = 10.0
    repeats: int = 51
    seed: int = 0
    freq_hz: float = 30e9


def runtime_scaling_probe(N_values, cfg: ProbeConfig = ProbeConfig()) -> list:
    """Median pd_omp wall time for each array size, with fixed Q, N_RF, L, S.

    The whitener and measurement operator are built outside the timed region,
    as they depend only on the codebook.
    """
    out = []
    for N in N_values:
        arr = ArrayConfig.from_frequency(int(N), cfg.freq_hz)
        d = build_joint(arr, cfg.S, default_rho(cfg.S))
        smp = ScenarioSampler(n_paths=cfg.n_paths)
        pc = PdOmpConfig(cfg.n_paths, cfg.alpha)
        rng = _stream(cfg.seed, int(N))
        times = []
        for rep in range(cfg.repeats + 1):
            h = synth_hybrid(arr, sample_scenario(rng, smp, arr))
            cb = gen_beamforming(rng, cfg.Q, cfg.N_RF, arr)
            obs = observe(rng, h, cb, snr_to_sigma2(h, cfg.snr_db))
            wh = build_whitener(cb)
            phi = measurement_matrix(cb, wh, d)
            t0 = time.perf_counter()
            pd_omp(obs, d, pc, phi=phi, whitener=wh, warn=False)
            dt = time.perf_counter() - t0
            if rep:  # first call warms caches and compiled kernels
                times.append(dt)
        out.append((int(N), float(np.median(times))))
    return out


def doubling_ratios(probe: list) -> list:
    return [b[1] / a[1] for a, b in zip(probe, probe[1:])]


__all__ = ["CAMPAIGNS", "EstimatorSpec", "ExperimentConfig", "ResultRow", "ResultTable", "ProbeConfig",
           "load_config", "load_raw_config", "run_campaign", "run_gamma_study", "runtime_scaling_probe", "doubling_ratios",
           "write_outputs", "resolve_threads"]
