"""The twelve acceptance criteria, run at full tolerance.

Each test records a PASS/FAIL verdict that is listed at the end of the pytest
run. The campaign-scale criteria (7-9) take several minutes on one core.
"""
import time
from pathlib import Path

import numpy as np
import pytest
from _reference import pd_range_bruteforce

from hfce.analysis import pd_range_size_approx, random_incoverage_paths, verify_lemma1, verify_lemma3
from hfce.channel import ScenarioSampler, sample_scenario, synth_hybrid
from hfce.dictionary import build_angular, build_joint
from hfce.estimators import PdOmpConfig, nmse, pd_omp, pd_range
from hfce.geometry import ArrayConfig, far_steering, near_steering
from hfce.harness import (DEFAULT_ALPHA, ExperimentConfig, ProbeConfig, doubling_ratios, load_raw_config,
                          run_campaign, run_gamma_study, runtime_scaling_probe)
from hfce.measurement import build_whitener, gen_beamforming, observe, snr_to_sigma2

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
CFG = ArrayConfig(200, 0.01)
PAPER_PD_MEAN_DB = -6.792
OMP_BASELINES = ("npd_omp", "far_omp", "near_omp", "hf_omp", "sd_omp")

# Marked expected failures: the analysis of each is recorded in the project's
# decisions ledger. The tests below run unchanged at the stated tolerances.
C6_REASON = "ring atoms 0.95-0.99 coherent with their angular neighbours defeat greedy selection"
C7_REASON = "PD-OMP does not beat Far-OMP and SD-OMP at desk scale"
C8_REASON = "per-antenna SNR puts the normalized CRLB 20-32 dB below PD-OMP at every SNR"


def _campaign(name, **override):
    raw = load_raw_config(CONFIGS / name)
    raw.update(override)
    return ExperimentConfig.from_dict(raw)


@pytest.mark.acceptance(1)
def test_c01_steering_and_gram(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    th = rng.uniform(-np.pi / 2, np.pi / 2, 10_000)
    r = rng.uniform(1.0, 500.0, 5_000)
    norms = np.concatenate([np.linalg.norm(far_steering(CFG, th[:5000]), axis=0),
                            np.linalg.norm(near_steering(CFG, th[5000:], r), axis=0)])
    F = build_angular(CFG).columns
    gram_err = float(np.abs(F.conj().T @ F - np.eye(200)).max())
    dt = time.perf_counter() - t0
    norm_err = float(np.abs(norms - 1).max())
    criterion(norm_err < 1e-12 and gram_err < 1e-10 and dt < 5,
              f"max |norm-1| {norm_err:.1e}, Gram err {gram_err:.1e}, {dt:.2f} s")


@pytest.mark.acceptance(2)
def test_c02_whitening(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    cb = gen_beamforming(rng, 10, 10, CFG)
    wh = build_whitener(cb)
    sigma2 = 0.7
    draws, chunk = 100_000, 5_000
    acc = np.zeros((100, 100), dtype=complex)
    for _ in range(draws // chunk):
        n = np.sqrt(sigma2 / 2) * (rng.standard_normal((10, 200, chunk)) + 1j * rng.standard_normal((10, 200, chunk)))
        wn = np.einsum("qkn,qnc->qkc", cb.slots, n).reshape(100, chunk)
        z = wh.apply_inverse(wn)
        acc += z @ z.conj().T
    C = acc / draws
    dev = float(np.abs(C - sigma2 * np.eye(100)).max() / sigma2)
    dt = time.perf_counter() - t0
    criterion(dev < 0.03 and dt < 30, f"max-entry deviation {dev:.4f} of sigma^2, {dt:.1f} s")


@pytest.mark.acceptance(3)
def test_c03_lemma1(criterion):
    t0 = time.perf_counter()
    d = build_joint(CFG, 5)
    paths = random_incoverage_paths(np.random.default_rng(3), CFG, 100, 5, d.rho)
    means = [verify_lemma1(CFG, d.block(s), paths)["mean"] for s in range(1, 6)]
    dt = time.perf_counter() - t0
    ok = all(0.95 <= m <= 1.05 for m in means) and dt < 10
    criterion(ok, "mean energy per ring " + ", ".join(f"{m:.4f}" for m in means) + f", {dt:.2f} s")


@pytest.mark.acceptance(4)
def test_c04_lemma3(criterion):
    t0 = time.perf_counter()
    rep = verify_lemma3(CFG, 10, 10, 50, 200, np.random.default_rng(4))
    dt = time.perf_counter() - t0
    criterion(rep["mean"] < rep["bound"] and dt < 60,
              f"mean |phi_i^H phi_j| {rep['mean']:.4f} < {rep['bound']} (max {rep['empirical_max']:.3f}), {dt:.1f} s")


@pytest.mark.acceptance(5)
def test_c05_pd_range_oracle(criterion):
    d = build_joint(CFG, 5)
    rng = np.random.default_rng(5)
    # 100 seeds spread over all six blocks
    seeds = np.concatenate([s * 200 + rng.choice(200, 17 if s < 4 else 16, replace=False) for s in range(6)])
    mismatches = 0
    for seed in seeds:
        m = float(rng.uniform(0.5, 1.0))
        for alpha in (0.3, 0.5, 0.7, 1.0):
            for mb in (1.0, m):
                if not np.array_equal(pd_range(d, seed, mb, alpha), pd_range_bruteforce(d, seed, mb, alpha)):
                    mismatches += 1
    total = len(seeds) * 8
    criterion(mismatches == 0, f"{total - mismatches}/{total} ranges equal to the brute-force oracle")


@pytest.mark.xfail(reason=C6_REASON, strict=False)
@pytest.mark.acceptance(6)
def test_c06_noiseless_recovery(criterion):
    d = build_joint(CFG, 5)
    G = np.abs(d.columns.conj().T @ d.columns)
    rng = np.random.default_rng(6)
    hits, worst = 0, -np.inf
    for _ in range(100):
        k = int(rng.integers(1, 6))
        while True:
            idx = rng.choice(d.n_atoms, k, replace=False)
            if k == 1 or (G[np.ix_(idx, idx)] - np.eye(k)).max() < 0.3:
                break
        h = d.columns[:, idx] @ ((rng.standard_normal(k) + 1j * rng.standard_normal(k)) / np.sqrt(2))
        obs = observe(rng, h, gen_beamforming(rng, 10, 10, CFG), 0.0)
        e = pd_omp(obs, d, PdOmpConfig(k, DEFAULT_ALPHA), warn=False)
        hits += set(idx.tolist()) <= set(e.support.indices)
        worst = max(worst, nmse(e, h))
    criterion(hits == 100 and worst <= -80, f"support recovered {hits}/100, worst NMSE {worst:.1f} dB")


@pytest.mark.slow
@pytest.mark.xfail(reason=C7_REASON, strict=False)
@pytest.mark.acceptance(7)
def test_c07_table1_ordering(criterion):
    t0 = time.perf_counter()
    cfg = _campaign("table1_gamma.toml")
    summary = run_gamma_study(cfg)
    dt = time.perf_counter() - t0
    mean = {k: v["mean"] for k, v in summary.items()}
    pd = mean["pd_omp"]
    best = all(pd < v for k, v in mean.items() if k != "pd_omp")
    ok = (best and pd <= mean["near_omp"] - 1.5 and pd <= mean["lmmse"] - 3
          and abs(pd - PAPER_PD_MEAN_DB) <= 1.5 and dt < 1800)
    std_ok = all(summary["pd_omp"]["std"] <= summary[k]["std"] for k in OMP_BASELINES)
    detail = ", ".join(f"{k} {v:.2f}" for k, v in mean.items())
    criterion(ok, f"mean over gamma (dB): {detail}; PD std lowest among OMP: {std_ok}; {dt:.0f} s")


@pytest.mark.slow
@pytest.mark.xfail(reason=C8_REASON, strict=False)
@pytest.mark.acceptance(8)
def test_c08_snr_trends(criterion):
    t0 = time.perf_counter()
    cfg = _campaign("fig8_snr.toml")
    t = run_campaign(cfg)
    dt = time.perf_counter() - t0
    mono = {}
    for e in cfg.estimators:
        _, v = t.series(e.key)
        mono[e.key] = bool(np.all(np.diff(v) <= 0))
    snr, pd = t.series("pd_omp")
    _, npd = t.series("npd_omp")
    _, crlb = t.series("pd_omp", "crlb_db")
    gap = crlb.astype(float) - pd
    cross = None
    for i in range(len(snr) - 1):
        if gap[i] > 0 >= gap[i + 1]:
            cross = snr[i] + (snr[i + 1] - snr[i]) * gap[i] / (gap[i] - gap[i + 1])
            break
    ok = all(mono.values()) and bool(np.all(pd <= npd)) and cross is not None and 4 <= cross <= 14 and dt < 1800
    criterion(ok, f"monotone {sum(mono.values())}/{len(mono)}, PD<=NPD {bool(np.all(pd <= npd))}, "
                  f"CRLB-PD gap (dB) {np.round(gap, 1).tolist()}, crossing {cross}; {dt:.0f} s")


def _best_alpha(**override):
    t = run_campaign(_campaign("fig10_alpha.toml", **override))
    a, v = t.series("pd_omp")
    return float(a[int(np.argmin(v))]), v


@pytest.mark.slow
@pytest.mark.acceptance(9)
def test_c09_alpha_behaviour(criterion):
    q_lo, _ = _best_alpha(pilot={"Q": 8, "N_RF": 10})
    q_hi, _ = _best_alpha(pilot={"Q": 20, "N_RF": 10})
    s_lo, _ = _best_alpha(snr_db=4.0)
    s_hi, _ = _best_alpha(snr_db=20.0)
    criterion(q_hi <= q_lo and s_hi <= s_lo,
              f"best alpha Q=20 {q_hi} vs Q=8 {q_lo}; SNR 20 dB {s_hi} vs 4 dB {s_lo}")


@pytest.mark.acceptance(10)
def test_c10_prop1(criterion):
    d = build_joint(CFG, 5)
    rng = np.random.default_rng(10)
    detected = []
    while len(detected) < 50:
        h = synth_hybrid(CFG, sample_scenario(rng, ScenarioSampler(n_paths=10, gamma=0.5), CFG))
        obs = observe(rng, h, gen_beamforming(rng, 10, 10, CFG), snr_to_sigma2(h, 10))
        e = pd_omp(obs, d, PdOmpConfig(10, DEFAULT_ALPHA), warn=False)
        detected.extend((p.seed, p.m_bar) for p in e.support.per_path)
    within = within_forced = 0
    gated = 0
    for seed, m_bar in detected[:50]:
        # Proposition 1 describes the thresholded range itself, which is empty
        # once m_bar < alpha; the estimator still keeps the seed in that case
        actual = pd_range(d, seed, m_bar, DEFAULT_ALPHA, force_seed=False).size
        forced = pd_range(d, seed, m_bar, DEFAULT_ALPHA).size
        s0 = int(d.submatrices[seed]) + 1
        approx = pd_range_size_approx(m_bar, DEFAULT_ALPHA, 5, s0, CFG, d.rho)
        within += actual / 2 <= approx <= 2 * actual
        within_forced += forced / 2 <= approx <= 2 * forced
        gated += m_bar >= DEFAULT_ALPHA
    criterion(within >= 40, f"{within}/50 within a factor of 2 ({gated} with m_bar >= alpha; "
                            f"{within_forced}/50 if the forced seed is counted)")


@pytest.mark.slow
@pytest.mark.acceptance(11)
def test_c11_complexity(criterion):
    probe = runtime_scaling_probe([64, 128, 256], ProbeConfig())
    ratios = doubling_ratios(probe)
    criterion(all(1.5 <= x <= 3.0 for x in ratios),
              "median times " + ", ".join(f"N={n}: {t * 1e3:.2f} ms" for n, t in probe)
              + "; ratios " + ", ".join(f"{x:.2f}" for x in ratios))


@pytest.mark.acceptance(12)
def test_c12_determinism(criterion):
    cfg = ExperimentConfig.from_dict(dict(
        campaign="nmse_vs_snr", sweep=[0.0, 10.0], trials=12, seed=2**64 - 12, covariance_draws=1000,
        scenario={"n_paths": 6, "gamma": 0.5},
        estimators=[{"name": n} for n in ("pd_omp", "npd_omp", "far_omp", "near_omp", "hf_omp", "sd_omp", "lmmse")]))
    a = run_campaign(cfg, threads=1).to_csv().encode()
    b = run_campaign(cfg, threads=6).to_csv().encode()
    c = run_campaign(cfg, threads=3).to_csv().encode()
    criterion(a == b == c, f"{len(a)} CSV bytes, identical across 1/3/6 threads: {a == b == c}")
