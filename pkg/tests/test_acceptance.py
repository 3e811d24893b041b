"""Acceptance run: one test per criterion, each printing a single pass/fail line.

The desk-scale sweeps (criteria 9 to 11) take several minutes on one core;
deselect them with ``-m "not slow"``.
"""
import csv
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from mudinet import autodiff as ad
from mudinet.channel import ChannelParams, measure_snr_db, path_power, solve_tx_power, tap_index
from mudinet.config import load_config
from mudinet.experiment import read_results, run_sweep
from mudinet.geometry import (
    Point2D,
    ScattererRegion,
    WallSegment,
    mirror_point,
    sample_scatterers,
    specular_paths,
    trajectory_arc_coverage,
    two_room_scene,
)
from mudinet.channel import diffuse_profile
from mudinet.model import ConfigError, ModelConfig, MudiNet, decode, position_head

from oracles import (
    brute_force_reflection,
    circling_positions,
    coverage_oracle,
    diffuse_profile_oracle,
    rejection_gaussian,
)
from test_autodiff import grad_check
from test_geometry import _random_scene, open_scene
from test_model import TINY, kl, kl_monte_carlo, tiny_batch
from test_model import test_full_loss_gradient_check as full_loss_gradient_check

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
P = ChannelParams()


def test_criterion_1_geometry_oracle(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_len, checked = 0.0, 0
    for _ in range(20):
        walls = _random_scene(rng)
        tx, ue = rng.uniform(-8, 8, (2, 2))
        for p in specular_paths(open_scene(walls, tx), Point2D(*ue), max_order=1, occlusion=False):
            if p.order == 1:
                ref, _ = brute_force_reflection(tx, ue, *walls[p.walls[0]])
                worst_len = max(worst_len, abs(p.total_length - ref))
                checked += 1
    worst_mirror = 0.0
    for a, b, q in rng.uniform(-10, 10, (1000, 3, 2)):
        w = WallSegment(Point2D(*a), Point2D(*b))
        pt = Point2D(*q)
        worst_mirror = max(worst_mirror, mirror_point(mirror_point(pt, w), w).dist(pt))
    elapsed = time.perf_counter() - t0
    ok = worst_len < 1e-3 and worst_mirror < 1e-12 and checked > 0 and elapsed < 60
    assert criterion(1, ok, f"{checked} paths, max |dL| {worst_len:.2e} m, "
                            f"involution {worst_mirror:.1e} m, {elapsed:.1f} s")


def test_criterion_2_channel_arithmetic(criterion):
    direct = path_power(10.0, (10.0,), 0, P)
    friis = (P.wavelength / (4 * math.pi * 10.0)) ** 2
    grid = P.tap_spacing_s == 2.5e-9 and P.tap_length_m == pytest.approx(0.75, abs=1e-15)
    grid = grid and tap_index(0.75, P) == 1 and tap_index(0.374, P) == 0 and tap_index(0.376, P) == 1
    ratio = path_power(10.0, (4.0, 6.0), 1, P) / direct
    ratio2 = path_power(10.0, (3.0, 3.0, 4.0), 2, P) / path_power(10.0, (4.0, 6.0), 1, P)
    literal = abs(direct / 9.8927e-7 - 1)
    ok_formula = abs(direct / friis - 1) < 1e-12 and P.wavelength == 0.125
    ok = ok_formula and grid and ratio == 0.25 and ratio2 == 0.25
    criterion(2, ok and literal < 1e-12,
              f"P_direct {direct:.6e} W; (lambda/4 pi d)^2 within {abs(direct / friis - 1):.0e}; "
              f"stated constant 9.8927e-07 off by {literal:.1e} relative; grid {grid}; "
              f"order ratios {ratio}, {ratio2}")
    # everything except the stated literal must hold
    assert ok


@pytest.mark.xfail(strict=True, reason="stated 9.8927e-7 disagrees with (0.125/(4 pi 10))^2 = 9.89465e-7")
def test_criterion_2_stated_constant():
    assert abs(path_power(10.0, (10.0,), 0, P) / 9.8927e-7 - 1) < 1e-12


def test_criterion_3_snr_round_trip(criterion):
    quiet = P.with_(noise=False)
    scene = two_room_scene()
    ue = Point2D(3.5, 6.5)
    worst = max(abs(measure_snr_db(scene, ue, quiet, solve_tx_power(scene, ue, t, quiet)) - t)
                for t in (-10.0, 0.0, 10.0, 20.0))
    assert criterion(3, worst < 1e-6, f"max |SNR error| {worst:.1e} dB")


def test_criterion_4_diffuse_oracle(criterion):
    t0 = time.perf_counter()
    q = P.with_(p_obs=1.0, noise=False)
    region = ScattererRegion(Point2D(2, 3), 0.5, 0.5)
    got = diffuse_profile(sample_scatterers(region, 100_000, 0), (0, 0), (4, 0), q, np.random.default_rng(0))
    xy = rejection_gaussian((2, 3), 0.5, 0.5, 3.0, 1_000_000, np.random.default_rng(1))
    ref = diffuse_profile_oracle(xy, (0, 0), (4, 0), q.max_taps, q.tap_length_m, q.reflection_factor,
                                 q.tx_power, q.wavelength)
    heavy = ref > 0.01 * ref.sum()
    worst = float(np.max(np.abs(got[heavy] / ref[heavy] - 1)))
    elapsed = time.perf_counter() - t0
    ok = worst < 0.02 and heavy.sum() > 0 and elapsed < 120
    assert criterion(4, ok, f"{heavy.sum()} taps, max rel error {worst:.2%}, {elapsed:.1f} s")


def test_criterion_5_arc_coverage(criterion):
    region = ScattererRegion(Point2D(0, 0), 1.0, 0.8)
    tx = (0.0, -9.0)
    positions = circling_positions((0, 0), 4.0, 110)
    s = sample_scatterers(region, 8192, 0)
    prefix = [trajectory_arc_coverage(tx, positions[:k], region, 0.75, scatterers=s)
              for k in range(1, len(positions) + 1)]
    monotone = all(b >= a for a, b in zip(prefix, prefix[1:]))
    full = trajectory_arc_coverage(tx, positions, region, 0.75)
    xy = rejection_gaussian((0, 0), 1.0, 0.8, 3.0, 200_000, np.random.default_rng(4))
    ref = coverage_oracle(xy, tx, positions, 0.75)
    ok = monotone and full > 0.95 and abs(full - ref) < 0.01
    assert criterion(5, ok, f"monotone {monotone}; coverage {full:.4f} vs oracle {ref:.4f}")


def test_criterion_6_gradient_checks(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    a = np.where(np.abs(a) < 0.05, 0.3, a)
    c3 = rng.normal(size=(2, 3, 4))
    checks = {
        "matmul": (ad.matmul, [a, rng.normal(size=(4, 2))]),
        "batched matmul": (ad.matmul, [c3, rng.normal(size=(2, 4, 3))]),
        "add": (ad.add, [a, rng.normal(size=4)]),
        "sub": (ad.sub, [a, b]),
        "mul": (ad.mul, [a, b]),
        "relu": (ad.relu, [a]),
        "exp": (ad.exp, [a]),
        "square": (ad.square, [a]),
        "softmax": (ad.softmax_rows, [a]),
        "layer_norm": (ad.layer_norm_rows, [a]),
        "mse": (ad.mse, [a, b]),
        "sum": (lambda t: ad.sum(t, axis=-1), [c3]),
        "mean": (lambda t: ad.mean(t, axis=-2, keepdims=True), [c3]),
        "reshape": (lambda t: ad.reshape(t, (6, 4)), [c3]),
        "transpose": (ad.swap_last, [c3]),
        "broadcast": (lambda t: ad.broadcast_to(ad.reshape(t, (3, 1, 4)), (3, 2, 4)), [a]),
        "concat": (lambda x, y: ad.concat([x, y], axis=-1), [a, b]),
    }
    worst = {name: grad_check(fn, arrs) for name, (fn, arrs) in checks.items()}
    name, err = max(worst.items(), key=lambda kv: kv[1])
    try:
        full_loss_gradient_check()
        full_ok = True
    except AssertionError:
        full_ok = False
    elapsed = time.perf_counter() - t0
    ok = err < 1e-4 and full_ok and elapsed < 120
    assert criterion(6, ok, f"{len(checks)} primitives, worst {name} {err:.1e}; "
                            f"full loss {'ok' if full_ok else 'failed'}; {elapsed:.1f} s")


def test_criterion_7_kl(criterion):
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(20):
        dim = int(rng.integers(1, 5))
        mu = rng.normal(0, 1.0, dim)
        var = np.exp(rng.uniform(-1.5, 1.0, dim))
        eps = float(rng.uniform(0.5, 2.0))
        closed = kl(mu, var, eps)
        worst = max(worst, abs(kl_monte_carlo(mu, var, eps, 1_000_000, rng) - closed) / closed)
    at_prior = max(abs(kl(np.zeros(3), np.full(3, e**2), e)) for e in (0.1, 0.5, 1.0, 3.0))
    ok = worst < 0.02 and at_prior < 1e-12
    assert criterion(7, ok, f"max MC rel gap {worst:.2%}; KL(q=prior) {at_prior:.1e}")


def test_criterion_8_structural_disentanglement(criterion):
    m = MudiNet(TINY, 0)
    rng = np.random.default_rng(0)
    z_u, z_s = rng.normal(size=(4, TINY.l_u)), rng.normal(size=TINY.l_s)
    base = position_head(m.params, z_u, z_s, TINY.layers).data.tobytes()
    head_ok = all(
        decode(m.params, z_u, z_s, rng.normal(size=TINY.l_d), TINY.layers) is not None
        and position_head(m.params, z_u, z_s, TINY.layers).data.tobytes() == base
        for _ in range(5))
    x, _ = tiny_batch()
    before = m.predict(x).tobytes()
    m.params["env.d_mu.W"].data += rng.normal(size=m.params["env.d_mu.W"].shape)
    m.params["env.d_lv.b"].data += 2.0
    e2e_ok = m.predict(x).tobytes() == before
    rejected = 0
    for s, d, u in ((0.5, 0.5, 1.0), (0.1, 1.0, 0.5), (0.6, 0.5, 1.0), (0.1, 0.5, 0.5)):
        try:
            ModelConfig(eps_s=s, eps_d=d, eps_u=u)
        except ConfigError:
            rejected += 1
    ModelConfig(eps_s=0.1, eps_d=0.5, eps_u=1.0)
    ok = head_ok and e2e_ok and rejected == 4
    assert criterion(8, ok, f"z_d bit-invariance head {head_ok} end-to-end {e2e_ok}; "
                            f"{rejected}/4 bad prior orderings rejected")


# -- desk-scale sweeps ---------------------------------------------------------------

def _mean_me(rows):
    acc = {}
    for r in rows:
        if r["me_m"]:
            acc.setdefault((float(r["setting"]), r["method"]), []).append(float(r["me_m"]))
    return {k: float(np.mean(v)) for k, v in acc.items()}


@pytest.fixture(scope="module")
def snr_sweep(tmp_path_factory):
    out = tmp_path_factory.mktemp("snr_sweep")
    cfg = load_config(CONFIGS / "snr_scaled.cfg")
    t0 = time.perf_counter()
    run_sweep(cfg, out)
    return out, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_9_snr_trends(snr_sweep, criterion):
    out, elapsed = snr_sweep
    rows = read_results(out / "results.csv")
    me = _mean_me(rows)
    failed = [r for r in rows if r["error"]]
    mu, mlp, tf, mean = ({s: me[(s, m)] for s in (-10.0, 0.0, 20.0)}
                         for m in ("mudinet", "mlp", "transformer", "mean"))
    a = mu[-10.0] > mu[0.0] > mu[20.0]
    b = mu[-10.0] <= mlp[-10.0] and mu[0.0] <= mlp[0.0]
    c = tf[0.0] >= mlp[0.0] and tf[20.0] >= mlp[20.0]
    d = mean[20.0] >= 2 * mu[20.0] and mean[20.0] >= 2 * mlp[20.0]
    criterion("9a", a, f"MudiNet ME {mu[-10.0]:.3f} > {mu[0.0]:.3f} > {mu[20.0]:.3f} m")
    criterion("9b", b, f"MudiNet vs MLP: -10 dB {mu[-10.0]:.3f} vs {mlp[-10.0]:.3f}, "
                       f"0 dB {mu[0.0]:.3f} vs {mlp[0.0]:.3f} m")
    criterion("9c", c, f"transformer vs MLP: 0 dB {tf[0.0]:.3f} vs {mlp[0.0]:.3f}, "
                       f"20 dB {tf[20.0]:.3f} vs {mlp[20.0]:.3f} m")
    criterion("9d", d, f"mean predictor {mean[20.0]:.3f} m is {mean[20.0] / mu[20.0]:.2f}x MudiNet, "
                       f"{mean[20.0] / mlp[20.0]:.2f}x MLP")
    ok = a and b and c and d and not failed and elapsed < 45 * 60
    assert criterion(9, ok, f"{len(rows)} cells, {len(failed)} failed, {elapsed / 60:.1f} min")


@pytest.mark.slow
def test_criterion_10_bandwidth_trend(tmp_path, criterion):
    cfg = load_config(CONFIGS / "bandwidth_scaled.cfg")
    assert cfg.channel.noise is False
    run_sweep(cfg, tmp_path)
    me = _mean_me(read_results(tmp_path / "results.csv"))
    m25, m50, m100 = (me[(bw, "mudinet")] for bw in (25e6, 50e6, 100e6))
    ok = m25 >= m50 >= m100 and (m50 - m100) < (m25 - m50)
    assert criterion(10, ok, f"MudiNet ME 25/50/100 MHz {m25:.3f} / {m50:.3f} / {m100:.3f} m; "
                             f"gains {m25 - m50:.3f} then {m50 - m100:.3f} m")


@pytest.mark.slow
def test_criterion_11_determinism(snr_sweep, tmp_path, criterion):
    out, _ = snr_sweep
    cfg = load_config(CONFIGS / "snr_scaled.cfg")
    cfg.snr_list, cfg.seeds = [20.0], [0]
    run_sweep(cfg, tmp_path)

    def metric_rows(path):
        keep = ("setting", "method", "seed", "me_m", "rmse_m", "epochs", "error")
        return [tuple(r[k] for k in keep) for r in read_results(path)
                if float(r["setting"]) == 20.0 and r["seed"] == "0"]

    def cdf_rows(path):
        with open(path, newline="") as fh:
            return [r for r in csv.reader(fh) if r[0] == "20.0" and r[2] == "0"]
    again, first = metric_rows(tmp_path / "results.csv"), metric_rows(out / "results.csv")
    same_metrics = again == first and len(again) == 4
    same_cdf = cdf_rows(tmp_path / "cdf.csv") == cdf_rows(out / "cdf.csv")
    name = "dataset_snr20_seed0.mdnt"
    same_data = (json.loads((tmp_path / "datasets.json").read_text())[name]
                 == json.loads((out / "datasets.json").read_text())[name])
    ok = same_metrics and same_cdf and same_data
    assert criterion(11, ok, f"re-run of 20 dB seed 0: metrics {same_metrics}, CDF {same_cdf}, "
                             f"dataset hash {same_data}")
