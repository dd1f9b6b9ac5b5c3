"""End-to-end acceptance checks; each test reports one PASS/FAIL verdict line.

Thresholds are fixed here and are never relaxed to make a run pass.
"""

import time

import numpy as np
import pytest
from scipy import stats

from ampeq.cli import main
from ampeq.experiments import (ScalingConfig, convolution_moment_check, jobs_from_env,
                               omega_study, residual_study, scaling_study)
from ampeq.fbm import FbmPath, rescale_selfsimilar, sample_fbm
from ampeq.holder import (check_continuous_scaling, check_holder_scaling,
                          check_interpolated_scaling, identity_refinement)
from ampeq.spectral import make_system

pytestmark = pytest.mark.slow


# fBm law --------------------------------------------------------------------

def test_fbm_exactness(verdict):
    start = time.perf_counter()
    n, N = 2**10, 10**4
    rng = np.random.default_rng(20240601)
    notes, ok = [], True
    for H in (0.25, 0.5, 0.75):
        paths, _ = sample_fbm(H, n, 1.0 / n, N, rng)
        end = paths[:, -1]
        var = end.var(ddof=1)
        se = var * np.sqrt(2.0 / (N - 1))
        inc = np.diff(paths, axis=1)
        corr = np.mean(inc[:, 1:] * inc[:, :-1]) / np.mean(inc**2)
        corr_se = 1.0 / np.sqrt(N * (n - 1))
        if H < 0.5:
            sign_ok = corr < -3 * corr_se
        elif H > 0.5:
            sign_ok = corr > 3 * corr_se
        else:
            sign_ok = abs(corr) < 4 * corr_se
        ok &= abs(var - 1.0) <= 3 * se and sign_ok
        notes.append(f"H={H} var={var:.4f}+-{se:.4f} lag1={corr:+.4f}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 60.0
    verdict(1, ok, "; ".join(notes) + f"; {elapsed:.1f}s")
    assert ok


def test_self_similarity(verdict):
    a, reps, m, n = 16, 200, 200, 64
    rng = np.random.default_rng(7)
    notes, ok = [], True
    for H in (0.25, 0.75):
        passed = 0
        for _ in range(reps):
            long, used = sample_fbm(H, n, a / n, m, rng)
            scaled = np.array([
                rescale_selfsimilar(FbmPath(H, a / n, row, 0, used), a).values[-1]
                for row in long])
            ref, _ = sample_fbm(H, n, 1.0 / n, m, rng)
            passed += stats.ks_2samp(scaled, ref[:, -1]).pvalue > 0.01
        frac = passed / reps
        ok &= frac >= 0.95
        notes.append(f"H={H} p>0.01 in {frac:.1%}")
    verdict(2, ok, "; ".join(notes))
    assert ok


# Convolution identity and deterministic eps-scalings --------------------------

def test_convolution_identity(verdict):
    start = time.perf_counter()
    sys = make_system("laplacian", 32)
    notes, ok = [], True
    for H in (0.3, 0.7):
        reps = identity_refinement(sys, H, 0.25, dt=1e-3, levels=3, seed=1)
        rel = [r.relative for r in reps]
        good = rel[0] < 1e-2 and all(b < a for a, b in zip(rel, rel[1:]))
        ok &= good
        notes.append(f"H={H} rel=" + ",".join(f"{r:.2e}" for r in rel))
    elapsed = time.perf_counter() - start
    verdict(3, ok, "; ".join(notes) + f"; {elapsed:.1f}s")
    assert ok


def test_deterministic_scalings(verdict):
    reps = [check_continuous_scaling(0.4), check_holder_scaling(0.4),
            check_interpolated_scaling(0.6, 0.3)]
    ok = all(r.passed for r in reps)
    verdict(4, ok, "; ".join(f"{r.name} max/median={r.max_over_median:.3f}" for r in reps))
    assert ok


# Approximation error versus eps ----------------------------------------------

@pytest.fixture(scope="module")
def scaling_half():
    start = time.perf_counter()
    rep = scaling_study(ScalingConfig(H=0.5, replicas=100), jobs=jobs_from_env())
    return rep, time.perf_counter() - start


@pytest.fixture(scope="module")
def scaling_rough():
    start = time.perf_counter()
    rep = scaling_study(ScalingConfig(H=0.3, replicas=100, seed_base=1), jobs=jobs_from_env())
    return rep, time.perf_counter() - start


def test_error_order(verdict, scaling_half, scaling_rough):
    (half, t_half), (rough, t_rough) = scaling_half, scaling_rough
    ok_half = 2.5 <= half.slope <= 3.5 and half.valid
    ok_rough = rough.slope >= 1.3 and rough.valid
    ok = ok_half and ok_rough and t_half < 900 and t_rough < 900
    verdict(5, ok, f"H=0.5 slope={half.slope:.3f}+-{half.slope_stderr:.3f} (target 3, "
                   f"{t_half:.0f}s); H=0.3 slope={rough.slope:.3f}+-{rough.slope_stderr:.3f} "
                   f"(>=1.3, reference {rough.gamma_theory:.3f}, {t_rough:.0f}s)")
    assert ok


def test_second_order_gain(verdict, scaling_half):
    rep, _ = scaling_half
    i = int(np.argmin(np.abs(rep.eps - 0.1)))
    frac = float(rep.gain_fraction[i])
    ok = frac >= 0.9
    verdict(6, ok, f"eps={rep.eps[i]:g} full error <= first-order error in {frac:.1%}")
    assert ok


def test_residual_orders(verdict):
    sys = make_system("swift-hohenberg", 32)
    notes, ok = [], True
    for k, H in enumerate((0.3, 0.5, 0.7)):
        res = residual_study(sys, H, replicas=12, seed=100 + k)
        good = res["spread_s"] <= 3.0 and res["spread_c"] <= 3.0
        ok &= good
        notes.append(f"H={H} stable={res['spread_s']:.2f} kernel={res['spread_c']:.2f}")
    verdict(7, ok, "max/median " + "; ".join(notes))
    assert ok


# Factorised convolution moments -----------------------------------------------

def test_moment_plateau(verdict):
    start = time.perf_counter()
    notes, ok = [], True
    for H, alpha in ((0.75, 0.2), (0.3, 0.1)):
        rep = convolution_moment_check(H, alpha, replicas=10**4, seed=3)
        gap = rep.plateau_gap()
        ok &= gap <= 0.15 and rep.bounded
        notes.append(f"(H,alpha)=({H},{alpha}) gap={gap:.3f}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 120.0
    verdict(8, ok, "; ".join(notes) + f"; {elapsed:.1f}s")
    assert ok


# High-probability event --------------------------------------------------------

def test_event_frequency(verdict):
    sys = make_system("laplacian", 32)
    reps = omega_study(sys, 0.5, (0.1, 0.05), replicas=200, kappa=0.05, seed=5)
    f1, f2 = reps[0].frequency, reps[1].frequency
    ok = f1 >= 0.95 and f2 >= f1
    per = ",".join(f"{x:.2f}" for x in reps[0].frequencies)
    verdict(9, ok, f"eps=0.1 freq={f1:.3f} (per condition {per}); eps=0.05 freq={f2:.3f}")
    assert ok


# Reproducibility ---------------------------------------------------------------

COMMANDS = [
    ["gen-fbm", "--hurst", "0.3", "--steps", "512", "--seed", "11"],
    ["simulate", "--hurst", "0.4", "--eps", "0.3", "--modes", "16", "--noise-modes", "16",
     "--seed", "2", "--no-plots"],
    ["holder-check", "--check", "continuous", "--no-plots"],
    ["convolution-moments", "--hurst", "0.6", "--alpha", "0.2", "--replicas", "2000",
     "--no-plots"],
]


def test_cli_determinism(verdict, tmp_path):
    mismatched = []
    for k, argv in enumerate(COMMANDS):
        outs = [tmp_path / f"{k}{tag}" for tag in "ab"]
        for out in outs:
            main(argv + ["--out", str(out)])
        names = sorted(p.name for p in outs[0].iterdir())
        if names != sorted(p.name for p in outs[1].iterdir()):
            mismatched.append(f"{argv[0]}:file set")
            continue
        mismatched += [f"{argv[0]}:{nm}" for nm in names
                       if (outs[0] / nm).read_bytes() != (outs[1] / nm).read_bytes()]
    ok = not mismatched
    verdict(10, ok, f"{len(COMMANDS)} commands byte-identical" if ok
            else "differs: " + ",".join(mismatched))
    assert ok
