"""Tests for the exponential-Euler SPDE integrator and the stochastic convolution."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from ampeq.fbm import generate_qfbm, PowerLaw
from ampeq.spde import (FAST_DT_CAP, ExpEulerStepper, convolution_batch, default_dt_fast,
                        fast_step_count, integrate_batch, phi1, read_manifest, read_trajectory,
                        solve_spde, stochastic_convolution, write_manifest, write_trajectory)
from ampeq.spectral import make_system


class TestStepSizes:
    @given(eps=st.floats(0.01, 0.5), T0=st.floats(0.1, 2.0))
    @settings(max_examples=50)
    def test_fast_step_divides_slow_step(self, eps, T0):
        dt = default_dt_fast(eps, T0)
        slow = T0 / eps**2 / 1024
        assert dt <= FAST_DT_CAP * (1 + 1e-12)
        assert slow / dt == pytest.approx(round(slow / dt), abs=1e-6)
        assert fast_step_count(eps, T0, dt) * dt == pytest.approx(T0 / eps**2, rel=1e-9)

    def test_phi1(self):
        z = np.array([0.0, -1e-12, -1e-3, -1.0, -50.0])
        ref = np.where(z == 0, 1.0, np.expm1(z) / np.where(z == 0, 1.0, z))
        ref[1] = 1.0
        np.testing.assert_allclose(phi1(z), ref, rtol=1e-12)


class TestDeterministic:
    def test_kernel_mode_matches_ode(self):
        # only the constant mode is excited: x' = eps^2 nu x - x^3 / (2 pi)
        sys = make_system("laplacian", 8)
        eps, T0 = 0.1, 1.0
        c = 0.05
        u0 = np.zeros(sys.dim)
        u0[0] = c * math.sqrt(2 * math.pi)
        run = solve_spde(sys, 0.5, eps, T0, dt_fast=0.01, u0=u0, noise="zero", stride=100)
        times = np.minimum(run.times, T0 / eps**2)
        ref = solve_ivp(lambda t, x: eps**2 * x - x**3 / (2 * math.pi), (0, T0 / eps**2),
                        [u0[0]], t_eval=times, rtol=1e-11, atol=1e-14).y[0]
        np.testing.assert_allclose(run.trajectory[:, 0], ref, rtol=1e-5)
        assert np.abs(run.trajectory[:, 1:]).max() < 1e-14

    @pytest.mark.parametrize("dt", [0.01, 0.1, 1.0])
    def test_linear_stable_mode_decay(self, dt):
        sys = make_system("laplacian", 4, nu=0.5, cubic=0.0)
        u0 = np.zeros(sys.dim)
        u0[3] = 1.0                                   # cos(2x), lambda = -4
        steps = int(round(2.0 / dt))
        snaps, _, _ = integrate_batch(sys, 0.2, 0.5, dt, u0, None, steps, stride=steps)
        exact = math.exp(2.0 * (-4.0 + 0.04 * 0.5))
        scheme = (math.exp(-4.0 * dt) * (1 + dt * 0.02)) ** steps
        assert snaps[0, -1, 3] == pytest.approx(scheme, rel=1e-12)
        assert abs(snaps[0, -1, 3] - exact) <= 0.03 * dt

    def test_stiff_steps_stay_finite(self):
        sys = make_system("swift-hohenberg", 32, cubic=0.0)
        u0 = np.ones(sys.dim)
        snaps, _, blow = integrate_batch(sys, 0.1, 0.5, 5.0, u0, None, 10)
        assert np.all(np.isfinite(snaps)) and blow[0] == -1


class TestNoiseCoupling:
    def test_linear_solution_is_convolution(self):
        sys = make_system("laplacian", 6, nu=0.0, cubic=0.0)
        H, eps, dt, n = 0.4, 0.3, 0.05, 200
        noise = generate_qfbm(H, 8, PowerLaw(2.0), n, dt, seed=11)
        u0 = np.random.default_rng(0).standard_normal(sys.dim)
        snaps, _, _ = integrate_batch(sys, eps, H, dt, u0, noise.values[None], n)
        conv = convolution_batch(sys, noise.values, dt, "left", V0=None)
        decay = np.exp(np.outer(dt * np.arange(n + 1), sys.eigenvalues))
        expected = u0 * decay + eps ** (2 * H + 1) * conv
        np.testing.assert_allclose(snaps[0], expected, atol=1e-12)
        # kernel coordinate carries the raw noise
        np.testing.assert_allclose(snaps[0, :, 0] - u0[0], eps ** (2 * H + 1) * noise.values[0],
                                   atol=1e-13)

    def test_too_many_noise_modes(self):
        sys = make_system("laplacian", 4)
        noise = generate_qfbm(0.5, 12, PowerLaw(2.0), 4, 0.1, seed=0)
        with pytest.raises(ValueError):
            integrate_batch(sys, 0.1, 0.5, 0.1, np.zeros(sys.dim), noise.values[None], 4)

    def test_blowup_is_flagged(self):
        sys = make_system("laplacian", 4, cubic=-1.0)
        u0 = np.zeros(sys.dim)
        u0[0] = 10.0
        run = solve_spde(sys, 0.5, 0.5, 1.0, dt_fast=0.01, u0=u0, noise="zero", stride=1)
        assert run.truncated and run.blowup_time > 0
        assert np.isnan(run.trajectory[-1]).all()

    def test_seeded_runs_repeat(self):
        sys = make_system("swift-hohenberg", 8)
        a = solve_spde(sys, 0.3, 0.3, 0.5, seed=4, noise_modes=8)
        b = solve_spde(sys, 0.3, 0.3, 0.5, seed=4, noise_modes=8)
        c = solve_spde(sys, 0.3, 0.3, 0.5, seed=5, noise_modes=8)
        np.testing.assert_array_equal(a.trajectory, b.trajectory)
        assert not np.array_equal(a.trajectory, c.trajectory)

    def test_noise_must_match(self):
        sys = make_system("laplacian", 4)
        noise = generate_qfbm(0.3, 4, PowerLaw(2.0), 100, 0.02, seed=0)
        with pytest.raises(ValueError):
            solve_spde(sys, 0.3, 0.5, 1.0, dt_fast=0.01, noise=noise)
        with pytest.raises(ValueError):
            solve_spde(sys, 0.6, 0.5, 0.5, dt_fast=0.02, noise=noise)
        with pytest.raises(ValueError):
            solve_spde(sys, 0.3, 0.5, 1.0, noise="white")


class TestConvolution:
    @given(lam_k=st.integers(1, 6), slope=st.floats(-3.0, 3.0), dt=st.floats(0.001, 0.5))
    @settings(max_examples=40)
    def test_exponential_rule_exact_for_linear_noise(self, lam_k, slope, dt):
        sys = make_system("laplacian", 6)
        j = 2 * lam_k - 1
        n = 40
        t = dt * np.arange(n + 1)
        W = np.zeros((j + 1, n + 1))
        W[j] = slope * t
        lam = -(lam_k**2)
        exact = slope * np.expm1(lam * t) / lam
        out = convolution_batch(sys, W, dt, "exponential")
        np.testing.assert_allclose(out[:, j], exact, atol=1e-12)

    def test_left_rule_is_first_order(self):
        sys = make_system("laplacian", 2)
        errs = []
        for dt in (0.02, 0.01, 0.005):
            n = int(round(1.0 / dt))
            W = np.zeros((2, n + 1))
            W[1] = dt * np.arange(n + 1)
            out = convolution_batch(sys, W, dt, "left")
            errs.append(abs(out[-1, 1] - (1 - math.exp(-1.0))))
        ratios = np.array(errs[:-1]) / np.array(errs[1:])
        np.testing.assert_allclose(ratios, 2.0, rtol=0.05)

    def test_unknown_rule(self):
        with pytest.raises(ValueError):
            convolution_batch(make_system("laplacian", 2), np.zeros((1, 3)), 0.1, "midpoint")

    def test_zero_noise_needs_length(self):
        sys = make_system("laplacian", 2)
        with pytest.raises(ValueError):
            stochastic_convolution(sys, None, 0.1)
        assert stochastic_convolution(sys, None, 0.1, n_steps=5).shape == (6, 5)

    def test_stepper_linear_step_matches_left_rule(self):
        sys = make_system("swift-hohenberg", 4)
        noise = generate_qfbm(0.7, 9, PowerLaw(2.0), 30, 0.1, seed=3)
        st_ = ExpEulerStepper(sys, 0.2, 0.7, 0.1)
        V = np.zeros(sys.dim)
        dW = np.diff(noise.values, axis=1)
        for m in range(30):
            V = st_.linear_step(V, dW[:, m])
        ref = convolution_batch(sys, noise.values, 0.1, "left")[-1]
        stable = ~sys.kernel_mask
        np.testing.assert_allclose(V[stable], ref[stable], atol=1e-13)


class TestStorage:
    def test_manifest_round_trip(self, tmp_path):
        write_manifest({"H": 0.3, "preset": "laplacian", "modes": 32}, tmp_path / "m.txt")
        with open(tmp_path / "m.txt", "a") as fh:
            fh.write("# comment line\n\nseed = 7  # trailing\n")
        assert read_manifest(tmp_path / "m.txt") == {"H": "0.3", "preset": "laplacian",
                                                     "modes": "32", "seed": "7"}

    def test_manifest_rejects_garbage(self, tmp_path):
        (tmp_path / "m.txt").write_text("no equals sign\n")
        with pytest.raises(ValueError):
            read_manifest(tmp_path / "m.txt")

    def test_trajectory_round_trip(self, tmp_path):
        sys = make_system("laplacian", 4)
        run = solve_spde(sys, 0.5, 0.5, 0.25, seed=2, noise_modes=4, stride=3)
        write_trajectory(run, tmp_path / "t.bin")
        back = read_trajectory(tmp_path / "t.bin")
        np.testing.assert_array_equal(back["trajectory"], run.trajectory)
        np.testing.assert_array_equal(back["steps"], run.snapshot_steps)
        assert (back["H"], back["eps"], back["seed"], back["stride"]) == (0.5, 0.5, 2, 3)

    def test_trajectory_rejects_other_files(self, tmp_path):
        (tmp_path / "x.bin").write_bytes(bytes(200))
        with pytest.raises(ValueError):
            read_trajectory(tmp_path / "x.bin")
