"""Tests for fBm covariance, kernel, path synthesis and Q-fBm fields."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from ampeq.fbm import (Explicit, FbmPath, Method, PowerLaw, check_hurst, fbm_covariance,
                       fbm_kernel_K, fgn_autocovariance, generate_fbm, generate_qfbm,
                       kernel_constant, kernel_covariance, quadratic_form_fgn, read_path_binary,
                       rescale_selfsimilar, sample_fbm, splitmix64, write_path_binary,
                       write_path_csv)

hursts = st.floats(min_value=0.05, max_value=0.95)


class TestValidation:
    @pytest.mark.parametrize("H", [0.0, 1.0, -0.2, 1.5, float("nan")])
    def test_rejects_hurst_outside_open_interval(self, H):
        with pytest.raises(ValueError):
            check_hurst(H)

    def test_method_aliases(self):
        assert Method.parse("Davies-Harte") is Method.CIRCULANT
        assert Method.parse("cholesky") is Method.CHOLESKY
        with pytest.raises(ValueError):
            Method.parse("hosking")

    def test_path_must_start_at_origin(self):
        with pytest.raises(ValueError):
            FbmPath(hurst=0.5, dt=0.1, values=np.array([1.0, 2.0]), seed=0)

    def test_power_law_requires_trace_class(self):
        with pytest.raises(ValueError):
            PowerLaw(1.0).eigenvalues(4)

    def test_explicit_spectrum_checks_length_and_sign(self):
        with pytest.raises(ValueError):
            Explicit((1.0, 0.5)).eigenvalues(3)
        with pytest.raises(ValueError):
            Explicit((1.0, -0.5)).eigenvalues(2)


class TestCovariance:
    def test_brownian_case_is_min(self):
        t = np.array([0.3, 1.0, 2.5])
        s = np.array([0.7, 0.4, 2.5])
        np.testing.assert_allclose(fbm_covariance(t, s, 0.5), np.minimum(t, s), atol=1e-15)

    @given(H=hursts, t=st.floats(0.0, 10.0))
    def test_diagonal_is_power(self, H, t):
        assert fbm_covariance(t, t, H) == pytest.approx(t ** (2 * H), rel=1e-12, abs=1e-300)

    @given(H=hursts, data=st.data())
    @settings(max_examples=40)
    def test_covariance_matrix_is_positive_semidefinite(self, H, data):
        ts = np.sort(np.array(data.draw(st.lists(st.floats(0.01, 5.0), min_size=2, max_size=8))))
        C = fbm_covariance(ts[:, None], ts[None, :], H)
        assert np.linalg.eigvalsh(C).min() > -1e-9 * max(1.0, C.max())

    def test_negative_times_rejected(self):
        with pytest.raises(ValueError):
            fbm_covariance(-1.0, 1.0, 0.5)

    @pytest.mark.parametrize("H", [0.25, 0.5, 0.75])
    def test_increment_correlation_sign(self, H):
        rho1 = fgn_autocovariance(1, H)
        assert np.sign(rho1) == np.sign(2 * H - 1)
        assert fgn_autocovariance(0, H) == pytest.approx(1.0)

    @given(H=hursts, n=st.integers(1, 200))
    def test_fgn_sums_to_fbm_variance(self, H, n):
        # Var(sum of n unit increments) = n^{2H}
        assert quadratic_form_fgn(np.ones(n), H, 1.0) == pytest.approx(n ** (2 * H), rel=1e-9)


class TestKernel:
    @pytest.mark.parametrize("H", [0.6, 0.7, 0.85])
    def test_constant_matches_closed_form(self, H):
        closed = math.sqrt(H * (2 * H - 1) / special.beta(2 - 2 * H, H - 0.5))
        assert kernel_constant(H) == pytest.approx(closed, rel=1e-8)

    @pytest.mark.parametrize("s,t", [(0.5, 1.0), (1.0, 1.0), (0.2, 0.9)])
    def test_kernel_rebuilds_covariance(self, s, t):
        assert kernel_covariance(s, t, 0.7) == pytest.approx(fbm_covariance(s, t, 0.7), rel=1e-6)

    def test_kernel_is_positive(self):
        assert fbm_kernel_K(1.0, 0.3, 0.7) > 0

    def test_kernel_needs_rough_free_regime(self):
        with pytest.raises(ValueError):
            kernel_constant(0.4)
        with pytest.raises(ValueError):
            fbm_kernel_K(1.0, 1.5, 0.7)


class TestSynthesis:
    def test_seeded_paths_are_reproducible(self):
        a = generate_fbm(0.3, 256, 0.01, seed=5)
        b = generate_fbm(0.3, 256, 0.01, seed=5)
        c = generate_fbm(0.3, 256, 0.01, seed=6)
        assert np.array_equal(a.values, b.values)
        assert not np.array_equal(a.values, c.values)

    @pytest.mark.parametrize("method", [Method.CIRCULANT, Method.CHOLESKY])
    @pytest.mark.parametrize("H", [0.3, 0.7])
    def test_increment_covariance(self, H, method):
        rng = np.random.default_rng(1)
        vals, used = sample_fbm(H, 16, 0.5, 20_000, rng, method)
        assert used is method
        inc = np.diff(vals, axis=1)
        emp = inc.T @ inc / inc.shape[0]
        lags = np.abs(np.subtract.outer(np.arange(16), np.arange(16)))
        exact = fgn_autocovariance(lags, H) * 0.5 ** (2 * H)
        assert np.max(np.abs(emp - exact)) < 6 * 0.5 ** (2 * H) * math.sqrt(2 / 20_000)

    def test_fresh_draws_differ_on_same_generator(self):
        rng = np.random.default_rng(0)
        a, _ = sample_fbm(0.5, 8, 1.0, 2, rng)
        b, _ = sample_fbm(0.5, 8, 1.0, 2, rng)
        assert not np.array_equal(a, b)

    @given(a=st.floats(0.1, 20.0))
    def test_rescale_moves_grid_and_values(self, a):
        p = generate_fbm(0.6, 32, 0.1, seed=2)
        r = rescale_selfsimilar(p, a)
        assert r.dt == pytest.approx(p.dt / a)
        np.testing.assert_allclose(r.values, p.values * a ** (-0.6))


class TestQField:
    def test_weights_and_trace(self):
        f = generate_qfbm(0.4, 6, PowerLaw(2.0), n=64, dt=0.1, seed=9)
        q = np.arange(1, 7, dtype=float) ** -2
        assert f.trace == pytest.approx(q.sum())
        comp = np.stack([p.values for p in f.component_paths])
        np.testing.assert_allclose(f.values, comp * np.sqrt(q)[:, None])

    def test_modes_use_distinct_sub_seeds(self):
        f = generate_qfbm(0.4, 4, PowerLaw(2.0), n=32, dt=0.1, seed=1)
        seeds = {p.seed for p in f.component_paths}
        assert len(seeds) == 4
        assert not np.allclose(f.component_paths[0].values, f.component_paths[1].values)

    def test_subsample_keeps_same_path(self):
        f = generate_qfbm(0.7, 3, PowerLaw(2.0), n=64, dt=0.05, seed=4)
        g = f.subsample(4)
        assert g.n == 16 and g.dt == pytest.approx(0.2)
        np.testing.assert_array_equal(g.values, f.values[:, ::4])
        with pytest.raises(ValueError):
            f.subsample(3)

    def test_fingerprint_tracks_content(self):
        a = generate_qfbm(0.5, 3, PowerLaw(2.0), n=16, dt=0.1, seed=1)
        b = generate_qfbm(0.5, 3, PowerLaw(2.0), n=16, dt=0.1, seed=1)
        c = generate_qfbm(0.5, 3, PowerLaw(2.0), n=16, dt=0.1, seed=2)
        assert a.fingerprint() == b.fingerprint() != c.fingerprint()


class TestSeeds:
    @given(seed=st.integers(0, 2**63), index=st.integers(0, 10_000))
    def test_sub_seed_is_64_bit(self, seed, index):
        assert 0 <= splitmix64(seed, index) < 2**64

    def test_sub_seeds_distinct(self):
        vals = {splitmix64(s, i) for s in range(20) for i in range(200)}
        assert len(vals) == 4000


class TestSerialisation:
    def test_binary_round_trip(self, tmp_path):
        p = generate_fbm(0.35, 100, 0.02, seed=77, method="cholesky")
        write_path_binary(p, tmp_path / "p.bin")
        q = read_path_binary(tmp_path / "p.bin")
        assert (q.hurst, q.dt, q.seed, q.method) == (p.hurst, p.dt, p.seed, p.method)
        np.testing.assert_array_equal(q.values, p.values)

    def test_binary_rejects_wrong_magic(self, tmp_path):
        (tmp_path / "x.bin").write_bytes(b"NOPE" + bytes(60))
        with pytest.raises(ValueError):
            read_path_binary(tmp_path / "x.bin")

    def test_csv_layout(self, tmp_path):
        p = generate_fbm(0.5, 4, 0.25, seed=0)
        write_path_csv(p, tmp_path / "p.csv")
        lines = (tmp_path / "p.csv").read_text().splitlines()
        assert lines[0] == "t,value" and len(lines) == 6
        assert lines[1] == "0.0,0.0"
