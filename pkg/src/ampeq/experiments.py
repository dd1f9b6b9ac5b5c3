"""Residuals, pathwise errors, eps-sweeps, event monitors and moment checks.

Every comparison between the SPDE solution u and its approximation psi uses
one noise path for both; batched runs rebuild the approximation in lockstep
with the SPDE integrator so nothing of size (steps x modes x replicas) is kept.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, special, stats

from .amplitude import (PsiPath, assemble_psi, integrate_amplitude, rescaled_noise_b,
                        solve_amplitude, solve_fou)
from .fbm import (PowerLaw, QFbmField, check_hurst, generate_qfbm, quadratic_form_fgn,
                  sample_fbm, splitmix64)
from .holder import SampledFunction, exp_quadrature, holder_norm
from .spde import (ExpEulerStepper, SpdeRun, convolution_batch, default_dt_fast,
                   fast_step_count, integrate_batch)
from .spectral import SpectralSystem, make_system

__all__ = [
    "GammaExponent",
    "gamma_exponent",
    "residual_s",
    "ResidualC",
    "residual_c",
    "residual_c_direct",
    "pathwise_error",
    "default_initial_data",
    "CoupledErrors",
    "coupled_errors",
    "ScalingConfig",
    "ScalingReport",
    "scaling_study",
    "residual_study",
    "OmegaReport",
    "omega_conditions",
    "omega_event_monitor",
    "omega_study",
    "MomentReport",
    "convolution_moment_check",
    "jobs_from_env",
]

DEFAULT_EPS_GRID = (0.2, 0.141, 0.1, 0.071, 0.05)
MAX_EXCLUDED_FRACTION = 0.05


# ---------------------------------------------------------------------------
# Approximation order
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GammaExponent:
    H: float
    gamma: float


def gamma_exponent(H: float) -> GammaExponent:
    """3 for H >= 1/2 and (1 + H)/(1 - H) below, continuous at H = 1/2."""
    H = check_hurst(H)
    g = 3.0 if H >= 0.5 else (1.0 + H) / (1.0 - H)
    return GammaExponent(H=H, gamma=g)


# ---------------------------------------------------------------------------
# Residuals
# ---------------------------------------------------------------------------

def _chunked_F(sys: SpectralSystem, u, v=None, w=None, chunk: int = 8192) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    for i in range(0, u.shape[0], chunk):
        sl = slice(i, i + chunk)
        out[sl] = sys.apply_F(u[sl], None if v is None else v[sl], None if w is None else w[sl])
    return out


def residual_s(psi: np.ndarray, sys: SpectralSystem, eps: float, dt: float,
               return_field: bool = False):
    """Norms of P_s Res(psi)(t_m) = int_0^{t_m} e^{(t_m - tau)L} P_s(eps^2 A psi + F(psi)) dtau.

    ``psi`` has shape ``(n+1, dim)`` on the fast grid with step ``dt``.
    """
    psi = np.asarray(psi, dtype=float)
    g = sys.project_s(eps**2 * sys.apply_A(psi) + _chunked_F(sys, psi))
    stable = ~sys.kernel_mask
    res = np.zeros_like(psi)
    res[:, stable] = exp_quadrature(g[:, stable], sys.eigenvalues[stable], dt)
    norms = np.linalg.norm(res, axis=1)
    return (norms, res) if return_field else norms


@dataclass(frozen=True)
class ResidualC:
    """Cumulative P_c residual split into its four cubic-expansion terms.

    ``terms`` has shape ``(4, n+1, dim N)``: the A_c psi_s term, then the
    terms linear, quadratic and cubic in psi_s.
    """

    terms: np.ndarray
    eps: float
    H: float

    @property
    def total(self) -> np.ndarray:
        return self.terms.sum(axis=0)

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.total, axis=1)

    def term_sups(self) -> np.ndarray:
        return np.linalg.norm(self.terms, axis=2).max(axis=1)


def residual_c(psi_c: np.ndarray, psi_s: np.ndarray, sys: SpectralSystem, eps: float,
               H: float, dt: float) -> ResidualC:
    """P_c Res(psi) from the expansion

        eps^{2H+3} int A_c psi_s + 3 eps^{2H+3} int F_c(psi_c, psi_c, psi_s)
        + 3 eps^{4H+3} int F_c(psi_c, psi_s, psi_s) + eps^{6H+3} int F_c(psi_s),

    integrated over fast time with the trapezoidal rule.  ``psi_c`` holds
    kernel coordinates ``(n+1, dim N)``; ``psi_s`` full coordinates.
    """
    H = check_hurst(H)
    C = sys.from_kernel(np.asarray(psi_c, dtype=float))
    S = sys.project_s(np.asarray(psi_s, dtype=float))
    integrands = [
        eps ** (2 * H + 3) * sys.apply_A(S),
        3.0 * eps ** (2 * H + 3) * _chunked_F(sys, C, C, S),
        3.0 * eps ** (4 * H + 3) * _chunked_F(sys, C, S, S),
        eps ** (6 * H + 3) * _chunked_F(sys, S),
    ]
    terms = np.stack([
        integrate.cumulative_trapezoid(sys.to_kernel(g), dx=dt, axis=0, initial=0.0)
        for g in integrands])
    return ResidualC(terms=terms, eps=float(eps), H=H)


def residual_c_direct(psi: np.ndarray, sys: SpectralSystem, eps: float, dt: float) -> np.ndarray:
    """int_0^t eps^2 A_c P_s psi + F_c(psi) - F_c(P_c psi) dtau, kernel coordinates per time."""
    psi = np.asarray(psi, dtype=float)
    pc = sys.project_c(psi)
    g = eps**2 * sys.apply_A(sys.project_s(psi)) + _chunked_F(sys, psi) - _chunked_F(sys, pc)
    return integrate.cumulative_trapezoid(sys.to_kernel(g), dx=dt, axis=0, initial=0.0)


# ---------------------------------------------------------------------------
# Pathwise error
# ---------------------------------------------------------------------------

def pathwise_error(run: SpdeRun, psi) -> float:
    """sup over stored snapshots of |u(t) - psi(t)|; both must share one noise path."""
    if isinstance(psi, PsiPath):
        if psi.noise_fingerprint is not None and run.noise is not None:
            if psi.noise_fingerprint != run.noise.fingerprint():
                raise ValueError("psi was built from a different noise path")
        values = psi.values
    else:
        values = np.asarray(psi, dtype=float)
    if values.shape[0] == run.trajectory.shape[0]:
        sel = values
    else:
        sel = values[run.snapshot_steps]
    return float(np.linalg.norm(run.trajectory - sel, axis=1).max())


def default_initial_data(sys: SpectralSystem):
    """Amplitude a0 = (1, 0, ...) and psi_s0 = 1/2 on the first stable coordinate."""
    a0 = np.zeros(sys.kernel_dim)
    a0[0] = 1.0
    psi_s0 = np.zeros(sys.dim)
    psi_s0[np.flatnonzero(~sys.kernel_mask)[0]] = 0.5
    return a0, psi_s0


# ---------------------------------------------------------------------------
# Batched coupled runs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoupledErrors:
    """Per-replica sup errors of psi and of the first-order term eps a(eps^2 t)."""

    eps: float
    seeds: np.ndarray
    full: np.ndarray
    first: np.ndarray
    blowup: np.ndarray
    fingerprints: tuple


def _coupled_chunk(sys, H, eps, T0, dt, seeds, a0, psi_s0, noise_modes, spectrum):
    n = fast_step_count(eps, T0, dt)
    B = len(seeds)
    noises = [generate_qfbm(H, noise_modes, spectrum, n, dt, int(s)) for s in seeds]
    W = np.stack([nz.values for nz in noises])
    K = W.shape[1]
    # the kernel part of the SPDE scheme is a single Euler step per fast step,
    # so the amplitude is solved on the fast grid with the same rule
    dT = eps**2 * dt
    kidx = sys.kernel_idx
    b = np.zeros((B, n + 1, kidx.size))
    for i, j in enumerate(kidx):
        if j < K:
            b[:, :, i] = eps ** (2 * H) * W[:, j, :]
    a = integrate_amplitude(sys, np.tile(a0, (B, 1)), np.diff(b, axis=1), dT, tol=None)
    A = sys.from_kernel(a)
    stepper = ExpEulerStepper(sys, eps, H, dt)
    stable = ~sys.kernel_mask
    S = np.tile(sys.project_s(psi_s0), (B, 1))
    dW = np.zeros((B, sys.dim))
    full = np.zeros(B)
    first = np.zeros(B)
    scale_s = eps ** (2 * H + 1)
    state = {"S": S}

    def observe(m, U):
        if m > 0:
            dW[:, :K] = W[:, :, m] - W[:, :, m - 1]
            dW[:, ~stable] = 0.0
            state["S"] = stepper.linear_step(state["S"], dW)
        lead = eps * A[:, m]
        d1 = U - lead
        e_first = np.sqrt(np.einsum("ij,ij->i", d1, d1))
        d2 = d1 - scale_s * state["S"]
        e_full = np.sqrt(np.einsum("ij,ij->i", d2, d2))
        np.fmax(first, e_first, out=first)
        np.fmax(full, e_full, out=full)

    u0 = eps * A[:, 0] + scale_s * S
    _, _, blow = integrate_batch(sys, eps, H, dt, u0, W, n, stride=1, on_snapshot=observe,
                                 record=False)
    bad = blow >= 0
    full[bad] = np.nan
    first[bad] = np.nan
    return full, first, blow, tuple(nz.fingerprint() for nz in noises)


def coupled_errors(sys: SpectralSystem, H: float, eps: float, seeds: Sequence[int],
                   T0: float = 1.0, dt_fast: Optional[float] = None, a0=None, psi_s0=None,
                   noise_modes: int = 32, spectrum=PowerLaw(2.0), batch: int = 25,
                   jobs: int = 1) -> CoupledErrors:
    """Sup errors over [0, T0 eps^-2] for each seed, u and psi driven by one path."""
    H = check_hurst(H)
    dt = default_dt_fast(eps, T0) if dt_fast is None else float(dt_fast)
    d_a0, d_ps = default_initial_data(sys)
    a0 = d_a0 if a0 is None else np.asarray(a0, dtype=float)
    psi_s0 = d_ps if psi_s0 is None else np.asarray(psi_s0, dtype=float)
    seeds = np.asarray(seeds, dtype=np.uint64)
    chunks = [seeds[i:i + batch] for i in range(0, seeds.size, batch)]
    args = [(sys, H, eps, T0, dt, c, a0, psi_s0, noise_modes, spectrum) for c in chunks]
    if jobs > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_coupled_chunk_star, args))
    else:
        parts = [_coupled_chunk(*a) for a in args]
    return CoupledErrors(eps=float(eps), seeds=seeds,
                         full=np.concatenate([p[0] for p in parts]),
                         first=np.concatenate([p[1] for p in parts]),
                         blowup=np.concatenate([p[2] for p in parts]),
                         fingerprints=sum((p[3] for p in parts), ()))


def _coupled_chunk_star(args):
    return _coupled_chunk(*args)


def jobs_from_env(jobs: Optional[int] = None) -> int:
    """Worker count: explicit value, else AMPEQ_JOBS, else available CPUs."""
    if jobs is not None:
        return max(1, int(jobs))
    env = os.environ.get("AMPEQ_JOBS")
    if env:
        return max(1, int(env))
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity")
               else (os.cpu_count() or 1))


# ---------------------------------------------------------------------------
# eps-sweep of the approximation error
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalingConfig:
    H: float = 0.5
    eps_grid: tuple = DEFAULT_EPS_GRID
    replicas: int = 100
    preset: str = "laplacian"
    modes: int = 32
    noise_modes: int = 32
    rho: float = 2.0
    nu: float = 1.0
    T0: float = 1.0
    seed_base: int = 0
    batch: int = 25

    def __post_init__(self):
        check_hurst(self.H)
        grid = tuple(float(e) for e in self.eps_grid)
        if any(e <= 0 for e in grid) or any(b >= a for a, b in zip(grid, grid[1:])):
            raise ValueError("eps grid must be positive and strictly decreasing")
        object.__setattr__(self, "eps_grid", grid)
        if self.replicas < 1:
            raise ValueError("need at least one replica")

    def system(self) -> SpectralSystem:
        return make_system(self.preset, self.modes, self.nu)

    def seeds(self, i: int) -> np.ndarray:
        base = splitmix64(self.seed_base, i)
        return np.array([splitmix64(base, r) for r in range(self.replicas)], dtype=np.uint64)


@dataclass(frozen=True)
class ScalingReport:
    config: ScalingConfig
    eps: np.ndarray
    median: np.ndarray
    q10: np.ndarray
    q90: np.ndarray
    first_median: np.ndarray
    gain_fraction: np.ndarray
    excluded: np.ndarray
    slope: float
    slope_stderr: float
    first_slope: float
    gamma_theory: float
    errors: tuple = field(repr=False, default=())

    @property
    def valid(self) -> bool:
        return bool(np.all(self.excluded <= MAX_EXCLUDED_FRACTION * self.config.replicas))

    @property
    def passed(self) -> bool:
        H = self.config.H
        if H >= 0.5:
            ok = abs(self.slope - self.gamma_theory) <= 0.5
        else:
            ok = self.slope >= 1.0 + 2.0 * H - 0.3
        return bool(ok and self.valid)

    def rows(self):
        for i, e in enumerate(self.eps):
            yield {"H": self.config.H, "eps": e, "median_err": self.median[i],
                   "q10": self.q10[i], "q90": self.q90[i],
                   "replicas": self.config.replicas, "excluded": int(self.excluded[i])}

    def summary(self) -> dict:
        return {"H": self.config.H, "slope": self.slope, "slope_stderr": self.slope_stderr,
                "first_order_slope": self.first_slope, "gamma_theory": self.gamma_theory,
                "valid": self.valid, "pass": self.passed}

    def write_csv(self, dest) -> None:
        with open(dest, "w") as fh:
            fh.write("H,eps,median_err,q10,q90,replicas,excluded\n")
            for r in self.rows():
                fh.write(",".join(repr(float(v)) if isinstance(v, float) else str(v)
                                  for v in r.values()) + "\n")


def _fit_slope(eps: np.ndarray, vals: np.ndarray):
    ok = np.isfinite(vals) & (vals > 0)
    if ok.sum() < 2:
        return float("nan"), float("nan")
    fit = stats.linregress(np.log(eps[ok]), np.log(vals[ok]))
    return float(fit.slope), float(fit.stderr)


def scaling_study(config: ScalingConfig, jobs: int = 1, progress=None) -> ScalingReport:
    """Median sup-error of psi versus eps and its least-squares log-log slope."""
    sys = config.system()
    spectrum = PowerLaw(config.rho)
    eps = np.asarray(config.eps_grid)
    med, q10, q90, fmed, gain, excl, errs = [], [], [], [], [], [], []
    for i, e in enumerate(eps):
        res = coupled_errors(sys, config.H, float(e), config.seeds(i), T0=config.T0,
                             noise_modes=config.noise_modes, spectrum=spectrum,
                             batch=config.batch, jobs=jobs)
        ok = np.isfinite(res.full)
        full, first = res.full[ok], res.first[ok]
        med.append(np.median(full))
        q10.append(np.quantile(full, 0.1))
        q90.append(np.quantile(full, 0.9))
        fmed.append(np.median(first))
        gain.append(float(np.mean(full <= first)))
        excl.append(int((~ok).sum()))
        errs.append(res)
        if progress is not None:
            progress(f"eps={e:g} median={med[-1]:.3e} first={fmed[-1]:.3e}")
    med = np.asarray(med)
    slope, stderr = _fit_slope(eps, med)
    first_slope, _ = _fit_slope(eps, np.asarray(fmed))
    return ScalingReport(config=config, eps=eps, median=med, q10=np.asarray(q10),
                         q90=np.asarray(q90), first_median=np.asarray(fmed),
                         gain_fraction=np.asarray(gain), excluded=np.asarray(excl),
                         slope=slope, slope_stderr=stderr, first_slope=first_slope,
                         gamma_theory=gamma_exponent(config.H).gamma, errors=tuple(errs))


# ---------------------------------------------------------------------------
# Residual sweep
# ---------------------------------------------------------------------------

def _psi_from_noise(sys, noise, eps, H, T0, a0, psi_s0):
    dt = noise.dt
    dT = eps**2 * dt
    b = rescaled_noise_b(noise, eps, H, sys, dT, T0)
    ap = solve_amplitude(sys, b, a0, dT, tol=None)
    fp = solve_fou(sys, noise, eps, H, dt, psi_s0)
    return assemble_psi(ap, fp, eps, H, sys, noise.fingerprint())


def residual_study(sys: SpectralSystem, H: float, eps_grid: Sequence[float] = DEFAULT_EPS_GRID,
                   replicas: int = 20, seed: int = 0, T0: float = 1.0,
                   noise_modes: int = 32, spectrum=PowerLaw(2.0)) -> dict:
    """Median over replicas of sup|P_s Res| / eps^3 and sup|P_c Res| / eps^gamma(H)."""
    H = check_hurst(H)
    gamma = gamma_exponent(H).gamma
    a0, psi_s0 = default_initial_data(sys)
    eps = np.asarray(eps_grid, dtype=float)
    sup_s = np.zeros((eps.size, replicas))
    sup_c = np.zeros((eps.size, replicas))
    terms = np.zeros((eps.size, replicas, 4))
    for i, e in enumerate(eps):
        dt = default_dt_fast(e, T0)
        n = fast_step_count(e, T0, dt)
        base = splitmix64(seed, i)
        for r in range(replicas):
            noise = generate_qfbm(H, noise_modes, spectrum, n, dt, splitmix64(base, r))
            psi = _psi_from_noise(sys, noise, e, H, T0, a0, psi_s0)
            sup_s[i, r] = residual_s(psi.values, sys, e, dt).max()
            rc = residual_c(psi.psi_c, psi.psi_s, sys, e, H, dt)
            sup_c[i, r] = rc.norms.max()
            terms[i, r] = rc.term_sups()
    ratio_s = np.median(sup_s, axis=1) / eps**3
    ratio_c = np.median(sup_c, axis=1) / eps**gamma
    return {
        "H": H, "gamma": gamma, "eps": eps,
        "sup_s": sup_s, "sup_c": sup_c, "terms": terms,
        "ratio_s": ratio_s, "ratio_c": ratio_c,
        "spread_s": float(ratio_s.max() / np.median(ratio_s)),
        "spread_c": float(ratio_c.max() / np.median(ratio_c)),
    }


# ---------------------------------------------------------------------------
# High-probability event
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OmegaReport:
    eps: float
    H: float
    kappa: float
    beta: float
    conditions: np.ndarray      # (replicas, 4) booleans
    values: np.ndarray          # (replicas, 4) measured quantities
    thresholds: tuple

    @property
    def frequencies(self) -> np.ndarray:
        return self.conditions.mean(axis=0)

    @property
    def frequency(self) -> float:
        return float(self.conditions.all(axis=1).mean())


def _default_beta(H: float, kappa: float) -> float:
    return H - kappa if H <= 0.5 else 0.5 * (0.5 + H)


def omega_conditions(noise: Optional[QFbmField], sys: SpectralSystem, eps: float, H: float,
                     kappa: float, a0, psi_s0, beta: Optional[float] = None,
                     n_steps: Optional[int] = None):
    """Measured quantities and thresholds of the four defining conditions.

    1. sup_t |P_s W_L(t)| over the fast horizon <= eps^-kappa
    2. C^beta norm of T -> W(T eps^-2) on the slow interval <= eps^{-2H-kappa}
    3. |psi_s(0)| <= eps^-kappa
    4. |psi_c(0)| <= eps^-kappa
    """
    beta = _default_beta(H, kappa) if beta is None else float(beta)
    thr = (eps**-kappa, eps ** (-2 * H - kappa), eps**-kappa, eps**-kappa)
    if noise is None:
        v1 = v2 = 0.0
    else:
        WL = convolution_batch(sys, noise.values, noise.dt, "left")
        v1 = float(np.linalg.norm(sys.project_s(WL), axis=1).max())
        T = noise.n * noise.dt * eps**2
        v2 = holder_norm(SampledFunction(noise.values.T, T), beta)
    v3 = float(np.linalg.norm(sys.project_s(np.asarray(psi_s0, dtype=float))))
    v4 = float(np.linalg.norm(np.asarray(a0, dtype=float)))
    vals = np.array([v1, v2, v3, v4])
    return vals, np.array(thr), beta


def omega_event_monitor(noises, sys: SpectralSystem, eps: float, H: float, kappa: float = 0.05,
                        a0=None, psi_s0=None, beta: Optional[float] = None) -> OmegaReport:
    """Per-replica truth values of the four conditions and their empirical frequency."""
    H = check_hurst(H)
    d_a0, d_ps = default_initial_data(sys)
    a0 = d_a0 if a0 is None else a0
    psi_s0 = d_ps if psi_s0 is None else psi_s0
    vals, conds = [], []
    thr = None
    b = None
    for nz in noises:
        v, thr, b = omega_conditions(nz, sys, eps, H, kappa, a0, psi_s0, beta)
        vals.append(v)
        conds.append(v <= thr)
    return OmegaReport(eps=float(eps), H=H, kappa=float(kappa), beta=float(b),
                       conditions=np.asarray(conds), values=np.asarray(vals),
                       thresholds=tuple(float(x) for x in thr))


def omega_study(sys: SpectralSystem, H: float, eps_list: Sequence[float], replicas: int = 200,
                kappa: float = 0.05, seed: int = 0, T0: float = 1.0, noise_modes: int = 32,
                spectrum=PowerLaw(2.0)) -> list:
    """Event frequencies for each eps (fresh noise per replica)."""
    out = []
    for i, e in enumerate(eps_list):
        dt = default_dt_fast(e, T0)
        n = fast_step_count(e, T0, dt)
        base = splitmix64(seed, i)
        noises = (generate_qfbm(H, noise_modes, spectrum, n, dt, splitmix64(base, r))
                  for r in range(replicas))
        out.append(omega_event_monitor(noises, sys, e, H, kappa))
    return out


# ---------------------------------------------------------------------------
# Second moments of the factorised convolution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MomentReport:
    H: float
    alpha: float
    lam: float
    times: np.ndarray
    estimates: np.ndarray
    stderr: np.ndarray
    exact: np.ndarray
    replicas: int

    def _at(self, t: float) -> float:
        idx = np.flatnonzero(np.isclose(self.times, t))
        if idx.size == 0:
            raise KeyError(f"no estimate at t={t}")
        return float(self.estimates[idx[0]])

    def plateau_gap(self, t1: float = 5.0, t2: float = 10.0) -> float:
        """Relative difference of the estimates at t1 and t2."""
        a, b = self._at(t1), self._at(t2)
        return abs(a - b) / max(a, b)

    @property
    def max_over_min(self) -> float:
        return float(self.estimates.max() / self.estimates.min())

    @property
    def bounded(self) -> bool:
        return bool(np.all(np.isfinite(self.estimates)) and self.max_over_min <= 2.0)


def _factor_weights(t: float, dt: float, n: int, alpha: float, lam: float) -> np.ndarray:
    # step averages of k(s) = s^-alpha e^{lam s} over each increment interval
    rate = -lam
    r = dt * np.arange(n + 1)
    s = np.clip(t - r, 0.0, None)
    G = rate ** (alpha - 1.0) * special.gamma(1.0 - alpha) * special.gammainc(1.0 - alpha, rate * s)
    return (G[:-1] - G[1:]) / dt


def convolution_moment_check(H: float, alpha: float, lam: float = -1.0,
                             times: Sequence[float] = (1.0, 2.0, 5.0, 10.0),
                             replicas: int = 10_000, dt: float = 0.01, seed: int = 0,
                             batch: int = 2000) -> MomentReport:
    """Monte Carlo E|Y(t)|^2 for Y(t) = int_0^t (t-r)^-alpha e^{(t-r) lam} dB^H(r).

    The noise differential is taken as the piecewise-linear interpolant of
    the sampled path; the same discretisation gives an exact reference value
    through the fractional Gaussian noise covariance.
    """
    H = check_hurst(H)
    if not (0.0 < alpha < H):
        raise ValueError("the factorisation exponent must lie in (0, H)")
    if lam >= 0:
        raise ValueError("need a stable rate lam < 0")
    times = np.asarray(sorted(times), dtype=float)
    n = int(round(times[-1] / dt))
    W = [_factor_weights(t, dt, n, alpha, lam) for t in times]
    W = np.stack(W)
    rng = np.random.default_rng(seed)
    sums = np.zeros(times.size)
    sq = np.zeros(times.size)
    done = 0
    while done < replicas:
        m = min(batch, replicas - done)
        paths, _ = sample_fbm(H, n, dt, m, rng)
        Y = np.diff(paths, axis=1) @ W.T
        sums += (Y**2).sum(axis=0)
        sq += (Y**4).sum(axis=0)
        done += m
    est = sums / replicas
    var = sq / replicas - est**2
    exact = np.array([quadratic_form_fgn(w, H, dt) for w in W])
    return MomentReport(H=H, alpha=alpha, lam=lam, times=times, estimates=est,
                        stderr=np.sqrt(var / replicas), exact=exact, replicas=replicas)
