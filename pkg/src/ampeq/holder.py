"""Discrete Hoelder norms and the eps-scalings of fast semigroup convolutions.

The central object is the convolution with a fast semigroup,

    g(t) = int_0^t e^{(t-s) lambda eps^-2} f(s) ds,

whose Hoelder norms shrink with eps at rates depending on the regularity of
f.  The checks here evaluate those rates on dyadic eps grids and report
whether norm / eps^exponent stays uniformly bounded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, signal, stats

from .fbm import PowerLaw, QFbmField, check_hurst, generate_qfbm, splitmix64
from .spde import convolution_batch
from .spectral import SpectralSystem

__all__ = [
    "SampledFunction",
    "ScalingCheckReport",
    "IdentityReport",
    "YoungReport",
    "DEFAULT_EPS_GRID",
    "RATIO_LIMIT",
    "holder_seminorm",
    "holder_norm",
    "exp_quadrature",
    "epsilon_convolution",
    "check_continuous_scaling",
    "check_holder_scaling",
    "check_interpolated_scaling",
    "check_convolution_identity",
    "identity_refinement",
    "young_bound_check",
    "young_study",
    "write_scaling_csv",
]

DEFAULT_EPS_GRID = tuple(2.0**-k for k in range(3, 9))
RATIO_LIMIT = 2.5
EXHAUSTIVE_LIMIT = 2**11


@dataclass(frozen=True)
class SampledFunction:
    """Values of a function on the uniform grid t_i = i T / n; vector values on the last axis."""

    values: np.ndarray
    T: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape[0] < 2:
            raise ValueError("need at least two samples")
        if self.T <= 0:
            raise ValueError("interval length must be positive")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0] - 1

    @property
    def dt(self) -> float:
        return self.T / self.n

    @property
    def grid(self) -> np.ndarray:
        return self.dt * np.arange(self.n + 1)

    @classmethod
    def from_callable(cls, fn: Callable, T: float, n: int) -> "SampledFunction":
        t = T * np.arange(n + 1) / n
        return cls(np.asarray(fn(t), dtype=float), T)


def _pointwise_norm(v: np.ndarray) -> np.ndarray:
    return np.abs(v) if v.ndim == 1 else np.linalg.norm(v.reshape(v.shape[0], -1), axis=1)


def holder_seminorm(values: np.ndarray, dt: float, alpha: float,
                    exhaustive_limit: int = EXHAUSTIVE_LIMIT) -> float:
    """max over grid pairs of |f_j - f_i| / (t_j - t_i)^alpha.

    All pairs are used up to ``exhaustive_limit`` samples; beyond that only
    dyadic gaps 1, 2, 4, ... are scanned, which can underestimate the
    supremum by a bounded factor.
    """
    if not (0.0 <= alpha <= 1.0):
        raise ValueError("Hoelder exponent must lie in [0, 1]")
    v = np.asarray(values, dtype=float)
    n = v.shape[0] - 1
    if n < 1:
        return 0.0
    if n + 1 <= exhaustive_limit:
        gaps = range(1, n + 1)
    else:
        gaps = [1 << j for j in range(int(math.log2(n)) + 1)]
    best = 0.0
    for g in gaps:
        d = _pointwise_norm(v[g:] - v[:-g]).max()
        best = max(best, d / (g * dt) ** alpha)
    return float(best)


def holder_norm(f: SampledFunction, alpha: float,
                exhaustive_limit: int = EXHAUSTIVE_LIMIT) -> float:
    """sup-norm plus the discrete Hoelder seminorm of order ``alpha``."""
    sup = float(_pointwise_norm(f.values).max())
    return sup + holder_seminorm(f.values, f.dt, alpha, exhaustive_limit)


# ---------------------------------------------------------------------------
# Exponentially filtered quadrature
# ---------------------------------------------------------------------------

def _phi12(z: np.ndarray):
    z = np.asarray(z, dtype=float)
    p1 = np.empty_like(z)
    p2 = np.empty_like(z)
    small = np.abs(z) < 1e-3
    zs = z[small]
    p1[small] = 1.0 + zs / 2.0 + zs**2 / 6.0 + zs**3 / 24.0
    p2[small] = 0.5 + zs / 6.0 + zs**2 / 24.0 + zs**3 / 120.0
    zl = z[~small]
    em1 = np.expm1(zl)
    p1[~small] = em1 / zl
    p2[~small] = (em1 - zl) / zl**2
    return p1, p2


def exp_quadrature(values: np.ndarray, rate, h: float) -> np.ndarray:
    """g(t_m) = int_0^{t_m} e^{(t_m - s) rate} f(s) ds for piecewise-linear f.

    ``values`` has time on axis 0 and optional coordinates on the last axis;
    ``rate`` is a scalar or one rate per coordinate.  The step recursion

        g_{m+1} = e^z g_m + h [(phi1(z) - phi2(z)) f_m + phi2(z) f_{m+1}],  z = h rate,

    is exact for piecewise-linear f at any stiffness.
    """
    f = np.asarray(values, dtype=float)
    scalar = f.ndim == 1
    if scalar:
        f = f[:, None]
    rates = np.broadcast_to(np.asarray(rate, dtype=float), f.shape[1:])
    flat = f.reshape(f.shape[0], -1)
    rflat = np.asarray(rates).reshape(-1)
    out = np.zeros_like(flat)
    for j in range(flat.shape[1]):
        z = h * rflat[j]
        p1, p2 = _phi12(np.array([z]))
        c = math.exp(z)
        w1 = h * float(p2[0])
        w0 = h * float(p1[0] - p2[0])
        col = flat[:, j]
        if not np.any(col):
            continue
        out[:, j] = signal.lfilter([w1, w0], [1.0, -c], col, zi=[-w1 * col[0]])[0]
    out = out.reshape(f.shape)
    return out[:, 0] if scalar else out


def epsilon_convolution(f: SampledFunction, lam, eps: float) -> SampledFunction:
    """t -> int_0^t e^{(t-s) lam eps^-2} f(s) ds on the grid of ``f``.

    ``lam`` is a stable rate (scalar) or a :class:`SpectralSystem`, in which
    case each coordinate uses its eigenvalue.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    rates = lam.eigenvalues if isinstance(lam, SpectralSystem) else float(lam)
    g = exp_quadrature(f.values, np.asarray(rates) * eps**-2, f.dt)
    return SampledFunction(g, f.T)


# ---------------------------------------------------------------------------
# eps-scaling checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalingCheckReport:
    name: str
    alpha: float
    exponent: float
    eps: np.ndarray
    norms: np.ndarray
    ratios: np.ndarray
    max_over_median: float
    slope: float
    slope_stderr: float
    limit: float = RATIO_LIMIT
    params: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.max_over_median <= self.limit)

    def summary(self) -> dict:
        out = {"check": self.name, "alpha": self.alpha, "exponent": self.exponent}
        out.update(self.params)
        out.update({"slope": self.slope, "slope_stderr": self.slope_stderr,
                    "max_over_median": self.max_over_median, "limit": self.limit,
                    "pass": self.passed})
        return out


def _scaling_report(name, f, alpha, exponent, eps_grid, lam, T, resolution, params):
    eps_grid = np.asarray(sorted(eps_grid, reverse=True), dtype=float)
    if not (0.0 <= alpha < 1.0):
        raise ValueError("Hoelder exponent must lie in [0, 1)")
    if T > 1.0:
        raise ValueError("the scaling checks use intervals of length at most 1")
    norms = []
    for eps in eps_grid:
        # grid resolves the boundary layer of width eps^2 with a fixed number of points
        n = 1 << max(10, math.ceil(math.log2(resolution * T / eps**2)))
        samp = SampledFunction.from_callable(f, T, n)
        norms.append(holder_norm(epsilon_convolution(samp, lam, eps), alpha))
    norms = np.asarray(norms)
    ratios = norms / eps_grid**exponent
    fit = stats.linregress(np.log(eps_grid), np.log(norms))
    return ScalingCheckReport(name=name, alpha=alpha, exponent=exponent, eps=eps_grid, norms=norms,
                              ratios=ratios, max_over_median=float(ratios.max() / np.median(ratios)),
                              slope=float(fit.slope), slope_stderr=float(fit.stderr),
                              params=params)


def check_continuous_scaling(alpha: float, f: Optional[Callable] = None,
                   eps_grid: Sequence[float] = DEFAULT_EPS_GRID, lam: float = -1.0,
                   T: float = 1.0, resolution: int = 32) -> ScalingCheckReport:
    """Continuous f: the C^alpha norm of the convolution is O(eps^{2 - 2 alpha}) sup|f|.

    The default ``f(t) = cos(2 pi t)`` has ``f(0) != 0``, which makes the
    boundary layer at t = 0 saturate the bound.
    """
    f = f or (lambda t: np.cos(2.0 * math.pi * t))
    return _scaling_report("continuous", f, alpha, 2.0 - 2.0 * alpha, eps_grid, lam, T, resolution, {})


def check_holder_scaling(alpha: float, f: Optional[Callable] = None,
                   eps_grid: Sequence[float] = DEFAULT_EPS_GRID, lam: float = -1.0,
                   T: float = 1.0, resolution: int = 32) -> ScalingCheckReport:
    """C^alpha f with f(0) = 0: the C^alpha norm of the convolution is O(eps^2)."""
    f = f or (lambda t: t**alpha)
    if abs(float(np.asarray(f(np.array([0.0])))[0])) > 1e-14:
        raise ValueError("the test function must vanish at t = 0")
    return _scaling_report("holder", f, alpha, 2.0, eps_grid, lam, T, resolution, {})


def check_interpolated_scaling(alpha: float, gamma: float, zeta: Optional[float] = None,
                   f: Optional[Callable] = None, eps_grid: Sequence[float] = DEFAULT_EPS_GRID,
                   lam: float = -1.0, T: float = 1.0, resolution: int = 32,
                   margin: float = 0.9) -> ScalingCheckReport:
    """C^gamma f with f(0) = 0: the C^alpha norm is O(eps^zeta), zeta < 2(1-alpha)/(1-gamma)."""
    if not (0.0 <= gamma <= alpha < 1.0):
        raise ValueError("need 0 <= gamma <= alpha < 1")
    bound = 2.0 * (1.0 - alpha) / (1.0 - gamma)
    zeta = margin * bound if zeta is None else float(zeta)
    if not (0.0 <= zeta < bound):
        raise ValueError(f"zeta must lie in [0, {bound})")
    f = f or (lambda t: t**gamma)
    if abs(float(np.asarray(f(np.array([0.0])))[0])) > 1e-14:
        raise ValueError("the test function must vanish at t = 0")
    return _scaling_report("interpolated", f, alpha, zeta, eps_grid, lam, T, resolution,
                           {"gamma": gamma, "zeta_bound": bound})


def write_scaling_csv(report: ScalingCheckReport, dest) -> None:
    with open(dest, "w") as fh:
        fh.write("eps,norm,ratio\n")
        for e, nrm, r in zip(report.eps, report.norms, report.ratios):
            fh.write(f"{float(e)!r},{float(nrm)!r},{float(r)!r}\n")


# ---------------------------------------------------------------------------
# Convolution identity for the integrated OU process
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IdentityReport:
    deviation: float
    relative: float
    scale: float
    dt: float


def _identity_sides(noise: QFbmField, sys: SpectralSystem, eps: float, rule: str):
    dt_slow = noise.dt * eps**2
    stable = ~sys.kernel_mask
    WL = convolution_batch(sys, noise.values, noise.dt, rule)[:, stable]
    lhs = integrate.cumulative_trapezoid(WL, dx=dt_slow, axis=0, initial=0.0)
    W = np.zeros((noise.n + 1, sys.dim))
    W[:, : noise.modes] = noise.values.T
    rhs = exp_quadrature(W[:, stable], sys.eigenvalues[stable] * eps**-2, dt_slow)
    return lhs, rhs


def check_convolution_identity(noise: Optional[QFbmField], sys: SpectralSystem, eps: float,
                       rule: str = "exponential") -> IdentityReport:
    """Compare int_0^t P_s W_L(tau eps^-2) dtau with int_0^t e^{(t-s)L eps^-2} P_s W(s eps^-2) ds.

    ``noise`` lives on the fast grid with step ``dt_fast``; the slow grid is
    ``t_m = m dt_fast eps^2``.  The left side integrates the discrete
    convolution by the trapezoidal rule, the right side uses the exact
    exponential quadrature of the piecewise-linear path.
    """
    if noise is None:
        return IdentityReport(0.0, 0.0, 0.0, float("nan"))
    lhs, rhs = _identity_sides(noise, sys, eps, rule)
    dev = float(np.linalg.norm(lhs - rhs, axis=1).max())
    scale = float(np.linalg.norm(rhs, axis=1).max())
    rel = dev / scale if scale > 0 else 0.0
    return IdentityReport(dev, rel, scale, noise.dt * eps**2)


def identity_refinement(sys: SpectralSystem, H: float, eps: float, T: float = 1.0,
                        dt: float = 1e-3, levels: int = 3, seed: int = 0,
                        noise_modes: int = 32, spectrum=PowerLaw(2.0),
                        rule: str = "exponential") -> list:
    """Identity deviations at slow steps dt, dt/2, ... on one fixed noise path.

    The path is drawn on the finest grid and subsampled for the coarser ones.
    """
    H = check_hurst(H)
    fine_dt = dt / 2 ** (levels - 1)
    n_fine = int(round(T / fine_dt))
    noise = generate_qfbm(H, noise_modes, spectrum, n_fine, fine_dt * eps**-2, seed)
    reports = []
    for lev in range(levels):
        step = 2 ** (levels - 1 - lev)
        reports.append(check_convolution_identity(noise.subsample(step), sys, eps, rule))
    return reports


# ---------------------------------------------------------------------------
# Young-type estimate
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class YoungReport:
    lhs: float
    holder_a: float
    holder_z: float
    alpha_p: float
    beta_p: float

    @property
    def rhs(self) -> float:
        return self.holder_a**2 * self.holder_z

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs if self.rhs > 0 else 0.0


def young_bound_check(a_values: np.ndarray, noise: QFbmField, sys: SpectralSystem, eps: float,
                      H: float, alpha_p: float, beta_p: float) -> YoungReport:
    """Both sides of the Young estimate for int F_c(a, a, dZ), Z(t) = int_0^t P_s W_L(s eps^-2) ds.

    ``a_values`` is the amplitude on the slow grid ``T_j = j dt_fast eps^2``
    (one value per fast grid point).  Z is taken from the exponential
    quadrature side of the convolution identity.
    """
    check_hurst(H)
    if alpha_p + beta_p <= 1.0:
        raise ValueError("the Young estimate needs alpha' + beta' > 1")
    a = np.asarray(a_values, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.shape[0] != noise.n + 1:
        raise ValueError("amplitude and noise grids differ")
    T = noise.n * noise.dt * eps**2
    stable = ~sys.kernel_mask
    W = np.zeros((noise.n + 1, sys.dim))
    W[:, : noise.modes] = noise.values.T
    Z = np.zeros_like(W)
    Z[:, stable] = exp_quadrature(W[:, stable], sys.eigenvalues[stable] * eps**-2,
                                  noise.dt * eps**2)
    A = sys.from_kernel(a)
    incr = sys.project_c(sys.apply_F(A[:-1], A[:-1], np.diff(Z, axis=0)))
    lhs = float(np.linalg.norm(incr.sum(axis=0)))
    ha = holder_norm(SampledFunction(a, T), beta_p)
    hz = holder_norm(SampledFunction(Z[:, stable], T), alpha_p)
    return YoungReport(lhs=lhs, holder_a=ha, holder_z=hz, alpha_p=alpha_p, beta_p=beta_p)


def young_study(sys: SpectralSystem, H: float, eps: float, alpha_p: float, beta_p: float,
                calibration: int = 50, holdout: int = 100, seed: int = 0, T0: float = 1.0,
                dt_fast: float = 0.01, a0=None, margin: float = 2.0,
                noise_modes: int = 32, spectrum=PowerLaw(2.0)) -> dict:
    """Calibrate C in LHS <= C * RHS on one replica set and test it on fresh replicas.

    The frozen constant is ``margin`` times the largest calibration ratio.
    """
    from .amplitude import integrate_amplitude, rescaled_noise_b

    n = int(round(T0 * eps**-2 / dt_fast))
    a0 = np.ones(sys.kernel_dim) if a0 is None else np.asarray(a0, dtype=float)
    ratios = []
    for r in range(calibration + holdout):
        noise = generate_qfbm(H, noise_modes, spectrum, n, dt_fast, splitmix64(seed, r))
        dT = eps**2 * dt_fast
        b = rescaled_noise_b(noise, eps, H, sys, dT, T0)
        a = integrate_amplitude(sys, a0[None], np.diff(b, axis=0)[None], dT, tol=None)[0]
        ratios.append(young_bound_check(a, noise, sys, eps, H, alpha_p, beta_p).ratio)
    ratios = np.asarray(ratios)
    constant = margin * float(ratios[:calibration].max())
    held = ratios[calibration:]
    return {"constant": constant, "holdout_max": float(held.max()),
            "holdout_fraction_ok": float(np.mean(held <= constant)),
            "pass": bool(np.all(held <= constant)), "ratios": ratios}
