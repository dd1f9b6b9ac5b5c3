"""Fractional Brownian motion: covariance, Volterra kernel, exact path synthesis.

Scalar paths are generated from the exact autocovariance of fractional
Gaussian noise by circulant embedding (Davies-Harte), falling back to a
Cholesky factorisation when the embedding is not nonnegative definite.
Trace-class Hilbert-space noise is a finite sum of independent scalar paths
weighted by the square roots of the covariance eigenvalues.
"""

from __future__ import annotations

import enum
import functools
import hashlib
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from scipy import integrate, linalg, special

__all__ = [
    "Method",
    "FbmPath",
    "QFbmField",
    "PowerLaw",
    "Explicit",
    "check_hurst",
    "fbm_covariance",
    "fgn_autocovariance",
    "kernel_constant",
    "fbm_kernel_K",
    "kernel_covariance",
    "sample_fbm",
    "generate_fbm",
    "generate_qfbm",
    "rescale_selfsimilar",
    "splitmix64",
    "write_path_binary",
    "read_path_binary",
    "write_path_csv",
    "quadratic_form_fgn",
]

MAGIC = b"AEQ1"
_HEADER = struct.Struct("<4sddQQB")
# Relative tolerance below which negative circulant eigenvalues count as roundoff.
NEG_EIG_TOL = 1e-10

_MASK64 = (1 << 64) - 1


class Method(enum.IntEnum):
    CIRCULANT = 0
    CHOLESKY = 1

    @classmethod
    def parse(cls, value: Union[str, "Method"]) -> "Method":
        if isinstance(value, Method):
            return value
        key = str(value).strip().lower()
        aliases = {
            "circulant": cls.CIRCULANT,
            "circulantembedding": cls.CIRCULANT,
            "davies-harte": cls.CIRCULANT,
            "cholesky": cls.CHOLESKY,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown fBm method {value!r}") from None


def check_hurst(H: float) -> float:
    """Validate a Hurst index; only the open interval (0, 1) is accepted."""
    H = float(H)
    if not (0.0 < H < 1.0) or math.isnan(H):
        raise ValueError(f"Hurst index must lie in the open interval (0, 1), got {H}")
    return H


def splitmix64(seed: int, index: int) -> int:
    """Derive a 64-bit sub-seed from ``(seed, index)`` with the SplitMix64 finaliser."""
    z = (int(seed) * 0x9E3779B97F4A7C15 + (int(index) + 1) * 0xBF58476D1CE4E5B9) & _MASK64
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


# ---------------------------------------------------------------------------
# Analytic covariance and kernel
# ---------------------------------------------------------------------------

def fbm_covariance(t, s, H: float):
    """E[B(t) B(s)] = (t^{2H} + s^{2H} - |t - s|^{2H}) / 2 for t, s >= 0."""
    H = check_hurst(H)
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(t < 0) or np.any(s < 0):
        raise ValueError("fBm covariance is defined for nonnegative times only")
    h2 = 2.0 * H
    out = 0.5 * (t**h2 + s**h2 - np.abs(t - s) ** h2)
    return float(out) if out.ndim == 0 else out


def fgn_autocovariance(k, H: float):
    """Autocovariance of unit-step fractional Gaussian noise at integer lag ``k``."""
    k = np.abs(np.asarray(k, dtype=float))
    h2 = 2.0 * H
    return 0.5 * ((k + 1.0) ** h2 + np.abs(k - 1.0) ** h2 - 2.0 * k**h2)


def _kernel_unscaled(t: float, r: float, H: float, quad_points: int) -> float:
    # u = r + v^{1/(H-1/2)} turns (u-r)^{H-3/2} du into dv/(H-1/2).
    p = H - 0.5
    nodes, weights = _gauss_legendre(quad_points)
    vmax = (t - r) ** p
    v = 0.5 * vmax * (nodes + 1.0)
    u = r + v ** (1.0 / p)
    vals = (u / r) ** p
    return float(0.5 * vmax * np.dot(weights, vals) / p)


@functools.lru_cache(maxsize=16)
def _gauss_legendre(n: int):
    return special.roots_legendre(int(n))


@functools.lru_cache(maxsize=64)
def kernel_constant(H: float, quad_points: int = 2000) -> float:
    """Normalising constant of the Volterra kernel, calibrated so that Var B(1) = 1.

    The squared kernel behaves like r^{1-2H} at the origin; ``r = s^q`` with
    ``q = 1/(2-2H)`` makes the outer integrand regular there.
    """
    H = check_hurst(H)
    if H <= 0.5:
        raise ValueError("the integral kernel representation requires H > 1/2")
    q = 1.0 / (2.0 - 2.0 * H)

    def integrand(s: float) -> float:
        r = s**q
        if r <= 0.0 or r >= 1.0:
            return 0.0
        k = _kernel_unscaled(1.0, r, H, quad_points)
        return k * k * q * s ** (q - 1.0)

    val, _ = integrate.quad(integrand, 0.0, 1.0, limit=400, epsabs=0.0, epsrel=1e-11)
    return 1.0 / math.sqrt(val)


def fbm_kernel_K(t: float, r: float, H: float, quad_points: int = 2000) -> float:
    """Volterra kernel K(t, r) of fBm for H > 1/2, by Gauss-Legendre quadrature."""
    H = check_hurst(H)
    if H <= 0.5:
        raise ValueError("the integral kernel representation requires H > 1/2")
    if not (0.0 < r < t):
        raise ValueError(f"kernel requires 0 < r < t, got r={r}, t={t}")
    return kernel_constant(H) * _kernel_unscaled(float(t), float(r), H, quad_points)


def kernel_covariance(s: float, t: float, H: float, quad_points: int = 400) -> float:
    """Covariance rebuilt from the kernel, int_0^{min(s,t)} K(s,r) K(t,r) dr."""
    H = check_hurst(H)
    m = min(s, t)
    if m <= 0.0:
        return 0.0
    q = 1.0 / (2.0 - 2.0 * H)

    def integrand(x: float) -> float:
        # r = m x^q removes the r^{1-2H} singularity at the origin
        r = m * x**q
        if r <= 0.0 or r >= m:
            return 0.0
        ks = _kernel_unscaled(s, r, H, quad_points)
        kt = _kernel_unscaled(t, r, H, quad_points)
        return ks * kt * m * q * x ** (q - 1.0)

    val, _ = integrate.quad(integrand, 0.0, 1.0, limit=400, epsrel=1e-10)
    return kernel_constant(H) ** 2 * val


# ---------------------------------------------------------------------------
# Path synthesis
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=32)
def _circulant_sqrt_eigs(H: float, n: int):
    """Square roots of the circulant eigenvalues divided by the embedding size.

    Returns ``None`` when the embedding has eigenvalues below the tolerance.
    """
    gamma = fgn_autocovariance(np.arange(n + 1), H)
    row = np.concatenate([gamma, gamma[-2:0:-1]])
    eig = np.fft.fft(row).real
    if eig.min() < -NEG_EIG_TOL * eig.max():
        return None
    eig = np.clip(eig, 0.0, None)
    out = np.sqrt(eig / row.size)
    out.flags.writeable = False
    return out


@functools.lru_cache(maxsize=8)
def _cholesky_factor(H: float, n: int) -> np.ndarray:
    cov = linalg.toeplitz(fgn_autocovariance(np.arange(n), H))
    out = np.linalg.cholesky(cov)
    out.flags.writeable = False
    return out


def sample_fbm(H: float, n: int, dt: float, size: int, rng: np.random.Generator,
               method: Union[str, Method] = Method.CIRCULANT):
    """Draw ``size`` independent fBm paths on ``t_i = i*dt``, ``i = 0..n``.

    Returns ``(values, method_used)`` with ``values`` of shape ``(size, n + 1)``.
    """
    H = check_hurst(H)
    method = Method.parse(method)
    if n < 1:
        raise ValueError("need at least one step")
    if dt <= 0:
        raise ValueError("dt must be positive")
    scale = dt**H
    incr = None
    if method is Method.CIRCULANT:
        sq = _circulant_sqrt_eigs(H, n)
        if sq is None:
            method = Method.CHOLESKY
        else:
            m = sq.size
            z = rng.standard_normal((size, m)) + 1j * rng.standard_normal((size, m))
            incr = np.fft.fft(sq * z, axis=-1).real[:, :n]
    if method is Method.CHOLESKY:
        chol = _cholesky_factor(H, n)
        incr = rng.standard_normal((size, n)) @ chol.T
    values = np.zeros((size, n + 1))
    np.cumsum(incr * scale, axis=-1, out=values[:, 1:])
    return values, method


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class FbmPath:
    """A scalar fBm trajectory on the uniform grid ``t_i = i*dt``."""

    hurst: float
    dt: float
    values: np.ndarray
    seed: int
    method: Method = Method.CIRCULANT

    def __post_init__(self):
        check_hurst(self.hurst)
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        vals = _freeze(self.values)
        if vals.ndim != 1 or vals.size < 2:
            raise ValueError("an fBm path needs at least two samples")
        if vals[0] != 0.0:
            raise ValueError("an fBm path starts at the origin")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "method", Method.parse(self.method))

    @property
    def n(self) -> int:
        return self.values.size - 1

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n + 1)

    def increments(self) -> np.ndarray:
        return np.diff(self.values)


def generate_fbm(H: float, n: int, dt: float, seed: int,
                 method: Union[str, Method] = Method.CIRCULANT) -> FbmPath:
    """Generate one fBm path; identical arguments give bit-identical values."""
    rng = np.random.default_rng(int(seed) & _MASK64)
    values, used = sample_fbm(H, n, dt, 1, rng, method)
    return FbmPath(hurst=float(H), dt=float(dt), values=values[0], seed=int(seed), method=used)


def rescale_selfsimilar(path: FbmPath, a: float) -> FbmPath:
    """Return the path of ``t -> a^{-H} B(a t)``, which has the law of ``B``.

    Sample ``i`` of the result sits at time ``i * dt / a``.
    """
    if a <= 0:
        raise ValueError("scale factor must be positive")
    if a == 1.0:
        return path
    return FbmPath(hurst=path.hurst, dt=path.dt / a, values=path.values * a ** (-path.hurst),
                   seed=path.seed, method=path.method)


# ---------------------------------------------------------------------------
# Trace-class Hilbert-space noise
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PowerLaw:
    """Eigenvalues q_k = k^{-rho}, k = 1..K."""

    rho: float = 2.0

    def eigenvalues(self, K: int) -> np.ndarray:
        if self.rho <= 1.0:
            raise ValueError(f"power-law spectrum needs rho > 1 for trace class, got {self.rho}")
        return np.arange(1, K + 1, dtype=float) ** (-self.rho)


@dataclass(frozen=True)
class Explicit:
    values: tuple

    def eigenvalues(self, K: int) -> np.ndarray:
        q = np.asarray(self.values, dtype=float)
        if q.size != K:
            raise ValueError(f"explicit spectrum has {q.size} entries, expected {K}")
        if np.any(q < 0) or not np.all(np.isfinite(q)):
            raise ValueError("covariance eigenvalues must be finite and nonnegative")
        return q


Spectrum = Union[PowerLaw, Explicit]


@dataclass(frozen=True)
class QFbmField:
    """Truncated Q-fBm: ``W(t) = sum_k sqrt(q_k) beta_k(t) e_k`` over K modes."""

    hurst: float
    dt: float
    modes: int
    eigenvalues_q: np.ndarray
    component_paths: tuple
    seed: int
    _stack: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        q = _freeze(self.eigenvalues_q)
        object.__setattr__(self, "eigenvalues_q", q)
        if self.modes < 1 or q.size != self.modes or len(self.component_paths) != self.modes:
            raise ValueError("mode count, eigenvalues and component paths disagree")
        if np.any(q < 0):
            raise ValueError("covariance eigenvalues must be nonnegative")
        stack = np.stack([p.values for p in self.component_paths]) * np.sqrt(q)[:, None]
        object.__setattr__(self, "_stack", _freeze(stack))

    @property
    def n(self) -> int:
        return self.component_paths[0].n

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n + 1)

    @property
    def values(self) -> np.ndarray:
        """Weighted coordinates, shape ``(K, n + 1)``: row k is sqrt(q_k) beta_k."""
        return self._stack

    @property
    def trace(self) -> float:
        return float(self.eigenvalues_q.sum())

    def subsample(self, step: int) -> "QFbmField":
        """Keep every ``step``-th grid value: the same paths on a coarser grid."""
        step = int(step)
        if step < 1 or self.n % step:
            raise ValueError(f"step {step} does not divide the {self.n} grid intervals")
        if step == 1:
            return self
        paths = tuple(FbmPath(hurst=p.hurst, dt=p.dt * step, values=p.values[::step],
                              seed=p.seed, method=p.method) for p in self.component_paths)
        return QFbmField(hurst=self.hurst, dt=self.dt * step, modes=self.modes,
                         eigenvalues_q=self.eigenvalues_q, component_paths=paths, seed=self.seed)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(struct.pack("<ddQQ", self.hurst, self.dt, self.modes, self.seed & _MASK64))
        h.update(self._stack.tobytes())
        return h.hexdigest()


def _resolve_spectrum(spectrum) -> Spectrum:
    if isinstance(spectrum, (PowerLaw, Explicit)):
        return spectrum
    if isinstance(spectrum, (int, float)):
        return PowerLaw(float(spectrum))
    return Explicit(tuple(float(x) for x in spectrum))


def generate_qfbm(H: float, K: int, spectrum=PowerLaw(2.0), n: int = 1024, dt: float = 1e-2,
                  seed: int = 0, method: Union[str, Method] = Method.CIRCULANT) -> QFbmField:
    """Generate K independent fBm components with deterministic per-mode sub-seeds."""
    H = check_hurst(H)
    if K < 1:
        raise ValueError("need at least one noise mode")
    q = _resolve_spectrum(spectrum).eigenvalues(K)
    paths = tuple(generate_fbm(H, n, dt, splitmix64(seed, k), method) for k in range(K))
    return QFbmField(hurst=H, dt=float(dt), modes=K, eigenvalues_q=q,
                     component_paths=paths, seed=int(seed))


# ---------------------------------------------------------------------------
# Serialisation
# ---------------------------------------------------------------------------

def write_path_binary(path: FbmPath, dest: Union[str, Path]) -> None:
    header = _HEADER.pack(MAGIC, path.hurst, path.dt, path.n, path.seed & _MASK64, int(path.method))
    with open(dest, "wb") as fh:
        fh.write(header)
        fh.write(np.asarray(path.values, dtype="<f8").tobytes())


def read_path_binary(src: Union[str, Path]) -> FbmPath:
    with open(src, "rb") as fh:
        raw = fh.read()
    magic, H, dt, n, seed, method = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ValueError(f"not an fBm path file (magic {magic!r})")
    values = np.frombuffer(raw, dtype="<f8", count=n + 1, offset=_HEADER.size)
    return FbmPath(hurst=H, dt=dt, values=values.astype(float), seed=seed, method=Method(method))


def write_path_csv(path: FbmPath, dest: Union[str, Path]) -> None:
    with open(dest, "w") as fh:
        fh.write("t,value\n")
        for t, v in zip(path.times, path.values):
            fh.write(f"{float(t)!r},{float(v)!r}\n")


def quadratic_form_fgn(weights: Sequence[float], H: float, dt: float) -> float:
    """Exact variance of ``sum_m w_m dB_m`` for fBm increments on step ``dt``."""
    w = np.asarray(weights, dtype=float)
    cov = linalg.toeplitz(fgn_autocovariance(np.arange(w.size), H)) * dt ** (2 * H)
    return float(w @ cov @ w)
