"""Reduced slow-fast model: amplitude equation, fractional OU process, and their sum.

On the slow time T = eps^2 t the kernel amplitude solves

    a(T) = a(0) + int_0^T (A_c a + F_c(a)) dS + b(T),   b(T) = eps^{2H} P_c W(T eps^-2),

the stable part is the fractional OU process psi_s(t) = e^{tL} psi_s(0) + P_s W_L(t),
and the approximation of the SPDE solution is

    psi(t) = eps a(eps^2 t) + eps^{2H+1} psi_s(t).
"""

from __future__ import annotations

import functools
import hashlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .fbm import QFbmField, check_hurst
from .spde import convolution_batch
from .spectral import SpectralSystem, make_system

__all__ = [
    "AmplitudePath",
    "FouPath",
    "PsiPath",
    "slow_grid_ratio",
    "rescaled_noise_b",
    "amplitude_drift",
    "integrate_amplitude",
    "solve_amplitude",
    "solve_fou",
    "assemble_psi",
    "initial_state",
]

GUARD = 1e6


@dataclass(frozen=True)
class AmplitudePath:
    """Amplitude on the slow grid T_j = j dT; ``values`` and ``b_path`` are ``(J+1, dim N)``."""

    values: np.ndarray
    dT: float
    b_path: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return self.dT * np.arange(self.values.shape[0])

    @property
    def T0(self) -> float:
        return self.dT * (self.values.shape[0] - 1)


@dataclass(frozen=True)
class FouPath:
    """Fractional OU process on the fast grid, ``values`` of shape ``(n+1, dim)``."""

    values: np.ndarray
    psi_s0: np.ndarray
    dt: float

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.values.shape[0])


@dataclass(frozen=True)
class PsiPath:
    """psi = eps psi_c + eps^{2H+1} psi_s on the fast grid, with its components."""

    values: np.ndarray
    psi_c: np.ndarray
    psi_s: np.ndarray
    eps: float
    H: float
    dt: float
    noise_fingerprint: Optional[str] = None

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.values.shape[0])

    def fingerprint(self) -> str:
        h = hashlib.sha256(self.values.tobytes())
        if self.noise_fingerprint:
            h.update(self.noise_fingerprint.encode())
        return h.hexdigest()


def slow_grid_ratio(dT: float, eps: float, dt_fast: float) -> int:
    """Fast steps per slow step; ``dT eps^-2`` must be a multiple of ``dt_fast``."""
    x = dT * eps**-2 / dt_fast
    r = int(round(x))
    if r < 1 or abs(x - r) > 1e-7 * max(1.0, x):
        raise ValueError(f"slow step {dT} is not aligned with the fast step {dt_fast} at eps={eps}")
    return r


def rescaled_noise_b(noise: QFbmField, eps: float, H: float, sys: SpectralSystem,
                     dT: float, T0: float) -> np.ndarray:
    """b(T_j) = eps^{2H} P_c W(T_j eps^-2) on the slow grid, shape ``(J+1, dim N)``."""
    check_hurst(H)
    r = slow_grid_ratio(dT, eps, noise.dt)
    J = int(round(T0 / dT))
    if J * r > noise.n:
        raise ValueError("noise path does not cover the slow horizon")
    K = noise.modes
    kidx = sys.kernel_idx
    vals = np.zeros((J + 1, kidx.size))
    for i, j in enumerate(kidx):
        if j < K:
            vals[:, i] = noise.values[j, : J * r + 1 : r]
    return eps ** (2.0 * H) * vals


@functools.lru_cache(maxsize=16)
def _kernel_tensor(sys: SpectralSystem):
    """Coefficients T[i,j,k,l] = <e_i, F(e_j, e_k, e_l)> of F restricted to the kernel.

    Kernel functions have wavenumber <= kmax, so a system truncated at kmax
    shares the leading coordinates and evaluates these products exactly.
    """
    kmax = max(1, int(sys.wavenumbers[sys.kernel_mask].max()))
    mult = None if sys.a_multiplier is None else sys.a_multiplier[: kmax + 1]
    small = make_system(sys.preset, kmax, sys.nu, sys.cubic, mult)
    d = small.kernel_dim
    basis = small.from_kernel(np.eye(d))
    T = np.empty((d, d, d, d))
    for j in range(d):
        for k in range(d):
            prod = small.apply_F(np.broadcast_to(basis[j], basis.shape),
                                 np.broadcast_to(basis[k], basis.shape), basis)
            T[:, j, k, :] = small.to_kernel(prod).T
    a_c = sys.a_diag[sys.kernel_mask].copy()
    T.flags.writeable = False
    a_c.flags.writeable = False
    return T, a_c


def amplitude_drift(sys: SpectralSystem, a: np.ndarray) -> np.ndarray:
    """A_c a + F_c(a) for kernel coordinates ``a`` of shape ``(..., dim N)``."""
    T, a_c = _kernel_tensor(sys)
    a = np.asarray(a, dtype=float)
    if T.shape[0] == 1:
        return a * a_c + T[0, 0, 0, 0] * a**3
    d = T.shape[0]
    outer = (a[..., :, None, None] * a[..., None, :, None] * a[..., None, None, :])
    return a * a_c + outer.reshape(a.shape[:-1] + (d**3,)) @ T.reshape(d, d**3).T


def integrate_amplitude(sys: SpectralSystem, a0: np.ndarray, db: np.ndarray, dT: float,
                        tol: Optional[float] = 1e-8, max_halvings: int = 16) -> np.ndarray:
    """Batched amplitude solve; ``db`` has shape ``(B, J, dim N)``, ``a0`` ``(B, dim N)``.

    Each step applies the drift flow over ``dT`` and then adds the noise
    increment.  With ``tol`` set, the flow uses classical Runge-Kutta
    substeps whose number doubles (at most ``2**max_halvings``) until two
    successive refinements differ by less than ``tol``; the last pair is
    combined by Richardson extrapolation.  ``tol=None`` is a single Euler
    step, which is the kernel part of the SPDE scheme itself.
    """
    a = np.array(a0, dtype=float, ndmin=2)
    db = np.asarray(db, dtype=float)
    B, J, d = db.shape
    out = np.empty((B, J + 1, d))
    out[:, 0] = a
    subs = 1
    cap = 2**max_halvings
    for j in range(J):
        if tol is None:
            nxt = a + dT * amplitude_drift(sys, a)
        else:
            subs = max(1, subs // 2)
            coarse = _rk4_flow(sys, a, dT, subs)
            while True:
                fine = _rk4_flow(sys, a, dT, 2 * subs)
                # Richardson extrapolation of the fourth-order flow
                nxt = fine + (fine - coarse) / 15.0
                subs *= 2
                if not np.max(np.abs(fine - coarse)) >= tol or subs >= cap:
                    break
                coarse = fine
        a = nxt + db[:, j]
        a[~(np.abs(a).max(axis=1) < GUARD)] = np.nan
        out[:, j + 1] = a
    return out


def _rk4_flow(sys, a, dT, subs):
    h = dT / subs
    for _ in range(subs):
        k1 = amplitude_drift(sys, a)
        k2 = amplitude_drift(sys, a + 0.5 * h * k1)
        k3 = amplitude_drift(sys, a + 0.5 * h * k2)
        k4 = amplitude_drift(sys, a + h * k3)
        a = a + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return a


def solve_amplitude(sys: SpectralSystem, b_sequence: np.ndarray, a0, dT: float,
                    tol: Optional[float] = 1e-8) -> AmplitudePath:
    """Solve the amplitude equation driven by the sampled ``b`` (``(J+1, dim N)``)."""
    if dT <= 0:
        raise ValueError("slow step must be positive")
    b = np.asarray(b_sequence, dtype=float)
    if b.ndim == 1:
        b = b[:, None]
    if b.shape[1] != sys.kernel_dim:
        raise ValueError("b has the wrong number of kernel coordinates")
    a0 = np.asarray(a0, dtype=float).reshape(1, -1)
    vals = integrate_amplitude(sys, a0, np.diff(b, axis=0)[None], dT, tol)[0]
    return AmplitudePath(values=vals, dT=float(dT), b_path=b - b[0])


def solve_fou(sys: SpectralSystem, noise: Optional[QFbmField], eps: float, H: float,
              dt_fast: float, psi_s0, n_steps: Optional[int] = None,
              rule: str = "left") -> FouPath:
    """psi_s(t_m) = e^{t_m L} psi_s(0) + P_s W_L(t_m) on the fast grid."""
    check_hurst(H)
    psi_s0 = sys.project_s(np.asarray(psi_s0, dtype=float))
    if noise is None:
        if n_steps is None:
            raise ValueError("zero noise needs an explicit number of steps")
        W = np.zeros((1, n_steps + 1))
    else:
        if abs(noise.dt - dt_fast) > 1e-12 * dt_fast:
            raise ValueError("noise grid step differs from dt_fast")
        W = noise.values if n_steps is None else noise.values[:, : n_steps + 1]
    vals = convolution_batch(sys, W, dt_fast, rule, V0=psi_s0)
    return FouPath(values=sys.project_s(vals), psi_s0=psi_s0, dt=float(dt_fast))


def assemble_psi(a_path: AmplitudePath, fou_path: FouPath, eps: float, H: float,
                 sys: SpectralSystem, noise_fingerprint: Optional[str] = None) -> PsiPath:
    """Combine the amplitude (linearly interpolated to fast times) and the OU part."""
    H = check_hurst(H)
    dt = fou_path.dt
    r = slow_grid_ratio(a_path.dT, eps, dt)
    n1 = fou_path.values.shape[0]
    fast_T = eps**2 * dt * np.arange(n1)
    if fast_T[-1] > a_path.T0 * (1 + 1e-12):
        raise ValueError("amplitude path does not cover the fast horizon")
    if r == 1:
        psi_c = a_path.values[:n1]
    else:
        slow_T = a_path.times
        psi_c = np.stack([np.interp(fast_T, slow_T, a_path.values[:, i])
                          for i in range(a_path.values.shape[1])], axis=1)
    values = eps * sys.from_kernel(psi_c) + eps ** (2 * H + 1) * fou_path.values
    return PsiPath(values=values, psi_c=psi_c, psi_s=fou_path.values, eps=float(eps), H=H,
                   dt=dt, noise_fingerprint=noise_fingerprint)


def initial_state(sys: SpectralSystem, eps: float, H: float, a0, psi_s0) -> np.ndarray:
    """u0 = eps a0 + eps^{2H+1} psi_s0, the initial condition matched by psi(0)."""
    a0 = np.asarray(a0, dtype=float)
    return eps * sys.from_kernel(a0) + eps ** (2 * H + 1) * sys.project_s(np.asarray(psi_s0, float))
