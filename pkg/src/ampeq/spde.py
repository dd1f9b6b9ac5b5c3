"""Exponential-Euler integration of the SPDE with additive Q-fBm forcing.

The equation on the fast time scale is

    du = (L u + eps^2 A u + F(u)) dt + eps^{2H+1} dW(t),

and one step of the scheme reads

    u_{m+1} = e^{hL} [u_m + h (eps^2 A u_m + F(u_m))] + eps^{2H+1} e^{hL} dW_m,

with dW_m the exact increment of the sampled noise path.  Noise mode k
(k = 1..K, eigenvalue q_k) drives basis coordinate k - 1, so the constant
mode receives q_1.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
from scipy import signal

from .fbm import MAGIC, Method, PowerLaw, QFbmField, check_hurst, generate_qfbm
from .spectral import Field, SpectralSystem

__all__ = [
    "BLOWUP_THRESHOLD",
    "SpdeRun",
    "ExpEulerStepper",
    "default_dt_fast",
    "fast_step_count",
    "default_stride",
    "noise_to_state",
    "integrate_batch",
    "solve_spde",
    "stochastic_convolution",
    "convolution_batch",
    "phi1",
    "write_manifest",
    "read_manifest",
    "write_trajectory",
    "read_trajectory",
]

BLOWUP_THRESHOLD = 1e6
MAX_SNAPSHOTS = 2**14
SLOW_STEPS = 2**10
FAST_DT_CAP = 0.01

_TRAJ_MAGIC = b"AEQT"
_TRAJ_HEADER = struct.Struct("<4s4sddddQQQQ")


def default_dt_fast(eps: float, T0: float, slow_steps: int = SLOW_STEPS,
                    cap: float = FAST_DT_CAP) -> float:
    """Largest step <= ``cap`` that divides the slow step ``T0 eps^-2 / slow_steps``.

    The fast horizon is then an integer number of steps and every slow grid
    point falls on the fast grid.
    """
    if eps <= 0 or T0 <= 0:
        raise ValueError("eps and T0 must be positive")
    slow_in_fast = T0 * eps**-2 / slow_steps
    sub = max(1, math.ceil(slow_in_fast / cap - 1e-9))
    return slow_in_fast / sub


def fast_step_count(eps: float, T0: float, dt_fast: float) -> int:
    """Number of fast steps covering ``[0, T0 eps^-2]``; must be an integer."""
    x = T0 * eps**-2 / dt_fast
    n = int(round(x))
    if n < 1 or abs(x - n) > 1e-7 * max(1.0, x):
        raise ValueError(f"dt_fast={dt_fast} does not divide the fast horizon {T0 * eps**-2}")
    return n


def default_stride(n_steps: int, max_snapshots: int = MAX_SNAPSHOTS) -> int:
    return max(1, math.ceil(n_steps / max_snapshots))


def phi1(z):
    """(e^z - 1) / z with the removable singularity filled in."""
    z = np.asarray(z, dtype=float)
    out = np.ones_like(z)
    nz = np.abs(z) > 1e-8
    out[nz] = np.expm1(z[nz]) / z[nz]
    out[~nz] = 1.0 + 0.5 * z[~nz]
    return out


def noise_to_state(values: np.ndarray, dim: int) -> np.ndarray:
    """Embed weighted noise coordinates ``(..., K)`` into state coordinates ``(..., dim)``."""
    values = np.asarray(values, dtype=float)
    K = values.shape[-1]
    if K > dim:
        raise ValueError(f"{K} noise modes exceed the {dim} state coordinates")
    if K == dim:
        return values
    out = np.zeros(values.shape[:-1] + (dim,))
    out[..., :K] = values
    return out


class ExpEulerStepper:
    """One exponential-Euler step for a batch of states of shape ``(B, dim)``."""

    def __init__(self, sys: SpectralSystem, eps: float, H: float, dt: float):
        if dt <= 0:
            raise ValueError("time step must be positive")
        self.sys = sys
        self.eps = float(eps)
        self.H = check_hurst(H)
        self.dt = float(dt)
        self.E = np.exp(self.dt * sys.eigenvalues)
        self.gain = 1.0 + self.dt * self.eps**2 * sys.a_diag
        self.noise_scale = self.eps ** (2.0 * self.H + 1.0)

    def step(self, U: np.ndarray, dW: Optional[np.ndarray] = None) -> np.ndarray:
        """Advance ``U`` by one step; ``dW`` holds unscaled increments in state coordinates."""
        rhs = U * self.gain + self.dt * self.sys.apply_F(U)
        if dW is not None:
            rhs += self.noise_scale * dW
        rhs *= self.E
        return rhs

    def linear_step(self, V: np.ndarray, dW: np.ndarray) -> np.ndarray:
        """Left-point convolution step V -> e^{hL}(V + dW)."""
        return self.E * (V + dW)


def integrate_batch(sys: SpectralSystem, eps: float, H: float, dt: float, U0: np.ndarray,
                    W: Optional[np.ndarray], n_steps: int, stride: int = 1,
                    on_snapshot: Optional[Callable[[int, np.ndarray], None]] = None,
                    record: bool = True, guard: float = BLOWUP_THRESHOLD):
    """Integrate a batch of replicas.

    ``W`` holds weighted noise values of shape ``(B, K, n_steps + 1)`` (or
    ``None`` for the deterministic problem).  Snapshots are taken at steps
    ``0, stride, 2*stride, ...`` and, if ``on_snapshot`` is given, passed as
    ``on_snapshot(step, U)``.  Replicas whose norm exceeds ``guard`` are frozen
    at NaN and their hitting step is reported.

    Returns ``(snapshots, snapshot_steps, blowup_step)`` where ``snapshots`` has
    shape ``(B, S, dim)`` (``None`` if ``record`` is false) and
    ``blowup_step[b]`` is -1 for replicas that stayed bounded.
    """
    U = np.array(U0, dtype=float, ndmin=2)
    B, dim = U.shape
    if dim != sys.dim:
        raise ValueError("initial state has the wrong number of coordinates")
    stride = max(1, int(stride))
    stepper = ExpEulerStepper(sys, eps, H, dt)
    snap_steps = np.arange(0, n_steps + 1, stride)
    snaps = np.empty((B, snap_steps.size, dim)) if record else None
    blowup = np.full(B, -1, dtype=np.int64)
    if W is not None:
        W = np.asarray(W, dtype=float)
        if W.shape[0] != B or W.shape[2] < n_steps + 1:
            raise ValueError("noise array does not match the batch or the horizon")
        dW_all = np.diff(W[:, :, : n_steps + 1], axis=2)
        K = W.shape[1]
        if K > dim:
            raise ValueError(f"{K} noise modes exceed the {dim} state coordinates")
        dWm = np.zeros((B, dim))

    def snapshot(m: int, j: int):
        if record:
            snaps[:, j] = U
        if on_snapshot is not None:
            on_snapshot(m, U)

    snapshot(0, 0)
    j = 1
    alive = np.ones(B, dtype=bool)
    for m in range(n_steps):
        if W is not None:
            dWm[:, :K] = dW_all[:, :, m]
            U = stepper.step(U, dWm)
        else:
            U = stepper.step(U)
        big = ~(np.abs(U).max(axis=1) < guard)
        if np.any(big & alive):
            hit = big & alive
            hit &= ~(np.linalg.norm(np.nan_to_num(U, nan=np.inf), axis=1) <= guard)
            blowup[hit] = m + 1
            alive &= ~hit
        if not alive.all():
            U[~alive] = np.nan
        if (m + 1) % stride == 0:
            snapshot(m + 1, j)
            j += 1
    return snaps, snap_steps, blowup


# ---------------------------------------------------------------------------
# Single-run driver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpdeRun:
    """A full SPDE trajectory together with the noise path that produced it."""

    sys: SpectralSystem
    H: float
    eps: float
    T0: float
    dt_fast: float
    noise: Optional[QFbmField]
    u0: Field
    trajectory: np.ndarray
    snapshot_steps: np.ndarray
    seed: int
    stride: int
    blowup_time: Optional[float] = None
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def n_steps(self) -> int:
        return fast_step_count(self.eps, self.T0, self.dt_fast)

    @property
    def times(self) -> np.ndarray:
        return self.snapshot_steps * self.dt_fast

    @property
    def truncated(self) -> bool:
        return self.blowup_time is not None

    def field_at(self, i: int) -> Field:
        return Field(self.trajectory[i])

    def manifest(self) -> dict:
        out = dict(self.sys.manifest())
        out.update({"H": self.H, "eps": self.eps, "T0": self.T0, "dt_fast": self.dt_fast,
                    "seed": self.seed, "stride": self.stride})
        out.update(self.extra)
        return out


def solve_spde(sys: SpectralSystem, H: float, eps: float, T0: float = 1.0,
               dt_fast: Optional[float] = None, u0=None, seed: int = 0,
               stride: Optional[int] = None, noise_modes: int = 32, spectrum=PowerLaw(2.0),
               noise: Union[QFbmField, None, str] = None,
               method: Union[str, Method] = Method.CIRCULANT) -> SpdeRun:
    """Integrate the SPDE on ``[0, T0 eps^-2]``.

    ``noise`` may be a prepared :class:`QFbmField` on the fast grid, ``None``
    to draw one from ``seed``, or ``"zero"`` for the deterministic equation.
    """
    H = check_hurst(H)
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if dt_fast is None:
        dt_fast = default_dt_fast(eps, T0) if eps > 0 else FAST_DT_CAP
    if eps > 0:
        n = fast_step_count(eps, T0, dt_fast)
    else:
        n = int(round(T0 / dt_fast))
    stride = default_stride(n) if stride is None else int(stride)
    u0f = Field.zeros(sys.modes) if u0 is None else (u0 if isinstance(u0, Field) else Field(u0))
    if isinstance(noise, str):
        if noise != "zero":
            raise ValueError(f"unknown noise option {noise!r}")
        noise = None
        W = None
        rho = None
    else:
        if noise is None:
            noise = generate_qfbm(H, noise_modes, spectrum, n, dt_fast, seed, method)
        if abs(noise.dt - dt_fast) > 1e-12 * dt_fast or noise.n < n:
            raise ValueError("noise grid does not cover the fast horizon with step dt_fast")
        if abs(noise.hurst - H) > 0:
            raise ValueError("noise Hurst index differs from the equation's")
        W = noise.values[None]
        rho = getattr(spectrum, "rho", None)
    snaps, steps, blow = integrate_batch(sys, eps, H, dt_fast, u0f.real[None], W, n, stride)
    blowup_time = None if blow[0] < 0 else float(blow[0] * dt_fast)
    extra = {"K": 0 if noise is None else noise.modes}
    if rho is not None:
        extra["rho"] = rho
    return SpdeRun(sys=sys, H=H, eps=float(eps), T0=float(T0), dt_fast=float(dt_fast),
                   noise=noise, u0=u0f, trajectory=snaps[0], snapshot_steps=steps,
                   seed=int(seed), stride=stride, blowup_time=blowup_time, extra=extra)


# ---------------------------------------------------------------------------
# Stochastic convolution
# ---------------------------------------------------------------------------

def _convolution_coeffs(sys: SpectralSystem, dt: float, rule: str):
    z = dt * sys.eigenvalues
    c = np.exp(z)
    if rule == "left":
        g = c
    elif rule == "exponential":
        g = phi1(z)
    else:
        raise ValueError(f"unknown convolution rule {rule!r}")
    return c, g


def convolution_batch(sys: SpectralSystem, W: np.ndarray, dt: float, rule: str = "left",
                      V0: Optional[np.ndarray] = None) -> np.ndarray:
    """W_L on the grid for noise values ``W`` of shape ``(..., K, n+1)``.

    ``rule="left"`` is V_{m+1} = e^{hL}(V_m + dW_m); ``rule="exponential"``
    integrates the piecewise-linear interpolant of W exactly,
    V_{m+1} = e^{hL} V_m + phi1(hL) dW_m.  Kernel coordinates equal W itself.
    ``V0`` is an optional initial state ``(..., dim)`` propagated by the semigroup.
    Output shape is ``(..., n+1, dim)``.
    """
    W = np.asarray(W, dtype=float)
    K = W.shape[-2]
    n1 = W.shape[-1]
    dim = sys.dim
    if K > dim:
        raise ValueError(f"{K} noise modes exceed the {dim} state coordinates")
    c, g = _convolution_coeffs(sys, dt, rule)
    out = np.zeros(W.shape[:-2] + (n1, dim))
    dW = np.diff(W, axis=-1)
    pad = np.zeros(dW.shape[:-1] + (n1,))
    pad[..., :-1] = dW
    for j in range(K):
        if sys.kernel_mask[j]:
            out[..., :, j] = W[..., j, :]
        else:
            out[..., :, j] = signal.lfilter([0.0, g[j]], [1.0, -c[j]], pad[..., j, :], axis=-1)
    if V0 is not None:
        V0 = np.asarray(V0, dtype=float)
        decay = np.exp(np.outer(dt * np.arange(n1), sys.eigenvalues))
        out += V0[..., None, :] * decay
    return out


def stochastic_convolution(sys: SpectralSystem, noise: Optional[QFbmField], dt_fast: float,
                           steps: Optional[slice] = None, rule: str = "left",
                           n_steps: Optional[int] = None) -> np.ndarray:
    """Stochastic convolution W_L(t_m) = int_0^{t_m} e^{(t_m - s)L} dW(s) on the fast grid.

    Returns an array ``(len, dim)`` of basis coordinates for the grid indices
    selected by ``steps`` (default: all).  ``noise=None`` means zero noise and
    then ``n_steps`` fixes the grid length.
    """
    if noise is None:
        if n_steps is None:
            raise ValueError("zero noise needs an explicit number of steps")
        out = np.zeros((n_steps + 1, sys.dim))
    else:
        if abs(noise.dt - dt_fast) > 1e-12 * dt_fast:
            raise ValueError("noise grid step differs from dt_fast")
        out = convolution_batch(sys, noise.values, dt_fast, rule)
    return out if steps is None else out[steps]


# ---------------------------------------------------------------------------
# Manifest and trajectory store
# ---------------------------------------------------------------------------

def write_manifest(entries: dict, dest: Union[str, Path]) -> None:
    """Flat ``key=value`` file, one entry per line, in insertion order."""
    with open(dest, "w") as fh:
        for key, value in entries.items():
            if isinstance(value, float):
                value = repr(float(value))
            fh.write(f"{key}={value}\n")


def read_manifest(src: Union[str, Path]) -> dict:
    out = {}
    with open(src) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"malformed manifest line: {raw.rstrip()!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def write_trajectory(run: SpdeRun, dest: Union[str, Path]) -> None:
    """Binary store: header, then per snapshot a u64 step index and ``dim`` f64 values."""
    S, dim = run.trajectory.shape
    header = _TRAJ_HEADER.pack(MAGIC, _TRAJ_MAGIC, run.H, run.eps, run.T0, run.dt_fast,
                               dim, S, run.stride, run.seed & ((1 << 64) - 1))
    rec = np.zeros(S, dtype=[("step", "<u8"), ("u", "<f8", (dim,))])
    rec["step"] = run.snapshot_steps
    rec["u"] = run.trajectory
    with open(dest, "wb") as fh:
        fh.write(header)
        fh.write(rec.tobytes())


def read_trajectory(src: Union[str, Path]) -> dict:
    with open(src, "rb") as fh:
        raw = fh.read()
    magic, kind, H, eps, T0, dt_fast, dim, S, stride, seed = _TRAJ_HEADER.unpack_from(raw, 0)
    if magic != MAGIC or kind != _TRAJ_MAGIC:
        raise ValueError("not a trajectory file")
    rec = np.frombuffer(raw, dtype=[("step", "<u8"), ("u", "<f8", (dim,))], count=S,
                        offset=_TRAJ_HEADER.size)
    return {"H": H, "eps": eps, "T0": T0, "dt_fast": dt_fast, "stride": stride, "seed": seed,
            "steps": rec["step"].astype(np.int64), "trajectory": rec["u"].astype(float)}
