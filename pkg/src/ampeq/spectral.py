"""Fourier-diagonal model operators on the periodic interval [0, 2*pi].

States are stored as real coordinates in the orthonormal basis

    e_0 = 1/sqrt(2 pi),  e_{2k-1} = cos(kx)/sqrt(pi),  e_{2k} = sin(kx)/sqrt(pi),

for k = 1..N, so the coordinate l2 norm equals the L2([0, 2 pi]) norm.  The
equivalent unitary complex coefficients c_k (f = sum_k c_k e^{ikx}/sqrt(2 pi))
are available through :class:`Field`.  All operators act on the last axis,
so batches of states (replicas, time samples) are handled without loops.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

__all__ = [
    "Preset",
    "SpectralSystem",
    "Field",
    "SignReport",
    "make_system",
    "check_sign_conditions",
    "write_field_csv",
]

TWO_PI = 2.0 * math.pi


class Preset(enum.Enum):
    LAPLACIAN = "laplacian"
    SWIFT_HOHENBERG = "swift-hohenberg"

    @classmethod
    def parse(cls, value: Union[str, "Preset"]) -> "Preset":
        if isinstance(value, Preset):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {
            "laplacian": cls.LAPLACIAN,
            "laplacianperiodic": cls.LAPLACIAN,
            "swift-hohenberg": cls.SWIFT_HOHENBERG,
            "swifthohenberg": cls.SWIFT_HOHENBERG,
            "sh": cls.SWIFT_HOHENBERG,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown operator preset {value!r}") from None


def _wavenumbers(N: int) -> np.ndarray:
    """Wavenumber of each real basis coordinate: 0, 1, 1, 2, 2, ..., N, N."""
    k = np.zeros(2 * N + 1, dtype=int)
    k[1::2] = np.arange(1, N + 1)
    k[2::2] = np.arange(1, N + 1)
    return k


def _freeze(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class SpectralSystem:
    """Diagonal operator L with its kernel, the perturbation A and the cubic F.

    ``A`` is ``nu * Id`` unless ``a_multiplier`` gives one factor per wavenumber
    ``0..N``.  ``F(u, v, w) = -cubic * u v w`` pointwise.
    """

    preset: Preset
    modes: int
    nu: float = 1.0
    cubic: float = 1.0
    a_multiplier: Optional[tuple] = None
    wavenumbers: np.ndarray = field(init=False, repr=False, compare=False)
    eigenvalues: np.ndarray = field(init=False, repr=False, compare=False)
    kernel_mask: np.ndarray = field(init=False, repr=False, compare=False)
    a_diag: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "preset", Preset.parse(self.preset))
        N = int(self.modes)
        if N < 1:
            raise ValueError("need at least one Fourier mode")
        object.__setattr__(self, "modes", N)
        k = _wavenumbers(N)
        if self.preset is Preset.LAPLACIAN:
            lam = -(k.astype(float) ** 2)
        else:
            lam = -((1.0 - k.astype(float) ** 2) ** 2)
        if self.a_multiplier is None:
            a_diag = np.full(k.size, float(self.nu))
        else:
            mult = np.asarray(self.a_multiplier, dtype=float)
            if mult.size != N + 1:
                raise ValueError(f"A multiplier needs {N + 1} entries (wavenumbers 0..{N})")
            object.__setattr__(self, "a_multiplier", tuple(float(x) for x in mult))
            a_diag = mult[k]
        object.__setattr__(self, "wavenumbers", _freeze(k).astype(int))
        object.__setattr__(self, "eigenvalues", _freeze(lam))
        object.__setattr__(self, "kernel_mask", _freeze(lam == 0.0).astype(bool))
        object.__setattr__(self, "a_diag", _freeze(a_diag))

    # -- structure ---------------------------------------------------------

    @property
    def dim(self) -> int:
        """Number of real coordinates, 2N + 1."""
        return 2 * self.modes + 1

    @property
    def domain_length(self) -> float:
        return TWO_PI

    @property
    def kernel_idx(self) -> np.ndarray:
        """Real-basis coordinates spanning the kernel of L."""
        return np.flatnonzero(self.kernel_mask)

    @property
    def kernel_wavenumbers(self) -> tuple:
        """Signed Fourier modes where the eigenvalue vanishes."""
        ks = sorted({int(k) for k in self.wavenumbers[self.kernel_mask]})
        out = []
        for k in ks:
            out.extend([k] if k == 0 else [-k, k])
        return tuple(sorted(out))

    @property
    def kernel_dim(self) -> int:
        return int(self.kernel_mask.sum())

    @property
    def mu(self) -> float:
        """Spectral gap: smallest |lambda| over the stable modes."""
        stable = self.eigenvalues[~self.kernel_mask]
        return float(np.min(-stable))

    @property
    def grid_size(self) -> int:
        # products of three band-N fields are alias free on 4(N+1) points
        return 4 * (self.modes + 1)

    @property
    def grid(self) -> np.ndarray:
        M = self.grid_size
        return TWO_PI * np.arange(M) / M

    def manifest(self) -> dict:
        return {"preset": self.preset.value, "modes": self.modes, "nu": self.nu}

    # -- linear operators --------------------------------------------------

    def project_c(self, f):
        x = _coords(f)
        return _wrap(f, x * self.kernel_mask)

    def project_s(self, f):
        x = _coords(f)
        return _wrap(f, x * ~self.kernel_mask)

    def semigroup_factors(self, t: float) -> np.ndarray:
        if t < 0:
            raise ValueError("the semigroup is defined for t >= 0 only")
        return np.exp(t * self.eigenvalues)

    def semigroup(self, f, t: float):
        """Apply e^{tL}; the identity on kernel coordinates."""
        return _wrap(f, _coords(f) * self.semigroup_factors(t))

    def apply_L(self, f):
        return _wrap(f, _coords(f) * self.eigenvalues)

    def apply_A(self, f):
        return _wrap(f, _coords(f) * self.a_diag)

    def frac_power_norm(self, f, alpha: float):
        """Norm of (Id - L)^alpha f, i.e. l2 norm of (1 + |lambda_k|)^alpha x_k."""
        if not (0.0 <= alpha < 1.0):
            raise ValueError("fractional power must lie in [0, 1)")
        w = (1.0 - self.eigenvalues) ** alpha
        return np.linalg.norm(_coords(f) * w, axis=-1)

    # -- physical space ----------------------------------------------------

    def to_grid(self, f, M: Optional[int] = None) -> np.ndarray:
        """Point values on ``M`` equispaced nodes (default: dealiasing grid)."""
        x = _coords(f)
        M = self.grid_size if M is None else int(M)
        N = self.modes
        if M < 2 * N + 1:
            raise ValueError("grid too coarse for the retained modes")
        spec = np.zeros(x.shape[:-1] + (M // 2 + 1,), dtype=complex)
        spec[..., 0] = x[..., 0] * (M / math.sqrt(TWO_PI))
        scale = M / (2.0 * math.sqrt(math.pi))
        spec[..., 1:N + 1] = scale * (x[..., 1::2] - 1j * x[..., 2::2])
        return np.fft.irfft(spec, n=M, axis=-1)

    def from_grid(self, values: np.ndarray) -> np.ndarray:
        """Truncated basis coordinates of equispaced point values."""
        values = np.asarray(values, dtype=float)
        M = values.shape[-1]
        N = self.modes
        spec = np.fft.rfft(values, axis=-1)
        x = np.empty(values.shape[:-1] + (2 * N + 1,))
        x[..., 0] = spec[..., 0].real * (math.sqrt(TWO_PI) / M)
        scale = 2.0 * math.sqrt(math.pi) / M
        x[..., 1::2] = spec[..., 1:N + 1].real * scale
        x[..., 2::2] = -spec[..., 1:N + 1].imag * scale
        return x

    def apply_F(self, u, v=None, w=None):
        """Dealiased pseudospectral F(u, v, w) = -cubic * u v w."""
        gu = self.to_grid(u)
        if v is None and w is None:
            prod = gu * gu * gu
        else:
            gv = gu if v is None else self.to_grid(v)
            gw = gv if w is None else self.to_grid(w)
            prod = gu * gv * gw
        return _wrap(u, -self.cubic * self.from_grid(prod))

    # -- bilinear forms ----------------------------------------------------

    @staticmethod
    def inner(f, g):
        return np.sum(_coords(f) * _coords(g), axis=-1)

    @staticmethod
    def norm(f):
        return np.linalg.norm(_coords(f), axis=-1)

    # -- kernel embedding --------------------------------------------------

    def to_kernel(self, f) -> np.ndarray:
        """Kernel coordinates (shape ``(..., kernel_dim)``) of a state."""
        return _coords(f)[..., self.kernel_mask]

    def from_kernel(self, a) -> np.ndarray:
        """Embed kernel coordinates into the full coordinate vector."""
        a = np.asarray(a, dtype=float)
        out = np.zeros(a.shape[:-1] + (self.dim,))
        out[..., self.kernel_mask] = a
        return out


def make_system(preset="laplacian", modes: int = 32, nu: float = 1.0, cubic: float = 1.0,
                a_multiplier: Optional[Sequence[float]] = None) -> SpectralSystem:
    mult = None if a_multiplier is None else tuple(float(x) for x in a_multiplier)
    return SpectralSystem(Preset.parse(preset), int(modes), float(nu), float(cubic), mult)


# ---------------------------------------------------------------------------
# Field wrapper
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Field:
    """A real spatial function held as real basis coordinates.

    ``coeffs`` gives the unitary complex coefficients for modes -N..N, which
    satisfy ``c_{-k} = conj(c_k)``.
    """

    real: np.ndarray

    def __post_init__(self):
        x = np.array(self.real, dtype=float)
        if x.ndim != 1 or x.size % 2 != 1:
            raise ValueError("a field needs 2N + 1 real coordinates")
        x.flags.writeable = False
        object.__setattr__(self, "real", x)

    @property
    def modes(self) -> int:
        return (self.real.size - 1) // 2

    @property
    def coeffs(self) -> np.ndarray:
        N = self.modes
        c = np.zeros(2 * N + 1, dtype=complex)
        pos = (self.real[1::2] - 1j * self.real[2::2]) / math.sqrt(2.0)
        c[N] = self.real[0]
        c[N + 1:] = pos
        c[:N] = np.conj(pos[::-1])
        return c

    @classmethod
    def from_coeffs(cls, coeffs: Sequence[complex], tol: float = 1e-12) -> "Field":
        c = np.asarray(coeffs, dtype=complex)
        N = (c.size - 1) // 2
        if c.size != 2 * N + 1:
            raise ValueError("need coefficients for modes -N..N")
        if np.max(np.abs(c - np.conj(c[::-1])), initial=0.0) > tol * max(1.0, np.abs(c).max()):
            raise ValueError("coefficients are not Hermitian symmetric")
        x = np.empty(2 * N + 1)
        x[0] = c[N].real
        pos = c[N + 1:]
        x[1::2] = math.sqrt(2.0) * pos.real
        x[2::2] = -math.sqrt(2.0) * pos.imag
        return cls(x)

    @classmethod
    def zeros(cls, modes: int) -> "Field":
        return cls(np.zeros(2 * modes + 1))

    @classmethod
    def from_function(cls, fn, system: SpectralSystem) -> "Field":
        """Interpolate a 2*pi-periodic callable on the dealiasing grid."""
        return cls(system.from_grid(fn(system.grid)))

    def __add__(self, other: "Field") -> "Field":
        return Field(self.real + _coords(other))

    def __sub__(self, other: "Field") -> "Field":
        return Field(self.real - _coords(other))

    def __mul__(self, scalar: float) -> "Field":
        return Field(self.real * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "Field":
        return Field(-self.real)


def _coords(f) -> np.ndarray:
    return f.real if isinstance(f, Field) else np.asarray(f, dtype=float)


def _wrap(like, x):
    return Field(x) if isinstance(like, Field) else x


def write_field_csv(f, dest) -> None:
    """Write the complex coefficients of a field as ``mode,re,im`` rows."""
    fld = f if isinstance(f, Field) else Field(f)
    N = fld.modes
    with open(dest, "w") as fh:
        fh.write("mode,re,im\n")
        for k, c in zip(range(-N, N + 1), fld.coeffs):
            fh.write(f"{k},{float(c.real)!r},{float(c.imag)!r}\n")


# ---------------------------------------------------------------------------
# Sign conditions of the cubic on the kernel
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SignReport:
    trials: int
    max_self: float          # max of <F_c(v), v>, must be < 0
    max_cross: float         # max of <F_c(v, v, w), w>, must be < 0
    eta: float
    c_eta: float
    violations: tuple

    @property
    def ok(self) -> bool:
        return not self.violations


def check_sign_conditions(sys: SpectralSystem, trials: int = 1000, seed: int = 0) -> SignReport:
    """Randomised check of the dissipativity of the cubic restricted to the kernel.

    Samples ``v, w, phi`` in the kernel and evaluates ``<F_c(v), v> < 0``,
    ``<F_c(v, v, w), w> < 0`` and the stability bound
    ``<F_c(phi + v), v> <= C_eta |phi|^4 - eta |v|^4`` with ``eta`` set to a
    tenth of the smallest observed ``-<F_c(v), v> / |v|^4``.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    rng = np.random.default_rng(seed)
    d = sys.kernel_dim
    v = _nonzero_samples(rng, trials, d)
    w = _nonzero_samples(rng, trials, d)
    phi = _nonzero_samples(rng, trials, d) * rng.uniform(0.1, 3.0, (trials, 1))
    V, Wf, P = sys.from_kernel(v), sys.from_kernel(w), sys.from_kernel(phi)

    self_form = sys.inner(sys.project_c(sys.apply_F(V)), V)
    cross_form = sys.inner(sys.project_c(sys.apply_F(V, V, Wf)), Wf)
    nv = np.linalg.norm(v, axis=1)
    eta = 0.1 * float(np.min(-self_form / nv**4))
    shifted = sys.inner(sys.project_c(sys.apply_F(P + V)), V)
    c_eta = float(np.max((shifted + eta * nv**4) / np.linalg.norm(phi, axis=1) ** 4))

    violations = []
    if np.any(self_form >= 0):
        violations.append(f"<F_c(v),v> >= 0 in {int(np.sum(self_form >= 0))} trials")
    if np.any(cross_form >= 0):
        violations.append(f"<F_c(v,v,w),w> >= 0 in {int(np.sum(cross_form >= 0))} trials")
    if not (eta > 0 and np.isfinite(c_eta)):
        violations.append("no feasible (eta, C_eta) for the stability bound")
    return SignReport(trials=trials, max_self=float(self_form.max()),
                      max_cross=float(cross_form.max()), eta=eta, c_eta=max(c_eta, 0.0),
                      violations=tuple(violations))


def _nonzero_samples(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    x = rng.standard_normal((n, d))
    norms = np.linalg.norm(x, axis=1)
    bad = norms < 1e-8
    while np.any(bad):
        x[bad] = rng.standard_normal((int(bad.sum()), d))
        norms = np.linalg.norm(x, axis=1)
        bad = norms < 1e-8
    return x
