"""Fourier-space plumbing shared by the solver and the emulator.

Two conventions live here:

* 2D fields follow the solver's DFT convention: the forward transform is
  unnormalised, ``f_hat(k) = sum_x f(x) exp(-i k.x)``, and the inverse carries
  the ``1/N**2`` factor.  Only the ``k_x >= 0`` half-plane is stored (rfft
  layout); the other half is implied by Hermitian symmetry.
* 1D profiles use *forward* normalisation, ``c_k = (1/n) sum_j u_j exp(-i k y_j)``,
  so the coefficients do not depend on the sampling resolution.  That is what
  lets a profile be truncated to ``m`` modes and re-synthesised on a coarser
  grid without rescaling.

Phases follow a displacement convention: ``extract_phase`` returns the shift
``phi`` of the profile, so ``cos(y - 0.7)`` has ``phi = 0.7``; ``phase_align``
moves the profile back by ``phi`` (its first mode becomes real and
non-negative) and ``phase_restore`` undoes it.  All shifts, fractional ones
included, are applied as exact Fourier phase factors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from .errors import ConfigError, DegeneratePhase

TWO_PI = 2.0 * np.pi
PHASE_TOL = 1e-12


def _check_even(n, what="grid size"):
    if int(n) != n or n <= 0 or n % 2:
        raise ConfigError(f"{what} must be a positive even integer, got {n}")


@dataclass(frozen=True, eq=False)
class WavenumberGrid:
    """Integer wavenumbers for a ``[0, 2pi)^2`` doubly periodic box.

    Arrays are laid out as ``(n_y, n_x // 2 + 1)`` to match the half-plane
    storage of :class:`SpectralField2D`.  The Nyquist wavenumber is listed as
    ``+N/2`` so the allowed set is ``{-N/2 + 1, ..., N/2}``.
    """

    n_x: int
    n_y: int
    kx: np.ndarray = field(repr=False)
    ky: np.ndarray = field(repr=False)
    dealias_mask: np.ndarray = field(repr=False)
    k_max: int

    @classmethod
    def create(cls, n_x, n_y=None):
        n_y = n_x if n_y is None else n_y
        _check_even(n_x, "n_x")
        _check_even(n_y, "n_y")
        kx1 = np.arange(n_x // 2 + 1, dtype=float)
        ky1 = np.fft.fftfreq(n_y, d=1.0 / n_y)
        ky1[n_y // 2] = n_y // 2
        kx, ky = np.meshgrid(kx1, ky1)
        cut_x, cut_y = n_x // 3, n_y // 3
        mask = (np.abs(kx) <= cut_x) & (np.abs(ky) <= cut_y)
        return cls(n_x, n_y, kx, ky, mask, min(cut_x, cut_y))

    @property
    def shape(self):
        return (self.n_y, self.n_x)

    @property
    def spectral_shape(self):
        return (self.n_y, self.n_x // 2 + 1)

    @property
    def k2(self):
        return self.kx**2 + self.ky**2

    @property
    def inv_k2(self):
        """``1/|k|^2`` with the mean mode mapped to zero."""
        k2 = self.k2
        out = np.zeros_like(k2)
        np.divide(1.0, k2, out=out, where=k2 > 0)
        return out

    @property
    def half_plane_weight(self):
        """Multiplicity of each stored mode in a full-plane sum.

        Columns ``k_x = 0`` and ``k_x = n_x/2`` are their own conjugate
        partners; every other column stands for itself and its mirror.
        """
        w = np.full(self.spectral_shape, 2.0)
        w[:, 0] = 1.0
        w[:, -1] = 1.0
        return w

    def coords(self):
        """Physical grid ``(x, y)`` of shape ``(n_y, n_x)`` each."""
        x = TWO_PI * np.arange(self.n_x) / self.n_x
        y = TWO_PI * np.arange(self.n_y) / self.n_y
        return np.meshgrid(x, y)

    def same_as(self, other):
        return self.n_x == other.n_x and self.n_y == other.n_y


@dataclass
class RealField2D:
    values: np.ndarray
    grid: WavenumberGrid

    def __post_init__(self):
        if self.values.shape[-2:] != self.grid.shape:
            raise ConfigError(
                f"field shape {self.values.shape[-2:]} does not match grid {self.grid.shape}"
            )


@dataclass
class SpectralField2D:
    coeffs: np.ndarray
    grid: WavenumberGrid

    def __post_init__(self):
        if self.coeffs.shape[-2:] != self.grid.spectral_shape:
            raise ConfigError(
                f"spectrum shape {self.coeffs.shape[-2:]} does not match grid "
                f"{self.grid.spectral_shape}"
            )

    def full(self):
        """Expand the half-plane storage to the full ``(n_y, n_x)`` spectrum."""
        n_x = self.grid.n_x
        out = np.zeros(self.coeffs.shape[:-1] + (n_x,), dtype=complex)
        half = self.coeffs.shape[-1]
        out[..., :half] = self.coeffs
        # f(-kx, -ky) = conj f(kx, ky); row index of -ky is (-iy) mod n_y
        mirror = np.conj(self.coeffs[..., 1 : n_x // 2])
        mirror = np.roll(mirror[..., ::-1, :], 1, axis=-2)
        out[..., n_x // 2 + 1 :] = mirror[..., ::-1]
        return out


def fft2(field):
    """Forward 2D transform of a real field (unnormalised, half-plane)."""
    values = np.asarray(field.values, dtype=float)
    return SpectralField2D(sfft.rfft2(values, axes=(-2, -1)), field.grid)


def ifft2(spec):
    """Inverse of :func:`fft2`; carries the ``1/N^2`` factor."""
    values = sfft.irfft2(spec.coeffs, s=spec.grid.shape, axes=(-2, -1))
    return RealField2D(values, spec.grid)


def dealias(spec):
    return SpectralField2D(spec.coeffs * spec.grid.dealias_mask, spec.grid)


@dataclass
class SpectralProfile:
    """Forward-normalised rfft coefficients of a real profile of ``length`` points."""

    coeffs: np.ndarray
    length: int

    @property
    def n_modes(self):
        return self.coeffs.shape[-1]

    @property
    def k(self):
        return np.arange(self.n_modes, dtype=float)


def rfft1(profile):
    profile = np.asarray(profile, dtype=float)
    n = profile.shape[-1]
    _check_even(n, "profile length")
    return SpectralProfile(sfft.rfft(profile, axis=-1, norm="forward"), n)


def truncate(spec, n_modes):
    """Keep the lowest ``n_modes`` modes (0 .. n_modes-1)."""
    if n_modes > spec.n_modes:
        raise ConfigError(
            f"cannot truncate {spec.n_modes} modes to {n_modes}; use pad to upsample"
        )
    return SpectralProfile(spec.coeffs[..., :n_modes].copy(), spec.length)


def pad(spec, n_modes):
    if n_modes < spec.n_modes:
        return truncate(spec, n_modes)
    out = np.zeros(spec.coeffs.shape[:-1] + (n_modes,), dtype=complex)
    out[..., : spec.n_modes] = spec.coeffs
    return SpectralProfile(out, spec.length)


def irfft1(spec, length=None):
    """Synthesize a real profile of ``length`` points from the stored modes.

    With fewer modes than ``length // 2 + 1`` the missing modes are zero, so
    this also produces low-passed and coarse-grid profiles.
    """
    length = spec.length if length is None else length
    _check_even(length, "profile length")
    if spec.n_modes > length // 2 + 1:
        raise ConfigError(f"{spec.n_modes} modes do not fit on {length} points")
    return sfft.irfft(spec.coeffs, n=length, axis=-1, norm="forward")


@dataclass(frozen=True)
class Phase:
    phi: float
    degenerate: bool = False

    def __post_init__(self):
        object.__setattr__(self, "phi", float(np.mod(self.phi, TWO_PI)))


def phase_of(coeffs, tol=PHASE_TOL):
    """Vectorised displacement phase of forward-normalised rfft coefficients.

    Returns ``(phi, degenerate)`` arrays over the leading dimensions; degenerate
    entries get ``phi = 0``.
    """
    c1 = np.asarray(coeffs)[..., 1]
    degenerate = np.abs(c1) <= tol
    phi = np.where(degenerate, 0.0, np.mod(-np.angle(c1), TWO_PI))
    return phi, degenerate


def extract_phase(spec, tol=PHASE_TOL, strict=True):
    """Phase of the first Fourier mode of a single profile.

    With ``strict=False`` a vanishing first mode gives ``Phase(0, degenerate=True)``
    instead of raising.
    """
    phi, degenerate = phase_of(spec.coeffs, tol)
    if np.ndim(phi):
        raise ValueError("extract_phase expects a single profile; use phase_of for batches")
    if degenerate:
        if strict:
            raise DegeneratePhase(
                f"first-mode magnitude {abs(spec.coeffs[..., 1]):.3e} is below {tol:g}"
            )
        return Phase(0.0, degenerate=True)
    return Phase(float(phi))


def _phi_value(phi):
    return phi.phi if isinstance(phi, Phase) else np.asarray(phi, dtype=float)


def _rotate(spec, phi, sign):
    phi = _phi_value(phi)
    factor = np.exp(sign * 1j * np.multiply.outer(phi, spec.k))
    return SpectralProfile(spec.coeffs * factor, spec.length)


def phase_align(spec, phi):
    """Shift the profile back by ``phi`` (mode k times ``exp(+i k phi)``)."""
    return _rotate(spec, phi, +1.0)


def phase_restore(spec, phi):
    """Inverse of :func:`phase_align` (mode k times ``exp(-i k phi)``)."""
    return _rotate(spec, phi, -1.0)


def shift_profile(profile, delta):
    """Circularly shift a real profile to ``u(y - delta)`` through Fourier space.

    Exact for grid-multiple shifts, and for any shift when the Nyquist mode
    is zero.
    """
    spec = rfft1(profile)
    return irfft1(phase_restore(spec, delta))


def lowpass_profile(profile, n_modes, length=None):
    """Keep modes ``0 .. n_modes-1`` and resample onto ``length`` points."""
    return irfft1(truncate(rfft1(profile), n_modes), length)


def spectral_derivative(spec, order, axis="y"):
    """Differentiate a :class:`SpectralProfile` or :class:`SpectralField2D`.

    ``axis`` is ``"x"`` or ``"y"`` for ``d^order/d axis^order``; ``axis="lap"``
    applies ``(-|k|^2)^order``, so ``order=-1`` is the inverse Laplacian (mean
    mode mapped to zero).  Odd derivatives zero the Nyquist modes, which have
    no real-valued derivative.
    """
    if isinstance(spec, SpectralProfile):
        k = spec.k
        nyq = (k == spec.length // 2) if spec.length % 2 == 0 else np.zeros_like(k, bool)
        if axis == "lap":
            factor = _lap_factor(k**2, order)
        else:
            factor = (1j * k) ** order
            if order % 2:
                factor = np.where(nyq, 0.0, factor)
        return SpectralProfile(spec.coeffs * factor, spec.length)

    grid = spec.grid
    if axis == "lap":
        factor = _lap_factor(grid.k2, order)
    elif axis in ("x", "y"):
        k = grid.kx if axis == "x" else grid.ky
        factor = (1j * k) ** order
        if order % 2:
            nyq = grid.n_x // 2 if axis == "x" else grid.n_y // 2
            factor = np.where(np.abs(k) == nyq, 0.0, factor)
    else:
        raise ValueError(f"unknown axis {axis!r}")
    return SpectralField2D(spec.coeffs * factor, grid)


def _lap_factor(k2, order):
    if order >= 0:
        return (-k2) ** order
    out = np.zeros_like(k2, dtype=float)
    np.divide(1.0, (-k2) ** (-order), out=out, where=k2 > 0)
    return out
