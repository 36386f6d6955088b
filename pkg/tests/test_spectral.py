"""Transforms, wavenumber bookkeeping and phase alignment."""

import numpy as np
import pytest

from slt.errors import ConfigError, DegeneratePhase
from slt.spectral import (
    Phase,
    RealField2D,
    SpectralField2D,
    WavenumberGrid,
    dealias,
    extract_phase,
    fft2,
    ifft2,
    irfft1,
    lowpass_profile,
    pad,
    phase_align,
    phase_of,
    phase_restore,
    rfft1,
    shift_profile,
    spectral_derivative,
    truncate,
)

from conftest import random_profile


def y_grid(n):
    return 2 * np.pi * np.arange(n) / n


class TestWavenumberGrid:
    """Allowed wavenumbers and the 2/3 dealiasing rule."""

    def test_wavenumber_range(self):
        g = WavenumberGrid.create(16)
        assert sorted(set(g.ky[:, 0].astype(int))) == list(range(-7, 9))
        assert list(g.kx[0].astype(int)) == list(range(0, 9))

    def test_dealias_rule(self):
        g = WavenumberGrid.create(64)
        assert g.k_max == 21
        expect = (np.abs(g.kx) <= 21) & (np.abs(g.ky) <= 21)
        np.testing.assert_array_equal(g.dealias_mask, expect)

    def test_mask_symmetric_under_negation(self):
        g = WavenumberGrid.create(32)
        full = SpectralField2D(g.dealias_mask.astype(complex), g).full().real > 0.5
        flipped = np.roll(np.roll(full[::-1, ::-1], 1, axis=0), 1, axis=1)
        np.testing.assert_array_equal(full, flipped)

    @pytest.mark.parametrize("n", [0, 15, -4])
    def test_odd_or_nonpositive_rejected(self, n):
        with pytest.raises(ConfigError):
            WavenumberGrid.create(n)

    def test_mismatched_field_rejected(self):
        g = WavenumberGrid.create(16)
        with pytest.raises(ConfigError):
            RealField2D(np.zeros((16, 8)), g)


class TestFFT2:
    """2D transform with the 1/N^2 factor on the inverse."""

    def test_round_trip(self, rng):
        g = WavenumberGrid.create(32)
        f = rng.standard_normal(g.shape)
        back = ifft2(fft2(RealField2D(f, g))).values
        assert np.max(np.abs(back - f)) <= 1e-12

    def test_pure_mode(self):
        g = WavenumberGrid.create(16)
        x, _ = g.coords()
        full = fft2(RealField2D(np.cos(3 * x), g)).full()
        nz = np.argwhere(np.abs(full) > 1e-9)
        kx = np.fft.fftfreq(16, 1 / 16)
        got = sorted((int(kx[j]), int(kx[i])) for i, j in nz)
        assert got == [(-3, 0), (3, 0)]
        np.testing.assert_allclose(np.abs(full[0, 3]), 16 * 16 / 2)

    def test_parseval(self, rng):
        g = WavenumberGrid.create(24)
        f = rng.standard_normal(g.shape)
        full = fft2(RealField2D(f, g)).full()
        lhs = np.sum(f**2) / 24**2
        rhs = np.sum(np.abs(full) ** 2) / 24**4
        assert abs(lhs - rhs) <= 1e-10 * lhs

    def test_hermitian(self, rng):
        g = WavenumberGrid.create(16)
        full = fft2(RealField2D(rng.standard_normal(g.shape), g)).full()
        neg = np.roll(np.roll(full[::-1, ::-1], 1, axis=0), 1, axis=1)
        np.testing.assert_allclose(full, np.conj(neg), atol=1e-12)

    def test_full_expansion_matches_numpy(self, rng):
        g = WavenumberGrid.create(16)
        f = rng.standard_normal(g.shape)
        np.testing.assert_allclose(fft2(RealField2D(f, g)).full(), np.fft.fft2(f), atol=1e-11)

    def test_dealias_zeroes_high_modes(self, rng):
        g = WavenumberGrid.create(16)
        spec = dealias(fft2(RealField2D(rng.standard_normal(g.shape), g)))
        assert np.all(spec.coeffs[~g.dealias_mask] == 0)


class TestProfiles:
    """1D forward-normalised transforms."""

    def test_single_mode(self):
        y = y_grid(256)
        c = rfft1(np.cos(2 * y)).coeffs
        nz = np.flatnonzero(np.abs(c) > 1e-12)
        assert list(nz) == [2]
        assert c[2] == pytest.approx(0.5)

    def test_round_trip(self, rng):
        u = rng.standard_normal(64)
        assert np.max(np.abs(irfft1(rfft1(u)) - u)) <= 1e-12

    def test_mode_zero_real(self, rng):
        assert rfft1(rng.standard_normal(32)).coeffs[0].imag == 0.0

    def test_lowpass_matches_dirichlet_convolution(self, rng):
        n, m = 64, 32
        u = rng.standard_normal(n)
        got = irfft1(truncate(rfft1(u), m))
        # direct circular convolution with the Dirichlet kernel of modes |k| <= m-1
        y = y_grid(n)
        d = y[:, None] - y[None, :]
        ks = np.arange(1, m)
        kernel = (1.0 + 2.0 * np.cos(np.multiply.outer(d, ks)).sum(-1)) / n
        np.testing.assert_allclose(got, kernel @ u, atol=1e-12)

    def test_coarse_resynthesis(self):
        y64, y16 = y_grid(64), y_grid(16)
        u = np.cos(y64) + 0.5 * np.sin(3 * y64) + 0.1 * np.cos(20 * y64)
        coarse = lowpass_profile(u, 8, 16)
        np.testing.assert_allclose(coarse, np.cos(y16) + 0.5 * np.sin(3 * y16), atol=1e-12)

    def test_truncation_cannot_grow(self, rng):
        spec = rfft1(rng.standard_normal(16))
        with pytest.raises(ConfigError):
            truncate(spec, 20)
        assert pad(spec, 20).n_modes == 20
        assert irfft1(pad(spec, 12), 22).shape == (22,)

    def test_too_many_modes_for_length(self, rng):
        with pytest.raises(ConfigError):
            irfft1(rfft1(rng.standard_normal(32)), 16)

    def test_odd_length_rejected(self):
        with pytest.raises(ConfigError):
            rfft1(np.zeros(15))


class TestPhase:
    """Method-of-slices primitives."""

    @pytest.mark.parametrize(
        "profile, phi",
        [
            (lambda y: np.cos(y - 0.7), 0.7),
            (lambda y: np.cos(y), 0.0),
            (lambda y: np.cos(y) + 0.3 * np.cos(5 * y - 1.1), 0.0),
        ],
    )
    def test_extract(self, profile, phi):
        got = extract_phase(rfft1(profile(y_grid(128)))).phi
        assert np.angle(np.exp(1j * (got - phi))) == pytest.approx(0.0, abs=1e-12)

    def test_phase_wraps(self):
        assert Phase(-0.5).phi == pytest.approx(2 * np.pi - 0.5)
        assert Phase(7.0).phi == pytest.approx(7.0 - 2 * np.pi)

    def test_align_gives_pure_cosine(self):
        y = y_grid(128)
        spec = rfft1(np.cos(y - 0.7))
        np.testing.assert_allclose(irfft1(phase_align(spec, 0.7)), np.cos(y), atol=1e-12)

    def test_aligned_first_mode_real_nonnegative(self, rng):
        spec = rfft1(rng.standard_normal(64))
        c1 = phase_align(spec, extract_phase(spec)).coeffs[1]
        assert abs(c1.imag) <= 1e-14 and c1.real > 0

    def test_restore_inverts_align(self, rng):
        spec = rfft1(rng.standard_normal(64))
        back = phase_restore(phase_align(spec, 1.234), 1.234)
        assert np.max(np.abs(back.coeffs - spec.coeffs)) <= 1e-12

    def test_align_is_negative_shift(self, rng):
        u = random_profile(rng, 64, 32)
        got = irfft1(phase_align(rfft1(u), 0.37))
        np.testing.assert_allclose(got, shift_profile(u, -0.37), atol=1e-12)

    def test_alignment_removes_any_shift(self, rng):
        u = random_profile(rng, 64, 32)
        ref = phase_align(rfft1(u), extract_phase(rfft1(u))).coeffs
        for delta in np.linspace(-3.0, 3.0, 13) + 0.123:
            s = rfft1(shift_profile(u, delta))
            got = phase_align(s, extract_phase(s)).coeffs
            assert np.max(np.abs(got - ref)) <= 1e-10

    def test_shift_by_grid_multiple_is_roll(self, rng):
        u = rng.standard_normal(32)
        np.testing.assert_allclose(shift_profile(u, 2 * np.pi * 3 / 32), np.roll(u, 3), atol=1e-12)

    def test_degenerate_first_mode(self):
        y = y_grid(64)
        spec = rfft1(np.cos(2 * y))
        with pytest.raises(DegeneratePhase):
            extract_phase(spec)
        p = extract_phase(spec, strict=False)
        assert p.degenerate and p.phi == 0.0

    def test_batched_phase(self, rng):
        u = rng.standard_normal((5, 32))
        phi, deg = phase_of(rfft1(u).coeffs)
        for i in range(5):
            assert phi[i] == pytest.approx(extract_phase(rfft1(u[i])).phi)
        assert not deg.any()


class TestDerivative:
    """Spectral differentiation and the inverse Laplacian."""

    def test_dy_cos(self):
        y = y_grid(64)
        d = irfft1(spectral_derivative(rfft1(np.cos(2 * y)), 1))
        np.testing.assert_allclose(d, -2 * np.sin(2 * y), atol=1e-12)

    def test_inverse_laplacian(self, rng):
        g = WavenumberGrid.create(32)
        spec = dealias(fft2(RealField2D(rng.standard_normal(g.shape), g)))
        spec.coeffs[0, 0] = 0.0
        back = spectral_derivative(spectral_derivative(spec, 1, "lap"), -1, "lap")
        f, fb = ifft2(spec).values, ifft2(back).values
        assert np.max(np.abs(fb - f)) <= 1e-10

    def test_hyper_laplacian_single_mode(self):
        g = WavenumberGrid.create(32)
        x, y = g.coords()
        f = np.cos(3 * x + 4 * y)
        got = ifft2(spectral_derivative(fft2(RealField2D(f, g)), 2, "lap")).values
        np.testing.assert_allclose(got, 625 * f, atol=1e-9)

    def test_dx_field(self):
        g = WavenumberGrid.create(16)
        x, _ = g.coords()
        got = ifft2(spectral_derivative(fft2(RealField2D(np.sin(2 * x), g)), 1, "x")).values
        np.testing.assert_allclose(got, 2 * np.cos(2 * x), atol=1e-12)

    def test_unknown_axis(self):
        g = WavenumberGrid.create(16)
        with pytest.raises(ValueError):
            spectral_derivative(SpectralField2D(np.zeros(g.spectral_shape, complex), g), 1, "z")
