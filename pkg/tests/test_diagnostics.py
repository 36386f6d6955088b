"""Forecast and climate diagnostics."""

import numpy as np
import pytest
from scipy.stats import kstest

from slt import diagnostics as dg
from slt.errors import ConfigError
from slt.training import crps_ensemble

Y = 2 * np.pi * np.arange(64) / 64


class TestCRPSSeries:
    """MAE and ensemble-variation curves over lead time."""

    def test_perfect_ensemble(self, rng):
        truth = rng.standard_normal((5, 8))
        mae, var = dg.crps_decomposition_series(np.stack([truth] * 3), truth)
        assert np.all(mae == 0) and np.all(var == 0)

    def test_symmetric_pair(self, rng):
        truth = rng.standard_normal((4, 8))
        a = 0.3
        mae, var = dg.crps_decomposition_series(np.stack([truth + a, truth - a]), truth)
        np.testing.assert_allclose(mae, a, atol=1e-15)
        np.testing.assert_allclose(var, a / 2, atol=1e-15)

    def test_consistent_with_crps_ensemble(self, rng):
        truth = rng.standard_normal((6, 8))
        ens = rng.standard_normal((5, 6, 8))
        mae, var = dg.crps_decomposition_series(ens, truth)
        for t in range(6):
            assert mae[t] - var[t] == pytest.approx(crps_ensemble(truth[t], ens[:, t]), abs=1e-14)

    def test_saturation_for_decorrelated_ensembles(self):
        """Independent stationary AR(1) ensembles: error grows, then plateaus."""
        r = np.random.default_rng(0)
        T, m, n = 400, 32, 16
        # all series start at zero and relax to a unit-variance stationary state
        x = np.zeros((m + 1, T, n))
        for t in range(1, T):
            x[:, t] = 0.98 * x[:, t - 1] + np.sqrt(1 - 0.98**2) * r.standard_normal((m + 1, n))
        mae, var = dg.crps_decomposition_series(x[1:], x[0])
        early, late1, late2 = mae[:5].mean(), mae[250:325].mean(), mae[325:].mean()
        assert early < 0.5 * late1
        assert late2 == pytest.approx(late1, rel=0.1)
        assert var[325:].mean() == pytest.approx(var[250:325].mean(), rel=0.1)

    def test_misaligned(self, rng):
        with pytest.raises(ConfigError):
            dg.crps_decomposition_series(rng.standard_normal((2, 5, 8)), rng.standard_normal((4, 8)))


class TestPDFs:
    """Histograms of U and its derivatives."""

    def test_constant_record(self):
        pdfs = dg.build_pdfs(np.full((10, 16), 0.7))
        for name in ("U", "dyU", "dtU"):
            p = pdfs[name]
            assert np.count_nonzero(p.density) == 1
            assert p.integral() == pytest.approx(1.0, abs=1e-12)
        for name in ("dyU", "dtU"):
            e = pdfs[name].edges[0]
            k = np.flatnonzero(pdfs[name].density)[0]
            assert e[k] <= 0.0 <= e[k + 1]

    def test_gaussian_record(self):
        r = np.random.default_rng(5)
        U = r.standard_normal((1000, 1000))
        p = dg.build_pdfs(U, bins=128)["U"]
        e = p.edges[0]
        cdf = np.concatenate([[0.0], np.cumsum(p.density * np.diff(e))])
        from scipy.stats import norm

        assert np.max(np.abs(cdf - norm.cdf(e))) < 0.01
        assert kstest(U[:-1].ravel()[:100_000], "norm").statistic < 0.01

    def test_integrals_and_marginals(self, rng):
        U = np.cumsum(rng.standard_normal((300, 32)), axis=0)
        pdfs = dg.build_pdfs(U, bins=16)
        for p in pdfs.values():
            assert p.integral() == pytest.approx(1.0, abs=1e-9)
            assert np.all(p.density >= 0)
        for axis, name in enumerate(("U", "dyU", "dtU")):
            np.testing.assert_allclose(pdfs["joint"].marginal(axis).density, pdfs[name].density, atol=1e-12)

    def test_derivatives(self):
        U = np.stack([np.sin(2 * Y), np.sin(2 * Y) + 0.5])
        dy = dg.y_derivative(U)
        np.testing.assert_allclose(dy[0], 2 * np.cos(2 * Y), atol=1e-12)
        base, dyv, dt = dg.observables(U, record_interval=0.5)
        np.testing.assert_allclose(dt, 1.0)
        assert len(base) == len(dyv) == len(dt) == 64

    def test_shared_reference_grid(self, rng):
        a, b = rng.standard_normal((2, 50, 16))
        pa = dg.build_pdfs(a, reference=a)
        pb = dg.build_pdfs(3 * b, reference=a)
        assert pa["U"].same_grid(pb["U"])
        assert pb["U"].integral() == pytest.approx(1.0)

    def test_needs_two_records(self):
        with pytest.raises(ConfigError):
            dg.build_pdfs(np.zeros((1, 8)))


class TestHellinger:
    """Half the L1 distance between densities."""

    def _uniform(self, lo, hi, edges):
        return dg.histogram((np.linspace(lo, hi, 100_001)[:-1] + 0.5e-5 * (hi - lo),), (edges,))

    def test_identical(self, rng):
        p = dg.histogram((rng.standard_normal(1000),), (np.linspace(-4, 4, 33),))
        assert dg.hellinger(p, p) == 0.0

    def test_disjoint(self):
        e = np.linspace(0, 4, 41)
        assert dg.hellinger(self._uniform(0, 1, e), self._uniform(2, 3, e)) == pytest.approx(1.0)

    def test_half_overlap(self):
        e = np.linspace(0, 2, 41)
        assert dg.hellinger(self._uniform(0, 1, e), self._uniform(0.5, 1.5, e)) == pytest.approx(0.5, abs=1e-9)

    def test_symmetric_and_bounded(self, rng):
        e = np.linspace(-5, 5, 21)
        p = dg.histogram((rng.standard_normal(500),), (e,))
        q = dg.histogram((rng.standard_normal(500) + 1,), (e,))
        h = dg.hellinger(p, q)
        assert 0 < h <= 1 and h == dg.hellinger(q, p)

    def test_grid_mismatch(self, rng):
        x = rng.standard_normal(100)
        with pytest.raises(ConfigError):
            dg.hellinger(dg.histogram((x,), (np.linspace(-3, 3, 11),)), dg.histogram((x,), (np.linspace(-3, 3, 12),)))


class TestJets:
    """Eastward local maxima."""

    def test_three_jets(self):
        census = dg.count_jets(np.sin(3 * Y))
        assert census.counts == 3
        assert list(census.positions[0]) == [5, 27, 48]

    def test_rest(self):
        assert dg.count_jets(np.zeros(64)).counts == 0

    def test_westward_ignored(self):
        assert dg.count_jets(np.sin(3 * Y) - 2).counts == 0

    def test_periodic_wrap(self):
        u = np.cos(Y)
        assert dg.count_jets(u).counts == 1
        assert list(dg.count_jets(u).positions[0]) == [0]

    def test_shift_equivariant(self, rng):
        U = np.cumsum(rng.standard_normal(64), axis=0)
        U -= np.linspace(U[0], U[-1], 64)
        a = dg.count_jets(U)
        b = dg.count_jets(np.roll(U, 7))
        assert a.counts == b.counts
        assert sorted((a.positions[0] + 7) % 64) == list(b.positions[0])

    def test_batched(self):
        U = np.stack([np.sin(3 * Y), np.sin(2 * Y), -np.ones(64)])
        assert list(dg.count_jets(U).counts) == [3, 2, 0]


class TestTransitions:
    """Jet-count change frequencies."""

    def test_enumeration(self):
        tp = dg.transition_pdf([2, 2, 3, 3, 2])
        assert list(tp.counts) == [2, 3]
        np.testing.assert_allclose(tp.freq * 4, [[0, 1, 1], [1, 1, 0]])

    def test_constant(self):
        tp = dg.transition_pdf([4] * 10)
        np.testing.assert_allclose(tp.freq, [[0, 1, 0]])

    def test_normalised(self, rng):
        tp = dg.transition_pdf(rng.integers(1, 6, size=(3, 50)))
        assert tp.freq.sum() == pytest.approx(1.0, abs=1e-15)

    def test_too_short(self):
        with pytest.raises(ConfigError):
            dg.transition_pdf([3])


class TestPSD:
    """Time-averaged power spectrum."""

    def test_single_mode(self):
        a = 1.7
        p = dg.psd_time_avg(np.tile(a * np.cos(3 * Y), (5, 1)))
        assert np.argmax(p) == 2
        assert p.sum() == pytest.approx(a * a / 2)

    def test_white_noise_flat(self):
        r = np.random.default_rng(1)
        p = dg.psd_time_avg(r.standard_normal((20_000, 64)))
        inner = p[:-1]
        np.testing.assert_allclose(inner, inner.mean(), rtol=0.05)

    def test_parseval(self, rng):
        U = rng.standard_normal((3, 40, 32)) + 0.3
        p = dg.psd_time_avg(U)
        var = U.var(axis=-1).mean()
        assert p.sum() == pytest.approx(var, rel=1e-8)


class TestEvents:
    """Debounced coalescence and nucleation times."""

    def test_point_mass(self):
        counts = np.tile([3, 3, 3, 2, 2, 2, 2, 2], (6, 1))
        pdf = dg.time_to_event_pdf(counts, "coalescence", counts=True, bins=8)
        np.testing.assert_array_equal(pdf.times, 3.0)
        assert pdf.censored == 0.0
        assert np.count_nonzero(pdf.density) == 1
        assert all(v == 3.0 for v in pdf.quantiles.values())

    def test_flicker_debounced(self):
        c = np.array([3, 2, 3, 2, 3, 3, 2, 2, 2, 2])
        assert dg.detect_events(c, 3) == [(6, 3, 2)]
        assert dg.first_event_index(c, "coalescence", 3)[0] == 6
        assert dg.first_event_index(c, "nucleation", 3)[0] == -1

    def test_direction(self):
        c = np.array([2, 2, 3, 3, 3, 3, 2, 2, 2])
        assert dg.first_event_index(c, "nucleation")[0] == 2
        assert dg.first_event_index(c, "coalescence")[0] == 6

    def test_censored_and_quantiles(self, rng):
        counts = np.full((40, 30), 3)
        hits = rng.integers(1, 25, size=30)
        for i, h in enumerate(hits):
            counts[i, h:] = 2
        pdf = dg.time_to_event_pdf(counts, "coalescence", record_interval=2.0, counts=True)
        assert pdf.censored == pytest.approx(10 / 40)
        np.testing.assert_array_equal(pdf.times[:30], 2.0 * hits)
        q = [pdf.quantiles[k] for k in (5, 25, 75, 95)]
        assert q == sorted(q)
        assert pdf.n_members == 40

    def test_from_profiles(self):
        U = np.stack([np.sin(3 * Y)] * 4 + [np.sin(2 * Y)] * 6)
        pdf = dg.time_to_event_pdf(U[None], "coalescence", persistence=3)
        assert pdf.times[0] == 4.0

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            dg.first_event_index([1, 2], "merger")

    def test_all_censored(self):
        pdf = dg.time_to_event_pdf(np.full((3, 10), 2), "nucleation", counts=True)
        assert pdf.censored == 1.0 and np.isnan(pdf.quantiles[5])
