"""Forecast and climate diagnostics for zonal-mean trajectories.

Inputs are plain arrays: a trajectory ``U`` of shape ``(T, N_y)`` (or
``(M, T, N_y)`` for several trajectories / ensemble members) sampled every
``record_interval`` on the periodic domain ``[0, 2 pi)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError

DEFAULT_BINS = 128
QUANTILES = (5, 25, 75, 95)


# --- CRPS over lead time --------------------------------------------------------------


def crps_decomposition_series(forecast, truth, fair=False):
    """``(mae(t), variation(t))`` of an ensemble ``(m, T, N)`` against ``(T, N)``.

    ``CRPS(t) = mae(t) - variation(t)``, both averaged over ``y``.
    """
    forecast = np.asarray(forecast, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if forecast.ndim != 3 or forecast.shape[1:] != truth.shape:
        raise ConfigError(
            f"forecast {forecast.shape} and truth {truth.shape} are not aligned in time and space"
        )
    m, T, _ = forecast.shape
    mae = np.empty(T)
    var = np.empty(T)
    for t in range(T):
        a, b = kernels.crps_terms(truth[t], forecast[:, t])
        mae[t], var[t] = a.mean(), b.mean()
    if fair:
        var = var * m / (m - 1) if m > 1 else var * 0.0
    return mae, var


# --- PDFs -----------------------------------------------------------------------------------


@dataclass
class HistogramPDF:
    """Density on a (1-D to 3-D) rectilinear bin grid."""

    edges: list
    density: np.ndarray
    count: int
    names: tuple = ()

    @property
    def ndim(self):
        return len(self.edges)

    def volumes(self):
        widths = [np.diff(e) for e in self.edges]
        vol = widths[0]
        for w in widths[1:]:
            vol = np.multiply.outer(vol, w)
        return vol

    def integral(self):
        return float(np.sum(self.density * self.volumes()))

    def marginal(self, axis):
        """1-D marginal density along ``axis``."""
        vol = self.volumes()
        mass = self.density * vol
        other = tuple(i for i in range(self.ndim) if i != axis)
        m = mass.sum(axis=other)
        return HistogramPDF([self.edges[axis]], m / np.diff(self.edges[axis]), self.count,
                            (self.names[axis],) if self.names else ())

    def same_grid(self, other):
        return len(self.edges) == len(other.edges) and all(
            a.shape == b.shape and np.array_equal(a, b) for a, b in zip(self.edges, other.edges)
        )


def _as_trajectories(U):
    U = np.asarray(U, dtype=np.float64)
    if U.ndim == 2:
        U = U[None]
    if U.ndim != 3:
        raise ConfigError(f"expected (T, N) or (M, T, N) trajectories, got {U.shape}")
    return U


def y_derivative(U):
    """Spectral ``dU/dy`` on ``[0, 2 pi)`` along the last axis (Nyquist dropped)."""
    U = np.asarray(U, dtype=np.float64)
    n = U.shape[-1]
    c = np.fft.rfft(U, axis=-1)
    k = np.arange(c.shape[-1], dtype=float)
    if n % 2 == 0:
        k[-1] = 0.0
    return np.fft.irfft(1j * k * c, n=n, axis=-1)


def observables(U, record_interval=1.0):
    """``(U, dU/dy, dU/dt)`` flattened over rows ``0..T-2`` of every trajectory.

    The last row is dropped from all three so the joint histogram and its
    marginals use identical samples.
    """
    U = _as_trajectories(U)
    if U.shape[1] < 2:
        raise ConfigError("PDFs need at least two records for dU/dt")
    base = U[:, :-1]
    dy = y_derivative(base)
    dt = (U[:, 1:] - U[:, :-1]) / record_interval
    return base.ravel(), dy.ravel(), dt.ravel()


def pdf_edges(values, bins=DEFAULT_BINS):
    lo, hi = float(np.min(values)), float(np.max(values))
    if not hi > lo:
        lo, hi = lo - 0.5, hi + 0.5
    return np.linspace(lo, hi, bins + 1)


def _clip(values, edges):
    return np.clip(values, edges[0], edges[-1])


def histogram(values, edges, names=()):
    """Density of ``values`` (tuple of 1-D arrays) on ``edges``.

    Values outside the grid are clipped into the end bins so the density
    always integrates to one over the shared grid.
    """
    cols = [_clip(v, e) for v, e in zip(values, edges)]
    counts, _ = np.histogramdd(np.stack(cols, axis=1), bins=edges)
    n = len(cols[0])
    hp = HistogramPDF([np.asarray(e, float) for e in edges], np.zeros_like(counts), n, tuple(names))
    if n:
        hp.density = counts / (n * hp.volumes())
    return hp


def build_pdfs(U, record_interval=1.0, reference=None, bins=DEFAULT_BINS):
    """PDFs of ``U``, ``dU/dy`` and ``dU/dt`` plus their 3-D joint PDF.

    Bins span the range of ``reference`` (a trajectory array, default ``U``
    itself) so PDFs of different trajectories share one grid.
    """
    obs = observables(U, record_interval)
    ref = obs if reference is None else observables(reference, record_interval)
    edges = [pdf_edges(r, bins) for r in ref]
    names = ("U", "dyU", "dtU")
    out = {name: histogram((v,), (e,), (name,)) for name, v, e in zip(names, obs, edges)}
    out["joint"] = histogram(obs, edges, names)
    return out


def hellinger(p, q):
    """``1/2 * integral |p - q|`` over the shared bin grid (in ``[0, 1]``)."""
    if not p.same_grid(q):
        raise ConfigError("hellinger needs PDFs on identical bin grids")
    return float(0.5 * np.sum(np.abs(p.density - q.density) * p.volumes()))


# --- jets --------------------------------------------------------------------------------


@dataclass
class JetCensus:
    counts: np.ndarray
    positions: list = field(default_factory=list)


def count_jets(U):
    """Eastward jets: strict periodic local maxima of ``U`` with ``U > 0``.

    Works on a single profile or on any stack of profiles (last axis ``y``).
    """
    U = np.asarray(U, dtype=np.float64)
    mask = kernels.jet_mask(U)
    counts = mask.sum(axis=-1)
    flat = mask.reshape(-1, U.shape[-1])
    positions = [np.flatnonzero(r) for r in flat]
    if U.ndim == 1:
        return JetCensus(np.asarray(counts), positions)
    return JetCensus(counts, positions)


@dataclass
class TransitionPDF:
    """Joint frequencies of (jet count at ``t``, change to ``t+1``).

    ``freq[i, j]`` is for count ``counts[i]`` and change bucket
    ``changes[j]`` (``-1``: decrease by one or more, ``0``, ``+1``: increase).
    """

    counts: np.ndarray
    freq: np.ndarray
    changes: tuple = (-1, 0, 1)


def transition_pdf(counts):
    counts = np.asarray(counts)
    if counts.ndim == 1:
        counts = counts[None]
    if counts.shape[-1] < 2:
        raise ConfigError("transition_pdf needs at least two census entries")
    now = counts[:, :-1].ravel()
    change = np.sign(counts[:, 1:] - counts[:, :-1]).ravel().astype(int)
    values = np.unique(now)
    freq = np.zeros((len(values), 3))
    np.add.at(freq, (np.searchsorted(values, now), change + 1), 1.0)
    return TransitionPDF(values, freq / freq.sum())


# --- spectra ---------------------------------------------------------------------------


def psd_time_avg(U):
    """Time-mean power of modes ``1..N/2``; the sum is the mean variance of ``U``."""
    U = _as_trajectories(U)
    n = U.shape[-1]
    c = np.fft.rfft(U, axis=-1) / n
    p = 2.0 * np.abs(c[..., 1:]) ** 2
    if n % 2 == 0:
        p[..., -1] /= 2.0
    return p.reshape(-1, p.shape[-1]).mean(axis=0)


# --- events --------------------------------------------------------------------------------

EVENT_DIRECTION = {"coalescence": -1, "nucleation": 1}


def detect_events(counts, persistence=3):
    """Debounced count changes of one census as ``(index, old, new)`` tuples.

    A change is accepted once the new count has held for ``persistence``
    consecutive records; flickers shorter than that are ignored.
    """
    counts = np.asarray(counts, dtype=np.int64)
    events = []
    if counts.size == 0:
        return events
    state = counts[0]
    t = 1
    while t <= len(counts) - persistence:
        val = counts[t]
        if val != state and np.all(counts[t : t + persistence] == val):
            events.append((t, int(state), int(val)))
            state = val
        t += 1
    return events


def first_event_index(counts, kind, persistence=3):
    """Per-census index of the first debounced event of ``kind`` (``-1``: none)."""
    if kind not in EVENT_DIRECTION:
        raise ConfigError(f"event kind must be one of {sorted(EVENT_DIRECTION)}, got {kind!r}")
    counts = np.asarray(counts, dtype=np.int64)
    if counts.ndim == 1:
        counts = counts[None]
    return kernels.first_change(counts, EVENT_DIRECTION[kind], persistence)


@dataclass
class EventTimePDF:
    kind: str
    times: np.ndarray
    censored: float
    edges: np.ndarray
    density: np.ndarray
    quantiles: dict

    @property
    def n_members(self):
        return len(self.times)


def time_to_event_pdf(U_or_counts, kind, record_interval=1.0, persistence=3, bins=32, counts=False):
    """Distribution over members of the time to the first ``kind`` event.

    ``U_or_counts`` is an ensemble ``(m, T, N)`` of profiles, or ``(m, T)``
    jet counts when ``counts=True``.  Members without an event are reported
    in ``censored`` (a fraction) and left out of the histogram and
    quantiles.
    """
    c = np.asarray(U_or_counts)
    if not counts:
        c = count_jets(c).counts
    idx = first_event_index(c, kind, persistence)
    hit = idx >= 0
    times = np.where(hit, idx * record_interval, np.nan)
    t_hit = times[hit]
    censored = float(1.0 - hit.mean()) if len(idx) else 0.0
    horizon = c.shape[-1] * record_interval
    edges = np.linspace(0.0, horizon, bins + 1)
    hist, _ = np.histogram(t_hit, bins=edges)
    density = hist / (max(len(t_hit), 1) * np.diff(edges))
    if len(t_hit):
        qs = {q: float(np.percentile(t_hit, q)) for q in QUANTILES}
    else:
        qs = {q: float("nan") for q in QUANTILES}
    return EventTimePDF(kind, times, censored, edges, density, qs)
