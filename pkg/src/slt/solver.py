"""Pseudo-spectral solver for stochastically forced beta-plane turbulence.

Integrates the barotropic vorticity equation

    d(zeta)/dt + u . grad(zeta) + beta d(psi)/dx = xi - mu zeta + nu_n lap^n zeta

on the doubly periodic ``[0, 2pi)^2`` box.  The linear terms (drag,
hyperviscosity, beta) are treated with Crank-Nicolson; the advection term is
evaluated at the half step from an explicit predictor; the white-in-time
forcing lives on an annulus of wavevectors around ``k_f``.

The state may carry a leading batch axis of independent members.  Each
member owns its random stream, so a member's trajectory does not depend on
which other members it was batched with.
"""

from __future__ import annotations

import dataclasses
import functools
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from . import kernels
from .errors import ConfigError, SolverBlowup
from .seeding import SOLVER_STREAM, member_rng
from .spectral import SpectralField2D, WavenumberGrid

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    N: int = 256
    beta: float = 90.0
    mu: float = 4e-2
    nu: float = 100.0
    n_hyper: int = 4
    epsilon: float = 1e-4
    k_f: float = 16.0
    delta_k: float = 1.0
    dt: float = 4e-4
    record_interval: float = 1.0
    seed: int = 0
    t_max: float = 1000.0
    spinup_mu_t: float = 2.5
    gamma: float = 0.0

    def __post_init__(self):
        if self.N <= 0 or self.N % 2:
            raise ConfigError(f"N must be a positive even integer, got {self.N}")
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.epsilon < 0:
            raise ConfigError(f"epsilon must be non-negative, got {self.epsilon}")
        if self.mu < 0 or self.nu < 0:
            raise ConfigError("mu and nu must be non-negative")
        if self.n_hyper < 1:
            raise ConfigError(f"n_hyper must be >= 1, got {self.n_hyper}")
        if self.k_f + self.delta_k >= self.N // 3:
            raise ConfigError(
                f"forcing annulus k_f + delta_k = {self.k_f + self.delta_k} must stay "
                f"below k_max = {self.N // 3}"
            )
        if not -1 < self.gamma < 1:
            raise ConfigError("gamma must lie in (-1, 1)")
        if not self.record_interval > 0:
            raise ConfigError("record_interval must be positive")

    @property
    def spinup_time(self):
        """Discard boundary ``spinup_mu_t / mu`` (whole run if ``mu = 0``)."""
        return self.spinup_mu_t / self.mu if self.mu > 0 else 0.0

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown solver keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self):
        return dataclasses.asdict(self)


DESK_SOLVER = dict(N=64, beta=30.0, k_f=8.0, mu=0.04, epsilon=3e-2, dt=1e-2)


@dataclass
class SolverState:
    """Vorticity spectrum, time and the per-member forcing streams.

    ``zeta_hat.coeffs`` has shape ``(members, n_y, n_x // 2 + 1)``.
    """

    zeta_hat: SpectralField2D
    t: float = 0.0
    rngs: list = field(default_factory=list)
    n_steps: int = 0

    @property
    def members(self):
        return self.zeta_hat.coeffs.shape[0]

    @property
    def grid(self):
        return self.zeta_hat.grid


@dataclass(frozen=True, eq=False)
class ForcingAnnulus:
    """Forced wavevectors ``| |k| - k_f | < delta_k`` off the axes.

    ``wavevectors`` lists the full (``+-k``) set; ``rows``/``cols`` index the
    ``k_x > 0`` half used for sampling (the ``-k`` partners follow from
    Hermitian symmetry).
    """

    wavevectors: np.ndarray
    count: int
    rows: np.ndarray
    cols: np.ndarray
    ky_half: np.ndarray
    variance_rate: float
    grid: WavenumberGrid

    def amplitude(self, dt):
        """Physical-space amplitude of the forcing sum for time step ``dt``."""
        return math.sqrt(self.variance_rate / dt)


def build_annulus(grid, k_f, delta_k=1.0, epsilon=1e-4, gamma=0.0):
    kx = np.arange(-grid.n_x // 2 + 1, grid.n_x // 2 + 1)
    ky = np.arange(-grid.n_y // 2 + 1, grid.n_y // 2 + 1)
    KX, KY = np.meshgrid(kx, ky)
    kmag = np.hypot(KX, KY)
    sel = (np.abs(kmag - k_f) < delta_k) & (KX != 0) & (KY != 0)
    vecs = np.stack([KX[sel], KY[sel]], axis=1)
    if len(vecs) == 0:
        raise ConfigError(f"empty forcing annulus for k_f={k_f}, delta_k={delta_k}")
    half = vecs[vecs[:, 0] > 0]
    rows = np.mod(half[:, 1], grid.n_y)
    cols = half[:, 0]
    count = len(vecs)
    rate = 2.0 * epsilon * k_f**2 / count * (1.0 - gamma) / (1.0 + gamma)
    return ForcingAnnulus(vecs, count, rows, cols, half[:, 1].astype(float), rate, grid)


def sample_forcing(annulus, dt, rng, shift=0.0):
    """One white-noise forcing realisation ``xi_hat`` (single member).

    Each ``+-k`` pair gets an independent uniform phase; ``shift`` translates
    the realisation by ``shift`` in ``y``.
    """
    return SpectralField2D(_forcing_coeffs(annulus, dt, [rng], shift)[0], annulus.grid)


def _forcing_coeffs(annulus, dt, rngs, shift=0.0):
    grid = annulus.grid
    out = np.zeros((len(rngs),) + grid.spectral_shape, dtype=complex)
    scale = grid.n_x * grid.n_y * annulus.amplitude(dt)
    n = len(annulus.rows)
    for i, rng in enumerate(rngs):
        theta = rng.random(n) * (2.0 * np.pi)
        if shift:
            theta = theta - annulus.ky_half * shift
        out[i, annulus.rows, annulus.cols] = scale * np.exp(1j * theta)
    return out


def hyperviscosity_coefficient(nu, n_hyper, k_max):
    """``nu_n = (-1)^(n+1) nu / k_max^(2n)``, the coefficient of ``lap^n``."""
    if k_max <= 0:
        raise ConfigError("k_max must be positive")
    return (-1) ** (n_hyper + 1) * nu / float(k_max) ** (2 * n_hyper)


def linear_operator(grid, config):
    """Per-mode linear rate ``L(k) = -mu - nu (|k|/k_max)^2n + i beta k_x / |k|^2``."""
    k2 = grid.k2
    nu_n = hyperviscosity_coefficient(config.nu, config.n_hyper, grid.k_max)
    hyper = nu_n * (-k2) ** config.n_hyper
    return -config.mu + hyper + 1j * config.beta * grid.kx * grid.inv_k2


def _velocity_and_gradient(zeta, grid):
    psi = -zeta * grid.inv_k2
    stack = np.stack(
        [
            -1j * grid.ky * psi,  # u = -d(psi)/dy
            1j * grid.kx * psi,  # v = d(psi)/dx
            1j * grid.kx * zeta,
            1j * grid.ky * zeta,
        ]
    )
    return sfft.irfft2(stack, s=grid.shape, axes=(-2, -1))


def _nonlinear(zeta, grid, want_umax=False):
    u, v, zx, zy = _velocity_and_gradient(zeta, grid)
    prod = kernels.advect(u, v, zx, zy)
    out = sfft.rfft2(prod, axes=(-2, -1)) * grid.dealias_mask
    if want_umax:
        return out, max(np.abs(u).max(), np.abs(v).max())
    return out


def nonlinear_term(zeta_hat, grid=None):
    """Dealiased ``-(u . grad zeta)`` computed pseudo-spectrally."""
    grid = zeta_hat.grid if grid is None else grid
    return SpectralField2D(_nonlinear(zeta_hat.coeffs, grid), grid)


class BetaPlaneSolver:
    """Precomputed operators for one configuration."""

    def __init__(self, config):
        self.config = config
        self.grid = WavenumberGrid.create(config.N)
        self.annulus = build_annulus(
            self.grid, config.k_f, config.delta_k, config.epsilon, config.gamma
        )
        self.L = linear_operator(self.grid, config)
        mask = self.grid.dealias_mask.copy()
        mask[0, 0] = False
        self.mask = mask
        dt = config.dt
        self._a = np.ascontiguousarray(mask * (1 + 0.5 * dt * self.L) / (1 - 0.5 * dt * self.L))
        self._b = np.ascontiguousarray(mask * dt / (1 - 0.5 * dt * self.L))
        self._ah = np.ascontiguousarray(mask * (1 + 0.25 * dt * self.L) / (1 - 0.25 * dt * self.L))
        self._bh = np.ascontiguousarray(mask * (0.5 * dt) / (1 - 0.25 * dt * self.L))
        self._cfl_warned = False

    def initial_state(self, members=1, seed=None, zeta_hat=None):
        seed = self.config.seed if seed is None else seed
        if zeta_hat is None:
            coeffs = np.zeros((members,) + self.grid.spectral_shape, dtype=complex)
        else:
            coeffs = np.array(zeta_hat, dtype=complex, copy=True)
            if coeffs.ndim == 2:
                coeffs = coeffs[None]
            members = coeffs.shape[0]
        rngs = [member_rng(seed, m, SOLVER_STREAM) for m in range(members)]
        return SolverState(SpectralField2D(coeffs, self.grid), 0.0, rngs)

    def forcing(self, state, shift=0.0):
        if self.config.epsilon == 0:
            return None
        return _forcing_coeffs(self.annulus, self.config.dt, state.rngs, shift)

    def step(self, state, forcing=None, stochastic=True):
        """Advance ``state`` in place by one time step and return it.

        ``forcing`` overrides the sampled realisation (an array broadcastable
        to the state); ``stochastic=False`` switches forcing off.
        """
        zeta = state.zeta_hat.coeffs
        if forcing is None and stochastic:
            xi = self.forcing(state)
        elif forcing is not None:
            xi = np.ascontiguousarray(np.broadcast_to(forcing, zeta.shape), dtype=complex)
        else:
            xi = None
        n0, umax = _nonlinear(zeta, self.grid, want_umax=True)
        self._check_cfl(umax, state.t)
        zh = kernels.cn_update(zeta, n0, xi, self._ah, self._bh)
        nh = _nonlinear(zh, self.grid)
        new = kernels.cn_update(zeta, nh, xi, self._a, self._b)
        state.n_steps += 1
        state.t = state.n_steps * self.config.dt
        if not np.isfinite(new).all():
            raise SolverBlowup(f"non-finite vorticity at t={state.t:.6g}", time=state.t)
        state.zeta_hat = SpectralField2D(new, self.grid)
        return state

    def _check_cfl(self, umax, t):
        courant = umax * self.config.dt * self.config.N / (2 * np.pi)
        if courant > 0.5 and not self._cfl_warned:
            self._cfl_warned = True
            warnings.warn(
                f"Courant number {courant:.3f} exceeds 0.5 at t={t:.4g}", RuntimeWarning
            )

    def advance(self, state, n_steps, **kw):
        for _ in range(n_steps):
            self.step(state, **kw)
        return state


@functools.lru_cache(maxsize=8)
def get_solver(config):
    return BetaPlaneSolver(config)


def step(state, config, annulus=None, forcing=None, stochastic=True):
    """Advance one ``dt``; see :meth:`BetaPlaneSolver.step`."""
    solver = get_solver(config)
    if annulus is not None and annulus.count != solver.annulus.count:
        raise ConfigError("annulus does not match the solver configuration")
    return solver.step(state, forcing=forcing, stochastic=stochastic)


def _coeffs(state):
    if isinstance(state, SolverState):
        return state.zeta_hat.coeffs, state.grid
    return state.coeffs, state.grid


def energy(state):
    """Kinetic energy per unit area, ``1/2 sum |zeta_k|^2 / (|k|^2 N^4)``."""
    z, grid = _coeffs(state)
    w = grid.half_plane_weight * grid.inv_k2
    return 0.5 * np.sum(w * np.abs(z) ** 2, axis=(-2, -1)) / (grid.n_x * grid.n_y) ** 2


def enstrophy(state):
    z, grid = _coeffs(state)
    w = grid.half_plane_weight
    return 0.5 * np.sum(w * np.abs(z) ** 2, axis=(-2, -1)) / (grid.n_x * grid.n_y) ** 2


def zonal_velocity_profile(state):
    """Zonal-mean zonal velocity ``U(y)`` from the ``k_x = 0`` modes.

    Returns shape ``(members, n_y)`` for batched states and ``(n_y,)`` for a
    single spectrum.
    """
    z, grid = _coeffs(state)
    ky = grid.ky[:, 0]
    inv = np.zeros_like(ky)
    np.divide(1.0, ky, out=inv, where=ky != 0)
    u_col = 1j * z[..., :, 0] * inv
    return sfft.ifft(u_col, axis=-1).real / grid.n_x


def reynolds_stress_forcing(state):
    """Zonal mean of ``zeta' v'`` (dealiased in ``y``), same shape as ``U``."""
    z, grid = _coeffs(state)
    eddy = z.copy()
    eddy[..., :, 0] = 0.0
    psi = -eddy * grid.inv_k2
    zeta_p, v_p = sfft.irfft2(np.stack([eddy, 1j * grid.kx * psi]), s=grid.shape, axes=(-2, -1))
    flux = np.mean(zeta_p * v_p, axis=-1)
    spec = sfft.rfft(flux, axis=-1)
    spec[..., grid.n_y // 3 + 1 :] = 0.0
    return sfft.irfft(spec, n=grid.n_y, axis=-1)


def zonal_tendency(state, config):
    """Right-hand side of the zonal-mean momentum budget at ``state``."""
    _, grid = _coeffs(state)
    U = zonal_velocity_profile(state)
    ky = np.arange(grid.n_y // 2 + 1, dtype=float)
    damp = config.nu * (ky / grid.k_max) ** (2 * config.n_hyper)
    hyper = sfft.irfft(-damp * sfft.rfft(U, axis=-1), n=grid.n_y, axis=-1)
    return -config.mu * U + hyper + reynolds_stress_forcing(state)


def zonal_budget_residual(state0, state1, config):
    """Max-norm mismatch between ``(U1 - U0)/dt`` and the budget at ``state0``.

    Vanishes for a state at rest; otherwise it measures the first-order
    time-discretisation error of the solver over the step.
    """
    dt = state1.t - state0.t if isinstance(state0, SolverState) else config.dt
    if not dt > 0:
        dt = config.dt
    dUdt = (zonal_velocity_profile(state1) - zonal_velocity_profile(state0)) / dt
    return float(np.max(np.abs(dUdt - zonal_tendency(state0, config))))


def copy_state(state):
    import copy

    return SolverState(
        SpectralField2D(state.zeta_hat.coeffs.copy(), state.grid),
        state.t,
        [copy.deepcopy(r) for r in state.rngs],
        state.n_steps,
    )


@dataclass
class ZonalRecord:
    """Zonal-mean trajectory sampled every ``record_interval``."""

    times: np.ndarray
    U: np.ndarray
    config: dict = field(default_factory=dict)
    member: int = 0

    @property
    def record_interval(self):
        if len(self.times) > 1:
            return float(self.times[1] - self.times[0])
        return float(self.config.get("record_interval", 1.0))

    def __len__(self):
        return len(self.times)


def _steps(duration, dt, what):
    n = duration / dt
    if abs(n - round(n)) > 1e-6 * max(1.0, n):
        raise ConfigError(f"{what} ({duration}) is not a whole number of time steps ({dt})")
    return int(round(n))


def run_and_record(config, members=1, progress=None):
    """Integrate from rest, drop the spin-up and record ``U`` each interval.

    Returns one :class:`ZonalRecord` per member.  On blow-up the records
    gathered so far are attached to the raised :class:`SolverBlowup`.
    """
    solver = get_solver(config)
    state = solver.initial_state(members)
    n_spin = _steps(config.spinup_time, config.dt, "spin-up time")
    per_rec = _steps(config.record_interval, config.dt, "record interval")
    n_rec = int(math.floor((config.t_max - config.spinup_time) / config.record_interval + 1e-9)) + 1
    if n_rec < 1:
        raise ConfigError("t_max ends before the spin-up boundary")
    U = np.empty((members, n_rec, config.N))
    times = config.spinup_time + config.record_interval * np.arange(n_rec)
    done = 0
    try:
        solver.advance(state, n_spin)
        for j in range(n_rec):
            if j:
                solver.advance(state, per_rec)
            U[:, j] = zonal_velocity_profile(state)
            done = j + 1
            if progress is not None:
                progress(j + 1, n_rec)
    except SolverBlowup as exc:
        exc.partial = _records(times[:done], U[:, :done], config)
        raise
    return _records(times, U, config)


def _records(times, U, config):
    snap = config.to_dict()
    return [ZonalRecord(times.copy(), U[m].copy(), snap, m) for m in range(U.shape[0])]
