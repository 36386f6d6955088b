"""Losses, the optimisation loop and forecast-skill helpers.

The training objective for one window ``(U_{t-S+1..t}, U_{t+1})`` is

    CRPS(U_{t+1}, ensemble of decoded forecasts)
  + CRPS(E(U_{t+1}), ensemble of latent forecasts)
  + MAE(U_t, D(E(U_t)))
  + MAE(|F[U_t]|, |F[D(E(U_t))]|)

with the ensemble CRPS estimator

    (1/m) sum_i |x - x_i| - 1/(2 m^2) sum_ij |x_i - x_j|

averaged over vector components and windows.  All terms are evaluated on
z-scored profiles.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .data import WindowSampler
from .errors import ConfigError, NonFiniteLoss
from .seeding import SAMPLER_STREAM, TRAINING_STREAM, member_rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    epochs: int = 400
    ensemble_m: int = 4
    seq_len: int = 10
    transformer_lr: float = 5e-4
    autoencoder_lr: float = 2.5e-3
    lr_decay: float = 0.9825
    blocks: int = 3
    channels: int = 4
    latent_dim: int = 64
    batches_per_epoch: int | None = None
    val_windows: int = 256
    val_fraction: float = 0.1
    fair_crps: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("batch_size", "epochs", "ensemble_m", "seq_len", "blocks", "channels", "latent_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in (0, 1)")
        if self.fair_crps and self.ensemble_m < 2:
            raise ConfigError("the fair CRPS estimator needs ensemble_m >= 2")
        for name in ("transformer_lr", "autoencoder_lr", "lr_decay"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class LossBreakdown:
    crps_physical: float
    crps_latent: float
    mae_identity: float
    spectral_mae: float
    total: float
    tensor: object = None

    TERMS = ("crps_physical", "crps_latent", "mae_identity", "spectral_mae", "total")

    def as_dict(self):
        return {k: getattr(self, k) for k in self.TERMS}


# --- scores ------------------------------------------------------------------------


def crps_ensemble(truth, ensemble, fair=False, return_terms=False):
    """Ensemble CRPS of ``truth`` (shape ``(n,)``) against ``ensemble`` ``(m, n)``.

    Averaged over the ``n`` components.  ``fair`` replaces ``1/(2 m^2)`` with
    ``1/(2 m (m-1))``.
    """
    truth = np.atleast_1d(np.asarray(truth, dtype=np.float64))
    ens = np.asarray(ensemble, dtype=np.float64)
    if ens.ndim == 1:
        ens = ens[:, None] if truth.size == 1 else ens[None]
    if ens.shape[0] == 0:
        raise ConfigError("crps_ensemble needs at least one member")
    if ens.shape[1:] != truth.shape:
        raise ConfigError(f"ensemble shape {ens.shape} does not match truth {truth.shape}")
    m = ens.shape[0]
    mae, var = kernels.crps_terms(truth.ravel(), ens.reshape(m, -1))
    if fair:
        var = var * m / (m - 1) if m > 1 else var * 0.0
    mae, var = float(mae.mean()), float(var.mean())
    if return_terms:
        return mae - var, mae, var
    return mae - var


def crps_integral_oracle(truth, ensemble):
    """``int (F_m(x) - 1[x >= truth])^2 dx`` for the empirical CDF ``F_m``.

    The integrand is piecewise constant between the sorted breakpoints, so
    summing over those intervals integrates it exactly.
    """
    ens = np.sort(np.asarray(ensemble, dtype=np.float64).ravel())
    m = ens.size
    pts = np.sort(np.append(ens, float(truth)))
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        if b <= a:
            continue
        mid = 0.5 * (a + b)
        F = np.count_nonzero(ens <= mid) / m
        step = 1.0 if mid >= truth else 0.0
        total += (F - step) ** 2 * (b - a)
    return total


def spectral_mae(u, u_hat):
    """Mean over rfft modes ``0..L/2`` of ``| |F[u]| - |F[u_hat]| |`` (plain DFT)."""
    u = np.asarray(u, dtype=np.float64)
    u_hat = np.asarray(u_hat, dtype=np.float64)
    if u.shape != u_hat.shape:
        raise ConfigError(f"spectral_mae: shapes {u.shape} and {u_hat.shape} differ")
    return float(np.mean(np.abs(np.abs(np.fft.rfft(u, axis=-1)) - np.abs(np.fft.rfft(u_hat, axis=-1)))))


def crps_tensor(truth, ens, fair=False):
    """Differentiable CRPS: ``truth`` ``(B, n)``, ``ens`` ``(m, B, n)``; mean over ``B, n``."""
    m = ens.shape[0]
    mae = ad.mean(ad.abs_(ad.sub(ens, truth)))
    if m == 1:
        return mae
    pairs = [ad.abs_(ad.sub(ens[i], ens[j])) for i in range(m) for j in range(i + 1, m)]
    pair_sum = ad.sum_(ad.concat([ad.reshape(p, (1,) + p.shape) for p in pairs], axis=0), axis=0)
    denom = 2.0 * m * (m - 1) if fair else 2.0 * m * m
    return ad.sub(mae, ad.scale(ad.mean(pair_sum), 2.0 / denom))


def spectral_mae_tensor(u, u_hat):
    n = u.shape[-1]
    a = ad.complex_abs(ad.rfft1(u, n // 2 + 1, norm="backward"))
    b = ad.complex_abs(ad.rfft1(u_hat, n // 2 + 1, norm="backward"))
    return ad.mean(ad.abs_(ad.sub(a, b)))


def total_loss(model, hist, target, noise, fair=False):
    """Full objective on a batch of normalised windows.

    ``hist`` ``(B, S, N_y)``, ``target`` ``(B, N_y)``, ``noise``
    ``(m, B, D_M)`` standard normal draws.  Returns a
    :class:`LossBreakdown` whose ``tensor`` is the differentiable total.
    """
    hist = np.asarray(hist, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    b, s, n = hist.shape
    m, d = noise.shape[0], noise.shape[-1]
    profiles = np.concatenate([hist, target[:, None]], axis=1)
    z_all = model.encode(profiles)
    z_hist = z_all[:, :s, :]
    z_true = z_all[:, s, :]
    z_rep = ad.concat([z_hist] * m, axis=0) if m > 1 else z_hist
    z_pred = model.transformer_forward(z_rep, noise.reshape(m * b, d))
    u_pred = model.decode(z_pred)
    crps_u = crps_tensor(ad.Tensor(target), ad.reshape(u_pred, (m, b, n)), fair)
    crps_z = crps_tensor(z_true, ad.reshape(z_pred, (m, b, d)), fair)
    u_t = hist[:, -1, :]
    u_rec = model.decode(z_all[:, s - 1, :])
    mae_id = ad.mean(ad.abs_(ad.sub(u_rec, u_t)))
    spec = spectral_mae_tensor(ad.Tensor(u_t), u_rec)
    total = ad.add(ad.add(crps_u, crps_z), ad.add(mae_id, spec))
    return LossBreakdown(
        crps_u.item(), crps_z.item(), mae_id.item(), spec.item(), total.item(), total
    )


# --- optimisation ----------------------------------------------------------------------


@dataclass
class TrainResult:
    model: object
    log: list
    best_epoch: int
    best_val: float
    seconds: float


def make_optimizer(model, config):
    ae, tr = model.parameter_groups()
    return ad.Adam(
        [{"params": tr, "lr": config.transformer_lr}, {"params": ae, "lr": config.autoencoder_lr}],
        decay=config.lr_decay,
    )


def evaluate_loss(model, windows, noise, fair=False, chunk=256):
    """Mean loss terms over fixed windows without building a graph."""
    hist, target = windows
    sums = dict.fromkeys(LossBreakdown.TERMS, 0.0)
    with ad.no_grad():
        for i in range(0, len(target), chunk):
            sl = slice(i, i + chunk)
            lb = total_loss(model, hist[sl], target[sl], noise[:, sl], fair)
            w = len(target[sl])
            for k in sums:
                sums[k] += getattr(lb, k) * w
    return {k: v / len(target) for k, v in sums.items()}


def train(model, train_data, val_data, config, log_path=None, checkpoint=None, progress=None):
    """Optimise ``model`` on normalised ``ZonalData`` views.

    ``checkpoint`` is called as ``checkpoint(model, epoch, val_total)``
    whenever validation improves.  The best-validation parameters are
    loaded back into ``model`` before returning.
    """
    seq = model.config.seq_len
    sampler = WindowSampler(train_data, seq, member_rng(config.seed, 0, SAMPLER_STREAM))
    if sampler.n_windows < config.batch_size:
        raise ConfigError(
            f"training data has {sampler.n_windows} windows, fewer than batch size {config.batch_size}"
        )
    noise_rng = member_rng(config.seed, 0, TRAINING_STREAM)
    val_sampler = WindowSampler(val_data, seq, member_rng(config.seed, 1, SAMPLER_STREAM))
    val_windows = val_sampler.sample(config.val_windows)
    val_noise = member_rng(config.seed, 1, TRAINING_STREAM).standard_normal(
        (config.ensemble_m, config.val_windows, model.config.latent_dim)
    )
    n_batches = config.batches_per_epoch or max(1, sampler.n_windows // config.batch_size)
    opt = make_optimizer(model, config)
    history = []
    best_val, best_epoch, best_state = math.inf, -1, None
    t0 = time.perf_counter()
    fh = open(log_path, "w", newline="") if log_path else None
    writer = None
    try:
        if fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["epoch", "lr_transformer", "lr_autoencoder"]
                + [f"train_{k}" for k in LossBreakdown.TERMS]
                + [f"val_{k}" for k in LossBreakdown.TERMS]
            )
        for epoch in range(config.epochs):
            opt.set_epoch(epoch)
            sums = dict.fromkeys(LossBreakdown.TERMS, 0.0)
            for bi in range(n_batches):
                hist, target = sampler.sample(config.batch_size)
                noise = noise_rng.standard_normal(
                    (config.ensemble_m, config.batch_size, model.config.latent_dim)
                )
                opt.zero_grad()
                lb = total_loss(model, hist, target, noise, config.fair_crps)
                if not math.isfinite(lb.total):
                    raise NonFiniteLoss(
                        f"non-finite loss in epoch {epoch}, batch {bi}", batch_index=bi
                    )
                lb.tensor.backward()
                opt.step()
                for k in sums:
                    sums[k] += getattr(lb, k) / n_batches
            val = evaluate_loss(model, val_windows, val_noise, config.fair_crps)
            row = {
                "epoch": epoch,
                "lr_transformer": opt.groups[0]["lr"],
                "lr_autoencoder": opt.groups[1]["lr"],
                "train": sums,
                "val": val,
            }
            history.append(row)
            if writer:
                writer.writerow(
                    [epoch, repr(row["lr_transformer"]), repr(row["lr_autoencoder"])]
                    + [repr(sums[k]) for k in LossBreakdown.TERMS]
                    + [repr(val[k]) for k in LossBreakdown.TERMS]
                )
                fh.flush()
            if val["total"] < best_val:
                best_val, best_epoch = val["total"], epoch
                best_state = model.state_dict()
                if checkpoint is not None:
                    checkpoint(model, epoch, best_val)
            if progress is not None:
                progress(epoch, row)
            log.info("epoch %d train %.5f val %.5f", epoch, sums["total"], val["total"])
    finally:
        if fh:
            fh.close()
    if best_state is not None:
        model.load_state_dict(best_state)
    return TrainResult(model, history, best_epoch, best_val, time.perf_counter() - t0)


# --- forecast skill --------------------------------------------------------------------------


def one_step_crps(model, hist, target, members, seed):
    """Mean physical-space CRPS of ``members``-member one-step forecasts.

    ``hist`` ``(B, S, N_y)`` and ``target`` ``(B, N_y)`` in physical units.
    Member ``i`` of window ``w`` draws noise from stream ``(seed, i)``.
    """
    from .seeding import EMULATOR_STREAM

    rngs = [member_rng(seed, i, EMULATOR_STREAM) for i in range(members)]
    d = model.config.latent_dim
    b = len(target)
    z = model.encode_history(hist)
    scores = np.empty(b)
    with ad.no_grad():
        noise = np.stack([r.standard_normal((b, d)) for r in rngs])
        z_rep = np.concatenate([z] * members, axis=0)
        zp = model.transformer_forward(z_rep, noise.reshape(members * b, d)).data
        up = model.denormalize(model.decode(zp).data).reshape(members, b, -1)
    for w in range(b):
        scores[w] = crps_ensemble(target[w], up[:, w])
    return float(scores.mean())


def climatology_crps(pool, target, members, seed):
    """CRPS of ensembles of ``members`` random states drawn from ``pool`` ``(P, N_y)``."""
    rng = member_rng(seed, 0, SAMPLER_STREAM)
    pool = np.asarray(pool, dtype=np.float64)
    scores = [
        crps_ensemble(t, pool[rng.integers(0, len(pool), size=members)]) for t in np.asarray(target)
    ]
    return float(np.mean(scores))
