"""Run configuration and the experiment steps behind the command line.

A run configuration is a JSON document with the sections ``solver``,
``model``, ``train``, ``diagnostics``, ``paths`` and a top-level ``seed``.
Unknown sections or keys are rejected before any work starts.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from importlib import resources

import numpy as np

from . import diagnostics as dg
from .data import ZonalData, normalization_stats, split
from .errors import ConfigError
from .model import ModelConfig, SLTModel
from .solver import SolverConfig, run_and_record
from .training import TrainConfig, climatology_crps, one_step_crps, train

SECTIONS = ("solver", "model", "train", "diagnostics", "paths", "seed")
MODEL_KEYS = {"n_heads", "hidden_length", "ffn_dim", "layer_norm", "detach_phase"}
DIAGNOSTIC_DEFAULTS = {
    "bins": 128,
    "persistence": 3,
    "members": 64,
    "horizon": 500,
    "lead": 50,
    "eval_windows": 1000,
}
PATH_KEYS = {"out_dir"}


def default_config():
    return {
        "seed": 0,
        "solver": SolverConfig().to_dict(),
        "model": {"n_heads": 4},
        "train": TrainConfig().to_dict(),
        "diagnostics": dict(DIAGNOSTIC_DEFAULTS),
        "paths": {"out_dir": "."},
    }


def preset_path(name):
    return resources.files("slt") / "presets" / name


def load_config(path=None):
    """Defaults overlaid with the JSON file at ``path`` (or a bundled preset name)."""
    cfg = default_config()
    if path is None:
        return validate(cfg)
    if not os.path.exists(path):
        candidate = preset_path(os.path.basename(path))
        if not candidate.is_file():
            raise ConfigError(f"config file not found: {path}")
        path = candidate
    try:
        with open(path) as fh:
            user = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return validate(merge(cfg, user))


def merge(base, user):
    if not isinstance(user, dict):
        raise ConfigError("run configuration must be a JSON object")
    out = copy.deepcopy(base)
    for key, val in user.items():
        if key not in SECTIONS:
            raise ConfigError(f"unknown config section {key!r}")
        if key == "seed":
            out["seed"] = val
            continue
        if not isinstance(val, dict):
            raise ConfigError(f"config section {key!r} must be an object")
        if key == "model":
            out["model"] = dict(val)
        else:
            out[key].update(val)
    return out


def apply_override(cfg, assignment):
    """Apply one ``section.key=value`` override (value parsed as JSON when possible)."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.strip().split(".")
    if parts == ["seed"]:
        cfg["seed"] = value
        return cfg
    if len(parts) != 2 or parts[0] not in SECTIONS:
        raise ConfigError(f"override key {key!r} must be section.key")
    cfg[parts[0]][parts[1]] = value
    return cfg


def validate(cfg):
    """Type-check every section; raises :class:`ConfigError` on anything unknown."""
    if not isinstance(cfg.get("seed"), int) or isinstance(cfg.get("seed"), bool):
        raise ConfigError("seed must be an integer")
    solver_cfg(cfg)
    train_cfg(cfg)
    unknown = set(cfg["model"]) - MODEL_KEYS
    if unknown:
        raise ConfigError(f"unknown model keys: {sorted(unknown)}")
    unknown = set(cfg["diagnostics"]) - set(DIAGNOSTIC_DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown diagnostics keys: {sorted(unknown)}")
    for k, v in cfg["diagnostics"].items():
        if not isinstance(v, int) or v < 1:
            raise ConfigError(f"diagnostics.{k} must be a positive integer")
    unknown = set(cfg["paths"]) - PATH_KEYS
    if unknown:
        raise ConfigError(f"unknown paths keys: {sorted(unknown)}")
    model_cfg(cfg, n_y=cfg["solver"]["N"])
    return cfg


def _typed(cls, section, data):
    try:
        return cls.from_dict(data)
    except TypeError as exc:
        raise ConfigError(f"{section}: {exc}") from None


def solver_cfg(cfg, seed=None):
    data = dict(cfg["solver"])
    data["seed"] = cfg["seed"] if seed is None else seed
    return _typed(SolverConfig, "solver", data)


def train_cfg(cfg, seed=None):
    data = dict(cfg["train"])
    data["seed"] = cfg["seed"] if seed is None else seed
    return _typed(TrainConfig, "train", data)


def model_cfg(cfg, n_y, seed=None):
    t = cfg["train"]
    data = dict(cfg["model"])
    data.update(
        n_y=n_y,
        latent_dim=t.get("latent_dim", 64),
        seq_len=t.get("seq_len", 10),
        channels=t.get("channels", 4),
        n_blocks=t.get("blocks", 3),
        seed=cfg["seed"] if seed is None else seed,
    )
    return _typed(ModelConfig, "model", data)


def config_hash(obj):
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# --- steps ------------------------------------------------------------------------------


def simulate(cfg, seed, members=1, progress=None):
    """Spin up from rest and record ``U``; returns :class:`ZonalData`."""
    records = run_and_record(solver_cfg(cfg, seed), members=members, progress=progress)
    return ZonalData.from_records(records, seed=seed)


def make_dataset(record, cfg):
    """Attach the train/validation split and training-split normalisation."""
    tc = train_cfg(cfg)
    n = len(record)
    val_len = max(tc.seq_len + 1, int(round(tc.val_fraction * n)))
    if val_len >= n - tc.seq_len:
        raise ConfigError(f"record of {n} rows is too short for a validation tail of {val_len}")
    tr, _ = split(record, val_len)
    mean, std = normalization_stats(tr)
    meta = dict(record.meta)
    meta.update(norm={"mean": mean, "std": std}, split={"train_len": n - val_len, "val_len": val_len})
    return ZonalData(record.U, record.times, meta)


def dataset_views(ds):
    """``(train, validation)`` views in physical units."""
    if "split" not in ds.meta:
        raise ConfigError("record has no train/validation split; run the dataset step first")
    return split(ds, ds.meta["split"]["val_len"])


def _normalized(view, mean, std):
    return ZonalData((view.U - mean) / std, view.times, view.meta)


def train_model(ds, cfg, seed, log_path=None, checkpoint=None, progress=None):
    tr, va = dataset_views(ds)
    mean, std = ds.meta["norm"]["mean"], ds.meta["norm"]["std"]
    model = SLTModel(model_cfg(cfg, ds.n_y, seed), mean, std)
    result = train(
        model,
        _normalized(tr, mean, std),
        _normalized(va, mean, std),
        train_cfg(cfg, seed),
        log_path=log_path,
        checkpoint=checkpoint,
        progress=progress,
    )
    return result


def history_at(data, t0, seq_len, trajectory=0):
    """The ``seq_len`` rows ending at time ``t0`` and the index of that row."""
    idx = int(np.argmin(np.abs(data.times - t0)))
    if abs(data.times[idx] - t0) > 1e-6 * max(1.0, abs(t0)):
        raise ConfigError(f"t0={t0} is not a recorded time")
    if idx + 1 < seq_len:
        raise ConfigError(f"t0={t0} leaves fewer than {seq_len} history rows")
    return data.U[trajectory, idx + 1 - seq_len : idx + 1], idx


def emulate(model, data, t0, members, horizon, seed):
    hist, idx = history_at(data, t0, model.config.seq_len)
    return model.ensemble_rollout(hist, horizon, members, seed), idx


def validation_skill(model, ds, n_windows, members, seed):
    """One-step CRPS of the model and of the climatological ensemble on validation windows."""
    from .data import WindowSampler
    from .seeding import member_rng

    tr, va = dataset_views(ds)
    sampler = WindowSampler(va, model.config.seq_len, member_rng(seed, 7, 3))
    n = min(n_windows, sampler.n_windows)
    hist, target = sampler.sample(n)
    model_score = one_step_crps(model, hist, target, members, seed)
    pool = tr.U.reshape(-1, tr.n_y)
    clim = climatology_crps(pool, target, members, seed)
    return model_score, clim


def evaluate(forecast, truth, reference, record_interval=1.0, bins=128):
    """Diagnostic bundle of a forecast ``(m, T, N)`` against truth ``(T, N)``.

    PDFs are binned on the range of ``reference`` (trajectories).
    """
    out = {}
    mae, var = dg.crps_decomposition_series(forecast, truth)
    out["crps"] = {"lead": np.arange(1, len(mae) + 1) * record_interval, "mae": mae,
                   "variation": var, "crps": mae - var}
    p = dg.build_pdfs(truth, record_interval, reference=reference, bins=bins)
    q = dg.build_pdfs(forecast, record_interval, reference=reference, bins=bins)
    out["pdfs"] = {"truth": p, "forecast": q}
    out["hellinger"] = {k: dg.hellinger(p[k], q[k]) for k in ("U", "dyU", "dtU", "joint")}
    out["psd"] = {"truth": dg.psd_time_avg(truth), "forecast": dg.psd_time_avg(forecast)}
    out["transitions"] = {
        "truth": dg.transition_pdf(dg.count_jets(truth).counts),
        "forecast": dg.transition_pdf(dg.count_jets(forecast).counts),
    }
    return out


def reference_event(data, kind, lead, seq_len, persistence=3, trajectory=0):
    """First debounced ``kind`` event at least ``lead + seq_len`` records in."""
    counts = dg.count_jets(data.U[trajectory]).counts
    direction = dg.EVENT_DIRECTION[kind]
    for idx, old, new in dg.detect_events(counts, persistence):
        if (new - old) * direction > 0 and idx - lead >= seq_len - 1:
            return idx
    raise ConfigError(f"no {kind} event with {lead} records of lead time in the record")
