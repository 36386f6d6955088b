"""The Stochastic Latent Transformer.

A translation-equivariant autoencoder compresses each zonal-mean profile
``U(y)`` to a latent vector of length ``D_M``; a transformer with noise
injected through cross-attention advances a short latent history by one
step.  All translation handling is spectral: profiles are phase-aligned on
their first Fourier mode before any learned map touches them and the phase
is restored afterwards, so the whole model commutes with arbitrary (also
fractional) shifts in ``y``.

Tensors are laid out batch-first: profiles ``(B, N_y)``, latent histories
``(B, S, D_M)``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, RolloutDiverged
from .seeding import EMULATOR_STREAM, INIT_STREAM, member_rng

ALIGN = 1.0
RESTORE = -1.0


@dataclass(frozen=True)
class ModelConfig:
    n_y: int = 256
    latent_dim: int = 64
    seq_len: int = 10
    channels: int = 4
    hidden_length: int | None = None
    n_heads: int = 4
    n_blocks: int = 3
    ffn_dim: int | None = None
    layer_norm: bool = False
    detach_phase: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("n_y", "latent_dim", "hidden"):
            n = self.hidden if name == "hidden" else getattr(self, name)
            if n <= 0 or n % 2:
                raise ConfigError(f"{name} must be a positive even integer, got {n}")
        if self.latent_dim > self.n_y:
            raise ConfigError("latent_dim must not exceed n_y")
        if self.latent_dim % self.n_heads:
            raise ConfigError(
                f"latent_dim {self.latent_dim} is not divisible by n_heads {self.n_heads}"
            )
        if self.seq_len < 1 or self.n_blocks < 1 or self.channels < 1:
            raise ConfigError("seq_len, n_blocks and channels must be positive")
        if self.layer_norm:
            raise ConfigError("layer_norm is not supported by this implementation")

    @property
    def hidden(self):
        return self.n_y if self.hidden_length is None else self.hidden_length

    @property
    def ffn(self):
        return 2 * self.latent_dim if self.ffn_dim is None else self.ffn_dim

    @property
    def head_dim(self):
        return self.latent_dim // self.n_heads

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self):
        return dataclasses.asdict(self)


# --- spectral helpers on tensors ---------------------------------------------


def latent_phase(z, detach=False):
    """Displacement phase of the first Fourier mode along the last axis."""
    return ad.first_mode_phase(z, detach=detach)


def rotate(x, phi, sign):
    """Shift real profiles along the last axis by ``-sign * phi`` (spectrally).

    The Nyquist mode is not carried: shifting it by a fractional amount
    has no real-valued representation.
    """
    n = x.shape[-1]
    spec = ad.rfft1(x, n // 2)
    return ad.irfft1(ad.phase_rotate(spec, phi, sign), n)


def shift(x, delta):
    """``x(y - delta)`` along the last axis of an array, Nyquist dropped."""
    with ad.no_grad():
        return rotate(ad.Tensor(np.asarray(x, dtype=float)), np.asarray(delta, float), -1.0).data


# --- parameters ------------------------------------------------------------------


class Module:
    """Named parameter container."""

    def __init__(self):
        self.params = {}

    def param(self, name, value):
        t = ad.Tensor(np.asarray(value, dtype=np.float64), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def named_parameters(self, prefix=""):
        out = {}
        for k, v in self.params.items():
            out[prefix + k] = v
        for name, child in self.children():
            out.update(child.named_parameters(prefix + name + "."))
        return out

    def children(self):
        return []


class TEPCLayer(Module):
    """Per-mode complex channel mix in a phase-aligned frame.

    ``weights`` has shape ``(min(modes_in, modes_out), in_ch, out_ch, 2)``.
    Output modes beyond the weight count are zero (zero-padding); input
    modes beyond it are dropped (truncation).
    """

    def __init__(self, in_channels, out_channels, modes_in, modes_out, rng):
        super().__init__()
        self.in_channels, self.out_channels = in_channels, out_channels
        self.modes_in, self.modes_out = modes_in, modes_out
        k = min(modes_in, modes_out)
        scale = 1.0 / math.sqrt(in_channels * modes_in)
        self.weights = self.param("weights", scale * rng.standard_normal((k, in_channels, out_channels, 2)))

    @property
    def out_length(self):
        return 2 * self.modes_out

    def mix(self, spec):
        """Aligned-frame map on spectra ``(B, C_in, M, 2) -> (B, C_out, modes_out, 2)``."""
        return ad.complex_mode_mix(spec, self.weights, self.modes_out)

    def forward(self, x, phi=None, detach_phase=False):
        """Standalone layer on ``(B, C_in, L)``: align on channel 0, mix, restore."""
        x = ad.as_tensor(x)
        if x.shape[-1] % 2:
            raise ConfigError(f"TEPC input length must be even, got {x.shape[-1]}")
        if x.shape[1] != self.in_channels:
            raise ConfigError(f"TEPC expects {self.in_channels} channels, got {x.shape[1]}")
        if phi is None:
            phi = latent_phase(x[:, 0, :], detach=detach_phase)
        spec = ad.rfft1(x, min(x.shape[-1] // 2, self.modes_in))
        spec = ad.phase_rotate(spec, ad.reshape(phi, phi.shape + (1,)), ALIGN)
        out = self.mix(spec)
        out = ad.phase_rotate(out, ad.reshape(phi, phi.shape + (1,)), RESTORE)
        return ad.irfft1(out, self.out_length)


class _Stack(Module):
    """Two TEPC layers with a GELU between, phase-aligned once at the input.

    The GELU acts in the aligned frame; the profile's phase is restored
    after the second layer.  Aligning once keeps the stack exactly
    equivariant to fractional shifts, which a nonlinearity sandwiched
    between two restore/align pairs would not be.
    """

    def __init__(self, length_in, hidden, length_out, channels, rng):
        super().__init__()
        self.length_in, self.hidden, self.length_out = length_in, hidden, length_out
        self.layer1 = TEPCLayer(1, channels, length_in // 2, hidden // 2, rng)
        self.layer2 = TEPCLayer(channels, 1, hidden // 2, length_out // 2, rng)

    def children(self):
        return [("layer1", self.layer1), ("layer2", self.layer2)]

    def forward(self, x, detach_phase=False):
        x = ad.as_tensor(x)
        if x.shape[-1] != self.length_in:
            raise ConfigError(f"expected profiles of length {self.length_in}, got {x.shape[-1]}")
        lead = x.shape[:-1]
        x = ad.reshape(x, (-1, 1, self.length_in))
        phi = latent_phase(x[:, 0, :], detach=detach_phase)
        phi_c = ad.reshape(phi, phi.shape + (1,))
        spec = ad.phase_rotate(ad.rfft1(x, self.length_in // 2), phi_c, ALIGN)
        h = ad.irfft1(self.layer1.mix(spec), self.hidden)
        h = ad.gelu(h)
        out = self.layer2.mix(ad.rfft1(h, self.hidden // 2))
        out = ad.irfft1(ad.phase_rotate(out, phi_c, RESTORE), self.length_out)
        return ad.reshape(out, lead + (self.length_out,))


class Encoder(_Stack):
    pass


class Decoder(_Stack):
    pass


class Linear(Module):
    def __init__(self, n_in, n_out, rng, bias=True):
        super().__init__()
        self.w = self.param("w", rng.standard_normal((n_in, n_out)) / math.sqrt(n_in))
        self.b = self.param("b", np.zeros(n_out)) if bias else None

    def __call__(self, x):
        y = ad.matmul(x, self.w)
        return y if self.b is None else ad.add(y, self.b)


class TransformerBlock(Module):
    """Multi-head attention plus a GELU feed-forward, both with skip connections."""

    def __init__(self, dim, n_heads, ffn_dim, rng, stochastic=False):
        super().__init__()
        self.dim, self.n_heads, self.stochastic = dim, n_heads, stochastic
        self.wq = Linear(dim, dim, rng, bias=False)
        self.wk = Linear(dim, dim, rng, bias=False)
        self.wv = Linear(dim, dim, rng, bias=False)
        self.wo = Linear(dim, dim, rng, bias=False)
        self.ff1 = Linear(dim, ffn_dim, rng)
        self.ff2 = Linear(ffn_dim, dim, rng)
        self.last_attention = None

    def children(self):
        return [(n, getattr(self, n)) for n in ("wq", "wk", "wv", "wo", "ff1", "ff2")]

    def _heads(self, x):
        b, s, _ = x.shape
        x = ad.reshape(x, (b, s, self.n_heads, self.dim // self.n_heads))
        return ad.transpose(x, (0, 2, 1, 3))

    def mha(self, queries_in, keys_values_in):
        """Attention output (before the residual) and the attention weights."""
        q = self._heads(self.wq(queries_in))
        k = self._heads(self.wk(keys_values_in))
        v = self._heads(self.wv(keys_values_in))
        dk = self.dim // self.n_heads
        scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dk))
        attn = ad.softmax_rows(scores)
        o = ad.transpose(ad.matmul(attn, v), (0, 2, 1, 3))
        b, s = o.shape[:2]
        return self.wo(ad.reshape(o, (b, s, self.dim))), attn

    def __call__(self, x, eps=None):
        kv = x
        if self.stochastic:
            if eps is None:
                raise ConfigError("the stochastic block needs a noise vector")
            kv = ad.concat([x, ad.reshape(eps, (eps.shape[0], 1, self.dim))], axis=1)
        o, attn = self.mha(x, kv)
        self.last_attention = attn.data
        x = ad.add(x, o)
        return ad.add(x, self.ff2(ad.gelu(self.ff1(x))))


class SLTModel(Module):
    """Encoder, stochastic transformer and decoder with stored data scaling."""

    def __init__(self, config, norm_mean=0.0, norm_std=1.0):
        super().__init__()
        self.config = config
        self.norm_mean = float(norm_mean)
        self.norm_std = float(norm_std)
        rng = member_rng(config.seed, 0, INIT_STREAM)
        d = config.latent_dim
        self.encoder = Encoder(config.n_y, config.hidden, d, config.channels, rng)
        self.decoder = Decoder(d, config.hidden, config.n_y, config.channels, rng)
        self.time_embedding = self.param("time_embedding", 0.02 * rng.standard_normal((config.seq_len, d)))
        self.blocks = [
            TransformerBlock(d, config.n_heads, config.ffn, rng, stochastic=(i == 0))
            for i in range(config.n_blocks)
        ]
        self.head1 = Linear(d, config.ffn, rng)
        self.head2 = Linear(config.ffn, d, rng)

    def children(self):
        out = [("encoder", self.encoder), ("decoder", self.decoder)]
        out += [(f"blocks.{i}", b) for i, b in enumerate(self.blocks)]
        return out + [("head1", self.head1), ("head2", self.head2)]

    def parameter_groups(self):
        """``(autoencoder, transformer)`` parameter lists."""
        ae, tr = [], []
        for name, p in self.named_parameters().items():
            (ae if name.startswith(("encoder.", "decoder.")) else tr).append(p)
        return ae, tr

    # physical <-> latent ---------------------------------------------------------

    def normalize(self, U):
        return (np.asarray(U, dtype=np.float64) - self.norm_mean) / self.norm_std

    def denormalize(self, u):
        return np.asarray(u) * self.norm_std + self.norm_mean

    def encode(self, u):
        """Normalised profiles ``(..., N_y)`` to latents ``(..., D_M)``."""
        return self.encoder.forward(u, self.config.detach_phase)

    def decode(self, z):
        return self.decoder.forward(z, self.config.detach_phase)

    # latent dynamics -----------------------------------------------------------------

    def transformer_forward(self, z_hist, eps):
        """Next latent from a history ``(B, S, D_M)`` and noise ``(B, D_M)``."""
        z_hist, eps = ad.as_tensor(z_hist), ad.as_tensor(eps)
        b, s, d = z_hist.shape
        if s != self.config.seq_len or d != self.config.latent_dim:
            raise ConfigError(
                f"latent history must be (B, {self.config.seq_len}, {self.config.latent_dim}), "
                f"got {z_hist.shape}"
            )
        phi = latent_phase(z_hist[:, s - 1, :], detach=self.config.detach_phase)
        x = rotate(z_hist, ad.reshape(phi, (b, 1)), ALIGN)
        x = ad.add(x, self.time_embedding)
        for block in self.blocks:
            x = block(x, eps)
        h = x[:, s - 1, :]
        out = self.head2(ad.gelu(self.head1(h)))
        return rotate(out, phi, RESTORE)

    def attention_maps(self):
        return [blk.last_attention for blk in self.blocks]

    # inference ---------------------------------------------------------------------------

    def predict_latents(self, z_hist, horizon, rngs, start_step=0):
        """Autoregressive latent rollout; one RNG per batch row."""
        z_hist = np.asarray(z_hist, dtype=np.float64)
        b = z_hist.shape[0]
        d = self.config.latent_dim
        out = np.empty((b, horizon, d))
        window = z_hist.copy()
        with ad.no_grad():
            for t in range(horizon):
                eps = np.stack([r.standard_normal(d) for r in rngs])
                z = self.transformer_forward(window, eps).data
                bad = ~np.isfinite(z).all(axis=-1)
                if bad.any():
                    member = int(np.flatnonzero(bad)[0])
                    raise RolloutDiverged(
                        f"non-finite latent at step {start_step + t + 1} (row {member})",
                        step=start_step + t + 1,
                        member=member,
                    )
                out[:, t] = z
                window = np.concatenate([window[:, 1:], z[:, None]], axis=1)
        return out

    def encode_history(self, U_history):
        with ad.no_grad():
            return self.encode(self.normalize(U_history)).data

    def decode_latents(self, z):
        with ad.no_grad():
            return self.denormalize(self.decode(z).data)

    def rollout(self, U_history, horizon, rng):
        """Trajectory ``(horizon, N_y)`` continuing ``U_history`` ``(S, N_y)``."""
        if horizon < 1:
            raise ConfigError("horizon must be >= 1")
        U_history = np.asarray(U_history, dtype=np.float64)
        self._check_history(U_history)
        z = self.encode_history(U_history)[None]
        lat = self.predict_latents(z, horizon, [rng])
        return self.decode_latents(lat[0])

    def ensemble_rollout(self, U_history, horizon, members, seed, first_member=0):
        """``members`` rollouts from one history, member ``i`` seeded by ``(seed, i)``."""
        if members < 1:
            raise ConfigError("members must be >= 1")
        if horizon < 1:
            raise ConfigError("horizon must be >= 1")
        U_history = np.asarray(U_history, dtype=np.float64)
        self._check_history(U_history)
        ids = range(first_member, first_member + members)
        rngs = [member_rng(seed, i, EMULATOR_STREAM) for i in ids]
        z = np.repeat(self.encode_history(U_history)[None], members, axis=0)
        try:
            lat = self.predict_latents(z, horizon, rngs)
        except RolloutDiverged as exc:
            exc.member = first_member + exc.member
            raise
        return self.decode_latents(lat)

    def _check_history(self, U_history):
        want = (self.config.seq_len, self.config.n_y)
        if U_history.shape != want:
            raise ConfigError(f"history must have shape {want}, got {U_history.shape}")

    # persistence ----------------------------------------------------------------------

    def state_dict(self):
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state):
        params = self.named_parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise ConfigError(
                f"checkpoint mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}"
            )
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ConfigError(f"parameter {k}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()


def rollout(model, U_history, horizon, rng):
    return model.rollout(U_history, horizon, rng)


def ensemble_rollout(model, U_history, horizon, members, seed):
    return model.ensemble_rollout(U_history, horizon, members, seed)
