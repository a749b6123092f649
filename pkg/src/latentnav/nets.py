"""Latent world model: recurrent state-space dynamics with decoder heads.

The latent state has a deterministic path (GRU) and a stochastic diagonal
Gaussian part. A prior network predicts the stochastic state from the
deterministic path alone (open-loop dynamics); a posterior network refines it
with the encoded camera image and, unless disabled, the proprioceptive
vector. Decoder heads reconstruct the image and proprioception and predict
reward, value, two terminal-event Beta distributions, and the action
distribution of the policy. Initialization is the torch default
(Kaiming-uniform fan-in for linear and conv layers).
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .observation import NONVISUAL_DIM, NUM_CLASSES

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    """Architecture sizes and model-variant flags."""

    image_size: int = 32
    conv_channels: tuple[int, ...] = (16, 32, 64, 128)
    embed_dim: int = 128
    deter_dim: int = 128
    stoch_dim: int = 16
    hidden_dim: int = 128
    hidden_layers: int = 3
    action_dim: int = 4
    action_bounds: tuple[float, ...] = (0.06, 0.06, 0.06, 0.012)
    # Full-scale magnitude per proprioceptive channel (gait speed limits, head
    # yaw fraction, target distance, bearing, tilt). Mixing metre- and
    # radian-scale inputs unscaled lets the largest channel mask the rest.
    nonvisual_scales: tuple[float, ...] = (0.4, 0.4, 0.8, 1.0, 3.0, math.pi, 0.6, 0.6)
    min_std: float = 1e-4
    posterior_uses_nonvisual: bool = True   # feed proprioception into the filter
    predict_nonvisual: bool = True          # reconstruct proprioception in the loss
    predict_termination: bool = True        # train terminal heads / use them in the actor

    def __post_init__(self) -> None:
        if self.image_size % (2 ** len(self.conv_channels)) != 0:
            raise ValueError("image_size must be divisible by 2**len(conv_channels)")
        if len(self.action_bounds) != self.action_dim:
            raise ValueError("action_bounds length must equal action_dim")
        if len(self.nonvisual_scales) != NONVISUAL_DIM:
            raise ValueError("nonvisual_scales length must equal NONVISUAL_DIM")

    @property
    def feature_dim(self) -> int:
        return self.deter_dim + self.stoch_dim


@dataclass
class LatentState:
    """One belief state: deterministic path plus a stochastic sample."""

    deter: Tensor
    stoch: Tensor

    @property
    def feature(self) -> Tensor:
        return torch.cat([self.deter, self.stoch], dim=-1)

    def detach(self) -> "LatentState":
        return LatentState(self.deter.detach(), self.stoch.detach())


@dataclass
class DecodeOutputs:
    """All decoder head outputs for a batch of latent features."""

    image_logits: Tensor        # (..., classes, H, W)
    nonvisual_mean: Tensor      # (..., NONVISUAL_DIM)
    nonvisual_std: Tensor       # (NONVISUAL_DIM,), learned, state independent
    reward_mean: Tensor         # (...,)
    value_mean: Tensor          # (...,)
    term_alpha: Tensor          # (..., 2) Beta concentration alpha for (success, failure)
    term_beta: Tensor           # (..., 2) Beta concentration beta
    action_mean: Tensor         # (..., action_dim), pre-squash
    action_std: Tensor          # (..., action_dim)

    @property
    def term_mean(self) -> Tensor:
        return self.term_alpha / (self.term_alpha + self.term_beta)


def _mlp(in_dim: int, out_dim: int, cfg: NetConfig) -> nn.Sequential:
    layers: list[nn.Module] = []
    d = in_dim
    for _ in range(cfg.hidden_layers):
        layers += [nn.Linear(d, cfg.hidden_dim), nn.ELU()]
        d = cfg.hidden_dim
    layers.append(nn.Linear(d, out_dim))
    return nn.Sequential(*layers)


def _flatten_batch(x: Tensor, event_dims: int) -> tuple[Tensor, tuple[int, ...]]:
    batch_shape = x.shape[: x.ndim - event_dims]
    flat = x.reshape(-1, *x.shape[x.ndim - event_dims:])
    return flat, batch_shape


class ImageEncoder(nn.Module):
    """Strided conv stack from one-hot class images to an embedding vector."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        convs: list[nn.Module] = []
        in_ch = NUM_CLASSES
        for ch in cfg.conv_channels:
            convs += [nn.Conv2d(in_ch, ch, kernel_size=4, stride=2, padding=1), nn.ELU()]
            in_ch = ch
        self.convs = nn.Sequential(*convs)
        side = cfg.image_size // (2 ** len(cfg.conv_channels))
        self.out = nn.Linear(cfg.conv_channels[-1] * side * side, cfg.embed_dim)

    def forward(self, obs: Tensor) -> Tensor:
        """obs: integer class grid (..., H, W); returns (..., embed_dim)."""
        flat, batch_shape = _flatten_batch(obs, 2)
        x = F.one_hot(flat.long(), NUM_CLASSES).permute(0, 3, 1, 2)
        x = x.to(self.out.weight.dtype)
        h = self.convs(x).flatten(1)
        return self.out(h).reshape(*batch_shape, -1)


class ImageDecoder(nn.Module):
    """Transposed conv stack producing per-pixel class logits from features."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        chans = cfg.conv_channels
        self.side = cfg.image_size // (2 ** len(chans))
        self.top = cfg.conv_channels[-1]
        self.inp = nn.Linear(cfg.feature_dim, self.top * self.side * self.side)
        deconvs: list[nn.Module] = []
        rev = list(reversed(chans))
        for k in range(len(rev) - 1):
            deconvs += [nn.ConvTranspose2d(rev[k], rev[k + 1], 4, stride=2, padding=1), nn.ELU()]
        deconvs.append(nn.ConvTranspose2d(rev[-1], NUM_CLASSES, 4, stride=2, padding=1))
        self.deconvs = nn.Sequential(*deconvs)

    def forward(self, feat: Tensor) -> Tensor:
        flat, batch_shape = _flatten_batch(feat, 1)
        x = self.inp(flat).reshape(-1, self.top, self.side, self.side)
        logits = self.deconvs(x)
        return logits.reshape(*batch_shape, *logits.shape[1:])


class RSSM(nn.Module):
    """Recurrent state-space dynamics with Gaussian stochastic states."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        self.cell = nn.GRUCell(cfg.stoch_dim + cfg.action_dim, cfg.deter_dim)
        # Raw increment commands are numerically tiny (|dv| <= 0.06); rescaling
        # them to the unit box keeps them visible next to the stochastic state.
        inv = 1.0 / torch.tensor(cfg.action_bounds, dtype=torch.float32)
        self.register_buffer("inv_action_bounds", inv, persistent=False)
        inv_nv = 1.0 / torch.tensor(cfg.nonvisual_scales, dtype=torch.float32)
        self.register_buffer("inv_nonvisual_scales", inv_nv, persistent=False)
        self.prior_net = _mlp(cfg.deter_dim, 2 * cfg.stoch_dim, cfg)
        post_in = cfg.deter_dim + cfg.embed_dim
        if cfg.posterior_uses_nonvisual:
            post_in += NONVISUAL_DIM
        self.posterior_net = _mlp(post_in, 2 * cfg.stoch_dim, cfg)

    def _split(self, raw: Tensor) -> tuple[Tensor, Tensor]:
        mean, pre_std = raw.chunk(2, dim=-1)
        std = F.softplus(pre_std) + self.cfg.min_std
        return mean, std

    def initial_state(self, batch: int, ref: Tensor) -> LatentState:
        zeros = lambda d: torch.zeros(batch, d, dtype=ref.dtype, device=ref.device)
        return LatentState(zeros(self.cfg.deter_dim), zeros(self.cfg.stoch_dim))

    def prior_step(self, state: LatentState, action: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Advance the deterministic path and predict the next stochastic state.

        Takes the action in raw environment units. Returns (new_deter,
        prior_mean, prior_std).
        """
        scaled = action * self.inv_action_bounds.to(action.dtype)
        deter = self.cell(torch.cat([state.stoch, scaled], dim=-1), state.deter)
        mean, std = self._split(self.prior_net(deter))
        return deter, mean, std

    def posterior(self, deter: Tensor, embed: Tensor, nonvisual: Tensor | None) -> tuple[Tensor, Tensor]:
        """Filtered stochastic-state distribution given the new observation.

        Takes the proprioceptive vector in raw physical units.
        """
        parts = [deter, embed]
        if self.cfg.posterior_uses_nonvisual:
            if nonvisual is None:
                raise ValueError("posterior expects the nonvisual vector; model was built to use it")
            parts.append(nonvisual * self.inv_nonvisual_scales.to(nonvisual.dtype))
        return self._split(self.posterior_net(torch.cat(parts, dim=-1)))


class BoundedNormal:
    """Diagonal Gaussian squashed through tanh and scaled to the action box.

    The squash is a bijection from pre-activation space onto the open box
    (-bounds, bounds), so log densities carry the change-of-variables term.
    """

    def __init__(self, mean: Tensor, std: Tensor, bounds: Tensor):
        self.mean = mean
        self.std = std
        self.bounds = bounds

    def rsample(self, generator: torch.Generator | None = None) -> Tensor:
        eps = torch.randn(
            self.mean.shape, generator=generator, dtype=self.mean.dtype, device=self.mean.device
        )
        return self.bounds * torch.tanh(self.mean + self.std * eps)

    def sample(self, generator: torch.Generator | None = None) -> Tensor:
        with torch.no_grad():
            return self.rsample(generator)

    def mode(self) -> Tensor:
        return self.bounds * torch.tanh(self.mean)

    def log_prob(self, action: Tensor) -> Tensor:
        y = torch.clamp(action / self.bounds, -1.0 + 1e-6, 1.0 - 1e-6)
        u = torch.atanh(y)
        base = -0.5 * (((u - self.mean) / self.std) ** 2) - torch.log(self.std) - 0.5 * _LOG_TWO_PI
        corr = torch.log(self.bounds) + torch.log1p(-y ** 2)
        return (base - corr).sum(-1)


_LOG_TWO_PI = torch.log(torch.tensor(2.0 * torch.pi)).item()

# tanh(2.5) = 0.987, so the capped mean still reaches the whole usable box.
_ACTOR_MEAN_SCALE = 2.5
_ACTOR_STD_MAX = 1.5
_ACTOR_STD_MIN = 0.1


class WorldModel(nn.Module):
    """Encoder, latent dynamics, and all decoder heads in one module.

    Parameter groups for the three optimizers are exposed via
    world_parameters / value_parameters / actor_parameters.
    """

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = ImageEncoder(cfg)
        self.rssm = RSSM(cfg)
        self.image_decoder = ImageDecoder(cfg)
        self.nonvisual_head = _mlp(cfg.feature_dim, NONVISUAL_DIM, cfg)
        # Start the observation noise well below the data scale. If it starts
        # high, inflating it further is always cheaper than encoding the
        # channel, and the filter settles on predicting the mean forever.
        self.nonvisual_log_std = nn.Parameter(torch.full((NONVISUAL_DIM,), math.log(0.1)))
        self.reward_head = _mlp(cfg.feature_dim, 1, cfg)
        self.value_head = _mlp(cfg.feature_dim, 1, cfg)
        self.term_head = _mlp(cfg.feature_dim, 4, cfg)
        self.actor_head = _mlp(cfg.feature_dim, 2 * cfg.action_dim, cfg)
        self.register_buffer("action_bounds", torch.tensor(cfg.action_bounds, dtype=torch.float32))

    def encode_image(self, obs: Tensor) -> Tensor:
        return self.encoder(obs)

    def actor(self, feat: Tensor) -> BoundedNormal:
        mean, std = self._actor_params(feat)
        return BoundedNormal(mean, std, self.action_bounds.to(feat.dtype))

    def _actor_params(self, feat: Tensor) -> tuple[Tensor, Tensor]:
        # Bounding the pre-squash mean and std keeps samples off the tanh
        # tails, where pathwise gradients die irreversibly.
        mean, pre_std = self.actor_head(feat).chunk(2, dim=-1)
        mean = _ACTOR_MEAN_SCALE * torch.tanh(mean / _ACTOR_MEAN_SCALE)
        std = _ACTOR_STD_MAX * torch.sigmoid(pre_std) + _ACTOR_STD_MIN
        return mean, std

    def decode(self, feat: Tensor) -> DecodeOutputs:
        alpha_beta = F.softplus(self.term_head(feat)) + 1e-3
        action_mean, action_std = self._actor_params(feat)
        return DecodeOutputs(
            image_logits=self.image_decoder(feat),
            nonvisual_mean=self.nonvisual_head(feat),
            nonvisual_std=self.nonvisual_log_std.exp(),
            reward_mean=self.reward_head(feat).squeeze(-1),
            value_mean=self.value_head(feat).squeeze(-1),
            term_alpha=alpha_beta[..., 0:2],
            term_beta=alpha_beta[..., 2:4],
            action_mean=action_mean,
            action_std=action_std,
        )

    def world_parameters(self):
        """Everything trained by the world-model loss."""
        mods = [
            self.encoder, self.rssm, self.image_decoder, self.nonvisual_head,
            self.reward_head, self.term_head,
        ]
        for m in mods:
            yield from m.parameters()
        yield self.nonvisual_log_std

    def value_parameters(self):
        return self.value_head.parameters()

    def actor_parameters(self):
        return self.actor_head.parameters()


def save_checkpoint(path, model: WorldModel, extra: dict | None = None) -> None:
    """Write model parameters, architecture config, and metadata to one file."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "net_config": dataclasses.asdict(model.cfg),
        "model_state": model.state_dict(),
        "extra": dict(extra or {}),
    }
    torch.save(payload, path)


def load_checkpoint(path) -> tuple[WorldModel, dict]:
    """Rebuild a model from a checkpoint; returns (model, extra metadata)."""
    payload = torch.load(path, map_location="cpu", weights_only=True)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r}")
    raw = dict(payload["net_config"])
    for key in ("conv_channels", "action_bounds"):
        raw[key] = tuple(raw[key])
    cfg = NetConfig(**raw)
    model = WorldModel(cfg)
    model.load_state_dict(payload["model_state"])
    return model, payload.get("extra", {})
