"""World-model training: sequence losses, imagination, and the main loop.

One training round fits the world model on replayed sequences, then improves
the value and actor heads on trajectories imagined by the learned dynamics.
Rounds alternate with environment collection in fixed step quotas.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor

from .buffer import Episode, ReplayBuffer, Transition
from .episodes import EnvSession, JsonlWriter, run_episode
from .nets import LatentState, NetConfig, WorldModel, save_checkpoint
from .observation import CameraConfig
from .rewards import RewardConfig, TerminationConfig
from .scenario import ScenarioConfig, generate_valid_scene
from .sim import SimConfig

LOG_TWO_PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class TrainerConfig:
    """Optimization schedule and loop constants."""

    total_steps: int = 100_000          # environment steps to collect in total
    prefill_steps: int = 4000           # random-policy steps before learning starts
    train_every: int = 4000             # collected steps between training rounds
    updates_per_round: int = 100
    batch_size: int = 50
    sequence_length: int = 50
    buffer_capacity: int = 200_000
    num_envs: int = 8                   # synchronous round-robin environment sessions
    exploration_std: float = 0.3        # collection noise, fraction of each action bound
    gamma: float = 0.99
    horizon: int = 15                   # imagination steps beyond the start state
    kl_beta: float = 1.0
    kl_free_nats: float = 1.0           # KL below this is not penalized; the
                                        # prior trains only via KL, so this must
                                        # sit below the working KL level
    model_lr: float = 6e-4
    value_lr: float = 8e-5
    actor_lr: float = 8e-5
    grad_clip: float = 100.0
    bootstrap_value: bool = False       # append a discounted value tail to returns
    term_mask_threshold: float = 0.99   # imagined steps after this termination mean
                                        # are dropped from the value regression
    torch_threads: int = 1
    checkpoint_every_rounds: int = 5
    eval_every_rounds: int = 0          # 0 disables in-loop evaluation
    eval_scene_file: str | None = None
    early_stop_success: float | None = None  # stop once eval success reaches this


def bellman_return(rewards: Tensor, gamma: float, tail: Tensor | None = None) -> Tensor:
    """Discounted suffix sums along the leading (time) axis.

    v[t] = sum_{k>=t} gamma^(k-t) r[k], computed in one backward sweep. When
    tail is given it is treated as a value estimate one step past the end and
    adds gamma^(T-t) * tail to every entry.
    """
    if rewards.shape[0] == 0:
        raise ValueError("rewards must have at least one step")
    acc = torch.zeros_like(rewards[0]) if tail is None else tail
    out: list[Tensor] = [rewards[0]] * rewards.shape[0]
    for t in range(rewards.shape[0] - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return torch.stack(out)


def gaussian_nll(target: Tensor, mean: Tensor, std: Tensor | float = 1.0) -> Tensor:
    """Negative log density of a diagonal Gaussian, summed over the last axis."""
    if isinstance(std, float):
        std = torch.tensor(std, dtype=target.dtype, device=target.device)
    var = std ** 2
    nll = 0.5 * ((target - mean) ** 2 / var + LOG_TWO_PI) + torch.log(std)
    return nll.sum(-1)


def diag_normal_kl(mean_p: Tensor, std_p: Tensor, mean_q: Tensor, std_q: Tensor) -> Tensor:
    """KL(p || q) between diagonal Gaussians, summed over the last axis."""
    var_ratio = (std_p / std_q) ** 2
    kl = 0.5 * (var_ratio + ((mean_p - mean_q) / std_q) ** 2 - 1.0) - torch.log(std_p / std_q)
    return kl.sum(-1)


def beta_nll(target: Tensor, alpha: Tensor, beta: Tensor) -> Tensor:
    """Negative log density of a Beta distribution, elementwise."""
    return -torch.distributions.Beta(alpha, beta).log_prob(target)


@dataclass
class SequenceOutputs:
    """Everything the posterior unroll produces for one batch."""

    loss: Tensor
    deters: Tensor          # (B, L, deter_dim)
    stochs: Tensor          # (B, L, stoch_dim)
    kl_raw: Tensor          # (B, L) before free-nats clamping
    metrics: dict[str, float]


def world_model_loss(
    model,
    batch: dict[str, Tensor],
    term_cfg: TerminationConfig,
    kl_beta: float = 1.0,
    kl_free_nats: float = 0.0,
    generator: torch.Generator | None = None,
) -> SequenceOutputs:
    """Closed-loop sequence loss: reconstruction, prediction, and KL terms.

    The posterior is unrolled over the whole sequence; each step pays the
    image class NLL, the proprioception NLL, the reward NLL, the Beta NLL of
    both terminal indicators, and the (free-nats-clamped) KL from posterior to
    prior, all masked by batch["mask"] and averaged over the batch.
    """
    obs = batch["image"]
    nonvis = batch["nonvisual"]
    actions = batch["action"]
    rewards = batch["reward"]
    indicators = batch["indicators"]
    mask = batch["mask"]
    B, L = mask.shape
    cfg = model.cfg

    embeds = model.encode_image(obs)
    state = model.rssm.initial_state(B, embeds)

    step_losses = []
    deters, stochs, kls = [], [], []
    sums = {"image_nll": 0.0, "nonvisual_nll": 0.0, "reward_nll": 0.0, "term_nll": 0.0}
    for t in range(L):
        deter, prior_mean, prior_std = model.rssm.prior_step(state, actions[:, t])
        post_in = nonvis[:, t] if cfg.posterior_uses_nonvisual else None
        post_mean, post_std = model.rssm.posterior(deter, embeds[:, t], post_in)
        eps = torch.randn(
            post_mean.shape, generator=generator, dtype=post_mean.dtype, device=post_mean.device
        )
        stoch = post_mean + post_std * eps
        state = LatentState(deter, stoch)
        dec = model.decode(state.feature)

        image_nll = F.cross_entropy(
            dec.image_logits, obs[:, t].long(), reduction="none"
        ).sum((-2, -1))
        reward_nll = gaussian_nll(rewards[:, t : t + 1], dec.reward_mean.unsqueeze(-1))
        term = torch.zeros_like(image_nll)
        if cfg.predict_termination:
            targets = indicators[:, t].clamp(1e-5, 1.0 - 1e-5)
            term = beta_nll(targets, dec.term_alpha, dec.term_beta).sum(-1)
        nonvis_nll = torch.zeros_like(image_nll)
        if cfg.predict_nonvisual:
            nonvis_nll = gaussian_nll(nonvis[:, t], dec.nonvisual_mean, dec.nonvisual_std)

        kl = diag_normal_kl(post_mean, post_std, prior_mean, prior_std)
        kl_clamped = torch.clamp(kl - kl_free_nats, min=0.0) if kl_free_nats > 0 else kl

        step_loss = image_nll + nonvis_nll + reward_nll + term + kl_beta * kl_clamped
        step_losses.append(step_loss * mask[:, t])
        deters.append(deter)
        stochs.append(stoch)
        kls.append(kl)
        m = mask[:, t]
        sums["image_nll"] += float((image_nll.detach() * m).sum())
        sums["nonvisual_nll"] += float((nonvis_nll.detach() * m).sum())
        sums["reward_nll"] += float((reward_nll.detach() * m).sum())
        sums["term_nll"] += float((term.detach() * m).sum())

    loss = torch.stack(step_losses, dim=1).sum(dim=1).mean()
    kl_raw = torch.stack(kls, dim=1)
    n_real = float(mask.sum()) or 1.0
    masked_kl = kl_raw.detach()[mask > 0]
    metrics = {
        "world_loss": float(loss.detach()),
        "kl_mean": float(masked_kl.mean()) if masked_kl.numel() else 0.0,
        "kl_min": float(masked_kl.min()) if masked_kl.numel() else 0.0,
        **{k: v / n_real for k, v in sums.items()},
    }
    return SequenceOutputs(
        loss=loss,
        deters=torch.stack(deters, dim=1),
        stochs=torch.stack(stochs, dim=1),
        kl_raw=kl_raw,
        metrics=metrics,
    )


@dataclass
class ImaginedRollout:
    """Latent trajectories dreamed from posterior start states."""

    feats: Tensor           # (H+1, N, feature_dim), gradients intact
    actions: Tensor         # (H, N, action_dim)
    returns: Tensor         # (H+1, N) discounted reward sums per start
    term_means: Tensor      # (H+1, N, 2) predicted terminal indicator means
    alive: Tensor           # (H+1, N) 1 until the step after predicted termination


def imagine(
    model,
    start: LatentState,
    horizon: int,
    generator: torch.Generator | None = None,
    actor=None,
) -> tuple[Tensor, Tensor]:
    """Roll the latent dynamics forward under the policy.

    Returns features of shape (horizon+1, N, feature_dim) including the start
    state, and the actions taken, shape (horizon, N, action_dim). actor may
    be overridden with any callable mapping features to an object with an
    rsample(generator) method.
    """
    if actor is None:
        actor = model.actor
    state = start
    feats = [state.feature]
    actions = []
    for _ in range(horizon):
        action = actor(state.feature).rsample(generator)
        deter, mean, std = model.rssm.prior_step(state, action)
        eps = torch.randn(mean.shape, generator=generator, dtype=mean.dtype, device=mean.device)
        state = LatentState(deter, mean + std * eps)
        feats.append(state.feature)
        actions.append(action)
    empty = torch.zeros((0, start.deter.shape[0], model.cfg.action_dim),
                        dtype=start.deter.dtype, device=start.deter.device)
    return torch.stack(feats), (torch.stack(actions) if actions else empty)


def imagine_rollout(
    model,
    start: LatentState,
    horizon: int,
    gamma: float,
    generator: torch.Generator | None = None,
    bootstrap_value: bool = False,
    term_mask_threshold: float = 0.99,
) -> ImaginedRollout:
    """Imagine trajectories and score them with the reward and terminal heads."""
    feats, actions = imagine(model, start, horizon, generator)
    dec = model.decode(feats)
    tail = None
    if bootstrap_value:
        tail = dec.value_mean[-1]
    returns = bellman_return(dec.reward_mean, gamma, tail=tail)
    if model.cfg.predict_termination:
        term_means = dec.term_mean
        peak = term_means.max(dim=-1).values
        cont = (peak <= term_mask_threshold).to(feats.dtype)
        alive = torch.ones_like(peak)
        alive[1:] = torch.cumprod(cont[:-1], dim=0)
    else:
        term_means = torch.zeros(*feats.shape[:-1], 2, dtype=feats.dtype, device=feats.device)
        alive = torch.ones(*feats.shape[:-1], dtype=feats.dtype, device=feats.device)
    return ImaginedRollout(
        feats=feats, actions=actions, returns=returns, term_means=term_means, alive=alive
    )


def value_loss(model, rollout: ImaginedRollout) -> Tensor:
    """Masked MSE between the value head and detached imagined returns."""
    pred = model.value_head(rollout.feats.detach()).squeeze(-1)
    target = rollout.returns.detach()
    alive = rollout.alive.detach()
    denom = alive.sum().clamp(min=1.0)
    return ((pred - target) ** 2 * alive).sum() / denom


def actor_loss(rollout: ImaginedRollout, lambdas: tuple[float, float]) -> Tensor:
    """Negated imagined objective: discounted rewards plus weighted terminal
    indicator means, averaged over trajectories."""
    lam = rollout.returns.new_tensor(lambdas)
    term_value = (rollout.term_means * lam).sum(-1)
    objective = (rollout.returns + term_value).sum(0)
    return -objective.mean()


class RandomPolicy:
    """Uniform sampling over the action box."""

    def __init__(self, bounds: np.ndarray, rng: np.random.Generator):
        self.bounds = np.asarray(bounds, dtype=float)
        self.rng = rng

    def reset(self) -> None:
        pass

    def act(self, image: np.ndarray, nonvisual: np.ndarray) -> np.ndarray:
        return self.rng.uniform(-self.bounds, self.bounds)

    def act_batch(self, images: np.ndarray, nonvisuals: np.ndarray) -> np.ndarray:
        n = len(images)
        return self.rng.uniform(-self.bounds, self.bounds, size=(n, len(self.bounds)))


class WorldModelPolicy:
    """Acts from the filtered latent state of a world model.

    stochastic=True samples the posterior and the action head and is used for
    collection; stochastic=False uses posterior and action means, giving the
    deterministic evaluation policy. Exploration noise is added by the
    collector, not here.
    """

    def __init__(self, model, num_envs: int = 1, stochastic: bool = False,
                 torch_generator: torch.Generator | None = None):
        self.model = model
        self.num_envs = num_envs
        self.stochastic = stochastic
        self.generator = torch_generator
        self.reset()

    def reset(self, env_index: int | None = None) -> None:
        p = next(self.model.parameters())
        if env_index is None:
            self.state = self.model.rssm.initial_state(self.num_envs, p)
            self.prev_action = torch.zeros(
                self.num_envs, self.model.cfg.action_dim, dtype=p.dtype, device=p.device
            )
        else:
            self.state.deter[env_index] = 0.0
            self.state.stoch[env_index] = 0.0
            self.prev_action[env_index] = 0.0

    @torch.no_grad()
    def act_batch(self, images: np.ndarray, nonvisuals: np.ndarray) -> np.ndarray:
        p = next(self.model.parameters())
        obs = torch.as_tensor(np.asarray(images)).to(p.device)
        nonvis = torch.as_tensor(np.asarray(nonvisuals), dtype=p.dtype, device=p.device)
        embed = self.model.encode_image(obs)
        scaled_prev = self.prev_action * self.model.rssm.inv_action_bounds.to(p.dtype)
        deter = self.model.rssm.cell(
            torch.cat([self.state.stoch, scaled_prev], dim=-1), self.state.deter
        )
        post_in = nonvis if self.model.cfg.posterior_uses_nonvisual else None
        mean, std = self.model.rssm.posterior(deter, embed, post_in)
        if self.stochastic:
            eps = torch.randn(
                mean.shape, generator=self.generator, dtype=mean.dtype, device=mean.device
            )
            stoch = mean + std * eps
        else:
            stoch = mean
        self.state = LatentState(deter, stoch)
        dist = self.model.actor(self.state.feature)
        action = dist.sample(self.generator) if self.stochastic else dist.mode()
        self.prev_action = action
        return action.cpu().numpy()

    def act(self, image: np.ndarray, nonvisual: np.ndarray) -> np.ndarray:
        return self.act_batch(image[None], nonvisual[None])[0]


def batch_to_tensors(batch: dict[str, np.ndarray], dtype: torch.dtype) -> dict[str, Tensor]:
    """Convert a sampled numpy batch to torch tensors of the training dtype."""
    out: dict[str, Tensor] = {}
    for key, arr in batch.items():
        t = torch.as_tensor(arr)
        if key != "image":
            t = t.to(dtype)
        out[key] = t
    return out


class Collector:
    """Synchronous round-robin stepping of several environment sessions.

    Sessions persist across calls: a collection quota may pause mid-episode
    and the next call resumes where it stopped. The learned policy's filter
    state also persists, so a model update mid-episode simply continues the
    episode under the refreshed weights.
    """

    def __init__(
        self,
        num_envs: int,
        scenario_cfg: ScenarioConfig,
        sim_cfg: SimConfig,
        cam_cfg: CameraConfig,
        reward_cfg: RewardConfig,
        term_cfg: TerminationConfig,
        scenario_rng: np.random.Generator,
        env_rngs: list[np.random.Generator],
        noise_rng: np.random.Generator,
        on_episode=None,
    ):
        if len(env_rngs) != num_envs:
            raise ValueError("need one rng per environment")
        self.scenario_cfg = scenario_cfg
        self.sim_cfg = sim_cfg
        self.cam_cfg = cam_cfg
        self.reward_cfg = reward_cfg
        self.term_cfg = term_cfg
        self.scenario_rng = scenario_rng
        self.env_rngs = env_rngs
        self.noise_rng = noise_rng
        self.on_episode = on_episode
        self.sessions: list[EnvSession] = []
        self.pending: list[list] = []
        self.near_misses: list[int] = []
        self.total_steps = 0
        self.total_episodes = 0
        for i in range(num_envs):
            self.sessions.append(self._new_session(i))
            self.pending.append([self.sessions[i].initial_transition()])
            self.near_misses.append(0)

    def _new_session(self, i: int) -> EnvSession:
        scene = generate_valid_scene(
            self.scenario_rng, self.scenario_cfg, self.sim_cfg.robot_radius
        )
        return EnvSession(
            scene, self.sim_cfg, self.cam_cfg, self.reward_cfg, self.term_cfg, self.env_rngs[i]
        )

    def collect(self, n_steps: int, policy, exploration_std: float = 0.0,
                action_bounds: np.ndarray | None = None) -> int:
        """Step all environments until n_steps new transitions are recorded.

        exploration_std is a fraction of each action bound, so the added noise
        respects the very different scales of the gait and head commands.
        """
        taken = 0
        while taken < n_steps:
            images = np.stack([p[-1].image for p in self.pending])
            nonvis = np.stack([p[-1].nonvisual for p in self.pending])
            actions = policy.act_batch(images, nonvis)
            if exploration_std > 0.0 and action_bounds is not None:
                actions = actions + self.noise_rng.normal(
                    0.0, exploration_std, size=actions.shape
                ) * action_bounds
                actions = np.clip(actions, -action_bounds, action_bounds)
            for i, session in enumerate(self.sessions):
                result = session.apply(actions[i])
                self.pending[i].append(
                    Transition(
                        result.image,
                        result.nonvisual,
                        result.action.astype(np.float32),
                        result.reward,
                        result.f_success,
                        result.f_failure,
                    )
                )
                self.near_misses[i] += int(result.near_miss)
                taken += 1
                self.total_steps += 1
                if session.done:
                    episode = Episode.from_transitions(self.pending[i], result.status)
                    self.total_episodes += 1
                    if self.on_episode is not None:
                        self.on_episode(episode, self.near_misses[i], self.total_steps)
                    self.sessions[i] = self._new_session(i)
                    self.pending[i] = [self.sessions[i].initial_transition()]
                    self.near_misses[i] = 0
                    if hasattr(policy, "reset") and hasattr(policy, "num_envs"):
                        policy.reset(i)
                if taken >= n_steps:
                    break
        return taken


class Trainer:
    """Alternates environment collection with world-model and policy updates."""

    def __init__(
        self,
        sim_cfg: SimConfig,
        scenario_cfg: ScenarioConfig,
        cam_cfg: CameraConfig,
        reward_cfg: RewardConfig,
        term_cfg: TerminationConfig,
        net_cfg: NetConfig,
        cfg: TrainerConfig,
        seed: int,
        out_dir,
    ):
        torch.set_num_threads(cfg.torch_threads)
        self.cfg = cfg
        self.sim_cfg = sim_cfg
        self.cam_cfg = cam_cfg
        self.reward_cfg = reward_cfg
        self.term_cfg = term_cfg
        self.net_cfg = net_cfg
        self.seed = seed
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)

        if cam_cfg.width != net_cfg.image_size or cam_cfg.height != net_cfg.image_size:
            raise ValueError("camera resolution must match the model image size")

        ss = np.random.SeedSequence(seed)
        (scenario_key, env_key, noise_key, buffer_key, random_key,
         init_key, loss_key, collect_key) = ss.spawn(8)
        self.scenario_rng = np.random.default_rng(scenario_key)
        env_rngs = [np.random.default_rng(k) for k in env_key.spawn(cfg.num_envs)]
        noise_rng = np.random.default_rng(noise_key)
        self.buffer = ReplayBuffer(
            cfg.buffer_capacity, cfg.sequence_length, np.random.default_rng(buffer_key)
        )
        self.random_policy_rng = np.random.default_rng(random_key)

        torch.manual_seed(int(init_key.generate_state(1)[0]))
        self.model = WorldModel(net_cfg)
        self.loss_generator = torch.Generator().manual_seed(int(loss_key.generate_state(1)[0]))
        self.collect_generator = torch.Generator().manual_seed(
            int(collect_key.generate_state(1)[0])
        )

        self.model_opt = torch.optim.Adam(list(self.model.world_parameters()), lr=cfg.model_lr)
        self.value_opt = torch.optim.Adam(list(self.model.value_parameters()), lr=cfg.value_lr)
        self.actor_opt = torch.optim.Adam(list(self.model.actor_parameters()), lr=cfg.actor_lr)

        self.metrics_writer = JsonlWriter(self.out_dir / "metrics.jsonl")
        self.episode_writer = JsonlWriter(self.out_dir / "episodes.jsonl")

        self.collector = Collector(
            cfg.num_envs, scenario_cfg, sim_cfg, cam_cfg, reward_cfg, term_cfg,
            self.scenario_rng, env_rngs, noise_rng, on_episode=self._log_episode,
        )
        self.random_policy = RandomPolicy(
            np.asarray(net_cfg.action_bounds), self.random_policy_rng
        )
        self.collect_policy = WorldModelPolicy(
            self.model, num_envs=cfg.num_envs, stochastic=True,
            torch_generator=self.collect_generator,
        )
        self.update_idx = 0
        self.round_idx = 0
        self.incidents = 0
        self._snapshot = None

    def _log_episode(self, episode: Episode, near_misses: int, total_steps: int) -> None:
        self.buffer.add(episode)
        self.episode_writer.write(
            {
                "episode": self.collector.total_episodes,
                "steps": episode.steps,
                "return": round(episode.total_reward, 6),
                "outcome": episode.outcome,
                "near_miss_steps": near_misses,
                "steps_total": total_steps,
            }
        )

    def _take_snapshot(self) -> None:
        self._snapshot = {
            "model": copy.deepcopy(self.model.state_dict()),
            "model_opt": copy.deepcopy(self.model_opt.state_dict()),
            "value_opt": copy.deepcopy(self.value_opt.state_dict()),
            "actor_opt": copy.deepcopy(self.actor_opt.state_dict()),
        }

    def _restore_snapshot(self) -> None:
        self.model.load_state_dict(self._snapshot["model"])
        self.model_opt.load_state_dict(self._snapshot["model_opt"])
        self.value_opt.load_state_dict(self._snapshot["value_opt"])
        self.actor_opt.load_state_dict(self._snapshot["actor_opt"])

    def _update_once(self) -> dict[str, float]:
        cfg = self.cfg
        batch = batch_to_tensors(
            self.buffer.sample_batch(cfg.batch_size), next(self.model.parameters()).dtype
        )
        self.model_opt.zero_grad(set_to_none=True)
        self.value_opt.zero_grad(set_to_none=True)
        self.actor_opt.zero_grad(set_to_none=True)

        seq = world_model_loss(
            self.model, batch, self.term_cfg,
            kl_beta=cfg.kl_beta, kl_free_nats=cfg.kl_free_nats,
            generator=self.loss_generator,
        )
        if not torch.isfinite(seq.loss):
            raise FloatingPointError("world model loss is not finite")
        seq.loss.backward()
        world_norm = torch.nn.utils.clip_grad_norm_(
            list(self.model.world_parameters()), cfg.grad_clip
        )
        self.model_opt.step()

        mask = batch["mask"].reshape(-1) > 0
        starts = LatentState(
            seq.deters.detach().reshape(-1, self.net_cfg.deter_dim)[mask],
            seq.stochs.detach().reshape(-1, self.net_cfg.stoch_dim)[mask],
        )
        rollout = imagine_rollout(
            self.model, starts, cfg.horizon, cfg.gamma,
            generator=self.loss_generator,
            bootstrap_value=cfg.bootstrap_value,
            term_mask_threshold=cfg.term_mask_threshold,
        )
        v_loss = value_loss(self.model, rollout)
        lambdas = (
            self.term_cfg.resolved_lambdas()
            if self.net_cfg.predict_termination else (0.0, 0.0)
        )
        a_loss = actor_loss(rollout, lambdas)
        if not torch.isfinite(v_loss) or not torch.isfinite(a_loss):
            raise FloatingPointError("imagination loss is not finite")

        v_loss.backward()
        value_norm = torch.nn.utils.clip_grad_norm_(
            list(self.model.value_parameters()), cfg.grad_clip
        )
        self.value_opt.step()

        a_loss.backward()
        actor_norm = torch.nn.utils.clip_grad_norm_(
            list(self.model.actor_parameters()), cfg.grad_clip
        )
        self.actor_opt.step()

        return {
            **seq.metrics,
            "value_loss": float(v_loss.detach()),
            "actor_loss": float(a_loss.detach()),
            "world_grad_norm": float(world_norm),
            "value_grad_norm": float(value_norm),
            "actor_grad_norm": float(actor_norm),
            "lambda_success": lambdas[0],
            "lambda_failure": lambdas[1],
        }

    def _train_round(self) -> None:
        self.round_idx += 1
        self.metrics_writer.write(
            {"round": self.round_idx, "round_start_steps": self.collector.total_steps}
        )
        self._take_snapshot()
        for _ in range(self.cfg.updates_per_round):
            self.update_idx += 1
            try:
                metrics = self._update_once()
            except FloatingPointError as err:
                self.incidents += 1
                self._restore_snapshot()
                self.metrics_writer.write(
                    {
                        "update": self.update_idx,
                        "incident": "nonfinite_loss_restored",
                        "detail": str(err),
                    }
                )
                continue
            self.metrics_writer.write(
                {
                    "update": self.update_idx,
                    "round": self.round_idx,
                    "steps": self.collector.total_steps,
                    **{k: round(v, 6) for k, v in metrics.items()},
                }
            )
        self.metrics_writer.flush()

    def _evaluate_inline(self) -> float:
        from .evaluation import evaluate
        from .scenario import read_scene_set

        scenes = read_scene_set(self.cfg.eval_scene_file)
        report = evaluate(
            self.model, scenes, self.sim_cfg, self.cam_cfg, self.reward_cfg,
            self.term_cfg, seed=self.seed + 90_000,
        )
        self.metrics_writer.write(
            {
                "eval_at_steps": self.collector.total_steps,
                "round": self.round_idx,
                "success_rate": report.success_rate,
                "mean_return": round(report.mean_return, 6),
                "mean_length": round(report.mean_length, 3),
            }
        )
        self.metrics_writer.flush()
        return report.success_rate

    def _save(self, name: str) -> None:
        save_checkpoint(
            self.out_dir / name,
            self.model,
            extra={
                "steps": self.collector.total_steps,
                "round": self.round_idx,
                "seed": self.seed,
                "updates": self.update_idx,
            },
        )

    def run(self) -> dict:
        cfg = self.cfg
        bounds = np.asarray(self.net_cfg.action_bounds)
        prefill = min(cfg.prefill_steps, cfg.total_steps)
        self.collector.collect(prefill, self.random_policy)
        # the first round needs at least one complete episode to sample from
        while not self.buffer.episodes:
            self.collector.collect(cfg.num_envs, self.random_policy)
        best_success = -1.0
        stopped_early = False
        while True:
            self._train_round()
            if cfg.eval_every_rounds and self.cfg.eval_scene_file:
                if self.round_idx % cfg.eval_every_rounds == 0:
                    success = self._evaluate_inline()
                    if success > best_success:
                        best_success = success
                        self._save("ckpt_best.pt")
                    if (
                        cfg.early_stop_success is not None
                        and success >= cfg.early_stop_success
                    ):
                        stopped_early = True
                        break
            if cfg.checkpoint_every_rounds and self.round_idx % cfg.checkpoint_every_rounds == 0:
                self._save("ckpt_latest.pt")
            if self.collector.total_steps >= cfg.total_steps:
                break
            quota = min(cfg.train_every, cfg.total_steps - self.collector.total_steps)
            self.collector.collect(
                quota, self.collect_policy,
                exploration_std=cfg.exploration_std, action_bounds=bounds,
            )
        self._save("ckpt_final.pt")
        self.metrics_writer.close()
        self.episode_writer.close()
        return {
            "steps": self.collector.total_steps,
            "episodes": self.collector.total_episodes,
            "rounds": self.round_idx,
            "updates": self.update_idx,
            "incidents": self.incidents,
            "stopped_early": stopped_early,
            "best_success": best_success,
        }
