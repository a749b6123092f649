"""Episodic replay storage with fixed-length sequence sampling.

Episodes are stored whole; training batches are windows of consecutive steps
drawn from single episodes, never spanning an episode boundary. Episodes
shorter than the window are padded and masked.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Transition:
    """One stored step: the observation at a state, the action that produced
    the state (zeros for the first record), the reward that arrived with it,
    and the terminal indicator values at it."""

    image: np.ndarray       # (H, W) uint8
    nonvisual: np.ndarray   # (NONVISUAL_DIM,)
    action: np.ndarray      # (action_dim,)
    reward: float
    f_success: float
    f_failure: float


@dataclass
class Episode:
    """A completed episode as stacked step records plus its outcome."""

    images: np.ndarray      # (T+1, H, W) uint8
    nonvisual: np.ndarray   # (T+1, NONVISUAL_DIM) float32
    actions: np.ndarray     # (T+1, action_dim) float32, first row all zero
    rewards: np.ndarray     # (T+1,) float32, first entry zero
    indicators: np.ndarray  # (T+1, 2) float32 columns (f_success, f_failure)
    outcome: str            # "success" | "failure" | "timeout"

    def __post_init__(self) -> None:
        n = len(self.images)
        for name in ("nonvisual", "actions", "rewards", "indicators"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"episode field {name} has mismatched length")
        if self.outcome not in ("success", "failure", "timeout"):
            raise ValueError(f"unknown outcome {self.outcome!r}")
        if np.any(self.actions[0] != 0.0) or self.rewards[0] != 0.0:
            raise ValueError("first record must carry zero action and reward")

    @property
    def steps(self) -> int:
        """Number of environment steps (records minus the initial one)."""
        return len(self.images) - 1

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())

    @staticmethod
    def from_transitions(transitions: list[Transition], outcome: str) -> "Episode":
        return Episode(
            images=np.stack([t.image for t in transitions]),
            nonvisual=np.stack([t.nonvisual for t in transitions]).astype(np.float32),
            actions=np.stack([t.action for t in transitions]).astype(np.float32),
            rewards=np.array([t.reward for t in transitions], dtype=np.float32),
            indicators=np.array(
                [[t.f_success, t.f_failure] for t in transitions], dtype=np.float32
            ),
            outcome=outcome,
        )


class ReplayBuffer:
    """Holds whole episodes up to a total-step capacity, oldest evicted first."""

    def __init__(self, capacity_steps: int, sequence_length: int, rng: np.random.Generator):
        if sequence_length < 2:
            raise ValueError("sequence_length must be at least 2")
        self.capacity_steps = capacity_steps
        self.sequence_length = sequence_length
        self.rng = rng
        self.episodes: deque[Episode] = deque()
        self.total_steps = 0

    def add(self, episode: Episode) -> None:
        self.episodes.append(episode)
        self.total_steps += episode.steps
        while self.total_steps > self.capacity_steps and len(self.episodes) > 1:
            dropped = self.episodes.popleft()
            self.total_steps -= dropped.steps

    def __len__(self) -> int:
        return self.total_steps

    def sample_sequence(self) -> dict[str, np.ndarray]:
        """One window of sequence_length records from a single episode.

        Episodes shorter than the window are left-aligned and zero padded;
        "mask" marks the real records.
        """
        ep = self.episodes[int(self.rng.integers(len(self.episodes)))]
        length = len(ep.images)
        seq = self.sequence_length
        out = {
            "image": np.zeros((seq, *ep.images.shape[1:]), dtype=np.uint8),
            "nonvisual": np.zeros((seq, ep.nonvisual.shape[1]), dtype=np.float32),
            "action": np.zeros((seq, ep.actions.shape[1]), dtype=np.float32),
            "reward": np.zeros(seq, dtype=np.float32),
            "indicators": np.zeros((seq, 2), dtype=np.float32),
            "mask": np.zeros(seq, dtype=np.float32),
        }
        if length >= seq:
            start = int(self.rng.integers(length - seq + 1))
            sl = slice(start, start + seq)
            n = seq
        else:
            sl = slice(0, length)
            n = length
        out["image"][:n] = ep.images[sl]
        out["nonvisual"][:n] = ep.nonvisual[sl]
        out["action"][:n] = ep.actions[sl]
        out["reward"][:n] = ep.rewards[sl]
        out["indicators"][:n] = ep.indicators[sl]
        out["mask"][:n] = 1.0
        return out

    def sample_batch(self, batch_size: int) -> dict[str, np.ndarray]:
        """Stack batch_size sequence windows into (B, L, ...) arrays."""
        if not self.episodes:
            raise ValueError("cannot sample from an empty buffer")
        seqs = [self.sample_sequence() for _ in range(batch_size)]
        return {k: np.stack([s[k] for s in seqs]) for k in seqs[0]}
