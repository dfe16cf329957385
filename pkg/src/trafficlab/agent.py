"""Per-intersection PPO agent trained with an imitation term.

The combined objective is ``alpha * (critic + clipped actor) + (1 - alpha) *
cross-entropy to the expert``, with ``alpha`` growing linearly in the episode
number.  Each loss function returns ``(value, GradientSet)`` so that they can
be checked against finite differences one at a time.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import pressure
from .simcore import IntersectionObservation
from .tensorlite import (
    ACTOR_SIZES,
    CRITIC_SIZES,
    GradientSet,
    MaskedModel,
    log_softmax,
    softmax,
)

N_ACTIONS = ACTOR_SIZES[-1]
STATE_SIZE = ACTOR_SIZES[0]


@dataclass(frozen=True)
class Hyperparams:
    gamma: float = 0.99
    lam: float = 0.95
    batch_size: int = 5
    clip: float = 0.2
    lr_actor: float = 0.0005
    lr_critic: float = 0.001
    alpha_slope: float = 0.001
    alpha_override: float | None = None
    local_step: bool = True
    state_scale: float = 10.0


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: int
    a_e: int
    r: float
    s_next: np.ndarray
    logp_old: float


@dataclass
class TrajectoryMemory:
    items: list[Transition] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.items)

    def push(self, t: Transition) -> None:
        self.items.append(t)

    def clear(self) -> None:
        self.items.clear()


def encode_state(obs: IntersectionObservation, kind: str = "hp") -> np.ndarray:
    """12 directed-road pressures followed by the current phase scaled to [0, 1]."""
    if kind == "hp":
        roads = pressure.hp_vector(obs).road_hp
    elif kind == "count":
        roads = pressure.road_pressure_vector(obs)
    else:
        raise ValueError(f"unknown pressure kind {kind!r}")
    return np.append(roads, obs.phase / (N_ACTIONS - 1))


def reward(obs: IntersectionObservation, kind: str = "hp") -> float:
    if kind == "hp":
        return -pressure.hp_vector(obs).intersection_hp
    if kind == "count":
        return -pressure.intersection_pressure(obs)
    raise ValueError(f"unknown pressure kind {kind!r}")


def alpha_schedule(episode: int, slope: float = 0.001) -> float:
    return float(min(max(slope * episode, 0.0), 1.0))


def select_action(actor: MaskedModel, s: np.ndarray, mode: str = "sample",
                  rng: np.random.Generator | None = None) -> tuple[int, float]:
    logits = actor(s)
    logp = log_softmax(logits)
    if mode == "greedy":
        a = int(np.argmax(logits))
    elif mode == "sample":
        if rng is None:
            raise ValueError("sampling requires an rng")
        cdf = np.cumsum(np.exp(logp))
        a = int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), N_ACTIONS - 1))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return a, float(logp[a])


def _stack(batch: list[Transition]):
    states = np.stack([t.s for t in batch])
    nexts = np.stack([t.s_next for t in batch])
    actions = np.array([t.a for t in batch], dtype=np.int64)
    expert = np.array([t.a_e for t in batch], dtype=np.int64)
    rewards = np.array([t.r for t in batch], dtype=float)
    logp_old = np.array([t.logp_old for t in batch], dtype=float)
    return states, nexts, actions, expert, rewards, logp_old


def compute_gae(batch: list[Transition], critic: MaskedModel, gamma: float,
                lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Advantages and TD targets ``r + gamma * V(s')`` over a contiguous batch."""
    if not batch:
        raise ValueError("empty batch")
    states, nexts, _, _, rewards, _ = _stack(batch)
    values = critic(states)[:, 0]
    next_values = critic(nexts)[:, 0]
    targets = rewards + gamma * next_values
    deltas = targets - values
    adv = np.zeros_like(deltas)
    running = 0.0
    for t in range(len(batch) - 1, -1, -1):
        running = deltas[t] + gamma * lam * running
        adv[t] = running
    return adv, targets


def critic_loss(critic: MaskedModel, states: np.ndarray,
                targets: np.ndarray) -> tuple[float, GradientSet]:
    values, cache = critic.forward(states)
    diff = targets - values[:, 0]
    n = len(diff)
    loss = float(np.mean(np.abs(diff)))
    grad_out = (-np.sign(diff) / n)[:, None]
    return loss, critic.backward(cache, grad_out)


def _actor_terms(logits, actions, logp_old, advantages, clip):
    n = len(actions)
    logp = log_softmax(logits)
    probs = np.exp(logp)
    ratio = np.exp(logp[np.arange(n), actions] - logp_old)
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip)
    unclipped_obj = ratio * advantages
    clipped_obj = clipped * advantages
    objective = np.minimum(unclipped_obj, clipped_obj)
    loss = -float(np.mean(objective))
    # gradient flows only where the unclipped branch is the minimum
    active = unclipped_obj <= clipped_obj
    d_logp = np.where(active, -ratio * advantages / n, 0.0)
    onehot = np.zeros_like(logits)
    onehot[np.arange(n), actions] = 1.0
    grad_logits = d_logp[:, None] * (onehot - probs)
    return loss, grad_logits


def _imitation_terms(logits, expert):
    n = len(expert)
    logp = log_softmax(logits)
    loss = -float(np.mean(logp[np.arange(n), expert]))
    grad = softmax(logits)
    grad[np.arange(n), expert] -= 1.0
    return loss, grad / n


def actor_loss(actor: MaskedModel, states, actions, logp_old, advantages,
               clip: float = 0.2) -> tuple[float, GradientSet]:
    logits, cache = actor.forward(states)
    loss, grad_logits = _actor_terms(logits, np.asarray(actions), np.asarray(logp_old, float),
                                     np.asarray(advantages, float), clip)
    return loss, actor.backward(cache, grad_logits)


def imitation_loss(actor: MaskedModel, states, expert) -> tuple[float, GradientSet]:
    logits, cache = actor.forward(states)
    loss, grad_logits = _imitation_terms(logits, np.asarray(expert))
    return loss, actor.backward(cache, grad_logits)


def total_loss(alpha: float, l_critic: float, l_actor: float, l_imitation: float) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha * (l_critic + l_actor) + (1.0 - alpha) * l_imitation


@dataclass(frozen=True)
class BatchResult:
    loss: float
    critic_loss: float
    actor_loss: float
    imitation_loss: float
    gradient: GradientSet


def batch_gradient(actor: MaskedModel, critic: MaskedModel, batch: list[Transition],
                   alpha: float, hp: Hyperparams) -> BatchResult:
    """Total loss and its gradient over ``[actor params, critic params]``."""
    states, _, actions, expert, _, logp_old = _stack(batch)
    adv, targets = compute_gae(batch, critic, hp.gamma, hp.lam)
    l_c, g_c = critic_loss(critic, states, targets)
    logits, cache = actor.forward(states)
    l_a, g_a = _actor_terms(logits, actions, logp_old, adv, hp.clip)
    l_i, g_i = _imitation_terms(logits, expert)
    g_actor = actor.backward(cache, alpha * g_a + (1.0 - alpha) * g_i)
    vector = np.concatenate([g_actor.vector, alpha * g_c.vector])
    return BatchResult(total_loss(alpha, l_c, l_a, l_i), l_c, l_a, l_i, GradientSet(vector))


class Agent:
    """Actor, critic, trajectory memory and schedule state for one intersection."""

    def __init__(self, actor: MaskedModel, critic: MaskedModel, hp: Hyperparams | None = None,
                 seed: int = 0, client_id: int = 0, pressure_kind: str = "hp"):
        if actor.sizes != ACTOR_SIZES or critic.sizes != CRITIC_SIZES:
            raise ValueError("unexpected network sizes")
        self.actor = actor
        self.critic = critic
        self.hp = hp or Hyperparams()
        self.rng = np.random.default_rng(seed)
        self.client_id = client_id
        self.pressure_kind = pressure_kind
        self.memory = TrajectoryMemory()
        self.episode = 1

    @property
    def alpha(self) -> float:
        if self.hp.alpha_override is not None:
            return float(self.hp.alpha_override)
        return alpha_schedule(self.episode, self.hp.alpha_slope)

    @property
    def mask_vector(self) -> np.ndarray:
        return np.concatenate([self.actor.flat_mask(), self.critic.flat_mask()])

    def encode(self, obs: IntersectionObservation) -> np.ndarray:
        """Network input: the encoded state with road entries multiplied by ``state_scale``."""
        s = encode_state(obs, self.pressure_kind)
        s[:-1] *= self.hp.state_scale
        return s

    def reward(self, obs: IntersectionObservation) -> float:
        return reward(obs, self.pressure_kind)

    def act(self, s: np.ndarray, mode: str = "sample") -> tuple[int, float]:
        return select_action(self.actor, s, mode, self.rng)

    def remember(self, t: Transition) -> bool:
        """Store ``t``; returns True once a full batch is waiting."""
        self.memory.push(t)
        return len(self.memory) >= self.hp.batch_size

    def train_on_batch(self) -> BatchResult:
        """Local update on the stored batch; returns the pre-step gradient."""
        batch = list(self.memory.items[: self.hp.batch_size])
        result = batch_gradient(self.actor, self.critic, batch, self.alpha, self.hp)
        if self.hp.local_step:
            self._apply(result.gradient.vector)
        self.memory.clear()
        return BatchResult(result.loss, result.critic_loss, result.actor_loss,
                           result.imitation_loss,
                           GradientSet(result.gradient.vector, self.client_id))

    def _apply(self, vector: np.ndarray) -> None:
        n_actor = self.actor.size
        if vector.shape != (n_actor + self.critic.size,):
            raise ValueError(f"gradient of length {vector.shape} does not match agent")
        self.actor.adam_step(vector[:n_actor], self.hp.lr_actor)
        self.critic.adam_step(vector[n_actor:], self.hp.lr_critic)

    def apply_aggregated(self, aggregated: np.ndarray | GradientSet) -> None:
        vector = aggregated.vector if isinstance(aggregated, GradientSet) else np.asarray(aggregated)
        self._apply(vector * self.mask_vector)

    # -- checkpoints ---------------------------------------------------------

    def to_bytes(self) -> bytes:
        actor = self.actor.to_bytes()
        critic = self.critic.to_bytes()
        head = struct.pack("<4sHIIfd", b"TLAG", 1, len(actor), len(critic),
                           self.hp.alpha_slope, float(self.episode))
        return head + actor + critic

    @classmethod
    def from_bytes(cls, data: bytes, hp: Hyperparams | None = None, seed: int = 0,
                   client_id: int = 0, pressure_kind: str = "hp") -> "Agent":
        fmt = "<4sHIIfd"
        magic, version, n_actor, n_critic, slope, episode = struct.unpack_from(fmt, data, 0)
        if magic != b"TLAG" or version != 1:
            raise ValueError("not an agent checkpoint")
        offset = struct.calcsize(fmt)
        actor = MaskedModel.from_bytes(data[offset:offset + n_actor])
        critic = MaskedModel.from_bytes(data[offset + n_actor:offset + n_actor + n_critic])
        hp = hp or Hyperparams(alpha_slope=float(slope))
        agent = cls(actor, critic, hp, seed, client_id, pressure_kind)
        agent.episode = int(episode)
        return agent
