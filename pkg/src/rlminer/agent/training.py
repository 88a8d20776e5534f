"""Temporal-difference training of the state-value network."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence, TextIO

import numpy as np

from ..embedding import EmbeddingModel, rho
from ..rules import Rule
from .curriculum import CurriculumStage, curriculum_init
from .mdp import (Action, InvalidAction, ReplayMemory, RewardFn, State, Transition,
                  reward, successor_tokens, transition, valid_actions)
from .network import NetworkShape, RMSprop, ValueNetwork

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AgentTrainConfig:
    gamma: float = 0.99
    learning_rate: float = 1e-3
    replay_capacity: int = 10_000
    batch_size: int = 32
    updates_per_episode: int = 1   # replay batches learned from after each episode
    eps_start: float = 0.95
    eps_end: float = 0.05
    seed: int = 0
    token_dim: int = 32
    hidden: int = 64
    layers: int = 1
    # also regress episode start states onto their one-step backup
    train_source_states: bool = True
    precision: str = "float32"

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if self.eps_start < self.eps_end or not 0 <= self.eps_end <= self.eps_start <= 1:
            raise ValueError("need 0 <= eps_end <= eps_start <= 1")
        if min(self.learning_rate, self.replay_capacity, self.batch_size, self.updates_per_episode) <= 0:
            raise ValueError("learning_rate, replay_capacity, batch_size and updates_per_episode must be positive")
        if self.precision not in ("float32", "float64"):
            raise ValueError("precision must be float32 or float64")

    @classmethod
    def paper(cls, **overrides) -> "AgentTrainConfig":
        return cls(**{"batch_size": 128, "token_dim": 256, "hidden": 512, **overrides})

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


class Agent:
    """A value network bound to its action vocabulary."""

    def __init__(self, net: ValueNetwork, vocabulary: Sequence[int]):
        self.net = net
        self.vocabulary = sorted(vocabulary)
        self.vocab_size = net.shape.vocab_size - 2

    @classmethod
    def create(cls, vocabulary: Sequence[int], cfg: AgentTrainConfig,
               vocab_size: int | None = None) -> "Agent":
        vocab_size = len(vocabulary) if vocab_size is None else vocab_size
        shape = NetworkShape(vocab_size + 2, cfg.token_dim, cfg.hidden, cfg.layers)
        return cls(ValueNetwork(shape, seed=cfg.seed, dtype=cfg.precision), vocabulary)

    def values(self, states: Sequence[State]) -> np.ndarray:
        return self.net.value([s.tokens(self.vocab_size) for s in states])

    __call__ = values

    def best_successor_values(self, states: Sequence[State]) -> np.ndarray:
        """``max_a V(T(s, a))`` for each non-terminal state."""
        seqs, owner = successor_tokens(states, self.vocabulary, self.vocab_size)
        vals = self.net.value(seqs)
        out = np.full(len(states), -np.inf)
        np.maximum.at(out, owner, vals)
        return out


def epsilon_greedy(agent: Agent, s: State, epsilon: float, rng: np.random.Generator) -> Action:
    """Random valid action with probability ``epsilon``, else the action whose
    successor has the highest value (ties: lowest slot, then lowest predicate)."""
    actions = valid_actions(s, agent.vocabulary)
    if not actions:
        raise InvalidAction(f"{s} is terminal")
    if rng.random() < epsilon:
        return actions[rng.integers(len(actions))]
    seqs, _ = successor_tokens([s], agent.vocabulary, agent.vocab_size)
    return actions[int(np.argmax(agent.net.value(seqs)))]


def td_targets(agent: Agent, batch: Sequence[Transition], gamma: float) -> np.ndarray:
    """``r`` for terminal next states, else ``r + gamma * max_a' V(T(s', a'))``."""
    q = np.array([t.reward for t in batch], dtype=np.float64)
    open_idx = [i for i, t in enumerate(batch) if not t.next_state.terminal]
    if open_idx:
        q[open_idx] += gamma * agent.best_successor_values([batch[i].next_state for i in open_idx])
    return q


def td_update(agent: Agent, optimizer: RMSprop, batch: Sequence[Transition], gamma: float,
              train_source_states: bool = False) -> float:
    """One RMSprop step on the mean L1 error ``|V(s') - Q(s, a)|``.

    Targets are treated as constants. With ``train_source_states`` the source
    state of each episode-opening transition is also pulled towards
    ``gamma * max_a V(T(s, a))``: every other state is some transition's next
    state already, and source states are never terminal, so this backup has
    the same fixed point.
    """
    if not batch:
        raise ValueError("empty batch")
    states = [t.next_state for t in batch]
    targets = td_targets(agent, batch, gamma)
    sources = [t.state for t in batch if t.first] if train_source_states else []
    if sources:
        states = states + sources
        targets = np.concatenate([targets, gamma * agent.best_successor_values(sources)])
    n = len(states)
    vals, grads = agent.net.value_and_grad([s.tokens(agent.vocab_size) for s in states],
                                           lambda v: np.sign(v - targets) / n)
    optimizer.step(agent.net.params, grads)
    return float(np.abs(vals - targets).mean())


def epsilon_at(i: int, total: int, cfg: AgentTrainConfig) -> float:
    if total <= 1:
        return cfg.eps_start
    return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * i / (total - 1)


@dataclass
class TrainingLog:
    header: dict
    records: list[dict] = field(default_factory=list)

    def rewards(self, stage: int | None = None) -> np.ndarray:
        return np.array([r["reward"] for r in self.records if stage is None or r["stage"] == stage])

    def write(self, fh: TextIO):
        fh.write(json.dumps({"header": self.header}, sort_keys=True) + "\n")
        for r in self.records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")

    @classmethod
    def read(cls, fh: TextIO) -> "TrainingLog":
        lines = [json.loads(line) for line in fh if line.strip()]
        return cls(lines[0]["header"], lines[1:])


def run_episode(agent: Agent, s: State, epsilon: float, reward_fn: RewardFn,
                rng: np.random.Generator, memory: ReplayMemory | None = None) -> float:
    r = 0.0
    first = True
    while not s.terminal:
        a = epsilon_greedy(agent, s, epsilon, rng)
        nxt = transition(s, a)
        r = reward(s, a, reward_fn)
        if memory is not None:
            memory.push(Transition(s, a, nxt, r, first))
        s, first = nxt, False
    return r


def train_agent(stages: Sequence[CurriculumStage], cfg: AgentTrainConfig, *,
                reward_fn: RewardFn, vocabulary: Sequence[int], heads: Sequence[int],
                seeds: Sequence[Rule] = (), agent: Agent | None = None,
                progress: Callable[[dict], None] | None = None) -> tuple[Agent, TrainingLog]:
    """Run the simulate/store/learn loop over the stages in order.

    One seeded generator drives initial states, exploration and replay
    sampling. Epsilon decays linearly over the concatenated stage budgets.
    """
    rng = np.random.default_rng(cfg.seed)
    if agent is None:
        agent = Agent.create(vocabulary, cfg)
    optimizer = RMSprop(agent.net.params, cfg.learning_rate)
    memory = ReplayMemory(cfg.replay_capacity)
    total = sum(s.episodes for s in stages)
    header = {"seed": cfg.seed, "config": asdict(cfg), "fingerprint": cfg.fingerprint(),
              "stages": [{"phi": {str(k): v for k, v in s.phi.items()}, "q": s.q,
                          "episodes": s.episodes} for s in stages]}
    tlog = TrainingLog(header)
    episode = 0
    started = time.perf_counter()
    for k, stage in enumerate(stages):
        for _ in range(stage.episodes):
            eps = epsilon_at(episode, total, cfg)
            s = curriculum_init(stage, seeds, heads, rng)
            r = run_episode(agent, s, eps, reward_fn, rng, memory)
            for _ in range(cfg.updates_per_episode):
                batch = memory.sample(cfg.batch_size, rng)
                loss = td_update(agent, optimizer, batch, cfg.gamma, cfg.train_source_states)
            rec = {"episode": episode, "stage": k, "epsilon": round(eps, 6),
                   "reward": float(r), "loss": loss}
            tlog.records.append(rec)
            if progress is not None:
                progress(rec)
            episode += 1
    log.info("trained %d episodes in %.1fs", total, time.perf_counter() - started)
    return agent, tlog


def embedding_reward(model: EmbeddingModel) -> RewardFn:
    return lambda rule: rho(model, rule)


def train_on_kg(kg, model: EmbeddingModel, stages: Sequence[CurriculumStage], cfg: AgentTrainConfig,
                seeds: Sequence[Rule] = (), **kwargs) -> tuple[Agent, TrainingLog]:
    """:func:`train_agent` with the embedding-score reward over ``kg``'s vocabulary."""
    return train_agent(stages, cfg, reward_fn=embedding_reward(model),
                       vocabulary=kg.predicate_vocabulary(), heads=kg.original_predicates(),
                       seeds=seeds, **kwargs)
