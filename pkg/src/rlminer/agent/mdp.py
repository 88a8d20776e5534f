"""The rule-generation decision process.

A state is a head predicate plus a fixed number of body slots, each either
a predicate id or :data:`MASK`. An action fills one masked slot. Only the
action that completes the rule is rewarded.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from ..rules import Rule

MASK = -1

RewardFn = Callable[[Rule], float]


class InvalidAction(ValueError):
    pass


class Action(NamedTuple):
    slot: int  # 0-based body position
    predicate: int


@dataclass(frozen=True)
class State:
    head: int
    body: tuple[int, ...]

    @classmethod
    def masked(cls, head: int, length: int) -> "State":
        return cls(head, (MASK,) * length)

    @classmethod
    def from_rule(cls, rule: Rule, masked_slots: Sequence[int] = ()) -> "State":
        body = list(rule.body)
        for u in masked_slots:
            body[u] = MASK
        return cls(rule.head, tuple(body))

    @classmethod
    def prefix(cls, head: int, prefix: Sequence[int], length: int) -> "State":
        """Leftmost slots filled with ``prefix``, the rest masked."""
        return cls(head, tuple(prefix) + (MASK,) * (length - len(prefix)))

    @property
    def terminal(self) -> bool:
        return MASK not in self.body

    def masked_slots(self) -> list[int]:
        return [u for u, p in enumerate(self.body) if p == MASK]

    def rule(self) -> Rule | None:
        """The completed rule, or None for an incomplete state."""
        return Rule(self.head, self.body) if self.terminal else None

    def tokens(self, vocab_size: int) -> tuple[int, ...]:
        """``[head, SEP, body...]`` with SEP = |Γ| and MASK = |Γ| + 1."""
        return (self.head, vocab_size) + tuple(vocab_size + 1 if p == MASK else p for p in self.body)


def transition(s: State, a: Action) -> State:
    if not 0 <= a.slot < len(s.body) or s.body[a.slot] != MASK:
        raise InvalidAction(f"slot {a.slot} of {s} is not masked")
    body = list(s.body)
    body[a.slot] = a.predicate
    return State(s.head, tuple(body))


def valid_actions(s: State, vocabulary: Sequence[int]) -> list[Action]:
    """All valid actions in lexicographic (slot, predicate) order."""
    vocab = sorted(vocabulary)
    return [Action(u, v) for u in s.masked_slots() for v in vocab]


def reward(s: State, a: Action, reward_fn: RewardFn) -> float:
    nxt = transition(s, a)
    return float(reward_fn(nxt.rule())) if nxt.terminal else 0.0


class Transition(NamedTuple):
    state: State
    action: Action
    next_state: State
    reward: float
    first: bool = False  # ``state`` is the start of its episode


class ReplayMemory:
    """Bounded FIFO of transitions."""

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: deque[Transition] = deque(maxlen=capacity)

    def push(self, item: Transition):
        self._items.append(item)

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        """Uniform sample without replacement (the whole memory if smaller)."""
        n = min(batch_size, len(self._items))
        idx = rng.choice(len(self._items), size=n, replace=False)
        return [self._items[i] for i in idx]


def successor_tokens(states: Sequence[State], vocabulary: Sequence[int], vocab_size: int):
    """Token sequences of every successor of every state.

    Returns ``(tokens, owner)`` where ``owner[j]`` is the index of the state
    that produced successor ``j``; successors of each state appear in
    lexicographic action order.
    """
    vocab = np.array(sorted(vocabulary), dtype=np.int64)
    seqs: list[tuple[int, ...]] = []
    owner: list[int] = []
    for k, s in enumerate(states):
        base = np.array(s.tokens(vocab_size), dtype=np.int64)
        for u in s.masked_slots():
            block = np.repeat(base[None, :], len(vocab), axis=0)
            block[:, 2 + u] = vocab
            seqs.extend(map(tuple, block.tolist()))
            owner.extend([k] * len(vocab))
    return seqs, np.array(owner, dtype=np.int64)
