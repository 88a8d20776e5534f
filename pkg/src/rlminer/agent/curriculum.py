"""Staged episode initialisation and seed-rule sampling."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..embedding import EmbeddingModel, rho_batch
from ..kg import KnowledgeGraph
from ..rules import Rule
from .mdp import State

log = logging.getLogger(__name__)


class CurriculumError(ValueError):
    pass


@dataclass(frozen=True)
class CurriculumStage:
    """``phi`` maps body length to probability; ``q`` is the probability of a
    fully masked random start (otherwise a partially masked seed rule)."""

    phi: Mapping[int, float]
    q: float
    episodes: int

    def __post_init__(self):
        object.__setattr__(self, "phi", dict(sorted(self.phi.items())))
        if not math.isclose(sum(self.phi.values()), 1.0, abs_tol=1e-9):
            raise CurriculumError("length distribution must sum to 1")
        if any(p < 0 for p in self.phi.values()) or any(n < 1 for n in self.phi):
            raise CurriculumError("invalid length distribution")
        if not 0.0 <= self.q <= 1.0:
            raise CurriculumError("q must be in [0, 1]")
        if self.episodes < 0:
            raise CurriculumError("episodes must be non-negative")

    def with_episodes(self, episodes: int) -> "CurriculumStage":
        return CurriculumStage(self.phi, self.q, episodes)


def _stage(probs, q, episodes):
    return CurriculumStage(dict(zip(range(2, 7), probs)), q, episodes)


# rows are body lengths 2..6, as trained at full scale
PAPER_CURRICULUM = (
    _stage((0.25, 0.25, 0.50, 0.00, 0.00), 0.0, 50_000),
    _stage((0.17, 0.33, 0.50, 0.00, 0.00), 0.3, 100_000),
    _stage((0.15, 0.20, 0.25, 0.40, 0.00), 0.6, 100_000),
    _stage((0.10, 0.15, 0.20, 0.25, 0.30), 0.8, 150_000),
)


def scaled_curriculum(episodes: Sequence[int], stages=PAPER_CURRICULUM) -> list[CurriculumStage]:
    """The same stage table with desk-sized episode budgets."""
    if len(episodes) != len(stages):
        raise CurriculumError("one budget per stage")
    return [s.with_episodes(n) for s, n in zip(stages, episodes)]


def curriculum_init(stage: CurriculumStage, seeds: Sequence[Rule], heads: Sequence[int],
                    rng: np.random.Generator) -> State:
    p = rng.random()
    if p > stage.q:
        if not seeds:
            raise CurriculumError("stage needs seed rules but none were given")
        rule = seeds[rng.integers(len(seeds))]
        n = len(rule.body)
        m = int(rng.integers(1, n + 1))
        slots = rng.choice(n, size=m, replace=False)
        return State.from_rule(rule, sorted(slots.tolist()))
    lengths = np.array(list(stage.phi))
    length = int(rng.choice(lengths, p=np.array(list(stage.phi.values()))))
    head = int(heads[rng.integers(len(heads))])
    return State.masked(head, length)


def sample_seed_rules(kg: KnowledgeGraph, model: EmbeddingModel, count: int = 1000,
                      rng: np.random.Generator | int = 0, top_fraction: float = 0.1,
                      pool: int = 50_000, lengths: Sequence[int] = (2, 3),
                      threshold: float | None = None, max_rounds: int = 10) -> list[Rule]:
    """Randomly sampled short rules whose embedding score is in the top
    ``top_fraction`` of a uniform sample (or above an explicit ``threshold``).

    Rounds of ``pool`` samples are drawn until ``count`` distinct rules pass or
    ``max_rounds`` is reached; a short result is logged as a warning.
    """
    rng = np.random.default_rng(rng)
    heads = np.array(kg.original_predicates())
    vocab = np.array(kg.predicate_vocabulary())
    seeds: dict[Rule, None] = {}
    for _ in range(max_rounds):
        lens = rng.choice(np.asarray(lengths), size=pool)
        h = rng.choice(heads, size=pool)
        full = rng.choice(vocab, size=(pool, max(lengths)))
        scores = np.empty(pool)
        for n in np.unique(lens):
            idx = np.flatnonzero(lens == n)
            scores[idx] = rho_batch(model, h[idx], full[idx, :n])
        if threshold is None:
            threshold = float(np.quantile(scores, 1 - top_fraction))
        for i in np.flatnonzero(scores >= threshold):
            seeds.setdefault(Rule(int(h[i]), tuple(full[i, :lens[i]].tolist())), None)
            if len(seeds) >= count:
                return list(seeds)
    log.warning("collected %d of %d seed rules above threshold %.4f", len(seeds), count, threshold)
    return list(seeds)
