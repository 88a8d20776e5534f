"""Fact prediction with mined rules and the evaluations built on it."""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass
from fractions import Fraction
from itertools import product
from typing import Callable, Iterable, Sequence, TextIO

import numpy as np

from .agent.mdp import State
from .kg import KnowledgeGraph
from .rules import GroundingCache, Rule, refine, stats_from_groundings
from .search import MinedRule

SCORE_CAP = 1.0 - 1e-9
_BELOW_ONE = math.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class Prediction:
    fact: tuple[int, int, int]
    cd: float
    rules: tuple[int, ...]    # indices into the rule list that derive the fact
    known: bool = False       # already in the graph the rules were applied to


def noisy_or(scores: Iterable[float]) -> float:
    """``1 - prod(1 - s)``, with scores capped just below 1.

    The product is formed exactly and rounded once, so the result does not
    depend on score order, never decreases when a score is added, is at
    least the largest score, and stays strictly below 1.
    """
    capped = [min(float(s), SCORE_CAP) for s in scores]
    if len(capped) <= 1:
        return capped[0] if capped else 0.0
    rest = Fraction(1)
    for s in capped:
        rest *= 1 - Fraction(s)
    return min(float(1 - rest), _BELOW_ONE)


def apply_rules(kg: KnowledgeGraph, rules: Sequence[MinedRule | tuple[Rule, float]]) -> list[Prediction]:
    """Every head fact derivable from a rule body on ``kg``, with its
    confidence degree aggregated over all deriving rules.

    Facts already in ``kg`` are returned with ``known=True``. Output is sorted
    by confidence degree, descending, then by fact.
    """
    support: dict[tuple[int, int, int], list[int]] = defaultdict(list)
    scores = []
    cache = GroundingCache(kg)
    for i, item in enumerate(rules):
        rule, score = (item.rule, item.score) if isinstance(item, MinedRule) else item
        scores.append(score)
        coo = cache.get(rule.body).matrix.tocoo()
        for x, y in zip(coo.row.tolist(), coo.col.tolist()):
            support[(x, rule.head, y)].append(i)
    preds = [Prediction(f, noisy_or(scores[i] for i in ids), tuple(ids), f in kg)
             for f, ids in support.items()]
    preds.sort(key=lambda p: (-p.cd, p.fact))
    return preds


def write_predictions(preds: Iterable[Prediction], kg: KnowledgeGraph, fh: TextIO):
    for p in preds:
        s, r, o = p.fact
        ids = ",".join(map(str, p.rules))
        fh.write(f"{kg.entities[s]}\t{kg.predicate_name(r)}\t{kg.entities[o]}\t{p.cd:.6f}\t{ids}\n")


# -- held-out evaluation ------------------------------------------------------

@dataclass(frozen=True)
class EvalSplit:
    train: KnowledgeGraph
    held_out: frozenset[tuple[int, int, int]]
    ratio: float
    seed: int

    @property
    def full(self) -> frozenset[tuple[int, int, int]]:
        return self.train.facts | self.held_out


def make_split(kg: KnowledgeGraph, ratio: float = 0.3, seed: int = 0,
               heads: Iterable[int] | None = None) -> EvalSplit:
    """Hold out ``ratio`` of the facts of each selected head predicate, uniformly."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must be in (0, 1)")
    rng = np.random.default_rng(seed)
    heads = sorted(kg.original_predicates() if heads is None else heads)
    by_pred = defaultdict(list)
    for f in sorted(kg.facts):
        by_pred[f[1]].append(f)
    held = set()
    for h in heads:
        facts = by_pred.get(h, [])
        n = int(round(ratio * len(facts)))
        for i in rng.choice(len(facts), size=n, replace=False):
            held.add(facts[i])
    return EvalSplit(kg.with_facts(kg.facts - held), frozenset(held), ratio, seed)


def predictive_power(split: EvalSplit, rules: Sequence[MinedRule], min_cd: float = 0.7,
                     ) -> tuple[int, int]:
    """(#predicted held-out facts, #those with confidence degree >= ``min_cd``)."""
    hits = [p for p in apply_rules(split.train, rules) if not p.known and p.fact in split.held_out]
    return len(hits), sum(p.cd >= min_cd for p in hits)


def precision_curve(split: EvalSplit, rules: Sequence[MinedRule]) -> tuple[np.ndarray, np.ndarray]:
    """Confidence degrees of new predictions (descending) and the running
    precision against the held-out set."""
    new = [p for p in apply_rules(split.train, rules) if not p.known]
    cd = np.array([p.cd for p in new])
    correct = np.array([p.fact in split.held_out for p in new], dtype=float)
    prec = np.cumsum(correct) / np.arange(1, len(new) + 1) if new else np.zeros(0)
    return cd, prec


@dataclass(frozen=True)
class RankingMetrics:
    mrr: float
    hits1: float
    hits10: float
    queries: int

    def report(self) -> str:
        return "".join(f"{k}\t{v}\n" for k, v in asdict(self).items())


def filtered_rank(target_score: float, candidate_scores: dict[int, float], target: int,
                  n_entities: int, filtered: Iterable[int] = ()) -> float:
    """Rank of ``target`` among all entities by score, ignoring the other
    ``filtered`` answers. Entities without a score count as 0; ties share the
    average of the ranks they span."""
    skip = set(filtered) - {target}
    n_cands = n_entities - 1 - len(skip)   # competitors of the target
    higher = ties_scored = 0
    scored = 0
    for e, s in candidate_scores.items():
        if e == target or e in skip:
            continue
        scored += 1
        if s > target_score:
            higher += 1
        elif s == target_score:
            ties_scored += 1
    ties = ties_scored + (n_cands - scored if target_score == 0.0 else 0)
    return 1.0 + higher + ties / 2.0


def rank_queries(queries: Iterable[tuple[float, dict[int, float], int, Iterable[int]]],
                 n_entities: int) -> RankingMetrics:
    ranks = [filtered_rank(ts, cands, t, n_entities, filt) for ts, cands, t, filt in queries]
    if not ranks:
        return RankingMetrics(0.0, 0.0, 0.0, 0)
    r = np.array(ranks)
    return RankingMetrics(float(np.mean(1.0 / r)), float(np.mean(r <= 1)),
                          float(np.mean(r <= 10)), len(ranks))


def link_prediction(split: EvalSplit, rules: Sequence[MinedRule]) -> RankingMetrics:
    """Filtered MRR / Hits over both query directions of every held-out fact,
    ranking candidates by confidence degree of rules applied to the training graph."""
    preds = apply_rules(split.train, rules)
    tails: dict[tuple[int, int], dict[int, float]] = defaultdict(dict)
    heads: dict[tuple[int, int], dict[int, float]] = defaultdict(dict)
    for p in preds:
        s, r, o = p.fact
        tails[s, r][o] = p.cd
        heads[r, o][s] = p.cd
    true_tails: dict[tuple[int, int], set[int]] = defaultdict(set)
    true_heads: dict[tuple[int, int], set[int]] = defaultdict(set)
    for s, r, o in split.full:
        true_tails[s, r].add(o)
        true_heads[r, o].add(s)

    def queries():
        for s, r, o in sorted(split.held_out):
            t = tails.get((s, r), {})
            yield t.get(o, 0.0), t, o, true_tails[s, r]
            h = heads.get((r, o), {})
            yield h.get(s, 0.0), h, s, true_heads[r, o]

    return rank_queries(queries(), split.train.num_entities)


def write_metrics(metrics: dict, fh_text: TextIO, fh_json: TextIO | None = None):
    """Flat ``key<TAB>value`` lines plus an optional JSON record."""
    for k in sorted(metrics):
        fh_text.write(f"{k}\t{metrics[k]}\n")
    if fh_json is not None:
        json.dump(metrics, fh_json, sort_keys=True, indent=2)
        fh_json.write("\n")


# -- value function diagnostics -------------------------------------------------

class UndefinedCorrelation(ValueError):
    pass


def completion_quality(kg: KnowledgeGraph, head: int, prefix: tuple[int, ...], length: int,
                       min_conf: float = 0.1, cache: GroundingCache | None = None,
                       rng: np.random.Generator | None = None, max_enumerate: int = 5000) -> float:
    """Fraction of the body completions of ``prefix`` (to ``length - 1`` atoms)
    whose rule has confidence at least ``min_conf``. Exhaustive when there are
    at most ``max_enumerate`` completions, uniformly sampled otherwise."""
    cache = cache or GroundingCache(kg)
    vocab = kg.predicate_vocabulary()
    m = length - 1 - len(prefix)
    if m == 0:
        tails = [()]
    elif len(vocab) ** m <= max_enumerate:
        tails = list(product(vocab, repeat=m))
    else:
        rng = rng or np.random.default_rng(0)
        tails = [tuple(t) for t in rng.choice(vocab, size=(max_enumerate, m)).tolist()]
    good = 0
    for tail in tails:
        body = prefix + tail
        if body == (head,):
            continue
        if stats_from_groundings(kg, head, cache.get(body)).conf >= min_conf:
            good += 1
    return good / len(tails)


def sample_search_states(kg: KnowledgeGraph, length: int, count: int,
                         rng: np.random.Generator, cache: GroundingCache | None = None,
                         ) -> list[tuple[int, tuple[int, ...]]]:
    """Random (head, prefix) pairs that the search could place on its heap:
    prefixes of 1..length-2 atoms grown by uniform choice among refinements."""
    if length < 3:
        raise ValueError("intermediate states need rule length >= 3")
    cache = cache or GroundingCache(kg)
    heads = kg.original_predicates()
    out = []
    while len(out) < count:
        head = heads[rng.integers(len(heads))]
        k = int(rng.integers(1, length - 1))
        prefix: tuple[int, ...] = ()
        for _ in range(k):
            kids = refine(kg, prefix, cache=cache)
            if not kids:
                break
            prefix = kids[rng.integers(len(kids))]
        if len(prefix) == k:
            out.append((head, prefix))
    return out


def value_quality_correlation(kg: KnowledgeGraph, value_fn: Callable[[Sequence[State]], np.ndarray],
                              length: int | Sequence[int] = 4, sample_size: int = 2000,
                              rng: np.random.Generator | int = 0, min_conf: float = 0.1,
                              ) -> tuple[float, np.ndarray, np.ndarray]:
    """Pearson correlation between state values and completion quality over
    sampled intermediate search states. Returns ``(r, values, qualities)``.

    ``length`` may list several rule lengths, in which case the sample is
    split evenly between searches of each length.
    """
    rng = np.random.default_rng(rng)
    lengths = [length] if isinstance(length, int) else list(length)
    cache = GroundingCache(kg)
    samples = []
    for i, n in enumerate(lengths):
        count = sample_size // len(lengths) + (i < sample_size % len(lengths))
        samples += [(h, p, n) for h, p in sample_search_states(kg, n, count, rng, cache)]
    if len(set(samples)) < 2:
        raise UndefinedCorrelation("need at least two distinct states")
    quality_of: dict[tuple[int, tuple[int, ...], int], float] = {}
    for s in samples:
        if s not in quality_of:
            quality_of[s] = completion_quality(kg, s[0], s[1], s[2], min_conf, cache, rng)
    values = np.asarray(value_fn([State.prefix(h, p, n - 1) for h, p, n in samples]), dtype=float)
    quality = np.array([quality_of[s] for s in samples])
    if np.ptp(values) == 0 or np.ptp(quality) == 0:
        raise UndefinedCorrelation("values or qualities have zero variance")
    r = float(np.corrcoef(values, quality)[0, 1])
    if math.isnan(r):
        raise UndefinedCorrelation("correlation is not defined")
    return r, values, quality
