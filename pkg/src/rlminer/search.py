"""Best-first rule mining guided by a frozen state-value function.

Candidate body prefixes wait in a buffer until a batch is ready, are valued
together, and those at or above ``min_value`` enter a max-heap. The search
repeatedly pops the most valuable prefix, extends it by one atom, or, once
the body is complete, scores it and emits it if it passes the thresholds.
"""

from __future__ import annotations

import heapq
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .agent.mdp import State
from .embedding import EmbeddingModel, rho
from .kg import KnowledgeGraph
from .rules import GroundingCache, Rule, RuleStats, stats_from_groundings, format_rule, refine

log = logging.getLogger(__name__)

ValueFn = Callable[[Sequence[State]], np.ndarray]

MEASURES = ("cwa", "pca")


class SearchConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SearchConfig:
    head: int = 0
    length: int = 3          # rule length, head atom included
    batch_size: int = 128
    min_conf: float = 0.1
    min_hc: float = 0.01
    min_value: float = 0.0001
    lam: float = 0.9
    time_limit: float | None = None
    measure: str = "cwa"
    grounding_limit: int | None = None

    def __post_init__(self):
        if self.length < 2:
            raise SearchConfigError("rule length must be at least 2")
        if self.batch_size < 1:
            raise SearchConfigError("batch size must be at least 1")
        if not 0.0 <= self.lam <= 1.0:
            raise SearchConfigError("lambda must be in [0, 1]")
        if self.measure not in MEASURES:
            raise SearchConfigError(f"measure must be one of {MEASURES}")
        if self.time_limit is not None and self.time_limit <= 0:
            raise SearchConfigError("time limit must be positive")


def hybrid_score(stats: RuleStats, rho_value: float, lam: float, measure: str = "cwa") -> float:
    """``lam * psi + (1 - lam) * rho`` with psi the CWA or PCA confidence."""
    if not 0.0 <= lam <= 1.0:
        raise SearchConfigError("lambda must be in [0, 1]")
    if measure not in MEASURES:
        raise SearchConfigError(f"measure must be one of {MEASURES}")
    psi = stats.conf if measure == "cwa" else stats.pca_conf
    return lam * psi + (1.0 - lam) * rho_value


@dataclass(frozen=True)
class MinedRule:
    rule: Rule
    stats: RuleStats
    rho: float
    score: float
    text: str
    # seconds into the search; kept in memory only so rule files stay reproducible
    emitted_at: float = field(default=0.0, compare=False)

    def line(self) -> str:
        s = self.stats
        return f"{self.text}\t{s.supp}\t{s.conf:.6f}\t{s.hc:.6f}\t{self.rho:.6f}\t{self.score:.6f}"

    def record(self) -> dict:
        s = self.stats
        return {"head": self.rule.head, "body": list(self.rule.body), "supp": s.supp,
                "body_count": s.body_count, "conf": s.conf, "pca_conf": s.pca_conf, "hc": s.hc,
                "rho": self.rho, "score": self.score}


@dataclass
class MiningResult:
    rules: list[MinedRule]
    truncated: bool = False
    evaluations: int = 0   # states passed through the value function
    children: int = 0      # states produced by refinement (root included)
    explored: int = 0      # heap pops
    elapsed: float = 0.0

    def __iter__(self):
        return iter(self.rules)

    def __len__(self):
        return len(self.rules)


def _sort_key(m: MinedRule):
    return (-m.score, m.text)


def _passes(stats: RuleStats, cfg: SearchConfig) -> bool:
    psi = stats.conf if cfg.measure == "cwa" else stats.pca_conf
    return psi >= cfg.min_conf and stats.hc >= cfg.min_hc


def mine(kg: KnowledgeGraph, cfg: SearchConfig, value_fn: ValueFn, model: EmbeddingModel,
         cache: GroundingCache | None = None,
         on_explore: Callable[[tuple[int, ...], float], None] | None = None) -> MiningResult:
    """Mine rules with head ``cfg.head`` and exactly ``cfg.length - 1`` body atoms.

    ``value_fn`` maps a list of states to values and is never updated here.
    ``on_explore(prefix, value)`` is called at every heap pop.
    """
    if cfg.head % 2:
        raise SearchConfigError("head must be an original (non-inverse) predicate")
    started = time.perf_counter()
    deadline = None if cfg.time_limit is None else started + cfg.time_limit
    n_body = cfg.length - 1
    cache = cache or GroundingCache(kg, limit=cfg.grounding_limit)
    vocab = kg.predicate_vocabulary()

    heap: list[tuple[float, int, tuple[int, ...]]] = []
    buffer: list[tuple[int, ...]] = [()]
    counter = 0
    result = MiningResult([], children=1)
    emitted: list[MinedRule] = []

    def maintain():
        nonlocal counter, buffer
        for start in range(0, len(buffer), cfg.batch_size):
            chunk = buffer[start:start + cfg.batch_size]
            values = np.asarray(value_fn([State.prefix(cfg.head, p, n_body) for p in chunk]))
            result.evaluations += len(chunk)
            for p, v in zip(chunk, values.tolist()):
                if v >= cfg.min_value:
                    heapq.heappush(heap, (-v, counter, p))
                    counter += 1
        buffer = []

    while heap or buffer:
        if deadline is not None and time.perf_counter() > deadline:
            result.truncated = True
            break
        if not heap or len(buffer) >= cfg.batch_size:
            maintain()
        if not heap:
            continue
        neg_v, _, prefix = heapq.heappop(heap)
        result.explored += 1
        if on_explore is not None:
            on_explore(prefix, -neg_v)
        if len(prefix) < n_body:
            kids = refine(kg, prefix, vocab, cache)
            result.children += len(kids)
            buffer.extend(kids)
            continue
        rule = Rule(cfg.head, prefix)
        if rule.body == (cfg.head,):
            continue  # the tautology P(x,y) => P(x,y)
        g = cache.get(prefix)
        stats = stats_from_groundings(kg, cfg.head, g)
        if g.truncated:
            result.truncated = True
            continue
        if _passes(stats, cfg):
            r = rho(model, rule)
            emitted.append(MinedRule(rule, stats, r, hybrid_score(stats, r, cfg.lam, cfg.measure),
                                     format_rule(rule, kg), time.perf_counter() - started))

    result.rules = sorted(emitted, key=_sort_key)
    result.elapsed = time.perf_counter() - started
    return result


def mine_lengths(kg: KnowledgeGraph, cfg: SearchConfig, value_fn: ValueFn, model: EmbeddingModel,
                 lengths: Iterable[int] | None = None) -> MiningResult:
    """Run :func:`mine` for each rule length (default ``2..cfg.length``) under one
    shared time budget and merge the outputs, deduplicated by rule."""
    lengths = list(range(2, cfg.length + 1) if lengths is None else lengths)
    started = time.perf_counter()
    merged: dict[Rule, MinedRule] = {}
    total = MiningResult([])
    for length in lengths:
        remaining = None
        if cfg.time_limit is not None:
            remaining = cfg.time_limit - (time.perf_counter() - started)
            if remaining <= 0:
                total.truncated = True
                break
        res = mine(kg, replace(cfg, length=length, time_limit=remaining), value_fn, model)
        for m in res.rules:
            merged.setdefault(m.rule, m)
        total.truncated |= res.truncated
        total.evaluations += res.evaluations
        total.children += res.children
        total.explored += res.explored
    total.rules = sorted(merged.values(), key=_sort_key)
    total.elapsed = time.perf_counter() - started
    return total


def _safe_name(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name)


def write_rules(rules: Sequence[MinedRule], path: str | Path):
    with open(path, "w", encoding="utf-8") as fh:
        for m in rules:
            fh.write(m.line() + "\n")


def write_sidecar(rules: Sequence[MinedRule], path: str | Path):
    with open(path, "w", encoding="utf-8") as fh:
        for m in rules:
            fh.write(json.dumps(m.record(), sort_keys=True) + "\n")


def mine_all(kg: KnowledgeGraph, template: SearchConfig, value_fn: ValueFn, model: EmbeddingModel,
             heads: Iterable[int] | None = None, out_dir: str | Path | None = None,
             jobs: int = 1) -> dict[int, MiningResult | None]:
    """Mine every (or each given) original head predicate with lengths 2..L.

    ``template.time_limit`` is the per-predicate budget. A failing predicate
    is logged and maps to None; the others are unaffected. With ``out_dir``
    each head gets ``<name>.rules`` and ``<name>.jsonl`` plus a shared
    ``manifest.json``.
    """
    heads = list(kg.original_predicates() if heads is None else heads)

    def run(head):
        try:
            return mine_lengths(kg, replace(template, head=head), value_fn, model)
        except Exception:
            log.exception("mining failed for %s", kg.predicate_name(head))
            return None

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = dict(zip(heads, pool.map(run, heads)))
    else:
        results = {h: run(h) for h in heads}

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        manifest = {}
        for h, res in results.items():
            name = _safe_name(kg.predicate_name(h))
            write_rules(res.rules if res else [], out / f"{name}.rules")
            write_sidecar(res.rules if res else [], out / f"{name}.jsonl")
            manifest[name] = {"ok": res is not None, "rules": len(res) if res else 0,
                              "truncated": bool(res and res.truncated)}
        with open(out / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
    return results
