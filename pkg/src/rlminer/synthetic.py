"""Synthetic graphs with planted closed-path rules, for tests and demos."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .kg import INVERSE_SUFFIX, KnowledgeGraph
from .rules import Rule, body_groundings


@dataclass(frozen=True)
class PlantedRule:
    head: str
    body: tuple[str, ...]


@dataclass(frozen=True)
class PlantedSpec:
    """Base predicates get random facts, then about ``noise * |facts|``
    uniformly random facts are added over all predicates. Each planted head
    is finally derived from its body groundings, keeping each derived fact
    with probability ``1 - dropout``.

    With ``layout="lattice"`` entities sit on a small integer lattice and each
    base predicate links an entity to the one at a fixed offset, so relations
    compose the way translation embeddings assume. ``"uniform"`` draws
    subject and object independently, which gives embeddings nothing to learn.
    """

    base_predicates: tuple[str, ...]
    rules: tuple[PlantedRule, ...]
    n_entities: int = 200
    facts_per_predicate: int = 200
    dropout: float = 0.0
    noise: float = 0.0
    layout: str = "lattice"
    lattice_dim: int = 3

    def __post_init__(self):
        heads = [r.head for r in self.rules]
        used = {p.removesuffix(INVERSE_SUFFIX) for r in self.rules for p in r.body}
        if len(set(heads)) != len(heads):
            raise ValueError("planted heads must be distinct")
        if set(heads) & used:
            raise ValueError("planted heads must not appear in planted bodies")
        if set(heads) & set(self.base_predicates):
            raise ValueError("planted heads must not be base predicates")
        if not used <= set(self.base_predicates):
            raise ValueError("planted bodies may only use base predicates")
        if not (0 <= self.dropout < 1 and self.noise >= 0):
            raise ValueError("dropout must be in [0, 1) and noise non-negative")
        if self.layout not in ("lattice", "uniform"):
            raise ValueError("layout must be 'lattice' or 'uniform'")
        if self.layout == "lattice" and len(self.base_predicates) > (3 ** self.lattice_dim - 1) // 2:
            raise ValueError("too many base predicates for the lattice dimension")


def generate_planted_kg(spec: PlantedSpec, seed: int = 0) -> tuple[KnowledgeGraph, list[Rule]]:
    """Return the generated graph and the planted rules in its id space."""
    rng = np.random.default_rng(seed)
    names = list(spec.base_predicates) + [r.head for r in spec.rules]
    entities = [f"e{i}" for i in range(spec.n_entities)]
    pid = {n: 2 * i for i, n in enumerate(names)}

    def pred(name: str) -> int:
        if name.endswith(INVERSE_SUFFIX):
            return pid[name.removesuffix(INVERSE_SUFFIX)] + 1
        return pid[name]

    facts: set[tuple[int, int, int]] = set()
    if spec.layout == "lattice":
        facts.update(_lattice_facts(spec, [pid[n] for n in spec.base_predicates], rng))
    else:
        for name in spec.base_predicates:
            s = rng.integers(0, spec.n_entities, size=spec.facts_per_predicate)
            o = rng.integers(0, spec.n_entities, size=spec.facts_per_predicate)
            facts.update((int(a), pid[name], int(b)) for a, b in zip(s, o))

    # noise goes in before closure so planted bodies stay closed; noisy head
    # facts only lower head coverage
    n_noise = int(round(spec.noise * (len(facts) + _expected_head_facts(spec))))
    if n_noise:
        s = rng.integers(0, spec.n_entities, size=n_noise)
        p = rng.integers(0, len(names), size=n_noise) * 2
        o = rng.integers(0, spec.n_entities, size=n_noise)
        facts.update(zip(s.tolist(), p.tolist(), o.tolist()))

    base = KnowledgeGraph(entities, names, facts)
    planted = []
    for r in spec.rules:
        rule = Rule(pid[r.head], tuple(pred(p) for p in r.body))
        planted.append(rule)
        pairs = sorted(body_groundings(base, rule.body).pairs)
        keep = rng.random(len(pairs)) >= spec.dropout
        facts.update((x, rule.head, y) for (x, y), k in zip(pairs, keep) if k)
    return KnowledgeGraph(entities, names, facts), planted


def _lattice_facts(spec: PlantedSpec, preds: list[int], rng: np.random.Generator):
    k = spec.lattice_dim
    side = int(np.ceil(spec.n_entities ** (1.0 / k) - 1e-9))
    coords = np.array(np.unravel_index(np.arange(spec.n_entities), (side,) * k)).T
    index = {tuple(c): i for i, c in enumerate(coords.tolist())}
    # nonzero offsets in {-1, 0, 1}^k, one per +/- pair, so no predicate is
    # another's inverse
    offsets = [o for o in np.ndindex(*(3,) * k) if o > (1,) * k]
    chosen = rng.choice(len(offsets), size=len(preds), replace=False)
    for p, j in zip(preds, chosen.tolist()):
        step = np.array(offsets[j]) - 1
        pairs = [(i, index[t]) for i, t in enumerate(map(tuple, (coords + step).tolist())) if t in index]
        keep = min(1.0, spec.facts_per_predicate / max(len(pairs), 1))
        for (a, b), u in zip(pairs, rng.random(len(pairs))):
            if u < keep:
                yield a, p, b


def _expected_head_facts(spec: PlantedSpec) -> int:
    # rough size of the derived part, so the noise rate is relative to the whole graph
    return int(len(spec.rules) * spec.facts_per_predicate * (1 - spec.dropout))


def planted_benchmark(dropout: float = 0.1, noise: float = 0.1, n_entities: int = 200,
                      facts_per_predicate: int = 200) -> PlantedSpec:
    """Five planted rules, body lengths 2 and 3, over six base predicates."""
    base = ("b0", "b1", "b2", "b3", "b4", "b5")
    rules = (
        PlantedRule("h0", ("b0", "b1")),
        PlantedRule("h1", ("b2", "b3^-1")),
        PlantedRule("h2", ("b4", "b5")),
        PlantedRule("h3", ("b1", "b2", "b0")),
        PlantedRule("h4", ("b3", "b5^-1", "b4")),
    )
    return PlantedSpec(base, rules, n_entities, facts_per_predicate, dropout, noise)


TOY_SPEC = PlantedSpec(
    base_predicates=("bornIn", "locatedIn", "marriedTo"),
    rules=(
        PlantedRule("nationality", ("bornIn", "locatedIn")),
        PlantedRule("spouseCountry", ("marriedTo", "bornIn", "locatedIn")),
    ),
    n_entities=60,
    facts_per_predicate=45,
    dropout=0.1,
    noise=0.05,
    layout="uniform",
)


def toy_kg(seed: int = 7) -> tuple[KnowledgeGraph, list[Rule]]:
    """The small named graph bundled as ``data/toy.tsv``."""
    return generate_planted_kg(TOY_SPEC, seed)


def random_kg(n_entities: int, n_predicates: int, n_facts: int,
              rng: np.random.Generator | int = 0) -> KnowledgeGraph:
    rng = np.random.default_rng(rng)
    facts = zip(rng.integers(0, n_entities, n_facts).tolist(),
                (2 * rng.integers(0, n_predicates, n_facts)).tolist(),
                rng.integers(0, n_entities, n_facts).tolist())
    return KnowledgeGraph([f"e{i}" for i in range(n_entities)],
                          [f"p{i}" for i in range(n_predicates)], facts)


def sample_rules(vocabulary: Sequence[int], heads: Sequence[int], length: int, count: int,
                 rng: np.random.Generator) -> list[Rule]:
    """Uniformly random rules with body length ``length``."""
    hs = rng.choice(np.asarray(heads), size=count)
    bs = rng.choice(np.asarray(vocabulary), size=(count, length))
    return [Rule(int(h), tuple(int(p) for p in b)) for h, b in zip(hs, bs)]
