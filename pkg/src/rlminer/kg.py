"""In-memory knowledge graph with inverse-predicate augmentation.

Predicate ids are dense integers where ``2*i`` is the i-th original
predicate and ``2*i + 1`` its inverse. Entity ids are dense from 0. All
indices are built once at construction; a :class:`KnowledgeGraph` is never
mutated afterwards, so it can be shared freely between workers.
"""

from __future__ import annotations

import io
from collections import Counter, defaultdict
from pathlib import Path
from typing import Iterable, Iterator, TextIO

import numpy as np
import scipy.sparse as sp

INVERSE_SUFFIX = "^-1"


class TripleParseError(ValueError):
    """A malformed line in a triple file."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def inverse(p: int) -> int:
    """Id of the inverse predicate (an involution without fixed points)."""
    return p ^ 1


def is_inverse(p: int) -> bool:
    return bool(p & 1)


def original(p: int) -> int:
    return p & ~1


def _is_literal(token: str) -> bool:
    return token.startswith('"')


class KnowledgeGraph:
    """Immutable indexed fact store.

    ``facts`` holds only original-direction triples ``(s, p, o)`` with even
    ``p``; inverse facts exist only in the lookup indices.
    """

    def __init__(self, entities: Iterable[str], predicates: Iterable[str],
                 facts: Iterable[tuple[int, int, int]]):
        self.entities: tuple[str, ...] = tuple(entities)
        self.predicates: tuple[str, ...] = tuple(predicates)
        self.entity_index = {e: i for i, e in enumerate(self.entities)}
        self.predicate_index = {p: i for i, p in enumerate(self.predicates)}
        if len(self.entity_index) != len(self.entities):
            raise ValueError("duplicate entity names")
        if len(self.predicate_index) != len(self.predicates):
            raise ValueError("duplicate predicate names")

        n_e, n_p = len(self.entities), 2 * len(self.predicates)
        fact_set = set()
        for s, p, o in facts:
            if is_inverse(p):
                s, p, o = o, inverse(p), s
            if not (0 <= s < n_e and 0 <= o < n_e and 0 <= p < n_p):
                raise KeyError(f"fact {(s, p, o)} references unknown ids")
            fact_set.add((s, p, o))
        self.facts: frozenset[tuple[int, int, int]] = frozenset(fact_set)

        by_sp: dict[tuple[int, int], set[int]] = defaultdict(set)
        by_p: dict[int, set[tuple[int, int]]] = defaultdict(set)
        for s, p, o in self.facts:
            by_sp[s, p].add(o)
            by_sp[o, p + 1].add(s)
            by_p[p].add((s, o))
            by_p[p + 1].add((o, s))
        self._by_sp = {k: frozenset(v) for k, v in by_sp.items()}
        self._by_p = {k: frozenset(v) for k, v in by_p.items()}
        self._matrices: dict[int, sp.csr_matrix] = {}
        self._has_out: np.ndarray | None = None

    # -- construction --------------------------------------------------------

    @classmethod
    def from_triples(cls, triples: Iterable[tuple[str, str, str]]) -> "KnowledgeGraph":
        """Build from surface-string triples, assigning ids in first-seen order."""
        entities: dict[str, int] = {}
        predicates: dict[str, int] = {}
        ids = []
        for s, p, o in triples:
            si = entities.setdefault(s, len(entities))
            oi = entities.setdefault(o, len(entities))
            pi = predicates.setdefault(p, len(predicates))
            ids.append((si, 2 * pi, oi))
        return cls(entities, predicates, ids)

    def with_facts(self, facts: Iterable[tuple[int, int, int]]) -> "KnowledgeGraph":
        """A new graph over ``facts`` that keeps this graph's symbol tables."""
        return KnowledgeGraph(self.entities, self.predicates, facts)

    # -- sizes ---------------------------------------------------------------

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_predicates(self) -> int:
        """Size of the vocabulary including inverses."""
        return 2 * len(self.predicates)

    def __len__(self) -> int:
        return len(self.facts)

    def __contains__(self, fact) -> bool:
        s, p, o = fact
        return o in self._by_sp.get((s, p), ())

    def __iter__(self) -> Iterator[tuple[int, int, int]]:
        return iter(sorted(self.facts))

    def count(self, p: int) -> int:
        """Number of facts for predicate ``p`` (inverse counts match the original)."""
        return len(self._by_p.get(p, ()))

    # -- lookups -------------------------------------------------------------

    def _check_entity(self, e: int):
        if not 0 <= e < self.num_entities:
            raise KeyError(f"unknown entity id {e}")

    def _check_predicate(self, p: int):
        if not 0 <= p < self.num_predicates:
            raise KeyError(f"unknown predicate id {p}")

    def objects_of(self, s: int, p: int) -> frozenset[int]:
        self._check_entity(s)
        self._check_predicate(p)
        return self._by_sp.get((s, p), frozenset())

    def pairs(self, p: int) -> frozenset[tuple[int, int]]:
        """All ``(s, o)`` with ``p(s, o)``, inverse predicates by argument swap."""
        self._check_predicate(p)
        return self._by_p.get(p, frozenset())

    def subjects(self, p: int) -> frozenset[int]:
        return frozenset(s for s, _ in self.pairs(p))

    def predicate_vocabulary(self) -> list[int]:
        return list(range(self.num_predicates))

    def original_predicates(self) -> list[int]:
        return list(range(0, self.num_predicates, 2))

    def matrix(self, p: int) -> sp.csr_matrix:
        """Boolean adjacency of ``p`` as an ``|E| x |E|`` CSR matrix (cached)."""
        m = self._matrices.get(p)
        if m is None:
            self._check_predicate(p)
            n = self.num_entities
            pairs = sorted(self.pairs(p))
            if pairs:
                rows, cols = np.array(pairs, dtype=np.int64).T
            else:
                rows = cols = np.zeros(0, dtype=np.int64)
            m = sp.csr_matrix((np.ones(len(pairs), dtype=np.int64), (rows, cols)), shape=(n, n))
            self._matrices[p] = m
        return m

    def has_outgoing(self) -> np.ndarray:
        """``(|Γ|, |E|)`` boolean array: entity has at least one edge of the predicate."""
        if self._has_out is None:
            rows = np.zeros((self.num_predicates, self.num_entities), dtype=bool)
            for p in range(self.num_predicates):
                rows[p, np.diff(self.matrix(p).indptr) > 0] = True
            self._has_out = rows
        return self._has_out

    # -- names ---------------------------------------------------------------

    def predicate_name(self, p: int) -> str:
        self._check_predicate(p)
        name = self.predicates[p >> 1]
        return name + INVERSE_SUFFIX if is_inverse(p) else name

    def predicate_id(self, name: str) -> int:
        if name.endswith(INVERSE_SUFFIX):
            return 2 * self.predicate_index[name[: -len(INVERSE_SUFFIX)]] + 1
        return 2 * self.predicate_index[name]

    def entity_id(self, name: str) -> int:
        return self.entity_index[name]

    # -- derived graphs ------------------------------------------------------

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.num_entities, dtype=np.int64)
        for s, _, o in self.facts:
            deg[s] += 1
            deg[o] += 1
        return deg

    def filter_min_degree(self, min_degree: int) -> "KnowledgeGraph":
        """Drop facts touching entities with fewer than ``min_degree`` facts.

        Symbol tables are kept so ids stay aligned with the unfiltered graph.
        """
        deg = self.degrees()
        keep = [f for f in self.facts if deg[f[0]] >= min_degree and deg[f[2]] >= min_degree]
        return self.with_facts(keep)

    def triples(self) -> Iterator[tuple[str, str, str]]:
        for s, p, o in sorted(self.facts):
            yield self.entities[s], self.predicates[p >> 1], self.entities[o]

    def __repr__(self):
        return (f"KnowledgeGraph(facts={len(self)}, entities={self.num_entities}, "
                f"predicates={len(self.predicates)})")


def parse_triples(source: TextIO | Iterable[str], allow_literals: bool = False,
                  ) -> Iterator[tuple[str, str, str]]:
    for lineno, line in enumerate(source, start=1):
        line = line.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise TripleParseError(lineno, f"expected 3 tab-separated fields, got {len(fields)}")
        if any(not f for f in fields):
            raise TripleParseError(lineno, "empty field")
        if _is_literal(fields[2]) and not allow_literals:
            raise TripleParseError(lineno, f"literal object {fields[2]!r}")
        yield fields[0], fields[1], fields[2]


def load_triples(source: TextIO | str | Path, allow_literals: bool = False) -> KnowledgeGraph:
    """Load a tab-separated triple file (or open text stream) into a graph.

    Duplicate lines are collapsed. Lines starting with ``#`` are comments.
    """
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            return KnowledgeGraph.from_triples(parse_triples(fh, allow_literals))
    return KnowledgeGraph.from_triples(parse_triples(source, allow_literals))


def load_triples_like(kg: KnowledgeGraph, source: TextIO | str | Path) -> KnowledgeGraph:
    """Load triples into the id space of ``kg``; unknown symbols raise ``KeyError``."""
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            return load_triples_like(kg, fh)
    ids = [(kg.entity_id(s), kg.predicate_id(p), kg.entity_id(o)) for s, p, o in parse_triples(source)]
    return kg.with_facts(ids)


def dump_triples(kg: KnowledgeGraph, sink: TextIO | str | Path | None = None) -> str | None:
    """Write facts in the input format, sorted by id. Returns text if ``sink`` is None."""
    if sink is None:
        buf = io.StringIO()
        dump_triples(kg, buf)
        return buf.getvalue()
    if isinstance(sink, (str, Path)):
        with open(sink, "w", encoding="utf-8") as fh:
            dump_triples(kg, fh)
        return None
    for s, p, o in kg.triples():
        sink.write(f"{s}\t{p}\t{o}\n")
    return None


def dump_symbols(kg: KnowledgeGraph) -> dict:
    return {"entities": list(kg.entities), "predicates": list(kg.predicates)}


def predicate_counts(kg: KnowledgeGraph) -> Counter:
    return Counter({p: kg.count(p) for p in kg.original_predicates()})
