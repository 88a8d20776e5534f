"""Closed-path rules and their exact statistical measures.

A rule ``P1(x,z1) & ... & Pn(z_{n-1},y) => P0(x,y)`` is stored as a head
predicate id and a tuple of body predicate ids. Body groundings are
computed by forward chaining over per-predicate sparse adjacency
matrices: row ``x`` of the running product is the set of entities
reachable from ``x`` along the body prefix, so the non-zeros of the final
product are exactly the distinct ``(x, y)`` pairs satisfying the body.
"""

from __future__ import annotations

import re
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .kg import KnowledgeGraph


@dataclass(frozen=True, order=True)
class Rule:
    head: int
    body: tuple[int, ...]

    def __post_init__(self):
        if len(self.body) == 0:
            raise ValueError("rule body must contain at least one atom")
        object.__setattr__(self, "body", tuple(int(p) for p in self.body))

    def __len__(self):
        """Rule length counts the head atom."""
        return len(self.body) + 1


@dataclass(frozen=True)
class RuleStats:
    supp: int
    body_count: int
    head_count: int
    pca_body_count: int
    truncated: bool = False

    @property
    def conf(self) -> float:
        return self.supp / self.body_count if self.body_count else 0.0

    @property
    def hc(self) -> float:
        return self.supp / self.head_count if self.head_count else 0.0

    @property
    def pca_conf(self) -> float:
        return self.supp / self.pca_body_count if self.pca_body_count else 0.0


class Groundings:
    """Distinct ``(x, y)`` pairs for a body, backed by a sparse matrix."""

    def __init__(self, matrix: sp.csr_matrix, truncated: bool = False):
        self.matrix = matrix
        self.truncated = truncated

    def __len__(self):
        return self.matrix.nnz

    @property
    def pairs(self) -> frozenset[tuple[int, int]]:
        coo = self.matrix.tocoo()
        return frozenset(zip(coo.row.tolist(), coo.col.tolist()))

    def ends(self) -> np.ndarray:
        """Entities reachable at the end of the path from any start."""
        return np.unique(self.matrix.indices)


def _binarize(m: sp.csr_matrix) -> sp.csr_matrix:
    m.eliminate_zeros()
    m.data[:] = 1
    return m


def _chain(kg: KnowledgeGraph, start: sp.csr_matrix | None, body: Sequence[int],
           limit: int | None, block: int = 256) -> Groundings:
    """Join ``body`` onto ``start`` (the identity when None).

    With a ``limit``, start entities are processed in blocks and the join
    stops once the intermediate pairs of all finished blocks exceed it; the
    result then holds the exact groundings of the blocks that were finished,
    a subset of the full answer.
    """
    if start is None:
        start, body = kg.matrix(body[0]).copy(), body[1:]
        expansions = start.nnz
    else:
        expansions = 0
    if limit is None:
        m = start
        for p in body:
            m = _binarize(m @ kg.matrix(p))
        return Groundings(m)
    n = start.shape[0]
    done = []
    truncated = expansions > limit
    for lo in range(0, n, block):
        if truncated:
            break
        m = start[lo:lo + block]
        for p in body:
            m = _binarize(m @ kg.matrix(p))
            expansions += m.nnz
        done.append(m)
        truncated = expansions > limit and lo + block < n
    if not done:
        return Groundings(sp.csr_matrix(start.shape, dtype=start.dtype), truncated=True)
    m = sp.vstack(done, format="csr")
    if m.shape[0] < n:
        m = sp.vstack([m, sp.csr_matrix((n - m.shape[0], m.shape[1]), dtype=m.dtype)], format="csr")
    return Groundings(m, truncated)


def body_groundings(kg: KnowledgeGraph, body: Sequence[int], limit: int | None = None) -> Groundings:
    """Distinct entity pairs satisfying the chained body atoms.

    ``limit`` caps the cumulative number of intermediate reachable pairs; when
    exceeded the partial result is returned with ``truncated`` set.
    """
    if len(body) == 0:
        raise ValueError("body must contain at least one atom")
    return _chain(kg, None, body, limit)


class GroundingCache:
    """Bounded LRU of body-prefix groundings, so refinements extend a cached prefix."""

    def __init__(self, kg: KnowledgeGraph, maxsize: int = 4096, limit: int | None = None):
        self.kg = kg
        self.maxsize = maxsize
        self.limit = limit
        self._store: OrderedDict[tuple[int, ...], Groundings] = OrderedDict()

    def get(self, body: tuple[int, ...]) -> Groundings:
        g = self._store.get(body)
        if g is not None:
            self._store.move_to_end(body)
            return g
        if len(body) == 1:
            g = _chain(self.kg, None, body, self.limit)
        else:
            prefix = self.get(body[:-1])
            if prefix.truncated:
                g = Groundings(prefix.matrix, truncated=True)
            else:
                g = _chain(self.kg, prefix.matrix, body[-1:], self.limit)
        self._store[body] = g
        if len(self._store) > self.maxsize:
            self._store.popitem(last=False)
        return g


def stats_from_groundings(kg: KnowledgeGraph, head: int, g: Groundings) -> RuleStats:
    head_m = kg.matrix(head)
    body_m = g.matrix
    supp = int(body_m.multiply(head_m).nnz)
    has_head = np.zeros(kg.num_entities, dtype=bool)
    has_head[np.diff(head_m.indptr) > 0] = True
    row_counts = np.diff(body_m.indptr)
    pca_body = int(row_counts[has_head].sum())
    return RuleStats(supp=supp, body_count=body_m.nnz, head_count=head_m.nnz,
                     pca_body_count=pca_body, truncated=g.truncated)


def evaluate(kg: KnowledgeGraph, rule: Rule, limit: int | None = None,
             cache: GroundingCache | None = None) -> RuleStats:
    g = cache.get(rule.body) if cache is not None else body_groundings(kg, rule.body, limit)
    return stats_from_groundings(kg, rule.head, g)


def support(kg: KnowledgeGraph, rule: Rule) -> int:
    return evaluate(kg, rule).supp


def confidence(kg: KnowledgeGraph, rule: Rule) -> float:
    return evaluate(kg, rule).conf


def head_coverage(kg: KnowledgeGraph, rule: Rule) -> float:
    return evaluate(kg, rule).hc


def pca_confidence(kg: KnowledgeGraph, rule: Rule) -> float:
    return evaluate(kg, rule).pca_conf


def refine(kg: KnowledgeGraph, prefix: tuple[int, ...], vocabulary: Iterable[int] | None = None,
           cache: GroundingCache | None = None) -> list[tuple[int, ...]]:
    """Extend a body prefix by one atom, in vocabulary order.

    Children whose body has no grounding are dropped.
    """
    vocab = list(kg.predicate_vocabulary() if vocabulary is None else vocabulary)
    out = kg.has_outgoing()
    if len(prefix) == 0:
        return [(p,) for p in vocab if out[p].any()]
    g = cache.get(tuple(prefix)) if cache is not None else body_groundings(kg, prefix)
    ends = g.ends()
    if len(ends) == 0:
        return []
    alive = out[:, ends].any(axis=1)
    return [tuple(prefix) + (p,) for p in vocab if alive[p]]


# -- text format -------------------------------------------------------------

def _variables(n: int) -> list[str]:
    if n == 1:
        return ["x", "y"]
    return ["x"] + [f"z{i}" for i in range(1, n)] + ["y"]


def format_rule(rule: Rule, kg: KnowledgeGraph) -> str:
    vs = _variables(len(rule.body))
    atoms = [f"{kg.predicate_name(p)}({vs[i]},{vs[i + 1]})" for i, p in enumerate(rule.body)]
    return " & ".join(atoms) + f" => {kg.predicate_name(rule.head)}(x,y)"


_ATOM = re.compile(r"^\s*(.+?)\((\w+),(\w+)\)\s*$")


def parse_rule(text: str, kg: KnowledgeGraph) -> Rule:
    """Inverse of :func:`format_rule` (ignores anything after the first tab)."""
    text = text.split("\t", 1)[0]
    try:
        body_text, head_text = text.split("=>")
    except ValueError:
        raise ValueError(f"not a rule: {text!r}") from None
    head_m = _ATOM.match(head_text)
    if head_m is None or head_m.group(2, 3) != ("x", "y"):
        raise ValueError(f"bad head atom in {text!r}")
    atoms = [_ATOM.match(a) for a in body_text.split("&")]
    if any(a is None for a in atoms):
        raise ValueError(f"bad body atom in {text!r}")
    vs = _variables(len(atoms))
    for i, a in enumerate(atoms):
        if a.group(2, 3) != (vs[i], vs[i + 1]):
            raise ValueError(f"body of {text!r} is not a closed path")
    return Rule(kg.predicate_id(head_m.group(1)), tuple(kg.predicate_id(a.group(1)) for a in atoms))
