"""Translation embeddings for predicates and the rule score derived from them.

The TransE model is trained with a logistic margin loss on L1 distances,
corrupting either end of each fact uniformly. Inverse predicates are never
trained: their vector is the negation of the original's, so a path that
walks an edge backwards composes correctly under vector addition.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import BinaryIO

import numpy as np
import scipy.sparse as sp
from scipy.special import expit, log_expit

from .kg import KnowledgeGraph, is_inverse
from .rules import Rule

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"RLMEMB"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EmbedTrainConfig:
    dim: int = 100
    negatives: int = 16
    learning_rate: float = 0.01
    epochs: int = 200
    batch_size: int = 256
    eta: float = 12.0
    seed: int = 0
    min_degree: int = 0

    def validate(self):
        for name in ("dim", "negatives", "epochs", "batch_size"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.learning_rate <= 0 or self.eta <= 0:
            raise ConfigError("learning_rate and eta must be positive")
        if self.min_degree < 0:
            raise ConfigError("min_degree must be non-negative")

    @classmethod
    def paper(cls, **overrides) -> "EmbedTrainConfig":
        """Full-scale settings: 1000 dimensions, 256 negatives, margin 24."""
        return cls(**{"dim": 1000, "negatives": 256, "eta": 24.0, **overrides})


@dataclass
class EmbeddingModel:
    entity_vecs: np.ndarray
    predicate_vecs: np.ndarray
    eta: float
    kind: str = "transe"
    entities: tuple[str, ...] = field(default=(), repr=False)
    predicates: tuple[str, ...] = field(default=(), repr=False)

    def __post_init__(self):
        if self.eta <= 0:
            raise ConfigError("eta must be positive")
        if self.kind not in ("transe", "bilinear"):
            raise ConfigError(f"unknown model kind {self.kind!r}")

    @property
    def dim(self) -> int:
        return self.predicate_vecs.shape[1]

    @property
    def num_predicates(self) -> int:
        return 2 * self.predicate_vecs.shape[0]

    def predicate_vector(self, p: int) -> np.ndarray:
        if not 0 <= p < self.num_predicates:
            raise KeyError(f"no vector for predicate id {p}")
        v = self.predicate_vecs[p >> 1].astype(np.float64)
        # a diagonal bilinear relation is symmetric, so its inverse is itself
        if is_inverse(p) and self.kind == "transe":
            return -v
        return v

    def predicate_matrix(self) -> np.ndarray:
        """All |Γ| predicate vectors, inverses included, as float64 rows."""
        return np.stack([self.predicate_vector(p) for p in range(self.num_predicates)])

    def distance(self, rule: Rule) -> float:
        """L1 distance between the head vector and the summed body vectors.

        Body vectors are added in sorted id order, so the result is exactly
        the same for every ordering of the body."""
        body = sum(self.predicate_vector(p) for p in sorted(rule.body))
        return float(np.abs(self.predicate_vector(rule.head) - body).sum())


def rho(model: EmbeddingModel, rule: Rule) -> float:
    """Embedding score ``sigmoid(eta - ||P0 - sum(Pi)||_1)`` in (0, 1)."""
    if model.kind != "transe":
        raise ConfigError("rho needs a translation model; use rho_bilinear")
    return float(expit(model.eta - model.distance(rule)))


def rho_batch(model: EmbeddingModel, heads: np.ndarray, bodies: np.ndarray) -> np.ndarray:
    """Vectorised :func:`rho` for equal-length bodies (``bodies`` is ``(N, n)``)."""
    table = model.predicate_matrix()
    bodies = np.sort(np.asarray(bodies), axis=1)
    diff = table[np.asarray(heads)] - sum(table[bodies[:, j]] for j in range(bodies.shape[1]))
    return expit(model.eta - np.abs(diff).sum(axis=1))


def rho_bilinear(model: EmbeddingModel, rule: Rule) -> float:
    """Cosine similarity between the product of body vectors and the head vector,
    mapped from [-1, 1] onto [0, 1]."""
    if model.kind != "bilinear":
        raise ConfigError("rho_bilinear needs a model trained with train_bilinear")
    comp = np.ones(model.dim)
    for p in rule.body:
        comp = comp * model.predicate_vector(p)
    head = model.predicate_vector(rule.head)
    denom = np.linalg.norm(comp) * np.linalg.norm(head)
    cos = float(comp @ head / denom) if denom > 0 else 0.0
    return 0.5 * (1.0 + cos)


# -- training ----------------------------------------------------------------

class _Adam:
    def __init__(self, shapes, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _fact_array(kg: KnowledgeGraph) -> np.ndarray:
    facts = np.array(sorted(kg.facts), dtype=np.int64).reshape(-1, 3)
    facts[:, 1] >>= 1
    return facts


def _scatter_rows(n_rows: int, index: np.ndarray, values: np.ndarray) -> np.ndarray:
    """``out[index[i]] += values[i]``, via a sparse product (much faster than ``np.add.at``)."""
    m = sp.csr_matrix((np.ones(len(index)), (index, np.arange(len(index)))),
                      shape=(n_rows, len(index)))
    return np.asarray(m @ values)


def _corrupt(facts: np.ndarray, n_entities: int, k: int, rng: np.random.Generator):
    """Negative heads/tails: each positive gets ``k`` corruptions of one end."""
    n = len(facts)
    s = np.repeat(facts[:, 0:1], k, axis=1)
    o = np.repeat(facts[:, 2:3], k, axis=1)
    which = rng.random((n, k)) < 0.5
    repl = rng.integers(0, n_entities, size=(n, k))
    s = np.where(which, repl, s)
    o = np.where(which, o, repl)
    return s, o


def _init(rng, n_e, n_p, dim, eta):
    bound = (eta + 2.0) / dim
    ent = rng.uniform(-bound, bound, size=(n_e, dim))
    rel = rng.uniform(-bound, bound, size=(n_p, dim))
    return ent, rel


def train_transe(kg: KnowledgeGraph, cfg: EmbedTrainConfig = EmbedTrainConfig(),
                 callback=None) -> EmbeddingModel:
    """Fit TransE with loss ``-log s(eta - d+) - mean_k log s(d-_k - eta)``.

    Single-threaded numpy; identical seed and config give identical models.
    ``callback(epoch, mean_loss)`` is called after every epoch if given.
    """
    cfg.validate()
    if cfg.min_degree:
        kg = kg.filter_min_degree(cfg.min_degree)
    if len(kg) == 0:
        raise ConfigError("cannot train embeddings on an empty graph")
    rng = np.random.default_rng(cfg.seed)
    ent, rel = _init(rng, kg.num_entities, len(kg.predicates), cfg.dim, cfg.eta)
    opt = _Adam([ent.shape, rel.shape], cfg.learning_rate)
    facts = _fact_array(kg)
    k = cfg.negatives

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(facts))
        total = 0.0
        for start in range(0, len(facts), cfg.batch_size):
            batch = facts[order[start:start + cfg.batch_size]]
            s, p, o = batch[:, 0], batch[:, 1], batch[:, 2]
            ns, no = _corrupt(batch, kg.num_entities, k, rng)

            pos_diff = ent[s] + rel[p] - ent[o]                      # (b, d)
            neg_diff = ent[ns] + rel[p][:, None, :] - ent[no]        # (b, k, d)
            d_pos = np.abs(pos_diff).sum(-1)
            d_neg = np.abs(neg_diff).sum(-1)
            loss = -log_expit(cfg.eta - d_pos) - log_expit(d_neg - cfg.eta).mean(-1)
            total += float(loss.sum())

            b = len(batch)
            g_pos = (1.0 - expit(cfg.eta - d_pos)) / b               # dL/d(d+)
            g_neg = -(1.0 - expit(d_neg - cfg.eta)) / (k * b)        # dL/d(d-)
            gp = g_pos[:, None] * np.sign(pos_diff)
            gn = g_neg[..., None] * np.sign(neg_diff)

            gn = gn.reshape(-1, cfg.dim)
            g_ent = _scatter_rows(len(ent), np.concatenate([s, o, ns.ravel(), no.ravel()]),
                                  np.concatenate([gp, -gp, gn, -gn]))
            g_rel = _scatter_rows(len(rel), p, gp + gn.reshape(b, k, -1).sum(1))
            opt.step([ent, rel], [g_ent, g_rel])
        if callback is not None:
            callback(epoch, total / len(facts))
    log.debug("transe: final epoch loss %.4f", total / len(facts))
    return EmbeddingModel(ent, rel, cfg.eta, "transe", kg.entities, kg.predicates)


def train_bilinear(kg: KnowledgeGraph, cfg: EmbedTrainConfig = EmbedTrainConfig()) -> EmbeddingModel:
    """Diagonal bilinear (DistMult) model, for use with :func:`rho_bilinear`."""
    cfg.validate()
    if len(kg) == 0:
        raise ConfigError("cannot train embeddings on an empty graph")
    rng = np.random.default_rng(cfg.seed)
    ent = rng.normal(0, 0.1, size=(kg.num_entities, cfg.dim))
    rel = rng.normal(0, 0.1, size=(len(kg.predicates), cfg.dim))
    opt = _Adam([ent.shape, rel.shape], cfg.learning_rate)
    facts = _fact_array(kg)
    k = cfg.negatives
    for _ in range(cfg.epochs):
        order = rng.permutation(len(facts))
        for start in range(0, len(facts), cfg.batch_size):
            batch = facts[order[start:start + cfg.batch_size]]
            s, p, o = batch[:, 0], batch[:, 1], batch[:, 2]
            ns, no = _corrupt(batch, kg.num_entities, k, rng)
            r = rel[p]
            pos = (ent[s] * r * ent[o]).sum(-1)
            neg = (ent[ns] * r[:, None, :] * ent[no]).sum(-1)
            b = len(batch)
            g_pos = -(1.0 - expit(pos)) / b
            g_neg = (1.0 - expit(-neg)) / (k * b)
            gp = g_pos[:, None]
            gn = g_neg[..., None]
            g_ent = _scatter_rows(len(ent), np.concatenate([s, o, ns.ravel(), no.ravel()]), np.concatenate([
                gp * r * ent[o], gp * r * ent[s],
                (gn * r[:, None, :] * ent[no]).reshape(-1, cfg.dim),
                (gn * r[:, None, :] * ent[ns]).reshape(-1, cfg.dim)]))
            g_rel = _scatter_rows(len(rel), p, gp * ent[s] * ent[o] + (gn * ent[ns] * ent[no]).sum(1))
            opt.step([ent, rel], [g_ent, g_rel])
    return EmbeddingModel(ent, rel, cfg.eta, "bilinear", kg.entities, kg.predicates)


# -- checkpoints -------------------------------------------------------------

def save_model(model: EmbeddingModel, path: str | Path | BinaryIO):
    """Binary checkpoint: magic, version, JSON header, then float32 LE matrices."""
    if not hasattr(path, "write"):
        with open(path, "wb") as fh:
            return save_model(model, fh)
    header = json.dumps({
        "kind": model.kind, "dim": model.dim, "eta": model.eta,
        "n_entities": int(model.entity_vecs.shape[0]),
        "n_predicates": int(model.predicate_vecs.shape[0]),
        "entities": list(model.entities), "predicates": list(model.predicates),
    }, sort_keys=True).encode("utf-8")
    path.write(CHECKPOINT_MAGIC + struct.pack("<HI", CHECKPOINT_VERSION, len(header)))
    path.write(header)
    path.write(np.ascontiguousarray(model.entity_vecs, dtype="<f4").tobytes())
    path.write(np.ascontiguousarray(model.predicate_vecs, dtype="<f4").tobytes())


def load_model(path: str | Path | BinaryIO) -> EmbeddingModel:
    if not hasattr(path, "read"):
        with open(path, "rb") as fh:
            return load_model(fh)
    magic = path.read(len(CHECKPOINT_MAGIC))
    if magic != CHECKPOINT_MAGIC:
        raise ValueError("not an embedding checkpoint")
    version, n = struct.unpack("<HI", path.read(6))
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    h = json.loads(path.read(n).decode("utf-8"))
    d = h["dim"]
    ent = np.frombuffer(path.read(4 * h["n_entities"] * d), dtype="<f4").reshape(-1, d)
    rel = np.frombuffer(path.read(4 * h["n_predicates"] * d), dtype="<f4").reshape(-1, d)
    return EmbeddingModel(ent.astype(np.float64), rel.astype(np.float64), h["eta"], h["kind"],
                          tuple(h["entities"]), tuple(h["predicates"]))


def config_dict(cfg: EmbedTrainConfig) -> dict:
    return asdict(cfg)
