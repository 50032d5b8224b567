"""Translational embeddings used to initialise entities and relations."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import io

log = logging.getLogger(__name__)


@dataclass
class TransEConfig:
    dim: int = 400
    margin: float = 1.0
    lr: float = 0.01
    epochs: int = 100
    negatives: int = 1
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.dim <= 0:
            raise ValueError("dim must be positive")


@dataclass
class EmbeddingTable:
    """Entity rows first, then one row per relation."""

    matrix: np.ndarray
    num_entities: int
    num_relations: int
    seed: int = 0
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.matrix.shape[0] != self.num_entities + self.num_relations:
            raise ValueError("row count must equal entities + relations")

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def entities(self) -> np.ndarray:
        return self.matrix[:self.num_entities]

    @property
    def relations(self) -> np.ndarray:
        return self.matrix[self.num_entities:]

    def rel_row(self, r):
        return self.num_entities + np.asarray(r)

    def entity(self, e):
        return self.matrix[e]

    def relation(self, r):
        return self.matrix[self.num_entities + np.asarray(r)]

    def save(self, path, **header):
        io.write_matrix(path, self.matrix, seed=self.seed, entities=self.num_entities,
                        relations=self.num_relations, **header)

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        header, m = io.read_matrix(path)
        return cls(m, header["entities"], header["relations"], header.get("seed", 0))


def _normalize_rows(m: np.ndarray) -> None:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    m /= np.where(norms > 0, norms, 1.0)


def init_embeddings(num_entities: int, num_relations: int, dim: int, seed: int = 0) -> EmbeddingTable:
    if dim <= 0:
        raise ValueError("dim must be positive")
    if num_entities <= 0 or num_relations <= 0:
        raise ValueError("need at least one entity and one relation")
    rng = np.random.default_rng(seed)
    bound = 6.0 / np.sqrt(dim)
    m = rng.uniform(-bound, bound, size=(num_entities + num_relations, dim))
    _normalize_rows(m[:num_entities])
    return EmbeddingTable(m, num_entities, num_relations, seed)


def transe_score(h: int, r: int, t: int, table: EmbeddingTable) -> float:
    E, R = table.num_entities, table.num_relations
    if not (0 <= h < E and 0 <= t < E and 0 <= r < R):
        raise IndexError(f"invalid triple ({h}, {r}, {t})")
    x = table.matrix
    return float(np.linalg.norm(x[h] + x[E + r] - x[t]))


def _scores(x, E, h, r, t):
    diff = x[h] + x[E + r] - x[t]
    return diff, np.linalg.norm(diff, axis=1)


def margin_loss(x: np.ndarray, num_entities: int, pos: np.ndarray, neg: np.ndarray,
                margin: float) -> float:
    """Sum over pairs of max(0, margin + d(pos) - d(neg)); triples as (n, 3) arrays."""
    _, dp = _scores(x, num_entities, *pos.T)
    _, dn = _scores(x, num_entities, *neg.T)
    return float(np.maximum(0.0, margin + dp - dn).sum())


def margin_loss_grad(x: np.ndarray, num_entities: int, pos: np.ndarray, neg: np.ndarray,
                     margin: float) -> tuple[float, np.ndarray]:
    E = num_entities
    vp, dp = _scores(x, E, *pos.T)
    vn, dn = _scores(x, E, *neg.T)
    hinge = margin + dp - dn
    active = hinge > 0
    grad = np.zeros_like(x)
    if active.any():
        gp = vp[active] / np.maximum(dp[active], 1e-12)[:, None]
        gn = vn[active] / np.maximum(dn[active], 1e-12)[:, None]
        ph, pr, pt = pos[active].T
        nh, nr, nt = neg[active].T
        np.add.at(grad, ph, gp)
        np.add.at(grad, E + pr, gp)
        np.add.at(grad, pt, -gp)
        np.add.at(grad, nh, -gn)
        np.add.at(grad, E + nr, -gn)
        np.add.at(grad, nt, gn)
    return float(np.maximum(hinge, 0.0).sum()), grad


def _keys(triples: np.ndarray, num_entities: int) -> np.ndarray:
    h, r, t = triples.T
    return (r * num_entities + h) * num_entities + t


def corrupt(triples: np.ndarray, num_entities: int, known, rng, tries: int = 10) -> np.ndarray:
    """Replace head or tail uniformly; resample when the result is a true triple.

    ``known`` is the set of true triples or a sorted array of their keys.
    """
    if not isinstance(known, np.ndarray):
        known = np.sort(_keys(np.array(sorted(known), dtype=np.int64).reshape(-1, 3), num_entities))
    neg = triples.copy()
    col = np.where(rng.random(len(neg)) < 0.5, 0, 2)
    todo = np.arange(len(neg))
    for _ in range(tries):
        neg[todo, col[todo]] = rng.integers(num_entities, size=len(todo))
        hit = np.isin(_keys(neg[todo], num_entities), known, assume_unique=False)
        todo = todo[hit]
        if len(todo) == 0:
            break
    return neg


def train_transe(g, config: TransEConfig, table: EmbeddingTable | None = None) -> EmbeddingTable:
    """Plain minibatch SGD on the margin loss; entity rows renormalised per epoch."""
    triples = np.array(sorted(g.triples), dtype=np.int64)
    if len(triples) == 0:
        raise ValueError("cannot train embeddings on an empty graph")
    E, R = g.num_entities, g.num_relations
    if table is None:
        table = init_embeddings(E, R, config.dim, config.seed)
    rng = np.random.default_rng(config.seed + 1)
    x = table.matrix
    known = np.sort(_keys(triples, E))
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(triples))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            pos = triples[order[start:start + config.batch_size]]
            pos = np.repeat(pos, config.negatives, axis=0)
            neg = corrupt(pos, E, known, rng)
            loss, grad = margin_loss_grad(x, E, pos, neg, config.margin)
            x -= config.lr * grad
            total += loss
        _normalize_rows(x[:E])
        history.append(total / (len(triples) * config.negatives))
        log.debug("transe epoch %d loss %.4f", epoch, history[-1])
    table.history = history
    return table


def ranking_accuracy(g, table: EmbeddingTable, seed: int = 0) -> float:
    """Share of triples scoring below one random corruption."""
    triples = np.array(sorted(g.triples), dtype=np.int64)
    neg = corrupt(triples, g.num_entities, np.sort(_keys(triples, g.num_entities)),
                  np.random.default_rng(seed))
    _, dp = _scores(table.matrix, g.num_entities, *triples.T)
    _, dn = _scores(table.matrix, g.num_entities, *neg.T)
    return float(np.mean(dp < dn))
