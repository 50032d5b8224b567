"""Typed knowledge graph over users, products and item attributes."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass

import numpy as np

ENTITY_KINDS = ("user", "product", "brand", "category", "related_product")
RELATIONS = ("purchase", "produced_by", "belong_to", "also_bought",
             "also_viewed", "bought_together", "co_occur")
REL = {name: i for i, name in enumerate(RELATIONS)}
CO_OCCUR = REL["co_occur"]


class GraphError(KeyError):
    pass


@dataclass(frozen=True)
class EntityId:
    index: int
    kind: str


class KnowledgeGraph:
    """Directed labeled triples with per-head adjacency arrays.

    Entity indices are dense and unique across kinds; each head's
    out-edges are kept sorted by (relation, tail).
    """

    def __init__(self):
        self.kinds: list[str] = []
        self.names: list[str] = []
        self._lookup: dict[tuple[str, str], int] = {}
        self.triples: set[tuple[int, int, int]] = set()
        self._adj = None

    # -- construction --------------------------------------------------
    def add_entity(self, kind: str, name: str) -> int:
        if kind not in ENTITY_KINDS:
            raise ValueError(f"unknown entity kind {kind!r}")
        key = (kind, name)
        idx = self._lookup.get(key)
        if idx is None:
            idx = len(self.kinds)
            self._lookup[key] = idx
            self.kinds.append(kind)
            self.names.append(name)
        return idx

    def add_edge(self, h: int, rel: int | str, t: int, both: bool = False):
        r = REL[rel] if isinstance(rel, str) else int(rel)
        self.triples.add((h, r, t))
        if both:
            self.triples.add((t, r, h))
        self._adj = None

    def finalize(self) -> "KnowledgeGraph":
        """Index triples as CSR arrays sorted by (head, relation, tail)."""
        n = self.num_entities
        if self.triples:
            arr = np.array(sorted(self.triples), dtype=np.int64)
        else:
            arr = np.zeros((0, 3), dtype=np.int64)
        offsets = np.zeros(n + 1, dtype=np.int64)
        np.add.at(offsets, arr[:, 0] + 1, 1)
        self.offsets = np.cumsum(offsets)
        self.csr_rel = arr[:, 1].copy()
        self.csr_tail = arr[:, 2].copy()
        self.product_mask = np.array([k == "product" for k in self.kinds], dtype=bool)
        self._adj = True
        return self

    # -- queries ------------------------------------------------------------
    @property
    def num_entities(self) -> int:
        return len(self.kinds)

    @property
    def num_relations(self) -> int:
        return len(RELATIONS)

    def entity(self, kind: str, name: str) -> int:
        try:
            return self._lookup[(kind, name)]
        except KeyError:
            raise GraphError(f"no entity {kind}:{name}") from None

    def has_entity(self, kind: str, name: str) -> bool:
        return (kind, name) in self._lookup

    def product(self, name: str) -> int:
        return self.entity("product", name)

    def is_product(self, e: int) -> bool:
        return self.kinds[e] == "product"

    def products_mask(self) -> np.ndarray:
        if self._adj is None:
            self.finalize()
        return self.product_mask

    def label(self, e: int) -> str:
        return f"{self.kinds[e]}:{self.names[e]}"

    def out_edges(self, e: int) -> tuple[np.ndarray, np.ndarray]:
        if not 0 <= e < self.num_entities:
            raise GraphError(f"unknown entity index {e}")
        if self._adj is None:
            self.finalize()
        lo, hi = self.offsets[e], self.offsets[e + 1]
        return self.csr_rel[lo:hi], self.csr_tail[lo:hi]

    def gather_actions(self, heads: np.ndarray, visited: np.ndarray):
        """Legal actions for many heads at once.

        ``visited`` is a (len(heads), L) array padded with -1. Returns
        (relations, tails, per-head counts), concatenated in head order.
        """
        if self._adj is None:
            self.finalize()
        lo, hi = self.offsets[heads], self.offsets[heads + 1]
        sizes = hi - lo
        total = int(sizes.sum())
        seg = np.repeat(np.arange(len(heads)), sizes)
        idx = np.arange(total) - np.repeat(np.cumsum(sizes) - sizes, sizes) + np.repeat(lo, sizes)
        rels, tails = self.csr_rel[idx], self.csr_tail[idx]
        keep = (tails[:, None] != visited[seg]).all(axis=1)
        counts = np.bincount(seg[keep], minlength=len(heads))
        return rels[keep], tails[keep], counts

    def legal_actions(self, e: int, visited) -> tuple[np.ndarray, np.ndarray]:
        """Array form of neighbors(): (relations, tails) excluding visited tails."""
        rels, tails = self.out_edges(e)
        if visited:
            keep = ~np.isin(tails, np.fromiter(visited, dtype=np.int64))
            return rels[keep], tails[keep]
        return rels, tails

    def __contains__(self, triple) -> bool:
        return tuple(triple) in self.triples

    def __len__(self) -> int:
        return len(self.triples)

    # -- serialization --------------------------------------------------
    def to_tsv(self, path, header: dict | None = None):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            if header:
                fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
            for h, r, t in sorted(self.triples):
                fh.write(f"{self.label(h)}\t{RELATIONS[r]}\t{self.label(t)}\n")

    def entities_to_tsv(self, path, header: dict | None = None):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            if header:
                fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
            for i, (k, n) in enumerate(zip(self.kinds, self.names)):
                fh.write(f"{i}\t{k}\t{n}\n")

    @classmethod
    def from_tsv(cls, path, entities_path=None) -> "KnowledgeGraph":
        g = cls()
        if entities_path is not None:
            with open(entities_path, encoding="utf-8") as fh:
                for line in fh:
                    if line.startswith("#"):
                        continue
                    idx, kind, name = line.rstrip("\n").split("\t", 2)
                    if g.add_entity(kind, name) != int(idx):
                        raise ValueError(f"{entities_path}: non-dense entity index {idx}")
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if line.startswith("#") or not line.strip():
                    continue
                try:
                    head, rel, tail = line.rstrip("\n").split("\t")
                    hk, hn = head.split(":", 1)
                    tk, tn = tail.split(":", 1)
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: malformed triple") from None
                g.add_edge(g.add_entity(hk, hn), REL[rel], g.add_entity(tk, tn))
        return g.finalize()


def build_graph(train_sessions, metadata=(), user_info: bool = True, vocabulary=None) -> KnowledgeGraph:
    """Build the KG from training sessions and item metadata.

    Metadata relations and purchases get edges in both directions;
    ``co_occur`` links consecutive session items (target included) one way.
    ``vocabulary`` lists every retained item; it defaults to the items seen
    in ``train_sessions``.
    """
    g = KnowledgeGraph()
    if vocabulary is None:
        vocabulary = dict.fromkeys(it for s in train_sessions for it in (*s.items, s.target))
    vocab = set(vocabulary)
    for item in vocabulary:
        g.add_entity("product", item)

    def ref(name):
        if name in vocab:
            return g.entity("product", name)
        return g.add_entity("related_product", name)

    for m in metadata:
        if m.item_id not in vocab:
            continue
        p = g.entity("product", m.item_id)
        if m.brand is not None:
            g.add_edge(p, "produced_by", g.add_entity("brand", m.brand), both=True)
        for c in m.categories:
            g.add_edge(p, "belong_to", g.add_entity("category", c), both=True)
        for rel in ("also_bought", "also_viewed", "bought_together"):
            for other in getattr(m, rel):
                if other == m.item_id:
                    continue
                g.add_edge(p, rel, ref(other), both=True)

    for s in train_sessions:
        seq = (*s.items, s.target)
        for it in seq:
            if it not in vocab:
                raise GraphError(f"session item {it!r} not in vocabulary")
        if user_info:
            u = g.add_entity("user", s.user_id)
            for it in seq:
                g.add_edge(u, "purchase", g.entity("product", it), both=True)
        for a, b in zip(seq, seq[1:]):
            if a != b:
                g.add_edge(g.entity("product", a), CO_OCCUR, g.entity("product", b))
    return g.finalize()


def neighbors(g: KnowledgeGraph, entity: int, visited=frozenset()) -> list[tuple[int, int]]:
    rels, tails = g.legal_actions(entity, visited)
    return list(zip(rels.tolist(), tails.tolist()))


def graph_stats(g: KnowledgeGraph) -> dict:
    rel_counts = Counter(RELATIONS[r] for _, r, _ in g.triples)
    kind_counts = Counter(g.kinds)
    return {
        "relations": {name: rel_counts.get(name, 0) for name in RELATIONS},
        "entities": {k: kind_counts.get(k, 0) for k in ENTITY_KINDS},
        "triples": len(g.triples),
    }
