"""Policy model and the per-session path tree used by rollouts and beam search."""
from __future__ import annotations

import numpy as np

from . import io
from .encoder import SessionEncoder, make_encoder
from .kg import KnowledgeGraph
from .mdp import PolicyParams
from .transe import EmbeddingTable


class SkipSession(Exception):
    """The session cannot start a walk (cold start item or dead end)."""


class ReksModel:
    """Frozen embeddings + trainable session encoder + policy head.

    ``start`` selects the walk origin: the session's last item ("item") or
    the session's user entity ("user").
    """

    def __init__(self, g: KnowledgeGraph, table: EmbeddingTable, encoder: SessionEncoder,
                 policy: PolicyParams, start: str = "item"):
        if start not in ("item", "user"):
            raise ValueError(f"start must be 'item' or 'user', got {start!r}")
        if encoder.in_dim != table.dim:
            raise ValueError("encoder input width must match the embedding width")
        if policy.A.shape[1] != encoder.out_dim + table.dim or policy.W1.shape[0] != table.dim:
            raise ValueError("policy shapes do not match encoder/embedding widths")
        self.g = g
        self.table = table
        self.encoder = encoder
        self.policy = policy
        self.start = start

    @classmethod
    def create(cls, g, table, encoder_kind="gru", d1=None, d2=None, dropout=0.0, seed=0,
               start="item") -> "ReksModel":
        d0 = table.dim
        d1 = d0 if d1 is None else d1
        d2 = d0 if d2 is None else d2
        enc = make_encoder(encoder_kind, d0, d1, dropout=dropout, seed=seed)
        return cls(g, table, enc, PolicyParams.init(d0, d1, d2, seed=seed + 1), start)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.table.dim, self.encoder.out_dim, self.policy.A.shape[0]

    def parameters(self) -> dict[str, np.ndarray]:
        """Trainable arrays by qualified name; updates happen in place."""
        out = {f"policy.{k}": v for k, v in self.policy.as_dict().items()}
        out.update({f"encoder.{k}": v for k, v in self.encoder.params.items()})
        return out

    # -- session helpers --------------------------------------------------
    def item_entities(self, items) -> list[int]:
        """Product entity indices for the items the graph knows about."""
        g = self.g
        return [g.product(it) for it in items if g.has_entity("product", it)]

    def start_entity(self, session) -> int:
        g = self.g
        if self.start == "user":
            if not g.has_entity("user", session.user_id):
                raise SkipSession(f"user {session.user_id} not in graph")
            return g.entity("user", session.user_id)
        if not g.has_entity("product", session.last_item):
            raise SkipSession(f"item {session.last_item} not in graph")
        return g.product(session.last_item)

    def target_entity(self, session) -> int | None:
        if self.g.has_entity("product", session.target):
            return self.g.product(session.target)
        return None

    # -- checkpoint ---------------------------------------------------------
    def save(self, path, **header):
        arrays = {f"policy.{k}": v for k, v in self.policy.as_dict().items()}
        arrays.update({f"encoder.{k}": v for k, v in self.encoder.params.items()})
        head = {"encoder": self.encoder.header(), "start": self.start, **header}
        io.write_blob(path, head, arrays)

    @classmethod
    def load(cls, path, g, table) -> "ReksModel":
        header, arrays = io.read_blob(path)
        e = header["encoder"]
        enc = make_encoder(e["kind"], e["in_dim"], e["out_dim"], dropout=e["dropout"])
        for k in list(enc.params):
            enc.params[k] = arrays[f"encoder.{k}"]
        pol = PolicyParams(arrays["policy.A"], arrays["policy.b"], arrays["policy.W1"])
        model = cls(g, table, enc, pol, header.get("start", "item"))
        model.checkpoint_header = header
        return model


class Node:
    """Policy evaluation at one path prefix."""

    __slots__ = ("prefix", "entity", "relation", "rel", "ent", "row", "start", "stop",
                 "logp", "level")

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.logp)

    @property
    def dead_end(self) -> bool:
        return self.ent.size == 0


class _Level:
    """Stacked policy inputs/outputs for nodes evaluated together."""

    __slots__ = ("inp", "s", "feats", "seg", "sizes", "logp", "dlogits", "nodes")


class PathTree:
    """Lazily evaluated tree of walks from one session's start entity.

    Nodes are keyed by the path prefix (e0, r1, e1, ...) and evaluated in
    batches (``expand``). Gradients of a scalar objective are pushed in as
    d(objective)/d(logits) with ``accumulate`` and then propagated into the
    policy and encoder with ``backward``.
    """

    def __init__(self, model: ReksModel, session, rng=None, mask=None, train: bool = False):
        self.model = model
        self.session = session
        self.start = model.start_entity(session)
        items = model.item_entities(session.items)
        if not items:
            raise SkipSession("no session item is in the graph")
        self.items = np.asarray(items, dtype=np.int64)
        enc = model.encoder
        if mask is None and train:
            mask = enc.dropout_mask(len(items), rng)
        self.mask = mask
        self.session_vec = enc.forward(model.table.matrix[self.items], mask)
        self._enc_cache = enc.last_cache
        self.nodes: dict[tuple, Node] = {}
        self.levels: list[_Level] = []

    def node(self, prefix: tuple) -> Node:
        n = self.nodes.get(prefix)
        if n is None:
            n = self.expand([prefix])[0]
        return n

    def expand(self, prefixes) -> list[Node]:
        """Evaluate the policy at every prefix not yet in the tree."""
        todo = [p for p in dict.fromkeys(prefixes) if p not in self.nodes]
        if todo:
            self._compute(todo)
        return [self.nodes[p] for p in prefixes]

    def _compute(self, prefixes):
        m = self.model
        g, table, pol = m.g, m.table, m.policy
        X, E = table.matrix, table.num_entities
        k = len(prefixes)
        ents = np.fromiter((p[-1] for p in prefixes), dtype=np.int64, count=k)
        sp = X[ents].copy()
        rels = np.fromiter((p[-2] if len(p) > 1 else -1 for p in prefixes), dtype=np.int64, count=k)
        has = rels >= 0
        sp[has] += X[E + rels[has]]
        lv = _Level()
        lv.inp = np.hstack([np.broadcast_to(self.session_vec, (k, self.session_vec.size)), sp])
        lv.s = np.tanh(lv.inp @ pol.A.T + pol.b)
        u = lv.s @ pol.W1.T
        depth = max(len(p) for p in prefixes) // 2 + 1
        visited = np.full((k, depth), -1, dtype=np.int64)
        for i, p in enumerate(prefixes):
            visited[i, :len(p) // 2 + 1] = p[0::2]
        all_r, all_e, sizes = g.gather_actions(ents, visited)
        seg = np.repeat(np.arange(k), sizes)
        lv.feats = X[E + all_r] + X[all_e]
        lv.seg = seg
        lv.sizes = sizes
        lv.dlogits = None
        logits = np.einsum("ij,ij->i", lv.feats, u[seg])
        logp = segment_log_softmax(logits, sizes)
        lv.logp = logp
        bounds = np.concatenate([[0], np.cumsum(sizes)])
        level = len(self.levels)
        lv.nodes = []
        for i, p in enumerate(prefixes):
            n = Node()
            n.prefix = p
            n.entity = p[-1]
            n.relation = p[-2] if len(p) > 1 else None
            n.row = i
            n.start, n.stop = int(bounds[i]), int(bounds[i + 1])
            n.rel, n.ent = all_r[n.start:n.stop], all_e[n.start:n.stop]
            n.logp = logp[n.start:n.stop]
            n.level = level
            self.nodes[p] = n
            lv.nodes.append(n)
        self.levels.append(lv)

    def path_logprobs(self, path: tuple) -> list[float]:
        """Per-hop log-probabilities of ``path`` under the current policy."""
        out = []
        for i in range(1, len(path), 2):
            n = self.node(path[:i])
            out.append(float(n.logp[self.action_index(n, path[i], path[i + 1])]))
        return out

    def path_steps(self, path: tuple) -> list[tuple[Node, int]]:
        steps = []
        for i in range(1, len(path), 2):
            n = self.node(path[:i])
            steps.append((n, self.action_index(n, path[i], path[i + 1])))
        return steps

    @staticmethod
    def action_index(n: Node, r: int, e: int) -> int:
        hit = np.flatnonzero((n.rel == r) & (n.ent == e))
        if hit.size == 0:
            raise ValueError(f"({r}, {e}) is not a legal action at {n.prefix}")
        return int(hit[0])

    def accumulate(self, steps, coeff: float):
        """Add coeff * d(sum of step log-probs)/d(logits) for the given (node, action) steps."""
        if coeff == 0.0:
            return
        for n, a in steps:
            lv = self.levels[n.level]
            if lv.dlogits is None:
                lv.dlogits = np.zeros(lv.seg.size)
            sl = lv.dlogits[n.start:n.stop]
            sl -= coeff * np.exp(n.logp)
            sl[a] += coeff

    def accumulate_many(self, step_lists, coeffs):
        """Vectorized ``accumulate`` over many walks with one coefficient each."""
        per_level: dict[int, tuple[list, list, list]] = {}
        for steps, c in zip(step_lists, coeffs):
            if c == 0.0:
                continue
            for n, a in steps:
                rows, idx, cs = per_level.setdefault(n.level, ([], [], []))
                rows.append(n.row)
                idx.append(n.start + a)
                cs.append(c)
        for level, (rows, idx, cs) in per_level.items():
            lv = self.levels[level]
            cs = np.asarray(cs, dtype=float)
            cnode = np.bincount(rows, cs, minlength=lv.sizes.size)
            d = np.bincount(idx, cs, minlength=lv.seg.size) - cnode[lv.seg] * np.exp(lv.logp)
            lv.dlogits = d if lv.dlogits is None else lv.dlogits + d

    def backward(self, grads: dict[str, np.ndarray]):
        """Propagate accumulated logit gradients into ``grads`` (added in place)."""
        m = self.model
        pol = m.policy
        d1 = m.encoder.out_dim
        d_session = np.zeros(d1)
        touched = False
        for lv in self.levels:
            if lv.dlogits is None:
                continue
            touched = True
            du = np.zeros((lv.s.shape[0], lv.feats.shape[1]))
            nz = lv.sizes > 0
            if nz.any():
                starts = (np.cumsum(lv.sizes) - lv.sizes)[nz]
                du[nz] = np.add.reduceat(lv.feats * lv.dlogits[:, None], starts, axis=0)
            grads["policy.W1"] += du.T @ lv.s
            dpre = (du @ pol.W1) * (1.0 - lv.s * lv.s)
            grads["policy.A"] += dpre.T @ lv.inp
            grads["policy.b"] += dpre.sum(axis=0)
            d_session += (dpre @ pol.A[:, :d1]).sum(axis=0)
            lv.dlogits = None
        if touched and m.encoder.params:
            enc_grads, _ = m.encoder.backward(d_session, self._enc_cache)
            for k, v in enc_grads.items():
                grads[f"encoder.{k}"] += v
        return d_session


def segment_log_softmax(logits: np.ndarray, sizes: np.ndarray) -> np.ndarray:
    """Log-softmax within consecutive segments of the given sizes (empty allowed)."""
    out = np.empty_like(logits)
    nz = sizes > 0
    if not nz.any():
        return out
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])[nz]
    seg = np.repeat(np.arange(sizes.size), sizes)
    mx = np.full(sizes.size, -np.inf)
    mx[nz] = np.maximum.reduceat(logits, starts)
    shifted = logits - mx[seg]
    lse = np.zeros(sizes.size)
    lse[nz] = np.log(np.add.reduceat(np.exp(shifted), starts))
    out[:] = shifted - lse[seg]
    return out


def zero_grads(model: ReksModel) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in model.parameters().items()}
