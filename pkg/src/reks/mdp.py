"""Path-reasoning MDP over the knowledge graph.

A state is the session vector plus the walk so far. The policy scores
each legal (relation, entity) action by ``(x_r + x_e) . (W1 s_t)`` where
``s_t = tanh(A [S_e ; x_e_t + x_r_t] + b)``, then takes a softmax over
the legal actions only.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .encoder import sigmoid


class DeadEnd(Exception):
    """No legal action left from the current entity."""


class IllegalAction(ValueError):
    pass


@dataclass(frozen=True)
class State:
    session_vec: np.ndarray = field(repr=False, compare=False)
    entity: int
    relation: int | None
    visited: frozenset
    step: int
    path: tuple  # e0, r1, e1, r2, e2, ...


@dataclass
class PolicyParams:
    A: np.ndarray   # d2 x (d1 + d0)
    b: np.ndarray   # d2
    W1: np.ndarray  # d0 x d2

    @classmethod
    def init(cls, d0: int, d1: int, d2: int, seed: int = 0) -> "PolicyParams":
        rng = np.random.default_rng(seed)
        a = 1.0 / np.sqrt(d0 + d1)
        w = 1.0 / np.sqrt(d2)
        return cls(rng.uniform(-a, a, (d2, d1 + d0)), np.zeros(d2), rng.uniform(-w, w, (d0, d2)))

    @classmethod
    def zeros(cls, d0: int, d1: int, d2: int) -> "PolicyParams":
        return cls(np.zeros((d2, d1 + d0)), np.zeros(d2), np.zeros((d0, d2)))

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"A": self.A, "b": self.b, "W1": self.W1}


@dataclass(frozen=True)
class RewardBreakdown:
    r_item: float
    r_rank: float
    r_path: float
    total: float

    def to_dict(self):
        return {"item": self.r_item, "rank": self.r_rank, "path": self.r_path, "total": self.total}


ZERO_REWARD = RewardBreakdown(0.0, 0.0, 0.0, 0.0)

# reward parts switched on for each ablation variant
REWARD_VARIANTS = {
    "full": ("item", "rank", "path"),
    "-path": ("item", "rank"),
    "-rank": ("item", "path"),
    "R1": ("item",),
}


def initial_state(session_vec, start: int, g, require_product: bool = True) -> State:
    if not 0 <= start < g.num_entities:
        raise KeyError(f"start entity {start} not in graph")
    if require_product and not g.is_product(start):
        raise ValueError(f"start entity {g.label(start)} is not a product")
    return State(np.asarray(session_vec), start, None, frozenset((start,)), 0, (start,))


def path_repr(state: State, table) -> np.ndarray:
    """x_e_t + x_r_t, with a zero relation term at t = 0."""
    x = table.entity(state.entity)
    if state.relation is None:
        return x.copy()
    return x + table.relation(state.relation)


def state_vector(state: State, params: PolicyParams, table) -> np.ndarray:
    inp = np.concatenate([state.session_vec, path_repr(state, table)])
    return np.tanh(params.A @ inp + params.b)


def log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max()
    return z - m - np.log(np.exp(z - m).sum())


def action_features(actions_rel, actions_ent, table) -> np.ndarray:
    return table.relation(actions_rel) + table.entity(actions_ent)


def action_logits(s_t, actions_rel, actions_ent, params: PolicyParams, table) -> np.ndarray:
    return action_features(actions_rel, actions_ent, table) @ (params.W1 @ s_t)


def action_distribution(s_t, actions, params: PolicyParams, table) -> np.ndarray:
    """Masked softmax over ``actions``, a list of (relation, entity) pairs."""
    if len(actions) == 0:
        raise DeadEnd("empty action set")
    rel, ent = (np.asarray(a, dtype=np.int64) for a in zip(*actions))
    return np.exp(log_softmax(action_logits(s_t, rel, ent, params, table)))


def step(state: State, action, g) -> State:
    r, e = int(action[0]), int(action[1])
    rels, tails = g.legal_actions(state.entity, state.visited)
    if not np.any((rels == r) & (tails == e)):
        raise IllegalAction(f"({r}, {e}) is not a legal action from {state.entity}")
    return replace(state, entity=e, relation=r, visited=state.visited | {e},
                   step=state.step + 1, path=state.path + (r, e))


def path_vector(path, table) -> np.ndarray:
    """Mean of every entity and relation row along the path."""
    ents = np.asarray(path[0::2], dtype=np.int64)
    rels = np.asarray(path[1::2], dtype=np.int64)
    rows = [table.entity(ents)]
    if rels.size:
        rows.append(table.relation(rels))
    return np.concatenate(rows).mean(axis=0)


def reward(terminal: int, path, session_vec, target: int, rank, table, g,
           parts=REWARD_VARIANTS["full"]) -> RewardBreakdown:
    """Terminal reward: item match + 2**(rank score) + path/session affinity.

    ``rank`` is the 0-based position of ``terminal`` among the candidate
    products, or None when the terminal is not a product. Disabled
    ``parts`` contribute nothing to the total.
    """
    P = path_vector(path, table)
    session_vec = np.asarray(session_vec)
    if P.shape != session_vec.shape:
        raise ValueError(f"path vector dim {P.shape} != session vector dim {session_vec.shape}; "
                         "path reward needs d1 == d0")
    is_product = g.is_product(terminal)
    if terminal == target:
        r_item = 1.0
    elif is_product:
        r_item = float(sigmoid(table.entity(terminal) @ table.entity(target)))
    else:
        r_item = 0.0
    if is_product:
        if rank is None:
            raise ValueError("product terminal needs a rank")
        r_rank = 1.0 / np.log2(rank + 2.0)
    else:
        r_rank = 0.0
    r_path = float(sigmoid(P @ session_vec))
    total = 0.0
    if "item" in parts:
        total += r_item
    if "rank" in parts:
        total += 2.0 ** r_rank
    if "path" in parts:
        total += r_path
    return RewardBreakdown(r_item, float(r_rank), r_path, float(total))
