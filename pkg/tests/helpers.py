"""Shared fixtures-by-function for the test suite: toy graphs and oracles."""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from reks import mdp, synth
from reks.config import load_config
from reks.ingest import ItemMetadata, Session, load_dataset
from reks.kg import KnowledgeGraph, build_graph
from reks.model import ReksModel
from reks.transe import init_embeddings, train_transe


def toy_sessions():
    return [
        Session("u1", ("p1", "p2"), "p3", "u1@a"),
        Session("u2", ("p2", "p3"), "p4", "u2@a"),
        Session("u1", ("p4",), "p1", "u1@b"),
    ]


def toy_meta():
    return [
        ItemMetadata("p1", brand="b1", categories=("c1",), bought_together=("p2",)),
        ItemMetadata("p2", brand="b1", categories=("c1",), also_viewed=("rpX",)),
        ItemMetadata("p3", brand="b2", categories=("c1", "c2")),
        ItemMetadata("p4", brand="b2", categories=("c2",), also_bought=("p1",)),
    ]


def toy_graph(user_info=True) -> KnowledgeGraph:
    return build_graph(toy_sessions(), toy_meta(), user_info=user_info)


def random_kg(rng, max_entities=50, n_products=None, density=0.12) -> KnowledgeGraph:
    """Random typed graph with bidirectional metadata edges and directed co_occur."""
    g = KnowledgeGraph()
    n = int(rng.integers(8, max_entities + 1))
    n_prod = n_products or max(3, n // 2)
    n_prod = min(n_prod, n - 2)
    prods = [g.add_entity("product", f"p{i}") for i in range(n_prod)]
    others = []
    for i in range(n - n_prod):
        kind = ("brand", "category", "user", "related_product")[i % 4]
        others.append((kind, g.add_entity(kind, f"{kind[0]}{i}")))
    rel_for = {"brand": "produced_by", "category": "belong_to", "user": "purchase",
               "related_product": "also_viewed"}
    for p in prods:
        for kind, o in others:
            if rng.random() < density * 2:
                g.add_edge(p, rel_for[kind], o, both=True)
        for q in prods:
            if p != q and rng.random() < density:
                g.add_edge(p, "co_occur", q)
            if p < q and rng.random() < density / 2:
                g.add_edge(p, "bought_together", q, both=True)
    return g.finalize()


def random_model(g, dim=4, seed=0, encoder="gru", start="item", dropout=0.0, d2=None) -> ReksModel:
    table = init_embeddings(g.num_entities, g.num_relations, dim, seed)
    return ReksModel.create(g, table, encoder, d2=d2, dropout=dropout, seed=seed, start=start)


def product_names(g):
    return [g.names[i] for i in range(g.num_entities) if g.is_product(i)]


def random_session(rng, g, length=None, user="u0"):
    names = product_names(g)
    k = int(length or rng.integers(1, 4))
    items = tuple(names[int(i)] for i in rng.integers(len(names), size=k))
    target = names[int(rng.integers(len(names)))]
    return Session(user, items, target, f"{user}@{int(rng.integers(1 << 30))}")


def fd_check(f, param: np.ndarray, grad: np.ndarray, h=1e-6, max_entries=None, rng=None):
    """Largest |analytic - numeric| / max(1, |numeric|) over entries of ``param``."""
    idx = list(np.ndindex(param.shape))
    if max_entries is not None and len(idx) > max_entries:
        rng = rng or np.random.default_rng(0)
        pick = rng.choice(len(idx), size=max_entries, replace=False)
        idx = [idx[i] for i in pick]
    worst = 0.0
    for i in idx:
        old = param[i]
        param[i] = old + h
        a = f()
        param[i] = old - h
        b = f()
        param[i] = old
        num = (a - b) / (2 * h)
        worst = max(worst, abs(grad[i] - num) / max(1.0, abs(num)))
    return worst


# -- independent scalar oracles ---------------------------------------------------

def scalar_policy_probs(model, session_vec, path, g):
    """Step-by-step distribution via the reference MDP functions (no batching)."""
    table, pol = model.table, model.policy
    state = mdp.initial_state(session_vec, path[0], g, require_product=False)
    for i in range(1, len(path), 2):
        state = mdp.step(state, (path[i], path[i + 1]), g)
    acts = g.legal_actions(state.entity, state.visited)
    actions = list(zip(acts[0].tolist(), acts[1].tolist()))
    if not actions:
        return [], np.zeros(0)
    s_t = mdp.state_vector(state, pol, table)
    return actions, mdp.action_distribution(s_t, actions, pol, table)


def scalar_root_logits(model, sess, g):
    """First-hop logits recomputed through the reference MDP functions."""
    S = model.encoder.forward(model.table.matrix[model.item_entities(sess.items)])
    state = mdp.initial_state(S, model.start_entity(sess), g)
    rels, tails = g.legal_actions(state.entity, state.visited)
    s_t = mdp.state_vector(state, model.policy, model.table)
    return mdp.action_logits(s_t, rels, tails, model.policy, model.table)


def enumerate_paths(model, session_vec, start, g, hops=2):
    """Every full-length walk from ``start`` with its probability (exhaustive)."""
    out = {}

    def rec(path, prob, depth):
        if depth == hops:
            out[path] = prob
            return
        actions, probs = scalar_policy_probs(model, session_vec, path, g)
        for (r, e), p in zip(actions, probs):
            rec(path + (r, e), prob * float(p), depth + 1)

    rec((start,), 1.0, 0)
    return out


def naive_sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def oracle_reward(terminal, path, session_vec, target, rank, X, num_entities, is_product):
    """Reward recomputed with plain Python loops over embedding rows."""
    d = X.shape[1]
    rows = [X[path[i]] if i % 2 == 0 else X[num_entities + path[i]] for i in range(len(path))]
    P = [sum(r[j] for r in rows) / len(rows) for j in range(d)]
    if terminal == target:
        r_item = 1.0
    elif is_product:
        r_item = naive_sigmoid(sum(X[terminal][j] * X[target][j] for j in range(d)))
    else:
        r_item = 0.0
    r_rank = 1.0 / math.log2(rank + 2) if is_product else 0.0
    r_path = naive_sigmoid(sum(P[j] * session_vec[j] for j in range(d)))
    return r_item, r_rank, r_path, r_item + 2.0 ** r_rank + r_path


def synthetic_setup(workdir, seed=0, **overrides):
    """Synthetic benchmark data, graph and TransE table built like the CLI does."""
    workdir = Path(workdir)
    synth.write_dataset(workdir, seed=seed)
    (workdir / "reks.conf").write_text(synth.preset_config(seed), encoding="utf-8")
    cfg = load_config(workdir / "reks.conf", overrides, env={})
    split, meta = load_dataset(cfg.interactions, cfg.metadata, min_item_count=cfg.min_item_count,
                               min_session_len=cfg.min_session_len, ratios=cfg.split, seed=cfg.seed)
    g = build_graph(split.train, meta, user_info=cfg.user_info, vocabulary=split.vocabulary())
    return cfg, split, g, train_transe(g, cfg.transe_config())


def beam_oracle(model, session_vec, start, g, widths):
    """Beam search rebuilt from the scalar reference distribution."""
    frontier = [((start,), ())]
    for w in widths:
        nxt = []
        for path, probs in frontier:
            actions, p = scalar_policy_probs(model, session_vec, path, g)
            order = sorted(range(len(actions)), key=lambda i: -p[i])[:w]
            nxt += [(path + actions[i], probs + (float(p[i]),)) for i in order]
        frontier = nxt
    return {path: probs for path, probs in frontier}
