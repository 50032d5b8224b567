"""Beam search over the trained policy and top-K recommendation with explanations."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass

import numpy as np

from .kg import ENTITY_KINDS, REL, RELATIONS
from .model import PathTree, ReksModel


@dataclass(frozen=True)
class ScoredPath:
    path: tuple
    step_probs: tuple

    @property
    def prob(self) -> float:
        return float(np.prod(self.step_probs))

    @property
    def terminal(self) -> int:
        return self.path[-1]


@dataclass(frozen=True)
class Recommendation:
    item: int
    score: float
    explanation: ScoredPath


def beam_search(model: ReksModel, session, widths=(100, 1), tree: PathTree | None = None) -> list[ScoredPath]:
    """Keep the ``widths[t]`` most probable actions per branch at hop t.

    Only walks reaching the full length survive. Ties keep the graph's
    (relation, entity) order. Raises SkipSession when the start entity
    is not in the graph.
    """
    tree = tree or PathTree(model, session)
    frontier = [((tree.start,), ())]
    for width in widths:
        nxt = []
        nodes = tree.expand([f[0] for f in frontier])
        for (prefix, probs), n in zip(frontier, nodes):
            if n.dead_end:
                continue
            order = np.argsort(-n.logp, kind="stable")[:width]
            p = np.exp(n.logp)
            for a in order:
                nxt.append((prefix + (int(n.rel[a]), int(n.ent[a])), probs + (float(p[a]),)))
        frontier = nxt
    return [ScoredPath(prefix, probs) for prefix, probs in frontier]


def recommend(paths, K: int, g=None, exclude=()) -> list[Recommendation]:
    """Sum path probabilities per terminal product; best path explains each item.

    ``g`` restricts terminals to products; ``exclude`` drops entities
    (e.g. items already in the session).
    """
    score: dict[int, float] = {}
    best: dict[int, ScoredPath] = {}
    excl = set(exclude)
    for sp in paths:
        e = sp.terminal
        if (g is not None and not g.is_product(e)) or e in excl:
            continue
        score[e] = score.get(e, 0.0) + sp.prob
        if e not in best or sp.prob > best[e].prob:
            best[e] = sp
    items = sorted(score, key=lambda e: (-score[e], e))[:K]
    return [Recommendation(e, score[e], best[e]) for e in items]


def render_explanation(path, g=None, names: dict | None = None) -> str:
    """``e0 -[r1]-> e1 -[r2]-> e2`` with ``kind:index`` fallback tokens."""
    names = names or {}

    def tok(e):
        if e in names:
            return names[e]
        kind = g.kinds[e] if g is not None else "entity"
        return f"{kind}:{e}"

    parts = [tok(path[0])]
    for i in range(1, len(path), 2):
        parts.append(f"-[{RELATIONS[path[i]]}]->")
        parts.append(tok(path[i + 1]))
    return " ".join(parts)


_ARROW = re.compile(r" -\[([a-z_]+)\]-> ")


def parse_explanation(text: str, g=None) -> tuple:
    """Inverse of render_explanation for ``kind:index`` or graph-label tokens."""
    pieces = _ARROW.split(text)
    ents, rels = pieces[0::2], pieces[1::2]

    def ent(token):
        kind, _, rest = token.partition(":")
        if kind not in ENTITY_KINDS and kind != "entity":
            raise ValueError(f"bad entity token {token!r}")
        if g is not None and g.has_entity(kind, rest):
            return g.entity(kind, rest)
        return int(rest)

    out = [ent(ents[0])]
    for r, e in zip(rels, ents[1:]):
        out += [REL[r], ent(e)]
    return tuple(out)


def graph_labels(g) -> dict:
    return {i: g.label(i) for i in range(g.num_entities)}


def recommend_session(model: ReksModel, session, K=20, widths=(100, 1), exclude_seen=False):
    paths = beam_search(model, session, widths)
    excl = model.item_entities(session.items) if exclude_seen else ()
    return recommend(paths, K, model.g, excl)


def recommendation_record(model: ReksModel, session, recs, skipped=False, paths_per_item=1,
                          all_paths=None, fingerprint=None) -> str:
    """One JSON line: {session_id, recommendations: [{item, score, path}], skipped}."""
    g = model.g
    labels = graph_labels(g)
    rows = []
    for rec in recs:
        row = {"item": g.names[rec.item], "score": rec.score,
               "path": render_explanation(rec.explanation.path, g, labels)}
        if paths_per_item > 1 and all_paths is not None:
            extra = sorted((p for p in all_paths if p.terminal == rec.item), key=lambda p: -p.prob)
            row["paths"] = [render_explanation(p.path, g, labels) for p in extra[:paths_per_item]]
        rows.append(row)
    rec = {"session_id": session.session_id, "recommendations": rows, "skipped": skipped}
    if fingerprint is not None:
        rec["fingerprint"] = fingerprint
    return json.dumps(rec, sort_keys=True)
