"""
Walking a tiny product graph
============================

Four products, two brands, two categories and two users. We embed the
graph with TransE, wrap it in an untrained policy and look at what the
walk distribution and the beam search produce for one session.
"""
import numpy as np

from reks.infer import beam_search, graph_labels, recommend, render_explanation
from reks.ingest import ItemMetadata, Session
from reks.kg import RELATIONS, build_graph, graph_stats, neighbors
from reks.model import PathTree, ReksModel
from reks.transe import TransEConfig, ranking_accuracy, train_transe

sessions = [
    Session("u1", ("p1", "p2"), "p3", "u1@day1"),
    Session("u2", ("p2", "p3"), "p4", "u2@day1"),
    Session("u1", ("p4",), "p1", "u1@day2"),
]
meta = [
    ItemMetadata("p1", brand="b1", categories=("c1",), bought_together=("p2",)),
    ItemMetadata("p2", brand="b1", categories=("c1",)),
    ItemMetadata("p3", brand="b2", categories=("c1", "c2")),
    ItemMetadata("p4", brand="b2", categories=("c2",), also_bought=("p1",)),
]

g = build_graph(sessions, meta)
print(graph_stats(g))

# the action space of p2: every outgoing (relation, tail) pair
labels = graph_labels(g)
p2 = g.product("p2")
for r, t in neighbors(g, p2):
    print(f"  p2 -[{RELATIONS[r]}]-> {labels[t]}")

# a small table for a dozen entities; the fit is rough but the walk only needs a sketch
table = train_transe(g, TransEConfig(dim=8, epochs=200, lr=0.02, batch_size=8, seed=0))
print("TransE loss %.3f -> %.3f" % (table.history[0], table.history[-1]))
print("positive triple beats its corruption in %.0f%% of cases" % (100 * ranking_accuracy(g, table)))

model = ReksModel.create(g, table, "gru", seed=0)
sess = Session("u9", ("p1", "p2"), "p3", "demo")

# first-hop distribution from the last item
tree = PathTree(model, sess)
root = tree.node((tree.start,))
for r, e, p in zip(root.rel, root.ent, root.probs):
    print(f"  {RELATIONS[r]:>16} {labels[int(e)]:<14} {p:.3f}")
print("sums to", root.probs.sum().round(12))

# beam search with the stock widths keeps every first hop, then the best second hop
paths = beam_search(model, sess, (100, 1), tree)
for rec in recommend(paths, 3, g):
    print(f"{labels[rec.item]:<12} {rec.score:.3f}  {render_explanation(rec.explanation.path, g, labels)}")

# the untrained policy is close to uniform, so the ranking is mostly structural
print("entropy of first hop: %.3f (uniform would be %.3f)"
      % (-(root.probs * root.logp).sum(), np.log(root.ent.size)))
