"""
Checking the hand-written gradients
===================================

Every backward pass in the package is written out by hand in numpy, so
we compare it against central differences. The combined objective is
checked through replays of one fixed batch of sampled walks: rewards and
ranks stay frozen, only the log-probabilities move with the parameters.
"""
import numpy as np

from reks.encoder import make_encoder
from reks.ingest import ItemMetadata, Session
from reks.kg import build_graph
from reks.model import ReksModel, zero_grads
from reks.train import TrainConfig, batch_objective, collect
from reks.transe import init_embeddings, margin_loss, margin_loss_grad


def numeric_grad(f, x, h=1e-6):
    out = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        a = f()
        x[i] = old - h
        b = f()
        x[i] = old
        out[i] = (a - b) / (2 * h)
    return out


def rel_err(a, n):
    return np.max(np.abs(a - n) / np.maximum(1.0, np.abs(n)))


rng = np.random.default_rng(0)

# TransE hinge on a handful of triples
x = rng.normal(size=(8, 5))  # 6 entities, 2 relations
pos = np.array([[0, 0, 1], [2, 1, 3], [4, 0, 5]])
neg = np.array([[0, 0, 3], [5, 1, 3], [4, 0, 2]])
_, g = margin_loss_grad(x, 6, pos, neg, 1.0)
print("transe  ", rel_err(g, numeric_grad(lambda: margin_loss(x, 6, pos, neg, 1.0), x)))

# GRU encoder: gradient w.r.t. inputs and every weight
enc = make_encoder("gru", 4, 3, seed=1)
items = rng.normal(size=(3, 4))
up = rng.normal(size=3)
enc.forward(items)
grads, dx = enc.backward(up)
f = lambda: float(up @ enc.forward(items))  # noqa: E731
print("gru dx  ", rel_err(dx, numeric_grad(f, items)))
for k in ("W_z", "U_h", "b_r"):
    print(f"gru {k:4s}", rel_err(grads[k], numeric_grad(f, enc.params[k])))

# whole model, both losses, on a toy graph
sessions = [Session("u1", ("p1", "p2"), "p3"), Session("u2", ("p2", "p3"), "p4"),
            Session("u1", ("p4",), "p1")]
meta = [ItemMetadata("p1", brand="b1", categories=("c1",)),
        ItemMetadata("p2", brand="b1", categories=("c1",)),
        ItemMetadata("p3", brand="b2", categories=("c1", "c2")),
        ItemMetadata("p4", brand="b2", categories=("c2",))]
kg = build_graph(sessions, meta)
model = ReksModel.create(kg, init_embeddings(kg.num_entities, kg.num_relations, 4, 0), "gru",
                         dropout=0.2, seed=0)
cfg = TrainConfig(sample_sizes=(4, 2))
rollouts = [collect(model, s, cfg, rng) for s in sessions]

grads = zero_grads(model)
parts = batch_objective([ro.replay(model) for ro in rollouts], 0.5, 0.2, grads=grads)
print("\nL = %.4f  (L_r %.4f, L_ce %.4f)" % (parts["loss"], parts["L_r"], parts["L_ce"]))


def loss():
    return batch_objective([ro.replay(model) for ro in rollouts], 0.5, 0.2)["loss"]


for name, p in model.parameters().items():
    print(f"{name:14s}", rel_err(grads[name], numeric_grad(loss, p, h=1e-5)))
