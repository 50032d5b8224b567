import numpy as np
import pytest

from helpers import fd_check, random_kg
from reks.kg import KnowledgeGraph
from reks.transe import (EmbeddingTable, TransEConfig, _keys, corrupt, init_embeddings,
                         margin_loss, margin_loss_grad, ranking_accuracy, train_transe,
                         transe_score)


def test_init_shape_and_norms():
    t = init_embeddings(3, 2, 4, seed=0)
    assert t.matrix.shape == (5, 4)
    assert np.allclose(np.linalg.norm(t.entities, axis=1), 1.0, atol=1e-6)
    assert np.array_equal(t.matrix, init_embeddings(3, 2, 4, seed=0).matrix)


def test_init_bounds():
    t = init_embeddings(10, 7, 16, seed=3)
    assert np.all(np.abs(t.relations) <= 6 / np.sqrt(16))


def test_score_exact_translation():
    t = init_embeddings(3, 1, 4, seed=0)
    E = t.num_entities
    t.matrix[2] = t.matrix[0] + t.matrix[E]
    assert transe_score(0, 0, 2, t) == pytest.approx(0.0, abs=1e-12)


def test_score_unit_tail():
    t = init_embeddings(2, 1, 3, seed=0)
    t.matrix[0] = 0.0
    t.matrix[2] = 0.0
    t.matrix[1] = [0.0, 1.0, 0.0]
    assert transe_score(0, 0, 1, t) == pytest.approx(1.0)


def test_score_against_loop(rng):
    t = init_embeddings(6, 3, 5, seed=1)
    for _ in range(20):
        h, tl = rng.integers(6, size=2)
        r = int(rng.integers(3))
        acc = 0.0
        for j in range(5):
            acc += (t.matrix[h, j] + t.matrix[6 + r, j] - t.matrix[tl, j]) ** 2
        assert transe_score(int(h), r, int(tl), t) == pytest.approx(acc ** 0.5)


def test_score_bad_index():
    with pytest.raises(IndexError):
        transe_score(0, 5, 0, init_embeddings(2, 1, 3))


def chain_graph():
    g = KnowledgeGraph()
    a, b = g.add_entity("product", "a"), g.add_entity("brand", "b")
    g.add_edge(a, "produced_by", b)
    return g.finalize()


def test_training_reduces_loss():
    t = train_transe(chain_graph(), TransEConfig(dim=4, epochs=50, lr=0.05, seed=0))
    assert t.history[-1] < t.history[0]


def toy20():
    """10 products, each produced_by one of 3 brands and in one of 4 categories."""
    g = KnowledgeGraph()
    for i in range(10):
        p = g.add_entity("product", f"p{i}")
        g.add_edge(p, "produced_by", g.add_entity("brand", f"b{i % 3}"))
        g.add_edge(p, "belong_to", g.add_entity("category", f"c{i % 4}"))
    assert len(g.triples) == 20
    return g.finalize()


def test_positive_beats_corruption_after_training():
    g = toy20()
    t = train_transe(g, TransEConfig(dim=8, epochs=200, lr=0.02, batch_size=8, seed=0))
    assert ranking_accuracy(g, t, seed=5) >= 0.9


def test_hinge_zero_when_negatives_far():
    x = np.zeros((4, 2))
    x[3] = [1.0, 0.0]   # relation
    x[1] = [1.0, 0.0]   # tail so that h + r = t exactly
    x[2] = [-5.0, 0.0]  # far negative tail
    pos = np.array([[0, 0, 1]])
    neg = np.array([[0, 0, 2]])
    assert margin_loss(x, 3, pos, neg, 1.0) == 0.0
    assert not margin_loss_grad(x, 3, pos, neg, 1.0)[1].any()


def test_entity_norms_after_each_epoch():
    g = random_kg(np.random.default_rng(0), max_entities=20)
    cfg = TransEConfig(dim=6, epochs=1, lr=0.05, seed=0)
    t = None
    for _ in range(4):
        t = train_transe(g, cfg, t)
        assert np.allclose(np.linalg.norm(t.entities, axis=1), 1.0, atol=1e-6)


def test_loss_nonincreasing_on_fixed_graph():
    g = random_kg(np.random.default_rng(2), max_entities=30)
    t = train_transe(g, TransEConfig(dim=8, epochs=60, lr=0.01, seed=0))
    h = np.array(t.history)
    window = np.convolve(h, np.ones(10) / 10, mode="valid")
    assert window[-1] <= window[0] + 1e-3


def test_margin_gradient_finite_differences():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        E, R, d = 6, 3, int(rng.integers(2, 9))
        x = rng.normal(size=(E + R, d))
        pos = np.stack([rng.integers(E, size=5), rng.integers(R, size=5), rng.integers(E, size=5)], 1)
        neg = pos.copy()
        neg[:, 2] = rng.integers(E, size=5)
        _, grad = margin_loss_grad(x, E, pos, neg, 1.0)
        worst = max(worst, fd_check(lambda: margin_loss(x, E, pos, neg, 1.0), x, grad))
    assert worst < 1e-3


def test_hinge_nonnegative(rng):
    x = rng.normal(size=(9, 4))
    for _ in range(50):
        pos = np.stack([rng.integers(6, size=4), rng.integers(3, size=4), rng.integers(6, size=4)], 1)
        neg = np.stack([rng.integers(6, size=4), pos[:, 1], rng.integers(6, size=4)], 1)
        assert margin_loss(x, 6, pos, neg, 1.0) >= 0.0


def test_corruption_avoids_true_triples():
    g = random_kg(np.random.default_rng(4), max_entities=12, density=0.3)
    triples = np.array(sorted(g.triples))
    neg = corrupt(triples, g.num_entities, g.triples, np.random.default_rng(0), tries=50)
    keys = set(_keys(triples, g.num_entities).tolist())
    clash = sum(k in keys for k in _keys(neg, g.num_entities).tolist())
    assert clash <= len(triples) * 0.05
    # only the head or the tail is replaced, never the relation
    assert (neg[:, 1] == triples[:, 1]).all()
    assert ((neg[:, 0] == triples[:, 0]) | (neg[:, 2] == triples[:, 2])).all()


def test_save_load_roundtrip(tmp_path):
    t = init_embeddings(4, 2, 3, seed=9)
    t.save(tmp_path / "e.bin", fingerprint="f")
    head = (tmp_path / "e.bin").read_bytes().split(b"\n", 1)[0]
    assert b'"rows": 6' in head and b'"cols": 3' in head and b'"seed": 9' in head
    u = EmbeddingTable.load(tmp_path / "e.bin")
    assert np.allclose(u.matrix, t.matrix.astype(np.float32))
    assert (u.num_entities, u.num_relations) == (4, 2)


def test_deterministic_training():
    g = random_kg(np.random.default_rng(1), max_entities=15)
    cfg = TransEConfig(dim=4, epochs=5, seed=2)
    assert np.array_equal(train_transe(g, cfg).matrix, train_transe(g, cfg).matrix)
