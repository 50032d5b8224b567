"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v`` (lines are printed as each
criterion finishes) or directly with ``python tests/test_acceptance.py``.
The synthetic runs dominate: roughly 12 minutes on one CPU core.
"""
import json
import math
import sys
import tempfile
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import (enumerate_paths, fd_check, oracle_reward, random_kg, random_model,  # noqa: E402
                     random_session, scalar_root_logits)
from reks.cli import FILES, load_graph, load_split, load_table, main  # noqa: E402
from reks.config import load_config  # noqa: E402
from reks.encoder import make_encoder  # noqa: E402
from reks.evaluate import ExperimentSetup, hr_at_k, ndcg_at_k, run_experiment  # noqa: E402
from reks.infer import beam_search, recommend  # noqa: E402
from reks.mdp import reward  # noqa: E402
from reks.model import PathTree, SkipSession, zero_grads  # noqa: E402
from reks.train import TrainConfig, batch_objective, collect  # noqa: E402
from reks.transe import init_embeddings, margin_loss, margin_loss_grad  # noqa: E402

SEEDS = [0, 1, 2, 3, 4]
STAGES = ["ingest", "build-kg", "train-transe", "train", "evaluate"]


def report(name, ok, detail, out=None):
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    if out is None:
        print(line, flush=True)
    else:
        with out.disabled():
            print("\n" + line, flush=True)
    return ok


# -- 1. gradients ------------------------------------------------------------------

def grad_transe(seed):
    rng = np.random.default_rng(seed)
    E, R, d = int(rng.integers(3, 9)), int(rng.integers(1, 4)), int(rng.integers(2, 9))
    x = rng.normal(size=(E + R, d))
    n = int(rng.integers(1, 6))
    pos = np.stack([rng.integers(E, size=n), rng.integers(R, size=n), rng.integers(E, size=n)], 1)
    neg = pos.copy()
    col = rng.integers(2, size=n) * 2
    neg[np.arange(n), col] = rng.integers(E, size=n)
    _, g = margin_loss_grad(x, E, pos, neg, 1.0)
    return fd_check(lambda: margin_loss(x, E, pos, neg, 1.0), x, g)


def grad_encoder(seed, kind):
    rng = np.random.default_rng(seed)
    d0 = int(rng.integers(1, 9))
    d1 = d0 if kind == "mean" else int(rng.integers(1, 9))
    enc = make_encoder(kind, d0, d1, seed=seed)
    for k in enc.params:
        enc.params[k] = rng.normal(scale=0.7, size=enc.params[k].shape)
    x = rng.normal(size=(int(rng.integers(1, 5)), d0))
    up = rng.normal(size=d1)
    enc.forward(x)
    grads, dx = enc.backward(up)

    def f():
        return float(up @ enc.forward(x))

    worst = fd_check(f, x, dx)
    for k, v in enc.params.items():
        worst = max(worst, fd_check(f, v, grads[k]))
    return worst


def grad_policy(seed):
    rng = np.random.default_rng(seed)
    while True:
        g = random_kg(rng, max_entities=12, density=0.3)
        model = random_model(g, dim=int(rng.integers(2, 9)), seed=seed, d2=int(rng.integers(2, 9)))
        sess = random_session(rng, g)
        tree = PathTree(model, sess)
        root = tree.node((tree.start,))
        if not root.dead_end:
            break
    c = rng.normal(size=root.ent.size)
    tree.levels[0].dlogits = c.copy()
    grads = zero_grads(model)
    tree.backward(grads)

    return max(fd_check(lambda: float(c @ scalar_root_logits(model, sess, g)), p, grads[k])
               for k, p in model.parameters().items())


def grad_full(seed):
    rng = np.random.default_rng(1000 + seed)
    while True:
        g = random_kg(rng, max_entities=10, density=0.35)
        model = random_model(g, dim=4, seed=seed, dropout=0.2)
        cfg = TrainConfig(sample_sizes=(3, 2), gamma=0.9)
        ros = []
        for s in [random_session(rng, g) for _ in range(3)]:
            try:
                ros.append(collect(model, s, cfg, rng))
            except SkipSession:
                pass
        if ros:
            break
    grads = zero_grads(model)
    batch_objective([ro.replay(model) for ro in ros], 0.4, 0.2, grads=grads)

    def f():
        return batch_objective([ro.replay(model) for ro in ros], 0.4, 0.2)["loss"]

    return max(fd_check(f, p, grads[k], h=1e-5) for k, p in model.parameters().items())


def criterion_gradients():
    t0 = time.perf_counter()
    n = 20
    errs = {
        "transe": max(grad_transe(s) for s in range(n)),
        "gru": max(grad_encoder(s, "gru") for s in range(n)),
        "mean": max(grad_encoder(s, "mean") for s in range(n)),
        "policy": max(grad_policy(s) for s in range(n)),
        "full": max(grad_full(s) for s in range(n)),
    }
    dt = time.perf_counter() - t0
    ok = max(errs.values()) < 1e-3 and dt < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
    return ok, f"max rel err [{detail}] on {n} instances each, {dt:.1f}s (< 60s)"


# -- 2. beam oracle ----------------------------------------------------------------

def criterion_beam():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst, mismatched, total = 0.0, 0, 0
    for _ in range(50):
        g = random_kg(rng, max_entities=50, density=0.12)
        model = random_model(g, dim=int(rng.integers(2, 9)), seed=int(rng.integers(1 << 20)))
        sess = random_session(rng, g)
        tree = PathTree(model, sess)
        widths = (g.num_entities * g.num_relations,) * 2
        paths = beam_search(model, sess, widths, tree)
        ref = enumerate_paths(model, tree.session_vec, tree.start, g)
        total += len(ref)
        if {sp.path for sp in paths} != set(ref):
            mismatched += 1
            continue
        sums = {}
        for path, p in ref.items():
            if g.is_product(path[-1]):
                sums[path[-1]] = sums.get(path[-1], 0.0) + p
        recs = recommend(paths, len(sums) + 1, g)
        if {r.item for r in recs} != set(sums):
            mismatched += 1
            continue
        for r in recs:
            worst = max(worst, abs(r.score - sums[r.item]))
    dt = time.perf_counter() - t0
    ok = mismatched == 0 and worst <= 1e-9 and dt < 30
    return ok, f"50 graphs, {total} paths, {mismatched} path-set mismatches, max score diff {worst:.1e}, {dt:.1f}s (< 30s)"


# -- 3. reward bounds ----------------------------------------------------------------

def criterion_rewards():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    graphs = [random_kg(rng, max_entities=30, density=0.2) for _ in range(20)]
    bad = 0
    for i in range(10_000):
        g = graphs[i % len(graphs)]
        table = init_embeddings(g.num_entities, g.num_relations, int(rng.integers(2, 9)),
                                int(rng.integers(1 << 20)))
        table.matrix *= rng.uniform(0.2, 3.0)
        prods = [e for e in range(g.num_entities) if g.is_product(e)]
        path = (int(rng.choice(prods)),)
        visited = {path[0]}
        for _ in range(int(rng.integers(1, 4))):
            rels, tails = g.legal_actions(path[-1], visited)
            if not len(tails):
                break
            j = int(rng.integers(len(tails)))
            path += (int(rels[j]), int(tails[j]))
            visited.add(int(tails[j]))
        term = path[-1]
        target = term if rng.random() < 0.2 and g.is_product(term) else int(rng.choice(prods))
        is_prod = g.is_product(term)
        rank = int(rng.integers(0, 150)) if is_prod else None
        S = rng.normal(scale=2.0, size=table.dim)
        rb = reward(term, path, S, target, rank, table, g)
        ref = oracle_reward(term, path, S, target, rank or 0, table.matrix, table.num_entities, is_prod)
        inside = (0 <= rb.r_item <= 1 and 1 <= 2 ** rb.r_rank <= 2 and 0 < rb.r_path < 1
                  and 1 < rb.total < 4)
        exact = np.allclose((rb.r_item, rb.r_rank, rb.r_path, rb.total), ref, rtol=0, atol=1e-12)
        bad += not (inside and exact)
    dt = time.perf_counter() - t0
    return bad == 0 and dt < 10, f"10000 cases, {bad} violations, {dt:.1f}s (< 10s)"


# -- 4. metrics --------------------------------------------------------------------

def brute_metrics(ranked, target, K):
    hit, gain = 0, 0.0
    for pos, item in enumerate(ranked, start=1):
        if pos > K:
            break
        if item == target:
            hit, gain = 1, 1.0 / math.log2(pos + 1)
    return hit, gain


def criterion_metrics(reports=()):
    rng = np.random.default_rng(99)
    bad = 0
    for _ in range(1000):
        ranked = rng.permutation(60)[:int(rng.integers(0, 40))].tolist()
        target = int(rng.integers(60))
        K = int(rng.integers(1, 30))
        bad += (hr_at_k(ranked, target, K), ndcg_at_k(ranked, target, K)) != brute_metrics(ranked, target, K)
    order_bad = 0
    for rep in reports:
        ks = sorted(rep["hr"], key=int)
        order_bad += any(rep["hr"][a] > rep["hr"][b] for a, b in zip(ks, ks[1:]))
        order_bad += any(rep["ndcg"][k] > rep["hr"][k] for k in ks)
    ok = bad == 0 and order_bad == 0
    return ok, (f"1000 oracle cases, {bad} mismatches; {len(reports)} evaluate runs, "
                f"{order_bad} monotonicity/NDCG<=HR violations")


# -- 5-7. synthetic runs -------------------------------------------------------------

def run_stages(work: Path, seed: int):
    assert main(["synth", "--workdir", str(work), "--seed", str(seed), "-q"]) == 0
    conf = str(work / "reks.conf")
    for stage in STAGES:
        code = main([stage, "--config", conf, "-q"])
        if code != 0:
            raise RuntimeError(f"`reks {stage}` exited with {code}")
    return json.loads((work / FILES["metrics"]).read_text())


class Synthetic:
    def __init__(self, root: Path):
        self.root = root
        self.metrics = {}
        self.seconds = 0.0

    def run(self):
        t0 = time.perf_counter()
        for s in SEEDS:
            self.metrics[s] = run_stages(self.root / f"seed{s}", s)
        self.seconds = time.perf_counter() - t0
        return self

    def variant(self, seed, **changes):
        cfg = load_config(self.root / f"seed{seed}" / "reks.conf", env={})
        split, g = load_split(cfg), load_graph(cfg)
        table = load_table(cfg, g)
        _, d1, d2 = cfg.dims
        setup = ExperimentSetup(g, table, split.train, split.test, cfg.encoder, d1, d2, (5,), seed)
        return run_experiment(setup, replace(cfg.train_config(), **changes), cfg.start,
                              cfg.widths())


def criterion_synthetic(syn: Synthetic):
    hr = [syn.metrics[s]["hr"]["5"] for s in SEEDS]
    nd = [syn.metrics[s]["ndcg"]["5"] for s in SEEDS]
    mh, mn = float(np.median(hr)), float(np.median(nd))
    ok = mh >= 90.0 and mn >= 80.0 and syn.seconds < 300
    per = " ".join(f"{h:.1f}/{n:.1f}" for h, n in zip(hr, nd))
    return ok, (f"median HR@5 {mh:.2f} (>= 90), NDCG@5 {mn:.2f} (>= 80); per seed HR/NDCG {per}; "
                f"{syn.seconds:.0f}s (< 300s)")


def criterion_ablation(syn: Synthetic):
    full = [syn.metrics[s]["hr"]["5"] for s in SEEDS]
    r1 = [syn.variant(s, reward_parts="R1").hr[5] for s in SEEDS]
    ce = [syn.variant(s, loss="C").hr[5] for s in SEEDS]
    mf, mr, mc = (float(np.median(x)) for x in (full, r1, ce))
    ok = mf >= mr and mf >= mc
    return ok, (f"median HR@5 full {mf:.2f} vs R1-only {mr:.2f} (margin {mf - mr:+.2f}), "
                f"vs CE-only {mc:.2f} (margin {mf - mc:+.2f})")


def criterion_determinism(syn: Synthetic, scratch: Path):
    first = syn.root / "seed0"
    again = scratch / "seed0"
    run_stages(again, 0)
    diff = [name for name in FILES.values()
            if (first / name).exists() and (first / name).read_bytes() != (again / name).read_bytes()]
    compared = sum((first / name).exists() for name in FILES.values())
    return not diff, f"seed 0 rerun: {compared} artifacts compared, differing: {diff or 'none'}"


# -- pytest entry points ------------------------------------------------------------

@pytest.fixture(scope="module")
def synthetic(tmp_path_factory):
    return Synthetic(tmp_path_factory.mktemp("synthetic")).run()


def test_gradient_suite(capsys):
    assert report("1 gradient suite", *criterion_gradients(), out=capsys)


def test_beam_oracle(capsys):
    assert report("2 beam oracle", *criterion_beam(), out=capsys)


def test_reward_bounds(capsys):
    assert report("3 reward bounds", *criterion_rewards(), out=capsys)


def test_synthetic_end_to_end(synthetic, capsys):
    assert report("5 synthetic end-to-end", *criterion_synthetic(synthetic), out=capsys)


def test_metric_oracle(synthetic, capsys):
    assert report("4 metric oracle", *criterion_metrics(list(synthetic.metrics.values())), out=capsys)


def test_ablation_direction(synthetic, capsys):
    assert report("6 ablation direction", *criterion_ablation(synthetic), out=capsys)


def test_determinism(synthetic, tmp_path, capsys):
    assert report("7 determinism", *criterion_determinism(synthetic, tmp_path), out=capsys)


if __name__ == "__main__":
    results = [report("1 gradient suite", *criterion_gradients()),
               report("2 beam oracle", *criterion_beam()),
               report("3 reward bounds", *criterion_rewards())]
    with tempfile.TemporaryDirectory() as tmp:
        syn = Synthetic(Path(tmp) / "runs").run()
        results.append(report("4 metric oracle", *criterion_metrics(list(syn.metrics.values()))))
        results.append(report("5 synthetic end-to-end", *criterion_synthetic(syn)))
        results.append(report("6 ablation direction", *criterion_ablation(syn)))
        results.append(report("7 determinism", *criterion_determinism(syn, Path(tmp) / "again")))
    sys.exit(0 if all(results) else 1)
