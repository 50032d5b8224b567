"""Synthetic benchmark: the next item is always the bought_together partner.

Products come in pairs (p, q) linked by ``bought_together``; both members
of a pair share a brand and a category. Every session ends with some
product p followed by its partner, so the held-out target is always a
``bought_together`` neighbour of the last item.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

DAY = 86_400


def partner(i: int) -> int:
    return i ^ 1


def make_catalog(n_products=200, n_brands=20, n_categories=20, n_related=40, seed=0):
    if n_products % 2:
        raise ValueError("n_products must be even (products come in pairs)")
    rng = np.random.default_rng(seed)
    meta = []
    for i in range(n_products):
        pair = i // 2
        meta.append({
            "item": f"p{i:03d}",
            "brand": f"b{pair % n_brands:02d}",
            "categories": [f"c{(7 * pair + 3) % n_categories:02d}"],
            "bought_together": [f"p{partner(i):03d}"],
            "also_viewed": [f"rp{int(rng.integers(n_related)):02d}"],
        })
    return meta


def make_interactions(n_products=200, n_users=60, sessions_per_item=4, prefix_len=(1, 3), seed=0):
    """(user, item, timestamp) rows; one session per (user, day)."""
    rng = np.random.default_rng(seed)
    next_day = np.zeros(n_users, dtype=np.int64)
    rows = []
    lasts = np.repeat(np.arange(n_products), sessions_per_item)
    rng.shuffle(lasts)
    for p in lasts:
        u = int(rng.integers(n_users))
        day = int(next_day[u])
        next_day[u] += 1
        k = int(rng.integers(prefix_len[0], prefix_len[1] + 1))
        prefix = [int(x) for x in rng.integers(n_products, size=k)]
        seq = prefix + [int(p), partner(int(p))]
        for j, item in enumerate(seq):
            rows.append((f"u{u:03d}", f"p{item:03d}", day * DAY + 3600 * (j + 1)))
    rows.sort(key=lambda r: (r[0], r[2]))
    return rows


def write_dataset(workdir, n_products=200, n_brands=20, n_categories=20, n_users=60,
                  sessions_per_item=4, seed=0) -> tuple[Path, Path]:
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    inter = workdir / "interactions.tsv"
    meta = workdir / "metadata.jsonl"
    with open(inter, "w", encoding="utf-8", newline="\n") as fh:
        for u, it, ts in make_interactions(n_products, n_users, sessions_per_item, seed=seed):
            fh.write(f"{u}\t{it}\t{ts}\n")
    with open(meta, "w", encoding="utf-8", newline="\n") as fh:
        for m in make_catalog(n_products, n_brands, n_categories, seed=seed):
            fh.write(json.dumps(m, sort_keys=True) + "\n")
    return inter, meta


# Settings the synthetic benchmark is run with. Small embeddings keep a
# CPU run to well under a minute; the walk settings are the stock ones.
PRESET = {
    "interactions": "interactions.tsv",
    "metadata": "metadata.jsonl",
    "workdir": ".",
    "dim": 32,
    "transe_epochs": 100,
    "transe_lr": 0.01,
    "encoder": "gru",
    "optimizer": "adam",
    "lr": 0.01,
    "dropout": 0.3,
    "epochs": 30,
    "path_length": 2,
    "sample_sizes": "100,1",
    "beam": "100,1",
    "gamma": 0.99,
    "beta": 0.2,
}


def preset_config(seed: int = 0) -> str:
    lines = ["# synthetic benchmark run"]
    lines += [f"{k} = {v}" for k, v in PRESET.items()]
    lines.append(f"seed = {seed}")
    return "\n".join(lines) + "\n"
