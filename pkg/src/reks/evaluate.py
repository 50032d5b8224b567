"""HR@K / NDCG@K and the experiment harness for ablations."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .infer import beam_search, recommend
from .model import ReksModel, SkipSession
from .train import TrainConfig, fit


class ConfigError(ValueError):
    pass


def hr_at_k(ranked_items, target, K: int) -> int:
    if K < 1:
        raise ValueError("K must be >= 1")
    return int(target in list(ranked_items)[:K])


def ndcg_at_k(ranked_items, target, K: int) -> float:
    if K < 1:
        raise ValueError("K must be >= 1")
    top = list(ranked_items)[:K]
    if target not in top:
        return 0.0
    return 1.0 / math.log2(top.index(target) + 2)


@dataclass
class MetricsReport:
    hr: dict
    ndcg: dict
    sessions: int
    skipped: int
    seed: int = 0
    fingerprint: str = ""
    per_session: list = field(default_factory=list, repr=False)

    def to_dict(self, with_sessions=False):
        d = asdict(self)
        d["hr"] = {str(k): v for k, v in self.hr.items()}
        d["ndcg"] = {str(k): v for k, v in self.ndcg.items()}
        if not with_sessions:
            d.pop("per_session")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def table(self) -> str:
        ks = sorted(self.hr)
        head = f"{'metric':<8}" + "".join(f"{'@' + str(k):>9}" for k in ks)
        rows = [head]
        rows.append(f"{'HR':<8}" + "".join(f"{self.hr[k]:>9.2f}" for k in ks))
        rows.append(f"{'NDCG':<8}" + "".join(f"{self.ndcg[k]:>9.2f}" for k in ks))
        rows.append(f"sessions={self.sessions} skipped={self.skipped} seed={self.seed}")
        return "\n".join(rows)


def ranked_lists(model: ReksModel, sessions, widths=(100, 1), max_k=20, exclude_seen=False):
    """(ranked entity list | None, target entity | None) per session; None means skipped."""
    out = []
    for s in sessions:
        target = model.target_entity(s)
        try:
            paths = beam_search(model, s, widths)
        except SkipSession:
            out.append((None, target))
            continue
        excl = model.item_entities(s.items) if exclude_seen else ()
        recs = recommend(paths, max_k, model.g, excl)
        out.append(([r.item for r in recs], target))
    return out


def evaluate(model: ReksModel, test_sessions, Ks=(5, 10, 20), widths=(100, 1),
             seed=0, fingerprint="", exclude_seen=False) -> MetricsReport:
    """Mean HR/NDCG in percent; skipped sessions count as misses."""
    if not test_sessions:
        raise ValueError("empty test set")
    Ks = sorted(Ks)
    lists = ranked_lists(model, test_sessions, widths, Ks[-1], exclude_seen)
    hr = {k: 0.0 for k in Ks}
    nd = {k: 0.0 for k in Ks}
    records = []
    skipped = 0
    for (ranked, target), s in zip(lists, test_sessions):
        rec = {"session_id": s.session_id, "skipped": ranked is None}
        if ranked is None:
            skipped += 1
            ranked = []
        for k in Ks:
            h = hr_at_k(ranked, target, k)
            n = ndcg_at_k(ranked, target, k)
            hr[k] += h
            nd[k] += n
            rec[f"hr@{k}"] = h
            rec[f"ndcg@{k}"] = n
        records.append(rec)
    n = len(test_sessions)
    return MetricsReport(
        hr={k: round(100.0 * v / n, 10) for k, v in hr.items()},
        ndcg={k: round(100.0 * v / n, 10) for k, v in nd.items()},
        sessions=n, skipped=skipped, seed=seed, fingerprint=fingerprint, per_session=records,
    )


# -- experiments ---------------------------------------------------------------

@dataclass
class ExperimentSetup:
    """Everything fixed across the variants of one ablation grid."""

    g: object
    table: object
    train_sessions: list
    test_sessions: list
    encoder: str = "gru"
    d1: int | None = None
    d2: int | None = None
    Ks: tuple = (5, 10, 20)
    seed: int = 0


def run_experiment(setup: ExperimentSetup, config: TrainConfig, start="item", widths=None) -> MetricsReport:
    if start == "user" and not any(k == "user" for k in setup.g.kinds):
        raise ConfigError("user-start walks need user entities in the graph (user_info=true)")
    model = ReksModel.create(setup.g, setup.table, setup.encoder, setup.d1, setup.d2,
                             dropout=config.dropout, seed=config.seed, start=start)
    fit(model, setup.train_sessions, config)
    widths = config.sample_sizes if widths is None else widths
    return evaluate(model, setup.test_sessions, setup.Ks, widths, seed=config.seed)


def ablation_variants(base: TrainConfig) -> dict[str, dict[str, tuple]]:
    """axis -> variant name -> (train config, start)."""
    two = dict(path_length=2, sample_sizes=(100, 1))
    return {
        "reward": {name: (replace(base, reward_parts=name), "item")
                   for name in ("R1", "-path", "-rank", "full")},
        "loss": {"R": (replace(base, loss="R"), "item"),
                 "C": (replace(base, loss="C"), "item"),
                 "full": (replace(base, loss="full"), "item")},
        "start": {"item": (replace(base, **two), "item"),
                  "user": (replace(base, path_length=3, sample_sizes=(100, 10, 1)), "user")},
        "path_length": {str(n): (replace(base, path_length=n, sample_sizes=(100,) + (1,) * (n - 1)), "item")
                        for n in (2, 3, 4)},
    }


def ablation_suite(setup: ExperimentSetup, base: TrainConfig, axes=None, seeds=None) -> dict:
    """Train and evaluate every requested variant; returns axis -> name -> [reports]."""
    grid = ablation_variants(base)
    axes = list(grid) if axes is None else axes
    if "start" in axes and not any(k == "user" for k in setup.g.kinds):
        raise ConfigError("the start axis needs user entities in the graph (user_info=true)")
    seeds = [base.seed] if seeds is None else seeds
    out = {}
    for axis in axes:
        out[axis] = {}
        for name, (cfg, start) in grid[axis].items():
            out[axis][name] = [run_experiment(setup, replace(cfg, seed=s), start) for s in seeds]
    return out


def comparison_table(results: dict, K: int = 5) -> str:
    lines = [f"{'axis':<12}{'variant':<10}{'HR@' + str(K):>10}{'NDCG@' + str(K):>10}"]
    for axis, variants in results.items():
        for name, reports in variants.items():
            hr = float(np.median([r.hr[K] for r in reports]))
            nd = float(np.median([r.ndcg[K] for r in reports]))
            lines.append(f"{axis:<12}{name:<10}{hr:>10.2f}{nd:>10.2f}")
    return "\n".join(lines)
