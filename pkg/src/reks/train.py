"""Policy training: sampled rollouts, REINFORCE with baseline, cross-entropy."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .encoder import sigmoid
from .mdp import REWARD_VARIANTS, ZERO_REWARD, RewardBreakdown
from .model import PathTree, ReksModel, SkipSession, zero_grads

log = logging.getLogger(__name__)

CE_EPS = 1e-7


@dataclass
class TrainConfig:
    path_length: int = 2
    sample_sizes: tuple = (100, 1)
    gamma: float = 0.99
    beta: float = 0.2
    lr: float = 0.001
    batch_size: int = 32
    epochs: int = 30
    dropout: float = 0.0
    baseline_decay: float = 0.9
    optimizer: str = "sgd"
    reward_parts: str = "full"
    loss: str = "full"  # "full", "R" (reward only) or "C" (cross-entropy only)
    ce_scores: str = "raw"  # "raw": summed path probability; "max": raw / max(raw)
    seed: int = 0

    def __post_init__(self):
        self.sample_sizes = tuple(int(k) for k in self.sample_sizes)
        if len(self.sample_sizes) != self.path_length:
            raise ValueError(f"need one sampling size per hop: path_length={self.path_length}, "
                             f"sample_sizes={self.sample_sizes}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.reward_parts not in REWARD_VARIANTS:
            raise ValueError(f"reward_parts must be one of {sorted(REWARD_VARIANTS)}")
        if self.loss not in ("full", "R", "C"):
            raise ValueError("loss must be 'full', 'R' or 'C'")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")


@dataclass
class Episode:
    path: tuple
    log_probs: list
    terminal: int
    dead_end: bool = False
    reward: RewardBreakdown = ZERO_REWARD
    ret: float = 0.0
    tree: PathTree | None = field(default=None, repr=False)
    steps: list = field(default_factory=list, repr=False)  # (node, action index) per hop

    @property
    def hops(self) -> int:
        return len(self.path) // 2

    @property
    def prob(self) -> float:
        return float(np.exp(sum(self.log_probs)))


@dataclass
class ItemScores:
    items: list            # product entity indices, best first
    raw: np.ndarray        # summed path probability per item
    scores: np.ndarray     # raw / max(raw)
    ranks: dict            # entity -> 0-based rank

    def __len__(self):
        return len(self.items)

    def as_dict(self) -> dict:
        return dict(zip(self.items, self.scores.tolist()))


@dataclass
class Baseline:
    value: float = 0.0
    decay: float = 0.9

    def update(self, batch_mean: float):
        self.value = self.decay * self.value + (1.0 - self.decay) * batch_mean


def gumbel_top_k(logp: np.ndarray, k: int, rng) -> np.ndarray:
    """Sample min(k, n) indices without replacement, proportional to exp(logp)."""
    n = logp.size
    if k >= n:
        return np.arange(n)
    keys = logp + rng.gumbel(size=n)
    return np.argsort(-keys, kind="stable")[:k]


def rollout_batch(model: ReksModel, session, config: TrainConfig, rng=None, tree=None) -> list[Episode]:
    """Sample a tree of walks; returns [] when the start entity is a dead end.

    Hop t keeps ``sample_sizes[t]`` actions per branch, drawn without
    replacement from the masked softmax (all of them when fewer exist).
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    if tree is None:
        tree = PathTree(model, session, rng=rng, train=True)
    episodes = []
    frontier = [((tree.start,), [], [])]
    for depth in range(config.path_length):
        nodes = tree.expand([f[0] for f in frontier])
        if nodes[0].dead_end and depth == 0:
            return []
        picks = segment_sample(nodes, config.sample_sizes[depth], rng)
        nxt = []
        for (prefix, steps, lps), n, chosen in zip(frontier, nodes, picks):
            if n.dead_end:
                episodes.append(Episode(prefix, lps, prefix[-1], True, tree=tree, steps=steps))
                continue
            for a in chosen:
                nxt.append((prefix + (int(n.rel[a]), int(n.ent[a])),
                            steps + [(n, a)], lps + [float(n.logp[a])]))
        frontier = nxt
    episodes.extend(Episode(p, lps, p[-1], tree=tree, steps=steps) for p, steps, lps in frontier)
    return episodes


def segment_sample(nodes, k: int, rng) -> list[list[int]]:
    """gumbel_top_k applied to every node at once; one noise draw per action."""
    sizes = np.array([n.ent.size for n in nodes])
    logp = np.concatenate([n.logp for n in nodes])
    starts = np.cumsum(sizes) - sizes
    seg = np.repeat(np.arange(len(nodes)), sizes)
    keys = logp + rng.gumbel(size=logp.size)
    order = np.lexsort((-keys, seg))
    rank = np.arange(logp.size) - starts[seg]
    chosen = order[rank < k]
    local = (chosen - starts[seg[chosen]]).tolist()
    bounds = np.cumsum(np.minimum(sizes, k)).tolist()
    out, lo = [], 0
    for hi in bounds:
        out.append(local[lo:hi])
        lo = hi
    return out


def score_items(episodes, g=None) -> ItemScores:
    """Sum path probabilities per terminal product and rank them.

    Without ``g`` every non-dead-end terminal counts as a product.
    """
    raw: dict[int, float] = {}
    for ep in episodes:
        if ep.dead_end or (g is not None and not g.is_product(ep.terminal)):
            continue
        raw[ep.terminal] = raw.get(ep.terminal, 0.0) + ep.prob
    if not raw:
        return ItemScores([], np.zeros(0), np.zeros(0), {})
    items = sorted(raw, key=lambda e: (-raw[e], e))
    r = np.array([raw[e] for e in items])
    return ItemScores(items, r, r / r.max(), {e: i for i, e in enumerate(items)})


def assign_rewards(episodes, scores: ItemScores, session_vec, target, model: ReksModel,
                   config: TrainConfig):
    """Vectorised terminal rewards; matches mdp.reward episode by episode."""
    parts = REWARD_VARIANTS[config.reward_parts]
    g, table = model.g, model.table
    X, E = table.matrix, table.num_entities
    live = [ep for ep in episodes if not ep.dead_end and target is not None]
    for ep in episodes:
        ep.reward, ep.ret = ZERO_REWARD, 0.0
    if not live:
        return
    by_len: dict[int, list] = {}
    for ep in live:
        by_len.setdefault(len(ep.path), []).append(ep)
    for eps in by_len.values():
        idx = np.array([ep.path for ep in eps], dtype=np.int64)
        idx[:, 1::2] += E
        P = X[idx].mean(axis=1)
        term = idx[:, -1]
        is_prod = np.array([g.is_product(int(t)) for t in term])
        r_item = np.where(term == target, 1.0,
                          np.where(is_prod, sigmoid(X[term] @ X[target]), 0.0))
        rank = np.array([scores.ranks.get(int(t), 0) for t in term], dtype=float)
        r_rank = np.where(is_prod, 1.0 / np.log2(rank + 2.0), 0.0)
        r_path = sigmoid(P @ session_vec)
        total = np.zeros(len(eps))
        if "item" in parts:
            total += r_item
        if "rank" in parts:
            total += 2.0 ** r_rank
        if "path" in parts:
            total += r_path
        for i, ep in enumerate(eps):
            ep.reward = RewardBreakdown(float(r_item[i]), float(r_rank[i]), float(r_path[i]),
                                        float(total[i]))
            ep.ret = config.gamma ** (ep.hops - 1) * ep.reward.total


def reinforce_loss(episodes, baseline: Baseline, gamma: float | None = None, update: bool = True):
    """-mean((G - b) * sum log pi); returns (loss, per-episode d loss / d sum-log-pi).

    With ``gamma`` given the return is recomputed from each episode's
    reward; otherwise the stored ``ret`` is used. The baseline is read
    before it is updated with the batch mean return.
    """
    if not episodes:
        return 0.0, np.zeros(0)
    if gamma is not None:
        for ep in episodes:
            ep.ret = 0.0 if ep.dead_end else gamma ** (ep.hops - 1) * ep.reward.total
    G = np.array([ep.ret for ep in episodes])
    slp = np.array([sum(ep.log_probs) for ep in episodes])
    adv = G - baseline.value
    n = len(episodes)
    loss = float(-(adv * slp).sum() / n)
    if update:
        baseline.update(float(G.mean()))
    return loss, -adv / n


def cross_entropy_loss(item_scores, target) -> tuple[float, dict]:
    """Binary cross-entropy over candidate items; returns (loss, dL/dscore).

    ``item_scores`` maps item -> predicted score in [0, 1]. Scores are
    clamped to [eps, 1 - eps]; the clamp has zero gradient where active.
    """
    loss, grad = 0.0, {}
    for j, s in item_scores.items():
        y = 1.0 if j == target else 0.0
        c = min(max(s, CE_EPS), 1.0 - CE_EPS)
        loss -= y * np.log(c) + (1.0 - y) * np.log(1.0 - c)
        inside = CE_EPS < s < 1.0 - CE_EPS
        grad[j] = (-y / c + (1.0 - y) / (1.0 - c)) if inside else 0.0
    return float(loss), grad


def ce_episode_coeffs(episodes, scores: ItemScores, dscore: dict, normalized=True) -> np.ndarray:
    """Chain dL/dscore through score = raw / max(raw) into d/d(sum log pi)."""
    coeffs = np.zeros(len(episodes))
    if not len(scores):
        return coeffs
    if not normalized:
        for i, ep in enumerate(episodes):
            if not ep.dead_end and ep.terminal in dscore:
                coeffs[i] = dscore[ep.terminal] * ep.prob
        return coeffs
    top = scores.items[0]
    rmax = scores.raw[0]
    draw = {j: dscore.get(j, 0.0) / rmax for j in scores.items}
    draw[top] -= sum(dscore.get(j, 0.0) * scores.raw[i] for i, j in enumerate(scores.items)) / rmax ** 2
    for i, ep in enumerate(episodes):
        if not ep.dead_end and ep.terminal in draw:
            coeffs[i] = draw[ep.terminal] * ep.prob
    return coeffs


@dataclass
class SessionRollout:
    """Everything sampled for one session; losses are recomputable from it."""

    session: object
    tree: PathTree
    episodes: list
    scores: ItemScores
    target: int | None

    def replay(self, model: ReksModel) -> "SessionRollout":
        """Recompute log-probs for the same walks under the current parameters."""
        tree = PathTree(model, self.session, mask=self.tree.mask)
        eps = []
        for ep in self.episodes:
            steps = tree.path_steps(ep.path)
            lps = [float(n.logp[a]) for n, a in steps]
            eps.append(Episode(ep.path, lps, ep.terminal, ep.dead_end, ep.reward, ep.ret, tree, steps))
        return SessionRollout(self.session, tree, eps, score_items(eps, model.g), self.target)


def collect(model: ReksModel, session, config: TrainConfig, rng) -> SessionRollout:
    tree = PathTree(model, session, rng=rng, train=True)
    episodes = rollout_batch(model, session, config, rng, tree=tree)
    if not episodes:
        raise SkipSession("start entity is a dead end")
    scores = score_items(episodes, model.g)
    target = model.target_entity(session)
    assign_rewards(episodes, scores, tree.session_vec, target, model, config)
    return SessionRollout(session, tree, episodes, scores, target)


def batch_objective(rollouts, baseline_value: float, beta: float, use_reward=True, use_ce=True,
                    grads: dict | None = None, ce_scores: str = "raw") -> dict:
    """Loss parts of a batch; when ``grads`` is given, add gradients into it.

    L = beta * L_r + L_ce with L_r averaged over all episodes of the batch
    and L_ce averaged over sessions whose target was reached.
    """
    all_eps = [ep for ro in rollouts for ep in ro.episodes]
    lr_loss, r_coeff = reinforce_loss(all_eps, Baseline(baseline_value), update=False)
    ce_total, ce_sessions = 0.0, 0
    ce_coeffs = []
    for ro in rollouts:
        if ro.target is not None and ro.target in ro.scores.ranks:
            norm = ce_scores == "max"
            sc = ro.scores.as_dict() if norm else dict(zip(ro.scores.items, ro.scores.raw.tolist()))
            loss, dscore = cross_entropy_loss(sc, ro.target)
            ce_total += loss
            ce_sessions += 1
            ce_coeffs.append(ce_episode_coeffs(ro.episodes, ro.scores, dscore, norm))
        else:
            ce_coeffs.append(None)
    l_ce = ce_total / ce_sessions if ce_sessions else 0.0
    w_r = beta if use_reward else 0.0
    w_ce = 1.0 if use_ce else 0.0
    total = w_r * lr_loss + w_ce * l_ce
    if grads is not None:
        offset = 0
        for ro, cc in zip(rollouts, ce_coeffs):
            k = len(ro.episodes)
            coeff = w_r * r_coeff[offset:offset + k]
            if cc is not None and ce_sessions:
                coeff = coeff + (w_ce / ce_sessions) * cc
            offset += k
            ro.tree.accumulate_many([ep.steps for ep in ro.episodes], coeff.tolist())
            ro.tree.backward(grads)
    return {"loss": total, "L_r": lr_loss, "L_ce": l_ce, "ce_sessions": ce_sessions}


class Optimizer:
    def __init__(self, params: dict, kind="sgd", lr=0.001, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.kind = kind
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict):
        self.t += 1
        b1, b2 = self.betas
        for k, p in self.params.items():
            g = grads[k]
            if self.kind == "sgd":
                p -= self.lr * g
                continue
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / (1 - b1 ** self.t)
            vhat = self.v[k] / (1 - b2 ** self.t)
            p -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class TrainReport:
    epoch: int
    L_r: float
    L_ce: float
    L: float
    mean_reward: float
    skipped_sessions: int
    ce_skipped: int = 0
    hit_rate: float = 0.0

    def to_dict(self):
        return asdict(self)


class Trainer:
    """Holds optimizer, baseline and RNG state across epochs."""

    def __init__(self, model: ReksModel, config: TrainConfig):
        self.model = model
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.baseline = Baseline(0.0, config.baseline_decay)
        self.optimizer = Optimizer(model.parameters(), config.optimizer, config.lr)
        self.epoch = 0

    def train_step(self, sessions) -> dict:
        cfg = self.config
        model = self.model
        rollouts, skipped = [], 0
        for s in sessions:
            try:
                rollouts.append(collect(model, s, cfg, self.rng))
            except SkipSession:
                skipped += 1
        stats = {"skipped": skipped, "rollouts": rollouts}
        if not rollouts:
            return stats | {"loss": 0.0, "L_r": 0.0, "L_ce": 0.0, "ce_sessions": 0}
        grads = zero_grads(model)
        parts = batch_objective(rollouts, self.baseline.value, cfg.beta,
                                use_reward=cfg.loss != "C", use_ce=cfg.loss != "R", grads=grads,
                                ce_scores=cfg.ce_scores)
        self.optimizer.step(grads)
        G = [ep.ret for ro in rollouts for ep in ro.episodes]
        self.baseline.update(float(np.mean(G)))
        return stats | parts

    def train_epoch(self, sessions) -> TrainReport:
        if not sessions:
            raise ValueError("empty training set")
        cfg = self.config
        order = self.rng.permutation(len(sessions))
        sums = {"L_r": 0.0, "L_ce": 0.0, "loss": 0.0}
        n_batches = skipped = ce_skipped = hits = used = 0
        rewards = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [sessions[i] for i in order[start:start + cfg.batch_size]]
            out = self.train_step(batch)
            skipped += out["skipped"]
            ros = out["rollouts"]
            if not ros:
                continue
            n_batches += 1
            for k in sums:
                sums[k] += out[k]
            ce_skipped += len(ros) - out["ce_sessions"]
            for ro in ros:
                used += 1
                hits += int(ro.target is not None and ro.target in ro.scores.ranks)
                rewards.extend(ep.reward.total for ep in ro.episodes)
        self.epoch += 1
        nb = max(n_batches, 1)
        report = TrainReport(
            epoch=self.epoch,
            L_r=sums["L_r"] / nb,
            L_ce=sums["L_ce"] / nb,
            L=sums["loss"] / nb,
            mean_reward=float(np.mean(rewards)) if rewards else 0.0,
            skipped_sessions=skipped,
            ce_skipped=ce_skipped,
            hit_rate=hits / used if used else 0.0,
        )
        log.info("epoch %d L=%.4f L_r=%.4f L_ce=%.4f reward=%.4f", report.epoch, report.L,
                 report.L_r, report.L_ce, report.mean_reward)
        return report

    def state(self) -> dict:
        return {"baseline": self.baseline.value, "epoch": self.epoch,
                "rng": self.rng.bit_generator.state, "optimizer_t": self.optimizer.t}


def train_epoch(model: ReksModel, train_sessions, config: TrainConfig, trainer: Trainer | None = None) -> TrainReport:
    trainer = trainer or Trainer(model, config)
    return trainer.train_epoch(train_sessions)


def fit(model: ReksModel, train_sessions, config: TrainConfig, callback=None) -> list[TrainReport]:
    trainer = Trainer(model, config)
    reports = []
    for _ in range(config.epochs):
        reports.append(trainer.train_epoch(train_sessions))
        if callback is not None:
            callback(trainer, reports[-1])
    model.trainer_state = trainer.state()
    return reports
