"""Raw interaction / metadata parsing, sessionization and splitting."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Malformed or unusable input data."""


@dataclass(frozen=True)
class Interaction:
    user_id: str
    item_id: str
    timestamp: int

    def __post_init__(self):
        if not self.user_id or not self.item_id:
            raise DataError("empty user or item id")
        if self.timestamp < 0:
            raise DataError(f"negative timestamp {self.timestamp}")


@dataclass(frozen=True)
class ItemMetadata:
    item_id: str
    brand: str | None = None
    categories: tuple[str, ...] = ()
    also_bought: tuple[str, ...] = ()
    also_viewed: tuple[str, ...] = ()
    bought_together: tuple[str, ...] = ()


@dataclass(frozen=True)
class Session:
    user_id: str
    items: tuple[str, ...]
    target: str
    session_id: str = ""

    @property
    def last_item(self) -> str:
        return self.items[-1]

    def to_dict(self) -> dict:
        return {"session_id": self.session_id, "user": self.user_id,
                "items": list(self.items), "target": self.target}

    @classmethod
    def from_dict(cls, d: dict) -> "Session":
        return cls(d["user"], tuple(d["items"]), d["target"], d.get("session_id", ""))


@dataclass
class DatasetSplit:
    train: list[Session]
    validation: list[Session]
    test: list[Session]
    seed: int
    summary: dict = field(default_factory=dict)

    def all_sessions(self) -> list[Session]:
        return self.train + self.validation + self.test

    def vocabulary(self) -> list[str]:
        """Items in first-seen order over train, validation, test."""
        seen: dict[str, None] = {}
        for s in self.all_sessions():
            for it in (*s.items, s.target):
                seen.setdefault(it, None)
        return list(seen)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "summary": self.summary,
            "train": [s.to_dict() for s in self.train],
            "validation": [s.to_dict() for s in self.validation],
            "test": [s.to_dict() for s in self.test],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSplit":
        conv = lambda rows: [Session.from_dict(r) for r in rows]  # noqa: E731
        return cls(conv(d["train"]), conv(d["validation"]), conv(d["test"]),
                   int(d["seed"]), d.get("summary", {}))


def parse_interactions(path) -> list[Interaction]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
            user, item, ts = parts
            try:
                out.append(Interaction(user, item, int(ts)))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return out


def _unique(seq) -> tuple[str, ...]:
    return tuple(dict.fromkeys(str(x) for x in seq))


def parse_metadata(path) -> list[ItemMetadata]:
    """One JSON object per line; absent keys mean empty."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: {exc.msg}") from None
            if "item" not in obj:
                raise DataError(f"{path}:{lineno}: missing 'item'")
            brand = obj.get("brand")
            out.append(ItemMetadata(
                item_id=str(obj["item"]),
                brand=str(brand) if brand not in (None, "") else None,
                categories=_unique(obj.get("categories", ())),
                also_bought=_unique(obj.get("also_bought", ())),
                also_viewed=_unique(obj.get("also_viewed", ())),
                bought_together=_unique(obj.get("bought_together", ())),
            ))
    return out


def _utc_day(ts: int) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%d")


def sessionize(interactions, min_item_count: int = 5, min_session_len: int = 2) -> list[Session]:
    """Group each user's interactions by UTC calendar day.

    Rare items are removed before grouping. The last item of each kept
    group is held out as the target.
    """
    counts = Counter(it.item_id for it in interactions)
    kept = [it for it in interactions if counts[it.item_id] >= min_item_count]
    # stable sort keeps input order for equal timestamps
    kept.sort(key=lambda it: (it.user_id, it.timestamp))

    sessions = []
    group: list[Interaction] = []
    key = None

    def flush():
        if len(group) >= max(min_session_len, 2):
            items = tuple(it.item_id for it in group)
            sid = f"{group[0].user_id}@{key[1]}"
            sessions.append(Session(group[0].user_id, items[:-1], items[-1], sid))

    for it in kept:
        k = (it.user_id, _utc_day(it.timestamp))
        if k != key:
            if group:
                flush()
            group, key = [], k
        group.append(it)
    if group:
        flush()
    return sessions


def split_sizes(n: int, ratios) -> list[int]:
    """Floor each share, then hand the remainder out by largest fraction."""
    raw = [n * r for r in ratios]
    sizes = [int(np.floor(x + 1e-9)) for x in raw]
    rest = n - sum(sizes)
    order = sorted(range(len(ratios)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[:rest]:
        sizes[i] += 1
    return sizes


def split_sessions(sessions, ratios=(0.75, 0.10, 0.15), seed: int = 0) -> DatasetSplit:
    if abs(sum(ratios) - 1.0) > 1e-9 or len(ratios) != 3:
        raise ValueError(f"ratios must be three shares summing to 1, got {ratios}")
    sessions = list(sessions)
    if len(sessions) < 3:
        raise DataError(f"need at least 3 sessions to split, got {len(sessions)}")
    n_train, n_val, _ = split_sizes(len(sessions), ratios)
    perm = np.random.default_rng(seed).permutation(len(sessions))
    picked = [sessions[i] for i in perm]
    return DatasetSplit(
        train=picked[:n_train],
        validation=picked[n_train:n_train + n_val],
        test=picked[n_train + n_val:],
        seed=seed,
    )


def load_dataset(interactions_path, metadata_path=None, *, min_item_count=5,
                 min_session_len=2, ratios=(0.75, 0.10, 0.15), seed=0):
    """Parse, sessionize and split; returns (split, metadata)."""
    inter = parse_interactions(interactions_path)
    meta = parse_metadata(metadata_path) if metadata_path and Path(metadata_path).exists() else []
    sessions = sessionize(inter, min_item_count, min_session_len)
    split = split_sessions(sessions, ratios, seed)
    counts = Counter(it.item_id for it in inter)
    split.summary = {
        "interactions": len(inter),
        "items_raw": len(counts),
        "items_kept": sum(1 for c in counts.values() if c >= min_item_count),
        "sessions": len(sessions),
        "train": len(split.train),
        "validation": len(split.validation),
        "test": len(split.test),
    }
    return split, meta
