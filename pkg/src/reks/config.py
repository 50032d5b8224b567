"""Run configuration: flat ``key = value`` files, overrides and fingerprints."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .evaluate import ConfigError
from .mdp import REWARD_VARIANTS
from .train import TrainConfig
from .transe import TransEConfig

# keys that locate files rather than change results
PATH_KEYS = ("interactions", "metadata", "workdir")


@dataclass(frozen=True)
class RunConfig:
    interactions: str = "interactions.tsv"
    metadata: str = "metadata.jsonl"
    workdir: str = "."
    # data
    min_item_count: int = 5
    min_session_len: int = 2
    split: tuple = (0.75, 0.10, 0.15)
    user_info: bool = True
    # embeddings
    dim: int = 400
    transe_epochs: int = 100
    transe_lr: float = 0.01
    transe_margin: float = 1.0
    transe_negatives: int = 1
    transe_batch_size: int = 128
    # model
    encoder: str = "gru"
    d1: int = 0  # 0 means "same as dim"
    d2: int = 0
    start: str = "item"
    # training
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
    loss: str = "full"
    ce_scores: str = "raw"
    # inference / evaluation
    beam: tuple = (100, 1)
    topk: tuple = (5, 10, 20)
    exclude_seen: bool = False
    seed: int = 0

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.dim, self.d1 or self.dim, self.d2 or self.dim

    def validate(self) -> "RunConfig":
        d0, d1, d2 = self.dims
        if min(d0, d1, d2) < 1:
            raise ConfigError("dimensions must be positive")
        if self.encoder not in ("gru", "mean"):
            raise ConfigError(f"encoder must be 'gru' or 'mean', got {self.encoder!r}")
        if self.encoder == "mean" and d1 != d0:
            raise ConfigError("the mean-pool encoder needs d1 == dim")
        if self.reward_parts not in REWARD_VARIANTS:
            raise ConfigError(f"reward_parts must be one of {sorted(REWARD_VARIANTS)}")
        if "path" in REWARD_VARIANTS[self.reward_parts] and d1 != d0:
            raise ConfigError("the path reward compares path and session vectors: needs d1 == dim")
        if self.start not in ("item", "user"):
            raise ConfigError("start must be 'item' or 'user'")
        if self.start == "user" and not self.user_info:
            raise ConfigError("start = user needs user_info = true")
        if len(self.split) != 3 or any(r < 0 for r in self.split) or abs(sum(self.split) - 1) > 1e-9:
            raise ConfigError("split must be three non-negative ratios summing to 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if any(k < 1 for k in self.topk) or any(w < 1 for w in self.beam):
            raise ConfigError("topk and beam widths must be >= 1")
        if self.min_session_len < 2:
            raise ConfigError("min_session_len must be >= 2 (a session needs a prefix and a target)")
        try:
            self.train_config()
            self.transe_config()
        except ValueError as e:
            raise ConfigError(str(e)) from None
        return self

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            path_length=self.path_length, sample_sizes=self.sample_sizes, gamma=self.gamma,
            beta=self.beta, lr=self.lr, batch_size=self.batch_size, epochs=self.epochs,
            dropout=self.dropout, baseline_decay=self.baseline_decay, optimizer=self.optimizer,
            reward_parts=self.reward_parts, loss=self.loss, ce_scores=self.ce_scores,
            seed=self.seed)

    def transe_config(self) -> TransEConfig:
        return TransEConfig(dim=self.dim, margin=self.transe_margin, lr=self.transe_lr,
                            epochs=self.transe_epochs, negatives=self.transe_negatives,
                            batch_size=self.transe_batch_size, seed=self.seed)

    def widths(self, path_length: int | None = None) -> tuple:
        """Beam widths, padded with 1 (or truncated) to the requested length."""
        n = self.path_length if path_length is None else path_length
        w = tuple(self.beam[:n])
        return w + (1,) * (n - len(w))

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def fingerprint(self) -> str:
        """Hash of every setting that can change results (file locations excluded)."""
        d = {k: v for k, v in self.to_dict().items() if k not in PATH_KEYS}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def path(self, key: str) -> Path:
        return Path(getattr(self, key))


_FIELDS = {f.name: f for f in fields(RunConfig)}
_DEFAULTS = RunConfig()


def coerce(key: str, value: str):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    proto = getattr(_DEFAULTS, key)
    text = value.strip()
    try:
        if isinstance(proto, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(proto, tuple):
            conv = float if isinstance(proto[0], float) else int
            return tuple(conv(x) for x in text.replace(" ", "").split(",") if x)
        if isinstance(proto, int):
            return int(text)
        if isinstance(proto, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None
    return text


def parse_config_text(text: str, source="<config>") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key = key.strip()
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = coerce(key, value)
    return out


def load_config(path=None, overrides: dict | None = None, env=None) -> RunConfig:
    """File < REKS_SEED < explicit overrides. Relative paths resolve against the file."""
    env = os.environ if env is None else env
    values = {}
    base = Path(".")
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        values = parse_config_text(path.read_text(encoding="utf-8"), str(path))
        base = path.parent
        for k in PATH_KEYS:
            if k in values and not Path(values[k]).is_absolute():
                values[k] = str(base / values[k])
        for k in PATH_KEYS:
            values.setdefault(k, str(base / getattr(_DEFAULTS, k)))
    if env.get("REKS_SEED"):
        values["seed"] = coerce("seed", env["REKS_SEED"])
    for k, v in (overrides or {}).items():
        if k not in _FIELDS:
            raise ConfigError(f"unknown config key {k!r}")
        values[k] = coerce(k, v) if isinstance(v, str) else v
    return replace(_DEFAULTS, **values).validate()


def format_config(cfg: RunConfig, keys=None) -> str:
    lines = []
    for k, v in cfg.to_dict().items():
        if keys is not None and k not in keys:
            continue
        if isinstance(v, list):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = str(v).lower()
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
