"""Session encoders with hand-written reverse-mode gradients.

Both encoders map a sequence of item-embedding rows to one session
vector. ``forward`` caches what ``backward`` needs; calling ``backward``
without a forward pass raises.
"""
from __future__ import annotations

import numpy as np

from . import io

GRU_PARAMS = ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru_step(x: np.ndarray, h: np.ndarray, params: dict) -> np.ndarray:
    """One GRU update; returns the new hidden state."""
    return _gru_step(x, h, params)[0]


def _gru_step(x, h, p):
    d_in, d_h = p["W_z"].shape[1], p["W_z"].shape[0]
    if x.shape != (d_in,) or h.shape != (d_h,):
        raise ValueError(f"gru_step shape mismatch: x{x.shape} h{h.shape}, "
                         f"expected ({d_in},) and ({d_h},)")
    z = sigmoid(p["W_z"] @ x + p["U_z"] @ h + p["b_z"])
    r = sigmoid(p["W_r"] @ x + p["U_r"] @ h + p["b_r"])
    rh = r * h
    c = np.tanh(p["W_h"] @ x + p["U_h"] @ rh + p["b_h"])
    h_new = (1.0 - z) * h + z * c
    return h_new, (x, h, z, r, rh, c)


def _gru_step_backward(dh_new, cache, p, grads):
    x, h, z, r, rh, c = cache
    dz = dh_new * (c - h)
    dc = dh_new * z
    dh = dh_new * (1.0 - z)

    da_c = dc * (1.0 - c * c)
    grads["W_h"] += np.outer(da_c, x)
    grads["U_h"] += np.outer(da_c, rh)
    grads["b_h"] += da_c
    drh = p["U_h"].T @ da_c
    dr = drh * h
    dh += drh * r

    da_r = dr * r * (1.0 - r)
    grads["W_r"] += np.outer(da_r, x)
    grads["U_r"] += np.outer(da_r, h)
    grads["b_r"] += da_r

    da_z = dz * z * (1.0 - z)
    grads["W_z"] += np.outer(da_z, x)
    grads["U_z"] += np.outer(da_z, h)
    grads["b_z"] += da_z

    dx = p["W_z"].T @ da_z + p["W_r"].T @ da_r + p["W_h"].T @ da_c
    dh += p["U_z"].T @ da_z + p["U_r"].T @ da_r
    return dx, dh


class SessionEncoder:
    """Base class: subclasses fill ``params`` and implement _forward/_backward."""

    kind = "base"

    def __init__(self, in_dim: int, out_dim: int, dropout: float = 0.0):
        if not 0.0 <= dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.dropout = dropout
        self.params: dict[str, np.ndarray] = {}
        self._cache = None

    def dropout_mask(self, length: int, rng) -> np.ndarray | None:
        if self.dropout <= 0.0 or rng is None:
            return None
        keep = 1.0 - self.dropout
        return (rng.random((length, self.in_dim)) < keep) / keep

    def forward(self, x: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
        """Encode rows ``x`` (length x in_dim); ``mask`` is an inverted-dropout mask."""
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[0] == 0:
            raise ValueError("cannot encode an empty session")
        if x.shape[1] != self.in_dim:
            raise ValueError(f"expected item rows of width {self.in_dim}, got {x.shape[1]}")
        xin = x * mask if mask is not None else x
        out, cache = self._forward(xin)
        self._cache = (cache, mask)
        return out

    def backward(self, upstream: np.ndarray, cache=None) -> tuple[dict, np.ndarray]:
        """Gradients of <upstream, output> w.r.t. params and the item rows.

        ``cache`` defaults to the one left by the latest forward call; pass
        ``last_cache`` from an earlier call to backprop an older pass.
        """
        if cache is None:
            cache = self._cache
        if cache is None:
            raise RuntimeError("backward called before forward")
        cache, mask = cache
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        dx = self._backward(np.asarray(upstream, dtype=float), cache, grads)
        if mask is not None:
            dx = dx * mask
        return grads, dx

    @property
    def last_cache(self):
        return self._cache

    def _forward(self, x):
        raise NotImplementedError

    def _backward(self, upstream, cache, grads):
        raise NotImplementedError

    # -- checkpoint ---------------------------------------------------------
    def header(self) -> dict:
        return {"kind": self.kind, "in_dim": self.in_dim, "out_dim": self.out_dim,
                "dropout": self.dropout}

    def save(self, path, **extra):
        io.write_blob(path, {**self.header(), **extra}, self.params)

    @staticmethod
    def load(path) -> "SessionEncoder":
        header, arrays = io.read_blob(path)
        enc = make_encoder(header["kind"], header["in_dim"], header["out_dim"],
                           dropout=header["dropout"])
        enc.params.update(arrays)
        return enc


class MeanPoolEncoder(SessionEncoder):
    kind = "mean"

    def __init__(self, in_dim: int, out_dim: int | None = None, dropout: float = 0.0):
        out_dim = in_dim if out_dim is None else out_dim
        if out_dim != in_dim:
            raise ValueError("mean-pool encoder needs out_dim == in_dim")
        super().__init__(in_dim, out_dim, dropout)

    def _forward(self, x):
        return x.mean(axis=0), x.shape[0]

    def _backward(self, upstream, length, grads):
        return np.tile(upstream / length, (length, 1))


class GruEncoder(SessionEncoder):
    """Final hidden state of a GRU run over the session, from a zero state."""

    kind = "gru"

    def __init__(self, in_dim: int, out_dim: int, dropout: float = 0.0, seed: int = 0,
                 scale: float | None = None):
        super().__init__(in_dim, out_dim, dropout)
        rng = np.random.default_rng(seed)
        s = 1.0 / np.sqrt(out_dim) if scale is None else scale
        for gate in "zrh":
            self.params[f"W_{gate}"] = rng.uniform(-s, s, (out_dim, in_dim))
            self.params[f"U_{gate}"] = rng.uniform(-s, s, (out_dim, out_dim))
            self.params[f"b_{gate}"] = np.zeros(out_dim)

    def _forward(self, x):
        h = np.zeros(self.out_dim)
        caches = []
        for row in x:
            h, c = _gru_step(row, h, self.params)
            caches.append(c)
        return h, caches

    def _backward(self, upstream, caches, grads):
        dx = np.zeros((len(caches), self.in_dim))
        dh = upstream
        for i in range(len(caches) - 1, -1, -1):
            dx[i], dh = _gru_step_backward(dh, caches[i], self.params, grads)
        return dx


def make_encoder(kind: str, in_dim: int, out_dim: int, dropout: float = 0.0, seed: int = 0) -> SessionEncoder:
    if kind == "mean":
        return MeanPoolEncoder(in_dim, out_dim, dropout)
    if kind == "gru":
        return GruEncoder(in_dim, out_dim, dropout, seed)
    raise ValueError(f"unknown encoder kind {kind!r}; expected 'mean' or 'gru'")


def encode_session(encoder: SessionEncoder, session_items, table, mask=None) -> np.ndarray:
    """Encode product entity indices through their embedding rows."""
    idx = np.asarray(session_items, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("cannot encode an empty session")
    return encoder.forward(table.matrix[idx], mask)


def encoder_backward(encoder: SessionEncoder, upstream) -> tuple[dict, np.ndarray]:
    return encoder.backward(upstream)
