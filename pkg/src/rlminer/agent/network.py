"""State-value network: token embedding, stacked bidirectional LSTM, mean
pooling and a sigmoid head. Forward and backward passes are written out in
numpy so the whole model can be checked against finite differences.

A batch passed to :meth:`ValueNetwork.forward` holds sequences of one
length; :meth:`ValueNetwork.value` groups mixed-length batches, so pooling
always averages over real positions only.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import BinaryIO, Iterable

import numpy as np

CHECKPOINT_MAGIC = b"RLMVNET"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkShape:
    vocab_size: int  # |Γ| + 2 (separator and mask tokens)
    token_dim: int = 32
    hidden: int = 64
    layers: int = 1

    @property
    def output_dim(self) -> int:
        return 2 * self.hidden

    @classmethod
    def paper(cls, vocab_size: int) -> "NetworkShape":
        return cls(vocab_size, token_dim=256, hidden=512, layers=1)


def _param_names(shape: NetworkShape) -> list[str]:
    names = ["embed"]
    for layer in range(shape.layers):
        for d in ("f", "b"):
            names += [f"Wx{layer}{d}", f"Wh{layer}{d}", f"b{layer}{d}"]
    return names + ["W", "bias"]


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class ValueNetwork:
    def __init__(self, shape: NetworkShape, seed: int | np.random.Generator = 0,
                 dtype=np.float64):
        self.shape = shape
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        h = shape.hidden
        p = {"embed": rng.normal(0.0, 0.1, (shape.vocab_size, shape.token_dim))}
        for layer in range(shape.layers):
            d_in = shape.token_dim if layer == 0 else 2 * h
            for d in ("f", "b"):
                p[f"Wx{layer}{d}"] = rng.uniform(-1, 1, (d_in, 4 * h)) / np.sqrt(d_in)
                p[f"Wh{layer}{d}"] = rng.uniform(-1, 1, (h, 4 * h)) / np.sqrt(h)
                b = np.zeros(4 * h)
                b[h:2 * h] = 1.0  # forget gate
                p[f"b{layer}{d}"] = b
        p["W"] = rng.uniform(-1, 1, shape.output_dim) / np.sqrt(shape.output_dim)
        p["bias"] = np.zeros(1)
        self.params = {k: v.astype(self.dtype) for k, v in p.items()}

    # -- LSTM pieces -----------------------------------------------------------

    def _lstm(self, x, Wx, Wh, b, reverse):
        n, t_len, _ = x.shape
        h_dim = Wh.shape[0]
        xw = x @ Wx + b                     # (n, T, 4h)
        h = np.zeros((n, h_dim), self.dtype)
        c = np.zeros((n, h_dim), self.dtype)
        hs = np.empty((n, t_len, h_dim), self.dtype)
        steps = []
        order = range(t_len - 1, -1, -1) if reverse else range(t_len)
        for t in order:
            z = xw[:, t] + h @ Wh
            gates = _sigmoid(z[:, :3 * h_dim])
            i = gates[:, :h_dim]
            f = gates[:, h_dim:2 * h_dim]
            o = gates[:, 2 * h_dim:]
            g = np.tanh(z[:, 3 * h_dim:])
            c_prev, h_prev = c, h
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h = o * tc
            hs[:, t] = h
            steps.append((t, i, f, o, g, c_prev, h_prev, tc))
        return hs, steps

    def _lstm_back(self, x, Wx, Wh, steps, dhs):
        h_dim = Wh.shape[0]
        n = x.shape[0]
        dxw = np.zeros(x.shape[:2] + (4 * h_dim,), self.dtype)
        dWh = np.zeros_like(Wh)
        dh_next = np.zeros((n, h_dim), self.dtype)
        dc_next = np.zeros((n, h_dim), self.dtype)
        for t, i, f, o, g, c_prev, h_prev, tc in reversed(steps):
            dh = dhs[:, t] + dh_next
            do = dh * tc
            dc = dh * o * (1 - tc * tc) + dc_next
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            dc_next = dc * f
            dz = np.concatenate([di * i * (1 - i), df * f * (1 - f),
                                 do * o * (1 - o), dg * (1 - g * g)], axis=1)
            dxw[:, t] = dz
            dWh += h_prev.T @ dz
            dh_next = dz @ Wh.T
        dx = dxw @ Wx.T
        dWx = np.einsum("ntd,ntg->dg", x, dxw)
        db = dxw.sum(axis=(0, 1))
        return dx, dWx, dWh, db

    # -- public passes -----------------------------------------------------------

    def forward(self, tokens: np.ndarray, keep_cache: bool = False):
        """Values for an ``(N, T)`` integer token array of one sequence length."""
        p = self.params
        tokens = np.asarray(tokens)
        x = p["embed"][tokens]
        cache = {"tokens": tokens, "inputs": [], "steps": []}
        for layer in range(self.shape.layers):
            outs = []
            for d in ("f", "b"):
                hs, steps = self._lstm(x, p[f"Wx{layer}{d}"], p[f"Wh{layer}{d}"],
                                       p[f"b{layer}{d}"], reverse=(d == "b"))
                outs.append(hs)
                cache["steps"].append(steps)
            cache["inputs"].append(x)
            x = np.concatenate(outs, axis=2)
        pooled = x.mean(axis=1)
        v = _sigmoid(pooled @ p["W"] + p["bias"][0])
        if keep_cache:
            cache["pooled"] = pooled
            cache["v"] = v
            return v, cache
        return v

    def backward(self, cache, dv: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of ``sum(dv * v)`` with respect to every parameter."""
        p = self.params
        v = cache["v"]
        dz = dv * v * (1 - v)
        grads = {"W": cache["pooled"].T @ dz, "bias": np.array([dz.sum()], self.dtype)}
        t_len = cache["tokens"].shape[1]
        dx = np.repeat((dz[:, None] * p["W"][None, :] / t_len)[:, None, :], t_len, axis=1)
        h = self.shape.hidden
        for layer in reversed(range(self.shape.layers)):
            x = cache["inputs"][layer]
            d_in = np.zeros_like(x)
            for k, d in enumerate(("f", "b")):
                steps = cache["steps"][2 * layer + k]
                dhs = dx[:, :, k * h:(k + 1) * h]
                ddx, dWx, dWh, db = self._lstm_back(x, p[f"Wx{layer}{d}"], p[f"Wh{layer}{d}"],
                                                    steps, dhs)
                d_in += ddx
                grads[f"Wx{layer}{d}"] = dWx
                grads[f"Wh{layer}{d}"] = dWh
                grads[f"b{layer}{d}"] = db
            dx = d_in
        g_embed = np.zeros_like(p["embed"])
        np.add.at(g_embed, cache["tokens"].ravel(), dx.reshape(-1, dx.shape[-1]))
        grads["embed"] = g_embed
        return grads

    def value(self, sequences: Iterable[Iterable[int]]) -> np.ndarray:
        """Values for token sequences of possibly different lengths, in input order."""
        seqs = [tuple(s) for s in sequences]
        out = np.empty(len(seqs), self.dtype)
        for length, idx in _group_by_length(seqs).items():
            out[idx] = self.forward(np.array([seqs[i] for i in idx], dtype=np.int64))
        return out

    def value_and_grad(self, sequences, dv_fn):
        """Forward every length group, let ``dv_fn(values)`` return per-item
        upstream gradients, and accumulate parameter gradients."""
        seqs = [tuple(s) for s in sequences]
        groups = _group_by_length(seqs)
        values = np.empty(len(seqs), self.dtype)
        caches = {}
        for length, idx in groups.items():
            values[idx], caches[length] = self.forward(
                np.array([seqs[i] for i in idx], dtype=np.int64), keep_cache=True)
        dv = np.asarray(dv_fn(values), self.dtype)
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        for length, idx in groups.items():
            for k, g in self.backward(caches[length], dv[idx]).items():
                grads[k] += g
        return values, grads

    # -- persistence ------------------------------------------------------------

    def copy(self) -> "ValueNetwork":
        other = ValueNetwork.__new__(ValueNetwork)
        other.shape, other.dtype = self.shape, self.dtype
        other.params = {k: v.copy() for k, v in self.params.items()}
        return other

    def save(self, path: str | Path | BinaryIO, fingerprint: str = "", tokens: dict | None = None):
        """Binary checkpoint: header JSON (shape, token table, config fingerprint)
        followed by float32 little-endian parameters in a fixed order."""
        if not hasattr(path, "write"):
            with open(path, "wb") as fh:
                return self.save(fh, fingerprint, tokens)
        header = json.dumps({"shape": asdict(self.shape), "fingerprint": fingerprint,
                             "tokens": tokens or {}}, sort_keys=True).encode("utf-8")
        path.write(CHECKPOINT_MAGIC + struct.pack("<HI", CHECKPOINT_VERSION, len(header)))
        path.write(header)
        for name in _param_names(self.shape):
            path.write(np.ascontiguousarray(self.params[name], dtype="<f4").tobytes())

    @classmethod
    def load(cls, path: str | Path | BinaryIO, dtype=np.float64) -> tuple["ValueNetwork", dict]:
        if not hasattr(path, "read"):
            with open(path, "rb") as fh:
                return cls.load(fh, dtype)
        if path.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise ValueError("not a value-network checkpoint")
        version, n = struct.unpack("<HI", path.read(6))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(path.read(n).decode("utf-8"))
        net = cls(NetworkShape(**header["shape"]), seed=0, dtype=dtype)
        for name in _param_names(net.shape):
            ref = net.params[name]
            raw = np.frombuffer(path.read(4 * ref.size), dtype="<f4")
            net.params[name] = raw.reshape(ref.shape).astype(net.dtype)
        return net, header


def _group_by_length(seqs) -> dict[int, np.ndarray]:
    groups: dict[int, list[int]] = {}
    for i, s in enumerate(seqs):
        groups.setdefault(len(s), []).append(i)
    return {k: np.array(v) for k, v in sorted(groups.items())}


class RMSprop:
    """Keras-style RMSprop (decay 0.9, eps 1e-7)."""

    def __init__(self, params: dict[str, np.ndarray], learning_rate: float = 1e-3,
                 rho: float = 0.9, eps: float = 1e-7):
        self.lr, self.rho, self.eps = learning_rate, rho, eps
        self.acc = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        for k, g in grads.items():
            a = self.acc[k]
            a *= self.rho
            a += (1 - self.rho) * g * g
            params[k] -= self.lr * g / (np.sqrt(a) + self.eps)
