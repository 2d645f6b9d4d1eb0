"""The twin-tower similarity network.

Both tiles of a pair pass through one shared convolutional tower (weight
tying); the tower embeddings are concatenated with embedded categorical flags
and standardized continuous differences, and a sigmoid MLP head produces the
pair similarity score. The last hidden activation (width 50 by default) is the
latent vector reused by the latent-space forest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from landval.neural import layers as L

CHECKPOINT_FORMAT = "landval-similarity-net"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    side: int = 64
    tower_widths: tuple[int, ...] = (16, 32, 64, 128)
    n_cat: int = 0
    cat_vocab: int = 2  # same/different flags
    n_cont: int = 1
    hidden: tuple[int, ...] = (400, 200, 100, 50)
    dropout: float = 0.07
    freeze_blocks: int = 0
    symmetrize: bool = False
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.side % (2 ** len(self.tower_widths)) != 0:
            raise ValueError("side must be divisible by 2**n_blocks")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.freeze_blocks > len(self.tower_widths):
            raise ValueError("freeze_blocks exceeds block count")

    @property
    def cat_dim(self) -> int:
        # min(16, ceil(vocab/2)) per categorical feature
        return min(16, (self.cat_vocab + 1) // 2)

    @property
    def tower_out(self) -> int:
        return self.tower_widths[-1]

    @property
    def head_in(self) -> int:
        return 2 * self.tower_out + self.n_cat * self.cat_dim + self.n_cont

    @property
    def latent_width(self) -> int:
        return self.hidden[-1] if self.hidden else self.head_in


@dataclass
class Batch:
    tiles_p: np.ndarray  # (N, S, S, 3) float in [0, 1]
    tiles_n: np.ndarray
    cat: np.ndarray  # (N, n_cat) int
    cont: np.ndarray  # (N, n_cont) float

    def __len__(self) -> int:
        return self.tiles_p.shape[0]


def _he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class SimilarityNet:
    def __init__(self, cfg: NetConfig):
        self.cfg = cfg
        self.dtype = np.dtype(cfg.dtype)
        self.training = False
        self.params: dict[str, np.ndarray] = {}
        self.norm = L.RunningNorm(cfg.n_cont, dtype=self.dtype)
        self._init_params()

    def _init_params(self) -> None:
        cfg = self.cfg
        rng = np.random.default_rng(cfg.seed)
        c_in = 3
        for i, width in enumerate(cfg.tower_widths):
            self.params[f"tower.b{i}.W"] = _he_normal(rng, (3, 3, c_in, width), c_in * 9, self.dtype)
            self.params[f"tower.b{i}.b"] = np.zeros(width, dtype=self.dtype)
            c_in = width
        for j in range(cfg.n_cat):
            # +1 row for out-of-vocabulary ids
            self.params[f"emb.{j}.table"] = rng.uniform(
                -0.05, 0.05, size=(cfg.cat_vocab + 1, cfg.cat_dim)
            ).astype(self.dtype)
        d_in = cfg.head_in
        for k, width in enumerate(cfg.hidden):
            self.params[f"head.h{k}.W"] = _he_normal(rng, (width, d_in), d_in, self.dtype)
            self.params[f"head.h{k}.b"] = np.zeros(width, dtype=self.dtype)
            d_in = width
        self.params["head.out.W"] = _he_normal(rng, (1, d_in), d_in, self.dtype)
        self.params["head.out.b"] = np.zeros(1, dtype=self.dtype)

    # Frozen tower blocks receive no optimizer updates.
    def frozen_param_names(self) -> set[str]:
        out = set()
        for i in range(self.cfg.freeze_blocks):
            out.add(f"tower.b{i}.W")
            out.add(f"tower.b{i}.b")
        return out

    def train_mode(self) -> None:
        self.training = True
        self.norm.frozen = False

    def eval_mode(self) -> None:
        self.training = False
        self.norm.frozen = True

    # ---------------- tower ----------------

    def tower_forward(self, x: np.ndarray):
        caches = []
        h = x.astype(self.dtype, copy=False)
        for i in range(len(self.cfg.tower_widths)):
            W, b = self.params[f"tower.b{i}.W"], self.params[f"tower.b{i}.b"]
            h, c_conv = L.conv3x3_forward(h, W, b)
            h, c_relu = L.relu_forward(h)
            h, c_pool = L.maxpool2_forward(h)
            caches.append((c_conv, c_relu, c_pool))
        emb, c_gap = L.global_avg_pool_forward(h)
        return emb, (caches, c_gap)

    def tower_backward(self, demb: np.ndarray, cache, grads: dict[str, np.ndarray]) -> None:
        caches, c_gap = cache
        d = L.global_avg_pool_backward(demb, c_gap)
        # Nothing trainable sits below the frozen prefix, so backprop stops there.
        stop = self.cfg.freeze_blocks
        for i in reversed(range(len(self.cfg.tower_widths))):
            if i < stop:
                break
            c_conv, c_relu, c_pool = caches[i]
            d = L.maxpool2_backward(d, c_pool)
            d = L.relu_backward(d, c_relu)
            d, dW, db = L.conv3x3_backward(d, c_conv, self.params[f"tower.b{i}.W"])
            grads[f"tower.b{i}.W"] += dW
            grads[f"tower.b{i}.b"] += db

    # ---------------- full forward / backward ----------------

    def forward(self, batch: Batch, dropout_rng: np.random.Generator | None = None):
        """Returns (logits, latent, cache). Dropout fires only in training
        mode with an rng provided."""
        cfg = self.cfg
        e_p, cache_p = self.tower_forward(batch.tiles_p)
        e_n, cache_n = self.tower_forward(batch.tiles_n)
        if cfg.symmetrize:
            diff = e_p - e_n
            sgn = np.sign(diff)
            tower_part = np.concatenate([e_p + e_n, np.abs(diff)], axis=1)
        else:
            sgn = None
            tower_part = np.concatenate([e_p, e_n], axis=1)

        emb_parts, emb_caches = [], []
        for j in range(cfg.n_cat):
            table = self.params[f"emb.{j}.table"]
            ids = np.minimum(batch.cat[:, j], table.shape[0] - 1)
            out, c = L.embedding_forward(ids, table)
            emb_parts.append(out)
            emb_caches.append(c)
        cont, norm_cache = self.norm.forward(batch.cont.astype(self.dtype, copy=False))

        h = np.concatenate([tower_part] + emb_parts + [cont], axis=1)
        head_caches = []
        latent = h
        use_dropout = self.training and cfg.dropout > 0.0 and dropout_rng is not None
        for k in range(len(cfg.hidden)):
            W, b = self.params[f"head.h{k}.W"], self.params[f"head.h{k}.b"]
            h, c_lin = L.linear_forward(h, W, b)
            h, c_relu = L.relu_forward(h)
            if k == len(cfg.hidden) - 1:
                latent = h
            if use_dropout:
                h, c_drop = L.dropout_forward(h, cfg.dropout, dropout_rng)
            else:
                c_drop = None
            head_caches.append((c_lin, c_relu, c_drop))
        z, c_out = L.linear_forward(h, self.params["head.out.W"], self.params["head.out.b"])
        logits = z[:, 0]
        cache = (cache_p, cache_n, sgn, emb_caches, norm_cache, head_caches, c_out)
        return logits, latent, cache

    def backward(self, dlogits: np.ndarray, cache) -> dict[str, np.ndarray]:
        cfg = self.cfg
        cache_p, cache_n, sgn, emb_caches, norm_cache, head_caches, c_out = cache
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}

        d = dlogits[:, None].astype(self.dtype, copy=False)
        d, dW, db = L.linear_backward(d, c_out, self.params["head.out.W"])
        grads["head.out.W"] += dW
        grads["head.out.b"] += db
        for k in reversed(range(len(cfg.hidden))):
            c_lin, c_relu, c_drop = head_caches[k]
            d = L.dropout_backward(d, c_drop)
            d = L.relu_backward(d, c_relu)
            d, dW, db = L.linear_backward(d, c_lin, self.params[f"head.h{k}.W"])
            grads[f"head.h{k}.W"] += dW
            grads[f"head.h{k}.b"] += db

        t_out = 2 * cfg.tower_out
        d_tower = d[:, :t_out]
        d_rest = d[:, t_out:]
        for j in range(cfg.n_cat):
            dim = cfg.cat_dim
            grads[f"emb.{j}.table"] += L.embedding_backward(d_rest[:, :dim], emb_caches[j])
            d_rest = d_rest[:, dim:]
        # Continuous gradient stops at the data; normalizer has no parameters.
        _ = self.norm.backward(d_rest, norm_cache)

        half = cfg.tower_out
        if cfg.symmetrize:
            d_sum, d_abs = d_tower[:, :half], d_tower[:, half:]
            d_ep = d_sum + d_abs * sgn
            d_en = d_sum - d_abs * sgn
        else:
            d_ep, d_en = d_tower[:, :half], d_tower[:, half:]
        self.tower_backward(np.ascontiguousarray(d_ep), cache_p, grads)
        self.tower_backward(np.ascontiguousarray(d_en), cache_n, grads)
        return grads

    def loss_on_batch(self, batch: Batch, labels: np.ndarray) -> float:
        logits, _, _ = self.forward(batch)
        loss, _, _ = L.sigmoid_bce_forward(logits, labels)
        return loss

    def loss_and_grads(self, batch: Batch, labels: np.ndarray, dropout_rng=None):
        logits, _, cache = self.forward(batch, dropout_rng=dropout_rng)
        loss, scores, bce_cache = L.sigmoid_bce_forward(logits, labels)
        dlogits = L.sigmoid_bce_backward(bce_cache)
        grads = self.backward(dlogits, cache)
        return loss, grads, scores

    # ---------------- inference helpers ----------------

    def embed_tiles(self, tiles: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Tower embeddings for a bank of tiles (inference mode)."""
        out = np.zeros((tiles.shape[0], self.cfg.tower_out), dtype=self.dtype)
        for i in range(0, tiles.shape[0], batch_size):
            emb, _ = self.tower_forward(tiles[i : i + batch_size])
            out[i : i + batch_size] = emb
        return out

    def head_forward_cached(
        self, e_p: np.ndarray, e_n: np.ndarray, cat: np.ndarray, cont: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """(scores, latents) from precomputed tower embeddings."""
        cfg = self.cfg
        if cfg.symmetrize:
            tower_part = np.concatenate([e_p + e_n, np.abs(e_p - e_n)], axis=1)
        else:
            tower_part = np.concatenate([e_p, e_n], axis=1)
        parts = [tower_part]
        for j in range(cfg.n_cat):
            table = self.params[f"emb.{j}.table"]
            ids = np.minimum(cat[:, j], table.shape[0] - 1)
            parts.append(table[ids])
        # Scoring never mutates the running statistics.
        was_frozen = self.norm.frozen
        self.norm.frozen = True
        cont_n, _ = self.norm.forward(cont.astype(self.dtype, copy=False))
        self.norm.frozen = was_frozen
        h = np.concatenate(parts + [cont_n], axis=1)
        latent = h
        for k in range(len(cfg.hidden)):
            h, _ = L.linear_forward(h, self.params[f"head.h{k}.W"], self.params[f"head.h{k}.b"])
            h, _ = L.relu_forward(h)
            if k == len(cfg.hidden) - 1:
                latent = h
        z, _ = L.linear_forward(h, self.params["head.out.W"], self.params["head.out.b"])
        return L.sigmoid(z[:, 0]), latent

    # ---------------- dtype / checkpoint ----------------

    def astype(self, dtype: str) -> "SimilarityNet":
        """Copy of the model with parameters cast to the given dtype."""
        clone = SimilarityNet.__new__(SimilarityNet)
        clone.cfg = replace(self.cfg, dtype=dtype)
        clone.dtype = np.dtype(dtype)
        clone.training = self.training
        clone.params = {k: v.astype(dtype) for k, v in self.params.items()}
        clone.norm = L.RunningNorm(self.cfg.n_cont, momentum=self.norm.momentum, dtype=clone.dtype)
        clone.norm.load_state(self.norm.state())
        clone.norm.frozen = self.norm.frozen
        return clone

    def save(self, path: str | Path) -> None:
        meta = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "cfg": {**self.cfg.__dict__, "tower_widths": list(self.cfg.tower_widths), "hidden": list(self.cfg.hidden)},
        }
        arrays = {f"p_{k}": v for k, v in self.params.items()}
        arrays["norm_mean"] = self.norm.mean
        arrays["norm_var"] = self.norm.var
        np.savez_compressed(path, meta=json.dumps(meta, sort_keys=True), **arrays)

    @classmethod
    def load(cls, path: str | Path) -> "SimilarityNet":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            if meta.get("format") != CHECKPOINT_FORMAT:
                raise ValueError("not a similarity-net checkpoint")
            cfg_d = meta["cfg"]
            cfg_d["tower_widths"] = tuple(cfg_d["tower_widths"])
            cfg_d["hidden"] = tuple(cfg_d["hidden"])
            cfg = NetConfig(**cfg_d)
            model = cls(cfg)
            for k in model.params:
                model.params[k] = data[f"p_{k}"]
            model.norm.load_state({"mean": data["norm_mean"], "var": data["norm_var"]})
        model.eval_mode()
        return model
