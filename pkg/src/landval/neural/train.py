"""Training loop for the similarity network: Nesterov SGD, cosine warm
restarts, per-epoch validation AUC with optional early stopping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from landval import metrics
from landval.neural._threads import single_thread_blas
from landval.neural.layers import bce_loss
from landval.neural.model import Batch, NetConfig, SimilarityNet
from landval.neural.schedule import CosineWarmRestarts
from landval.tiles import AugmentConfig


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 0.025
    momentum: float = 0.9  # Nesterov
    lr_min: float = 1e-4
    t0: float = 10.0
    t_mult: float = 2.0
    seed: int = 0
    patience: int = 5  # early stop on val AUC; 0 disables
    max_train_pairs: int | None = None
    augment: AugmentConfig | None = field(
        default_factory=lambda: AugmentConfig(
            rotate_prob=0.5,
            hflip_prob=0.5,
            vflip_prob=0.5,
            jitter_prob=0.3,
            jitter_strength=0.05,
            noise_prob=0.3,
            noise_sigma=2.0,
        )
    )

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        # lr == 0 is the degenerate no-update case (schedule unused).
        if self.lr > 0 and self.lr_min >= self.lr:
            raise ValueError("lr_min must be below the initial learning rate")


@dataclass
class PairArrays:
    """Column-oriented pair dataset with a shared uint8 tile bank."""

    tiles: np.ndarray  # (n_parcels, S, S, 3) uint8
    tile_p_idx: np.ndarray  # (N,) int
    tile_n_idx: np.ndarray
    cat: np.ndarray  # (N, n_cat) int
    cont: np.ndarray  # (N, n_cont) float32
    labels: np.ndarray  # (N,) float

    def __len__(self) -> int:
        return len(self.labels)

    def batch(self, idx: np.ndarray, dtype=np.float32) -> Batch:
        scale = np.asarray(1.0 / 255.0, dtype=dtype)
        return Batch(
            tiles_p=self.tiles[self.tile_p_idx[idx]].astype(dtype) * scale,
            tiles_n=self.tiles[self.tile_n_idx[idx]].astype(dtype) * scale,
            cat=self.cat[idx],
            cont=self.cont[idx],
        )

    def subset(self, idx: np.ndarray) -> "PairArrays":
        return PairArrays(
            tiles=self.tiles,
            tile_p_idx=self.tile_p_idx[idx],
            tile_n_idx=self.tile_n_idx[idx],
            cat=self.cat[idx],
            cont=self.cont[idx],
            labels=self.labels[idx],
        )


def _augment_tiles(x: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Batched counterpart of tiles.augment on (B, S, S, 3) floats in [0, 1]."""
    b = x.shape[0]
    do_rot = rng.random(b) < cfg.rotate_prob
    ks = rng.integers(1, 4, size=b)
    for k in (1, 2, 3):
        sel = do_rot & (ks == k)
        if sel.any():
            x[sel] = np.rot90(x[sel], k=k, axes=(1, 2))
    hsel = rng.random(b) < cfg.hflip_prob
    if hsel.any():
        x[hsel] = x[hsel, :, ::-1, :]
    vsel = rng.random(b) < cfg.vflip_prob
    if vsel.any():
        x[vsel] = x[vsel, ::-1, :, :]
    jsel = rng.random(b) < cfg.jitter_prob
    if jsel.any():
        scale = rng.uniform(
            1.0 - cfg.jitter_strength, 1.0 + cfg.jitter_strength, size=(int(jsel.sum()), 1, 1, 3)
        )
        x[jsel] = x[jsel] * scale.astype(x.dtype)
    nsel = rng.random(b) < cfg.noise_prob
    if nsel.any() and cfg.noise_sigma > 0:
        sigma = cfg.noise_sigma / 255.0
        x[nsel] = x[nsel] + rng.normal(0.0, sigma, size=x[nsel].shape).astype(x.dtype)
    np.clip(x, 0.0, 1.0, out=x)
    return x


def predict_scores(model: SimilarityNet, arrays: PairArrays, batch_size: int = 4096) -> np.ndarray:
    """Pair scores in inference mode.

    Tower embeddings are computed once per distinct tile and reused across
    pairs, which makes scoring cheap relative to training.
    """
    model.eval_mode()
    with single_thread_blas():
        needed = np.unique(np.concatenate([arrays.tile_p_idx, arrays.tile_n_idx]))
        lookup = np.full(arrays.tiles.shape[0], -1, dtype=np.int64)
        lookup[needed] = np.arange(len(needed))
        bank = arrays.tiles[needed].astype(model.dtype) * model.dtype.type(1.0 / 255.0)
        emb = model.embed_tiles(bank)
        scores = np.zeros(len(arrays), dtype=np.float64)
        for i in range(0, len(arrays), batch_size):
            sl = slice(i, i + batch_size)
            s, _ = model.head_forward_cached(
                emb[lookup[arrays.tile_p_idx[sl]]],
                emb[lookup[arrays.tile_n_idx[sl]]],
                arrays.cat[sl],
                arrays.cont[sl],
            )
            scores[sl] = s
    return scores


def extract_latent(model: SimilarityNet, arrays: PairArrays, batch_size: int = 4096) -> np.ndarray:
    """Last hidden activations per pair (width = cfg.latent_width)."""
    model.eval_mode()
    with single_thread_blas():
        needed = np.unique(np.concatenate([arrays.tile_p_idx, arrays.tile_n_idx]))
        lookup = np.full(arrays.tiles.shape[0], -1, dtype=np.int64)
        lookup[needed] = np.arange(len(needed))
        bank = arrays.tiles[needed].astype(model.dtype) * model.dtype.type(1.0 / 255.0)
        emb = model.embed_tiles(bank)
        out = np.zeros((len(arrays), model.cfg.latent_width), dtype=np.float64)
        for i in range(0, len(arrays), batch_size):
            sl = slice(i, i + batch_size)
            _, latent = model.head_forward_cached(
                emb[lookup[arrays.tile_p_idx[sl]]],
                emb[lookup[arrays.tile_n_idx[sl]]],
                arrays.cat[sl],
                arrays.cont[sl],
            )
            out[sl] = latent
    return out


def train(
    net_cfg: NetConfig,
    train_arrays: PairArrays,
    val_arrays: PairArrays | None,
    cfg: TrainConfig,
) -> tuple[SimilarityNet, list[dict]]:
    """Train a SimilarityNet from scratch; returns (model, per-epoch history).

    Deterministic for a fixed (net_cfg, cfg): shuffling, dropout and
    augmentation draw from seeds derived per epoch.
    """
    n = len(train_arrays)
    if n == 0:
        raise ValueError("training split is empty")
    if len(np.unique(train_arrays.labels)) < 2:
        raise ValueError("training labels contain a single class")
    if cfg.max_train_pairs is not None and n > cfg.max_train_pairs:
        sub_rng = np.random.default_rng([cfg.seed, 77])
        keep = sub_rng.choice(n, size=cfg.max_train_pairs, replace=False)
        train_arrays = train_arrays.subset(np.sort(keep))
        n = len(train_arrays)

    model = SimilarityNet(net_cfg)
    schedule = CosineWarmRestarts(eta_max=cfg.lr, eta_min=cfg.lr_min, t0=cfg.t0, t_mult=cfg.t_mult) \
        if cfg.lr > 0 else None
    frozen = model.frozen_param_names()
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    n_batches = (n + cfg.batch_size - 1) // cfg.batch_size

    history: list[dict] = []
    best_auc = -np.inf
    best_params = None
    best_norm = None
    stale = 0
    with single_thread_blas():
        for epoch in range(cfg.epochs):
            ep_rng = np.random.default_rng([cfg.seed, 1000 + epoch])
            perm = ep_rng.permutation(n)
            model.train_mode()
            losses = []
            last_lr = 0.0
            for bi in range(n_batches):
                idx = perm[bi * cfg.batch_size : (bi + 1) * cfg.batch_size]
                batch = train_arrays.batch(idx, dtype=model.dtype)
                if cfg.augment is not None:
                    _augment_tiles(batch.tiles_p, cfg.augment, ep_rng)
                    _augment_tiles(batch.tiles_n, cfg.augment, ep_rng)
                loss, grads, _ = model.loss_and_grads(
                    batch, train_arrays.labels[idx], dropout_rng=ep_rng
                )
                if not np.isfinite(loss):
                    raise TrainingDivergedError(f"loss is not finite at epoch {epoch}, batch {bi}")
                losses.append(loss)
                lr = schedule.lr_at(epoch + bi / n_batches) if schedule else 0.0
                last_lr = lr
                for name, g in grads.items():
                    if name in frozen:
                        continue
                    v = velocity[name]
                    v *= cfg.momentum
                    v += g
                    model.params[name] -= (lr * (g + cfg.momentum * v)).astype(model.dtype)

            entry = {"epoch": epoch, "train_loss": float(np.mean(losses)), "lr": last_lr}
            if val_arrays is not None and len(val_arrays):
                model.eval_mode()
                val_scores = predict_scores(model, val_arrays)
                entry["val_loss"] = float(np.mean(bce_loss(val_scores, val_arrays.labels)))
                try:
                    entry["val_auc"] = metrics.auc(val_scores, val_arrays.labels)
                except ValueError:
                    entry["val_auc"] = float("nan")
            history.append(entry)

            if cfg.patience and "val_auc" in entry and np.isfinite(entry["val_auc"]):
                if entry["val_auc"] > best_auc:
                    best_auc = entry["val_auc"]
                    best_params = {k: v.copy() for k, v in model.params.items()}
                    best_norm = {k: v.copy() for k, v in model.norm.state().items()}
                    stale = 0
                else:
                    stale += 1
                    if stale >= cfg.patience:
                        break

    if best_params is not None:
        model.params = best_params
        model.norm.load_state(best_norm)
    model.eval_mode()
    return model, history
