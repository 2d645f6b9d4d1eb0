import math

import numpy as np
import pytest

from landval.neural import layers as L
from landval.neural import (
    Batch,
    CosineWarmRestarts,
    NetConfig,
    PairArrays,
    SimilarityNet,
    TrainConfig,
    bce_loss,
    cosine_lr,
    extract_latent,
    gradient_check,
    predict_scores,
    train,
)


def rel_err(a, n):
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x, dtype=np.float64)
    for i in range(x.size):
        orig = x.flat[i]
        x.flat[i] = orig + h
        fp = f()
        x.flat[i] = orig - h
        fm = f()
        x.flat[i] = orig
        g.flat[i] = (fp - fm) / (2 * h)
    return g


# ---------------- layer-level gradients ----------------


def test_linear_layer_gradients_exact():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 6))
    W = rng.standard_normal((3, 6))
    b = rng.standard_normal(3)
    R = rng.standard_normal((4, 3))  # linear projection loss: sum(out * R)

    out, cache = L.linear_forward(x, W, b)
    dx, dW, db = L.linear_backward(R, cache, W)
    nW = numeric_grad(lambda: float((L.linear_forward(x, W, b)[0] * R).sum()), W)
    nb = numeric_grad(lambda: float((L.linear_forward(x, W, b)[0] * R).sum()), b)
    nx = numeric_grad(lambda: float((L.linear_forward(x, W, b)[0] * R).sum()), x)
    # loss is linear in every argument: central differences are exact
    assert np.abs(dW - nW).max() < 1e-8
    assert np.abs(db - nb).max() < 1e-8
    assert np.abs(dx - nx).max() < 1e-8


def test_conv_layer_gradients():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 6, 6, 3))
    W = rng.standard_normal((3, 3, 3, 4))
    b = rng.standard_normal(4)
    R = rng.standard_normal((2, 6, 6, 4))

    def loss():
        return float((L.conv3x3_forward(x, W, b)[0] * R).sum())

    _, cache = L.conv3x3_forward(x, W, b)
    dx, dW, db = L.conv3x3_backward(R, cache, W)
    assert np.abs(dW - numeric_grad(loss, W)).max() < 1e-7
    assert np.abs(db - numeric_grad(loss, b)).max() < 1e-7
    assert np.abs(dx - numeric_grad(loss, x)).max() < 1e-7


def test_maxpool_gradients():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 4, 4, 3))  # continuous values: no ties
    R = rng.standard_normal((2, 2, 2, 3))

    def loss():
        return float((L.maxpool2_forward(x)[0] * R).sum())

    _, cache = L.maxpool2_forward(x)
    dx = L.maxpool2_backward(R, cache)
    assert np.abs(dx - numeric_grad(loss, x)).max() < 1e-7


def test_maxpool_tie_routes_once():
    x = np.zeros((1, 2, 2, 1))
    out, cache = L.maxpool2_forward(x)
    dx = L.maxpool2_backward(np.ones((1, 1, 1, 1)), cache)
    assert dx.sum() == 1.0  # gradient goes to exactly one of the tied cells


def test_gap_gradients():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((3, 4, 4, 5))
    R = rng.standard_normal((3, 5))

    def loss():
        return float((L.global_avg_pool_forward(x)[0] * R).sum())

    _, shape = L.global_avg_pool_forward(x)
    dx = L.global_avg_pool_backward(R, shape)
    assert np.abs(dx - numeric_grad(loss, x)).max() < 1e-9


def test_embedding_gradients():
    rng = np.random.default_rng(4)
    table = rng.standard_normal((5, 3))
    ids = np.array([0, 2, 2, 4])
    R = rng.standard_normal((4, 3))

    def loss():
        return float((L.embedding_forward(ids, table)[0] * R).sum())

    _, cache = L.embedding_forward(ids, table)
    dt = L.embedding_backward(R, cache)
    assert np.abs(dt - numeric_grad(loss, table)).max() < 1e-8
    assert np.abs(dt[1]).max() == 0.0  # unused row


def test_normalizer_frozen_gradient():
    rng = np.random.default_rng(5)
    norm = L.RunningNorm(4, dtype=np.float64)
    norm.mean = rng.standard_normal(4)
    norm.var = rng.uniform(0.5, 2.0, 4)
    norm.frozen = True
    x = rng.standard_normal((6, 4))
    R = rng.standard_normal((6, 4))

    def loss():
        return float((norm.forward(x)[0] * R).sum())

    _, cache = norm.forward(x)
    dx = norm.backward(R, cache)
    assert np.abs(dx - numeric_grad(loss, x)).max() < 1e-7


def test_normalizer_batch_mode_gradient():
    rng = np.random.default_rng(6)
    norm = L.RunningNorm(3, dtype=np.float64)
    x = rng.standard_normal((8, 3))
    R = rng.standard_normal((8, 3))

    def loss():
        n2 = L.RunningNorm(3, dtype=np.float64)
        return float((n2.forward(x)[0] * R).sum())

    _, cache = L.RunningNorm(3, dtype=np.float64).forward(x)
    dx = L.RunningNorm(3, dtype=np.float64).backward(R, cache)
    assert np.abs(dx - numeric_grad(loss, x)).max() < 1e-6


def test_sigmoid_bce_gradient():
    rng = np.random.default_rng(7)
    z = rng.standard_normal(10)
    y = rng.integers(0, 2, 10).astype(np.float64)

    def loss():
        return L.sigmoid_bce_forward(z, y)[0]

    _, _, cache = L.sigmoid_bce_forward(z, y)
    dz = L.sigmoid_bce_backward(cache)
    assert np.abs(dz - numeric_grad(loss, z)).max() < 1e-8


# ---------------- bce / schedule values ----------------


def test_bce_uninformative_score():
    assert float(bce_loss(0.5, 1.0)) == pytest.approx(math.log(2), abs=1e-12)
    assert float(bce_loss(0.5, 0.0)) == pytest.approx(math.log(2), abs=1e-12)


def test_bce_confident_correct_goes_to_zero():
    assert float(bce_loss(1.0 - 1e-9, 1.0)) < 1e-6


def test_bce_confident_wrong():
    assert float(bce_loss(0.9, 0.0)) == pytest.approx(2.302585092994046, abs=1e-9)


def test_lr_at_start_is_initial():
    sched = CosineWarmRestarts(eta_max=0.025, eta_min=0.0, t0=10, t_mult=2)
    assert sched.lr_at(0.0) == pytest.approx(0.025)


def test_lr_formula_at_cycle_end_is_min():
    assert cosine_lr(10.0, 10.0, 0.025, 0.001) == pytest.approx(0.001)


def test_lr_halfway_half_amplitude():
    assert cosine_lr(5.0, 10.0, 0.025, 0.0) == pytest.approx(0.0125)


def test_lr_warm_restart_resets():
    sched = CosineWarmRestarts(eta_max=0.025, eta_min=0.001, t0=4, t_mult=2)
    assert sched.lr_at(4.0) == pytest.approx(0.025)  # new cycle starts
    assert sched.lr_at(4.0 + 8.0) == pytest.approx(0.025)  # cycle 2 after t0*(1+2)
    just_before = sched.lr_at(11.9999)
    assert just_before < 0.002


# ---------------- model fixtures ----------------


def tiny_cfg(**kw):
    base = dict(side=16, tower_widths=(3, 5), n_cat=2, n_cont=3,
                hidden=(12, 7), dropout=0.07, seed=11, dtype="float64")
    base.update(kw)
    return NetConfig(**base)


def tiny_batch(rng, n=4, cfg=None):
    cfg = cfg or tiny_cfg()
    return Batch(
        tiles_p=rng.random((n, cfg.side, cfg.side, 3)),
        tiles_n=rng.random((n, cfg.side, cfg.side, 3)),
        cat=rng.integers(0, 2, (n, cfg.n_cat)),
        cont=rng.standard_normal((n, cfg.n_cont)),
    )


def test_zero_initialized_head_scores_half(rng):
    model = SimilarityNet(tiny_cfg())
    model.eval_mode()
    model.params["head.out.W"][:] = 0.0
    model.params["head.out.b"][:] = 0.0
    logits, _, _ = model.forward(tiny_batch(rng))
    assert np.all(L.sigmoid(logits) == 0.5)


def test_scores_in_open_unit_interval(rng):
    model = SimilarityNet(tiny_cfg())
    model.eval_mode()
    logits, _, _ = model.forward(tiny_batch(rng, n=200))
    s = L.sigmoid(logits)
    assert np.all(s > 0) and np.all(s < 1)


def test_symmetrized_concat_invariant_to_tile_swap(rng):
    model = SimilarityNet(tiny_cfg(symmetrize=True))
    model.eval_mode()
    b = tiny_batch(rng)
    swapped = Batch(tiles_p=b.tiles_n, tiles_n=b.tiles_p, cat=b.cat, cont=b.cont)
    za, _, _ = model.forward(b)
    zb, _, _ = model.forward(swapped)
    assert np.allclose(za, zb, atol=1e-12)


def test_unsymmetrized_swap_changes_score(rng):
    model = SimilarityNet(tiny_cfg(symmetrize=False))
    model.eval_mode()
    b = tiny_batch(rng)
    swapped = Batch(tiles_p=b.tiles_n, tiles_n=b.tiles_p, cat=b.cat, cont=b.cont)
    za, _, _ = model.forward(b)
    zb, _, _ = model.forward(swapped)
    assert not np.allclose(za, zb)


def test_default_head_latent_width_is_50():
    cfg = NetConfig()
    assert cfg.hidden == (400, 200, 100, 50)
    assert cfg.latent_width == 50
    assert cfg.dropout == 0.07


def test_identical_inputs_identical_latents(rng):
    model = SimilarityNet(tiny_cfg())
    model.eval_mode()
    b = tiny_batch(rng, n=1)
    doubled = Batch(
        tiles_p=np.repeat(b.tiles_p, 2, axis=0),
        tiles_n=np.repeat(b.tiles_n, 2, axis=0),
        cat=np.repeat(b.cat, 2, axis=0),
        cont=np.repeat(b.cont, 2, axis=0),
    )
    _, latent, _ = model.forward(doubled)
    assert np.array_equal(latent[0], latent[1])
    assert latent.shape[1] == model.cfg.latent_width == 7


def test_checkpoint_round_trip(tmp_path, rng):
    model = SimilarityNet(tiny_cfg())
    model.eval_mode()
    b = tiny_batch(rng)
    za, la, _ = model.forward(b)
    model.save(tmp_path / "net.npz")
    back = SimilarityNet.load(tmp_path / "net.npz")
    zb, lb, _ = back.forward(b)
    assert np.array_equal(za, zb)
    assert np.array_equal(la, lb)


# ---------------- gradient check ----------------


def test_gradient_check_full_model_under_1e4(rng):
    model = SimilarityNet(tiny_cfg())
    model.eval_mode()
    b = tiny_batch(rng, n=4)
    y = np.array([1.0, 0.0, 1.0, 0.0])
    report = gradient_check(model, b, y, n_params=64, seed=0)
    assert report.ok
    assert report.n_checked == 64
    assert report.max_rel_error < 1e-4
    # every parameter tensor family is represented
    prefixes = {name.split(".")[0] for name in report.by_tensor}
    assert {"tower", "emb", "head"} <= prefixes


def test_gradient_check_flags_active_dropout(rng):
    model = SimilarityNet(tiny_cfg())
    model.train_mode()
    b = tiny_batch(rng)
    report = gradient_check(model, b, np.ones(len(b)), n_params=8, seed=0)
    assert report.non_deterministic
    assert report.max_rel_error is None
    assert not report.ok


def test_gradient_check_skips_frozen_blocks(rng):
    model = SimilarityNet(tiny_cfg(freeze_blocks=1))
    model.eval_mode()
    b = tiny_batch(rng)
    y = np.zeros(len(b))
    report = gradient_check(model, b, y, n_params=32, seed=1)
    assert report.ok and report.max_rel_error < 1e-4
    assert all(not name.startswith("tower.b0.") for name in report.by_tensor)


# ---------------- training ----------------


def separable_arrays(rng, n=160, side=16):
    """Pairs whose label is readable from both the tiles and a feature."""
    n_parcels = 2 * n
    tiles = np.zeros((n_parcels, side, side, 3), dtype=np.uint8)
    labels = (rng.random(n) < 0.5).astype(np.float64)
    tile_p = np.arange(n) * 2
    tile_n = tile_p + 1
    for i in range(n):
        g_p = rng.integers(60, 200)
        g_n = g_p + (5 if labels[i] else 90)
        tiles[tile_p[i], :, :, 1] = g_p
        tiles[tile_n[i], :, :, 1] = min(g_n, 255)
    cont = np.column_stack([
        np.abs(rng.standard_normal(n)) + (1.0 - labels) * 2.0,
        rng.standard_normal(n),
        rng.standard_normal(n),
    ]).astype(np.float32)
    cat = rng.integers(0, 2, (n, 2))
    return PairArrays(
        tiles=tiles,
        tile_p_idx=tile_p,
        tile_n_idx=tile_n,
        cat=cat,
        cont=cont,
        labels=labels,
    )


def fast_train_cfg(**kw):
    base = dict(epochs=3, batch_size=32, lr=0.02, lr_min=1e-4, t0=5.0,
                seed=5, patience=0, augment=None)
    base.update(kw)
    return TrainConfig(**base)


def test_lr_zero_leaves_parameters_unchanged(rng):
    arrays = separable_arrays(rng, n=64)
    cfg = tiny_cfg(dtype="float32")
    model, _ = train(cfg, arrays, None, fast_train_cfg(lr=0.0, lr_min=0.0, epochs=1))
    fresh = SimilarityNet(cfg)
    for k in fresh.params:
        assert np.array_equal(model.params[k], fresh.params[k]), k


def test_training_reduces_loss(rng):
    arrays = separable_arrays(rng, n=160)
    model, history = train(
        tiny_cfg(dtype="float32"), arrays, None, fast_train_cfg(epochs=12)
    )
    assert history[-1]["train_loss"] < history[0]["train_loss"] * 0.9


def test_training_deterministic_bitwise(rng):
    arrays = separable_arrays(rng, n=96)
    val = separable_arrays(np.random.default_rng(77), n=48)
    cfg = tiny_cfg(dtype="float32")
    tcfg = fast_train_cfg(epochs=4, patience=2)
    m1, h1 = train(cfg, arrays, val, tcfg)
    m2, h2 = train(cfg, arrays, val, tcfg)
    assert h1 == h2
    for k in m1.params:
        assert np.array_equal(m1.params[k], m2.params[k])


def test_frozen_blocks_unchanged_by_training(rng):
    arrays = separable_arrays(rng, n=96)
    cfg = tiny_cfg(dtype="float32", freeze_blocks=1)
    model, _ = train(cfg, arrays, None, fast_train_cfg(epochs=2))
    fresh = SimilarityNet(cfg)
    assert np.array_equal(model.params["tower.b0.W"], fresh.params["tower.b0.W"])
    assert np.array_equal(model.params["tower.b0.b"], fresh.params["tower.b0.b"])
    assert not np.array_equal(model.params["tower.b1.W"], fresh.params["tower.b1.W"])


def test_single_class_training_rejected(rng):
    arrays = separable_arrays(rng, n=32)
    arrays.labels[:] = 1.0
    with pytest.raises(ValueError, match="single class"):
        train(tiny_cfg(dtype="float32"), arrays, None, fast_train_cfg())


def test_divergence_guard_aborts_on_nan_loss(rng):
    from landval.neural import TrainingDivergedError

    arrays = separable_arrays(rng, n=32)
    arrays.cont[0, 0] = np.nan
    with pytest.raises(TrainingDivergedError):
        train(tiny_cfg(dtype="float32"), arrays, None, fast_train_cfg(epochs=1))


def test_empty_training_rejected(rng):
    arrays = separable_arrays(rng, n=8).subset(np.array([], dtype=int))
    with pytest.raises(ValueError, match="empty"):
        train(tiny_cfg(dtype="float32"), arrays, None, fast_train_cfg())


def test_early_stopping_restores_best(rng):
    arrays = separable_arrays(rng, n=96)
    val = separable_arrays(np.random.default_rng(3), n=64)
    model, history = train(
        tiny_cfg(dtype="float32"), arrays, val, fast_train_cfg(epochs=10, patience=2)
    )
    aucs = [h["val_auc"] for h in history]
    best_epoch = int(np.argmax(aucs))
    # training stopped within patience of the best epoch
    assert len(history) <= best_epoch + 1 + 2
    final_scores = predict_scores(model, val)
    from landval.metrics import auc as auc_fn
    assert auc_fn(final_scores, val.labels) == pytest.approx(max(aucs), abs=1e-9)


def test_normalizer_statistics_track_training_data(rng):
    arrays = separable_arrays(rng, n=160)
    model, _ = train(tiny_cfg(dtype="float32"), arrays, None, fast_train_cfg(epochs=8))
    z = (arrays.cont - model.norm.mean) / np.sqrt(model.norm.var + model.norm.eps)
    assert np.abs(z.mean(axis=0)).max() < 0.2


def test_predict_scores_matches_direct_forward(rng):
    arrays = separable_arrays(rng, n=48)
    model, _ = train(tiny_cfg(dtype="float32"), arrays, None, fast_train_cfg(epochs=1))
    fast = predict_scores(model, arrays)
    batch = arrays.batch(np.arange(len(arrays)), dtype=model.dtype)
    logits, _, _ = model.forward(batch)
    direct = L.sigmoid(logits)
    assert np.allclose(fast, direct, atol=1e-6)


def test_extract_latent_shape_and_determinism(rng):
    arrays = separable_arrays(rng, n=48)
    model, _ = train(tiny_cfg(dtype="float32"), arrays, None, fast_train_cfg(epochs=1))
    la = extract_latent(model, arrays)
    lb = extract_latent(model, arrays)
    assert la.shape == (48, 7)
    assert np.array_equal(la, lb)
    assert np.isfinite(la).all()


def test_dropout_expectation_matches_inference(rng):
    cfg = tiny_cfg(dtype="float64", dropout=0.07, hidden=(16, 8))
    model = SimilarityNet(cfg)
    b = tiny_batch(rng, n=1, cfg=cfg)
    model.eval_mode()
    logits_eval, _, _ = model.forward(b)
    s_eval = float(L.sigmoid(logits_eval)[0])
    model.training = True  # dropout active, but keep the normalizer frozen
    drop_rng = np.random.default_rng(123)
    total = 0.0
    n_mc = 10000
    for _ in range(n_mc):
        logits, _, _ = model.forward(b, dropout_rng=drop_rng)
        total += float(L.sigmoid(logits)[0])
    assert abs(total / n_mc - s_eval) / s_eval < 0.02
