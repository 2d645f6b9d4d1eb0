"""End-to-end pipeline stages behind the CLI commands.

Every stage reads its inputs from, and writes its outputs under, the config's
run directory; stages never mutate their inputs and are deterministic given
the config and master seed.
"""

from __future__ import annotations

import csv
import json
import time
from pathlib import Path

import numpy as np

from landval import config as C
from landval import metrics
from landval.config import RunConfig, derive_seed
from landval.data import Dataset, SplitAssignment, load_parcels, temporal_split
from landval.ensembles import MEMBERS, EnsembleSpec, combine, tune_weights
from landval.geo import SpatialIndex
from landval.neural import (
    NetConfig,
    PairArrays,
    SimilarityNet,
    TrainConfig,
    extract_latent,
    predict_scores,
    train,
)
from landval.pairs import (
    KIND_CAT_SAME,
    FeatureSchema,
    PairRecord,
    build_pairs,
    diff_features,
    feature_matrix,
    labels_of,
    make_feature_schema,
    read_pairs_csv,
    save_schema,
    select_features,
    write_pairs_csv,
)
from landval.synth import WorldConfig, generate_world, write_world
from landval.tiles import AugmentConfig, TileStore, bilinear_resize
from landval.trees import GbtConfig, TreeConfig, TreeEnsemble, fit_ensemble, fit_gbt_regressor
from landval.valuation import value_all, value_parcel, write_results_csv

BASELINE_MEMBER = "et_noimg"
SCORE_COLUMNS = list(MEMBERS) + [BASELINE_MEMBER]


class PipelineError(RuntimeError):
    """Missing prerequisite artifact; the message names the command to run."""


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise PipelineError(f"missing artifact {path}; run `landval {producer}` first")
    return path


# ---------------------------------------------------------------- generate


def stage_generate(cfg: RunConfig) -> Path:
    run_dir = cfg.run_dir()
    world_cfg = WorldConfig(
        n_parcels=cfg.world.n_parcels,
        n_provinces=cfg.world.n_provinces,
        seed=derive_seed(cfg.seed, C.SEED_WORLD),
        province_radius_km=cfg.world.province_radius_km,
        base_price=cfg.world.base_price,
        spatial_sigma=cfg.world.spatial_sigma,
        correlation_length_km=cfg.world.correlation_length_km,
        img_sigma=cfg.world.img_sigma,
        noise_sigma=cfg.world.noise_sigma,
        tile_side=cfg.world.tile_side,
        tile_kinds=tuple(cfg.pairs.tile_kinds),
    )
    world = generate_world(world_cfg)
    write_world(world, run_dir / "data")
    return run_dir / "data"


# ---------------------------------------------------------------- pairs


def _load_dataset(cfg: RunConfig) -> Dataset:
    path = _require(cfg.run_dir() / "data" / "parcels.csv", "generate (or fetch-tiles for real data)")
    return load_parcels(path)


def stage_build_pairs(cfg: RunConfig) -> Path:
    run_dir = cfg.run_dir()
    ds = _load_dataset(cfg)
    split = temporal_split(ds, seed=derive_seed(cfg.seed, C.SEED_SPLIT))
    idx = SpatialIndex.build(ds, cell_km=cfg.pairs.radius_km)
    store = TileStore(run_dir / "data" / "tiles")
    kinds = tuple(k for k in cfg.pairs.tile_kinds if k in store.kinds_present())
    schema = make_feature_schema(ds, kinds)
    pairs = build_pairs(
        ds,
        idx,
        split,
        schema,
        radius_km=cfg.pairs.radius_km,
        tau=cfg.pairs.tau,
        max_neighbors=cfg.pairs.max_neighbors,
        tile_store=store,
        tile_kinds=kinds,
    )
    train_pairs = [p for p in pairs if p.split == "train"]
    X_train = feature_matrix(train_pairs)
    y_train = labels_of(train_pairs)
    sel_cfg = TreeConfig(
        n_trees=cfg.trees.select_n_trees,
        max_depth=cfg.trees.select_max_depth,
        n_jobs=cfg.trees.n_jobs,
    )
    sel_seed = derive_seed(cfg.seed, C.SEED_SELECT)
    selected = select_features(X_train, y_train, schema, cfg.pairs.n_keep, seed=sel_seed, tree_cfg=sel_cfg)
    # Image-free regime: selection re-run with color features excluded, so the
    # baseline competes on the same number of kept features.
    no_img = select_features(
        X_train, y_train, schema.without_image_features(), cfg.pairs.n_keep, seed=sel_seed, tree_cfg=sel_cfg
    )

    out = run_dir / "pairs"
    out.mkdir(parents=True, exist_ok=True)
    write_pairs_csv(pairs, schema, out / "pairs.csv")
    save_schema(selected, out / "schema.json", extra={"selected_no_image": [int(s) for s in no_img.selected]})
    (out / "split.json").write_text(
        json.dumps({s: split.ids(s) for s in ("train", "val", "test")}, indent=0, sort_keys=True)
    )
    return out


def _load_pairs(cfg: RunConfig) -> tuple[FeatureSchema, FeatureSchema, list[PairRecord], SplitAssignment]:
    run_dir = cfg.run_dir()
    schema_path = _require(run_dir / "pairs" / "schema.json", "build-pairs")
    obj = json.loads(schema_path.read_text())
    schema = FeatureSchema.from_json(obj)
    schema_no_img = schema.with_mask([bool(s) for s in obj["selected_no_image"]])
    pairs = read_pairs_csv(_require(run_dir / "pairs" / "pairs.csv", "build-pairs"), schema)
    split_obj = json.loads(_require(run_dir / "pairs" / "split.json", "build-pairs").read_text())
    assignment = {pid: s for s, ids in split_obj.items() for pid in ids}
    return schema, schema_no_img, pairs, SplitAssignment(assignment)


# ---------------------------------------------------------------- training


def _tile_bank(
    ds: Dataset, store: TileStore, kind: str, side: int, ids: list[str] | None = None
) -> tuple[np.ndarray, dict[str, int]]:
    """uint8 (n_parcels, side, side, 3) bank plus id -> row map.

    Parcels with a missing tile get a mid-gray placeholder.
    """
    ids = sorted(ids if ids is not None else (p.id for p in ds.parcels))
    id_to_idx = {pid: i for i, pid in enumerate(ids)}
    bank = np.full((len(ids), side, side, 3), 128, dtype=np.uint8)
    for pid in ids:
        t = store.load(pid, kind)
        if t is None:
            continue
        bank[id_to_idx[pid]] = t.pixels if t.side == side else bilinear_resize(t.pixels, side)
    return bank, id_to_idx


def _pair_arrays(
    pairs: list[PairRecord],
    schema: FeatureSchema,
    bank: np.ndarray,
    id_to_idx: dict[str, int],
) -> PairArrays:
    sel = schema.selected_indices()
    cat_cols = [i for i in sel if schema.kinds[i] == KIND_CAT_SAME]
    cont_cols = [i for i in sel if schema.kinds[i] != KIND_CAT_SAME]
    X = np.stack([p.features for p in pairs]) if pairs else np.zeros((0, schema.n_features))
    return PairArrays(
        tiles=bank,
        tile_p_idx=np.array([id_to_idx[p.primary_id] for p in pairs], dtype=np.int64),
        tile_n_idx=np.array([id_to_idx[p.neighbor_id] for p in pairs], dtype=np.int64),
        cat=X[:, cat_cols].astype(np.int64),
        cont=X[:, cont_cols].astype(np.float32),
        labels=labels_of(pairs),
    )


def _net_cfg(section: C.NeuralSection, schema: FeatureSchema, seed: int) -> NetConfig:
    sel = schema.selected_indices()
    n_cat = sum(1 for i in sel if schema.kinds[i] == KIND_CAT_SAME)
    n_cont = len(sel) - n_cat
    return NetConfig(
        side=section.side,
        tower_widths=tuple(section.tower_widths),
        n_cat=n_cat,
        n_cont=n_cont,
        hidden=tuple(section.hidden),
        dropout=section.dropout,
        freeze_blocks=section.freeze_blocks,
        symmetrize=section.symmetrize,
        seed=seed,
    )


def _train_cfg(section: C.NeuralSection, seed: int) -> TrainConfig:
    return TrainConfig(
        epochs=section.epochs,
        batch_size=section.batch_size,
        lr=section.lr,
        momentum=section.momentum,
        lr_min=section.lr_min,
        t0=section.t0,
        t_mult=section.t_mult,
        seed=seed,
        patience=section.patience,
        max_train_pairs=section.max_train_pairs,
        augment=AugmentConfig(jitter_strength=0.05, noise_sigma=2.0) if section.augment else None,
    )


def _parcel_matrix(ds: Dataset, ids: list[str]) -> np.ndarray:
    """Raw parcel features for the regression baseline: coordinates,
    continuous attributes, ordinal-coded categoricals."""
    code = {
        name: {v: i for i, v in enumerate(ds.categorical_vocab[name])}
        for name in ds.categorical_names
    }
    rows = []
    for pid in ids:
        p = ds.by_id[pid]
        row = [p.lat, p.lon]
        row += [p.continuous_attrs[c] for c in ds.continuous_names]
        row += [float(code[c].get(p.categorical_attrs[c], -1)) for c in ds.categorical_names]
        rows.append(row)
    return np.array(rows)


def stage_train(cfg: RunConfig) -> Path:
    run_dir = cfg.run_dir()
    ds = _load_dataset(cfg)
    schema, schema_no_img, pairs, split = _load_pairs(cfg)
    models_dir = run_dir / "models"
    models_dir.mkdir(parents=True, exist_ok=True)

    by_split = {s: [p for p in pairs if p.split == s] for s in ("train", "val", "test")}
    X = {s: feature_matrix(by_split[s], schema) for s in by_split}
    y = {s: labels_of(by_split[s]) for s in by_split}

    tree_cfg = TreeConfig(
        n_trees=cfg.trees.n_trees,
        max_depth=cfg.trees.max_depth,
        min_leaf=cfg.trees.min_leaf,
        n_jobs=cfg.trees.n_jobs,
    )
    scores: dict[str, dict[str, np.ndarray]] = {s: {} for s in ("val", "test")}

    et = fit_ensemble(
        "extra_trees", X["train"], y["train"],
        TreeConfig(**{**tree_cfg.__dict__, "seed": derive_seed(cfg.seed, C.SEED_EXTRA_TREES)}),
    )
    et.save(models_dir / "extra_trees.json")
    rf = fit_ensemble(
        "random_forest", X["train"], y["train"],
        TreeConfig(**{**tree_cfg.__dict__, "seed": derive_seed(cfg.seed, C.SEED_RANDOM_FOREST)}),
    )
    rf.save(models_dir / "random_forest.json")

    Xni = {s: feature_matrix(by_split[s], schema_no_img) for s in by_split}
    et_noimg = fit_ensemble(
        "extra_trees", Xni["train"], y["train"],
        TreeConfig(**{**tree_cfg.__dict__, "seed": derive_seed(cfg.seed, C.SEED_ET_NOIMG)}),
    )
    et_noimg.save(models_dir / "et_noimg.json")

    for s in ("val", "test"):
        scores[s]["extra_trees"] = et.predict_score(X[s])
        scores[s]["random_forest"] = rf.predict_score(X[s])
        scores[s][BASELINE_MEMBER] = et_noimg.predict_score(Xni[s])

    store = TileStore(run_dir / "data" / "tiles")
    arrays: dict[str, dict[str, PairArrays]] = {}
    nets: dict[str, SimilarityNet] = {}
    for name, section, seed_tag in (
        ("dl_small", cfg.dl_small, C.SEED_DL_SMALL),
        ("dl_large", cfg.dl_large, C.SEED_DL_LARGE),
    ):
        bank, id_to_idx = _tile_bank(ds, store, section.tile_kind, section.side)
        arrays[name] = {s: _pair_arrays(by_split[s], schema, bank, id_to_idx) for s in by_split}
        seed = derive_seed(cfg.seed, seed_tag)
        val_for_stop = arrays[name]["val"]
        if section.val_eval_pairs and len(val_for_stop) > section.val_eval_pairs:
            pick = np.random.default_rng([seed, 3]).choice(
                len(val_for_stop), size=section.val_eval_pairs, replace=False
            )
            val_for_stop = val_for_stop.subset(np.sort(pick))
        model, history = train(
            _net_cfg(section, schema, seed),
            arrays[name]["train"],
            val_for_stop,
            _train_cfg(section, seed),
        )
        nets[name] = model
        model.save(models_dir / f"{name}.npz")
        (models_dir / f"history_{name}.json").write_text(json.dumps(history, indent=2))
        for s in ("val", "test"):
            scores[s][name] = predict_scores(model, arrays[name][s])

    # Forest on the small model's latent space.
    latent_train = extract_latent(nets["dl_small"], arrays["dl_small"]["train"])
    rf_latent = fit_ensemble(
        "random_forest", latent_train, y["train"],
        TreeConfig(**{**tree_cfg.__dict__, "seed": derive_seed(cfg.seed, C.SEED_RF_LATENT)}),
    )
    rf_latent.save(models_dir / "rf_latent.json")
    for s in ("val", "test"):
        scores[s]["rf_on_latent"] = rf_latent.predict_score(
            extract_latent(nets["dl_small"], arrays["dl_small"][s])
        )

    # Direct-regression baseline on raw parcel features.
    train_ids = split.ids("train")
    gbt = fit_gbt_regressor(
        _parcel_matrix(ds, train_ids),
        np.array([ds.by_id[pid].price for pid in train_ids]),
        GbtConfig(
            n_rounds=cfg.gbt.n_rounds,
            learning_rate=cfg.gbt.learning_rate,
            max_depth=cfg.gbt.max_depth,
            min_leaf=cfg.gbt.min_leaf,
            seed=derive_seed(cfg.seed, C.SEED_GBT),
        ),
    )
    gbt.save(models_dir / "gbt.json")
    with (models_dir / "gbt_predictions.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["parcel_id", "split", "predicted_price", "actual_price"])
        for s in ("val", "test"):
            ids = split.ids(s)
            if not ids:
                continue
            preds = gbt.predict(_parcel_matrix(ds, ids))
            for pid, pred in zip(ids, preds):
                w.writerow([pid, s, repr(float(pred)), repr(ds.by_id[pid].price)])

    scores_dir = run_dir / "scores"
    scores_dir.mkdir(parents=True, exist_ok=True)
    for s in ("val", "test"):
        with (scores_dir / f"member_scores_{s}.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["primary_id", "neighbor_id", "label", "neighbor_split"] + SCORE_COLUMNS)
            for i, p in enumerate(by_split[s]):
                w.writerow(
                    [p.primary_id, p.neighbor_id, p.label, p.neighbor_split]
                    + [repr(float(scores[s][m][i])) for m in SCORE_COLUMNS]
                )
    return models_dir


# ---------------------------------------------------------------- ensemble


def _load_scores(cfg: RunConfig, split: str):
    path = _require(cfg.run_dir() / "scores" / f"member_scores_{split}.csv", "train")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    labels = np.array([int(r["label"]) for r in rows])
    member_scores = {
        m: np.array([float(r[m]) for r in rows]) for m in SCORE_COLUMNS
    }
    return rows, labels, member_scores


def stage_tune_ensemble(cfg: RunConfig) -> Path:
    run_dir = cfg.run_dir()
    _, labels, member_scores = _load_scores(cfg, "val")
    spec, best_auc = tune_weights(
        {m: member_scores[m] for m in MEMBERS},
        labels,
        n_trials=cfg.ensemble.n_trials,
        seed=derive_seed(cfg.seed, C.SEED_ENSEMBLE),
    )
    out = run_dir / "ensemble"
    out.mkdir(parents=True, exist_ok=True)
    spec.save(out / "weights.json")
    member_aucs = {m: metrics.auc(member_scores[m], labels) for m in MEMBERS}
    (out / "tuning.json").write_text(
        json.dumps(
            {"val_auc": best_auc, "member_val_auc": member_aucs, "n_trials": cfg.ensemble.n_trials},
            indent=2,
            sort_keys=True,
        )
    )
    return out


# ---------------------------------------------------------------- evaluate


def _scored_neighbors(
    rows: list[dict], scores: np.ndarray, ds: Dataset, eval_ids: list[str]
) -> dict[str, list[tuple[str, float, float]]]:
    """Valuation candidates: train-split neighbor appraisals only."""
    out: dict[str, list[tuple[str, float, float]]] = {pid: [] for pid in eval_ids}
    for row, score in zip(rows, scores):
        if row["neighbor_split"] != "train":
            continue
        pid = row["primary_id"]
        if pid in out:
            out[pid].append((row["neighbor_id"], float(np.clip(score, 0.0, 1.0)), ds.by_id[row["neighbor_id"]].price))
    return out


def _write_curve_csv(curve: metrics.CoverageMapeCurve, path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["theta", "coverage_pct", "mape_pct"])
        for pt in curve.points:
            w.writerow(
                [f"{pt.theta:.6f}", f"{pt.coverage_pct:.8f}",
                 "" if pt.mape_pct is None else f"{pt.mape_pct:.8f}"]
            )


def stage_evaluate(cfg: RunConfig) -> Path:
    run_dir = cfg.run_dir()
    ds = _load_dataset(cfg)
    _, _, _, split = _load_pairs(cfg)
    spec = EnsembleSpec.load(_require(run_dir / "ensemble" / "weights.json", "tune-ensemble"))
    reports = run_dir / "reports"
    reports.mkdir(parents=True, exist_ok=True)

    aucs: dict[str, dict[str, float]] = {}
    per_split = {}
    for s in ("val", "test"):
        rows, labels, member_scores = _load_scores(cfg, s)
        ens = combine(spec, {m: member_scores[m] for m in MEMBERS})
        per_split[s] = (rows, labels, member_scores, ens)
        for m in SCORE_COLUMNS:
            aucs.setdefault(m, {})[s] = metrics.auc(member_scores[m], labels)
        aucs.setdefault("ensemble", {})[s] = metrics.auc(ens, labels)

    with (reports / "auc_summary.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "val_auc", "test_auc"])
        for m in [BASELINE_MEMBER] + list(MEMBERS) + ["ensemble"]:
            w.writerow([m, f"{aucs[m]['val']:.10f}", f"{aucs[m]['test']:.10f}"])

    rows_t, labels_t, member_t, ens_t = per_split["test"]
    roc = metrics.roc_curve(ens_t, labels_t)
    with (reports / "roc_ensemble_test.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["fpr", "tpr"])
        for f_, t_ in zip(roc.fpr, roc.tpr):
            w.writerow([f"{f_:.10f}", f"{t_:.10f}"])

    test_ids = split.ids("test")
    actual = {pid: ds.by_id[pid].price for pid in test_ids}
    grid = metrics.default_theta_grid(cfg.eval.theta_points)
    denom = cfg.eval.coverage_denominator

    ens_neighbors = _scored_neighbors(rows_t, ens_t, ds, test_ids)
    base_neighbors = _scored_neighbors(rows_t, member_t[BASELINE_MEMBER], ds, test_ids)
    ens_curve = metrics.coverage_mape_curve(ens_neighbors, actual, grid, denominator=denom)
    base_curve = metrics.coverage_mape_curve(base_neighbors, actual, grid, denominator=denom)
    _write_curve_csv(ens_curve, reports / "coverage_mape_ensemble.csv")
    _write_curve_csv(base_curve, reports / "coverage_mape_baseline.csv")

    province_of = {pid: ds.by_id[pid].province for pid in test_ids}
    prov_report = metrics.per_province_report(ens_neighbors, actual, province_of, grid, denominator=denom)
    with (reports / "per_province.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["province", "theta", "coverage_pct", "mape_pct"])
        for prov in sorted(prov_report):
            curve = prov_report[prov]
            if curve is None:
                w.writerow([prov, "", "", ""])
                continue
            for pt in curve.points:
                w.writerow(
                    [prov, f"{pt.theta:.6f}", f"{pt.coverage_pct:.8f}",
                     "" if pt.mape_pct is None else f"{pt.mape_pct:.8f}"]
                )

    results = value_all(ens_neighbors, cfg.eval.theta_default)
    write_results_csv(results, actual, reports / "valuations.csv")

    gbt_rows = []
    with _require(run_dir / "models" / "gbt_predictions.csv", "train").open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if row["split"] == "test":
                gbt_rows.append(row)
    gbt_mape = 100.0 * float(
        np.mean(
            [
                abs(float(r["predicted_price"]) - float(r["actual_price"])) / float(r["actual_price"])
                for r in gbt_rows
            ]
        )
    ) if gbt_rows else None

    target = cfg.eval.mape_target_pct
    headline = {
        "coverage_at_mape_target": {
            "target_mape_pct": target,
            "ensemble": ens_curve.coverage_at_mape(target),
            "baseline_et_no_image": base_curve.coverage_at_mape(target),
        },
        "auc": {m: aucs[m]["test"] for m in aucs},
        "gbt_regression_test_mape_pct": gbt_mape,
        "ensemble_weights": spec.to_json()["weights"],
        "theta_default": cfg.eval.theta_default,
    }
    (reports / "headline.json").write_text(json.dumps(headline, indent=2, sort_keys=True))
    return reports


# ---------------------------------------------------------------- predict


def cmd_predict(cfg: RunConfig, parcel_id: str) -> dict:
    """Value one parcel from train-split neighbor appraisals; returns the
    result as a dict (also printed by the CLI)."""
    run_dir = cfg.run_dir()
    ds = _load_dataset(cfg)
    schema, _, _, split = _load_pairs(cfg)
    if parcel_id not in ds.by_id:
        raise PipelineError(f"parcel {parcel_id!r} not in dataset")
    p = ds.by_id[parcel_id]
    idx = SpatialIndex.build(ds, cell_km=cfg.pairs.radius_km)
    neighbors = [
        (nid, d)
        for nid, d in idx.neighbors_within(p, cfg.pairs.radius_km)
        if split[nid] == "train"
    ][: cfg.pairs.max_neighbors]

    models_dir = run_dir / "models"
    spec = EnsembleSpec.load(_require(run_dir / "ensemble" / "weights.json", "tune-ensemble"))
    et = TreeEnsemble.load(_require(models_dir / "extra_trees.json", "train"))
    rf = TreeEnsemble.load(models_dir / "random_forest.json")
    rf_latent = TreeEnsemble.load(models_dir / "rf_latent.json")
    nets = {name: SimilarityNet.load(models_dir / f"{name}.npz") for name in ("dl_small", "dl_large")}

    store = TileStore(run_dir / "data" / "tiles")
    kinds = tuple(k for k in cfg.pairs.tile_kinds if k in store.kinds_present())
    scored: list[tuple[str, float, float]] = []
    if neighbors:
        records = []
        for nid, dist in neighbors:
            q = ds.by_id[nid]
            tiles = {k: (store.load(parcel_id, k), store.load(nid, k)) for k in kinds}
            row = diff_features(p, q, tiles if kinds else None, schema, ds, distance_km=dist)
            records.append(
                PairRecord(
                    primary_id=parcel_id, neighbor_id=nid, distance_km=dist,
                    features=row, label=0, split=split[parcel_id], neighbor_split="train",
                )
            )
        Xsel = feature_matrix(records, schema)
        member_scores: dict[str, np.ndarray] = {
            "extra_trees": et.predict_score(Xsel),
            "random_forest": rf.predict_score(Xsel),
        }
        involved = [parcel_id] + [nid for nid, _ in neighbors]
        for name, net in nets.items():
            section = cfg.dl_small if name == "dl_small" else cfg.dl_large
            bank, id_to_idx = _tile_bank(ds, store, section.tile_kind, section.side, ids=involved)
            arr = _pair_arrays(records, schema, bank, id_to_idx)
            member_scores[name] = predict_scores(net, arr)
            if name == "dl_small":
                member_scores["rf_on_latent"] = rf_latent.predict_score(extract_latent(net, arr))
        ens = np.clip(combine(spec, member_scores), 0.0, 1.0)
        scored = [(nid, float(s), ds.by_id[nid].price) for (nid, _), s in zip(neighbors, ens)]

    result = value_parcel(parcel_id, scored, cfg.eval.theta_default)
    return {
        "parcel_id": parcel_id,
        "covered": result.covered,
        "predicted_price": result.predicted_price,
        "actual_price": p.price,
        "theta": cfg.eval.theta_default,
        "contributors": [
            {"neighbor_id": nid, "score": s, "price": price}
            for nid, s, price in result.contributors
        ],
    }


# ---------------------------------------------------------------- full run


def run_full(cfg: RunConfig, verbose: bool = False) -> Path:
    """generate -> build-pairs -> train -> tune-ensemble -> evaluate."""
    stages = [stage_generate, stage_build_pairs, stage_train, stage_tune_ensemble, stage_evaluate]
    for stage in stages:
        t0 = time.monotonic()
        stage(cfg)
        if verbose:
            print(f"{stage.__name__}: {time.monotonic() - t0:.1f}s", flush=True)
    return cfg.run_dir()
