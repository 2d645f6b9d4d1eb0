"""Command-line entry point: ``landval <command> --config <path> [--set k=v]``."""

from __future__ import annotations

import argparse
import json
import sys

from landval import pipeline
from landval.config import ConfigError, load_config
from landval.data import ParcelCsvError
from landval.fetch import ConfigurationError, FetchConfig, FetchError, TileFetcher

COMMANDS = ("generate", "fetch-tiles", "build-pairs", "train", "tune-ensemble", "evaluate", "predict")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config; defaults apply when omitted")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY.PATH=VALUE", help="override a config field")
    p.add_argument("--seed", type=int, help="master seed override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="landval", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        _add_common(p)
        if name == "predict":
            p.add_argument("parcel_id")
        if name == "fetch-tiles":
            p.add_argument("--rate", type=float, default=10.0, help="requests per second")
            p.add_argument("--url-template", help="static map URL template")
    return parser


def cmd_fetch_tiles(cfg, args) -> int:
    from landval.data import load_parcels

    run_dir = cfg.run_dir()
    parcels_csv = run_dir / "data" / "parcels.csv"
    if not parcels_csv.exists():
        print(f"missing artifact {parcels_csv}; run `landval generate` first", file=sys.stderr)
        return 2
    ds = load_parcels(parcels_csv)
    fetch_cfg = FetchConfig(
        cache_dir=run_dir / "data" / "tile_cache",
        rate_limit_per_sec=args.rate,
        side=cfg.world.tile_side,
        kinds=tuple(cfg.pairs.tile_kinds),
    )
    if args.url_template:
        fetch_cfg.url_template = args.url_template
    fetcher = TileFetcher(fetch_cfg)
    done = 0
    for p in ds.parcels:
        for kind in fetch_cfg.kinds:
            fetcher.fetch_tile(p, kind)
            done += 1
    print(f"fetched or reused {done} tiles under {fetch_cfg.store_root()}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, overrides=args.overrides, seed=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        if args.command == "generate":
            out = pipeline.stage_generate(cfg)
            print(f"world written to {out}")
        elif args.command == "fetch-tiles":
            return cmd_fetch_tiles(cfg, args)
        elif args.command == "build-pairs":
            out = pipeline.stage_build_pairs(cfg)
            print(f"pairs written to {out}")
        elif args.command == "train":
            out = pipeline.stage_train(cfg)
            print(f"models written to {out}")
        elif args.command == "tune-ensemble":
            out = pipeline.stage_tune_ensemble(cfg)
            print(f"ensemble weights written to {out}")
        elif args.command == "evaluate":
            out = pipeline.stage_evaluate(cfg)
            print(f"reports written to {out}")
        elif args.command == "predict":
            result = pipeline.cmd_predict(cfg, args.parcel_id)
            print(json.dumps(result, indent=2, sort_keys=True))
    except pipeline.PipelineError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except (ParcelCsvError, ConfigurationError, FetchError) as exc:
        print(str(exc), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
