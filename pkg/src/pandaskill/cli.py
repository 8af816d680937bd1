"""Command-line entry point: ``pandaskill <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, replace

from . import pipeline as pl
from .ingest import IngestError
from .perf_score import FitError
from .synthetic import SyntheticConfig, SyntheticConfigError, generate_synthetic, write_corpus

logger = logging.getLogger("pandaskill")


def _common() -> argparse.ArgumentParser:
    # accepted both before and after the subcommand
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=argparse.SUPPRESS, help="JSON configuration file")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    p.add_argument("--force", action="store_true", default=argparse.SUPPRESS, help="rerun stages even if unchanged")
    p.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="pandaskill", parents=[common],
                                     description="Performance-aware skill ratings for team games.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="validate and sort a game log")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strict", action="store_true", default=None, help="treat warnings as errors")

    p = sub.add_parser("features", parents=[common], help="extract per-player feature rows")
    p.add_argument("--games", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--worthless-window", type=float, dest="worthless_window")
    p.add_argument("--multi-kill-window", type=float, dest="multi_kill_window")

    p = sub.add_parser("train", parents=[common], help="fit per-role win models with k-fold splits")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="model directory")
    p.add_argument("--folds", type=int, dest="k_folds")
    p.add_argument("--l2", type=float)
    p.add_argument("--max-iter", type=int, dest="max_iter")
    p.add_argument("--pooled", action="store_true", default=None, dest="pooled_transform",
                   help="share one percentile transform across folds")

    p = sub.add_parser("pscore", parents=[common], help="score feature rows with trained models")
    p.add_argument("--features", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("rate", parents=[common], help="replay games through the rating engine")
    p.add_argument("--games", required=True)
    p.add_argument("--pscores")
    p.add_argument("--mode", choices=("ffa", "team"))
    p.add_argument("--variant", choices=("plain", "meta"))
    p.add_argument("--out", required=True, help="ratings directory")

    p = sub.add_parser("rank", parents=[common], help="print a leaderboard from a snapshot")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--top", type=int)
    p.add_argument("--out", help="also write the table here")

    p = sub.add_parser("eval", parents=[common], help="forecast, fairness and ablation reports")
    p.add_argument("report", choices=("forecast", "fairness", "ablation"))
    p.add_argument("--games")
    p.add_argument("--ratings", help="ratings directory from `rate`")
    p.add_argument("--pscores", help="needed for ablation")
    p.add_argument("--skills", help="latent-skill table for synthetic corpora")
    p.add_argument("--out", required=True)
    p.add_argument("--train-days", type=float, dest="train_span_days")
    p.add_argument("--test-days", type=float, dest="test_span_days")
    p.add_argument("--bins", type=int)

    p = sub.add_parser("simulate", parents=[common], help="write a synthetic corpus with latent skills")
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", parents=[common], help="run every stage and write a manifest")
    p.add_argument("--games")
    p.add_argument("--out", dest="out_dir")
    p.add_argument("--skills")
    p.add_argument("--ablation", action="store_true", default=None)
    return parser


_OVERRIDABLE = {f for f in pl.PipelineConfig.__dataclass_fields__}


def effective_config(args) -> pl.PipelineConfig:
    """Config file values, then any flag given on the command line."""
    path = getattr(args, "config", None)
    cfg = pl.PipelineConfig.load(path) if path else pl.PipelineConfig()
    over = {k: v for k, v in vars(args).items() if k in _OVERRIDABLE and v is not None}
    return replace(cfg, **over)


def _emit(args, text: str) -> None:
    if not getattr(args, "quiet", False):
        print(text)


def _dispatch(args) -> int:
    cmd = args.command
    if cmd == "simulate":
        doc = {}
        if getattr(args, "config", None):
            with open(args.config, encoding="utf-8") as fh:
                doc = json.load(fh)
        if getattr(args, "seed", None) is not None:
            doc["seed"] = args.seed
        scfg = SyntheticConfig.from_dict(doc)
        written = write_corpus(args.out, generate_synthetic(scfg), scfg)
        _emit(args, "\n".join(written))
        return pl.EXIT_OK

    cfg = effective_config(args)
    if cmd == "ingest":
        n = pl.stage_ingest(args.input, args.out, cfg.strict)
        _emit(args, f"{n} games written to {args.out}")
    elif cmd == "features":
        n = pl.stage_features(args.games, args.out, cfg.worthless_window, cfg.multi_kill_window)
        _emit(args, f"{n} feature rows written to {args.out}")
    elif cmd == "train":
        files = pl.stage_train(args.features, args.out, cfg.k_folds, cfg.seed, cfg.fit_config(), cfg.pooled_transform)
        _emit(args, f"{len(files) - 1} models written to {args.out}")
    elif cmd == "pscore":
        n = pl.stage_pscore(args.features, args.models, args.out)
        _emit(args, f"{n} pscores written to {args.out}")
    elif cmd == "rate":
        pl.stage_rate(args.games, args.pscores, args.out, cfg.mode, cfg.variant, cfg.rating_config())
        _emit(args, f"ratings written to {args.out}")
    elif cmd == "rank":
        text = pl.leaderboard_text(args.snapshot, cfg.top if args.top is None else args.top)
        if args.out:
            with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        _emit(args, text.rstrip("\n"))
    elif cmd == "eval":
        span = (cfg.train_span_days, cfg.test_span_days, cfg.bins)
        if args.report == "forecast":
            _require(args, "games", "ratings")
            recs = pl.forecast_records(args.games, args.ratings, *span, cfg.forecast_value, cfg.forecast_encoding)
        elif args.report == "fairness":
            _require(args, "ratings")
            recs = pl.fairness_records(args.ratings)
        else:
            _require(args, "games", "pscores")
            recs = pl.ablation_records(args.games, args.pscores, cfg.skills, cfg.rating_config(), *span)
        pl.write_report(args.out, recs)
        _emit(args, pl.summary_table(recs))
    elif cmd == "run":
        res = pl.run_pipeline(cfg, force=bool(getattr(args, "force", False)))
        if res.status != pl.EXIT_OK:
            print(f"pandaskill: {res.message}", file=sys.stderr)
            return res.status
        _emit(args, f"ran: {', '.join(res.ran) or '-'}; skipped: {', '.join(res.skipped) or '-'}")
        _emit(args, f"manifest: {os.path.join(cfg.out_dir, 'manifest.json')}")
        _emit(args, json.dumps(asdict(cfg), sort_keys=True))
    return pl.EXIT_OK


def _require(args, *names) -> None:
    missing = [n for n in names if not getattr(args, n, None)]
    if missing:
        raise pl.ConfigError(f"eval {args.report} needs --{' --'.join(missing)}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if getattr(args, "quiet", False) else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except (IngestError, pl.ConfigError, SyntheticConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"pandaskill: validation failed: {exc}", file=sys.stderr)
        return pl.EXIT_VALIDATION
    except (FitError, ValueError, KeyError, OSError) as exc:
        print(f"pandaskill: {args.command} failed: {exc}", file=sys.stderr)
        return pl.EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
