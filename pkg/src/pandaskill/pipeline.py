"""End-to-end orchestration with a content-hash manifest.

Each stage reads files and writes files; the CLI subcommands call the same
stage functions, so a stage run alone produces byte-identical output.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from datetime import timedelta
from typing import Callable

import numpy as np

from .evaluation import (
    SCOPES, ablation_report, rating_log_from_history, role_fairness, rolling_forecast_eval, summarize_forecast,
)
from .features import MULTI_KILL_WINDOW, WORTHLESS_DEATH_WINDOW, build_feature_table, read_feature_table, write_feature_table
from .ingest import IngestError, read_games, write_games
from .perf_score import FitConfig, load_models, read_pscores, save_models, train_models, write_pscores
from .rating import (
    FFA, META, PLAIN, TEAM, RatingConfig, RatingState, process_game, rank_players, read_deltas, read_snapshot,
    write_deltas, write_snapshot,
)

logger = logging.getLogger(__name__)

MANIFEST_FORMAT = "pandaskill.manifest"
MANIFEST_VERSION = 1

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_STAGE = 3

STAGES = ("ingest", "features", "train", "pscore", "rate", "rank", "eval")


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclass
class PipelineConfig:
    games: str = ""
    out_dir: str = "pandaskill-out"
    skills: str | None = None           # optional latent-skill table (synthetic corpora)
    seed: int = 0
    k_folds: int = 5
    pooled_transform: bool = False
    strict: bool = False
    worthless_window: float = WORTHLESS_DEATH_WINDOW
    multi_kill_window: float = MULTI_KILL_WINDOW
    l2: float = 1e-4
    max_iter: int = 10000
    tol: float = 1e-8
    mu0: float = 25.0
    sigma0: float = 25.0 / 3.0
    beta: float = 25.0 / 6.0
    kappa: float = 1e-4
    tie_epsilon: float = 1e-9
    mode: str = FFA
    variant: str = META
    train_span_days: float = 365.0
    test_span_days: float = 30.0
    bins: int = 10
    forecast_value: str = "theta"
    forecast_encoding: str = "role"
    ablation: bool = False
    top: int = 20

    def validate(self) -> None:
        if not self.games:
            raise ConfigError("no input games path")
        paths = [os.path.abspath(p) for p in (self.games, self.out_dir, self.skills) if p]
        if len(set(paths)) != len(paths):
            raise ConfigError("input and output paths must be distinct")
        if self.k_folds < 2:
            raise ConfigError("k_folds must be at least 2")
        if self.worthless_window <= 0 or self.multi_kill_window <= 0:
            raise ConfigError("feature windows must be positive")
        if self.l2 < 0 or self.max_iter < 1 or self.tol <= 0:
            raise ConfigError("model knobs out of range")
        if self.mode not in (FFA, TEAM) or self.variant not in (PLAIN, META):
            raise ConfigError("mode must be ffa|team and variant plain|meta")
        if self.train_span_days <= 0 or self.test_span_days <= 0 or self.bins < 1:
            raise ConfigError("eval spans and bins must be positive")
        if self.forecast_value not in ("theta", "mu") or self.forecast_encoding not in ("role", "mean"):
            raise ConfigError("forecast_value must be theta|mu and forecast_encoding role|mean")
        if self.top < 1:
            raise ConfigError("top must be positive")
        try:
            self.rating_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def rating_config(self) -> RatingConfig:
        return RatingConfig(self.mu0, self.sigma0, self.beta, self.kappa, self.tie_epsilon)

    def fit_config(self) -> FitConfig:
        return FitConfig(l2=self.l2, max_iter=self.max_iter, tol=self.tol)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(doc)


# --------------------------------------------------------------------------
# stages (shared with the CLI)
# --------------------------------------------------------------------------

def stage_ingest(src, dst, strict: bool = False) -> int:
    games = read_games(src, strict=strict)
    write_games(dst, games)
    return len(games)


def stage_features(games_path, dst, worthless_window=WORTHLESS_DEATH_WINDOW, multi_kill_window=MULTI_KILL_WINDOW) -> int:
    table = build_feature_table(read_games(games_path), worthless_window=worthless_window,
                                multi_kill_window=multi_kill_window)
    write_feature_table(dst, table)
    return len(table)


def stage_train(features_path, model_dir, k=5, seed=0, fit_config=FitConfig(), pooled=False) -> list[str]:
    models = train_models(read_feature_table(features_path), k, seed, fit_config, pooled)
    return save_models(model_dir, models)


def stage_pscore(features_path, model_dir, dst) -> int:
    records = load_models(model_dir).score(read_feature_table(features_path))
    write_pscores(dst, records)
    return len(records)


def pscore_map(path) -> dict:
    out: dict = {}
    for r in read_pscores(path):
        out.setdefault(r.game_id, {})[r.player_id] = r.pscore
    return out


def stage_rate(games_path, pscores_path, out_dir, mode=FFA, variant=META, config=RatingConfig()) -> list[str]:
    games = read_games(games_path)
    ps = pscore_map(pscores_path) if pscores_path else None
    if mode == FFA and ps is None:
        raise ValueError("ffa mode needs PScores")
    state = RatingState(config=config, variant=variant, mode=mode)
    for g in games:
        process_game(state, g, ps.get(g.game_id) if ps is not None else None)
    os.makedirs(out_dir, exist_ok=True)
    deltas = os.path.join(out_dir, "deltas.jsonl")
    snap = os.path.join(out_dir, "snapshot.jsonl")
    write_deltas(deltas, state.history, variant, mode)
    write_snapshot(snap, state)
    return [deltas, snap]


def leaderboard_text(snapshot_path, top: int | None = None) -> str:
    rows = rank_players(read_snapshot(snapshot_path))
    if top is not None:
        rows = rows[:top]
    lines = ["rank\tplayer_id\tcontext_id\trole\ttheta\tmu\tsigma"]
    lines += [f"{r.rank}\t{r.player_id}\t{r.context_id}\t{r.role}\t{r.theta:.4f}\t{r.mu:.4f}\t{r.sigma:.4f}" for r in rows]
    return "\n".join(lines) + "\n"


def stage_rank(snapshot_path, dst, top: int | None = None) -> None:
    with open(dst, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(leaderboard_text(snapshot_path, top))


def _num(x):
    return None if x is None or (isinstance(x, float) and np.isnan(x)) else x


def _write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def forecast_records(games_path, ratings_dir, train_days=365.0, test_days=30.0, bins=10, value="theta",
                     encoding="role") -> list[dict]:
    games = read_games(games_path)
    _, deltas = read_deltas(os.path.join(ratings_dir, "deltas.jsonl"))
    windows = rolling_forecast_eval(games, rating_log_from_history(deltas), timedelta(days=train_days),
                                    timedelta(days=test_days), bins, value, encoding)
    recs = [{"report": "forecast", "version": 1, "n_windows": len(windows)}]
    for w in windows:
        rec = {"kind": "window", "train_start": w.train_range[0].isoformat(), "test_start": w.test_range[0].isoformat(),
               "test_end": w.test_range[1].isoformat(), "n_train": w.n_train, "n_test": w.n_test}
        for s in SCOPES:
            m = w.scopes[s]
            rec[s] = {"n": m.n, "accuracy": _num(m.accuracy), "ece": _num(m.ece)}
        recs.append(rec)
    pooled = summarize_forecast(windows, bins)
    recs.append({"kind": "summary", **{s: {"n": pooled[s].n, "accuracy": _num(pooled[s].accuracy),
                                           "ece": _num(pooled[s].ece)} for s in SCOPES}})
    return recs


def fairness_records(ratings_dir) -> list[dict]:
    state = read_snapshot(os.path.join(ratings_dir, "snapshot.jsonl"))
    by_role: dict = {}
    for pid, p in state.players.items():
        by_role.setdefault(p.main_role, []).append(state.combined(pid).theta)
    res = role_fairness(by_role)
    recs = [{"report": "fairness", "version": 1, "mean_w1": res.mean, "excluded": list(res.excluded)}]
    recs += [{"kind": "pair", "role_a": a, "role_b": b, "w1": v} for (a, b), v in sorted(res.pairs.items())]
    return recs


def ablation_records(games_path, pscores_path, skills_path=None, config=RatingConfig(), train_days=365.0,
                     test_days=30.0, bins=10) -> list[dict]:
    from .synthetic import read_skills

    games = read_games(games_path)
    skills = {p: s.skill for p, s in read_skills(skills_path).items()} if skills_path else None
    rows = ablation_report(games, pscore_map(pscores_path), skills=skills, config=config,
                           train_span=timedelta(days=train_days), test_span=timedelta(days=test_days), n_bins=bins)
    recs = [{"report": "ablation", "version": 1}]
    for r in rows:
        recs.append({
            "kind": "variant", "variant": r.variant, "label": r.label, "n_windows": r.n_windows,
            **{s: {"n": r.forecast[s].n, "accuracy": _num(r.forecast[s].accuracy), "ece": _num(r.forecast[s].ece)}
               for s in SCOPES},
            "fairness_w1": _num(r.fairness), "spearman": _num(r.spearman),
            "cross_context_pair_accuracy": _num(r.cross_context_pair_accuracy),
        })
    return recs


def summary_table(records: list[dict]) -> str:
    head = records[0]
    if head["report"] == "fairness":
        lines = [f"mean pairwise W1: {head['mean_w1']:.4f}"]
        lines += [f"  {r['role_a']:<8} {r['role_b']:<8} {r['w1']:.4f}" for r in records[1:]]
        return "\n".join(lines)

    def f(x):
        return "   n/a" if x is None else f"{x:.4f}"

    if head["report"] == "forecast":
        lines = [f"{'scope':<8}{'n':>8}{'accuracy':>10}{'ece':>9}"]
        s = records[-1]
        lines += [f"{sc:<8}{s[sc]['n']:>8}{f(s[sc]['accuracy']):>10}{f(s[sc]['ece']):>9}" for sc in SCOPES]
        return f"{head['n_windows']} windows\n" + "\n".join(lines)
    lines = [f"{'variant':<20}{'acc_all':>9}{'acc_intra':>10}{'acc_inter':>10}{'ece_all':>9}{'W1':>8}{'spearman':>10}{'x_ctx':>8}"]
    for r in records[1:]:
        lines.append(f"{r['label']:<20}{f(r['all']['accuracy']):>9}{f(r['intra']['accuracy']):>10}"
                     f"{f(r['inter']['accuracy']):>10}{f(r['all']['ece']):>9}{f(r['fairness_w1']):>8}"
                     f"{f(r['spearman']):>10}{f(r['cross_context_pair_accuracy']):>8}")
    return "\n".join(lines)


def write_report(path, records) -> None:
    _write_jsonl(path, records)


# --------------------------------------------------------------------------
# manifest
# --------------------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _stage_key(name: str, knobs: dict, inputs: list[str]) -> str:
    h = hashlib.sha256()
    h.update(json.dumps({"stage": name, "knobs": knobs}, sort_keys=True).encode())
    for p in inputs:
        h.update(sha256_file(p).encode())
    return h.hexdigest()


@dataclass
class PipelineResult:
    status: int
    manifest: dict
    message: str = ""
    ran: list = field(default_factory=list)
    skipped: list = field(default_factory=list)


def _empty_manifest(cfg: PipelineConfig) -> dict:
    return {"format": MANIFEST_FORMAT, "version": MANIFEST_VERSION, "config": asdict(cfg), "stages": {}}


def _write_manifest(out_dir, manifest) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _read_manifest(out_dir) -> dict | None:
    path = os.path.join(out_dir, "manifest.json")
    if not os.path.exists(path):
        return None
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError):
        return None
    return doc if doc.get("format") == MANIFEST_FORMAT else None


def run_pipeline(cfg: PipelineConfig, force: bool = False) -> PipelineResult:
    """ingest -> features -> train -> pscore -> rate -> rank -> eval, skipping unchanged stages."""
    try:
        cfg.validate()
    except ConfigError as exc:
        return PipelineResult(EXIT_VALIDATION, _empty_manifest(cfg), f"invalid config: {exc}")
    if not os.path.exists(cfg.games):
        return PipelineResult(EXIT_VALIDATION, _empty_manifest(cfg), f"input not found: {cfg.games}")

    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    p = lambda *parts: os.path.join(out, *parts)  # noqa: E731
    os.makedirs(p("eval"), exist_ok=True)
    rc = cfg.rating_config()
    eval_args = (cfg.train_span_days, cfg.test_span_days, cfg.bins)

    def eval_stage():
        recs = forecast_records(p("games.jsonl"), p("ratings"), *eval_args, cfg.forecast_value, cfg.forecast_encoding)
        write_report(p("eval", "forecast.jsonl"), recs)
        write_report(p("eval", "fairness.jsonl"), fairness_records(p("ratings")))
        outs = [p("eval", "forecast.jsonl"), p("eval", "fairness.jsonl")]
        if cfg.ablation:
            write_report(p("eval", "ablation.jsonl"),
                         ablation_records(p("games.jsonl"), p("pscores.tsv"), cfg.skills, rc, *eval_args))
            outs.append(p("eval", "ablation.jsonl"))
        return outs

    stages: list[tuple[str, list[str], dict, Callable[[], list[str]]]] = [
        ("ingest", [cfg.games], {"strict": cfg.strict},
         lambda: (stage_ingest(cfg.games, p("games.jsonl"), cfg.strict), [p("games.jsonl")])[1]),
        ("features", [p("games.jsonl")], {"worthless_window": cfg.worthless_window,
                                          "multi_kill_window": cfg.multi_kill_window},
         lambda: (stage_features(p("games.jsonl"), p("features.tsv"), cfg.worthless_window,
                                 cfg.multi_kill_window), [p("features.tsv")])[1]),
        ("train", [p("features.tsv")], {"k": cfg.k_folds, "seed": cfg.seed, "l2": cfg.l2, "max_iter": cfg.max_iter,
                                        "tol": cfg.tol, "pooled": cfg.pooled_transform},
         lambda: stage_train(p("features.tsv"), p("models"), cfg.k_folds, cfg.seed, cfg.fit_config(),
                             cfg.pooled_transform)),
        ("pscore", [p("features.tsv"), p("models", "index.json")], {},
         lambda: (stage_pscore(p("features.tsv"), p("models"), p("pscores.tsv")), [p("pscores.tsv")])[1]),
        ("rate", [p("games.jsonl"), p("pscores.tsv")], {"mode": cfg.mode, "variant": cfg.variant, **asdict(rc)},
         lambda: stage_rate(p("games.jsonl"), p("pscores.tsv"), p("ratings"), cfg.mode, cfg.variant, rc)),
        ("rank", [p("ratings", "snapshot.jsonl")], {"top": cfg.top},
         lambda: (stage_rank(p("ratings", "snapshot.jsonl"), p("leaderboard.tsv"), cfg.top), [p("leaderboard.tsv")])[1]),
        ("eval", [p("games.jsonl"), p("pscores.tsv"), p("ratings", "deltas.jsonl"), p("ratings", "snapshot.jsonl")]
         + ([cfg.skills] if cfg.skills and cfg.ablation else []),
         {"train_span_days": cfg.train_span_days, "test_span_days": cfg.test_span_days, "bins": cfg.bins,
          "value": cfg.forecast_value, "encoding": cfg.forecast_encoding, "ablation": cfg.ablation},
         eval_stage),
    ]

    previous = _read_manifest(out) or {}
    prev_stages = previous.get("stages", {})
    manifest = _empty_manifest(cfg)
    result = PipelineResult(EXIT_OK, manifest)
    upstream_ran = False

    for name, inputs, knobs, run in stages:
        key = _stage_key(name, knobs, inputs)
        prev = prev_stages.get(name)
        fresh = (
            not force and not upstream_ran and prev is not None and prev.get("key") == key
            and prev.get("status") == "ok"
            and all(os.path.exists(p(rel)) and sha256_file(p(rel)) == h for rel, h in prev["outputs"].items())
        )
        if fresh:
            manifest["stages"][name] = prev
            result.skipped.append(name)
            logger.info("%s: unchanged, skipped", name)
            continue
        try:
            written = run()
        except IngestError as exc:
            return _fail(result, manifest, prev_stages, name, EXIT_VALIDATION, f"validation failed: {exc}", out)
        except Exception as exc:  # noqa: BLE001 - any stage error halts the run
            return _fail(result, manifest, prev_stages, name, EXIT_STAGE, str(StageError(name, exc)), out)
        if name == "ingest" and _count_lines(p("games.jsonl")) == 0:
            manifest["stages"] = {}
            _write_manifest(out, manifest)
            result.status = EXIT_VALIDATION
            result.message = "empty corpus: no games to process"
            return result
        manifest["stages"][name] = {
            "key": key,
            "status": "ok",
            "outputs": {os.path.relpath(f, out): sha256_file(f) for f in sorted(written)},
        }
        result.ran.append(name)
        upstream_ran = True
        logger.info("%s: done", name)

    _write_manifest(out, manifest)
    return result


def _count_lines(path) -> int:
    with open(path, encoding="utf-8") as fh:
        return sum(1 for line in fh if line.strip())


def _fail(result, manifest, prev_stages, stage, status, message, out) -> PipelineResult:
    # the failing stage and everything downstream of it is stale
    for name in STAGES[STAGES.index(stage):]:
        entry = prev_stages.get(name, {"key": None, "outputs": {}})
        manifest["stages"][name] = {**entry, "status": "stale"}
    manifest["failed_stage"] = stage
    _write_manifest(out, manifest)
    result.status = status
    result.message = message
    return result
