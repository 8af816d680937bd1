"""Evaluation: rolling-window outcome forecasting, role fairness, ablations."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from itertools import combinations
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import spearmanr

from .ingest import ROLES, GameRecord, Side
from .perf_score import FitConfig, FitError, expected_calibration_error, fit_win_model
from .rating import (
    FFA, META, PLAIN, TEAM, CombinedRating, EwmaState, RatingConfig, RatingDelta, RatingState, process_game,
)

logger = logging.getLogger(__name__)

SCOPES = ("all", "intra", "inter")


# --------------------------------------------------------------------------
# forecasting
# --------------------------------------------------------------------------

@dataclass
class ScopeMetrics:
    n: int
    accuracy: float
    ece: float


@dataclass
class ForecastWindowResult:
    train_range: tuple[datetime, datetime]
    test_range: tuple[datetime, datetime]
    n_train: int
    n_test: int
    scopes: dict                      # scope -> ScopeMetrics
    probs: np.ndarray = field(repr=False, default=None)
    labels: np.ndarray = field(repr=False, default=None)
    inter: np.ndarray = field(repr=False, default=None)

    @property
    def accuracy(self) -> float:
        return self.scopes["all"].accuracy

    @property
    def ece(self) -> float:
        return self.scopes["all"].ece


def rating_log_from_history(history: Iterable[RatingDelta], after: bool = False) -> dict:
    """game_id -> player_id -> CombinedRating, taken before (default) or after each game."""
    log: dict = {}
    for d in history:
        log.setdefault(d.game_id, {})[d.player_id] = d.combined_after if after else d.combined_before
    return log


def forecast_features(game: GameRecord, ratings: Mapping[str, CombinedRating], value: str = "theta",
                      encoding: str = "role") -> np.ndarray:
    def v(pid):
        r = ratings[pid]
        return r.theta if value == "theta" else r.mu

    by = {(ln.side, ln.role): v(ln.player_id) for ln in game.lines}
    if encoding == "mean":
        return np.array([np.mean([by[(Side.BLUE, r)] for r in ROLES]) - np.mean([by[(Side.RED, r)] for r in ROLES])])
    return np.array([by[(Side.BLUE, r)] - by[(Side.RED, r)] for r in ROLES])


def accuracy_with_ties(probs, labels) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.size == 0:
        return float("nan")
    credit = np.where(probs == 0.5, 0.5, ((probs > 0.5) == (labels == 1)).astype(np.float64))
    return float(credit.mean())


def _scope_metrics(probs, labels, mask, n_bins) -> ScopeMetrics:
    n = int(mask.sum())
    if n == 0:
        return ScopeMetrics(0, float("nan"), float("nan"))
    return ScopeMetrics(n, accuracy_with_ties(probs[mask], labels[mask]),
                        expected_calibration_error(probs[mask], labels[mask], n_bins))


def rolling_forecast_eval(
    games: Sequence[GameRecord],
    rating_log: Mapping[str, Mapping[str, CombinedRating]],
    train_span: timedelta = timedelta(days=365),
    test_span: timedelta = timedelta(days=30),
    n_bins: int = 10,
    value: str = "theta",
    encoding: str = "role",
    min_train: int = 100,
) -> list[ForecastWindowResult]:
    """Fit an outcome model on each year of pre-game ratings, test on the next month.

    ``rating_log`` must hold every player's rating from strictly before the game.
    Windows slide forward by ``test_span``.
    """
    games = [g for g in games if g.game_id in rating_log]
    if not games:
        return []
    ts = np.array([g.timestamp.timestamp() for g in games])
    X = np.array([forecast_features(g, rating_log[g.game_id], value, encoding) for g in games])
    y = np.array([1 if g.winner is Side.BLUE else 0 for g in games])
    inter = np.array([not g.is_intra_context for g in games])
    names = tuple(f"d_{r.value}" for r in ROLES) if encoding == "role" else ("d_mean",)
    cfg = FitConfig(min_rows=1)

    out = []
    t0 = games[0].timestamp
    last = games[-1].timestamp
    while t0 + train_span <= last:
        tr = (t0, t0 + train_span)
        te = (tr[1], tr[1] + test_span)
        t0 = t0 + test_span
        train = (ts >= tr[0].timestamp()) & (ts < tr[1].timestamp())
        test = (ts >= te[0].timestamp()) & (ts < te[1].timestamp())
        if train.sum() < min_train:
            logger.warning("window %s: only %d train games, skipped", tr[0].date(), int(train.sum()))
            continue
        if not test.any():
            continue
        try:
            model = fit_win_model("forecast", X[train], y[train], (0,) * len(names), cfg, names)
        except FitError as exc:
            logger.warning("window %s: %s, skipped", tr[0].date(), exc)
            continue
        p = model.predict_proba(X[test])
        yt, it = y[test], inter[test]
        scopes = {
            "all": _scope_metrics(p, yt, np.ones_like(it), n_bins),
            "intra": _scope_metrics(p, yt, ~it, n_bins),
            "inter": _scope_metrics(p, yt, it, n_bins),
        }
        out.append(ForecastWindowResult(tr, te, int(train.sum()), int(test.sum()), scopes, p, yt, it))
    return out


def summarize_forecast(results: Sequence[ForecastWindowResult], n_bins: int = 10) -> dict:
    """Pool every test prediction across windows; scope -> ScopeMetrics."""
    if not results:
        return {s: ScopeMetrics(0, float("nan"), float("nan")) for s in SCOPES}
    p = np.concatenate([r.probs for r in results])
    y = np.concatenate([r.labels for r in results])
    it = np.concatenate([r.inter for r in results])
    return {
        "all": _scope_metrics(p, y, np.ones_like(it), n_bins),
        "intra": _scope_metrics(p, y, ~it, n_bins),
        "inter": _scope_metrics(p, y, it, n_bins),
    }


# --------------------------------------------------------------------------
# fairness
# --------------------------------------------------------------------------

def wasserstein_1d(a, b) -> float:
    """Exact W1 between two empirical distributions (area between quantile functions)."""
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("Wasserstein distance of an empty sample")
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    # quantile functions are steps; integrate over the merged breakpoints
    u = np.union1d(np.arange(1, a.size) / a.size, np.arange(1, b.size) / b.size)
    edges = np.concatenate([[0.0], u, [1.0]])
    mid = 0.5 * (edges[:-1] + edges[1:])
    qa = a[np.minimum((mid * a.size).astype(np.int64), a.size - 1)]
    qb = b[np.minimum((mid * b.size).astype(np.int64), b.size - 1)]
    return float(np.sum(np.abs(qa - qb) * np.diff(edges)))


@dataclass
class FairnessResult:
    mean: float
    pairs: dict          # (role_a, role_b) -> W1
    excluded: tuple = ()


def role_fairness(values_by_role: Mapping[str, Sequence[float]]) -> FairnessResult:
    """Mean pairwise W1 between the rating distributions of the roles."""
    kept = {}
    excluded = []
    for role, vals in values_by_role.items():
        if len(vals) < 2:
            logger.warning("role %s has fewer than 2 players, excluded", role)
            excluded.append(role)
        else:
            kept[role] = vals
    if len(kept) < 2:
        raise ValueError("need at least two roles with two players each")
    pairs = {(a, b): wasserstein_1d(kept[a], kept[b]) for a, b in combinations(sorted(kept), 2)}
    return FairnessResult(float(np.mean(list(pairs.values()))), pairs, tuple(excluded))


# --------------------------------------------------------------------------
# ablations
# --------------------------------------------------------------------------

VARIANT_LABELS = {
    "plain_team": "OpenSkill",
    "plain_ffa": "FFA_OpenSkill",
    "meta_team": "Meta_OpenSkill",
    "meta_ffa": "Meta_FFA_OpenSkill",
    "ewma": "EWMA",
}


@dataclass
class VariantRun:
    name: str
    history: list
    final: dict          # player_id -> (theta, context_id, role)


def run_variant(name: str, games: Sequence[GameRecord], pscores: Mapping[str, Mapping[str, float]],
                config: RatingConfig = RatingConfig(), alpha: float = 0.05) -> VariantRun:
    if name == "ewma":
        st = EwmaState(alpha=alpha)
        for g in games:
            st.process_game(g, pscores[g.game_id])
        final = {}
        for pid, v in st.values.items():
            rc = st.role_counts[pid]
            final[pid] = (v, st.contexts[pid], max(sorted(rc), key=lambda r: rc[r]))
        return VariantRun(name, st.history, final)
    variant, mode = name.split("_")
    state = RatingState(config=config, variant=variant, mode=mode)
    for g in games:
        process_game(state, g, pscores.get(g.game_id) if mode == FFA else None)
    final = {pid: (state.combined(pid).theta, p.context_id, p.main_role) for pid, p in state.players.items()}
    return VariantRun(name, state.history, final)


def pair_order_accuracy(est: Mapping[str, float], truth: Mapping[str, float], groups: Mapping[str, str] | None = None,
                        cross_only: bool = False) -> float:
    """Share of player pairs ordered the same way by ``est`` and ``truth`` (ties earn half)."""
    ids = sorted(set(est) & set(truth))
    e = np.array([est[i] for i in ids])
    t = np.array([truth[i] for i in ids])
    de = np.sign(e[:, None] - e[None, :])
    dt = np.sign(t[:, None] - t[None, :])
    mask = np.triu(np.ones((len(ids), len(ids)), dtype=bool), 1)
    if cross_only:
        g = np.array([groups[i] for i in ids])
        mask &= g[:, None] != g[None, :]
    mask &= dt != 0
    if not mask.any():
        return float("nan")
    score = np.where(de == 0, 0.5, (de == dt).astype(np.float64))
    return float(score[mask].mean())


@dataclass
class AblationRow:
    variant: str
    label: str
    forecast: dict                  # scope -> ScopeMetrics
    fairness: float
    spearman: float = float("nan")
    cross_context_pair_accuracy: float = float("nan")
    n_windows: int = 0


def ablation_report(
    games: Sequence[GameRecord],
    pscores: Mapping[str, Mapping[str, float]],
    variants: Sequence[str] = ("plain_team", "plain_ffa", "meta_team", "meta_ffa", "ewma"),
    skills: Mapping[str, float] | None = None,
    config: RatingConfig = RatingConfig(),
    train_span: timedelta = timedelta(days=365),
    test_span: timedelta = timedelta(days=30),
    n_bins: int = 10,
) -> list[AblationRow]:
    """Run every rating variant over the same log and compare them."""
    rows = []
    for name in variants:
        run = run_variant(name, games, pscores, config)
        windows = rolling_forecast_eval(games, rating_log_from_history(run.history), train_span, test_span, n_bins)
        by_role: dict = {}
        for theta, _, role in run.final.values():
            by_role.setdefault(role, []).append(theta)
        try:
            fair = role_fairness(by_role).mean
        except ValueError:
            fair = float("nan")
        row = AblationRow(name, VARIANT_LABELS.get(name, name), summarize_forecast(windows, n_bins), fair,
                          n_windows=len(windows))
        if skills is not None:
            est = {pid: v[0] for pid, v in run.final.items() if pid in skills}
            ids = sorted(est)
            row.spearman = float(spearmanr([est[i] for i in ids], [skills[i] for i in ids])[0])
            groups = {pid: v[1] for pid, v in run.final.items()}
            row.cross_context_pair_accuracy = pair_order_accuracy(est, skills, groups, cross_only=True)
        rows.append(row)
    return rows


def format_table(rows: Sequence[AblationRow]) -> str:
    head = f"{'variant':<22}{'acc_all':>9}{'acc_intra':>10}{'acc_inter':>10}{'ece_all':>9}{'W1':>8}{'spearman':>10}{'x_ctx_acc':>10}"
    lines = [head, "-" * len(head)]
    for r in rows:
        f = r.forecast
        lines.append(
            f"{r.label:<22}{f['all'].accuracy:>9.4f}{f['intra'].accuracy:>10.4f}{f['inter'].accuracy:>10.4f}"
            f"{f['all'].ece:>9.4f}{r.fairness:>8.3f}{r.spearman:>10.4f}{r.cross_context_pair_accuracy:>10.4f}"
        )
    return "\n".join(lines)
