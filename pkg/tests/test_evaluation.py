import logging
from datetime import timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import wasserstein_distance

from conftest import T0, make_game
from oracles import w1_by_cdf_integral
from pandaskill.evaluation import (
    VARIANT_LABELS, ablation_report, accuracy_with_ties, forecast_features, format_table, pair_order_accuracy,
    rating_log_from_history, role_fairness, rolling_forecast_eval, run_variant, summarize_forecast, wasserstein_1d,
)
from pandaskill.features import build_feature_table
from pandaskill.ingest import ROLES, Side
from pandaskill.perf_score import cross_val_pscores
from pandaskill.rating import CombinedRating

samples = st.lists(st.floats(-100, 100), min_size=1, max_size=30)


# --------------------------------------------------------------------------
# Wasserstein
# --------------------------------------------------------------------------

def test_w1_examples():
    assert wasserstein_1d([0, 1], [1, 2]) == 1.0
    assert wasserstein_1d([3, 1, 2], [2, 3, 1]) == 0.0
    assert wasserstein_1d([1, 5, 9], [v - 2.5 for v in [1, 5, 9]]) == pytest.approx(2.5)
    assert wasserstein_1d([0.0], [0.0, 1.0]) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        wasserstein_1d([], [1.0])


@settings(max_examples=200, deadline=None)
@given(samples, samples)
def test_w1_matches_scipy(a, b):
    assert wasserstein_1d(a, b) == pytest.approx(wasserstein_distance(a, b), abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=8), st.lists(st.floats(-10, 10), min_size=1, max_size=8))
def test_w1_matches_cdf_quadrature(a, b):
    # midpoint quadrature of |Fa - Fb| is exact up to the cells that straddle a jump
    span = max(a + b) - min(a + b)
    assert wasserstein_1d(a, b) == pytest.approx(w1_by_cdf_integral(a, b, grid=20001), abs=2 * span * 16 / 20000 + 1e-9)


@settings(max_examples=150, deadline=None)
@given(samples, samples, samples)
def test_w1_metric_axioms(a, b, c):
    ab = wasserstein_1d(a, b)
    assert ab >= 0
    assert ab == pytest.approx(wasserstein_1d(b, a), abs=1e-9)
    assert wasserstein_1d(a, a) == 0.0
    assert ab <= wasserstein_1d(a, c) + wasserstein_1d(c, b) + 1e-9


@given(samples, st.floats(-50, 50))
def test_w1_translation(a, c):
    assert wasserstein_1d(a, [x + c for x in a]) == pytest.approx(abs(c), abs=1e-9)


# --------------------------------------------------------------------------
# role fairness
# --------------------------------------------------------------------------

def test_fairness_examples():
    base = [1.0, 4.0, 2.5, 7.0]
    roles = [r.value for r in ROLES]
    assert role_fairness({r: base for r in roles}).mean == 0.0
    shifted = {r: base for r in roles}
    shifted["Mid"] = [x + 5 for x in base]
    res = role_fairness(shifted)
    assert res.mean == pytest.approx(2.0)
    assert len(res.pairs) == 10


def test_fairness_excludes_thin_roles(caplog):
    with caplog.at_level(logging.WARNING):
        res = role_fairness({"Top": [1.0, 2.0], "Mid": [1.0, 3.0], "Bot": [9.0]})
    assert res.excluded == ("Bot",) and "Bot" in caplog.text
    assert list(res.pairs) == [("Mid", "Top")]
    with pytest.raises(ValueError):
        role_fairness({"Top": [1.0, 2.0], "Mid": [1.0]})


# --------------------------------------------------------------------------
# forecasting
# --------------------------------------------------------------------------

def test_accuracy_with_ties():
    assert accuracy_with_ties([0.7, 0.2, 0.5], [1, 1, 0]) == pytest.approx(0.5)
    assert np.isnan(accuracy_with_ties([], []))


def test_forecast_features_encodings():
    g = make_game()
    ratings = {ln.player_id: CombinedRating(10.0 + i, 1.0) for i, ln in enumerate(g.lines)}
    # blue lines come first in ROLES order, red lines follow
    assert forecast_features(g, ratings).tolist() == [-5.0] * 5
    assert forecast_features(g, ratings, encoding="mean").tolist() == [-5.0]
    assert forecast_features(g, ratings, value="mu").tolist() == [-5.0] * 5


def synthetic_log(n_days=700, gap=10.0, decisive=True, seed=0):
    rng = np.random.default_rng(seed)
    games, log = [], {}
    for k in range(n_days):
        blue_up = bool(rng.random() < 0.5)
        edge = gap if decisive else 0.0
        winner = (Side.BLUE if blue_up else Side.RED) if decisive else (Side.BLUE if rng.random() < 0.5 else Side.RED)
        g = make_game(f"g{k:04d}", T0 + timedelta(days=k), winner=winner)
        log[g.game_id] = {
            ln.player_id: CombinedRating(25.0 + (edge if (ln.side is Side.BLUE) == blue_up else 0.0)
                                         + rng.normal(0, 1) * decisive, 2.0)
            for ln in g.lines
        }
        games.append(g)
    return games, log


def test_forecast_large_gaps_are_easy():
    games, log = synthetic_log()
    res = rolling_forecast_eval(games, log)
    summary = summarize_forecast(res)
    assert summary["all"].accuracy > 0.95
    assert summary["inter"].n == 0 and np.isnan(summary["inter"].accuracy)


def test_forecast_uninformative_is_coin_flip():
    games, log = synthetic_log(n_days=1500, decisive=False, seed=3)
    summary = summarize_forecast(rolling_forecast_eval(games, log))
    n = summary["all"].n
    assert abs(summary["all"].accuracy - 0.5) < 4 * 0.5 / np.sqrt(n)


def test_windows_tile_forward():
    games, log = synthetic_log(n_days=500)
    res = rolling_forecast_eval(games, log, timedelta(days=365), timedelta(days=30))
    assert len(res) == 5
    for w in res:
        assert w.train_range[1] == w.test_range[0]
        assert w.test_range[1] - w.test_range[0] == timedelta(days=30)
        assert w.n_test == w.scopes["all"].n
    for a, b in zip(res, res[1:]):
        assert b.train_range[0] - a.train_range[0] == timedelta(days=30)


def test_thin_windows_skipped(caplog):
    games, log = synthetic_log(n_days=400)
    sparse = games[::5]
    with caplog.at_level(logging.WARNING):
        assert rolling_forecast_eval(sparse, log) == []
    assert "train games" in caplog.text


@pytest.fixture(scope="module")
def multi_pscores(multi_corpus):
    out = {}
    for r in cross_val_pscores(build_feature_table(multi_corpus.games), k=5, seed=0):
        out.setdefault(r.game_id, {})[r.player_id] = r.pscore
    return out


def test_leakage_sentinel(multi_corpus):
    run = run_variant("plain_team", multi_corpus.games, {})
    before = summarize_forecast(rolling_forecast_eval(multi_corpus.games, rating_log_from_history(run.history)))
    after = summarize_forecast(rolling_forecast_eval(multi_corpus.games,
                                                     rating_log_from_history(run.history, after=True)))
    assert after["all"].accuracy > before["all"].accuracy
    # the default log is the pre-game one
    first = run.history[0]
    assert rating_log_from_history(run.history)[first.game_id][first.player_id] == first.combined_before


def test_pre_game_log_uses_only_earlier_games(multi_corpus):
    games = multi_corpus.games
    run = run_variant("meta_team", games, {})
    log = rating_log_from_history(run.history)
    cut = len(games) // 2
    prefix = run_variant("meta_team", games[:cut + 1], {})
    target = games[cut].game_id
    assert rating_log_from_history(prefix.history)[target] == log[target]


# --------------------------------------------------------------------------
# ablations
# --------------------------------------------------------------------------

def test_pair_order_accuracy():
    truth = {"a": 1.0, "b": 2.0, "c": 3.0}
    assert pair_order_accuracy({"a": 0, "b": 5, "c": 9}, truth) == 1.0
    assert pair_order_accuracy({"a": 9, "b": 5, "c": 0}, truth) == 0.0
    assert pair_order_accuracy({"a": 1, "b": 1, "c": 1}, truth) == 0.5
    groups = {"a": "X", "b": "X", "c": "Y"}
    assert pair_order_accuracy({"a": 0, "b": 5, "c": 1}, truth, groups, cross_only=True) == 0.5


def test_ablation_is_deterministic(multi_corpus, multi_pscores):
    skills = {p: s.skill for p, s in multi_corpus.skills.items()}
    a = ablation_report(multi_corpus.games, multi_pscores, skills=skills)
    b = ablation_report(multi_corpus.games, multi_pscores, skills=skills)
    assert format_table(a) == format_table(b)
    assert [r.label for r in a] == [VARIANT_LABELS[v] for v in ("plain_team", "plain_ffa", "meta_team", "meta_ffa", "ewma")]
    for r in a:
        assert r.n_windows > 0 and 0 <= r.forecast["all"].accuracy <= 1
        assert r.fairness >= 0 and -1 <= r.spearman <= 1
