"""Performance-aware skill ratings for five-versus-five team games.

Stages: ``ingest`` (game logs) -> ``features`` -> ``perf_score`` (win models and
PScores) -> ``rating`` (Bayesian rating engine) -> ``evaluation``.
"""
from .ingest import GameEvent, GameRecord, PlayerLine, Role, Side, parse_games, read_games
from .features import FEATURE_NAMES, FeatureVector, build_feature_table, extract_features
from .perf_score import LogisticWinModel, PercentileTransform, cross_val_pscores, fit_win_model, pscore
from .rating import (
    CombinedRating, Rating, RatingConfig, RatingState, pl_update, process_game, rank_players, replay,
)

__version__ = "0.1.0"

__all__ = [
    "GameEvent", "GameRecord", "PlayerLine", "Role", "Side", "parse_games", "read_games",
    "FEATURE_NAMES", "FeatureVector", "build_feature_table", "extract_features",
    "LogisticWinModel", "PercentileTransform", "cross_val_pscores", "fit_win_model", "pscore",
    "CombinedRating", "Rating", "RatingConfig", "RatingState", "pl_update", "process_game", "rank_players", "replay",
]
