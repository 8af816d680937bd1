"""Per-player end-game features.

Fifteen features per player, computed only from the player's own stat line, the
event stream, the game length and the game's total kill count.
"""
from __future__ import annotations

import logging
from dataclasses import astuple, dataclass, fields
from typing import Iterable, Mapping, Sequence

import numpy as np

from .ingest import EventKind, GameEvent, GameRecord, Side

logger = logging.getLogger(__name__)

WORTHLESS_DEATH_WINDOW = 60.0
MULTI_KILL_WINDOW = 10.0

# objectives that make a nearby death "worth it"
TEAM_OBJECTIVES = frozenset({"TOWER", "INHIBITOR", "NEXUS", "DRAKE", "HERALD", "BARON"})
# neutral objectives that can be contested
CONTESTABLE = frozenset({"DRAKE", "HERALD", "BARON"})


@dataclass(frozen=True)
class FeatureVector:
    kla: float = 0.0
    gold_per_min: float = 0.0
    xp_per_min: float = 0.0
    cs_per_min: float = 0.0
    wards_per_min: float = 0.0
    dmg_dealt_tk_ratio: float = 0.0
    dmg_dealt_per_gold_tk_ratio: float = 0.0
    dmg_taken_tk_ratio: float = 0.0
    dmg_taken_per_gold_tk_ratio: float = 0.0
    largest_multi_kill: int = 0
    largest_killing_spree_tk_ratio: float = 0.0
    worthless_death_ratio: float = 0.0
    free_kill_ratio: float = 0.0
    objective_contest_winrate: float = 0.0
    objective_contest_loserate: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)


FEATURE_NAMES: tuple[str, ...] = tuple(f.name for f in fields(FeatureVector))
PER_MINUTE_FEATURES = ("gold_per_min", "xp_per_min", "cs_per_min", "wards_per_min")

# only these two push the win probability down
NEGATIVE_FEATURES = frozenset({"worthless_death_ratio", "objective_contest_loserate"})
SIGN_CONSTRAINTS: tuple[int, ...] = tuple(-1 if n in NEGATIVE_FEATURES else 1 for n in FEATURE_NAMES)


def compute_kla(kills: int, deaths: int, assists: int) -> float:
    return (kills + assists) / (deaths + 1)


def per_minute(value: float, duration: float) -> float:
    if not duration > 0:
        raise ValueError(f"duration must be positive, got {duration}")
    return value / (duration / 60.0)


def total_kills_ratio(value: float, total_game_kills: int) -> float:
    if total_game_kills <= 0:
        return 0.0
    return value / total_game_kills


def _safe_div(num: float, den: float) -> float:
    # a subnormal denominator can overflow; treat it like zero
    if not den:
        return 0.0
    with np.errstate(over="ignore"):
        out = num / den
    return out if np.isfinite(out) else 0.0


def _kill_involved(ev: GameEvent, player_id: str) -> bool:
    return ev.kind is EventKind.CHAMPION_KILL and (ev.actor_id == player_id or player_id in ev.assist_ids)


def _team_objective(ev: GameEvent, side: Side, sides: Mapping[str, Side]) -> bool:
    return (
        ev.kind is not EventKind.CHAMPION_KILL
        and ev.objective_tag in TEAM_OBJECTIVES
        and sides.get(ev.actor_id) is side
    )


def worthless_death_flags(
    events: Sequence[GameEvent],
    player_id: str,
    sides: Mapping[str, Side],
    window: float = WORTHLESS_DEATH_WINDOW,
) -> list[bool]:
    """One flag per death of ``player_id``, True when the death bought nothing.

    A death at ``t`` is worthless when, inside ``[t - window, t + window]``, the
    player neither killed nor assisted on an enemy champion and their team took
    no objective.
    """
    if window <= 0:
        raise ValueError("window must be positive")
    side = sides[player_id]
    flags = []
    for ev in events:
        if ev.kind is not EventKind.CHAMPION_KILL or ev.victim_id != player_id:
            continue
        lo, hi = ev.time - window, ev.time + window
        useful = any(
            lo <= other.time <= hi
            and (_kill_involved(other, player_id) or _team_objective(other, side, sides))
            for other in events
        )
        flags.append(not useful)
    return flags


def _death_flags_by_event(events, sides, window) -> dict[int, bool]:
    """Map index of each champion-kill event to whether the victim's death was worthless."""
    out: dict[int, bool] = {}
    for victim in {ev.victim_id for ev in events if ev.kind is EventKind.CHAMPION_KILL}:
        idx = [i for i, ev in enumerate(events) if ev.kind is EventKind.CHAMPION_KILL and ev.victim_id == victim]
        for i, flag in zip(idx, worthless_death_flags(events, victim, sides, window)):
            out[i] = flag
    return out


def free_kill_ratio(
    events: Sequence[GameEvent],
    player_id: str,
    sides: Mapping[str, Side],
    window: float = WORTHLESS_DEATH_WINDOW,
    _flags: Mapping[int, bool] | None = None,
) -> float:
    flags = _death_flags_by_event(events, sides, window) if _flags is None else _flags
    kills = [i for i, ev in enumerate(events) if ev.kind is EventKind.CHAMPION_KILL and ev.actor_id == player_id]
    if not kills:
        return 0.0
    return sum(flags[i] for i in kills) / len(kills)


def contest_outcomes(events: Sequence[GameEvent], sides: Mapping[str, Side]) -> list[tuple[GameEvent, Side | None]]:
    """Contestable objectives with the winning side, or None when uncontested."""
    out = []
    for ev in events:
        if ev.kind is not EventKind.NEUTRAL_MONSTER_KILL or ev.objective_tag not in CONTESTABLE:
            continue
        present = {sides[p] for p in (ev.actor_id, *ev.assist_ids)}
        out.append((ev, sides[ev.actor_id] if len(present) == 2 else None))
    return out


def objective_contest_rates(
    events: Sequence[GameEvent], player_id: str, sides: Mapping[str, Side]
) -> tuple[float, float]:
    contests = contest_outcomes(events, sides)
    if not contests:
        return 0.0, 0.0
    side = sides[player_id]
    wins = losses = 0
    for ev, winner in contests:
        if winner is None or (player_id != ev.actor_id and player_id not in ev.assist_ids):
            continue
        if winner is side:
            wins += 1
        else:
            losses += 1
    return wins / len(contests), losses / len(contests)


def largest_multi_kill(kill_times: Sequence[float], window: float = MULTI_KILL_WINDOW) -> int:
    """Most kills inside any interval of length ``window``."""
    times = sorted(kill_times)
    best = 0
    lo = 0
    for hi, t in enumerate(times):
        while t - times[lo] > window:
            lo += 1
        best = max(best, hi - lo + 1)
    return best


def largest_killing_spree(events: Sequence[GameEvent], player_id: str) -> int:
    best = run = 0
    for ev in events:
        if ev.kind is not EventKind.CHAMPION_KILL:
            continue
        if ev.actor_id == player_id:
            run += 1
            best = max(best, run)
        elif ev.victim_id == player_id:
            run = 0
    return best


def extract_features(
    game: GameRecord,
    worthless_window: float = WORTHLESS_DEATH_WINDOW,
    multi_kill_window: float = MULTI_KILL_WINDOW,
) -> list[tuple[str, FeatureVector]]:
    """Feature vectors for all ten players, in ``game.lines`` order."""
    sides = game.side_of()
    events = game.events
    total_kills = sum(line.kills for line in game.lines)
    death_flags = _death_flags_by_event(events, sides, worthless_window)
    guarded = total_kills == 0
    out = []
    for line in game.lines:
        pid = line.player_id
        dealt_tk = total_kills_ratio(line.damage_dealt_to_players, total_kills)
        taken_tk = total_kills_ratio(line.damage_taken_from_players, total_kills)
        if line.gold == 0:
            guarded = True
        kill_times = [ev.time for ev in events if ev.kind is EventKind.CHAMPION_KILL and ev.actor_id == pid]
        deaths = [i for i, ev in enumerate(events) if ev.kind is EventKind.CHAMPION_KILL and ev.victim_id == pid]
        win, lose = objective_contest_rates(events, pid, sides)
        out.append(
            (
                pid,
                FeatureVector(
                    kla=compute_kla(line.kills, line.deaths, line.assists),
                    gold_per_min=per_minute(line.gold, game.duration),
                    xp_per_min=per_minute(line.experience, game.duration),
                    cs_per_min=per_minute(line.creep_score, game.duration),
                    wards_per_min=per_minute(line.wards_placed, game.duration),
                    dmg_dealt_tk_ratio=dealt_tk,
                    dmg_dealt_per_gold_tk_ratio=_safe_div(dealt_tk, line.gold),
                    dmg_taken_tk_ratio=taken_tk,
                    dmg_taken_per_gold_tk_ratio=_safe_div(taken_tk, line.gold),
                    largest_multi_kill=largest_multi_kill(kill_times, multi_kill_window),
                    largest_killing_spree_tk_ratio=total_kills_ratio(largest_killing_spree(events, pid), total_kills),
                    worthless_death_ratio=_safe_div(sum(death_flags[i] for i in deaths), len(deaths)),
                    free_kill_ratio=free_kill_ratio(events, pid, sides, worthless_window, death_flags),
                    objective_contest_winrate=win,
                    objective_contest_loserate=lose,
                ),
            )
        )
    if guarded:
        logger.debug("%s: zero denominator in a ratio feature, set to 0", game.game_id)
    return out


# --------------------------------------------------------------------------
# feature table (TSV)
# --------------------------------------------------------------------------

FEATURES_HEADER = "# pandaskill-features v1"
ID_COLUMNS = ("game_id", "player_id", "side", "role", "context_id", "win")
COLUMNS = ID_COLUMNS + FEATURE_NAMES


@dataclass
class FeatureTable:
    """Flat feature rows, one per (game, player), in game order."""

    game_id: list
    player_id: list
    side: list
    role: list
    context_id: list
    win: np.ndarray
    X: np.ndarray

    def __len__(self) -> int:
        return len(self.game_id)

    def subset(self, mask) -> "FeatureTable":
        idx = np.flatnonzero(mask)
        return FeatureTable(
            [self.game_id[i] for i in idx],
            [self.player_id[i] for i in idx],
            [self.side[i] for i in idx],
            [self.role[i] for i in idx],
            [self.context_id[i] for i in idx],
            self.win[idx],
            self.X[idx],
        )


def build_feature_table(games: Iterable[GameRecord], **knobs) -> FeatureTable:
    cols: dict[str, list] = {c: [] for c in ID_COLUMNS}
    rows = []
    for game in games:
        for line, (pid, vec) in zip(game.lines, extract_features(game, **knobs)):
            cols["game_id"].append(game.game_id)
            cols["player_id"].append(pid)
            cols["side"].append(line.side.value)
            cols["role"].append(line.role.value)
            cols["context_id"].append(line.context_id)
            cols["win"].append(1 if line.side is game.winner else 0)
            rows.append(astuple(vec))
    X = np.array(rows, dtype=np.float64).reshape(len(rows), len(FEATURE_NAMES))
    return FeatureTable(
        cols["game_id"], cols["player_id"], cols["side"], cols["role"], cols["context_id"],
        np.array(cols["win"], dtype=np.int64), X,
    )


def write_feature_table(path, table: FeatureTable) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(FEATURES_HEADER + "\n")
        fh.write("\t".join(COLUMNS) + "\n")
        for i in range(len(table)):
            ids = [table.game_id[i], table.player_id[i], table.side[i], table.role[i], table.context_id[i], str(int(table.win[i]))]
            fh.write("\t".join(ids + [repr(float(v)) for v in table.X[i]]) + "\n")


def read_feature_table(path) -> FeatureTable:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        if first != FEATURES_HEADER:
            raise ValueError(f"{path}: not a feature table (header {first!r})")
        header = fh.readline().rstrip("\n").split("\t")
        if tuple(header) != COLUMNS:
            raise ValueError(f"{path}: unexpected columns {header}")
        cols: dict[str, list] = {c: [] for c in ID_COLUMNS}
        rows = []
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if len(parts) != len(COLUMNS):
                raise ValueError(f"{path}: row with {len(parts)} fields")
            for c, v in zip(ID_COLUMNS, parts):
                cols[c].append(v)
            rows.append([float(v) for v in parts[len(ID_COLUMNS):]])
    X = np.array(rows, dtype=np.float64).reshape(len(rows), len(FEATURE_NAMES))
    return FeatureTable(
        cols["game_id"], cols["player_id"], cols["side"], cols["role"], cols["context_id"],
        np.array([int(w) for w in cols["win"]], dtype=np.int64), X,
    )
