"""Skill ratings: Plackett-Luce core, free-for-all adapter, contextual + meta ratings."""
from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from datetime import datetime
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .ingest import GameRecord, Side, _fmt_ts, _parse_ts

logger = logging.getLogger(__name__)

SNAPSHOT_FORMAT = "pandaskill.snapshot"
DELTAS_FORMAT = "pandaskill.deltas"
FORMAT_VERSION = 1

FFA = "ffa"
TEAM = "team"
PLAIN = "plain"
META = "meta"


@dataclass(frozen=True)
class Rating:
    mu: float
    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma)):
            raise ValueError(f"non-finite rating ({self.mu}, {self.sigma})")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    @property
    def theta(self) -> float:
        return self.mu - 3.0 * self.sigma


@dataclass(frozen=True)
class RatingConfig:
    mu0: float = 25.0
    sigma0: float = 25.0 / 3.0
    beta: float = 25.0 / 6.0
    kappa: float = 1e-4
    tie_epsilon: float = 1e-9

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise ValueError(f"RatingConfig.{name} must be positive")

    def default(self) -> Rating:
        return Rating(self.mu0, self.sigma0)


@dataclass(frozen=True)
class CombinedRating:
    mu: float
    sigma: float

    @property
    def theta(self) -> float:
        return self.mu - 3.0 * self.sigma

    @classmethod
    def of(cls, contextual: Rating, meta: Rating | None = None) -> "CombinedRating":
        if meta is None:
            return cls(contextual.mu, contextual.sigma)
        return cls(contextual.mu + meta.mu, math.sqrt(contextual.sigma ** 2 + meta.sigma ** 2))


# --------------------------------------------------------------------------
# Plackett-Luce core
# --------------------------------------------------------------------------

def pl_update_teams(
    teams: Sequence[Sequence[Rating]], ranks: Sequence[float], config: RatingConfig = RatingConfig()
) -> list[list[Rating]]:
    """Weng-Lin Plackett-Luce update for ranked teams (lower rank wins, equal ranks tie).

    A team's strength is the sum of its players' means with summed variances;
    each player takes a share of the team update proportional to their variance.
    """
    if len(teams) < 2:
        raise ValueError("need at least two teams/entries")
    if len(ranks) != len(teams):
        raise ValueError("one rank per team")
    if any(len(t) == 0 for t in teams):
        raise ValueError("empty team")
    rank = np.asarray(ranks, dtype=np.float64)
    if not np.all(np.isfinite(rank)):
        raise ValueError("non-finite rank")
    mu = np.array([sum(r.mu for r in t) for t in teams])
    sigma_sq = np.array([sum(r.sigma * r.sigma for r in t) for t in teams])
    omega, delta = kernels.pl_team_terms(mu, sigma_sq, rank, config.beta * config.beta)
    out = []
    for i, team in enumerate(teams):
        new = []
        for r in team:
            share = r.sigma * r.sigma / sigma_sq[i]
            new.append(
                Rating(
                    r.mu + share * float(omega[i]),
                    r.sigma * math.sqrt(max(1.0 - share * float(delta[i]), config.kappa)),
                )
            )
        out.append(new)
    return out


def pl_update(entries: Sequence[tuple[Rating, float]], config: RatingConfig = RatingConfig()) -> list[Rating]:
    """Plackett-Luce update with every entry its own one-player team."""
    entries = list(entries)
    if len(entries) < 2:
        raise ValueError("need at least two entries")
    teams = [[r] for r, _ in entries]
    return [t[0] for t in pl_update_teams(teams, [rk for _, rk in entries], config)]


def ranks_from_scores(scores: Sequence[float], tie_epsilon: float = 1e-9) -> list[int]:
    """Competition ranks by descending score; scores within ``tie_epsilon`` of the
    previous distinct group share its rank."""
    scores = [float(s) for s in scores]
    if not all(math.isfinite(s) for s in scores):
        raise ValueError("non-finite score")
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    ranks = [0] * len(scores)
    group_top = None
    current = 0
    for pos, i in enumerate(order):
        if group_top is None or group_top - scores[i] > tie_epsilon:
            current = pos + 1
            group_top = scores[i]
        ranks[i] = current
    return ranks


def ffa_update(ratings: Sequence[Rating], pscores: Sequence[float], config: RatingConfig = RatingConfig()) -> list[Rating]:
    """Free-for-all update: every player is a singleton ranked by PScore."""
    if len(ratings) != len(pscores):
        raise ValueError("one pscore per rating")
    ranks = ranks_from_scores(pscores, config.tie_epsilon)
    return pl_update(list(zip(ratings, ranks)), config)


def team_outcome_update(
    ratings: Sequence[Rating], sides: Sequence[Side], winner: Side, config: RatingConfig = RatingConfig()
) -> list[Rating]:
    """Plain outcome update: two five-player teams, winners rank 1, losers rank 2."""
    idx = {s: [i for i, x in enumerate(sides) if x is s] for s in Side}
    order = [Side.BLUE, Side.RED]
    teams = [[ratings[i] for i in idx[s]] for s in order]
    ranks = [1 if s is winner else 2 for s in order]
    new = pl_update_teams(teams, ranks, config)
    out: list[Rating | None] = [None] * len(ratings)
    for s, team in zip(order, new):
        for i, r in zip(idx[s], team):
            out[i] = r
    return out


def win_prob_pair(a, b) -> float:
    """P(a's skill exceeds b's) under independent Gaussian beliefs."""
    denom = math.sqrt(a.sigma ** 2 + b.sigma ** 2)
    if denom == 0:
        return 0.5 if a.mu == b.mu else float(a.mu > b.mu)
    x = (a.mu - b.mu) / denom
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def ewma_update(prev: float | None, pscore: float, alpha: float = 0.05) -> float:
    if not 0 < alpha <= 1:
        raise ValueError("alpha must be in (0, 1]")
    if prev is None:
        return float(pscore)
    return alpha * pscore + (1.0 - alpha) * prev


# --------------------------------------------------------------------------
# state
# --------------------------------------------------------------------------

@dataclass
class PlayerRatingState:
    player_id: str
    contextual: Rating
    context_id: str
    games_played: int = 0
    role_counts: dict = field(default_factory=dict)
    last_played: datetime | None = None

    @property
    def main_role(self) -> str:
        if not self.role_counts:
            return ""
        return max(sorted(self.role_counts), key=lambda r: self.role_counts[r])


@dataclass(frozen=True)
class RatingDelta:
    """What one game did to one player's ratings.

    ``changed`` is ``"contextual"`` or ``"meta"``; ``before``/``after`` are that
    rating (taken after any context-change reset). ``combined_before`` is the
    player's full pre-game rating used for forecasting.
    """

    game_id: str
    timestamp: datetime
    player_id: str
    context_id: str
    changed: str
    before: Rating | CombinedRating
    after: Rating | CombinedRating
    combined_before: CombinedRating
    combined_after: CombinedRating
    sigma_reset: bool = False

    def to_dict(self) -> dict:
        return {
            "game_id": self.game_id,
            "timestamp": _fmt_ts(self.timestamp),
            "player_id": self.player_id,
            "context_id": self.context_id,
            "changed": self.changed,
            "mu_before": self.before.mu,
            "sigma_before": self.before.sigma,
            "mu_after": self.after.mu,
            "sigma_after": self.after.sigma,
            "combined_mu_before": self.combined_before.mu,
            "combined_sigma_before": self.combined_before.sigma,
            "combined_mu_after": self.combined_after.mu,
            "combined_sigma_after": self.combined_after.sigma,
            "sigma_reset": self.sigma_reset,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RatingDelta":
        return cls(
            game_id=d["game_id"],
            timestamp=_parse_ts(d["timestamp"], 0, "timestamp"),
            player_id=d["player_id"],
            context_id=d["context_id"],
            changed=d["changed"],
            before=_rating_or_point(d["mu_before"], d["sigma_before"]),
            after=_rating_or_point(d["mu_after"], d["sigma_after"]),
            combined_before=CombinedRating(d["combined_mu_before"], d["combined_sigma_before"]),
            combined_after=CombinedRating(d["combined_mu_after"], d["combined_sigma_after"]),
            sigma_reset=bool(d["sigma_reset"]),
        )


def _rating_or_point(mu: float, sigma: float):
    return Rating(mu, sigma) if sigma > 0 else CombinedRating(mu, sigma)


@dataclass
class RatingState:
    """Contextual ratings per player, meta ratings per context, and the update log.

    ``variant="plain"`` keeps a single rating per player (no meta layer, no
    context reset); ``variant="meta"`` splits every rating into contextual + meta.
    """

    config: RatingConfig = field(default_factory=RatingConfig)
    variant: str = META
    mode: str = FFA
    players: dict = field(default_factory=dict)   # player_id -> PlayerRatingState
    registry: dict = field(default_factory=dict)  # context_id -> Rating
    history: list = field(default_factory=list)   # RatingDelta, in processing order
    keep_history: bool = True

    def __post_init__(self):
        if self.variant not in (PLAIN, META):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.mode not in (FFA, TEAM):
            raise ValueError(f"unknown mode {self.mode!r}")

    def meta(self, context_id: str) -> Rating:
        if context_id not in self.registry:
            self.registry[context_id] = self.config.default()
        return self.registry[context_id]

    def combined(self, player_id: str) -> CombinedRating:
        if player_id not in self.players:
            raise KeyError(f"unknown player {player_id!r}")
        p = self.players[player_id]
        if self.variant == PLAIN:
            return CombinedRating.of(p.contextual)
        return CombinedRating.of(p.contextual, self.meta(p.context_id))

    def preview(self, player_id: str, context_id: str) -> CombinedRating:
        """Combined rating the player would enter a game in ``context_id`` with."""
        cfg = self.config
        p = self.players.get(player_id)
        if p is None:
            ctx = cfg.default()
        elif self.variant == META and p.context_id != context_id:
            ctx = Rating(p.contextual.mu, cfg.sigma0)
        else:
            ctx = p.contextual
        if self.variant == PLAIN:
            return CombinedRating.of(ctx)
        meta = self.registry.get(context_id, cfg.default())
        return CombinedRating.of(ctx, meta)


def combined(state: RatingState, player_id: str) -> CombinedRating:
    return state.combined(player_id)


def meta_update(
    contextual: Sequence[Rating],
    contexts: Sequence[str],
    registry: Mapping[str, Rating],
    config: RatingConfig = RatingConfig(),
    pscores: Sequence[float] | None = None,
    sides: Sequence[Side] | None = None,
    winner: Side | None = None,
) -> dict[str, Rating]:
    """Update the meta rating of every context present in an inter-context game.

    Each player enters the update at (meta mean + contextual lower bound, meta
    sigma). The offset is then removed and the per-player results are averaged
    within each context: means arithmetically, variances in quadrature. Ranks
    come from ``pscores`` (free-for-all) or from ``sides``/``winner`` (team outcome).
    """
    distinct = sorted(set(contexts))
    if len(distinct) < 2:
        raise ValueError("meta_update needs players from at least two contexts")
    offsets = [r.theta for r in contextual]
    entries = [Rating(registry[c].mu + off, registry[c].sigma) for c, off in zip(contexts, offsets)]
    if pscores is not None:
        updated = ffa_update(entries, pscores, config)
    elif sides is not None and winner is not None:
        updated = team_outcome_update(entries, sides, winner, config)
    else:
        raise ValueError("need pscores, or sides and winner")
    out = {}
    for c in distinct:
        members = [j for j, cj in enumerate(contexts) if cj == c]
        mu = sum(updated[j].mu - offsets[j] for j in members) / len(members)
        var = sum(updated[j].sigma ** 2 for j in members) / len(members)
        out[c] = Rating(mu, math.sqrt(var))
    return out


def process_game(
    state: RatingState,
    game: GameRecord,
    pscores: Mapping[str, float] | None = None,
    mode: str | None = None,
) -> list[RatingDelta]:
    """Apply one game to ``state`` in place and return one delta per player.

    Intra-context games update contextual ratings only; inter-context games
    update the meta ratings of the contexts involved only. In the meta variant a
    player whose context changed first has contextual sigma reset to the prior.
    """
    mode = mode or state.mode
    cfg = state.config
    if mode == FFA:
        if pscores is None:
            raise ValueError(f"{game.game_id}: FFA mode needs pscores")
        missing = [ln.player_id for ln in game.lines if ln.player_id not in pscores]
        if missing:
            raise KeyError(f"{game.game_id}: missing pscore for {', '.join(missing)}")
    elif mode != TEAM:
        raise ValueError(f"unknown mode {mode!r}")

    ids = [ln.player_id for ln in game.lines]
    reset = {}
    for ln in game.lines:
        p = state.players.get(ln.player_id)
        if p is None:
            logger.debug("new player %s (%s)", ln.player_id, ln.context_id)
            p = state.players[ln.player_id] = PlayerRatingState(ln.player_id, cfg.default(), ln.context_id)
            reset[ln.player_id] = False
        elif state.variant == META and p.context_id != ln.context_id:
            p.contextual = Rating(p.contextual.mu, cfg.sigma0)
            reset[ln.player_id] = True
        else:
            reset[ln.player_id] = False
        p.context_id = ln.context_id
        if state.variant == META:
            state.meta(ln.context_id)

    before_comb = {pid: state.combined(pid) for pid in ids}
    scores = [pscores[pid] for pid in ids] if mode == FFA else None
    sides = [ln.side for ln in game.lines]

    if state.variant == PLAIN or game.is_intra_context:
        changed = "contextual"
        old = [state.players[pid].contextual for pid in ids]
        if mode == FFA:
            new = ffa_update(old, scores, cfg)
        else:
            new = team_outcome_update(old, sides, game.winner, cfg)
        for pid, r in zip(ids, new):
            state.players[pid].contextual = r
        before = dict(zip(ids, old))
        after = dict(zip(ids, new))
    else:
        changed = "meta"
        contexts = [ln.context_id for ln in game.lines]
        old_meta = {c: state.registry[c] for c in set(contexts)}
        new_meta = meta_update(
            [state.players[pid].contextual for pid in ids], contexts, state.registry, cfg,
            pscores=scores, sides=sides if mode == TEAM else None, winner=game.winner if mode == TEAM else None,
        )
        state.registry.update(new_meta)
        before = {pid: old_meta[c] for pid, c in zip(ids, contexts)}
        after = {pid: new_meta[c] for pid, c in zip(ids, contexts)}

    deltas = []
    for ln in game.lines:
        p = state.players[ln.player_id]
        p.games_played += 1
        p.role_counts[ln.role.value] = p.role_counts.get(ln.role.value, 0) + 1
        p.last_played = game.timestamp
        deltas.append(
            RatingDelta(
                game.game_id, game.timestamp, ln.player_id, ln.context_id, changed,
                before[ln.player_id], after[ln.player_id],
                before_comb[ln.player_id], state.combined(ln.player_id), reset[ln.player_id],
            )
        )
    if state.keep_history:
        state.history.extend(deltas)
    return deltas


def replay(
    games: Iterable[GameRecord],
    pscores: Mapping[str, Mapping[str, float]] | None,
    config: RatingConfig = RatingConfig(),
    variant: str = META,
    mode: str = FFA,
) -> RatingState:
    """Run a whole game log through a fresh state. ``pscores`` is game_id -> player_id -> score."""
    state = RatingState(config=config, variant=variant, mode=mode)
    for game in games:
        process_game(state, game, pscores[game.game_id] if pscores is not None else None)
    return state


# --------------------------------------------------------------------------
# EWMA baseline
# --------------------------------------------------------------------------

@dataclass
class EwmaState:
    """Exponentially weighted PScore average per player; no uncertainty."""

    alpha: float = 0.05
    neutral: float = 50.0
    values: dict = field(default_factory=dict)
    contexts: dict = field(default_factory=dict)
    role_counts: dict = field(default_factory=dict)
    history: list = field(default_factory=list)

    def value(self, player_id: str) -> float:
        return self.values.get(player_id, self.neutral)

    def process_game(self, game: GameRecord, pscores: Mapping[str, float]) -> list[RatingDelta]:
        out = []
        for ln in game.lines:
            pid = ln.player_id
            prev = self.values.get(pid)
            new = ewma_update(prev, pscores[pid], self.alpha)
            self.values[pid] = new
            self.contexts[pid] = ln.context_id
            rc = self.role_counts.setdefault(pid, {})
            rc[ln.role.value] = rc.get(ln.role.value, 0) + 1
            b = self.neutral if prev is None else prev
            # no uncertainty: sigma 0, theta == value
            out.append(
                RatingDelta(game.game_id, game.timestamp, pid, ln.context_id, "ewma",
                            CombinedRating(b, 0.0), CombinedRating(new, 0.0),
                            CombinedRating(b, 0.0), CombinedRating(new, 0.0))
            )
        self.history.extend(out)
        return out


# --------------------------------------------------------------------------
# ranking
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LeaderboardRow:
    rank: int
    player_id: str
    context_id: str
    role: str
    theta: float
    mu: float
    sigma: float


def rank_players(state: RatingState, as_of: datetime | None = None) -> list[LeaderboardRow]:
    """Players ordered by lower bound (theta) descending, then player_id.

    With ``as_of``, ratings are rebuilt from the update history using only games
    played at or before that instant.
    """
    if as_of is not None:
        state = state_as_of(state, as_of)
    rows = []
    for pid, p in state.players.items():
        c = state.combined(pid)
        rows.append((c.theta, pid, p.context_id, p.main_role, c.mu, c.sigma))
    rows.sort(key=lambda r: (-r[0], r[1]))
    return [LeaderboardRow(i + 1, pid, ctx, role, th, mu, sg) for i, (th, pid, ctx, role, mu, sg) in enumerate(rows)]


def state_as_of(state: RatingState, as_of: datetime) -> RatingState:
    out = RatingState(config=state.config, variant=state.variant, mode=state.mode, keep_history=False)
    for d in state.history:
        if d.timestamp > as_of:
            break
        p = out.players.get(d.player_id)
        if p is None:
            p = out.players[d.player_id] = PlayerRatingState(d.player_id, state.config.default(), d.context_id)
        if d.sigma_reset:
            p.contextual = Rating(p.contextual.mu, state.config.sigma0)
        p.context_id = d.context_id
        p.games_played += 1
        if d.player_id in state.players:
            p.role_counts = state.players[d.player_id].role_counts
        if d.changed == "contextual":
            p.contextual = d.after
        else:
            out.registry[d.context_id] = d.after
    if state.variant == META:
        for p in out.players.values():
            out.meta(p.context_id)
    return out


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

def write_snapshot(path, state: RatingState) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        head = {"format": SNAPSHOT_FORMAT, "version": FORMAT_VERSION, "variant": state.variant,
                "mode": state.mode, "config": asdict(state.config)}
        fh.write(json.dumps(head, sort_keys=True) + "\n")
        for pid in sorted(state.players):
            p = state.players[pid]
            fh.write(json.dumps({
                "kind": "player", "player_id": pid, "context_id": p.context_id,
                "mu": p.contextual.mu, "sigma": p.contextual.sigma, "games_played": p.games_played,
                "role_counts": dict(sorted(p.role_counts.items())),
                "last_played": _fmt_ts(p.last_played) if p.last_played else None,
            }, sort_keys=True) + "\n")
        for c in sorted(state.registry):
            r = state.registry[c]
            fh.write(json.dumps({"kind": "context", "context_id": c, "mu": r.mu, "sigma": r.sigma}, sort_keys=True) + "\n")


def read_snapshot(path) -> RatingState:
    with open(path, encoding="utf-8") as fh:
        head = json.loads(fh.readline())
        if head.get("format") != SNAPSHOT_FORMAT or head.get("version") != FORMAT_VERSION:
            raise ValueError(f"{path}: not a version-{FORMAT_VERSION} snapshot")
        state = RatingState(config=RatingConfig(**head["config"]), variant=head["variant"], mode=head["mode"])
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            if d["kind"] == "player":
                state.players[d["player_id"]] = PlayerRatingState(
                    d["player_id"], Rating(d["mu"], d["sigma"]), d["context_id"], d["games_played"],
                    dict(d["role_counts"]),
                    _parse_ts(d["last_played"], 0, "last_played") if d["last_played"] else None,
                )
            elif d["kind"] == "context":
                state.registry[d["context_id"]] = Rating(d["mu"], d["sigma"])
            else:
                raise ValueError(f"{path}: unknown row kind {d['kind']!r}")
    return state


def write_deltas(path, deltas: Iterable[RatingDelta], variant: str, mode: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"format": DELTAS_FORMAT, "version": FORMAT_VERSION, "variant": variant, "mode": mode}, sort_keys=True) + "\n")
        for d in deltas:
            fh.write(json.dumps(d.to_dict()) + "\n")


def read_deltas(path) -> tuple[dict, list[RatingDelta]]:
    with open(path, encoding="utf-8") as fh:
        head = json.loads(fh.readline())
        if head.get("format") != DELTAS_FORMAT:
            raise ValueError(f"{path}: not a delta log")
        return head, [RatingDelta.from_dict(json.loads(line)) for line in fh if line.strip()]
