"""Match record parsing, validation and ordering.

Games arrive as JSON Lines, one game per line. See ``schema/game_record.v1.json``
for the field list.
"""
from __future__ import annotations

import enum
import io
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import IO, Iterable, Mapping

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class Side(str, enum.Enum):
    BLUE = "BLUE"
    RED = "RED"

    @property
    def other(self) -> "Side":
        return Side.RED if self is Side.BLUE else Side.BLUE


class Role(str, enum.Enum):
    TOP = "Top"
    JUNGLE = "Jungle"
    MID = "Mid"
    BOT = "Bot"
    SUPPORT = "Support"


ROLES = tuple(Role)


class EventKind(str, enum.Enum):
    CHAMPION_KILL = "CHAMPION_KILL"
    BUILDING_KILL = "BUILDING_KILL"
    NEUTRAL_MONSTER_KILL = "NEUTRAL_MONSTER_KILL"


MONSTER_TAGS = frozenset({"DRAKE", "HERALD", "BARON", "OTHER"})
BUILDING_TAGS = frozenset({"TOWER", "INHIBITOR", "NEXUS"})


class IngestError(ValueError):
    """Base class for every ingestion failure."""


class ParseError(IngestError):
    def __init__(self, line_no: int, field_path: str, message: str):
        self.line_no = line_no
        self.field_path = field_path
        super().__init__(f"line {line_no}: {field_path}: {message}")


class DuplicateGameError(IngestError):
    def __init__(self, game_id: str, first: datetime, second: datetime):
        self.game_id = game_id
        self.timestamps = (first, second)
        super().__init__(
            f"duplicate game_id {game_id!r} (timestamps {_fmt_ts(first)} and {_fmt_ts(second)})"
        )


class ValidationError(IngestError):
    def __init__(self, invariant: str, message: str, line_no: int | None = None):
        self.invariant = invariant
        self.line_no = line_no
        where = f"line {line_no}: " if line_no is not None else ""
        super().__init__(f"{where}invariant '{invariant}' violated: {message}")


@dataclass(frozen=True)
class PlayerLine:
    player_id: str
    side: Side
    role: Role
    context_id: str
    kills: int = 0
    deaths: int = 0
    assists: int = 0
    gold: float = 0.0
    experience: float = 0.0
    creep_score: float = 0.0
    wards_placed: float = 0.0
    damage_dealt_to_players: float = 0.0
    damage_taken_from_players: float = 0.0


COUNT_FIELDS = ("kills", "deaths", "assists")
REAL_FIELDS = (
    "gold",
    "experience",
    "creep_score",
    "wards_placed",
    "damage_dealt_to_players",
    "damage_taken_from_players",
)


@dataclass(frozen=True)
class GameEvent:
    kind: EventKind
    time: float
    actor_id: str
    victim_id: str | None = None
    assist_ids: tuple[str, ...] = ()
    objective_tag: str | None = None


@dataclass(frozen=True)
class GameRecord:
    game_id: str
    timestamp: datetime
    duration: float
    competition_id: str
    is_inter_context_event: bool
    winner: Side
    lines: tuple[PlayerLine, ...]
    events: tuple[GameEvent, ...] = field(default=())

    @property
    def sort_key(self) -> tuple[datetime, str]:
        return (self.timestamp, self.game_id)

    @property
    def contexts(self) -> frozenset[str]:
        return frozenset(line.context_id for line in self.lines)

    @property
    def is_intra_context(self) -> bool:
        # strict reading: all ten players must share one context
        return len(self.contexts) == 1

    def line_for(self, player_id: str) -> PlayerLine:
        for line in self.lines:
            if line.player_id == player_id:
                return line
        raise KeyError(player_id)

    def side_of(self) -> dict[str, Side]:
        return {line.player_id: line.side for line in self.lines}


def detect_context_change(
    player_id: str, new_context_id: str, history: Mapping[str, str]
) -> bool:
    """True iff the player was seen before under a different context."""
    previous = history.get(player_id)
    return previous is not None and previous != new_context_id


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------

def validate_game(game: GameRecord, line_no: int | None = None) -> None:
    """Raise :class:`ValidationError` if any record invariant does not hold."""

    def fail(invariant: str, message: str) -> None:
        raise ValidationError(invariant, message, line_no)

    if not game.game_id:
        fail("non-empty game_id", "game_id is empty")
    if not (game.duration > 0) or game.duration != game.duration:
        fail("duration > 0", f"duration is {game.duration}")
    if len(game.lines) != 10:
        fail("exactly 10 lines", f"got {len(game.lines)} player lines")
    ids = [line.player_id for line in game.lines]
    if len(set(ids)) != 10:
        fail("unique player_id", "a player appears twice in one game")
    for side in Side:
        lines = [line for line in game.lines if line.side is side]
        if len(lines) != 5:
            fail("exactly 5 lines per side", f"{side.value} has {len(lines)} lines")
        roles = {line.role for line in lines}
        if roles != set(Role):
            fail("one line per role per side", f"{side.value} roles are {sorted(r.value for r in roles)}")
    for line in game.lines:
        if not line.player_id or not line.context_id:
            fail("non-empty ids", f"player line with empty player_id/context_id")
        for name in COUNT_FIELDS + REAL_FIELDS:
            value = getattr(line, name)
            if not (value >= 0) or value != value or value == float("inf"):
                fail("counters >= 0", f"{line.player_id}.{name} = {value}")

    sides = game.side_of()
    prev_t = 0.0
    for i, ev in enumerate(game.events):
        if not (0.0 <= ev.time <= game.duration):
            fail("event time in [0, duration]", f"events[{i}].time = {ev.time}")
        if ev.time < prev_t:
            fail("events ordered", f"events[{i}] at {ev.time} precedes {prev_t}")
        prev_t = ev.time
        if ev.actor_id not in sides:
            fail("event players in game", f"events[{i}].actor_id {ev.actor_id!r} not in game")
        for a in ev.assist_ids:
            if a not in sides:
                fail("event players in game", f"events[{i}] assist {a!r} not in game")
        if ev.actor_id in ev.assist_ids:
            fail("actor not in assists", f"events[{i}] actor listed as assist")
        if len(set(ev.assist_ids)) != len(ev.assist_ids):
            fail("unique assists", f"events[{i}] repeats an assist")
        if ev.kind is EventKind.CHAMPION_KILL:
            if ev.victim_id not in sides:
                fail("event players in game", f"events[{i}].victim_id {ev.victim_id!r} not in game")
            if sides[ev.victim_id] is sides[ev.actor_id]:
                fail("victim on opposite side", f"events[{i}] victim is a teammate of the killer")
            if ev.objective_tag is not None:
                fail("objective tag matches kind", f"events[{i}] champion kill carries a tag")
        else:
            if ev.victim_id is not None:
                fail("victim only on champion kills", f"events[{i}] has a victim")
            allowed = MONSTER_TAGS if ev.kind is EventKind.NEUTRAL_MONSTER_KILL else BUILDING_TAGS
            if ev.objective_tag not in allowed:
                fail("objective tag matches kind", f"events[{i}].objective_tag = {ev.objective_tag!r}")


def check_warnings(game: GameRecord) -> list[str]:
    """Soft consistency checks; ``--strict`` promotes these to errors."""
    out = []
    if game.is_inter_context_event and game.is_intra_context:
        out.append(f"{game.game_id}: flagged inter-context event but all players share one context")
    kills: dict[str, int] = {}
    deaths: dict[str, int] = {}
    for ev in game.events:
        if ev.kind is EventKind.CHAMPION_KILL:
            kills[ev.actor_id] = kills.get(ev.actor_id, 0) + 1
            deaths[ev.victim_id] = deaths.get(ev.victim_id, 0) + 1
    for line in game.lines:
        if game.events and (kills.get(line.player_id, 0) != line.kills or deaths.get(line.player_id, 0) != line.deaths):
            out.append(f"{game.game_id}: {line.player_id} stat line kills/deaths disagree with event stream")
    return out


# --------------------------------------------------------------------------
# decoding
# --------------------------------------------------------------------------

def _parse_ts(value, line_no: int, path: str) -> datetime:
    if not isinstance(value, str):
        raise ParseError(line_no, path, "expected an ISO-8601 string")
    text = value[:-1] + "+00:00" if value.endswith("Z") else value
    try:
        ts = datetime.fromisoformat(text)
    except ValueError as exc:
        raise ParseError(line_no, path, str(exc)) from None
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def _fmt_ts(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


def _get(obj: dict, key: str, line_no: int, path: str, kind, required: bool = True, default=None):
    full = f"{path}.{key}" if path else key
    if key not in obj:
        if required:
            raise ParseError(line_no, full, "missing field")
        return default
    value = obj[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ParseError(line_no, full, f"expected a number, got {type(value).__name__}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ParseError(line_no, full, f"expected an integer, got {value!r}")
        return value
    if kind is bool:
        if not isinstance(value, bool):
            raise ParseError(line_no, full, "expected a boolean")
        return value
    if kind is str:
        if not isinstance(value, str):
            raise ParseError(line_no, full, "expected a string")
        return value
    if isinstance(kind, type) and issubclass(kind, enum.Enum):
        try:
            return kind(value)
        except ValueError:
            allowed = ", ".join(m.value for m in kind)
            raise ParseError(line_no, full, f"{value!r} not one of {allowed}") from None
    if kind is list:
        if not isinstance(value, list):
            raise ParseError(line_no, full, "expected a list")
        return value
    raise TypeError(kind)


def decode_game(obj, line_no: int = 0) -> GameRecord:
    """Build a :class:`GameRecord` from a decoded JSON object (no invariant checks)."""
    if not isinstance(obj, dict):
        raise ParseError(line_no, "<root>", "expected a JSON object")
    lines = []
    for i, raw in enumerate(_get(obj, "lines", line_no, "", list)):
        p = f"lines[{i}]"
        if not isinstance(raw, dict):
            raise ParseError(line_no, p, "expected an object")
        kw = {
            "player_id": _get(raw, "player_id", line_no, p, str),
            "side": _get(raw, "side", line_no, p, Side),
            "role": _get(raw, "role", line_no, p, Role),
            "context_id": _get(raw, "context_id", line_no, p, str),
        }
        for name in COUNT_FIELDS:
            kw[name] = _get(raw, name, line_no, p, int)
        for name in REAL_FIELDS:
            kw[name] = _get(raw, name, line_no, p, float)
        lines.append(PlayerLine(**kw))
    events = []
    for i, raw in enumerate(_get(obj, "events", line_no, "", list, required=False, default=[])):
        p = f"events[{i}]"
        if not isinstance(raw, dict):
            raise ParseError(line_no, p, "expected an object")
        assists = _get(raw, "assist_ids", line_no, p, list, required=False, default=[])
        for j, a in enumerate(assists):
            if not isinstance(a, str):
                raise ParseError(line_no, f"{p}.assist_ids[{j}]", "expected a string")
        victim = raw.get("victim_id")
        if victim is not None and not isinstance(victim, str):
            raise ParseError(line_no, f"{p}.victim_id", "expected a string or null")
        tag = raw.get("objective_tag")
        if tag is not None and not isinstance(tag, str):
            raise ParseError(line_no, f"{p}.objective_tag", "expected a string or null")
        events.append(
            GameEvent(
                kind=_get(raw, "kind", line_no, p, EventKind),
                time=_get(raw, "time", line_no, p, float),
                actor_id=_get(raw, "actor_id", line_no, p, str),
                victim_id=victim,
                assist_ids=tuple(assists),
                objective_tag=tag,
            )
        )
    return GameRecord(
        game_id=_get(obj, "game_id", line_no, "", str),
        timestamp=_parse_ts(_get(obj, "timestamp", line_no, "", str), line_no, "timestamp"),
        duration=_get(obj, "duration", line_no, "", float),
        competition_id=_get(obj, "competition_id", line_no, "", str),
        is_inter_context_event=_get(obj, "is_inter_context_event", line_no, "", bool, required=False, default=False),
        winner=_get(obj, "winner", line_no, "", Side),
        lines=tuple(lines),
        events=tuple(events),
    )


def encode_game(game: GameRecord) -> dict:
    lines = []
    for line in game.lines:
        row = {"player_id": line.player_id, "side": line.side.value, "role": line.role.value,
               "context_id": line.context_id}
        for name in COUNT_FIELDS + REAL_FIELDS:
            row[name] = getattr(line, name)
        lines.append(row)
    events = []
    for ev in game.events:
        row = {"kind": ev.kind.value, "time": ev.time, "actor_id": ev.actor_id}
        if ev.victim_id is not None:
            row["victim_id"] = ev.victim_id
        row["assist_ids"] = list(ev.assist_ids)
        if ev.objective_tag is not None:
            row["objective_tag"] = ev.objective_tag
        events.append(row)
    return {
        "game_id": game.game_id,
        "timestamp": _fmt_ts(game.timestamp),
        "duration": game.duration,
        "competition_id": game.competition_id,
        "is_inter_context_event": game.is_inter_context_event,
        "winner": game.winner.value,
        "lines": lines,
        "events": events,
    }


def parse_games(stream: IO[bytes] | IO[str] | bytes | str, strict: bool = False) -> list[GameRecord]:
    """Parse, validate, dedupe and sort a JSON Lines stream of games.

    Blank lines and lines starting with ``#`` are ignored. Returns games ordered by
    ``(timestamp, game_id)``.
    """
    if isinstance(stream, bytes):
        stream = io.BytesIO(stream)
    elif isinstance(stream, str):
        stream = io.StringIO(stream)
    seen: dict[str, GameRecord] = {}
    for line_no, raw in enumerate(stream, start=1):
        if isinstance(raw, bytes):
            try:
                raw = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise ParseError(line_no, "<line>", f"invalid UTF-8: {exc}") from None
        text = raw.strip()
        if not text or text.startswith("#"):
            continue
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(line_no, "<line>", f"invalid JSON: {exc.msg} at column {exc.colno}") from None
        game = decode_game(obj, line_no)
        validate_game(game, line_no)
        for msg in check_warnings(game):
            if strict:
                raise ValidationError("consistency", msg, line_no)
            logger.warning("line %d: %s", line_no, msg)
        if game.game_id in seen:
            raise DuplicateGameError(game.game_id, seen[game.game_id].timestamp, game.timestamp)
        seen[game.game_id] = game
    return sorted(seen.values(), key=lambda g: g.sort_key)


def serialize_games(games: Iterable[GameRecord]) -> str:
    return "".join(json.dumps(encode_game(g), separators=(",", ":")) + "\n" for g in games)


def read_games(path, strict: bool = False) -> list[GameRecord]:
    with open(path, "rb") as fh:
        return parse_games(fh, strict=strict)


def write_games(path, games: Iterable[GameRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_games(games))
