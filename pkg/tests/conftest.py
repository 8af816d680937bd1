import json
from dataclasses import replace
from datetime import datetime, timedelta, timezone

import pytest

from pandaskill.ingest import ROLES, EventKind, GameEvent, GameRecord, PlayerLine, Side

T0 = datetime(2021, 3, 1, tzinfo=timezone.utc)


def pid(side: Side, i: int) -> str:
    return f"{side.value[0]}{i}"


def make_lines(blue_ctx="KR", red_ctx="KR", **stats):
    lines = []
    for side, ctx in ((Side.BLUE, blue_ctx), (Side.RED, red_ctx)):
        for i, role in enumerate(ROLES):
            lines.append(PlayerLine(pid(side, i), side, role, ctx, **stats))
    return tuple(lines)


def make_game(game_id="g1", ts=T0, duration=1800.0, winner=Side.BLUE, lines=None, events=(), inter=False,
              blue_ctx="KR", red_ctx="KR", competition="LCK"):
    if lines is None:
        lines = make_lines(blue_ctx, red_ctx)
    return GameRecord(game_id, ts, duration, competition, inter, winner, tuple(lines), tuple(events))


def kill(t, actor, victim, *assists):
    return GameEvent(EventKind.CHAMPION_KILL, float(t), actor, victim, tuple(assists))


def monster(t, actor, tag="DRAKE", *assists):
    return GameEvent(EventKind.NEUTRAL_MONSTER_KILL, float(t), actor, None, tuple(assists), tag)


def building(t, actor, tag="TOWER", *assists):
    return GameEvent(EventKind.BUILDING_KILL, float(t), actor, None, tuple(assists), tag)


def with_kda_from_events(game: GameRecord) -> GameRecord:
    """Rewrite line kills/deaths/assists so they agree with the event stream."""
    k, d, a = {}, {}, {}
    for ev in game.events:
        if ev.kind is EventKind.CHAMPION_KILL:
            k[ev.actor_id] = k.get(ev.actor_id, 0) + 1
            d[ev.victim_id] = d.get(ev.victim_id, 0) + 1
            for x in ev.assist_ids:
                a[x] = a.get(x, 0) + 1
    lines = tuple(replace(ln, kills=k.get(ln.player_id, 0), deaths=d.get(ln.player_id, 0),
                          assists=a.get(ln.player_id, 0)) for ln in game.lines)
    return replace(game, lines=lines)


def dumps_games(games) -> str:
    from pandaskill.ingest import encode_game

    return "".join(json.dumps(encode_game(g)) + "\n" for g in games)


@pytest.fixture(scope="session")
def small_corpus():
    """A small single-context synthetic corpus shared by several test modules."""
    from pandaskill.synthetic import SyntheticConfig, generate_synthetic

    return generate_synthetic(SyntheticConfig(n_players=50, games_per_step=5, steps=60, reshuffle_every=10, seed=7))


@pytest.fixture(scope="session")
def small_pscores(small_corpus):
    from pandaskill.features import build_feature_table
    from pandaskill.perf_score import cross_val_pscores

    table = build_feature_table(small_corpus.games)
    out = {}
    for r in cross_val_pscores(table, k=5, seed=0):
        out.setdefault(r.game_id, {})[r.player_id] = r.pscore
    return out


@pytest.fixture(scope="session")
def multi_corpus():
    """Three contexts with rare inter-context games, two years long."""
    from pandaskill.synthetic import SyntheticConfig, generate_synthetic

    return generate_synthetic(SyntheticConfig(
        n_players=60, n_contexts=3, context_offset_step=1.5, inter_context_rate=0.03,
        games_per_step=4, steps=260, step_days=3.0, reshuffle_every=10, seed=11,
    ))


def days(n):
    return timedelta(days=n)


# --------------------------------------------------------------------------
# acceptance summary: one line per criterion at the end of the run
# --------------------------------------------------------------------------

_ACCEPTANCE: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    _ACCEPTANCE[props["criterion"]] = (props["title"], report.passed, props.get("detail", ""))


def pytest_runtest_setup(item):
    m = item.get_closest_marker("criterion")
    if m is not None:
        item.user_properties.append(("criterion", m.args[0]))
        item.user_properties.append(("title", m.args[1]))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, ok, detail = _ACCEPTANCE[n]
        tr.write_line(f"C{n:<2} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
