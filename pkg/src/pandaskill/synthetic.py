"""Synthetic match corpus with known latent skills.

Each player has a hidden skill ``context_offset + spread * z``. Teams of five
(one per role) play each other; the stronger side wins with probability
``sigmoid(skill_gap / noise_scale)`` and every player's stat line and events are
driven by a noisy performance level that grows with their own skill relative to
the opposition.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta, timezone

import numpy as np

from .ingest import EventKind, GameEvent, GameRecord, PlayerLine, Role, ROLES, Side, write_games

# per-minute baselines by role: gold, xp, cs, wards, damage dealt, damage taken
_ROLE_BASE = {
    Role.TOP: (380.0, 480.0, 8.0, 0.35, 600.0, 750.0),
    Role.JUNGLE: (360.0, 420.0, 5.5, 0.45, 450.0, 800.0),
    Role.MID: (400.0, 500.0, 8.5, 0.40, 750.0, 500.0),
    Role.BOT: (430.0, 420.0, 9.0, 0.40, 800.0, 450.0),
    Role.SUPPORT: (240.0, 320.0, 1.2, 1.40, 250.0, 550.0),
}
# relative weight of each role in getting kills
_ROLE_KILL = {Role.TOP: 1.0, Role.JUNGLE: 1.0, Role.MID: 1.2, Role.BOT: 1.4, Role.SUPPORT: 0.4}


class SyntheticConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticConfig:
    n_players: int = 200
    n_contexts: int = 1
    context_offsets: tuple = ()          # one mean per context; empty -> evenly spaced
    context_offset_step: float = 1.0     # spacing used when context_offsets is empty
    within_spread: float = 1.0
    games_per_step: int = 10
    steps: int = 200
    step_days: float = 1.0
    inter_context_rate: float = 0.0
    noise_scale: float = 2.0
    perf_noise: float = 1.0
    outcome_effect: float = 0.0
    transfer_rate: float = 0.0           # chance per step of one cross-context swap
    reshuffle_every: int = 0             # steps between within-context roster shuffles; 0 = never
    role_symmetric: bool = False
    start: str = "2020-01-01T00:00:00Z"
    seed: int = 0

    def validate(self) -> None:
        if self.n_players <= 0 or self.n_contexts <= 0 or self.games_per_step <= 0 or self.steps <= 0:
            raise SyntheticConfigError("counts must be positive")
        if self.n_players % (5 * self.n_contexts):
            raise SyntheticConfigError("n_players must be a multiple of 5 * n_contexts")
        if self.n_players // (5 * self.n_contexts) < 2:
            raise SyntheticConfigError("need at least two teams per context")
        for name in ("inter_context_rate", "transfer_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise SyntheticConfigError(f"{name} must be in [0, 1]")
        if self.n_contexts == 1 and (self.inter_context_rate > 0 or self.transfer_rate > 0):
            raise SyntheticConfigError("a single context cannot have inter-context games or transfers")
        if self.context_offsets and len(self.context_offsets) != self.n_contexts:
            raise SyntheticConfigError("one offset per context")
        if self.reshuffle_every < 0:
            raise SyntheticConfigError("reshuffle_every must be >= 0")
        if self.noise_scale < 0 or self.perf_noise < 0 or self.within_spread < 0 or self.step_days <= 0:
            raise SyntheticConfigError("scales must be non-negative")

    def offsets(self) -> list[float]:
        if self.context_offsets:
            return [float(v) for v in self.context_offsets]
        mid = (self.n_contexts - 1) / 2.0
        return [(c - mid) * self.context_offset_step for c in range(self.n_contexts)]

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        d = dict(d)
        if "context_offsets" in d:
            d["context_offsets"] = tuple(d["context_offsets"])
        return cls(**d)


@dataclass
class SkillRow:
    player_id: str
    role: str
    context_id: str        # context at the end of the simulation
    initial_context_id: str
    skill: float


@dataclass
class SyntheticCorpus:
    games: list
    skills: dict = field(default_factory=dict)  # player_id -> SkillRow


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _win_prob(gap: float, noise_scale: float) -> float:
    if math.isinf(noise_scale):
        return 0.5
    if noise_scale == 0:
        return 1.0 if gap > 0 else (0.0 if gap < 0 else 0.5)
    return _sigmoid(gap / noise_scale)


def _softmax_pick(rng, weights) -> int:
    w = np.asarray(weights, dtype=np.float64)
    return int(rng.choice(len(w), p=w / w.sum()))


def generate_synthetic(config: SyntheticConfig) -> SyntheticCorpus:
    """Simulate ``steps * games_per_step`` games; deterministic for a given seed."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    offsets = config.offsets()
    teams_per_ctx = config.n_players // (5 * config.n_contexts)
    contexts = [f"C{c}" for c in range(config.n_contexts)]

    # team roster: team -> {role: player_id}; team -> context
    skill: dict[str, float] = {}
    role_of: dict[str, Role] = {}
    roster: list[dict] = []
    team_ctx: list[str] = []
    n = 0
    for c, ctx in enumerate(contexts):
        shared = rng.standard_normal(teams_per_ctx) if config.role_symmetric else None
        per_role = {}
        for role in ROLES:
            z = rng.permutation(shared) if shared is not None else rng.standard_normal(teams_per_ctx)
            per_role[role] = z
        for t in range(teams_per_ctx):
            members = {}
            for role in ROLES:
                n += 1
                pid = f"P{n:05d}"
                skill[pid] = offsets[c] + config.within_spread * float(per_role[role][t])
                role_of[pid] = role
                members[role] = pid
            roster.append(members)
            team_ctx.append(ctx)
    initial_ctx = {pid: team_ctx[t] for t, members in enumerate(roster) for pid in members.values()}
    teams_by_ctx = {ctx: [t for t in range(len(roster)) if team_ctx[t] == ctx] for ctx in contexts}

    start = datetime.fromisoformat(config.start.replace("Z", "+00:00")).astimezone(timezone.utc)
    games = []
    g = 0
    for step in range(config.steps):
        if config.transfer_rate > 0 and rng.random() < config.transfer_rate:
            role = ROLES[int(rng.integers(5))]
            ca, cb = rng.choice(len(contexts), size=2, replace=False)
            ta = int(rng.choice(teams_by_ctx[contexts[ca]]))
            tb = int(rng.choice(teams_by_ctx[contexts[cb]]))
            roster[ta][role], roster[tb][role] = roster[tb][role], roster[ta][role]
        if config.reshuffle_every and step and step % config.reshuffle_every == 0:
            for ctx in contexts:
                team_ids = teams_by_ctx[ctx]
                for role in ROLES:
                    pool = [roster[t][role] for t in team_ids]
                    for t, pid in zip(team_ids, rng.permutation(pool)):
                        roster[t][role] = str(pid)
        day = start + timedelta(days=step * config.step_days)
        for j in range(config.games_per_step):
            g += 1
            inter = config.n_contexts > 1 and rng.random() < config.inter_context_rate
            if inter:
                ca, cb = rng.choice(len(contexts), size=2, replace=False)
                ta = int(rng.choice(teams_by_ctx[contexts[ca]]))
                tb = int(rng.choice(teams_by_ctx[contexts[cb]]))
            else:
                ctx = contexts[int(rng.integers(len(contexts)))]
                ta, tb = (int(x) for x in rng.choice(teams_by_ctx[ctx], size=2, replace=False))
            if rng.random() < 0.5:
                ta, tb = tb, ta
            ts = day + timedelta(minutes=j * (24 * 60 * config.step_days / config.games_per_step))
            games.append(
                _simulate_game(
                    rng, config, f"G{g:07d}", ts, roster[ta], roster[tb],
                    team_ctx[ta], team_ctx[tb], skill, role_of, inter,
                )
            )
    final_ctx = {pid: team_ctx[t] for t, members in enumerate(roster) for pid in members.values()}
    skills = {
        pid: SkillRow(pid, role_of[pid].value, final_ctx[pid], initial_ctx[pid], skill[pid]) for pid in sorted(skill)
    }
    return SyntheticCorpus(games, skills)


def _simulate_game(rng, cfg, game_id, ts, blue, red, blue_ctx, red_ctx, skill, role_of, inter) -> GameRecord:
    side_members = {Side.BLUE: blue, Side.RED: red}
    side_ctx = {Side.BLUE: blue_ctx, Side.RED: red_ctx}
    total = {s: sum(skill[p] for p in m.values()) for s, m in side_members.items()}
    p_blue = _win_prob(total[Side.BLUE] - total[Side.RED], cfg.noise_scale)
    winner = Side.BLUE if rng.random() < p_blue else Side.RED
    loser = winner.other

    # performance: own skill plus noise and a small bump for the result
    perf = {}
    for s, members in side_members.items():
        for pid in members.values():
            perf[pid] = (skill[pid] + cfg.perf_noise * float(rng.standard_normal())
                         + (cfg.outcome_effect if s is winner else -cfg.outcome_effect))
    side_of = {pid: s for s, m in side_members.items() for pid in m.values()}
    q_side = {s: np.mean([perf[p] for p in m.values()]) for s, m in side_members.items()}

    minutes = float(rng.uniform(24.0, 40.0))
    duration = round(minutes * 60.0, 1)
    events: list[GameEvent] = []

    # fights: clustered champion kills
    n_fights = int(rng.poisson(minutes * 0.6))
    for _ in range(n_fights):
        t0 = float(rng.uniform(60.0, duration - 30.0))
        n_kills = 1 + int(rng.binomial(3, 0.3))
        for k in range(n_kills):
            t = round(min(duration, t0 + k * float(rng.uniform(1.0, 6.0))), 1)
            # killer drawn from all ten players by individual form
            pool = list(side_of)
            killer = pool[_softmax_pick(rng, [_ROLE_KILL[role_of[p]] * math.exp(1.2 * perf[p]) for p in pool])]
            killer_side = side_of[killer]
            ks = list(side_members[killer_side].values())
            vs = list(side_members[killer_side.other].values())
            victim = vs[_softmax_pick(rng, [math.exp(-1.2 * perf[p]) for p in vs])]
            assists = tuple(p for p in ks if p != killer and rng.random() < _sigmoid(0.5 * perf[p] - 0.3))
            events.append(GameEvent(EventKind.CHAMPION_KILL, t, killer, victim, assists))

    # neutral objectives, sometimes contested
    for tag, count in (("DRAKE", int(rng.integers(2, 6))), ("HERALD", int(rng.integers(0, 3))),
                       ("BARON", int(rng.integers(0, 3))), ("OTHER", int(rng.integers(0, 4)))):
        for _ in range(count):
            t = round(float(rng.uniform(300.0, duration - 10.0)), 1)
            taker = winner if rng.random() < 0.5 + 0.2 * math.tanh(q_side[winner] - q_side[loser]) else loser
            members = side_members[taker]
            actor = members[Role.JUNGLE] if rng.random() < 0.6 else list(members.values())[int(rng.integers(5))]
            assists = [p for p in members.values() if p != actor and rng.random() < 0.4]
            if tag != "OTHER" and rng.random() < 0.3:
                others = list(side_members[taker.other].values())
                assists.append(others[_softmax_pick(rng, [math.exp(0.3 * perf[p]) for p in others])])
            events.append(GameEvent(EventKind.NEUTRAL_MONSTER_KILL, t, actor, None, tuple(assists), tag))

    # structures: the winner takes a few more; the destroyer is the side's best performer more often
    for side, n_towers, n_inhib in ((winner, int(rng.integers(3, 8)), int(rng.integers(1, 3))),
                                    (loser, int(rng.integers(2, 7)), int(rng.integers(0, 2)))):
        members = list(side_members[side].values())
        weights = [math.exp(perf[p]) for p in members]
        for _ in range(n_towers):
            t = round(float(rng.uniform(420.0, duration - 5.0)), 1)
            events.append(GameEvent(EventKind.BUILDING_KILL, t, members[_softmax_pick(rng, weights)], None, (), "TOWER"))
        for _ in range(n_inhib):
            t = round(float(rng.uniform(0.7 * duration, duration - 5.0)), 1)
            events.append(GameEvent(EventKind.BUILDING_KILL, t, members[_softmax_pick(rng, weights)], None, (), "INHIBITOR"))
    wm = list(side_members[winner].values())
    events.append(GameEvent(EventKind.BUILDING_KILL, duration, wm[int(rng.integers(5))], None, (), "NEXUS"))
    events.sort(key=lambda e: e.time)

    kills = {p: 0 for p in side_of}
    deaths = {p: 0 for p in side_of}
    assists_n = {p: 0 for p in side_of}
    for ev in events:
        if ev.kind is EventKind.CHAMPION_KILL:
            kills[ev.actor_id] += 1
            deaths[ev.victim_id] += 1
            for a in ev.assist_ids:
                assists_n[a] += 1

    lines = []
    for side in (Side.BLUE, Side.RED):
        for role, pid in side_members[side].items():
            base = _ROLE_BASE[role]
            q = perf[pid]

            def stat(i, slope, jitter=0.06):
                return round(minutes * base[i] * math.exp(slope * q + jitter * float(rng.standard_normal())), 1)

            lines.append(
                PlayerLine(
                    player_id=pid, side=side, role=role, context_id=side_ctx[side],
                    kills=kills[pid], deaths=deaths[pid], assists=assists_n[pid],
                    gold=stat(0, 0.12), experience=stat(1, 0.10), creep_score=stat(2, 0.10),
                    wards_placed=stat(3, 0.08, 0.15), damage_dealt_to_players=stat(4, 0.20, 0.15),
                    damage_taken_from_players=stat(5, -0.05, 0.15),
                )
            )
    comp = "INTL" if inter else f"{blue_ctx}-LEAGUE"
    return GameRecord(game_id, ts, duration, f"{comp}-{ts.year}", inter, winner, tuple(lines), tuple(events))


def write_corpus(out_dir, corpus: SyntheticCorpus, config: SyntheticConfig | None = None) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    games_path = os.path.join(out_dir, "games.jsonl")
    skills_path = os.path.join(out_dir, "latent_skills.tsv")
    write_games(games_path, corpus.games)
    with open(skills_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("# pandaskill-latent-skills v1\n")
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["player_id", "role", "context_id", "initial_context_id", "skill"])
        for row in corpus.skills.values():
            w.writerow([row.player_id, row.role, row.context_id, row.initial_context_id, repr(row.skill)])
    written = [games_path, skills_path]
    if config is not None:
        import json

        path = os.path.join(out_dir, "simulate_config.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(config), fh, indent=1, sort_keys=True)
            fh.write("\n")
        written.append(path)
    return written


def read_skills(path) -> dict[str, SkillRow]:
    with open(path, encoding="utf-8") as fh:
        fh.readline()
        reader = csv.DictReader(fh, delimiter="\t")
        return {
            r["player_id"]: SkillRow(r["player_id"], r["role"], r["context_id"], r["initial_context_id"], float(r["skill"]))
            for r in reader
        }
