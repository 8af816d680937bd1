import json
import subprocess
import sys

import pytest

from pandaskill import pipeline as pl
from pandaskill.cli import build_parser, effective_config, main
from pandaskill.ingest import write_games
from pandaskill.synthetic import SyntheticConfig, generate_synthetic, write_corpus

SIM = {"n_players": 30, "games_per_step": 5, "steps": 40, "step_days": 1.0, "reshuffle_every": 10, "seed": 4}
FAST = {"train_span_days": 20, "test_span_days": 10}


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    cfg = SyntheticConfig(**SIM)
    write_corpus(d, generate_synthetic(cfg), cfg)
    return d


def write_config(path, **kw):
    path.write_text(json.dumps(kw))
    return str(path)


def run_cli(tmp_path, corpus_dir, out="out", *extra):
    cfg = write_config(tmp_path / "cfg.json", **FAST)
    return main(["run", "--games", str(corpus_dir / "games.jsonl"), "--out", str(tmp_path / out),
                 "--config", cfg, "--quiet", *extra])


def manifest(d):
    return json.loads((d / "manifest.json").read_text())


def test_full_run_and_idempotent_rerun(tmp_path, corpus_dir):
    assert run_cli(tmp_path, corpus_dir) == 0
    m1 = manifest(tmp_path / "out")
    assert sorted(m1["stages"]) == sorted(pl.STAGES)
    assert all(s["status"] == "ok" for s in m1["stages"].values())
    for entry in m1["stages"].values():
        for rel, digest in entry["outputs"].items():
            assert pl.sha256_file(tmp_path / "out" / rel) == digest
    res = pl.run_pipeline(pl.PipelineConfig(games=str(corpus_dir / "games.jsonl"), out_dir=str(tmp_path / "out"), **FAST))
    assert res.status == 0 and res.ran == [] and res.skipped == list(pl.STAGES)
    assert manifest(tmp_path / "out") == m1


def test_changed_knob_reruns_from_that_stage(tmp_path, corpus_dir):
    base = dict(games=str(corpus_dir / "games.jsonl"), out_dir=str(tmp_path / "o"), **FAST)
    pl.run_pipeline(pl.PipelineConfig(**base))
    res = pl.run_pipeline(pl.PipelineConfig(**base, mode="team"))
    assert res.skipped == ["ingest", "features", "train", "pscore"]
    assert res.ran == ["rate", "rank", "eval"]
    forced = pl.run_pipeline(pl.PipelineConfig(**base, mode="team"), force=True)
    assert forced.ran == list(pl.STAGES)


def test_tampered_output_is_rebuilt(tmp_path, corpus_dir):
    cfg = pl.PipelineConfig(games=str(corpus_dir / "games.jsonl"), out_dir=str(tmp_path / "o"), **FAST)
    first = pl.run_pipeline(cfg).manifest
    (tmp_path / "o" / "leaderboard.tsv").write_text("junk\n")
    res = pl.run_pipeline(cfg)
    assert "rank" in res.ran and res.manifest == first


def test_same_seed_same_hashes(tmp_path, corpus_dir):
    assert run_cli(tmp_path, corpus_dir, "a") == 0
    assert run_cli(tmp_path, corpus_dir, "b") == 0
    strip = lambda m: {k: v["outputs"] for k, v in m["stages"].items()}  # noqa: E731
    assert strip(manifest(tmp_path / "a")) == strip(manifest(tmp_path / "b"))


def test_stage_commands_match_orchestrated_run(tmp_path, corpus_dir):
    assert run_cli(tmp_path, corpus_dir) == 0
    o, s = tmp_path / "out", tmp_path / "s"
    s.mkdir()
    cfg = write_config(tmp_path / "c2.json", **FAST)
    q = ["--quiet", "--config", cfg]
    assert main(["ingest", "--input", str(corpus_dir / "games.jsonl"), "--out", str(s / "games.jsonl"), *q]) == 0
    assert main(["features", "--games", str(s / "games.jsonl"), "--out", str(s / "features.tsv"), *q]) == 0
    assert main(["train", "--features", str(s / "features.tsv"), "--out", str(s / "models"), *q]) == 0
    assert main(["pscore", "--features", str(s / "features.tsv"), "--models", str(s / "models"),
                 "--out", str(s / "pscores.tsv"), *q]) == 0
    assert main(["rate", "--games", str(s / "games.jsonl"), "--pscores", str(s / "pscores.tsv"),
                 "--out", str(s / "ratings"), *q]) == 0
    assert main(["rank", "--snapshot", str(s / "ratings" / "snapshot.jsonl"), "--out", str(s / "leaderboard.tsv"),
                 *q]) == 0
    assert main(["eval", "forecast", "--games", str(s / "games.jsonl"), "--ratings", str(s / "ratings"),
                 "--out", str(s / "forecast.jsonl"), *q]) == 0
    assert main(["eval", "fairness", "--ratings", str(s / "ratings"), "--out", str(s / "fairness.jsonl"), *q]) == 0
    for rel in ("games.jsonl", "features.tsv", "pscores.tsv", "ratings/deltas.jsonl", "ratings/snapshot.jsonl",
                "leaderboard.tsv", "models/index.json"):
        assert (o / rel).read_bytes() == (s / rel).read_bytes(), rel
    assert (o / "eval" / "forecast.jsonl").read_bytes() == (s / "forecast.jsonl").read_bytes()
    assert (o / "eval" / "fairness.jsonl").read_bytes() == (s / "fairness.jsonl").read_bytes()


def test_forecast_report_has_windows(tmp_path, corpus_dir):
    assert run_cli(tmp_path, corpus_dir) == 0
    recs = [json.loads(x) for x in (tmp_path / "out" / "eval" / "forecast.jsonl").read_text().splitlines()]
    assert any(r.get("kind") == "window" for r in recs)


def test_ablation_report_in_run(tmp_path, corpus_dir):
    assert run_cli(tmp_path, corpus_dir, "out", "--ablation", "--skills", str(corpus_dir / "latent_skills.tsv")) == 0
    text = (tmp_path / "out" / "eval" / "ablation.jsonl").read_text()
    for label in ("OpenSkill", "FFA_OpenSkill", "Meta_OpenSkill", "Meta_FFA_OpenSkill", "EWMA"):
        assert f'"{label}"' in text


def test_empty_corpus_exits_2(tmp_path):
    (tmp_path / "empty.jsonl").write_text("")
    code = main(["run", "--games", str(tmp_path / "empty.jsonl"), "--out", str(tmp_path / "o"), "--quiet"])
    assert code == 2
    assert manifest(tmp_path / "o")["stages"] == {}


def test_bad_record_exits_2(tmp_path, capsys):
    (tmp_path / "bad.jsonl").write_text('{"game_id": "x"}\n')
    assert main(["run", "--games", str(tmp_path / "bad.jsonl"), "--out", str(tmp_path / "o"), "--quiet"]) == 2
    assert "line 1" in capsys.readouterr().err
    m = manifest(tmp_path / "o")
    assert m["failed_stage"] == "ingest" and m["stages"]["ingest"]["status"] == "stale"


def test_stage_failure_exits_3_and_marks_downstream_stale(tmp_path, corpus_dir):
    games = generate_synthetic(SyntheticConfig(**SIM)).games
    write_games(tmp_path / "few.jsonl", games[:4])       # far too few rows to fit a model
    res = pl.run_pipeline(pl.PipelineConfig(games=str(tmp_path / "few.jsonl"), out_dir=str(tmp_path / "o")))
    assert res.status == 3 and "train" in res.message
    m = manifest(tmp_path / "o")
    assert m["failed_stage"] == "train"
    assert m["stages"]["features"]["status"] == "ok"
    assert [m["stages"][s]["status"] for s in pl.STAGES[2:]] == ["stale"] * 5


def test_config_errors_exit_2(tmp_path, corpus_dir):
    games = str(corpus_dir / "games.jsonl")
    bad = write_config(tmp_path / "bad.json", nonsense=1)
    assert main(["run", "--games", games, "--out", str(tmp_path / "o"), "--config", bad, "--quiet"]) == 2
    zero = write_config(tmp_path / "zero.json", beta=0)
    assert main(["run", "--games", games, "--out", str(tmp_path / "o"), "--config", zero, "--quiet"]) == 2
    assert main(["run", "--games", games, "--out", games, "--quiet"]) == 2
    assert main(["run", "--games", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "o"), "--quiet"]) == 2
    assert main(["eval", "forecast", "--out", str(tmp_path / "x.jsonl"), "--quiet"]) == 2


def test_flags_override_config_file(tmp_path):
    cfg = write_config(tmp_path / "c.json", seed=3, mode="team", top=5)
    args = build_parser().parse_args(["--config", cfg, "rate", "--games", "g", "--out", "o", "--mode", "ffa"])
    eff = effective_config(args)
    assert (eff.seed, eff.mode, eff.top) == (3, "ffa", 5)
    args = build_parser().parse_args(["rank", "--snapshot", "s", "--seed", "9"])
    assert effective_config(args).seed == 9


def test_simulate_command(tmp_path):
    cfg = write_config(tmp_path / "sim.json", **SIM)
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "sim"), "--quiet"]) == 0
    assert (tmp_path / "sim" / "games.jsonl").exists() and (tmp_path / "sim" / "latent_skills.tsv").exists()
    bad = write_config(tmp_path / "sim_bad.json", n_players=7)
    assert main(["simulate", "--config", bad, "--out", str(tmp_path / "x"), "--quiet"]) == 2


def test_rank_prints_top_rows(tmp_path, corpus_dir, capsys):
    assert run_cli(tmp_path, corpus_dir) == 0
    capsys.readouterr()
    assert main(["rank", "--snapshot", str(tmp_path / "out" / "ratings" / "snapshot.jsonl"), "--top", "3"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 4 and lines[1].split()[0] == "1"


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "pandaskill", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "simulate" in out.stdout
