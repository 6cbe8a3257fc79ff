import csv
import io
import math
from pathlib import Path

import pytest

from uavtwin.cli import main as cli
from uavtwin.cli.config import ConfigError, RunConfig, apply_overrides, load_config, to_dict
from uavtwin.cli.main import main
from uavtwin.cli.plots import line_chart, moving_average
from uavtwin.env import EnvConfig, evaluate_position
from uavtwin.ledger import InvariantViolation
from uavtwin.ppo import MLPShape, PPOHyperparams
from uavtwin.scaling import predicted_candidate_paths, predicted_macs
from uavtwin.scene import Box, Scene, Vec3, generate_urban_grid, load_scene, save_scene

GOLDEN = Path(__file__).parent / "golden"
QUICK = ["--set", "ppo.episodes=2", "--set", "env.episode_length=5", "--set", "ppo.width=16"]


def run(*argv):
    buf = io.StringIO()
    code = main(list(argv), stream=buf)
    return code, buf.getvalue()


def field(text, key):
    for line in text.splitlines():
        if line.startswith(key + ":"):
            return line.split(":", 1)[1].strip()
    raise KeyError(key)


def header(path):
    return Path(path).read_text().splitlines()[0] + "\n"


# -- scene-gen -------------------------------------------------------------


def test_scene_gen_default(tmp_path):
    code, out = run("scene-gen", "--out", str(tmp_path))
    assert code == 0
    assert field(out, "buildings") == "12" and field(out, "complexity_L") == "61"
    assert field(out, "receivers") == "3"
    assert load_scene(tmp_path / "scene.txt") == RunConfig().build_scene()


def test_scene_gen_rejects_inverted_height_range(tmp_path, capsys):
    code, _ = run("scene-gen", "--out", str(tmp_path), "--set", "scene.height_range=[60, 20]")
    assert code == 2
    assert "height_range" in capsys.readouterr().err
    assert not (tmp_path / "scene.txt").exists()


# -- train / eval ------------------------------------------------------------


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    code, text = run("train", "--out", str(out), "--seed", "3", *QUICK)
    assert code == 0
    return out, text


def test_train_writes_two_rows_with_golden_columns(trained):
    out, text = trained
    rows = list(csv.reader((out / "episodes.csv").open()))
    assert header(out / "episodes.csv") == (GOLDEN / "episodes_header.csv").read_text()
    assert len(rows) == 3 and [r[0] for r in rows[1:]] == ["0", "1"]
    assert field(text, "episodes") == "2"
    for name in ("policy.ckpt", "sinr.svg", "capacity.svg"):
        assert (out / name).stat().st_size > 0


def test_capacity_sum_column_adds_up(trained):
    out, _ = trained
    for row in csv.DictReader((out / "episodes.csv").open()):
        parts = [float(row[f"capacity_r{i}"]) for i in (1, 2, 3)]
        assert math.isclose(float(row["capacity_sum"]), math.fsum(parts), rel_tol=1e-12)


def test_training_output_is_byte_identical_across_runs(trained, tmp_path):
    out, _ = trained
    code, _ = run("train", "--out", str(tmp_path), "--seed", "3", *QUICK)
    assert code == 0
    for name in ("episodes.csv", "policy.ckpt", "sinr.svg", "capacity.svg"):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes(), name


def test_svg_is_self_contained(trained):
    out, _ = trained
    text = (out / "sinr.svg").read_text()
    assert text.lstrip().startswith("<?xml") and "<svg" in text
    assert "xlink:href=\"http" not in text and "<image" not in text
    assert "Receiver 1" in text and "Receiver 3" in text


def test_eval_reproduces_the_training_greedy_result(trained):
    out, text = trained
    code, evaluated = run("eval", "--out", str(out), *QUICK)
    assert code == 0
    assert field(evaluated, "total_reward") == field(text, "total_reward")
    assert field(evaluated, "position") == field(text, "position")
    assert run("eval", "--out", str(out), *QUICK)[1] == evaluated


def test_eval_reports_shape_mismatch_by_field(trained, capsys):
    out, _ = trained
    code, _ = run("eval", "--out", str(out), "--set", "ppo.width=32")
    assert code == 2
    assert "width: checkpoint 16, config 32" in capsys.readouterr().err


def test_eval_of_corrupted_checkpoint_names_the_offset(trained, tmp_path, capsys):
    out, _ = trained
    blob = bytearray((out / "policy.ckpt").read_bytes())
    blob[len(blob) // 2] ^= 0x10
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(bytes(blob))
    code, _ = run("eval", "--checkpoint", str(bad), *QUICK)
    assert code == 3
    assert "byte " in capsys.readouterr().err


def test_missing_checkpoint_is_a_runtime_error(tmp_path):
    assert run("eval", "--out", str(tmp_path), *QUICK)[0] == 3


# -- sweep -------------------------------------------------------------------


def test_single_point_sweep_is_the_bounds_center(tmp_path):
    code, out = run("sweep", "--grid", "1x1x1", "--out", str(tmp_path))
    assert code == 0
    b = RunConfig().build_scene().bounds
    c = b.center
    assert field(out, "position") == f"{c.x:.2f} {c.y:.2f} {c.z:.2f}"
    rows = list(csv.reader((tmp_path / "sweep.csv").open()))
    assert len(rows) == 2
    assert header(tmp_path / "sweep.csv") == (GOLDEN / "sweep_header.csv").read_text()


def test_empty_scene_argmax_sits_above_the_receiver_at_lowest_altitude(tmp_path):
    scene = Scene((), 0.0, (Vec3(30.0, 70.0, 1.5),), Vec3(50.0, 50.0, 40.0), Box(Vec3(0, 0, 10), Vec3(100, 100, 50)))
    path = save_scene(scene, tmp_path / "empty.txt")
    # At 1 W the SINR ceiling saturates a whole neighborhood and the lowest
    # index wins the tie; 10 uW keeps every lattice point below the clamp.
    code, out = run("sweep", "--out", str(tmp_path), "--set", f"scene.file={path}", "--grid", "11x11x5",
                    "--set", "radio.tx_power=1e-5")
    assert code == 0
    assert field(out, "argmax_index") == "3 7 0"
    assert field(out, "position") == "30.00 70.00 10.00"


def test_sweep_maximum_beats_the_start(tmp_path):
    code, out = run("sweep", "--grid", "5x5x3", "--out", str(tmp_path))
    assert code == 0
    env = RunConfig().build_env()
    start_reward, _ = evaluate_position(env, env.scene.uav_start)
    assert float(field(out, "total_reward")) >= start_reward
    rewards = [float(r["reward"]) for r in csv.DictReader((tmp_path / "sweep.csv").open())]
    assert float(field(out, "total_reward")) == max(rewards)
    assert len(rewards) == 75


def test_bad_grid_is_a_config_error(tmp_path):
    assert run("sweep", "--grid", "3x3", "--out", str(tmp_path))[0] == 2
    assert run("sweep", "--grid", "0x3x3", "--out", str(tmp_path))[0] == 2


# -- ledger-sim ----------------------------------------------------------------


@pytest.mark.parametrize("fault,status", [("0.0", "SETTLED"), ("1.0", "REFUNDED")])
def test_ledger_sim_outcomes(tmp_path, fault, status):
    code, out = run(
        "ledger-sim", "--out", str(tmp_path),
        "--set", "ledger.n_tasks=100", "--set", f"ledger.fault_rate={fault}",
        "--set", "scene.rows=2", "--set", "scene.cols=2",
    )
    assert code == 0
    assert header(tmp_path / "timeline.csv") == (GOLDEN / "timeline_header.csv").read_text()
    rows = list(csv.DictReader((tmp_path / "timeline.csv").open()))
    assert len(rows) == 100 and {r["status"] for r in rows} == {status}
    audit_text = (tmp_path / "audit.txt").read_text()
    assert "conservation: ok" in audit_text and "conservation: ok" in out
    assert (tmp_path / "events.log").stat().st_size > 0


def test_invariant_violation_exits_with_four(tmp_path, monkeypatch, capsys):
    def broken(*a, **k):
        raise InvariantViolation(17, "conservation broken: 1 != 0")

    monkeypatch.setattr(cli, "simulate", broken)
    assert run("ledger-sim", "--out", str(tmp_path))[0] == 4
    assert "event 17" in capsys.readouterr().err


# -- probe -----------------------------------------------------------------------


def _probe(tmp_path, var, values, *extra):
    code, out = run("probe", "--var", var, "--values", values, "--out", str(tmp_path),
                    "--set", "scene.rows=2", "--set", "scene.cols=2", *extra)
    assert code == 0
    return out, list(csv.DictReader((tmp_path / "probe.csv").open()))


def test_probe_receivers_counts_match_closed_form(tmp_path):
    out, rows = _probe(tmp_path, "R", "1,2,4", "--set", "ppo.episodes=2", "--set", "env.episode_length=4")
    cfg = apply_overrides(RunConfig(), ["scene.rows=2", "scene.cols=2"])
    for row in rows:
        scene = apply_overrides(cfg, [f"scene.n_receivers={row['R']}"]).build_scene()
        assert int(row["candidate_paths"]) == predicted_candidate_paths(scene, 2, 4)
    counts = [int(r["candidate_paths"]) for r in rows]
    assert counts[1] == 2 * counts[0] and counts[2] == 2 * counts[1]
    assert field(out, "loglog_slope") == "1.0000"


def test_probe_episodes_doubles_steps_exactly(tmp_path):
    _, rows = _probe(tmp_path, "E", "1,2,4", "--set", "env.episode_length=3")
    steps = [int(r["steps"]) for r in rows]
    assert steps == [3, 6, 12]


def test_probe_width_counts_match_closed_form(tmp_path):
    _, rows = _probe(tmp_path, "W", "8,16,32", "--set", "ppo.episodes=1", "--set", "env.episode_length=3")
    for row in rows:
        shape = MLPShape(width=int(row["W"]))
        assert int(row["macs"]) == predicted_macs(shape, PPOHyperparams(episodes=1), 1, 3)


def test_probe_needs_three_values(tmp_path):
    assert run("probe", "--var", "E", "--values", "1,2", "--out", str(tmp_path))[0] == 2


# -- configuration -----------------------------------------------------------------


def test_unknown_key_is_a_config_error(tmp_path, capsys):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("ppo:\n  episodes: 3\n  warp_factor: 9\n")
    assert run("scene-gen", "--config", str(cfg), "--out", str(tmp_path))[0] == 2
    assert "warp_factor" in capsys.readouterr().err


def test_unknown_section_and_bad_type(tmp_path):
    bad = tmp_path / "a.yaml"
    bad.write_text("turbo: {}\n")
    with pytest.raises(ConfigError, match="turbo"):
        load_config(bad)
    bad.write_text("ppo:\n  episodes: many\n")
    with pytest.raises(ConfigError, match="ppo.episodes"):
        load_config(bad)


def test_flag_beats_file_beats_default(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("seed: 5\nscene:\n  rows: 2\n")
    args = cli.build_parser().parse_args(["scene-gen", "--config", str(path)])
    cfg = cli.resolve_config(args)
    assert cfg.seed == 5 and cfg.scene.rows == 2 and cfg.scene.cols == 4
    args = cli.build_parser().parse_args(["--seed", "7", "scene-gen", "--config", str(path), "--set", "scene.rows=1"])
    cfg = cli.resolve_config(args)
    assert cfg.seed == 7 and cfg.scene.rows == 1
    assert cfg.hyperparams().seed == 7


def test_config_round_trips_through_yaml(tmp_path):
    import yaml

    cfg = apply_overrides(RunConfig(), ["ppo.episodes=12", "env.start_jitter=3.5", "ledger.fault_rate=0.2"])
    path = tmp_path / "dump.yaml"
    path.write_text(yaml.safe_dump(to_dict(cfg)))
    assert load_config(path) == cfg


def test_invalid_values_are_caught_before_running(tmp_path, capsys):
    code, _ = run("train", "--out", str(tmp_path), "--set", "ppo.gamma=1.5", "--set", "env.episode_length=0")
    assert code == 2
    err = capsys.readouterr().err
    assert "gamma" in err and "episode_length" in err
    assert not (tmp_path / "episodes.csv").exists()


# -- plotting helpers ----------------------------------------------------------------


def test_moving_average_is_trailing_with_partial_start():
    assert list(moving_average([1.0, 2.0, 3.0, 4.0], window=2)) == [1.0, 1.5, 2.5, 3.5]
    assert len(moving_average([], window=10)) == 0


def test_line_chart_bytes_are_deterministic():
    a = line_chart([0, 1, 2], {"a": [1.0, 2.0, 0.5]}, "t", "y")
    b = line_chart([0, 1, 2], {"a": [1.0, 2.0, 0.5]}, "t", "y")
    assert a == b and a != line_chart([0, 1, 2], {"a": [1.0, 2.0, 0.6]}, "t", "y")
