import subprocess
import sys

import pytest

from advarena.cli import main
from advarena.httpserve import serve_model
from advarena.models import load_model
from advarena.scoring import parse_record_line
from advarena.tensorio import load_dataset, load_image

TINY_CONFIG = """\
seed 7
classes 4
height 4
width 4
channels 1
train_total 40
validation_total 8
round_total 8
final_total 8
query_budget 120
train_epochs 15
boundary_iterations 40
pgd_steps 5
stage_start 2
top_pool 4
top_k 2
continuous_samples 8
"""


def test_no_command_is_a_usage_error(capsys):
    assert main([]) == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_command_is_a_usage_error(capsys):
    assert main(["launder-scores"]) == 2


def test_unknown_flag_is_a_usage_error(capsys):
    assert main(["gen-data", "--bogus", "1", "--out", "x"]) == 2
    assert "usage" in capsys.readouterr().err


def test_help_via_module_entry():
    proc = subprocess.run([sys.executable, "-m", "advarena", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "advarena" in proc.stdout


def test_gen_data_writes_the_advertised_count(tmp_path, capsys):
    out = tmp_path / "data"
    code = main(["gen-data", "--seed", "3", "--classes", "10",
                 "--per-class", "30", "--shape", "4x4x1", "--out", str(out)])
    assert code == 0
    assert "wrote 300 samples" in capsys.readouterr().out
    data = load_dataset(out)
    assert len(data) == 300
    assert data.shape == (4, 4, 1)
    assert len(list(out.glob("*.avt1"))) == 300


def test_gen_data_assigns_targets(tmp_path):
    out = tmp_path / "val"
    assert main(["gen-data", "--classes", "4", "--per-class", "2",
                 "--shape", "4x4x1", "--split", "validation", "--targets",
                 "--out", str(out)]) == 0
    data = load_dataset(out)
    assert all(s.target_label is not None for s in data)


def test_bad_shape_is_a_domain_error(tmp_path, capsys):
    code = main(["gen-data", "--shape", "4x4", "--out",
                 str(tmp_path / "d")])
    assert code == 1
    assert "advarena:" in capsys.readouterr().err


@pytest.fixture(scope="module")
def cli_space(tmp_path_factory):
    """Dataset + trained checkpoint shared by the slower CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    ckpt = root / "vanilla.ckpt"
    assert main(["gen-data", "--seed", "3", "--classes", "4",
                 "--per-class", "10", "--shape", "4x4x1",
                 "--out", str(data)]) == 0
    assert main(["train-model", "--kind", "vanilla", "--data", str(data),
                 "--out", str(ckpt), "--seed", "5", "--epochs", "15"]) == 0
    return root, data, ckpt


def test_train_model_checkpoint_loads(cli_space, capsys):
    _, data, ckpt = cli_space
    model = load_model(ckpt)
    assert model.shape == (4, 4, 1)
    assert model.num_classes == 4


def test_check_compliance_passes_for_checkpoint(cli_space, capsys):
    _, _, ckpt = cli_space
    assert main(["check-compliance", "--model", str(ckpt)]) == 0
    out = capsys.readouterr().out
    assert "determinism: pass" in out
    assert "statelessness: pass" in out


def test_eval_pair_writes_one_line_per_sample(cli_space, tmp_path, capsys):
    _, data, ckpt = cli_space
    records = tmp_path / "records.log"
    code = main(["eval-pair", "--model", str(ckpt), "--model-id", "m",
                 "--attack", "gaussian", "--samples", str(data),
                 "--out", str(records), "--budget", "80", "--seed", "11"])
    assert code == 0
    lines = records.read_text().splitlines()
    assert len(lines) == 40
    parsed = [parse_record_line(l) for l in lines]
    assert {rec.sample_id for _, rec in parsed} == \
        {s.sample_id for s in load_dataset(data)}
    out = capsys.readouterr().out
    assert "attack-score" in out and "model-score" in out


def test_eval_pair_repeats_identically(cli_space, tmp_path):
    _, data, ckpt = cli_space
    texts = []
    for name in ("a.log", "b.log"):
        path = tmp_path / name
        assert main(["eval-pair", "--model", str(ckpt), "--model-id", "m",
                     "--attack", "salt-pepper", "--samples", str(data),
                     "--out", str(path), "--budget", "80",
                     "--seed", "11"]) == 0
        texts.append(path.read_text())
    assert texts[0] == texts[1]


def test_run_attack_against_served_model(cli_space, tmp_path, capsys):
    _, data, ckpt = cli_space
    model = load_model(ckpt)
    sample_file = sorted(data.glob("*.avt1"))[0]
    out = tmp_path / "adv.avt1"
    with serve_model(model) as srv:
        code = main(["run-attack", "--attack", "gaussian",
                     "--oracle-url", srv.url, "--sample", str(sample_file),
                     "--out", str(out), "--budget", "150", "--seed", "3"])
    assert code == 0
    text = capsys.readouterr().out
    assert "distance" in text
    adv = load_image(out)
    clean = load_image(sample_file)
    assert adv.shape == clean.shape
    assert model.predict(adv) != model.predict(clean)


@pytest.fixture(scope="module")
def cli_arena(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli-arena")
    state = root / "state"
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY_CONFIG)
    assert main(["round", "--state-dir", str(state),
                 "--config", str(cfg)]) == 0
    return state, cfg


def test_round_cli_writes_round_dir(cli_arena):
    state, _ = cli_arena
    assert (state / "rounds" / "round-0001" / "records.log").exists()
    assert (state / "LATEST").read_text().strip() == "round-0001"


def test_round_cli_rejects_conflicting_config(cli_arena, tmp_path, capsys):
    state, _ = cli_arena
    other = tmp_path / "other.cfg"
    other.write_text(TINY_CONFIG.replace("query_budget 120",
                                         "query_budget 121"))
    assert main(["round", "--state-dir", str(state),
                 "--config", str(other)]) == 1
    assert "configured differently" in capsys.readouterr().err


def test_leaderboard_cli_renders(cli_arena, capsys):
    state, _ = cli_arena
    assert main(["leaderboard", "--state-dir", str(state)]) == 0
    plain = capsys.readouterr().out
    assert "vanilla" in plain and "gaussian" in plain
    assert main(["leaderboard", "--state-dir", str(state), "--tsv"]) == 0
    tsv = capsys.readouterr().out
    assert any("\t" in line for line in tsv.splitlines())


def test_replay_cli_confirms_stored_round(cli_arena, capsys):
    state, _ = cli_arena
    records = state / "rounds" / "round-0001" / "records.log"
    assert main(["replay", "--records", str(records)]) == 0
    assert "byte-identically" in capsys.readouterr().out


def test_replay_cli_flags_tampering(cli_arena, tmp_path, capsys):
    state, _ = cli_arena
    source = (state / "rounds" / "round-0001" / "records.log").read_text()
    doctored_dir = tmp_path / "rounds" / "round-0001"
    doctored_dir.mkdir(parents=True)
    lines = source.splitlines()
    for i, line in enumerate(lines):
        parts = line.split("\t")
        if parts[0].endswith(":m") and parts[6] == "1":
            parts[4] = "0.123456789"
            lines[i] = "\t".join(parts)
            break
    (doctored_dir / "records.log").write_text("\n".join(lines) + "\n")
    (doctored_dir / "leaderboard").write_bytes(
        (state / "rounds" / "round-0001" / "leaderboard").read_bytes())
    code = main(["replay", "--records",
                 str(doctored_dir / "records.log")])
    assert code == 1
    err = capsys.readouterr().err
    assert "differ" in err


def test_final_cli(cli_arena, capsys):
    state, _ = cli_arena
    assert main(["final", "--state-dir", str(state)]) == 0
    out = capsys.readouterr().out
    assert "winner" in out
    assert (state / "rounds" / "final" / "report").exists()
    assert main(["leaderboard", "--state-dir", str(state),
                 "--round", "final"]) == 0
    assert "final" in capsys.readouterr().out


def test_round_via_subprocess_matches_in_process(cli_arena,
                                                 tmp_path_factory):
    state, cfg = cli_arena
    other = tmp_path_factory.mktemp("sub") / "state"
    proc = subprocess.run(
        [sys.executable, "-m", "advarena", "round", "--state-dir",
         str(other), "--config", str(cfg)],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    ours = (state / "rounds" / "round-0001" / "records.log").read_bytes()
    theirs = (other / "rounds" / "round-0001" / "records.log").read_bytes()
    assert ours == theirs
    board = (state / "rounds" / "round-0001" / "leaderboard").read_bytes()
    board2 = (other / "rounds" / "round-0001" / "leaderboard").read_bytes()
    assert board == board2
