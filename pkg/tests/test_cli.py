import json

import pytest

from submatrix_ogp import cli
from submatrix_ogp.model import generate, instance_from_dict, payload_bytes


def test_generate_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert cli.main(["generate", "--n", "30", "--rho", "0.2", "--lambda", "3",
                         "--seed", "9", "--out", str(tmp_path / d)]) == 0
    a = (tmp_path / "a" / "instance.json").read_bytes()
    b = (tmp_path / "b" / "instance.json").read_bytes()
    assert a == b
    inst = instance_from_dict(json.loads(a))
    assert payload_bytes(inst) == payload_bytes(generate(30, 0.2, 3.0, 9))


def test_manifest_contents(tmp_path):
    out = tmp_path / "g"
    assert cli.main(["generate", "--n", "20", "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["subcommand"] == "generate"
    assert man["params"]["n"] == 20 and "lambda" in man["params"]
    assert set(man["artifacts"]) == {"instance.json"}
    assert len(man["artifacts"]["instance.json"]["sha256"]) == 64


def test_config_file_overrides_flags(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n": 16, "lambda": 2.5}))
    out = tmp_path / "g"
    assert cli.main(["generate", "--n", "40", "--config", str(cfg), "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["params"]["n"] == 16 and man["params"]["lambda"] == 2.5


@pytest.mark.parametrize("command", list(cli.COMMANDS))
def test_params_round_trip(command):
    cls = cli.COMMANDS[command][0]
    p = cls()
    d = cli.params_to_dict(p)
    assert cli.params_from_dict(cls, json.loads(json.dumps(d))) == p


def test_list_flags_accept_comma_strings():
    p = cli.resolve_params("thresholds", {"rho": "0.01,0.05"}, None)
    assert p.rho == [0.01, 0.05]


@pytest.mark.parametrize("argv", [
    ["generate", "--rho", "1.0"],
    ["generate", "--n", "1"],
    ["mcmc", "--init", "conditioned"],
    ["estimate", "--estimators", "spectral,oracle"],
    ["parisi", "--K", "0"],
    ["thresholds", "--rho", "0"],
])
def test_validation_errors_exit_2(tmp_path, argv):
    assert cli.main(argv + ["--out", str(tmp_path / "x")]) == 2


def test_unknown_config_key_exits_2(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n": 16, "colour": "red"}))
    assert cli.main(["generate", "--config", str(cfg), "--out", str(tmp_path / "g")]) == 2


def test_non_convergence_exits_3(tmp_path):
    assert cli.main(["parisi", "--rho", "0.1", "--q", "0.03", "--K", "8", "--max-iter", "1",
                     "--out", str(tmp_path / "p")]) == 3


def test_parisi_reports_lambda_equality_at_rho_squared(tmp_path):
    out = tmp_path / "p"
    assert cli.main(["parisi", "--rho", "0.1", "--q", "0.01", "--lambda", "5", "--K", "8",
                     "--out", str(out)]) == 0
    sol = json.loads((out / "solution.json").read_text())
    assert sol["lambda_equal"] is True
    assert sol["dE_formula"] == pytest.approx(2 * 5 * 0.01, rel=1e-4)


def test_oracle_sandwich_passes(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["oracle", "--n", "10", "--rho", "0.5", "--lambda", "3", "--beta", "2",
                     "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["sandwich_pass"] is True
    lines = (out / "profile.csv").read_text().strip().split("\n")
    assert len(lines) == 1 + 6


def test_runtime_column_excluded_from_payload():
    a = "estimator,overlap_frac,runtime_ms\nspectral,0.9,12.5\n"
    b = "estimator,overlap_frac,runtime_ms\nspectral,0.9,99.1\n"
    assert cli.csv_payload(a) == cli.csv_payload(b)
    assert cli.csv_payload(a) != cli.csv_payload(a.replace("0.9", "0.8"))


def test_task_seed_depends_on_coordinates():
    assert cli.task_seed(1, "a", 0) == cli.task_seed(1, "a", 0)
    assert cli.task_seed(1, "a", 0) != cli.task_seed(1, "a", 1)
    assert cli.task_seed(1, "a", 0) != cli.task_seed(2, "a", 0)


def test_replay_detects_tampering(tmp_path):
    out = tmp_path / "t"
    assert cli.main(["thresholds", "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    man["artifacts"]["thresholds.csv"]["payload_sha256"] = "0" * 64
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(man))
    assert cli.main(["replay", str(bad), "--out", str(tmp_path / "r")]) == 1


def test_unwritable_output_exits_2(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["thresholds", "--out", str(blocker / "sub")]) == 2
