import json

from rwrs.cli import ExperimentConfig, export_results, main, validate_config
from rwrs.simkit import Manifest


def write_config(tmp_path, text, name="config.ini"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


MINIMAL = """
[experiment]
subcommand = return-curve

[laws]
step = simple
scenery = rademacher

[params]
n_list = 8 16 32
k = 1

[run]
seed = 777
replicas = 50
"""


def test_minimal_config_echoes_derived_constants(tmp_path):
    config = validate_config(write_config(tmp_path, MINIMAL))
    assert isinstance(config, ExperimentConfig)
    assert config.derived["sigma2"] == 1.0
    assert config.derived["d"] == 2
    assert config.derived["d0"] == 2
    assert config.seed == 777


def test_odd_time_rejected_with_divisibility_message(tmp_path):
    bad = MINIMAL.replace("n_list = 8 16 32", "n_list = 8 15 32")
    errors = validate_config(write_config(tmp_path, bad))
    assert isinstance(errors, list)
    assert any("d0-divisibility" in e for e in errors)


def test_unknown_key_rejected(tmp_path):
    bad = MINIMAL + "\n[params]\n"  # duplicate section is a parse error
    errors = validate_config(write_config(tmp_path, bad))
    assert isinstance(errors, list)
    bad2 = MINIMAL.replace("k = 1", "k = 1\nwindow = 3")
    errors2 = validate_config(write_config(tmp_path, bad2))
    assert isinstance(errors2, list)
    assert any("params.window" in e and "unknown" in e for e in errors2)


def test_unreadable_config(tmp_path):
    errors = validate_config(str(tmp_path / "missing.ini"))
    assert isinstance(errors, list)


def test_export_round_trip(tmp_path):
    rows = [
        {"name": "x", "n": 4, "value": 0.1234567890123456789, "std_error": 1e-9}
    ]
    report = {"tests": [], "fits": {}, "values": {"a": 1}}
    csv_path, json_path = export_results(rows, report, str(tmp_path))
    lines = open(csv_path).read().splitlines()
    assert len(lines) == len(rows) + 1
    _, _, value_text, _ = lines[1].split(",")
    assert float(value_text) == rows[0]["value"]  # 17 digits round-trip
    parsed = json.load(open(json_path))
    assert parsed["values"] == {"a": 1}


def test_cli_end_to_end_deterministic(tmp_path):
    cfg = write_config(tmp_path, MINIMAL)
    out1 = tmp_path / "o1"
    out2 = tmp_path / "o2"
    assert main(["--config", cfg, "--out", str(out1)]) == 0
    assert main(["--config", cfg, "--out", str(out2)]) == 0
    csv1 = (out1 / "results.csv").read_bytes()
    csv2 = (out2 / "results.csv").read_bytes()
    assert csv1 == csv2
    m1 = Manifest.from_text((out1 / "manifest.txt").read_text())
    m2 = Manifest.from_text((out2 / "manifest.txt").read_text())
    assert m1.digests == m2.digests
    rows = csv1.decode().splitlines()
    assert len(rows) == 3 + 1  # one per n plus header


def test_cli_seed_changes_digests(tmp_path):
    cfg = write_config(tmp_path, MINIMAL)
    out1 = tmp_path / "s1"
    out2 = tmp_path / "s2"
    assert main(["--config", cfg, "--out", str(out1)]) == 0
    assert main(["--config", cfg, "--out", str(out2), "--seed", "778"]) == 0
    m1 = Manifest.from_text((out1 / "manifest.txt").read_text())
    m2 = Manifest.from_text((out2 / "manifest.txt").read_text())
    assert m1.digests["results.csv"] != m2.digests["results.csv"]


def test_cli_bad_config_exits_one(tmp_path, capsys):
    bad = MINIMAL.replace("n_list = 8 16 32", "n_list = 8 15 32")
    cfg = write_config(tmp_path, bad)
    assert main(["--config", cfg]) == 1
    assert "d0-divisibility" in capsys.readouterr().err


def test_allow_inadmissible_reports_exact_zero(tmp_path):
    bad = MINIMAL.replace("n_list = 8 16 32", "n_list = 7 9 11")
    cfg = write_config(tmp_path, bad)
    out = tmp_path / "inad"
    code = main(["--config", cfg, "--out", str(out), "--allow-inadmissible"])
    assert code == 0
    body = (out / "results.csv").read_text().splitlines()[1:]
    assert all(line.split(",")[2] == "0" for line in body)


GRAM_TINY = """
[experiment]
subcommand = gram

[laws]
step = simple

[params]
n = 65536
t_list = 1.0
fineness = 1024

[run]
seed = 900
replicas = 6000
"""


def test_gram_subcommand_exit_two_on_scale_mismatch(tmp_path):
    # deliberately tiny fineness against a long walk: the KS test must fail
    cfg = write_config(tmp_path, GRAM_TINY)
    out = tmp_path / "gram"
    code = main(["--config", cfg, "--out", str(out)])
    assert code == 2
    report = json.loads((out / "report.json").read_text())
    assert any(not t["verdict"] for t in report["tests"])


def test_analyze_law_subcommand(tmp_path):
    cfg = write_config(
        tmp_path,
        """
[experiment]
subcommand = analyze-law

[laws]
scenery = -2:1/2,2:1/2

[run]
seed = 1
""",
    )
    out = tmp_path / "law"
    assert main(["--config", cfg, "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["derived"]["d"] == 4
    assert report["derived"]["d0"] == 2
    assert report["derived"]["sigma2"] == 4.0
