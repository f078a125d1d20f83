import json

import pytest

from motifrank.cli import main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_generate_writes_bundle_and_manifest(tmp_path, capsys):
    code, out, _ = run(capsys, "generate", "--out", tmp_path, "--seed", 3, "--n", 9, "--days", 50)
    assert code == 0 and json.loads(out)["stocks"] == 9
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["seed"] == 3 and set(man["outputs"]) >= {"prices", "statements", "relations"}


def test_motif_smoke(fixture_dir, tmp_path, capsys):
    code, out, _ = run(capsys, "motif", "--relations", fixture_dir / "relations.csv",
                       "--prices", fixture_dir / "prices.csv", "--motifs", "M4,M13", "--out", tmp_path)
    assert code == 0
    assert (tmp_path / "M4.csv").exists() and (tmp_path / "M13.csv").exists()
    density = json.loads((tmp_path / "density.json").read_text())
    assert density["density"]["M4"] > 0
    assert len((tmp_path / "M4.csv").read_text().splitlines()) == 21


def test_train_twice_identical_then_backtest_and_rank(fixture_dir, tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"train": {"seed": 0, "window": 4, "hidden": 16, "epochs": 3}}))
    digests = []
    for name in ("a", "b"):
        code, out, _ = run(capsys, "train", "--data", fixture_dir, "--config", cfg, "--seed", 7,
                           "--out", tmp_path / name)
        assert code == 0
        digests.append(json.loads(out)["digest"])
    assert digests[0] == digests[1]
    assert (tmp_path / "a" / "checkpoint.json").read_bytes() == (tmp_path / "b" / "checkpoint.json").read_bytes()
    assert json.loads((tmp_path / "a" / "access.json").read_text()).get("test", 0) == 0

    ck = tmp_path / "a" / "checkpoint.json"
    code, out, _ = run(capsys, "backtest", "--data", fixture_dir, "--checkpoint", ck, "--top-k", 1,
                       "--out", tmp_path / "bt")
    assert code == 0 and json.loads(out)["irr"] > 0
    assert (tmp_path / "bt" / "report.json").exists() and (tmp_path / "bt" / "manifest.json").exists()

    code, out, _ = run(capsys, "rank", "--data", fixture_dir, "--checkpoint", ck, "--top-k", 3,
                       "--out", tmp_path / "rk")
    body = json.loads(out)
    assert code == 0 and [r["rank"] for r in body["top"]] == [1, 2, 3]


def test_invalid_input_exit_code(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--data", tmp_path / "missing", "--seed", 1, "--out", tmp_path / "o")
    assert code == 2 and json.loads(err)["error"] == "invalid"
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"train": {"seed": 0, "hidden": 17}}))
    code, _, err = run(capsys, "train", "--data", tmp_path, "--config", cfg, "--out", tmp_path / "o")
    assert code == 2 and "grid" in json.loads(err)["message"]


def test_train_requires_data_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 2
