import json

from nflsim.cli import main


def small_config(tmp_path, **overrides):
    raw = {
        "n_clients": 6,
        "active_count": 3,
        "rounds": 8,
        "nr": 3,
        "c": 3,
        "seed": 5,
        "batch_size": 5,
        "model": {"layer_sizes": [4, 3]},
        "data": {"class_count": 3, "dim": 4, "per_class": 40, "spread": 0.7},
        "partition": {"scheme": "iid"},
        "private": {"epochs": 1},
    }
    raw.update(overrides)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(raw))
    return path


def test_run_writes_artifact(tmp_path, capsys):
    cfg = small_config(tmp_path)
    out = tmp_path / "run"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "metrics.csv").exists()
    assert "final:" in capsys.readouterr().out


def test_seed_and_mode_overrides(tmp_path):
    cfg = small_config(tmp_path)
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    main(["run", "--config", str(cfg), "--out", str(out_a), "--seed", "9", "--mode", "fedavg"])
    manifest = json.loads((out_a / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 9
    assert manifest["config"]["mode"] == "fedavg"
    main(["run", "--config", str(cfg), "--out", str(out_b), "--seed", "9", "--mode", "fedavg"])
    assert (out_a / "metrics.csv").read_bytes() == (out_b / "metrics.csv").read_bytes()


def test_compare_command(tmp_path, capsys):
    cfg = small_config(tmp_path)
    main(["run", "--config", str(cfg), "--out", str(tmp_path / "x")])
    main(["run", "--config", str(cfg), "--out", str(tmp_path / "y")])
    assert main(["compare", str(tmp_path / "x"), str(tmp_path / "y")]) == 0
    text = capsys.readouterr().out
    assert "identical trajectory:   yes" in text


def test_presets_listing(capsys):
    assert main(["presets"]) == 0
    out = capsys.readouterr().out
    assert "ideal" in out and "nfl_default" in out


def test_bad_config_is_a_clean_error(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"mode": "bogus"}))
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "z")]) == 2
    assert "error:" in capsys.readouterr().err
