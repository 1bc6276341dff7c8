import numpy as np
import pytest

from nflsim import protocol
from nflsim.artifact import compare_runs, load_metrics, write_run
from nflsim.config import from_dict
from nflsim.engine import run_simulation
from nflsim.protocol import SkipClient


def toy_config(**overrides):
    raw = {
        "n_clients": 8,
        "active_count": 4,
        "rounds": 25,
        "nr": 5,
        "c": 5,
        "eval_every": 5,
        "seed": 11,
        "batch_size": 5,
        "eta": 0.2,
        "model": {"layer_sizes": [6, 3]},
        "data": {"class_count": 3, "dim": 6, "per_class": 60, "spread": 0.6},
        "partition": {"scheme": "iid"},
        "private": {"epochs": 2},
    }
    raw.update(overrides)
    return from_dict(raw)


def adversarial_config(**overrides):
    raw = {
        "n_clients": 10,
        "active_count": 5,
        "rounds": 40,
        "nr": 5,
        "c": 5,
        "eval_every": 5,
        "seed": 3,
        "batch_size": 5,
        "eta": 0.2,
        "model": {"layer_sizes": [6, 3]},
        "data": {"class_count": 3, "dim": 6, "per_class": 80, "spread": 0.6},
        "partition": {"scheme": "noniid_mixed", "size_lognormal": [0.0, 1.0]},
        "behaviors": {"attacker_fraction": 0.3},
        "dp": {"clip": 3.0, "sigma": 0.001},
        "private": {"epochs": 3},
    }
    raw.update(overrides)
    return from_dict(raw)


class TestDeterminism:
    def test_identical_seeds_reproduce_trajectory(self):
        a = run_simulation(toy_config())
        b = run_simulation(toy_config())
        assert a.trajectory == b.trajectory
        assert [m.beta_r for m in a.metrics] == [m.beta_r for m in b.metrics]
        assert a.events == b.events

    def test_worker_count_does_not_change_results(self):
        cfg = adversarial_config(mode="detect_recover")
        serial = run_simulation(from_dict(cfg.to_dict()), workers=1)
        threaded = run_simulation(from_dict(cfg.to_dict()), workers=4)
        assert serial.trajectory == threaded.trajectory
        assert serial.events == threaded.events
        assert [m.beta_win for m in serial.metrics] == [m.beta_win for m in threaded.metrics]

    def test_different_seed_changes_run(self):
        a = run_simulation(toy_config(seed=1))
        b = run_simulation(toy_config(seed=2))
        assert a.trajectory != b.trajectory


class TestModes:
    def test_all_time_flag_always_on(self):
        res = run_simulation(toy_config(mode="all_time", rounds=10))
        assert all(m.nfl_flag for m in res.metrics)
        assert not any(e["type"].startswith("nfl_") for e in res.events)

    def test_fedavg_mode_never_flags_or_adapts(self):
        res = run_simulation(adversarial_config(mode="fedavg"))
        assert not any(m.nfl_flag for m in res.metrics)
        assert not any(e["type"] in ("nfl_report", "adapt_steps") for e in res.events)
        assert res.adapted == {}

    def test_detect_recover_reports_on_bad_scenario(self):
        res = run_simulation(adversarial_config(mode="detect_recover"))
        reports = [e["round"] for e in res.events if e["type"] == "nfl_report"]
        assert reports and reports[0] == 5  # negative from round 1, nr=5
        assert any(e["type"] == "adapt_steps" for e in res.events)

    def test_short_term_stops_adaptation_after_cancel(self):
        res = run_simulation(adversarial_config(mode="short_term", rounds=60))
        stops = [e["round"] for e in res.events if e["type"] == "recovery_stopped"]
        assert stops, "expected recovery to be cancelled within the run"
        stop_round = stops[0]
        after = [
            e for e in res.events if e["type"] == "adapt_steps" and e["round"] > stop_round
        ]
        assert after == []
        # Adapted models are kept for inference even though recovery stopped.
        assert res.adapted

    def test_no_report_scenario_matches_fedavg_bitwise(self):
        quiet = dict(nr=100, c=10, rounds=20)
        a = run_simulation(toy_config(mode="detect_recover", **quiet))
        b = run_simulation(toy_config(mode="fedavg", **quiet))
        assert not any(e["type"] == "nfl_report" for e in a.events)
        assert a.trajectory == b.trajectory

    def test_all_vanilla_detect_recover_degenerates_to_fedavg(self):
        a = run_simulation(
            adversarial_config(
                mode="detect_recover",
                behaviors={"attacker_fraction": 0.0, "vanilla_fraction": 1.0},
            )
        )
        b = run_simulation(
            adversarial_config(
                mode="fedavg", behaviors={"attacker_fraction": 0.0, "vanilla_fraction": 0.0}
            )
        )
        assert a.trajectory == b.trajectory


class TestMetricsShape:
    def test_one_record_per_round_with_valid_ranges(self):
        cfg = toy_config(rounds=15)
        res = run_simulation(cfg)
        assert [m.round for m in res.metrics] == list(range(1, 16))
        for m in res.metrics:
            assert 0.0 <= m.acc <= 1.0
            assert -1.0 <= m.beta_r <= 1.0
            assert len(res.trajectory) == cfg.rounds + 1

    def test_windowed_gain_turns_positive_on_healthy_task(self):
        res = run_simulation(toy_config(rounds=50, nr=1000))
        assert any(m.beta_win > 0 for m in res.metrics[:50])
        assert res.metrics[-1].beta_win > 0

    def test_event_rounds_consistent_with_metrics(self):
        res = run_simulation(adversarial_config())
        rounds = {m.round for m in res.metrics}
        for e in res.events:
            if e["round"] > 0:
                assert e["round"] in rounds

    def test_detector_history_one_entry_per_round(self):
        cfg = toy_config(rounds=12)
        res = run_simulation(cfg)
        win = res.metrics[-1].beta_win
        assert win == pytest.approx(
            float(np.mean([m.beta_r for m in res.metrics[-cfg.c :]]))
        )


class TestEmptyRound:
    def test_all_skips_are_a_noop(self, monkeypatch):
        def refuse(client, *a, **k):
            raise SkipClient(client.client_id)

        cfg = toy_config(rounds=3)
        monkeypatch.setattr(protocol, "client_update", refuse)
        res = run_simulation(cfg)
        assert all(e["type"] in ("behavior_assignment", "empty_round") for e in res.events)
        # Global model never moves.
        assert len(set(res.trajectory)) == 1
        assert [m.beta_r for m in res.metrics] == [0.0, 0.0, 0.0]


class TestArtifacts:
    def test_write_and_reload(self, tmp_path):
        res = run_simulation(toy_config(rounds=10))
        out = write_run(res, tmp_path / "run")
        expected = {
            "metrics.csv",
            "events.jsonl",
            "trajectory.csv",
            "summary.json",
            "manifest.json",
            "models.npz",
        }
        assert {p.name for p in out.iterdir()} == expected
        rows = load_metrics(out)
        assert len(rows) == 10
        assert rows[0]["round"] == 1
        assert rows[-1]["beta_win"] == pytest.approx(res.metrics[-1].beta_win)

    def test_byte_identical_across_worker_counts(self, tmp_path):
        cfg = adversarial_config(rounds=20)
        for workers, name in ((1, "a"), (4, "b")):
            res = run_simulation(from_dict(cfg.to_dict()), workers=workers)
            write_run(res, tmp_path / name, workers=workers)
        for fname in ("metrics.csv", "events.jsonl", "trajectory.csv", "summary.json"):
            assert (tmp_path / "a" / fname).read_bytes() == (tmp_path / "b" / fname).read_bytes()

    def test_compare_run_with_itself(self, tmp_path):
        res = run_simulation(toy_config(rounds=10))
        write_run(res, tmp_path / "x")
        report = compare_runs(tmp_path / "x", tmp_path / "x")
        assert report.identical_trajectory
        assert report.final_acc_delta == 0.0
        assert max(abs(d) for d in report.acc_delta) == 0.0

    def test_compare_rejects_mismatched_shapes(self, tmp_path):
        write_run(run_simulation(toy_config(rounds=10)), tmp_path / "x")
        write_run(run_simulation(toy_config(rounds=12)), tmp_path / "y")
        with pytest.raises(Exception, match="rounds"):
            compare_runs(tmp_path / "x", tmp_path / "y")

    def test_summary_is_mean_of_last_ten_records(self, tmp_path):
        res = run_simulation(toy_config(rounds=15))
        tail = res.metrics[-10:]
        assert res.summary["final_acc"] == pytest.approx(
            float(np.mean([m.acc for m in tail]))
        )
        assert res.summary["final_beta_true"] == pytest.approx(
            float(np.mean([m.beta_true for m in tail]))
        )
