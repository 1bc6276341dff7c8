import json

import pytest

from nflsim.config import SimConfig, from_dict, load_config, preset, save_config
from nflsim.errors import ConfigError


class TestLoadConfig:
    def test_minimal_file_gets_defaults(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{}")
        cfg = load_config(path)
        assert cfg.c == 50
        assert cfg.nr == 50
        assert cfg.n_clients == 50
        assert cfg.mode == "detect_recover"
        assert cfg.partition.train_fraction == 0.9

    def test_unknown_key_rejected_with_path(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"model": {"layer_sizes": [4, 2], "depth": 3}}))
        with pytest.raises(ConfigError, match="model.depth"):
            load_config(path)

    def test_active_count_above_n_names_key(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"n_clients": 10, "active_count": 20}))
        with pytest.raises(ConfigError, match="active_count"):
            load_config(path)

    def test_roundtrip_idempotent(self, tmp_path):
        cfg = preset("nfl_default")
        out = tmp_path / "echo.json"
        save_config(cfg, out)
        again = load_config(out)
        assert again.to_dict() == cfg.to_dict()

    def test_invalid_json_reported(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{nope")
        with pytest.raises(ConfigError, match="JSON"):
            load_config(path)


class TestValidation:
    def test_mode_checked(self):
        with pytest.raises(ConfigError):
            from_dict({"mode": "detect"})

    def test_model_data_class_mismatch(self):
        with pytest.raises(ConfigError):
            from_dict({"model": {"layer_sizes": [32, 5]}, "data": {"class_count": 10}})

    def test_frozen_layers_need_depth(self):
        with pytest.raises(ConfigError):
            from_dict(
                {
                    "model": {"layer_sizes": [32, 10]},
                    "adaptation": {"frozen_lower_layers": 1},
                }
            )

    def test_k_resolution(self):
        cfg = from_dict({"n_clients": 50, "active_fraction": 0.1})
        assert cfg.k == 5
        cfg = from_dict({"n_clients": 50, "active_count": 7})
        assert cfg.k == 7

    def test_robust_defaults_resolved_from_attacker_share(self):
        cfg = from_dict(
            {
                "aggregator": {"kind": "multi_krum"},
                "behaviors": {"attacker_fraction": 0.3},
            }
        )
        assert cfg.aggregator.f == 1  # bounded by 2f+3 <= k=5
        assert cfg.aggregator.m == 2

    def test_infeasible_trim_rejected(self):
        with pytest.raises(ConfigError):
            from_dict(
                {
                    "n_clients": 4,
                    "active_count": 4,
                    "aggregator": {"kind": "trimmed_mean", "trim_k": 2},
                }
            )


class TestPresets:
    def test_ideal_removes_negative_effects(self):
        cfg = preset("ideal")
        assert cfg.behaviors.attacker_fraction == 0.0
        assert cfg.partition.scheme == "iid"
        assert cfg.dp is None

    def test_default_scenario_matches_documented_environment(self):
        cfg = preset("nfl_default")
        assert cfg.behaviors.attacker_fraction == 0.3
        assert cfg.active_fraction == 0.1
        assert cfg.partition.scheme == "noniid_mixed"
        assert cfg.partition.size_lognormal == (0.0, 2.0)
        assert cfg.dp is not None and cfg.dp.sigma == 0.001
        assert cfg.partition.group_fractions == (0.5, 0.3, 0.2)

    def test_parametrized_presets(self):
        cfg = preset("vanilla_mix(0.5)")
        assert cfg.behaviors.vanilla_fraction == 0.5
        assert cfg.behaviors.attacker_fraction == 0.3
        cfg = preset("partial_adapt(1)")
        assert cfg.adaptation.frozen_lower_layers == 1

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            preset("utopia")

    def test_parametrized_preset_requires_argument(self):
        with pytest.raises(ConfigError):
            preset("vanilla_mix")


def test_default_config_is_valid():
    SimConfig().validate()
