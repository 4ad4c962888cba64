from pathlib import Path

import pytest
import yaml

import core.config as config_module
from core.config import (
    PRESETS,
    AgentConfigModel,
    ConfigManager,
    get_config_manager,
    initialize_config,
    is_config_initialized,
    merge_overrides,
)

DEFAULT_YAML = Path(__file__).resolve().parent.parent / "config" / "default.yaml"


def test_default_file_matches_model_defaults():
    manager = ConfigManager.load_from_file(DEFAULT_YAML)
    agent = manager.get_agent_config()
    assert agent == AgentConfigModel()
    assert agent.mixing_lambda == 0.4
    assert agent.rollout_length == 50
    assert agent.planning_neighbours == 10
    assert agent.value_neighbours == 5
    assert agent.temperature == 1e-5
    assert agent.value_buffer_size == 2000
    assert agent.training_batch_size == 48
    assert agent.kernel.bandwidth == 1e-4
    assert manager.get_experiment_config().max_episode_steps == 500


def test_short_names_and_field_names_both_accepted():
    by_alias = ConfigManager.load_from_dict({"agent": {"lambda": 0.2, "T": 7, "M": 3, "k": 2}})
    by_name = ConfigManager.load_from_dict({"agent": {
        "mixing_lambda": 0.2, "rollout_length": 7, "planning_neighbours": 3, "value_neighbours": 2,
    }})
    assert by_alias.get_agent_config() == by_name.get_agent_config()


def test_export_uses_short_names_and_round_trips():
    manager = ConfigManager.from_preset("smoke")
    exported = manager.to_dict()
    assert "lambda" in exported["agent"]
    assert exported["agent"]["T"] == 10
    assert "mixing_lambda" not in exported["agent"]
    again = ConfigManager.load_from_dict(exported)
    assert again.app_config == manager.app_config
    assert yaml.safe_load(manager.dump_yaml()) == exported


def test_presets_apply():
    smoke = ConfigManager.from_preset("smoke").app_config
    assert smoke.experiment.total_steps == 400
    assert smoke.agent.planning_neighbours == 3
    assert ConfigManager.from_preset("two_coins").app_config.experiment.n_coins == 2
    assert ConfigManager.from_preset("trace_ablation").app_config.experiment.num_seeds == 3
    for name in PRESETS:
        assert ConfigManager.from_preset(name).app_config.experiment.preset == name


def test_preset_over_file_and_overrides_over_preset():
    manager = ConfigManager.load_from_file(
        DEFAULT_YAML, preset="smoke", overrides={"experiment": {"seed": 9}},
    )
    assert manager.get_experiment_config().total_steps == 400
    assert manager.get_experiment_config().seed == 9


def test_unknown_preset_rejected():
    with pytest.raises(ValueError, match="Unknown preset"):
        ConfigManager.from_preset("atari")


@pytest.mark.parametrize("bad", [
    {"agent": {"lambda": 1.5}},
    {"agent": {"trace_mode": "montecarlo"}},
    {"agent": {"kernel": {"bandwidth": 0.0}}},
    {"agent": {"number_of_fully_connected_activations": [0]}},
    {"experiment": {"eval_lambdas": []}},
    {"experiment": {"sweep_lambdas": [0.2, 2.0]}},
    {"experiment": {"observation_mode": "depth"}},
])
def test_invalid_values_rejected(bad):
    with pytest.raises(ValueError, match="Invalid configuration"):
        ConfigManager.load_from_dict(bad)


def test_total_steps_must_cover_warm_up():
    with pytest.raises(ValueError):
        ConfigManager.load_from_dict({"experiment": {"total_steps": 10}, "agent": {"no_training_period": 100}})


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        ConfigManager.load_from_file("config/nope.yaml")


def test_merge_overrides_does_not_mutate():
    base = {"a": {"b": 1, "c": [1, 2]}, "d": 0}
    overrides = {"a": {"b": 2}}
    merged = merge_overrides(base, overrides)
    assert merged == {"a": {"b": 2, "c": [1, 2]}, "d": 0}
    assert base == {"a": {"b": 1, "c": [1, 2]}, "d": 0}
    merged["a"]["c"].append(3)
    assert base["a"]["c"] == [1, 2]


def test_epsilon_horizon_defaults_to_warm_up():
    assert AgentConfigModel(no_training_period=123).epsilon_horizon == 123
    assert AgentConfigModel(no_training_period=123, epsilon_decay_steps=7).epsilon_horizon == 7


def test_seed_list():
    experiment = ConfigManager.load_from_dict({"experiment": {"seed": 4, "num_seeds": 3}}).get_experiment_config()
    assert experiment.seeds == [4, 5, 6]


def test_enum_fields_stored_as_strings():
    agent = ConfigManager.load_from_dict({"agent": {"trace_mode": "kbrl", "mixing_convention": "parametric"}})
    assert agent.get_agent_config().trace_mode == "kbrl"
    assert agent.get_agent_config().mixing_convention == "parametric"


def test_global_manager(monkeypatch):
    monkeypatch.setattr(config_module, "_config_manager", None)
    assert not is_config_initialized()
    with pytest.raises(RuntimeError):
        get_config_manager()
    manager = initialize_config(preset="smoke")
    assert is_config_initialized()
    assert get_config_manager() is manager
