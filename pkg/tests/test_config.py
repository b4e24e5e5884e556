"""Config tree: defaults, YAML loading, overrides, resolved-config echo."""

import pytest

from cfree.config import (RunConfig, SEED_ENV_VAR, config_to_dict, dump_config,
                          load_config, resolve_config)
from cfree.encoders import ConfigError


def _write(tmp_path, text, name="run.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


# ---- defaults and loading ----

def test_none_path_gives_defaults():
    cfg = load_config(None)
    assert cfg == RunConfig()
    assert cfg.seed == 0
    assert cfg.out == "runs/out"
    assert cfg.threads == 1
    assert cfg.encoder.mode == "MM"
    assert cfg.views.k_choices == (3, 4)


def test_empty_file_gives_defaults(tmp_path):
    assert load_config(_write(tmp_path, "")) == RunConfig()


def test_partial_file_only_changes_named_fields(tmp_path):
    path = _write(tmp_path, "seed: 7\nschedule:\n  total_epochs: 50\n")
    cfg = load_config(path)
    assert cfg.seed == 7
    assert cfg.schedule.total_epochs == 50
    # everything else keeps its default
    assert cfg.schedule.batch_size == RunConfig().schedule.batch_size
    assert cfg.encoder == RunConfig().encoder


def test_missing_file_is_config_error(tmp_path):
    missing = str(tmp_path / "nope.yaml")
    with pytest.raises(ConfigError, match="config file not found"):
        load_config(missing)


def test_invalid_yaml_is_config_error(tmp_path):
    path = _write(tmp_path, "seed: [unclosed\n")
    with pytest.raises(ConfigError, match="invalid YAML"):
        load_config(path)


def test_non_mapping_top_level_rejected(tmp_path):
    path = _write(tmp_path, "- a\n- b\n")
    with pytest.raises(ConfigError, match="top level must be a mapping"):
        load_config(path)


def test_unknown_top_level_key_rejected(tmp_path):
    path = _write(tmp_path, "sede: 3\n")
    with pytest.raises(ConfigError, match="unknown top-level keys.*sede"):
        load_config(path)


def test_unknown_section_key_names_the_section(tmp_path):
    path = _write(tmp_path, "schedule:\n  lr_max: 1.0\n")
    with pytest.raises(ConfigError, match="schedule.*unknown keys.*lr_max"):
        load_config(path)


def test_scalar_section_rejected(tmp_path):
    path = _write(tmp_path, "fit: 3\n")
    with pytest.raises(ConfigError, match="fit: expected a mapping"):
        load_config(path)


def test_section_validation_propagates(tmp_path):
    path = _write(tmp_path, "fit:\n  label_fraction: 0\n")
    with pytest.raises(ConfigError, match=r"label_fraction must be in \[1, 100\]"):
        load_config(path)


def test_yaml_lists_become_tuples(tmp_path):
    path = _write(tmp_path, (
        "views:\n  k_choices: [2, 3]\n"
        "data:\n  tasks: [logp, tox]\n"
        "wlbench:\n  ks: [1, 2]\n  seeds: [4, 5]\n"
        "bench:\n  sizes: [100, 200]\n"
        "ablate:\n  seeds: [9]\n"
    ))
    cfg = load_config(path)
    assert cfg.views.k_choices == (2, 3)
    assert cfg.data.tasks == ("logp", "tox")
    assert cfg.wlbench.ks == (1, 2)
    assert cfg.wlbench.seeds == (4, 5)
    assert cfg.bench.sizes == (100, 200)
    assert cfg.ablate.seeds == (9,)


# ---- resolve_config: seed precedence and dotted overrides ----

def test_seed_precedence_flag_beats_env_beats_file():
    cfg = RunConfig(seed=5)
    assert resolve_config(cfg, {"seed": 9}, env={SEED_ENV_VAR: "7"}).seed == 9
    assert resolve_config(cfg, {"seed": None}, env={SEED_ENV_VAR: "7"}).seed == 7
    assert resolve_config(cfg, {"seed": None}, env={}).seed == 5


def test_non_integer_env_seed_rejected():
    with pytest.raises(ConfigError, match=f"{SEED_ENV_VAR} must be an integer"):
        resolve_config(RunConfig(), {}, env={SEED_ENV_VAR: "twelve"})


def test_empty_env_seed_ignored():
    assert resolve_config(RunConfig(seed=3), {}, env={SEED_ENV_VAR: ""}).seed == 3


def test_none_overrides_are_skipped():
    cfg = RunConfig(seed=4, out="keep")
    out = resolve_config(cfg, {"seed": None, "out": None, "data.train": None}, env={})
    assert out == cfg


def test_dotted_override_replaces_section_field():
    cfg = resolve_config(RunConfig(), {"encoder.mode": "2D-only",
                                       "fit.label_fraction": 10}, env={})
    assert cfg.encoder.mode == "2D-only"
    assert cfg.fit.label_fraction == 10
    # untouched siblings keep their defaults
    assert cfg.encoder.gine_layers == RunConfig().encoder.gine_layers


def test_dotted_override_retuples_lists():
    cfg = resolve_config(RunConfig(), {"bench.sizes": [50, 100]}, env={})
    assert cfg.bench.sizes == (50, 100)


def test_unknown_section_rejected():
    with pytest.raises(ConfigError, match="unknown config section 'enc'"):
        resolve_config(RunConfig(), {"enc.mode": "MM"}, env={})


def test_unknown_field_rejected():
    with pytest.raises(ConfigError, match="unknown config field 'encoder.depth'"):
        resolve_config(RunConfig(), {"encoder.depth": 3}, env={})
    with pytest.raises(ConfigError, match="unknown config field 'verbose'"):
        resolve_config(RunConfig(), {"verbose": True}, env={})


def test_override_runs_section_validation():
    with pytest.raises(ConfigError, match="ablate grid must be"):
        resolve_config(RunConfig(), {"ablate.grid": "x"}, env={})
    with pytest.raises(ConfigError, match="label_fraction"):
        resolve_config(RunConfig(), {"fit.label_fraction": 200}, env={})


# ---- round trip ----

def test_dump_load_fixed_point(tmp_path):
    cfg = resolve_config(RunConfig(), {
        "seed": 11,
        "out": str(tmp_path / "runs"),
        "encoder.mode": "2D-only",
        "views.k_choices": [2],
        "wlbench.seeds": [3, 4],
    }, env={})
    path = str(tmp_path / "resolved.yaml")
    dump_config(cfg, path)
    again = load_config(path)
    assert again == cfg
    # and dumping the reloaded config reproduces the file byte for byte
    path2 = str(tmp_path / "resolved2.yaml")
    dump_config(again, path2)
    assert open(path).read() == open(path2).read()


def test_config_to_dict_detuples():
    d = config_to_dict(RunConfig())
    assert d["views"]["k_choices"] == [3, 4]
    assert d["wlbench"]["ks"] == [1, 2, 3]
    assert isinstance(d["bench"]["sizes"], list)


def test_dumped_file_has_sorted_keys(tmp_path):
    path = str(tmp_path / "cfg.yaml")
    dump_config(RunConfig(), path)
    with open(path) as fh:
        top = [line.split(":")[0] for line in fh
               if line.strip() and not line.startswith(" ")]
    assert top == sorted(top)
