from __future__ import annotations

from pathlib import Path

import pytest

from datamentions import ConfigError, PipelineConfig, load_config


def test_defaults_validate() -> None:
    cfg = load_config(None)
    assert cfg.backend == "remote"
    assert cfg.gate_kind == "always_pass"
    assert cfg.beta == 0.5
    assert cfg.jaccard_threshold == 0.5
    assert cfg.seed == 13


def test_missing_file_is_a_config_error(tmp_path) -> None:
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.yaml")


def test_full_file_with_relative_paths(tmp_path) -> None:
    script = tmp_path / "script.jsonl"
    script.write_text("", encoding="utf-8")
    config_path = tmp_path / "pipeline.yaml"
    config_path.write_text(
        """
endpoint:
  base_url: https://llm.example/v1
  model: test-model
  temperature: 0.2
backend:
  kind: mock
  script: script.jsonl
execution:
  concurrency: 4
  retry_attempts: 2
gate:
  kind: keyword
match:
  beta: 1.0
paths:
  corpus: store
  output: runs/out
seed: 99
""",
        encoding="utf-8",
    )
    cfg = load_config(config_path)
    assert cfg.base_url == "https://llm.example/v1"
    assert cfg.model_name == "test-model"
    assert cfg.temperature == 0.2
    assert cfg.backend == "mock"
    assert cfg.mock_script == tmp_path / "script.jsonl"
    assert cfg.concurrency == 4
    assert cfg.gate_kind == "keyword"
    assert cfg.beta == 1.0
    assert cfg.corpus_dir == tmp_path / "store"
    assert cfg.output_dir == tmp_path / "runs" / "out"
    assert cfg.seed == 99


def test_backend_string_shorthand(tmp_path) -> None:
    config_path = tmp_path / "c.yaml"
    config_path.write_text("backend: remote\n", encoding="utf-8")
    assert load_config(config_path).backend == "remote"


def test_unknown_keys_are_rejected(tmp_path) -> None:
    config_path = tmp_path / "c.yaml"
    config_path.write_text("endpoint:\n  modle: oops\n", encoding="utf-8")
    with pytest.raises(ConfigError) as excinfo:
        load_config(config_path)
    assert "modle" in str(excinfo.value)

    config_path.write_text("surprises: true\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(config_path)


def test_mock_backend_requires_existing_script(tmp_path) -> None:
    config_path = tmp_path / "c.yaml"
    config_path.write_text("backend:\n  kind: mock\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(config_path)
    config_path.write_text(
        "backend:\n  kind: mock\n  script: missing.jsonl\n", encoding="utf-8"
    )
    with pytest.raises(ConfigError):
        load_config(config_path)


def test_remote_gate_requires_endpoint() -> None:
    cfg = PipelineConfig(gate_kind="remote")
    with pytest.raises(ConfigError):
        cfg.validate()
    cfg.gate_endpoint = "http://gate.example/score"
    cfg.validate()


@pytest.mark.parametrize(
    "field, value",
    [
        ("backend", "cloud"),
        ("gate_kind", "psychic"),
        ("gate_threshold", 2.0),
        ("jaccard_threshold", -0.1),
        ("beta", 0.0),
        ("concurrency", 0),
        ("retry_attempts", 0),
        ("item_attempts", 0),
        ("temperature", -1.0),
    ],
)
def test_out_of_range_values(field, value) -> None:
    cfg = PipelineConfig()
    setattr(cfg, field, value)
    with pytest.raises(ConfigError):
        cfg.validate()


def test_yaml_parse_error(tmp_path) -> None:
    config_path = tmp_path / "c.yaml"
    config_path.write_text("gate: [unclosed\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(config_path)


def test_json_is_valid_config_syntax(tmp_path) -> None:
    config_path = tmp_path / "c.json"
    config_path.write_text('{"seed": 7, "match": {"beta": 2.0}}', encoding="utf-8")
    cfg = load_config(config_path)
    assert cfg.seed == 7
    assert cfg.beta == 2.0


def test_prompts_dir_must_exist(tmp_path) -> None:
    cfg = PipelineConfig(prompts_dir=Path(tmp_path / "nope"))
    with pytest.raises(ConfigError):
        cfg.validate()
