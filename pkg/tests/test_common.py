# tests/test_common.py

import numpy as np
import pytest

from src.common.artifacts import TraceWriter, dumps_json, read_trace, write_json
from src.common.binary_format import decode_container, encode_container, read_container, write_container
from src.common.errors import ConfigError, ContractViolation, ParseError
from src.common.settings import RunConfig, apply_overrides
from src.controller.controller import SelectionMode


# --- errors ---

def test_parse_error_names_path_and_line():
    err = ParseError("bad label", line_no=7, path="data.tsv")
    assert str(err) == "data.tsv:line 7: bad label"
    assert err.line_no == 7


def test_config_error_is_a_value_error():
    assert issubclass(ConfigError, ValueError)


# --- binary container ---

def test_container_preserves_arrays_and_metadata(tmp_path):
    arrays = {"a": np.arange(6, dtype=np.int64).reshape(2, 3), "b": np.array([0.5, -1.25])}
    path = tmp_path / "x.bin"
    write_container(str(path), "dataset", {"note": "hi"}, arrays)
    metadata, loaded = read_container(str(path), expected_kind="dataset")
    assert metadata["note"] == "hi"
    np.testing.assert_array_equal(loaded["a"], arrays["a"])
    np.testing.assert_array_equal(loaded["b"], arrays["b"])


def test_container_bytes_are_deterministic():
    arrays = {"w": np.linspace(0, 1, 5)}
    assert encode_container("checkpoint", {"k": 1}, arrays) == encode_container("checkpoint", {"k": 1}, arrays)


def test_container_rejects_bad_magic_and_wrong_kind():
    blob = encode_container("dataset", {}, {"a": np.zeros(2)})
    with pytest.raises(ContractViolation):
        decode_container(b"NOTMAGIC" + blob[8:])
    with pytest.raises(ContractViolation):
        decode_container(blob, expected_kind="checkpoint")
    with pytest.raises(ContractViolation):
        decode_container(blob[:-4])


# --- artifacts ---

def test_json_artifacts_are_sorted_and_stable(tmp_path):
    payload = {"b": 1, "a": [0.25, 0.75]}
    assert dumps_json(payload).startswith(b'{\n  "a"')
    path = tmp_path / "out.json"
    write_json(str(path), payload)
    assert path.read_bytes() == dumps_json(payload)


def test_trace_writer_writes_header_first(tmp_path):
    path = tmp_path / "trace.jsonl"
    with TraceWriter(str(path), {"config_hash": "abc", "seed": 1}) as writer:
        writer.write({"type": "step", "t": 0})
        writer.write({"type": "step", "t": 1})
    records = read_trace(str(path))
    assert records[0] == {"type": "header", "config_hash": "abc", "seed": 1}
    assert [r["t"] for r in records[1:]] == [0, 1]


# --- settings ---

def test_defaults_follow_the_documented_constants():
    config = RunConfig.from_dict({})
    assert config.model.embedding_dim == 16
    assert config.model.hidden_sizes == [16, 8]
    assert config.model.dropout == 0.2
    assert config.search.batch_size == 2048
    assert config.controller.temperature_floor == 0.01
    assert config.controller.temperature_slope == 5e-5
    assert config.controller.mode == SelectionMode.GUMBEL
    assert config.data.split_ratios == (0.8, 0.1, 0.1)


def test_unknown_key_is_rejected_with_its_location():
    with pytest.raises(ConfigError, match="search.bogus"):
        RunConfig.from_dict({"search": {"bogus": 1}})


def test_bad_ratios_are_rejected():
    with pytest.raises(ConfigError, match="split_ratios"):
        RunConfig.from_dict({"data": {"split_ratios": [0.5, 0.2, 0.2]}})


def test_overrides_are_parsed_as_yaml_scalars():
    raw = apply_overrides({"search": {"k": 4}}, ["search.k=6", "controller.mode=plain_softmax", "retrain.fields=[0, 2]"])
    config = RunConfig.from_dict(raw)
    assert config.search.k == 6
    assert config.controller.mode == SelectionMode.PLAIN_SOFTMAX
    assert config.retrain.fields == [0, 2]


def test_override_without_equals_sign_fails():
    with pytest.raises(ConfigError):
        apply_overrides({}, ["search.k"])


def test_load_reads_yaml_and_applies_overrides(fast_config_file):
    config = RunConfig.load(fast_config_file, ["seed=5"])
    assert config.seed == 5
    assert config.search.k == 2


def test_missing_config_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.load(str(tmp_path / "nope.yaml"))


def test_config_hash_ignores_output_location_but_not_experiment_settings():
    base = RunConfig.from_dict({})
    moved = base.with_updates(["project.output_dir=/elsewhere", "logging.level=DEBUG"])
    changed = base.with_updates(["search.k=7"])
    assert base.config_hash() == moved.config_hash()
    assert base.config_hash() != changed.config_hash()
    assert len(base.config_hash()) == 16
