import struct

import numpy as np
import pytest

from pointfuse.nn.checkpoint import (
    format_config,
    load_checkpoint,
    load_config,
    parse_config,
    save_checkpoint,
    save_config,
)
from pointfuse.nn.model import ModelConfig, init_params


def test_checkpoint_round_trip(tmp_path):
    p = init_params(ModelConfig.toy(input_feature_dim=7), 3)
    p["scalar"] = np.array(2.5)
    path = tmp_path / "m.pnet"
    save_checkpoint(path, p)
    q = load_checkpoint(path)
    assert list(q) == list(p)
    for k in p:
        np.testing.assert_array_equal(q[k], p[k].astype(np.float32))
        assert q[k].shape == p[k].shape


def test_checkpoint_layout(tmp_path):
    path = tmp_path / "m.pnet"
    save_checkpoint(path, {"ab": np.arange(6, dtype=float).reshape(2, 3)})
    raw = path.read_bytes()
    assert raw[:4] == b"PNET"
    assert struct.unpack_from("<IIH", raw, 4) == (1, 1, 2)
    assert raw[14:16] == b"ab"
    assert struct.unpack_from("<III", raw, 16) == (2, 2, 3)
    np.testing.assert_array_equal(np.frombuffer(raw[28:], "<f4"), np.arange(6))


def test_checkpoint_errors(tmp_path):
    path = tmp_path / "m.pnet"
    save_checkpoint(path, {"a": np.ones(3)})
    raw = path.read_bytes()
    (tmp_path / "bad").write_bytes(b"XNET" + raw[4:])
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(tmp_path / "bad")
    (tmp_path / "ver").write_bytes(raw[:4] + struct.pack("<I", 9) + raw[8:])
    with pytest.raises(ValueError, match="version"):
        load_checkpoint(tmp_path / "ver")
    (tmp_path / "tail").write_bytes(raw + b"\0")
    with pytest.raises(ValueError, match="trailing"):
        load_checkpoint(tmp_path / "tail")
    (tmp_path / "short").write_bytes(raw[:-2])
    with pytest.raises((ValueError, struct.error)):
        load_checkpoint(tmp_path / "short")


@pytest.mark.parametrize(
    "cfg",
    [ModelConfig(), ModelConfig.toy(num_classes=20, input_feature_dim=35, use_global=False, global_wiring="final")],
)
def test_config_round_trip(tmp_path, cfg):
    assert parse_config(format_config(cfg)) == cfg
    save_config(tmp_path / "m.cfg", cfg)
    assert load_config(tmp_path / "m.cfg") == cfg


def test_config_errors():
    with pytest.raises(ValueError, match="line 1"):
        parse_config("num_classes 4\n")
    with pytest.raises(ValueError, match="unknown key"):
        parse_config("flavour = 3\n")
    with pytest.raises(ValueError, match="use_global"):
        parse_config("use_global = maybe\n")
    with pytest.raises(ValueError, match="layer needs"):
        parse_config("scene_layer.0 = 4 0.1\n")
    # comments and blank lines are fine
    assert parse_config("# hi\n\nnum_classes = 5  # five\n").num_classes == 5
