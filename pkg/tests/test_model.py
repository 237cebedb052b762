import json
import struct
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rhrnet import checkpoint
from rhrnet.errors import (CheckpointShapeError, CheckpointVersionError, ConfigError,
                           CorruptCheckpointError, DimensionError)
from rhrnet.model import (ModelConfig, build, enhance_segments, forward, forward_graph, param_count,
                          param_shapes)


def test_default_parameter_count():
    assert param_count(ModelConfig()) == 1_873_752


def test_output_layer_parameter_count():
    # 3 * (64 * 1 + 1 * 1 + 1)
    shapes = param_shapes(ModelConfig())
    assert sum(np.prod(shapes[f"gru7.{k}"]) for k in ("Wx", "Wh", "b")) == 198


def test_count_agrees_with_shape_table(tiny):
    for cfg in (ModelConfig(), tiny):
        assert param_count(cfg) == sum(int(np.prod(s)) for s in param_shapes(cfg).values())


def test_count_grows_with_any_width():
    base = param_count(ModelConfig())
    assert param_count(ModelConfig(widths=(2, 130, 256, 512, 256, 130, 1))) > base
    assert param_count(ModelConfig(widths=(2, 128, 258, 512, 258, 128, 1))) > base
    assert param_count(ModelConfig(widths=(2, 128, 256, 514, 256, 128, 1))) > base


@pytest.mark.parametrize("kwargs", [
    {"segment_len": 1020},
    {"widths": (2, 128, 256, 512)},
    {"widths": (2, 127, 256, 512, 256, 127, 1)},
    {"widths": (2, 128, 256, 512, 128, 128, 1)},
    {"widths": (2, 128, 256, 512, 256, 128, 2)},
    {"scale": Fraction(1, 3)},
    {"scale": Fraction(0)},
])
def test_invalid_configs_are_rejected(kwargs):
    with pytest.raises(ConfigError):
        ModelConfig(**kwargs).validate()


def test_config_error_lists_every_violation():
    with pytest.raises(ConfigError) as err:
        ModelConfig(segment_len=1020, widths=(2, 127, 256, 512, 256, 127, 2)).validate()
    assert len(ModelConfig(segment_len=1020, widths=(2, 127, 256, 512, 256, 127, 2)).problems()) >= 3
    assert "1020" in str(err.value)


def test_tiny_config_shapes(tiny):
    assert tiny.L == 64
    assert tiny.layer_widths == (2, 8, 16, 32, 16, 8, 1)
    trace = []
    out = forward_graph(tiny, build(tiny, 0).arrays, np.zeros((2, 64, 1), np.float32), trace)
    assert out.shape == (2, 64, 1)
    shapes = dict(trace)
    assert shapes["fold1"] == (32, 4)
    assert shapes["gru3"] == (16, 16)
    assert shapes["fold3"] == (8, 32)
    assert shapes["merge6"] == (32, 8)
    assert shapes["unfold6"] == (64, 4)


def test_default_config_trace_matches_shape_table():
    cfg = ModelConfig()
    rng = np.random.default_rng(0)
    values = {k: np.zeros(s, np.float32) for k, s in param_shapes(cfg).items()}
    trace = []
    forward_graph(cfg, values, rng.uniform(-1, 1, (1, 1024, 1)).astype(np.float32), trace)
    assert dict(trace) == {
        "gru1": (1024, 2), "fold1": (512, 4), "gru2": (512, 128), "fold2": (256, 256),
        "gru3": (256, 256), "fold3": (128, 512), "gru4": (128, 512), "unfold4": (256, 256),
        "gru5": (256, 256), "merge5": (256, 256), "unfold5": (512, 128), "gru6": (512, 128),
        "merge6": (512, 128), "unfold6": (1024, 64), "gru7": (1024, 1)}


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), st.integers(1, 4))
def test_any_valid_config_builds_and_runs(l8, a, b, c):
    cfg = ModelConfig(segment_len=8 * l8, widths=(2, 2 * a, 2 * b, 2 * c, 2 * b, 2 * a, 1))
    params = build(cfg, 0)
    assert params.size == param_count(cfg)
    out = forward(params, np.zeros((cfg.L, 1), np.float32))
    assert out.shape == (cfg.L, 1)


def test_build_is_deterministic(tiny):
    assert build(tiny, 5).bit_equal(build(tiny, 5))
    assert not build(tiny, 5).bit_equal(build(tiny, 6))


def test_initial_values(tiny):
    params = build(tiny, 1, dtype=np.float64)
    for name, v in params.arrays.items():
        if name.endswith(".b"):
            assert not v.any()
        elif name.startswith("prelu"):
            assert np.all(v == 0.25)
        elif name.endswith(".Wh"):
            n = v.shape[1]
            for g in range(3):
                block = v[g * n:(g + 1) * n]
                assert np.abs(block.T @ block - np.eye(n)).max() < 1e-6


def test_zero_parameters_give_zero_output(tiny):
    values = {k: np.zeros(s, np.float32) for k, s in param_shapes(tiny).items()}
    rng = np.random.default_rng(0)
    out = forward_graph(tiny, values, rng.uniform(-1, 1, (3, 64, 1)).astype(np.float32)).data
    assert not out.any()


def test_forward_is_deterministic_and_batch_consistent(tiny):
    params = build(tiny, 2)
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (3, 64, 1)).astype(np.float32)
    a, b = forward(params, x), forward(params, x)
    assert a.tobytes() == b.tobytes()
    np.testing.assert_allclose(forward(params, x[1]), a[1], atol=1e-6)
    np.testing.assert_allclose(enhance_segments(params, x[..., 0], batch_size=2), a[..., 0], atol=1e-6)


def test_forward_rejects_wrong_length(tiny):
    with pytest.raises(DimensionError):
        forward(build(tiny, 0), np.zeros((63, 1), np.float32))


def test_checkpoint_round_trip_is_bit_exact(tmp_path, tiny):
    params = build(tiny, 3)
    opt = {k: np.abs(v) for k, v in params.arrays.items()}
    path = tmp_path / "m.ckpt"
    checkpoint.save(params, path, optimizer=opt, meta={"epoch": 4})
    ck = checkpoint.load_checkpoint(path)
    assert ck.params.bit_equal(params)
    assert ck.params.seed == 3
    assert ck.meta == {"epoch": 4}
    assert all(ck.optimizer[k].tobytes() == opt[k].tobytes() for k in opt)
    assert checkpoint.load(path).bit_equal(params)


def test_truncated_checkpoint(tmp_path, tiny):
    path = tmp_path / "m.ckpt"
    checkpoint.save(build(tiny, 0), path)
    raw = path.read_bytes()
    for cut in (4, 30, len(raw) - 10):
        (tmp_path / "cut.ckpt").write_bytes(raw[:cut])
        with pytest.raises(CorruptCheckpointError):
            checkpoint.load(tmp_path / "cut.ckpt")


def test_bad_magic(tmp_path):
    (tmp_path / "x.ckpt").write_bytes(b"NOTACKPT" + bytes(32))
    with pytest.raises(CorruptCheckpointError):
        checkpoint.load(tmp_path / "x.ckpt")


def test_version_mismatch(tmp_path, tiny):
    path = tmp_path / "m.ckpt"
    checkpoint.save(build(tiny, 0), path)
    raw = bytearray(path.read_bytes())
    struct.pack_into("<I", raw, 8, 99)
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointVersionError):
        checkpoint.load(path)


def _rewrite_header(path, edit):
    raw = path.read_bytes()
    magic, version, hlen = struct.unpack_from("<8sII", raw)
    header = json.loads(raw[16:16 + hlen])
    edit(header)
    new = json.dumps(header).encode()
    path.write_bytes(struct.pack("<8sII", magic, version, len(new)) + new + raw[16 + hlen:])


def test_shape_inconsistent_with_config(tmp_path, tiny):
    path = tmp_path / "m.ckpt"
    checkpoint.save(build(tiny, 0), path)

    def shrink(h):
        h["config"]["widths"] = [2, 4, 16, 32, 16, 4, 1]
    _rewrite_header(path, shrink)
    with pytest.raises(CheckpointShapeError):
        checkpoint.load(path)


def test_loaded_tiny_model_runs(tmp_path, tiny):
    params = build(tiny, 9)
    path = tmp_path / "m.ckpt"
    checkpoint.save(params, path)
    x = np.random.default_rng(0).uniform(-1, 1, (64, 1)).astype(np.float32)
    assert forward(checkpoint.load(path), x).tobytes() == forward(params, x).tobytes()
