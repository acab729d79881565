import numpy as np
import pytest

from star.errors import WeightsFormatError
from star.gru import AdamState, GruConfig, init_params, train_step
from star.quant import CalibrationSet, quantize_network
from star.weights import (
    MAGIC_F32,
    MAGIC_QUANT,
    load_network,
    load_quant_network,
    manifest_text,
    peek_magic,
    save_network,
)
from star.weights import save_quant_network


def small_net(seed=0):
    rng = np.random.default_rng(seed)
    net = init_params(GruConfig(feature_count=6, hidden=5, layers=3), seed=seed)
    windows = rng.normal(size=(4, 6, 12)).astype(np.float32)
    labels = rng.integers(0, 8, size=4)
    net, _, _ = train_step(net, windows, labels, AdamState())
    return net


def test_fp32_container_roundtrip(tmp_path):
    net = small_net()
    path = tmp_path / "model.w"
    save_network(path, net)
    assert peek_magic(path) == MAGIC_F32
    back = load_network(path)
    assert back.feature_count == net.feature_count
    assert back.hidden == net.hidden
    assert back.seed == net.seed
    for name, tensor in net.tensors().items():
        np.testing.assert_array_equal(back.tensors()[name], tensor)


def test_fp32_container_bytes_deterministic(tmp_path):
    net = small_net()
    p1, p2 = tmp_path / "a.w", tmp_path / "b.w"
    save_network(p1, net)
    save_network(p2, net)
    assert p1.read_bytes() == p2.read_bytes()


def test_manifest_lists_every_tensor(tmp_path):
    net = small_net()
    path = tmp_path / "model.w"
    save_network(path, net)
    manifest = manifest_text(path)
    for name, tensor in net.tensors().items():
        assert name in manifest
        assert "x".join(str(d) for d in tensor.shape) in manifest


def test_corrupted_payload_rejected(tmp_path):
    net = small_net()
    path = tmp_path / "model.w"
    save_network(path, net)
    raw = bytearray(path.read_bytes())
    raw[-3] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(WeightsFormatError, match="checksum"):
        load_network(path)


def test_wrong_magic_rejected(tmp_path):
    path = tmp_path / "model.w"
    path.write_bytes(b"NOTAWGT\x00" + b"\x00" * 64)
    with pytest.raises(WeightsFormatError, match="magic"):
        load_network(path)


def test_quant_container_roundtrip(tmp_path):
    net = small_net()
    rng = np.random.default_rng(1)
    calib = CalibrationSet(rng.uniform(size=(3, 6, 12)).astype(np.float32))
    qnet = quantize_network(net, calib)
    path = tmp_path / "model.q"
    save_quant_network(path, qnet)
    assert peek_magic(path) == MAGIC_QUANT
    back = load_quant_network(path)
    assert back.calibrated
    assert back.feature_count == qnet.feature_count
    for a, b in zip(qnet.layers, back.layers):
        np.testing.assert_array_equal(a.wz.values, b.wz.values)
        assert a.wz.scale == pytest.approx(b.wz.scale, rel=1e-6)
        assert a.wz.zero_point == b.wz.zero_point
        np.testing.assert_array_equal(a.bz, b.bz)
        assert a.x_q.zero_point == b.x_q.zero_point
        assert a.x_q.scale == pytest.approx(b.x_q.scale, rel=1e-6)
    assert qnet.head_q.zero_point == back.head_q.zero_point


def test_uncalibrated_quant_container_roundtrip(tmp_path):
    qnet = quantize_network(small_net())
    assert not qnet.calibrated
    path = tmp_path / "model.q"
    save_quant_network(path, qnet)
    back = load_quant_network(path)
    assert not back.calibrated
