"""Tests for dcaps.network.checkpoint."""

import json

import numpy as np
import pytest

from dcaps.core.errors import CheckpointError
from dcaps.network.checkpoint import (
    MAGIC,
    encode_checkpoint,
    load_checkpoint,
    read_header,
    save_checkpoint,
)
from dcaps.network.config import tiny_config
from dcaps.network.model import build
from dcaps.tests.helpers.config_test_helpers import random_images, tiny_network_config


@pytest.fixture
def net():
    return build(tiny_network_config(), seed=3)


def test_round_trip_restores_every_tensor(tmp_path, net):
    path = save_checkpoint(net, tmp_path / "model.ckpt")
    loaded = load_checkpoint(path)
    assert loaded.config == net.config
    for original, restored in zip(net.parameters(), loaded.parameters(), strict=True):
        assert original.name == restored.name
        np.testing.assert_array_equal(original.value.data, restored.value.data)


def test_round_trip_reproduces_scores(tmp_path, net):
    images = random_images(np.random.default_rng(0), 2).astype(np.float32)
    loaded = load_checkpoint(save_checkpoint(net, tmp_path / "model.ckpt"))
    np.testing.assert_array_equal(net(images).class_scores.data, loaded(images).class_scores.data)


def test_header_is_readable_json_with_index(net):
    header, blob = read_header(encode_checkpoint(net, extra={"fold": 2}))
    assert header["format_version"] == 1
    assert header["extra"] == {"fold": 2}
    assert [t["name"] for t in header["tensors"]] == [p.name for p in net.parameters()]
    assert header["tensors"][0]["offset"] == 0
    assert len(blob) == 4 * net.parameter_count()


def test_encoding_is_deterministic(net):
    assert encode_checkpoint(net) == encode_checkpoint(build(tiny_network_config(), seed=3))


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTACKPT\n12\n{}")
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError, match="cannot read"):
        load_checkpoint(tmp_path / "absent.ckpt")


def test_truncated_header(net):
    payload = encode_checkpoint(net)
    cut = payload[: len(MAGIC) + 20]
    with pytest.raises(CheckpointError, match="truncated"):
        read_header(cut)


def test_truncated_blob(tmp_path, net):
    path = tmp_path / "short.ckpt"
    path.write_bytes(encode_checkpoint(net)[:-8])
    with pytest.raises(CheckpointError, match="past the end"):
        load_checkpoint(path)


def test_unsupported_format_version(net):
    header, blob = read_header(encode_checkpoint(net))
    header["format_version"] = 7
    raw = json.dumps(header, sort_keys=True).encode()
    payload = MAGIC + f"{len(raw)}\n".encode() + raw + bytes(blob)
    with pytest.raises(CheckpointError, match="format_version"):
        read_header(payload)


def test_shape_mismatch_in_index(tmp_path, net):
    header, blob = read_header(encode_checkpoint(net))
    header["tensors"][0]["shape"] = [1, 2, 3]
    raw = json.dumps(header, sort_keys=True).encode()
    path = tmp_path / "tampered.ckpt"
    path.write_bytes(MAGIC + f"{len(raw)}\n".encode() + raw + bytes(blob))
    with pytest.raises(CheckpointError, match="does not match"):
        load_checkpoint(path)


def test_expected_config_mismatch(tmp_path, net):
    path = save_checkpoint(net, tmp_path / "model.ckpt")
    with pytest.raises(CheckpointError, match="does not match the requested"):
        load_checkpoint(path, expected_config=tiny_config(routing=2))
    assert load_checkpoint(path, expected_config=net.config).config == net.config


def test_save_creates_no_temp_files(tmp_path, net):
    save_checkpoint(net, tmp_path / "model.ckpt")
    assert sorted(p.name for p in tmp_path.iterdir()) == ["model.ckpt"]
