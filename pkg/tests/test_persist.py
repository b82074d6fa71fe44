import os
import struct

import numpy as np
import pytest

from pilotprune.channel import ChannelConfig, Dataset, generate_dataset
from pilotprune.errors import FormatError, IntegrityError
from pilotprune.model import ModelConfig, build_model, draw_unit_noise, predict
from pilotprune.persist import (checkpoint_bytes, dataset_bytes, export_mask, mask_to_pgm, parse_checkpoint,
                                parse_dataset, pgm_to_mask, read_checkpoint, read_dataset, read_mask_csv,
                                write_checkpoint, write_dataset)
from pilotprune.pruning import PruneMask


@pytest.fixture
def small():
    return generate_dataset(ChannelConfig(n_antennas=2, n_subcarriers=4, n_paths=2), 3, "train", 11)


def test_dataset_round_trip(tmp_path, small):
    path = tmp_path / "d.mocd"
    write_dataset(small, path)
    back = read_dataset(path)
    assert back.samples.tobytes() == small.samples.tobytes()
    assert back.seed == 11 and back.samples.dtype == np.complex64
    assert os.path.getsize(path) == 28 + 3 * 2 * 4 * 8


def test_dataset_layout_subcarrier_major(small):
    raw = dataset_bytes(small)
    values = np.frombuffer(raw[28:], dtype="<f4")
    h = small.samples[0]
    # second complex value is antenna 1 on subcarrier 0
    assert values[2] == h[1, 0].real and values[3] == h[1, 0].imag
    assert values[4] == h[0, 1].real


def test_dataset_header_fields(small):
    magic, version, n, m, k, seed = struct.unpack("<4sIIIIQ", dataset_bytes(small)[:28])
    assert (magic, version, n, m, k, seed) == (b"MOCD", 1, 2, 4, 3, 11)


def test_truncated_dataset(small):
    raw = dataset_bytes(small)
    with pytest.raises(FormatError, match="5 bytes missing"):
        parse_dataset(raw[:-5])
    with pytest.raises(FormatError, match="missing"):
        parse_dataset(raw[:10])


def test_header_only_dataset():
    empty = Dataset(ChannelConfig(n_antennas=2, n_subcarriers=4), np.zeros((0, 2, 4)), seed=5)
    back = parse_dataset(dataset_bytes(empty))
    assert len(back) == 0 and back.samples.shape == (0, 2, 4)


def test_bad_magic_and_version(small):
    raw = bytearray(dataset_bytes(small))
    bad = bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError, match="offset 0"):
        parse_dataset(bad)
    raw[4] = 9
    with pytest.raises(FormatError, match="version"):
        parse_dataset(bytes(raw))


def test_dataset_bytes_deterministic(small):
    assert dataset_bytes(small) == dataset_bytes(Dataset(small.config, small.samples.copy(), seed=11))


def _probe(graph, seed=0):
    rng = np.random.default_rng(seed)
    cfg = graph.config
    h = rng.standard_normal((4, cfg.n_antennas, cfg.n_subcarriers)) * (1 + 0.5j)
    noise = draw_unit_noise(rng, 4, cfg.pilot_len, cfg.n_subcarriers)
    return predict(graph, h, 0.2, noise=noise)


@pytest.mark.parametrize("cfg", [
    ModelConfig(4, 6, 2, conv_width=4),
    ModelConfig(4, 6, 2, attention=True, conv_width=4),
    ModelConfig(4, 6, 3, mode="sp", conv_width=4),
    ModelConfig(4, 6, 2, mode="fft", attention=True, conv_width=4),
    ModelConfig(4, 6, 2, linear_only=True),
])
def test_checkpoint_round_trip(tmp_path, cfg):
    graph = build_model(cfg, seed=3)
    mask = np.ones((cfg.pilot_len, 6), np.uint8)
    mask[0, 1] = 0
    graph.mask = PruneMask(mask, 0.25, 4)
    path = tmp_path / "m.mock"
    write_checkpoint(graph, path)
    back = read_checkpoint(path)
    assert back.config == cfg
    assert np.array_equal(back.mask.mask, mask) and back.mask.updates == 4 and back.mask.target == 0.25
    for (name, a), (_, b) in zip(graph.named_params().items(), back.named_params().items()):
        assert a.data.tobytes() == b.data.tobytes(), name
    assert np.array_equal(_probe(graph), _probe(back))
    assert checkpoint_bytes(back) == checkpoint_bytes(graph)


def test_flipped_byte_fails_crc():
    raw = bytearray(checkpoint_bytes(build_model(ModelConfig(4, 6, 2, conv_width=4))))
    raw[len(raw) // 2] ^= 0x01
    with pytest.raises(IntegrityError):
        parse_checkpoint(bytes(raw))


def test_truncated_checkpoint():
    raw = checkpoint_bytes(build_model(ModelConfig(4, 6, 2, conv_width=4)))
    with pytest.raises(FormatError):
        parse_checkpoint(raw[:8])
    with pytest.raises(FormatError):
        parse_checkpoint(raw[:-3])


def test_shared_checkpoint_keeps_aliasing():
    back = parse_checkpoint(checkpoint_bytes(build_model(ModelConfig(4, 6, 2, mode="sp", conv_width=4))))
    assert back.pilots.re.shape == (1, 2, 4)
    back.pilots.re.data[0, 1, 2] = 42.0
    re, _ = back.pilots.views()
    assert np.all(re[:, 1, 2] == 42.0)


def test_all_ones_mask_image_is_white():
    img = pgm_to_mask(mask_to_pgm(PruneMask.ones(3, 5)))
    assert img.shape == (3, 5) and img.all()
    raw = mask_to_pgm(PruneMask.ones(3, 5))
    assert raw.startswith(b"P5\n5 3\n255\n") and set(raw[11:]) == {255}


def test_half_mask_half_black(tmp_path):
    mask = np.ones((4, 8), np.uint8)
    mask[:, ::2] = 0
    export_mask(PruneMask(mask), tmp_path / "m.csv", tmp_path / "m.pgm")
    pixels = (tmp_path / "m.pgm").read_bytes()[len(b"P5\n8 4\n255\n"):]
    assert pixels.count(0) == 16 and pixels.count(255) == 16
    assert np.array_equal(read_mask_csv(tmp_path / "m.csv"), mask)


def test_atomic_write_leaves_no_temp(tmp_path, small):
    write_dataset(small, tmp_path / "a.mocd")
    write_dataset(small, tmp_path / "a.mocd")
    assert sorted(os.listdir(tmp_path)) == ["a.mocd"]
