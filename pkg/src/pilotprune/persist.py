"""Binary dataset/checkpoint formats and mask exports.

All multi-byte fields are little-endian. Dataset files::

    b"MOCD" | u32 version | u32 N | u32 M | u32 K | u64 seed | K*M*N*(f32 re, f32 im)

Each sample is written subcarrier-major then antenna. Checkpoints::

    b"MOCK" | u32 version | u32 N | u32 M | u32 L | u8 len + mode tag
    | u32 width | u8 attention | u8 linear_only | u32 mask updates | f64 mask target
    | u32 n_sections | sections... | u32 CRC32 of every preceding byte

A section is ``u16 len + name | u32 ndim | u32 dims... | f32 payload``.
"""

from __future__ import annotations

import csv
import os
import struct
import tempfile
import zlib

import numpy as np

from .channel import ChannelConfig, Dataset
from .errors import FormatError, IntegrityError, UsageError
from .model import ModelConfig, ModelGraph, build_model
from .pruning import PruneMask

DATASET_MAGIC = b"MOCD"
CHECKPOINT_MAGIC = b"MOCK"
VERSION = 1

_DATASET_HEADER = struct.Struct("<4sIIIIQ")
_CKPT_DIMS = struct.Struct("<4sIIII")
_CKPT_ARCH = struct.Struct("<IBBId")


def atomic_write(path, data: bytes):
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, buf: bytes, what: str):
        self.buf = buf
        self.pos = 0
        self.what = what

    def take(self, n):
        end = self.pos + n
        if end > len(self.buf):
            missing = end - len(self.buf)
            raise FormatError(f"truncated {self.what}: {missing} bytes missing", self.pos)
        out = self.buf[self.pos:end]
        self.pos = end
        return out

    def unpack(self, fmt: struct.Struct):
        return fmt.unpack(self.take(fmt.size))

    def scalar(self, fmt):
        return self.unpack(struct.Struct("<" + fmt))[0]


def _check_magic(magic, expected, version):
    if magic != expected:
        raise FormatError(f"bad magic {magic!r}, expected {expected!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported format version {version}", 4)


def dataset_bytes(dataset: Dataset) -> bytes:
    k, n, m = dataset.samples.shape
    header = _DATASET_HEADER.pack(DATASET_MAGIC, VERSION, n, m, k, int(dataset.seed) & (2**64 - 1))
    # (K, N, M) -> (K, M, N, 2): subcarrier-major, antenna, then (re, im)
    planes = np.stack([dataset.samples.real, dataset.samples.imag], axis=-1).transpose(0, 2, 1, 3)
    return header + np.ascontiguousarray(planes, dtype="<f4").tobytes()


def write_dataset(dataset: Dataset, path):
    atomic_write(path, dataset_bytes(dataset))


def parse_dataset(buf: bytes, config: ChannelConfig | None = None, split="train") -> Dataset:
    r = _Reader(buf, "dataset file")
    magic, version, n, m, k, seed = r.unpack(_DATASET_HEADER)
    _check_magic(magic, DATASET_MAGIC, version)
    expected = k * n * m * 8
    have = len(buf) - r.pos
    if have < expected:
        raise FormatError(f"truncated dataset payload: {expected - have} bytes missing", len(buf))
    if have > expected:
        raise FormatError(f"{have - expected} trailing bytes after dataset payload", r.pos + expected)
    if config is None:
        config = ChannelConfig(n_antennas=n, n_subcarriers=m, rng_seed=seed)
    elif config.shape != (n, m):
        raise FormatError(f"file holds N={n} M={m}, config expects {config.shape}", 8)
    planes = np.frombuffer(r.take(expected), dtype="<f4").reshape(k, m, n, 2)
    samples = (planes[..., 0] + 1j * planes[..., 1]).astype(np.complex64).transpose(0, 2, 1)
    return Dataset(config, samples, split, seed)


def read_dataset(path, config: ChannelConfig | None = None, split="train") -> Dataset:
    with open(path, "rb") as fh:
        return parse_dataset(fh.read(), config, split)


def checkpoint_bytes(graph: ModelGraph) -> bytes:
    cfg = graph.config
    tag = cfg.mode.encode("ascii")
    parts = [
        _CKPT_DIMS.pack(CHECKPOINT_MAGIC, VERSION, cfg.n_antennas, cfg.n_subcarriers, cfg.pilot_len),
        struct.pack("<B", len(tag)) + tag,
        _CKPT_ARCH.pack(cfg.conv_width, int(cfg.attention), int(cfg.linear_only),
                        graph.mask.updates, float(graph.mask.target)),
    ]
    sections = dict(graph.named_params())
    sections = {name: t.data for name, t in sections.items()}
    sections["mask"] = graph.mask.mask
    parts.append(struct.pack("<I", len(sections)))
    for name, arr in sections.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def write_checkpoint(graph: ModelGraph, path):
    atomic_write(path, checkpoint_bytes(graph))


def parse_checkpoint(buf: bytes) -> ModelGraph:
    if len(buf) < _CKPT_DIMS.size + 4:
        raise FormatError(f"truncated checkpoint: {_CKPT_DIMS.size + 4 - len(buf)} bytes missing", len(buf))
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    r = _Reader(body, "checkpoint")
    magic, version, n, m, l = r.unpack(_CKPT_DIMS)
    _check_magic(magic, CHECKPOINT_MAGIC, version)
    if zlib.crc32(body) != crc:
        raise IntegrityError(f"checkpoint CRC mismatch (stored {crc:#010x}, computed {zlib.crc32(body):#010x})",
                             len(body))
    mode = r.take(r.scalar("B")).decode("ascii")
    width, attention, linear_only, updates, target = r.unpack(_CKPT_ARCH)
    try:
        config = ModelConfig(n, m, l, mode=mode, attention=bool(attention), conv_width=width,
                             linear_only=bool(linear_only))
    except UsageError as exc:
        raise FormatError(f"checkpoint header describes an invalid model: {exc}", 0) from exc
    graph = build_model(config)
    named = graph.named_params()
    seen = set()
    for _ in range(r.scalar("I")):
        offset = r.pos
        name = r.take(r.scalar("H")).decode("utf-8")
        ndim = r.scalar("I")
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        count = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
        if name == "mask":
            if shape != (l, m):
                raise FormatError(f"mask section has shape {shape}, expected {(l, m)}", offset)
            graph.mask = PruneMask(data.astype(np.uint8), target, updates)
        elif name in named:
            tensor = named[name]
            if tuple(shape) != tensor.shape:
                raise FormatError(f"section {name!r} has shape {shape}, expected {tensor.shape}", offset)
            tensor.data = data.astype(tensor.dtype)
        else:
            raise FormatError(f"unknown section {name!r}", offset)
        seen.add(name)
    missing = (set(named) | {"mask"}) - seen
    if missing:
        raise FormatError(f"checkpoint lacks sections {sorted(missing)}", r.pos)
    if r.pos != len(body):
        raise FormatError(f"{len(body) - r.pos} unexpected bytes before CRC", r.pos)
    return graph


def read_checkpoint(path) -> ModelGraph:
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())


def mask_to_pgm(mask) -> bytes:
    """Binary P5 graymap: pilot = 255 (white), freed = 0 (black)."""
    m = np.asarray(mask.mask if isinstance(mask, PruneMask) else mask, dtype=np.uint8)
    return f"P5\n{m.shape[1]} {m.shape[0]}\n255\n".encode("ascii") + (m * 255).astype(np.uint8).tobytes()


def pgm_to_mask(buf: bytes) -> np.ndarray:
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header", pos)
        tokens.append(buf[start:pos])
    if tokens[0] != b"P5":
        raise FormatError(f"not a binary PGM (magic {tokens[0]!r})", 0)
    w, h = int(tokens[1]), int(tokens[2])
    pixels = np.frombuffer(buf[pos + 1:pos + 1 + w * h], dtype=np.uint8)
    if pixels.size != w * h:
        raise FormatError(f"truncated PGM raster: {w * h - pixels.size} bytes missing", len(buf))
    return (pixels.reshape(h, w) > 127).astype(np.uint8)


def write_mask_csv(mask, path):
    m = np.asarray(mask.mask if isinstance(mask, PruneMask) else mask, dtype=np.uint8)
    text = "".join(",".join(str(int(v)) for v in row) + "\n" for row in m)
    atomic_write(path, text.encode("ascii"))


def read_mask_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [[int(v) for v in row] for row in csv.reader(fh) if row]
    if not rows or len({len(r) for r in rows}) != 1:
        raise FormatError(f"mask CSV {path} is empty or ragged")
    return np.array(rows, dtype=np.uint8)


def export_mask(mask, path_csv, path_image):
    write_mask_csv(mask, path_csv)
    atomic_write(path_image, mask_to_pgm(mask))
