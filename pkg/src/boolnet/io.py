"""Serialization and dataset ingestion.

Model container ("BOOLNET1"): a single little-endian binary file holding
the serialized ModelConfig, typed per-layer parameter entries, and a
trailing CRC32 over everything after the magic.  Bit-packed payloads use
the bittensor word layout (LSB = channel 0), so a saved model round-trips
bit-exactly.  Checkpoints reuse the same container with an extra section
for latent weights, BN statistics, optimizer moments and the schedule
position.

Datasets: MNIST IDX (big-endian magics 0x00000803 / 0x00000801) and
CIFAR-10 binary batches (3073-byte records).  Loaders normalize with
per-channel mean/std computed on the training split and are
deterministic under a fixed seed.

Config files: UTF-8 `key = value` lines, `#` comments, comma-separated
stage lists (parsed by architecture.parse_config).  Recognized keys:
variant, k, stage_channels, stage_depths, shortcut_ops, downsample_mode,
downsample_conv_bits, use_local_adaptive_shift, input_resolution,
class_count, in_channels.
"""

from __future__ import annotations

import io as _stdio
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .architecture import ModelConfig, build, parse_config
from .bittensor import BitTensor
from .errors import (
    BadMagic,
    ModelFileError,
    ChecksumMismatch,
    FormatError,
    TruncatedFile,
    VersionUnsupported,
)

MAGIC = b"BOOLNET1"
VERSION = 1
FLAG_CHECKPOINT = 1

_TAG_BITS = b"B"  # BitTensor payload
_TAG_F64 = b"F"
_TAG_F32 = b"G"
_TAG_I64 = b"I"
_TAG_SCALAR = b"f"
_TAG_SPEC = b"S"  # MultiSliceSpec thresholds
_TAG_BN = b"N"  # BnParams (gamma, beta, mu, var, eps)


class _Writer:
    def __init__(self):
        self.buf = _stdio.BytesIO()

    def u8(self, v):
        self.buf.write(struct.pack("<B", v))

    def u16(self, v):
        self.buf.write(struct.pack("<H", v))

    def u32(self, v):
        self.buf.write(struct.pack("<I", v))

    def u64(self, v):
        self.buf.write(struct.pack("<Q", v))

    def f64(self, v):
        self.buf.write(struct.pack("<d", v))

    def raw(self, b):
        self.buf.write(b)

    def string(self, s):
        b = s.encode("utf-8")
        self.u16(len(b))
        self.raw(b)

    def array(self, tag, a):
        self.raw(tag)
        self.u8(a.ndim)
        for d in a.shape:
            self.u32(d)
        self.raw(np.ascontiguousarray(a).astype(a.dtype.newbyteorder("<")).tobytes())


class _Reader:
    def __init__(self, data: bytes, offset: int = 0):
        self.data = data
        self.pos = offset

    def take(self, n):
        if self.pos + n > len(self.data):
            raise TruncatedFile(
                f"need {n} bytes at offset {self.pos}, file has {len(self.data)}"
            )
        b = self.data[self.pos : self.pos + n]
        self.pos += n
        return b

    def u8(self):
        return struct.unpack("<B", self.take(1))[0]

    def u16(self):
        return struct.unpack("<H", self.take(2))[0]

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def u64(self):
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self):
        return struct.unpack("<d", self.take(8))[0]

    def string(self):
        return self.take(self.u16()).decode("utf-8")

    def array(self, dtype):
        ndim = self.u8()
        if ndim > 8:
            raise ModelFileError(f"implausible ndim {ndim} at offset {self.pos}")
        shape = tuple(self.u32() for _ in range(ndim))
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        itemsize = np.dtype(dtype).itemsize
        raw = self.take(count * itemsize)
        return np.frombuffer(raw, dtype=np.dtype(dtype).newbyteorder("<")).reshape(
            shape
        ).astype(dtype)


def _config_text(cfg: ModelConfig) -> str:
    return (
        f"variant = {cfg.variant}\n"
        f"k = {cfg.k}\n"
        f"stage_channels = {', '.join(map(str, cfg.stage_channels))}\n"
        f"stage_depths = {', '.join(map(str, cfg.stage_depths))}\n"
        f"shortcut_ops = {', '.join(cfg.shortcut_ops)}\n"
        f"downsample_mode = {cfg.downsample_mode}\n"
        f"downsample_conv_bits = {cfg.downsample_conv_bits}\n"
        f"use_local_adaptive_shift = {str(cfg.use_local_adaptive_shift).lower()}\n"
        f"input_resolution = {cfg.input_resolution}\n"
        f"class_count = {cfg.class_count}\n"
        f"in_channels = {cfg.in_channels}\n"
    )


def _write_entry(w: _Writer, key: str, value):
    from .quantization import BnParams, MultiSliceSpec

    w.string(key)
    if isinstance(value, BitTensor):
        w.raw(_TAG_BITS)
        for d in value.shape:
            w.u32(d)
        for d in value.words.shape:
            w.u32(d)
        w.raw(value.words.astype("<u8").tobytes())
    elif isinstance(value, MultiSliceSpec):
        w.raw(_TAG_SPEC)
        w.array(_TAG_F64, np.asarray(value.thresholds, dtype=np.float64))
    elif isinstance(value, BnParams):
        w.raw(_TAG_BN)
        for a in (value.gamma, value.beta, value.mu, value.var):
            w.array(_TAG_F64, np.asarray(a, dtype=np.float64))
        w.f64(value.eps)
    elif isinstance(value, float):
        w.raw(_TAG_SCALAR)
        w.f64(value)
    elif isinstance(value, np.ndarray) and value.dtype == np.float64:
        w.array(_TAG_F64, value)
    elif isinstance(value, np.ndarray) and value.dtype == np.float32:
        w.array(_TAG_F32, value)
    elif isinstance(value, np.ndarray) and value.dtype == np.int64:
        w.array(_TAG_I64, value)
    else:
        raise TypeError(f"cannot serialize {key!r}: {type(value)}")


def _read_entry(r: _Reader):
    from .quantization import BnParams, MultiSliceSpec

    key = r.string()
    tag = r.take(1)
    if tag == _TAG_BITS:
        shape = tuple(r.u32() for _ in range(4))
        wshape = tuple(r.u32() for _ in range(4))
        count = int(np.prod(wshape, dtype=np.int64))
        words = np.frombuffer(r.take(count * 8), dtype="<u8").reshape(wshape)
        return key, BitTensor(shape, words.astype(np.uint64))
    if tag == _TAG_SPEC:
        inner = r.take(1)
        if inner != _TAG_F64:
            raise ModelFileError(f"bad spec payload at offset {r.pos}")
        t = r.array(np.float64)
        return key, MultiSliceSpec(k=len(t), thresholds=t)
    if tag == _TAG_BN:
        arrays = []
        for _ in range(4):
            inner = r.take(1)
            if inner != _TAG_F64:
                raise ModelFileError(f"bad bn payload at offset {r.pos}")
            arrays.append(r.array(np.float64))
        eps = r.f64()
        return key, BnParams(*arrays, eps=eps)
    if tag == _TAG_SCALAR:
        return key, r.f64()
    if tag == _TAG_F64:
        return key, r.array(np.float64)
    if tag == _TAG_F32:
        return key, r.array(np.float32)
    if tag == _TAG_I64:
        return key, r.array(np.int64)
    raise ModelFileError(f"unknown type tag {tag!r} at offset {r.pos - 1}")


def _serialize(cfg: ModelConfig, sections: dict, flags: int) -> bytes:
    w = _Writer()
    w.raw(MAGIC)
    w.u16(VERSION)
    w.u16(flags)
    cfg_bytes = _config_text(cfg).encode("utf-8")
    w.u32(len(cfg_bytes))
    w.raw(cfg_bytes)
    w.u32(len(sections))
    for name, entries in sections.items():
        w.string(name)
        w.u16(len(entries))
        for key, value in entries.items():
            _write_entry(w, key, value)
    payload = w.buf.getvalue()
    crc = zlib.crc32(payload[len(MAGIC):])
    return payload + struct.pack("<I", crc)


def _deserialize(data: bytes):
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise BadMagic("not a BOOLNET1 file")
    if len(data) < len(MAGIC) + 4:
        raise TruncatedFile("missing checksum trailer")
    stored_crc = struct.unpack("<I", data[-4:])[0]
    actual = zlib.crc32(data[len(MAGIC):-4])
    if stored_crc != actual:
        raise ChecksumMismatch(
            f"stored {stored_crc:#010x}, computed {actual:#010x}"
        )
    r = _Reader(data, len(MAGIC))
    version = r.u16()
    if version != VERSION:
        raise VersionUnsupported(f"file version {version}, supported {VERSION}")
    flags = r.u16()
    cfg_len = r.u32()
    cfg = parse_config(r.take(cfg_len).decode("utf-8"))
    n_sections = r.u32()
    if n_sections > 100_000:
        raise ModelFileError(f"implausible section count {n_sections}")
    sections = {}
    for _ in range(n_sections):
        name = r.string()
        n_entries = r.u16()
        entries = {}
        for _ in range(n_entries):
            key, value = _read_entry(r)
            entries[key] = value
        sections[name] = entries
    if r.pos != len(data) - 4:
        raise ModelFileError(f"{len(data) - 4 - r.pos} trailing bytes before CRC")
    return cfg, sections, flags


# -- model save/load ---------------------------------------------------------


def save_model(model, path) -> None:
    """Write an InferenceModel to a BOOLNET1 container."""
    sections = {name: dict(entries) for name, entries in model.params.items()}
    data = _serialize(model.graph.config, sections, flags=0)
    with open(path, "wb") as f:
        f.write(data)


def load_model(path):
    """Load an InferenceModel; the graph is rebuilt from the config."""
    from .inference import InferenceModel

    with open(path, "rb") as f:
        data = f.read()
    cfg, sections, flags = _deserialize(data)
    if flags & FLAG_CHECKPOINT:
        raise ModelFileError("file is a checkpoint, not an exported model")
    return InferenceModel(graph=build(cfg), params=sections)


# -- checkpoint save/load ----------------------------------------------------


def save_checkpoint(state, path) -> None:
    """Serialize a TrainState (latent weights, BN stats, moments)."""
    import torch

    entries = {}
    for key, tensor in state.model.state_dict().items():
        a = tensor.detach().cpu().numpy()
        if a.dtype == np.float32 or a.dtype == np.float64:
            entries[f"model/{key}"] = a
        else:
            entries[f"model/{key}"] = a.astype(np.int64)
    opt_state = state.optimizer.state_dict()["state"]
    for idx, slots in opt_state.items():
        for slot, tensor in slots.items():
            val = tensor
            if isinstance(val, torch.Tensor):
                val = val.detach().cpu().numpy()
                if val.ndim == 0:
                    val = float(val)
            if isinstance(val, (int, float)):
                entries[f"opt/{idx}/{slot}"] = float(val)
            else:
                entries[f"opt/{idx}/{slot}"] = np.asarray(val)
    entries["meta/samples_seen"] = float(state.samples_seen)
    entries["meta/seed"] = float(state.seed)
    entries["meta/sigma"] = float(state.schedule.sigma)
    entries["meta/period_samples"] = float(state.schedule.period_samples)
    entries["meta/lambda_min"] = float(state.schedule.lambda_min)
    data = _serialize(state.graph.config, {"checkpoint": entries},
                      flags=FLAG_CHECKPOINT)
    with open(path, "wb") as f:
        f.write(data)


def load_checkpoint(path):
    """Rebuild a TrainState from a checkpoint container."""
    import torch

    from .traingraph import ProgressiveSchedule, TrainState

    with open(path, "rb") as f:
        data = f.read()
    cfg, sections, flags = _deserialize(data)
    if not flags & FLAG_CHECKPOINT:
        raise ModelFileError("file is an exported model, not a checkpoint")
    entries = sections.get("checkpoint", {})
    schedule = ProgressiveSchedule(
        sigma=entries["meta/sigma"],
        period_samples=int(entries["meta/period_samples"]),
        lambda_min=entries["meta/lambda_min"],
    )
    state = TrainState(build(cfg), schedule=schedule,
                       seed=int(entries["meta/seed"]))
    model_sd = {}
    for key, value in entries.items():
        if key.startswith("model/"):
            ref = state.model.state_dict()[key[len("model/"):]]
            t = torch.from_numpy(np.asarray(value))
            model_sd[key[len("model/"):]] = t.to(ref.dtype)
    state.model.load_state_dict(model_sd)
    opt_sd = state.optimizer.state_dict()
    opt_entries = {}
    for key, value in entries.items():
        if key.startswith("opt/"):
            _, idx, slot = key.split("/", 2)
            opt_entries.setdefault(int(idx), {})[slot] = value
    for idx, slots in opt_entries.items():
        restored = {}
        for slot, value in slots.items():
            if isinstance(value, float) and slot == "step":
                restored[slot] = torch.tensor(value)
            elif isinstance(value, float):
                restored[slot] = value
            else:
                restored[slot] = torch.from_numpy(np.asarray(value))
        opt_sd["state"][idx] = restored
    state.optimizer.load_state_dict(opt_sd)
    state.samples_seen = int(entries["meta/samples_seen"])
    return state


# -- datasets ----------------------------------------------------------------


@dataclass
class Dataset:
    train_images: np.ndarray  # float32 NCHW, normalized
    train_labels: np.ndarray  # int64
    test_images: np.ndarray
    test_labels: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    augment: str  # "none" | "flip_crop"


def _read_idx(path, expect_magic):
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 4:
        raise FormatError(f"{path}: truncated header at offset 0")
    magic = struct.unpack(">I", data[:4])[0]
    if magic != expect_magic:
        raise FormatError(
            f"{path}: bad IDX magic {magic:#010x} at offset 0, "
            f"expected {expect_magic:#010x}"
        )
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(data) < header:
        raise FormatError(f"{path}: truncated dimension list at offset 4")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    count = int(np.prod(dims, dtype=np.int64))
    if len(data) - header < count:
        raise FormatError(
            f"{path}: payload short by {count - (len(data) - header)} bytes "
            f"at offset {header}"
        )
    return np.frombuffer(data, dtype=np.uint8, count=count,
                         offset=header).reshape(dims)


def load_mnist(directory, pad_to=32):
    """MNIST IDX files; images optionally edge-padded to pad_to square."""
    import os

    def find(*names):
        for n in names:
            p = os.path.join(directory, n)
            if os.path.exists(p):
                return p
        raise FileNotFoundError(
            f"none of {names} found in {directory}"
        )

    tri = _read_idx(find("train-images-idx3-ubyte", "train-images.idx3-ubyte"),
                    0x00000803)
    trl = _read_idx(find("train-labels-idx1-ubyte", "train-labels.idx1-ubyte"),
                    0x00000801)
    tei = _read_idx(find("t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"),
                    0x00000803)
    tel = _read_idx(find("t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"),
                    0x00000801)
    train = tri.astype(np.float32)[:, None] / 255.0
    test = tei.astype(np.float32)[:, None] / 255.0
    mean = train.mean(axis=(0, 2, 3))
    std = train.std(axis=(0, 2, 3)) + 1e-7
    train = (train - mean[:, None, None]) / std[:, None, None]
    test = (test - mean[:, None, None]) / std[:, None, None]
    if pad_to and pad_to > train.shape[-1]:
        p = (pad_to - train.shape[-1]) // 2
        pads = ((0, 0), (0, 0), (p, p), (p, p))
        train = np.pad(train, pads)
        test = np.pad(test, pads)
    return Dataset(train, trl.astype(np.int64), test, tel.astype(np.int64),
                   mean, std, augment="none")


def load_cifar10(directory):
    """CIFAR-10 binary batches (3073-byte records, label byte first)."""
    import os

    def read_bin(path):
        with open(path, "rb") as f:
            data = f.read()
        if len(data) % 3073:
            raise FormatError(
                f"{path}: size {len(data)} not a multiple of 3073 "
                f"(first partial record at offset {len(data) - len(data) % 3073})"
            )
        rec = np.frombuffer(data, dtype=np.uint8).reshape(-1, 3073)
        labels = rec[:, 0].astype(np.int64)
        if labels.max(initial=0) > 9:
            bad = int(np.argmax(labels > 9))
            raise FormatError(
                f"{path}: label {labels[bad]} out of range at offset {bad * 3073}"
            )
        images = rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
        return images, labels

    train_parts = []
    for i in range(1, 6):
        p = os.path.join(directory, f"data_batch_{i}.bin")
        if os.path.exists(p):
            train_parts.append(read_bin(p))
    if not train_parts:
        raise FileNotFoundError(f"no data_batch_*.bin in {directory}")
    test_path = os.path.join(directory, "test_batch.bin")
    if not os.path.exists(test_path):
        raise FileNotFoundError(test_path)
    train = np.concatenate([im for im, _ in train_parts])
    trl = np.concatenate([lb for _, lb in train_parts])
    test, tel = read_bin(test_path)
    mean = train.mean(axis=(0, 2, 3))
    std = train.std(axis=(0, 2, 3)) + 1e-7
    train = (train - mean[:, None, None]) / std[:, None, None]
    test = (test - mean[:, None, None]) / std[:, None, None]
    return Dataset(train, trl, test, tel, mean, std, augment="flip_crop")


def load_dataset(name, directory):
    if name == "mnist-idx":
        return load_mnist(directory)
    if name == "cifar10-bin":
        return load_cifar10(directory)
    raise ValueError(f"unknown dataset {name!r}")


def iterate_batches(images, labels, batch_size, seed, augment="none",
                    epochs=1):
    """Deterministic shuffled batches; optional flip + pad-4-crop."""
    rng = np.random.default_rng(seed)
    n = len(images)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            x = images[idx]
            if augment == "flip_crop":
                flip = rng.random(len(idx)) < 0.5
                x = x.copy()
                x[flip] = x[flip, :, :, ::-1]
                padded = np.pad(x, ((0, 0), (0, 0), (4, 4), (4, 4)))
                h = rng.integers(0, 9, len(idx))
                w = rng.integers(0, 9, len(idx))
                x = np.stack(
                    [padded[i, :, h[i] : h[i] + x.shape[2],
                            w[i] : w[i] + x.shape[3]]
                     for i in range(len(idx))]
                )
            yield x, labels[idx]
