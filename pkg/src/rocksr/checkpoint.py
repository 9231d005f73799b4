"""Binary weight files.

Layout, all integers little-endian:

    magic   4 bytes  b"MSR1"
    version u32      currently 1
    clen    u32      length of the config JSON in bytes
    config  clen bytes of UTF-8 JSON
    then zero or more tensor records until end of file:
        nlen  u32      length of the tensor name in bytes
        name  nlen bytes of UTF-8
        rank  u32
        dims  rank * u64
        data  prod(dims) * 4 bytes of raw float32

Tensors are stored and returned as float32. The config JSON is dumped
with sorted keys, so save(load(save(x))) is byte-identical.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MSR1"
VERSION = 1
_MAX_RANK = 32


class CheckpointError(Exception):
    """Base for everything raised by this module."""


class CheckpointFormatError(CheckpointError):
    """The bytes are not a checkpoint this code understands."""


class CheckpointTruncatedError(CheckpointError):
    """The file ends in the middle of a record."""


def save_checkpoint(path, config: dict, tensors: dict) -> None:
    """Write config and named float32 arrays to ``path``.

    Records are written in dict iteration order; names must be unique
    (dicts guarantee that) and non-empty.
    """
    path = Path(path)
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob]
    for name, array in tensors.items():
        if not name:
            raise ValueError("tensor names must be non-empty")
        data = np.ascontiguousarray(array, dtype="<f4")
        if data.ndim == 0:
            data = data.reshape(1)
        nbytes = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nbytes)))
        parts.append(nbytes)
        parts.append(struct.pack("<I", data.ndim))
        parts.append(struct.pack(f"<{data.ndim}Q", *data.shape))
        parts.append(data.tobytes())
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)  # atomic on the same filesystem: no torn files on crash


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointTruncatedError(
                f"file ends inside {what}: needed {n} bytes at offset {self.pos}, "
                f"have {len(self.buf) - self.pos}"
            )
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    @property
    def at_eof(self) -> bool:
        return self.pos == len(self.buf)


def load_checkpoint(path):
    """Read a checkpoint back as (config dict, name -> float32 array).

    Raises CheckpointFormatError for foreign or corrupt bytes and
    CheckpointTruncatedError when the file stops mid-record.
    """
    buf = Path(path).read_bytes()
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported version {version}")
    clen = r.u32("config length")
    cbytes = r.take(clen, "config JSON")
    try:
        config = json.loads(cbytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"config is not valid JSON: {exc}") from exc
    tensors: dict = {}
    while not r.at_eof:
        nlen = r.u32("tensor name length")
        try:
            name = r.take(nlen, "tensor name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointFormatError(f"tensor name is not UTF-8: {exc}") from exc
        if name in tensors:
            raise CheckpointFormatError(f"duplicate tensor '{name}'")
        rank = r.u32(f"rank of '{name}'")
        if rank > _MAX_RANK:
            raise CheckpointFormatError(f"tensor '{name}' claims rank {rank}")
        dims = struct.unpack(f"<{rank}Q", r.take(8 * rank, f"dims of '{name}'"))
        count = 1
        for d in dims:
            count *= d
        raw = r.take(4 * count, f"data of '{name}'")
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
    return config, tensors


# -- network files -----------------------------------------------------------

_KIND_KEY = "kind"


def save_network(path, kind: str, config_dict: dict, network) -> None:
    save_checkpoint(path, {_KIND_KEY: kind, "config": config_dict}, network.state_dict())


def load_network_state(path, kind: str):
    """Return (config_dict, tensors) after checking the file's kind tag."""
    config, tensors = load_checkpoint(path)
    got = config.get(_KIND_KEY)
    if got != kind:
        raise CheckpointFormatError(f"expected a '{kind}' checkpoint, found '{got}'")
    inner = config.get("config")
    if not isinstance(inner, dict):
        raise CheckpointFormatError("checkpoint config block is missing")
    return inner, tensors


def save_generator(path, generator) -> None:
    from dataclasses import asdict

    save_network(path, "generator", asdict(generator.config), generator)


def load_generator(path):
    from .models import Generator, GeneratorConfig

    inner, tensors = load_network_state(path, "generator")
    try:
        config = GeneratorConfig(**inner)
    except TypeError as exc:
        raise CheckpointFormatError(f"bad generator config: {exc}") from exc
    net = Generator(config, seed=0)
    net.load_state_dict(tensors)
    return net


def save_discriminator(path, disc) -> None:
    from dataclasses import asdict

    save_network(path, "discriminator", asdict(disc.config), disc)


def load_discriminator(path):
    from .models import Discriminator, DiscriminatorConfig

    inner, tensors = load_network_state(path, "discriminator")
    try:
        config = DiscriminatorConfig(**inner)
    except TypeError as exc:
        raise CheckpointFormatError(f"bad discriminator config: {exc}") from exc
    net = Discriminator(config, seed=0)
    net.load_state_dict(tensors)
    return net


def save_feature_network(path, net) -> None:
    from dataclasses import asdict

    save_network(path, "features", asdict(net.config), net)


def load_feature_network(path):
    from .models import FeatureConfig, FeatureNetwork

    inner, tensors = load_network_state(path, "features")
    for key in ("block_convs", "block_filters"):
        if key in inner and isinstance(inner[key], list):
            inner[key] = tuple(inner[key])  # JSON has no tuples
    try:
        config = FeatureConfig(**inner)
    except TypeError as exc:
        raise CheckpointFormatError(f"bad feature config: {exc}") from exc
    net = FeatureNetwork(config, seed=0)
    net.load_state_dict(tensors)
    return net
