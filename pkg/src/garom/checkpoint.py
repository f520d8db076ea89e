"""Binary tensor container used for model checkpoints and baseline exports.

Layout (little-endian)::

    magic          8 bytes   b"GAROMCK1"
    version        u32       FORMAT_VERSION
    config block   one entry per TrainConfig field, in declaration order:
                   eta, lambda_k, gamma, learning_rate, epochs, batch_size,
                   noise_dim, latent_dim, seed, beta1, beta2, adam_epsilon
                   (integer fields as u64, real fields as f64)
    k              f64       equilibrium control value
    tensor count   u32
    per tensor     name length u16, UTF-8 name, rank u8, rank x u64 dims,
                   then prod(dims) f64 values in row-major order

Model checkpoints store every layer as ``<net>.<layer>.weight`` (in x out)
and ``<net>.<layer>.bias``, the Adam moments and step counters as
``adam.<net>.m`` / ``.v`` / ``.t``, and the per-epoch history as
``history`` with columns (epoch, L_D, L_G, k, M).
"""

import struct
from dataclasses import fields

import numpy as np

from .model import EpochRecord, TrainConfig, build_model

MAGIC = b"GAROMCK1"
FORMAT_VERSION = 1


class CheckpointFormatError(ValueError):
    pass


def _config_layout():
    return [(f.name, "<Q" if f.type in (int, "int") else "<d") for f in fields(TrainConfig)]


def write_container(path, tensors, config=None, k=0.0):
    """Write ``tensors`` (name -> array) with a config block; ``config`` defaults to TrainConfig()."""
    config = config or TrainConfig()
    out = bytearray(MAGIC)
    out += struct.pack("<I", FORMAT_VERSION)
    for name, fmt in _config_layout():
        value = getattr(config, name)
        out += struct.pack(fmt, int(value) if fmt == "<Q" else float(value))
    out += struct.pack("<d", float(k))
    out += struct.pack("<I", len(tensors))
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        out += arr.tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(bytes(out))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise CheckpointFormatError(f"truncated file while reading {what}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def read_container(path):
    """Return ``(config, k, tensors)`` from a container file."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic, not a GAROMCK1 container")
    (version,) = r.unpack("<I", "version")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"unsupported format version {version}")
    values = {}
    for name, fmt in _config_layout():
        (values[name],) = r.unpack(fmt, f"config field {name}")
    try:
        config = TrainConfig(**values)
    except ValueError as exc:
        raise CheckpointFormatError(f"invalid config block: {exc}") from exc
    (k,) = r.unpack("<d", "k")
    (count,) = r.unpack("<I", "tensor count")
    tensors = {}
    for i in range(count):
        (name_len,) = r.unpack("<H", f"tensor {i} name length")
        name = r.take(name_len, f"tensor {i} name").decode("utf-8")
        (rank,) = r.unpack("<B", f"rank of {name}")
        dims = r.unpack(f"<{rank}Q", f"dims of {name}")
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = r.take(8 * size, f"payload of {name}")
        tensors[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)
    if r.pos != len(r.buf):
        raise CheckpointFormatError(f"{len(r.buf) - r.pos} trailing bytes after last tensor")
    return config, k, tensors


def model_tensors(model):
    tensors = {}
    for prefix, net in model.named_nets():
        for i, layer in enumerate(net.layers):
            tensors[f"{prefix}.{i}.weight"] = layer.weight
            tensors[f"{prefix}.{i}.bias"] = layer.bias
    for group, states in (("generator", model.gen_adam), ("discriminator", model.disc_adam)):
        for name, st in states.items():
            tensors[f"adam.{group}.{name}.m"] = st.first_moment
            tensors[f"adam.{group}.{name}.v"] = st.second_moment
            tensors[f"adam.{group}.{name}.t"] = np.array(float(st.step_count))
    tensors["history"] = np.array([tuple(r) for r in model.history], dtype=np.float64).reshape(-1, 5)
    return tensors


def save_checkpoint(model, path):
    write_container(path, model_tensors(model), model.config, model.control.k)


def load_checkpoint(path):
    config, k, tensors = read_container(path)
    try:
        n_c = tensors["generator.conditioning.0.weight"].shape[0]
        main_layers = sum(1 for t in tensors if t.startswith("generator.main.") and t.endswith(".weight"))
        n_u = tensors[f"generator.main.{main_layers - 1}.weight"].shape[1]
    except (KeyError, IndexError) as exc:
        raise CheckpointFormatError(f"missing generator tensors: {exc}") from exc
    model = build_model(n_u, n_c, config)
    expected = model_tensors(model)
    if set(expected) - {"history"} != set(tensors) - {"history"}:
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        raise CheckpointFormatError(f"tensor set mismatch; missing {missing}, unexpected {extra}")
    for name, target in expected.items():
        if name == "history" or name.endswith(".t"):
            continue
        src = tensors[name]
        if src.shape != target.shape:
            raise CheckpointFormatError(
                f"{name}: stored shape {src.shape} does not match architecture {target.shape}"
            )
        target[...] = src
    for group, states in (("generator", model.gen_adam), ("discriminator", model.disc_adam)):
        for name, st in states.items():
            st.step_count = int(tensors[f"adam.{group}.{name}.t"].item())
    hist = tensors.get("history", np.zeros((0, 5)))
    if hist.ndim != 2 or hist.shape[1] != 5:
        raise CheckpointFormatError(f"history tensor has shape {hist.shape}, expected (E, 5)")
    model.history = [EpochRecord(int(row[0]), *map(float, row[1:])) for row in hist]
    model.control.k = k
    return model
