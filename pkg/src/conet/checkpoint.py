"""Binary model checkpoints with a bit-exact round trip.

Layout (all integers little-endian):

* magic ``CONETCKPT`` (9 bytes), format version ``u32`` (currently 1)
* architecture tag: ``u16`` length + utf-8 bytes
* flags ``u32``: bit 0 set when the mlp++ ablation trains two separate
  user embeddings instead of one shared matrix
* config block: embedding dim ``u32``, hidden layer count ``u32``,
  widths ``u32`` each, lasso lambda ``f64``
* tensor count ``u32``, then every tensor in alphabetical name order:
  name (``u16`` length + utf-8), rows ``u64``, cols ``u64``, row-major
  ``f64`` data

Vectors (bias, output weight and stitch-scalar tensors, names starting
with ``b_``, ``h`` or ``alpha_``) are stored as a single row and restored
to 1-D on load.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DataError
from .models import DomainSizes, DualTowerModel, MlpModel, ModelConfig

__all__ = ["save_checkpoint", "load_checkpoint", "MAGIC", "FORMAT_VERSION"]

MAGIC = b"CONETCKPT"
FORMAT_VERSION = 1
_FLAG_UNSHARED_EMBEDDING = 1


def _is_vector_name(name: str) -> bool:
    return name == "h" or name.startswith(("b_", "h_", "alpha_"))


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def save_checkpoint(model, path) -> None:
    """Serialize config and parameters; reload is bit-exact."""
    cfg = model.config
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", FORMAT_VERSION)
    out += _pack_str(cfg.architecture)
    flags = 0
    if not cfg.share_user_embedding:
        flags |= _FLAG_UNSHARED_EMBEDDING
    out += struct.pack("<I", flags)
    out += struct.pack("<I", cfg.embedding_dim)
    out += struct.pack("<I", len(cfg.hidden_widths))
    for w in cfg.hidden_widths:
        out += struct.pack("<I", w)
    out += struct.pack("<d", cfg.lasso_lambda)
    names = sorted(model.params)
    out += struct.pack("<I", len(names))
    for name in names:
        arr = model.params[name]
        mat = arr.reshape(1, -1) if arr.ndim == 1 else arr
        out += _pack_str(name)
        out += struct.pack("<QQ", mat.shape[0], mat.shape[1])
        out += np.ascontiguousarray(mat, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(out))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise DataError("checkpoint file is truncated")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def text(self) -> str:
        return self.take(self.u16()).decode("utf-8")


def load_checkpoint(path):
    """Rebuild the model saved by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    if reader.take(len(MAGIC)) != MAGIC:
        raise DataError(f"{path} is not a model checkpoint (bad magic)")
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint format version {version}")
    architecture = reader.text()
    flags = reader.u32()
    embedding_dim = reader.u32()
    num_widths = reader.u32()
    widths = tuple(reader.u32() for _ in range(num_widths))
    lam = reader.f64()
    config = ModelConfig(
        architecture=architecture,
        embedding_dim=embedding_dim,
        hidden_widths=widths,
        lasso_lambda=lam,
        share_user_embedding=not (flags & _FLAG_UNSHARED_EMBEDDING),
    )
    params = {}
    for _ in range(reader.u32()):
        name = reader.text()
        rows = reader.u64()
        cols = reader.u64()
        data = np.frombuffer(reader.take(rows * cols * 8), dtype="<f8").astype(np.float64)
        arr = data.reshape(rows, cols)
        params[name] = arr.ravel().copy() if _is_vector_name(name) else arr.copy()
    if reader.pos != len(reader.buf):
        raise DataError("checkpoint has trailing bytes")

    if architecture == "mlp":
        sizes = DomainSizes(
            num_users=params["P"].shape[0],
            num_items_target=params["Q"].shape[0],
        )
        return MlpModel(config, sizes, params)
    sizes = DomainSizes(
        num_users=params["P"].shape[0],
        num_items_target=params["Q_t"].shape[0],
        num_items_source=params["Q_s"].shape[0],
    )
    return DualTowerModel(config, sizes, params)
