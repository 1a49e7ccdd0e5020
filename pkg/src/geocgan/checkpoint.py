"""Binary checkpoint format.

Layout (little-endian)::

    b"GGEN"  u16 version  u16 record_count
    record*  = u8 kind  u16 name_len  name  u16 n_dims  u32 dims[n_dims]
               u8 activation  u64 payload_len  payload  u32 crc32

``crc32`` covers every byte of the record before it.  Kind 0 carries UTF-8
JSON metadata as its payload; kinds 1-3 carry float64 vectors (generator,
discriminator and Adam state respectively).
"""
import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import FormatVersionError, IntegrityError
from .models import ACTIVATIONS, DiscriminatorNet, GeneratorNet

MAGIC = b"GGEN"
VERSION = 1
KIND_META, KIND_GEN, KIND_DISC, KIND_ADAM = 0, 1, 2, 3
_ACT_CODES = {name: i for i, name in enumerate(sorted(ACTIVATIONS))}
_ACT_NAMES = {i: name for name, i in _ACT_CODES.items()}


@dataclass
class Record:
    kind: int
    name: str
    dims: tuple
    activation: str
    payload: bytes


def _pack_record(rec):
    name = rec.name.encode("utf-8")
    head = struct.pack("<BH", rec.kind, len(name)) + name
    head += struct.pack("<H", len(rec.dims)) + struct.pack(f"<{len(rec.dims)}I", *rec.dims)
    head += struct.pack("<BQ", _ACT_CODES.get(rec.activation, 255), len(rec.payload))
    body = head + rec.payload
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def _vector_record(kind, name, vec, dims=(), activation=""):
    data = np.ascontiguousarray(vec, dtype="<f8").tobytes()
    return Record(kind, name, tuple(int(d) for d in dims), activation, data)


def encode(records):
    out = MAGIC + struct.pack("<HH", VERSION, len(records))
    return out + b"".join(_pack_record(r) for r in records)


class _Reader:
    def __init__(self, buf):
        self.buf, self.pos = buf, 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise IntegrityError("checkpoint truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(buf):
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatVersionError("not a checkpoint file (bad magic bytes)")
    rd = _Reader(buf)
    rd.take(4)
    version, count = rd.unpack("<HH")
    if version != VERSION:
        raise FormatVersionError(f"unsupported checkpoint format version {version} (expected {VERSION})")
    records = []
    for _ in range(count):
        start = rd.pos
        kind, nlen = rd.unpack("<BH")
        name = rd.take(nlen).decode("utf-8", errors="replace")
        (ndim,) = rd.unpack("<H")
        dims = rd.unpack(f"<{ndim}I")
        act, plen = rd.unpack("<BQ")
        payload = rd.take(plen)
        body = buf[start:rd.pos]
        (crc,) = rd.unpack("<I")
        if zlib.crc32(body) & 0xFFFFFFFF != crc:
            raise IntegrityError(f"CRC mismatch in record {name!r}")
        records.append(Record(kind, name, tuple(dims), _ACT_NAMES.get(act, ""), payload))
    if rd.pos != len(buf):
        raise IntegrityError("trailing bytes after last record")
    return records


@dataclass
class Checkpoint:
    gen: GeneratorNet
    disc: DiscriminatorNet = None
    adam: dict = None
    metadata: dict = None


def save_checkpoint(path, gen, disc=None, adam=None, metadata=None):
    """Write ``gen`` (and optionally ``disc``, Adam moments, metadata) to ``path``.

    ``adam`` maps names to ``AdamState``; each moment vector and the step
    counter are stored as separate float64 records.
    """
    meta = dict(metadata or {})
    meta["generator"] = {"k": gen.k, "d": gen.d, "M": gen.M, "hidden": list(gen.hidden)}
    if disc is not None:
        meta["discriminator"] = {"d": disc.d, "M": disc.M, "hidden": list(disc.hidden)}
    records = [Record(KIND_META, "metadata", (), "", json.dumps(meta, sort_keys=True).encode("utf-8"))]
    records.append(_vector_record(KIND_GEN, "generator", gen.params, gen.sizes, gen.activation))
    if disc is not None:
        records.append(_vector_record(KIND_DISC, "discriminator", disc.params, disc.sizes, disc.activation))
    for name, st in (adam or {}).items():
        records.append(_vector_record(KIND_ADAM, f"{name}.m", st.m))
        records.append(_vector_record(KIND_ADAM, f"{name}.v", st.v))
        records.append(_vector_record(KIND_ADAM, f"{name}.step", [float(st.step)]))
    data = encode(records)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def read_records(path):
    with open(path, "rb") as fh:
        return decode(fh.read())


def _vec(rec):
    return np.frombuffer(rec.payload, dtype="<f8").astype(np.float64)


def load_checkpoint(path):
    from .training import AdamState

    records = read_records(path)
    meta = {}
    gen = disc = None
    moments = {}
    for rec in records:
        if rec.kind == KIND_META:
            meta = json.loads(rec.payload.decode("utf-8"))
        elif rec.kind == KIND_GEN:
            g = meta["generator"]
            gen = GeneratorNet(tuple(g["hidden"]), rec.activation, _vec(rec), g["k"], g["d"], g["M"])
        elif rec.kind == KIND_DISC:
            dm = meta["discriminator"]
            disc = DiscriminatorNet(tuple(dm["hidden"]), rec.activation, _vec(rec), dm["d"], dm["M"])
        elif rec.kind == KIND_ADAM:
            name, part = rec.name.rsplit(".", 1)
            moments.setdefault(name, {})[part] = _vec(rec)
    if gen is None:
        raise IntegrityError("checkpoint has no generator record")
    adam = {n: AdamState(p["m"], p["v"], int(p["step"][0])) for n, p in moments.items()}
    return Checkpoint(gen, disc, adam, meta)


def header_summary(path):
    """Human-readable description of a checkpoint's records."""
    lines = []
    for rec in read_records(path):
        if rec.kind == KIND_META:
            lines.append(f"metadata: {len(rec.payload)} bytes")
        else:
            lines.append(f"{rec.name}: kind={rec.kind} dims={list(rec.dims)} activation={rec.activation or '-'} "
                         f"values={len(rec.payload) // 8}")
    return lines
