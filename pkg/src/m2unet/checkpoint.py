"""Binary checkpoint container.

Layout (all integers little-endian; full byte-level description in
``docs/checkpoint.md``):

    magic  b"M2UN"
    u32    format version (currently 1)
    u32    config length, then that many UTF-8 bytes of flat model config
    u64    trainer step counter
    u32    parameter count
    entry* parameters: u16 name length, name bytes, u32 rank,
           u32 * rank extents, float32 payload in row-major order
    u8     optimizer-state flag
    if 1:  u64 adam step, then for each parameter in the same order the
           first-moment entry and second-moment entry (same entry format)

Tensors are stored as little-endian float32, so save -> load -> save is
byte-identical and resuming reproduces an uninterrupted float32 run
exactly.
"""

from __future__ import annotations

import struct

import numpy as np

from . import config as config_mod
from .engine import Tensor
from .errors import FormatError, UsageError
from .model import build_model, named_parameters
from .optim import OptimState

MAGIC = b"M2UN"
VERSION = 1


def _write_entry(out, name, arr):
    name_b = name.encode("utf-8")
    out.append(struct.pack("<H", len(name_b)))
    out.append(name_b)
    out.append(struct.pack("<I", arr.ndim))
    out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated checkpoint while reading {what} "
                              f"at byte offset {self.pos}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u16(self, what):
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what):
        return struct.unpack("<Q", self.take(8, what))[0]

    def entry(self):
        name = self.take(self.u16("name length"), "name").decode("utf-8")
        rank = self.u32("rank")
        shape = struct.unpack(f"<{rank}I", self.take(4 * rank, "extents"))
        count = int(np.prod(shape)) if shape else 1
        payload = self.take(4 * count, f"payload of {name!r}")
        arr = np.frombuffer(payload, dtype="<f4").reshape(shape)
        return name, arr.astype(np.float32)


def save(path, params, step, optim=None):
    """Serialize model parameters (and optionally Adam state) to ``path``."""
    named = named_parameters(params)
    out = [MAGIC, struct.pack("<I", VERSION)]
    cfg_text = config_mod.format_flat(config_mod.model_config_to_flat(params.cfg))
    cfg_b = cfg_text.encode("utf-8")
    out.append(struct.pack("<I", len(cfg_b)))
    out.append(cfg_b)
    out.append(struct.pack("<Q", step))
    out.append(struct.pack("<I", len(named)))
    for name, t in named.items():
        _write_entry(out, name, t.data)
    if optim is None:
        out.append(b"\x00")
    else:
        out.append(b"\x01")
        out.append(struct.pack("<Q", optim.step))
        for name in named:
            m = optim.m.get(name)
            v = optim.v.get(name)
            if m is None or v is None:
                raise UsageError(f"optimizer state missing moments for {name!r}")
            _write_entry(out, name, m)
            _write_entry(out, name, v)
    with open(path, "wb") as fh:
        fh.write(b"".join(out))


def load(path):
    """Read a checkpoint; returns (params, step, optim-or-None).

    The parameter set is rebuilt from the embedded config and every tensor
    is overwritten with the stored float32 payload.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise FormatError(f"bad checkpoint magic in {path!r}")
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    cfg_text = r.take(r.u32("config length"), "config").decode("utf-8")
    cfg = config_mod.model_config_from_flat(config_mod.parse_flat(cfg_text))
    step = r.u64("step")
    n = r.u32("parameter count")

    params = build_model(cfg, rng_seed=0)
    named = named_parameters(params)
    if n != len(named):
        raise FormatError(f"checkpoint has {n} parameters, config implies {len(named)}")
    for _ in range(n):
        name, arr = r.entry()
        t = named.get(name)
        if t is None:
            raise FormatError(f"checkpoint parameter {name!r} not in model")
        if t.data.shape != arr.shape:
            raise FormatError(f"checkpoint parameter {name!r} has shape "
                              f"{arr.shape}, model expects {t.data.shape}")
        t.data = np.ascontiguousarray(arr.astype(t.data.dtype))

    optim = None
    flag = r.take(1, "optimizer flag")[0]
    if flag == 1:
        optim = OptimState(step=r.u64("adam step"))
        for _ in range(n):
            mname, m = r.entry()
            vname, v = r.entry()
            if mname != vname:
                raise FormatError(f"optimizer entries misaligned: {mname!r} vs {vname!r}")
            ref = named[mname].data
            optim.m[mname] = np.ascontiguousarray(m.astype(ref.dtype))
            optim.v[mname] = np.ascontiguousarray(v.astype(ref.dtype))
    elif flag != 0:
        raise FormatError(f"bad optimizer flag {flag}")
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes after checkpoint payload")
    return params, step, optim
