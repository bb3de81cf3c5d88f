"""Binary checkpoint format.

All integers and floats are little-endian::

    magic        8 bytes   b"SSEPCKPT"
    version      u32       FORMAT_VERSION
    header_len   u32
    header       JSON (utf-8, sorted keys): training config, model config, step, dtype
    3 x group    generator, d_C, d_A, in that order:
        count    u32                       number of parameters
        count x  u16 name_len, name, u8 ndim, ndim x u32 dims, raw values
        adam     u64 t, f64 beta1, f64 beta2, f64 eps, f64 lr
        count x  raw m values, then count x raw v values (parameter order)
    crc32        u32       over every preceding byte

Raw values use the run's dtype (4-byte float32 or 8-byte float64), so a
float64 test run resumes bit-identically.
"""

import io
import json
import struct
import zlib

import numpy as np

from .autodiff import AdamState

MAGIC = b"SSEPCKPT"
FORMAT_VERSION = 1
_GROUPS = (("g", "adam_g"), ("d_c", "adam_dc"), ("d_a", "adam_da"))


class CheckpointError(RuntimeError):
    pass


def _le(dtype):
    return np.dtype(dtype).newbyteorder("<")


def _write_array(buf, arr, dtype):
    buf.write(np.ascontiguousarray(arr, dtype=_le(dtype)).tobytes())


def dumps(state):
    dtype = np.dtype(state.config.dtype)
    header = json.dumps({"config": state.config.to_dict(), "model": state.config.model_dict(),
                         "step": state.step, "dtype": dtype.name}, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, len(header)))
    buf.write(header)
    for net_attr, adam_attr in _GROUPS:
        params = getattr(state, net_attr).params
        adam = getattr(state, adam_attr)
        buf.write(struct.pack("<I", len(params)))
        for name, p in params.items():
            raw = name.encode()
            buf.write(struct.pack("<HB", len(raw), p.data.ndim) + raw)
            buf.write(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
            _write_array(buf, p.data, dtype)
        buf.write(struct.pack("<Qdddd", adam.t, adam.beta1, adam.beta2, adam.eps, adam.lr))
        for name in params:
            _write_array(buf, adam.m[name], dtype)
        for name in params:
            _write_array(buf, adam.v[name], dtype)
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


class _Reader:
    def __init__(self, data):
        self.data, self.pos = data, 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def parse(data):
    """Decode checkpoint bytes into (header, groups) without touching any live state."""
    if len(data) < len(MAGIC) + 12 or data[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic) or truncated")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError("checkpoint is corrupt or truncated (checksum mismatch)")
    r = _Reader(body)
    r.take(len(MAGIC))
    version, hlen = r.unpack("<II")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}, expected {FORMAT_VERSION}")
    header = json.loads(r.take(hlen).decode())
    dtype = _le(header["dtype"])
    groups = []
    for _ in _GROUPS:
        (count,) = r.unpack("<I")
        params = {}
        for _ in range(count):
            nlen, ndim = r.unpack("<HB")
            name = r.take(nlen).decode()
            shape = r.unpack(f"<{ndim}I")
            n = int(np.prod(shape, dtype=np.int64))
            params[name] = np.frombuffer(r.take(n * dtype.itemsize), dtype=dtype).reshape(shape)
        t, b1, b2, eps, lr = r.unpack("<Qdddd")
        m = {k: np.frombuffer(r.take(v.size * dtype.itemsize), dtype=dtype).reshape(v.shape)
             for k, v in params.items()}
        v_ = {k: np.frombuffer(r.take(v.size * dtype.itemsize), dtype=dtype).reshape(v.shape)
              for k, v in params.items()}
        groups.append((params, AdamState(b1, b2, eps, lr, t, m, v_)))
    if r.pos != len(body):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return header, groups


def _native(arr, dtype):
    return np.array(arr, dtype=np.dtype(dtype).newbyteorder("="))


def loads(data, expected=None):
    """Build a fresh TrainState from checkpoint bytes.

    ``expected`` is a TrainingConfig whose model settings must match the
    checkpoint's; a mismatch raises CheckpointError naming both.
    """
    from .training import TrainingConfig, TrainState

    header, groups = parse(data)
    config = TrainingConfig(**header["config"])
    if expected is not None and expected.model_dict() != header["model"]:
        raise CheckpointError(
            f"model config mismatch: checkpoint has {header['model']}, expected {expected.model_dict()}")
    state = TrainState.initial(config)
    dtype = np.dtype(config.dtype)
    for (net_attr, adam_attr), (params, adam) in zip(_GROUPS, groups):
        net = getattr(state, net_attr)
        try:
            net.load_state_dict({k: _native(v, dtype) for k, v in params.items()})
        except ValueError as exc:
            raise CheckpointError(f"checkpoint does not fit the model: {exc}") from None
        adam.m = {k: _native(v, dtype) for k, v in adam.m.items()}
        adam.v = {k: _native(v, dtype) for k, v in adam.v.items()}
        setattr(state, adam_attr, adam)
    state.step = int(header["step"])
    return state


def save_checkpoint(state, path):
    data = dumps(state)
    with open(path, "wb") as fh:
        fh.write(data)
    return path


def load_checkpoint(path, expected=None):
    with open(path, "rb") as fh:
        return loads(fh.read(), expected)


def read_header(path):
    with open(path, "rb") as fh:
        return parse(fh.read())[0]
