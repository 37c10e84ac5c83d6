"""Bit-exact functional model of the quantized convolution datapath.

Activations are unsigned 8-bit HWC tensors. Weights are signed ``qw``-bit
integers stored in offset-binary (``w + 2**(qw-1)``) so every bit-plane is
non-negative; the offset contribution is removed from the accumulator once
per output pixel before requantization.

Two independent convolution routes live here:

* :func:`conv_ref` -- plain tap-by-tap integer convolution on raw weights.
* :func:`conv_neureka` -- replays the accelerator's job/group/chunk/bit-plane
  loop directly on a packed :class:`WeightStream`.

Both truncate to 32-bit two's-complement accumulators.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

BLOCK_BITS = 256
BLOCK_BYTES = BLOCK_BITS // 8
CHUNK_3X3 = 28
CHUNK_1X1 = 32
OUT_GROUP = 32
JOB_3X3 = 6
JOB_1X1 = 8
QW_MIN, QW_MAX = 2, 8


class QnnError(Exception):
    pass


class ShapeMismatch(QnnError, ValueError):
    pass


class PrecisionOverflow(QnnError, ValueError):
    pass


class IndexOutOfRange(QnnError, IndexError):
    pass


class Mode(str, enum.Enum):
    DENSE3X3 = "Dense3x3"
    DEPTHWISE3X3 = "Depthwise3x3"
    POINTWISE1X1 = "Pointwise1x1"

    @property
    def kernel(self) -> int:
        return 1 if self is Mode.POINTWISE1X1 else 3

    @property
    def chunk(self) -> int:
        return CHUNK_1X1 if self is Mode.POINTWISE1X1 else CHUNK_3X3

    @property
    def job(self) -> int:
        return JOB_1X1 if self is Mode.POINTWISE1X1 else JOB_3X3

    @classmethod
    def parse(cls, text: str) -> "Mode":
        key = text.strip().lower()
        for m in cls:
            if key in (m.value.lower(), m.name.lower()):
                return m
        aliases = {"dense": cls.DENSE3X3, "dw3x3": cls.DEPTHWISE3X3, "dw": cls.DEPTHWISE3X3,
                   "depthwise": cls.DEPTHWISE3X3, "pw1x1": cls.POINTWISE1X1,
                   "pw": cls.POINTWISE1X1, "pointwise": cls.POINTWISE1X1,
                   "fc": cls.POINTWISE1X1}
        if key in aliases:
            return aliases[key]
        raise ValueError(f"unknown mode {text!r}")


def _as_readonly(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True).reshape(-1)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class RequantParams:
    """Per-output-channel ``(scale, bias, shift)`` triples."""

    scale: np.ndarray
    bias: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        scale = _as_readonly(self.scale, np.int64)
        bias = _as_readonly(self.bias, np.int64)
        shift = _as_readonly(self.shift, np.int64)
        if not (len(scale) == len(bias) == len(shift)):
            raise ShapeMismatch("scale, bias and shift must have one entry per channel")
        if np.any(scale < 0) or np.any(scale >= 2**31):
            raise ValueError("scale must be an unsigned value below 2**31")
        if np.any(np.abs(bias) >= 2**31):
            raise ValueError("bias must fit in a signed 32-bit integer")
        if np.any(shift < 0) or np.any(shift > 31):
            raise ValueError("shift must lie in [0, 31]")
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "shift", shift)

    def __len__(self):
        return len(self.scale)

    def __eq__(self, other):
        if not isinstance(other, RequantParams):
            return NotImplemented
        return (np.array_equal(self.scale, other.scale) and np.array_equal(self.bias, other.bias)
                and np.array_equal(self.shift, other.shift))

    @classmethod
    def uniform(cls, channels: int, scale: int = 1, bias: int = 0, shift: int = 0) -> "RequantParams":
        return cls(np.full(channels, scale), np.full(channels, bias), np.full(channels, shift))


@dataclass(frozen=True)
class LayerSpec:
    mode: Mode
    c_in: int
    c_out: int
    qw: int = 8
    stride: int = 1
    padding: Optional[int] = None
    requant: Optional[RequantParams] = field(default=None, compare=False)
    raw_output: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.padding is None:
            object.__setattr__(self, "padding", self.mode.kernel // 2)
        if self.c_in <= 0 or self.c_out <= 0:
            raise ShapeMismatch("channel counts must be positive")
        if self.mode is Mode.DEPTHWISE3X3 and self.c_in != self.c_out:
            raise ShapeMismatch("depthwise layers need c_out == c_in")
        if not QW_MIN <= self.qw <= QW_MAX:
            raise PrecisionOverflow(f"qw={self.qw} outside [{QW_MIN}, {QW_MAX}]")
        if self.stride not in (1, 2):
            raise ValueError("stride must be 1 or 2")
        if self.padding < 0:
            raise ValueError("padding must be non-negative")
        if self.raw_output and self.requant is not None:
            raise ValueError("raw_output and requant are mutually exclusive")
        if self.requant is not None and len(self.requant) != self.c_out:
            raise ShapeMismatch("requant needs one triple per output channel")

    @property
    def kernel(self) -> int:
        return self.mode.kernel

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        k = self.kernel
        if self.mode is Mode.DEPTHWISE3X3:
            return (self.c_out, 1, k, k)
        return (self.c_out, self.c_in, k, k)

    @property
    def weight_count(self) -> int:
        return int(np.prod(self.weight_shape))

    @property
    def offset(self) -> int:
        return 1 << (self.qw - 1)

    def out_dims(self, height: int, width: int) -> tuple[int, int]:
        k, p, s = self.kernel, self.padding, self.stride
        h1, w1 = height + 2 * p - k + 1, width + 2 * p - k + 1
        if h1 <= 0 or w1 <= 0:
            raise ShapeMismatch("input smaller than the kernel footprint")
        return (h1 - 1) // s + 1, (w1 - 1) // s + 1

    def macs(self, height: int, width: int) -> int:
        ho, wo = self.out_dims(height, width)
        per_out = self.kernel**2 * (1 if self.mode is Mode.DEPTHWISE3X3 else self.c_in)
        return ho * wo * self.c_out * per_out


@dataclass(frozen=True, eq=False)
class QTensor:
    """Unsigned 8-bit activation tensor in HWC layout."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise ShapeMismatch("QTensor data must be (height, width, channels)")
        if arr.dtype != np.uint8:
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise ValueError("activation values must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_flat(cls, height: int, width: int, channels: int, values) -> "QTensor":
        flat = np.asarray(values).reshape(-1)
        if flat.size != height * width * channels:
            raise ShapeMismatch("data length != height*width*channels")
        return cls(flat.reshape(height, width, channels))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def __eq__(self, other):
        if not isinstance(other, QTensor):
            return NotImplemented
        return np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class WeightStream:
    """Layer weights packed into 256-bit blocks in fetch order.

    ``blocks`` has shape ``(n_blocks, 32)``; bit ``j`` of a block is bit
    ``j % 8`` of byte ``j // 8``.
    """

    blocks: np.ndarray
    mode: Mode
    c_in: int
    c_out: int
    qw: int
    bit_count: int

    @property
    def n_blocks(self) -> int:
        return self.blocks.shape[0]

    @property
    def nbytes(self) -> int:
        return self.blocks.size

    def __eq__(self, other):
        if not isinstance(other, WeightStream):
            return NotImplemented
        return (self.layout == other.layout and self.bit_count == other.bit_count
                and np.array_equal(self.blocks, other.blocks))

    @property
    def layout(self) -> tuple:
        return (self.mode, self.c_in, self.c_out, self.qw)


# --------------------------------------------------------------------------
# weight packing

def encode_offset_binary(raw, qw: int) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.int64)
    lo, hi = -(1 << (qw - 1)), (1 << (qw - 1)) - 1
    if raw.size and (raw.min() < lo or raw.max() > hi):
        raise PrecisionOverflow(f"weights outside the signed {qw}-bit range [{lo}, {hi}]")
    return raw + (1 << (qw - 1))


def extract_bitplane(encoded, b: int, qw: int = 8) -> np.ndarray:
    """Bit ``b`` of up to 252 offset-binary weights, zero-padded to 252 lanes."""
    if not 0 <= b < qw:
        raise IndexOutOfRange(f"bit index {b} outside [0, {qw})")
    enc = np.asarray(encoded, dtype=np.int64).reshape(-1)
    lanes = CHUNK_3X3 * 9
    if enc.size > lanes:
        raise ShapeMismatch(f"a bit-plane holds at most {lanes} weights")
    plane = np.zeros(lanes, dtype=np.uint8)
    plane[: enc.size] = (enc >> b) & 1
    return plane


def _blocks_from_bits(bits: np.ndarray) -> np.ndarray:
    n, width = bits.shape
    padded = np.zeros((n, BLOCK_BITS), dtype=np.uint8)
    padded[:, :width] = bits
    return np.packbits(padded, axis=1, bitorder="little")


def _bits_from_blocks(blocks: np.ndarray, width: int = BLOCK_BITS) -> np.ndarray:
    return np.unpackbits(blocks, axis=1, bitorder="little")[:, :width]


def _check_raw(raw, spec: LayerSpec) -> np.ndarray:
    raw = np.asarray(raw)
    if raw.size != spec.weight_count:
        raise ShapeMismatch(f"expected {spec.weight_count} weights, got {raw.size}")
    return raw.reshape(spec.weight_shape)


def pack_weights(raw, spec: LayerSpec) -> WeightStream:
    """Pack signed weights into the accelerator's block stream.

    Fetch order:

    * 3x3 dense -- output group of 32, then 28-channel input chunk, then
      output channel, then bit-plane. Block bit ``ch*9 + tap`` is bit ``b``
      of that weight.
    * 3x3 depthwise -- 28-channel chunk, then bit-plane.
    * 1x1 -- output group, 32-channel chunk, output channel; one block
      carries all planes, bit ``b*32 + ch``.
    """
    w = _check_raw(raw, spec)
    qw = spec.qw
    enc = encode_offset_binary(w, qw)
    planes = np.arange(qw)
    out = []
    if spec.mode is Mode.DENSE3X3:
        n_chunks = -(-spec.c_in // CHUNK_3X3)
        padded = np.zeros((spec.c_out, n_chunks * CHUNK_3X3, 9), dtype=np.int64)
        padded[:, : spec.c_in] = enc.reshape(spec.c_out, spec.c_in, 9)
        # (c_out, chunk, 252) -> bits (c_out, chunk, qw, 252)
        chunked = padded.reshape(spec.c_out, n_chunks, CHUNK_3X3 * 9)
        bits = ((chunked[:, :, None, :] >> planes[None, None, :, None]) & 1).astype(np.uint8)
        for g0 in range(0, spec.c_out, OUT_GROUP):
            g1 = min(g0 + OUT_GROUP, spec.c_out)
            for k in range(n_chunks):
                out.append(bits[g0:g1, k].reshape(-1, CHUNK_3X3 * 9))
    elif spec.mode is Mode.DEPTHWISE3X3:
        n_chunks = -(-spec.c_out // CHUNK_3X3)
        padded = np.zeros((n_chunks * CHUNK_3X3, 9), dtype=np.int64)
        padded[: spec.c_out] = enc.reshape(spec.c_out, 9)
        chunked = padded.reshape(n_chunks, CHUNK_3X3 * 9)
        bits = ((chunked[:, None, :] >> planes[None, :, None]) & 1).astype(np.uint8)
        out.append(bits.reshape(-1, CHUNK_3X3 * 9))
    else:
        n_chunks = -(-spec.c_in // CHUNK_1X1)
        padded = np.zeros((spec.c_out, n_chunks * CHUNK_1X1), dtype=np.int64)
        padded[:, : spec.c_in] = enc.reshape(spec.c_out, spec.c_in)
        chunked = padded.reshape(spec.c_out, n_chunks, CHUNK_1X1)
        # plane-major payload: (c_out, chunk, qw, 32)
        bits = ((chunked[:, :, None, :] >> planes[None, None, :, None]) & 1).astype(np.uint8)
        for g0 in range(0, spec.c_out, OUT_GROUP):
            g1 = min(g0 + OUT_GROUP, spec.c_out)
            for k in range(n_chunks):
                out.append(bits[g0:g1, k].reshape(g1 - g0, qw * CHUNK_1X1))
    blocks = _blocks_from_bits(np.concatenate(out, axis=0))
    return WeightStream(blocks, spec.mode, spec.c_in, spec.c_out, qw, bit_count=spec.weight_count * qw)


def unpack_weights(ws: WeightStream) -> np.ndarray:
    """Inverse of :func:`pack_weights`; returns signed weights in layer shape."""
    spec = LayerSpec(ws.mode, ws.c_in, ws.c_out, ws.qw)
    qw = ws.qw
    weights = (1 << np.arange(qw, dtype=np.int64))
    if spec.mode is Mode.DENSE3X3:
        n_chunks = -(-ws.c_in // CHUNK_3X3)
        bits = _bits_from_blocks(ws.blocks, CHUNK_3X3 * 9).astype(np.int64)
        enc = np.zeros((ws.c_out, n_chunks, CHUNK_3X3 * 9), dtype=np.int64)
        cursor = 0
        for g0 in range(0, ws.c_out, OUT_GROUP):
            g1 = min(g0 + OUT_GROUP, ws.c_out)
            for k in range(n_chunks):
                n = (g1 - g0) * qw
                chunk = bits[cursor: cursor + n].reshape(g1 - g0, qw, -1)
                enc[g0:g1, k] = np.einsum("cbj,b->cj", chunk, weights)
                cursor += n
        enc = enc.reshape(ws.c_out, n_chunks * CHUNK_3X3, 9)[:, : ws.c_in]
    elif spec.mode is Mode.DEPTHWISE3X3:
        bits = _bits_from_blocks(ws.blocks, CHUNK_3X3 * 9).astype(np.int64)
        n_chunks = bits.shape[0] // qw
        enc = np.einsum("kbj,b->kj", bits.reshape(n_chunks, qw, -1), weights)
        enc = enc.reshape(n_chunks * CHUNK_3X3, 9)[: ws.c_out]
    else:
        n_chunks = -(-ws.c_in // CHUNK_1X1)
        bits = _bits_from_blocks(ws.blocks, qw * CHUNK_1X1).astype(np.int64)
        enc = np.zeros((ws.c_out, n_chunks, CHUNK_1X1), dtype=np.int64)
        cursor = 0
        for g0 in range(0, ws.c_out, OUT_GROUP):
            g1 = min(g0 + OUT_GROUP, ws.c_out)
            for k in range(n_chunks):
                chunk = bits[cursor: cursor + (g1 - g0)].reshape(g1 - g0, qw, CHUNK_1X1)
                enc[g0:g1, k] = np.einsum("cbj,b->cj", chunk, weights)
                cursor += g1 - g0
        enc = enc.reshape(ws.c_out, -1)[:, : ws.c_in]
    return (enc - spec.offset).reshape(spec.weight_shape)


def stream_block_count(spec: LayerSpec) -> int:
    """Number of 256-bit blocks :func:`pack_weights` emits for ``spec``."""
    if spec.mode is Mode.DENSE3X3:
        return -(-spec.c_in // CHUNK_3X3) * spec.c_out * spec.qw
    if spec.mode is Mode.DEPTHWISE3X3:
        return -(-spec.c_out // CHUNK_3X3) * spec.qw
    return -(-spec.c_in // CHUNK_1X1) * spec.c_out


# --------------------------------------------------------------------------
# arithmetic

def wrap_int32(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.int64)
    return (((v + (1 << 31)) & 0xFFFFFFFF) - (1 << 31)).astype(np.int32)


def requantize_scalar(acc: int, scale: int, bias: int, shift: int) -> int:
    """Single-value requantization on Python integers."""
    v = (int(acc) * int(scale) + int(bias)) >> int(shift)
    return max(0, min(255, v))


def requantize(acc, params: RequantParams) -> np.ndarray:
    """Clamp ``(acc*scale + bias) >> shift`` to [0, 255], channel-last."""
    acc = np.asarray(acc, dtype=np.int64)
    if acc.shape[-1] != len(params):
        raise ShapeMismatch("last axis of acc must match the number of channels")
    v = (acc * params.scale + params.bias) >> params.shift
    return np.clip(v, 0, 255).astype(np.uint8)


def _pad_input(x: QTensor, spec: LayerSpec) -> np.ndarray:
    if x.channels != spec.c_in:
        raise ShapeMismatch(f"input has {x.channels} channels, layer expects {spec.c_in}")
    p = spec.padding
    return np.pad(x.data.astype(np.int64), ((p, p), (p, p), (0, 0)))


def _finish(acc32: np.ndarray, spec: LayerSpec):
    if spec.raw_output:
        return acc32
    if spec.requant is None:
        raise ValueError("layer needs requant parameters unless raw_output is set")
    return QTensor(requantize(acc32, spec.requant))


def conv_ref(x: QTensor, raw, spec: LayerSpec) -> np.ndarray:
    """Naive integer convolution; returns wrapped int32 accumulators (H, W, C_out)."""
    w = _check_raw(raw, spec).astype(np.int64)
    xp = _pad_input(x, spec)
    k = spec.kernel
    spec.out_dims(x.height, x.width)
    h1, w1 = xp.shape[0] - k + 1, xp.shape[1] - k + 1
    acc = np.zeros((h1, w1, spec.c_out), dtype=np.int64)
    for ky in range(k):
        for kx in range(k):
            patch = xp[ky: ky + h1, kx: kx + w1, :]
            if spec.mode is Mode.DEPTHWISE3X3:
                acc += patch * w[:, 0, ky, kx]
            else:
                acc += patch @ w[:, :, ky, kx].T
    s = spec.stride
    return wrap_int32(acc[::s, ::s])


def reference_layer(x: QTensor, raw, spec: LayerSpec):
    """:func:`conv_ref` followed by requantization (or raw 32-bit output)."""
    return _finish(conv_ref(x, raw, spec), spec)


BlockReader = Callable[[int, int], np.ndarray]


def _im2col(patch: np.ndarray, k: int, oh: int, ow: int) -> np.ndarray:
    # (oh*ow, c, k*k), tap index = ky*k + kx
    cols = np.empty((oh, ow, patch.shape[2], k * k), dtype=np.int64)
    for ky in range(k):
        for kx in range(k):
            cols[:, :, :, ky * k + kx] = patch[ky: ky + oh, kx: kx + ow, :]
    return cols.reshape(oh * ow, patch.shape[2], k * k)


def conv_neureka(x: QTensor, ws: WeightStream, spec: LayerSpec, reader: Optional[BlockReader] = None):
    """Run a layer through the accelerator's tiled bit-serial loop.

    ``reader(first_block, count)`` supplies weight blocks; it defaults to
    slicing ``ws.blocks`` and is replaced by the paging model when weights
    live in virtual memory. The block stream is replayed once per spatial job.
    """
    if ws.layout != (spec.mode, spec.c_in, spec.c_out, spec.qw):
        raise ShapeMismatch("weight stream was packed for a different layer")
    if reader is None:
        blocks = ws.blocks

        def reader(first, count):
            return blocks[first: first + count]

    xp = _pad_input(x, spec)
    spec.out_dims(x.height, x.width)
    k, qw, mode = spec.kernel, spec.qw, spec.mode
    h1, w1 = xp.shape[0] - k + 1, xp.shape[1] - k + 1
    job = mode.job
    shifts = (1 << np.arange(qw, dtype=np.int64))
    offset = spec.offset
    acc = np.zeros((h1, w1, spec.c_out), dtype=np.int64)

    for oy in range(0, h1, job):
        for ox in range(0, w1, job):
            oh, ow = min(job, h1 - oy), min(job, w1 - ox)
            cols = _im2col(xp[oy: oy + oh + k - 1, ox: ox + ow + k - 1, :], k, oh, ow)
            npix = oh * ow
            job_acc = np.zeros((npix, spec.c_out), dtype=np.int64)
            cursor = 0
            if mode is Mode.DENSE3X3:
                for g0 in range(0, spec.c_out, OUT_GROUP):
                    g1 = min(g0 + OUT_GROUP, spec.c_out)
                    for c0 in range(0, spec.c_in, CHUNK_3X3):
                        c1 = min(c0 + CHUNK_3X3, spec.c_in)
                        lanes = np.zeros((npix, CHUNK_3X3, 9), dtype=np.int64)
                        lanes[:, : c1 - c0] = cols[:, c0:c1]
                        lanes = lanes.reshape(npix, -1)
                        n = (g1 - g0) * qw
                        planes = _bits_from_blocks(reader(cursor, n), CHUNK_3X3 * 9).astype(np.int64)
                        cursor += n
                        partial = (lanes @ planes.T).reshape(npix, g1 - g0, qw)
                        job_acc[:, g0:g1] += (partial * shifts).sum(axis=2)
                        job_acc[:, g0:g1] -= offset * lanes.sum(axis=1, keepdims=True)
            elif mode is Mode.DEPTHWISE3X3:
                for c0 in range(0, spec.c_out, CHUNK_3X3):
                    c1 = min(c0 + CHUNK_3X3, spec.c_out)
                    planes = _bits_from_blocks(reader(cursor, qw), CHUNK_3X3 * 9).astype(np.int64)
                    cursor += qw
                    planes = planes.reshape(qw, CHUNK_3X3, 9)[:, : c1 - c0]
                    window = cols[:, c0:c1]
                    for b in range(qw):
                        job_acc[:, c0:c1] += (window * planes[b]).sum(axis=2) << b
                    job_acc[:, c0:c1] -= offset * window.sum(axis=2)
            else:
                flat = cols[:, :, 0]
                for g0 in range(0, spec.c_out, OUT_GROUP):
                    g1 = min(g0 + OUT_GROUP, spec.c_out)
                    for c0 in range(0, spec.c_in, CHUNK_1X1):
                        c1 = min(c0 + CHUNK_1X1, spec.c_in)
                        n = g1 - g0
                        bits = _bits_from_blocks(reader(cursor, n), qw * CHUNK_1X1).astype(np.int64)
                        cursor += n
                        enc = np.einsum("obj,b->oj", bits.reshape(n, qw, CHUNK_1X1), shifts)
                        lanes = flat[:, c0:c1]
                        job_acc[:, g0:g1] += lanes @ enc[:, : c1 - c0].T
                        job_acc[:, g0:g1] -= offset * lanes.sum(axis=1, keepdims=True)
            acc[oy: oy + oh, ox: ox + ow] = job_acc.reshape(oh, ow, spec.c_out)

    s = spec.stride
    return _finish(wrap_int32(acc[::s, ::s]), spec)
