"""Contraction compressors and their uplink bit accounting.

Every compressor acts on the last axis, so a ``(n, d)`` block of node
messages is compressed row by row in one call. Randomized compressors take an
explicit ``numpy.random.Generator``; nothing here holds global state.

A contraction compressor ``Q`` satisfies ``E||x - Q(x)||^2 <= (1 - delta)||x||^2``.
``delta`` reports that constant and ``compression_ratio`` the expected message
size relative to an uncompressed float64 vector (``64 d`` bits).
"""
from dataclasses import dataclass
import math
import struct

import numpy as np

IDENTITY = "identity"
TOPK = "topk"
RANDK = "randk"
DITHER = "dither"

KINDS = (IDENTITY, TOPK, RANDK, DITHER)

FLOAT_BITS = 64


class CompressorError(ValueError):
    pass


def index_bits(d):
    """Bits needed to address one of ``d`` coordinates, ``ceil(log2 d)``."""
    return max(int(d - 1).bit_length(), 0) if d > 1 else 0


@dataclass(frozen=True)
class CompressorSpec:
    """Which compressor to apply and its parameters.

    Parameters
    ----------
    kind : str
        One of ``identity``, ``topk``, ``randk``, ``dither``.
    d : int
        Ambient dimension.
    k : int, optional
        Number of kept coordinates for ``topk``/``randk``.
    s : int, optional
        Number of quantization levels for ``dither``.
    """

    kind: str
    d: int
    k: int = 1
    s: int = 2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CompressorError(f"unknown compressor kind {self.kind!r}")
        if self.d < 1:
            raise CompressorError(f"dimension must be positive, got {self.d}")
        if self.kind in (TOPK, RANDK) and not 1 <= self.k <= self.d:
            raise CompressorError(f"k={self.k} out of range [1, {self.d}]")
        if self.kind == DITHER and self.s < 1:
            raise CompressorError(f"dithering level s={self.s} must be >= 1")

    @property
    def label(self):
        if self.kind in (TOPK, RANDK):
            return f"{self.kind}{self.k}"
        if self.kind == DITHER:
            return f"dither{self.s}"
        return self.kind


def _check_k(x, k):
    d = x.shape[-1]
    if not 1 <= k <= d:
        raise CompressorError(f"k={k} out of range [1, {d}]")


def top_k(x, k):
    """Keep the ``k`` largest-magnitude entries of each row.

    Ties are resolved toward the smaller index, so the map is deterministic.
    """
    x = np.asarray(x, dtype=float)
    _check_k(x, k)
    out = np.zeros_like(x)
    if k == 1:
        # argmax returns the first maximal entry
        idx = np.argmax(np.abs(x), axis=-1)[..., None]
    else:
        idx = np.argsort(-np.abs(x), axis=-1, kind="stable")[..., :k]
    np.put_along_axis(out, idx, np.take_along_axis(x, idx, axis=-1), axis=-1)
    return out


def _randk_indices(shape, k, rng):
    d = shape[-1]
    if k == 1:
        return rng.integers(d, size=shape[:-1] + (1,))
    return np.argsort(rng.random(shape), axis=-1)[..., :k]


def rand_k(x, k, rng):
    """Keep ``k`` coordinates chosen uniformly at random, zero the rest."""
    x = np.asarray(x, dtype=float)
    _check_k(x, k)
    if k == x.shape[-1]:
        return x.copy()
    idx = _randk_indices(x.shape, k, rng)
    out = np.zeros_like(x)
    np.put_along_axis(out, idx, np.take_along_axis(x, idx, axis=-1), axis=-1)
    return out


def dither_omega(d, s):
    """Variance parameter of level-``s`` random dithering."""
    return min(d / s**2, math.sqrt(d) / s)


def dither_levels(x, s, rng):
    """Unbiased level-``s`` dithering, returned as ``(norms, signed levels)``.

    ``Q(x)_i = ||x|| * sign(x_i) * xi_i / s`` with
    ``xi_i = floor(s |x_i| / ||x|| + u_i)``, ``u_i ~ U[0, 1)``.
    """
    x = np.asarray(x, dtype=float)
    if s < 1:
        raise CompressorError(f"dithering level s={s} must be >= 1")
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    u = rng.random(x.shape)
    xi = np.floor(s * np.abs(x) / safe + u)
    levels = (np.sign(x) * xi).astype(np.int64)
    return norms, levels


def unbiased_dither(x, s, rng):
    norms, levels = dither_levels(x, s, rng)
    return norms * levels / s


def scaled_dither(x, s, rng):
    """Random dithering scaled by ``1/(omega+1)``, a contraction compressor."""
    x = np.asarray(x, dtype=float)
    omega = dither_omega(x.shape[-1], s)
    return unbiased_dither(x, s, rng) / (omega + 1.0)


def apply(spec, x, rng=None):
    """Compress ``x`` (rows on the last axis) and return the dense result.

    Identity returns its input unchanged, without copying.
    """
    if spec.kind == IDENTITY:
        return x
    if spec.kind == TOPK:
        return top_k(x, spec.k)
    if spec.kind == RANDK:
        return rand_k(x, spec.k, rng)
    return scaled_dither(x, spec.s, rng)


def delta(spec):
    """Contraction factor of ``spec``."""
    if spec.kind == IDENTITY:
        return 1.0
    if spec.kind in (TOPK, RANDK):
        return spec.k / spec.d
    return 1.0 / (dither_omega(spec.d, spec.s) + 1.0)


def omega(spec):
    """Variance parameter of the unbiased compressor behind ``spec``.

    For RandK this is the unbiased rescaling ``(d/k) RandK`` and for
    dithering the unscaled quantizer; both give ``delta = 1/(omega+1)``.
    """
    if spec.kind == IDENTITY:
        return 0.0
    if spec.kind in (TOPK, RANDK):
        return spec.d / spec.k - 1.0
    return dither_omega(spec.d, spec.s)


def uncompressed_bits(d):
    return FLOAT_BITS * d


def dither_expected_bits(d, s):
    """Expected message size of level-``s`` dithering with Elias coding.

    The asymptotic ``o(1)`` correction is dropped and logarithms are base 2.
    """
    root = math.sqrt(d)
    body = (3.0 + 1.5 * math.log2(2.0 * (s**2 + d) / (s * (s + root)))) * s * (s + root)
    return body + FLOAT_BITS


def _sparse_bits(spec):
    return min(spec.k * (FLOAT_BITS + index_bits(spec.d)), uncompressed_bits(spec.d))


def message_bits(spec):
    """Integer uplink cost of one compressed message.

    Sparse messages cost ``k (64 + ceil(log2 d))`` bits, capped at the dense
    size since a sender would never pick the larger encoding. Dithering is
    charged the expected-size formula rounded up to whole bits.
    """
    if spec.kind == IDENTITY:
        return uncompressed_bits(spec.d)
    if spec.kind in (TOPK, RANDK):
        return _sparse_bits(spec)
    return min(math.ceil(dither_expected_bits(spec.d, spec.s)), uncompressed_bits(spec.d))


def compression_ratio(spec):
    """``r(Q)``: charged message bits over the ``64 d`` bits of a dense vector.

    Every kind has a fixed per-message charge, so the expectation is exact.
    """
    return message_bits(spec) / uncompressed_bits(spec.d)


@dataclass
class CompressedMsg:
    """One node's compressed message.

    ``payload`` depends on the kind: the dense vector (identity), an
    ``(indices, values)`` pair (topk/randk), or ``(norm, levels)`` for
    dithering. ``bits`` is the charged uplink cost.
    """

    kind: str
    d: int
    payload: tuple
    bits: int
    scale: float = 1.0
    s: int = 1

    def decode(self):
        if self.kind == IDENTITY:
            return np.array(self.payload[0], dtype=float)
        if self.kind in (TOPK, RANDK):
            idx, vals = self.payload
            out = np.zeros(self.d)
            out[idx] = vals
            return out
        norm, levels = self.payload
        return self.scale * norm * levels / self.s


def compress(spec, x, rng=None):
    """Compress a single d-vector into a :class:`CompressedMsg`."""
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.d,):
        raise CompressorError(f"expected a vector of length {spec.d}, got shape {x.shape}")
    bits = message_bits(spec)
    if spec.kind == IDENTITY:
        return CompressedMsg(spec.kind, spec.d, (x.copy(),), bits)
    if spec.kind == TOPK:
        idx = np.sort(np.argsort(-np.abs(x), kind="stable")[: spec.k])
        return CompressedMsg(spec.kind, spec.d, (idx, x[idx]), bits)
    if spec.kind == RANDK:
        idx = np.sort(_randk_indices(x.shape, spec.k, rng))
        return CompressedMsg(spec.kind, spec.d, (idx, x[idx]), bits)
    norm, levels = dither_levels(x, spec.s, rng)
    scale = 1.0 / (dither_omega(spec.d, spec.s) + 1.0)
    return CompressedMsg(spec.kind, spec.d, (float(norm[0]), levels), bits, scale=scale, s=spec.s)


def bit_cost(spec, msg):
    """Uplink bits charged for ``msg``; raises if it was not produced by ``spec``."""
    if msg.kind != spec.kind or msg.d != spec.d:
        raise CompressorError(
            f"message ({msg.kind}, d={msg.d}) does not match spec ({spec.kind}, d={spec.d})"
        )
    if spec.kind in (TOPK, RANDK) and len(msg.payload[0]) != spec.k:
        raise CompressorError(f"sparse message carries {len(msg.payload[0])} entries, spec k={spec.k}")
    return message_bits(spec)


# Wire layout used by ``serialize``: one header byte holding the kind code,
# then the body.
#   identity : d float64 values
#   topk/randk: k pairs (index as an unsigned ceil(log2 d)-bit field,
#               value as float64), packed MSB-first
#   dither   : float64 norm, then d signed levels, each a sign bit plus a
#              ceil(log2(s+1))-bit magnitude
# The body is padded to a whole byte. Only ``message_bits`` is charged; the
# header and padding are framing.
_KIND_CODE = {IDENTITY: 0, TOPK: 1, RANDK: 2, DITHER: 3}


def _pack_bits(fields):
    acc, nbits = 0, 0
    for value, width in fields:
        acc = (acc << width) | (value & ((1 << width) - 1))
        nbits += width
    pad = (-nbits) % 8
    return (acc << pad).to_bytes((nbits + pad) // 8, "big"), nbits


def _float_bits(v):
    return struct.unpack(">Q", struct.pack(">d", float(v)))[0]


def serialize(msg):
    """Encode ``msg`` as bytes; returns ``(blob, body_bits)``."""
    header = bytes([_KIND_CODE[msg.kind]])
    if msg.kind == IDENTITY:
        body = np.asarray(msg.payload[0], dtype=">f8").tobytes()
        return header + body, 64 * msg.d
    if msg.kind in (TOPK, RANDK):
        width = index_bits(msg.d)
        fields = []
        for i, v in zip(*msg.payload):
            fields.append((int(i), width))
            fields.append((_float_bits(v), 64))
        body, nbits = _pack_bits(fields)
        return header + body, nbits
    norm, levels = msg.payload
    width = max(int(msg.s).bit_length(), 1)
    fields = [(_float_bits(norm), 64)]
    for lv in levels:
        fields.append((1 if lv < 0 else 0, 1))
        fields.append((abs(int(lv)), width))
    body, nbits = _pack_bits(fields)
    return header + body, nbits
