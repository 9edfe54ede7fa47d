"""Gradient codecs: adaptive mixed resolution plus uniform and Top-q baselines."""

import logging
import math
import struct
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from ._exceptions import MalformedPayload
from ._normalize import as_vector
from ._utils import ceil_log2

logger = logging.getLogger(__name__)

RADIUS_BITS = 32
LOSSLESS_BITS = 32

_HEADER = struct.Struct("<IIff")


class ElementClass(IntEnum):
    """Per-element class of the mixed-resolution codec."""

    LOW_NEG = 0
    LOW_POS = 1
    HIGH = 2


@dataclass(frozen=True)
class QuantSpec:
    """Threshold ``lam`` in (0, 1) and high-resolution width ``bits >= 2``."""

    lam: float
    bits: int

    def __post_init__(self):
        if not 0 < self.lam < 1:
            raise ValueError("lambda must lie in (0,1)")
        if int(self.bits) != self.bits or self.bits < 2:
            raise ValueError("bits must be an integer >= 2")

    @property
    def levels(self):
        """Number of grid intervals, ``2**bits - 1``."""
        return 2 ** int(self.bits) - 1


@dataclass(frozen=True)
class ErrorBound:
    """Constant ``c`` of the quantization error bound ``c * max|w|``."""

    c: float


def error_bound(spec):
    """Error constant of the mixed-resolution codec.

    ``c = max(lam/2 + (1 - lam) / (4 (2**b - 1)), (1 - lam) / (2 (2**b - 1)))``

    Examples
    --------
    >>> round(error_bound(QuantSpec(lam=0.4, bits=4)).c, 12)
    0.21
    """
    lam, levels = spec.lam, spec.levels
    return ErrorBound(max(lam / 2 + (1 - lam) / (4 * levels), (1 - lam) / (2 * levels)))


def _codes_to_bits(codes, width):
    shifts = np.arange(width - 1, -1, -1, dtype=np.int64)
    return ((np.asarray(codes, dtype=np.int64)[:, None] >> shifts) & 1).astype(np.uint8).ravel()


def _bits_to_codes(bits, width):
    if bits.size == 0:
        return np.zeros(0, dtype=np.int64)
    weights = np.int64(1) << np.arange(width - 1, -1, -1, dtype=np.int64)
    return bits.reshape(-1, width).astype(np.int64) @ weights


@dataclass(frozen=True, eq=False)
class QuantizedUpdate:
    """Mixed-resolution encoding of one update vector.

    Attributes
    ----------
    d : int
        Vector dimension.
    classes : (d,) uint8 array
        :class:`ElementClass` of every element.
    high_codes : (high_count,) int array
        Grid index of every High element, in element order.
    high_signs : (high_count,) int8 array
        ``+1`` or ``-1`` for every High element.
    anchor : float
        Smallest High magnitude; Low elements decode to ``+-anchor/2``.
    grid_radius : float
        ``max|w| - anchor``, the span of the High grid.
    bits : int
        Width of a High code.
    is_zero : bool
        The source vector was identically zero.
    """

    d: int
    classes: np.ndarray
    high_codes: np.ndarray
    high_signs: np.ndarray
    anchor: float
    grid_radius: float
    bits: int
    is_zero: bool = False

    @property
    def high_count(self):
        return int(self.high_codes.size)

    @property
    def high_fraction(self):
        """Fraction ``s`` of elements sent at high resolution."""
        return self.high_count / self.d

    @property
    def payload_bits(self):
        """Air-interface bits: ``b`` per High element, one per Low element, 32 for the radius."""
        return self.high_count * int(self.bits) + (self.d - self.high_count) + RADIUS_BITS

    def decode(self):
        return decode_mixed(self)

    def bit_layout(self):
        """Sections of the serialized payload.

        Returns
        -------
        layout : list of (str, int, bool)
            Name, size in bits, and whether the section is counted in
            :attr:`payload_bits`. Unflagged sections are bookkeeping that a
            receiver with shared state would not need.
        """
        d, high = self.d, self.high_count
        return [
            ("header", 96, False),
            ("grid_radius", RADIUS_BITS, True),
            ("class_mask", d, False),
            ("low_signs", d - high, True),
            ("high_codes", high * int(self.bits), True),
            ("high_signs", high, False),
        ]

    def to_bytes(self):
        """Serialize to the wire format.

        The header holds ``d``, ``high_count``, ``anchor`` and ``grid_radius``
        as little-endian ``<IIff``. It is followed by a bit stream, MSB first
        and zero padded to a byte: the High mask, the Low sign bits (1 for
        positive), the ``bits``-wide High codes and the High sign bits (1 for
        negative).

        Raises
        ------
        MalformedPayload
            If ``anchor`` or ``grid_radius`` does not fit a float32.
        """
        limit = float(np.finfo(np.float32).max)
        for name, value in (("anchor", self.anchor), ("grid_radius", self.grid_radius)):
            if not abs(value) <= limit:
                raise MalformedPayload(f"{name} {value:g} does not fit the float32 wire header")
        high = self.classes == ElementClass.HIGH
        low_classes = self.classes[~high]
        stream = np.concatenate(
            [
                high.astype(np.uint8),
                (low_classes == ElementClass.LOW_POS).astype(np.uint8),
                _codes_to_bits(self.high_codes, int(self.bits)),
                (self.high_signs < 0).astype(np.uint8),
            ]
        )
        header = _HEADER.pack(self.d, self.high_count, self.anchor, self.grid_radius)
        return header + np.packbits(stream).tobytes()

    @classmethod
    def from_bytes(cls, data, bits):
        """Parse the wire format written by :meth:`to_bytes`.

        ``anchor`` and ``grid_radius`` come back at float32 precision.
        """
        if len(data) < _HEADER.size:
            raise MalformedPayload("payload shorter than its header")
        d, high_count, anchor, grid_radius = _HEADER.unpack_from(data)
        if high_count > d:
            raise MalformedPayload(f"high_count {high_count} exceeds d {d}")

        n_stream = d + (d - high_count) + high_count * bits + high_count
        stream = np.unpackbits(np.frombuffer(data, dtype=np.uint8, offset=_HEADER.size))
        if stream.size < n_stream:
            raise MalformedPayload(f"payload carries {stream.size} bits, expected {n_stream}")

        high = stream[:d].astype(bool)
        if int(high.sum()) != high_count:
            raise MalformedPayload("class mask disagrees with high_count")
        offset = d
        low_pos = stream[offset : offset + d - high_count].astype(bool)
        offset += d - high_count
        codes = _bits_to_codes(stream[offset : offset + high_count * bits], bits)
        offset += high_count * bits
        signs = np.where(stream[offset : offset + high_count].astype(bool), -1, 1).astype(np.int8)

        classes = np.full(d, ElementClass.HIGH, dtype=np.uint8)
        classes[~high] = np.where(low_pos, ElementClass.LOW_POS, ElementClass.LOW_NEG)
        return cls(d, classes, codes, signs, float(anchor), float(grid_radius), bits, is_zero=high_count == 0)


def encode_mixed(delta_w, spec):
    """Encode an update with the adaptive mixed-resolution codec.

    Element ``i`` is High when ``|w_i| / max|w| >= lam``. High magnitudes are
    rounded to the nearest of ``2**b`` evenly spaced points on
    ``[anchor, max|w|]``, where the anchor is the smallest High magnitude. Low
    elements keep only their sign; zero counts as negative.

    Parameters
    ----------
    delta_w : (d,) array_like
    spec : QuantSpec

    Returns
    -------
    update : QuantizedUpdate

    Examples
    --------
    >>> update = encode_mixed([0.8, -0.1, 0.05, -0.9], QuantSpec(lam=0.2, bits=3))
    >>> update.high_count, update.payload_bits
    (2, 40)
    """
    w = as_vector(delta_w, "delta_w")
    d = w.size
    if d < 1:
        raise ValueError("delta_w must have at least one element")
    if not np.all(np.isfinite(w)):
        raise ValueError("delta_w must be finite")

    bits = int(spec.bits)
    magnitude = np.abs(w)
    norm = float(magnitude.max())
    if norm == 0:
        logger.debug("all-zero update of dimension %d", d)
        return QuantizedUpdate(
            d,
            np.full(d, ElementClass.LOW_NEG, dtype=np.uint8),
            np.zeros(0, dtype=np.int64),
            np.zeros(0, dtype=np.int8),
            0.0,
            0.0,
            bits,
            is_zero=True,
        )

    high = magnitude / norm >= spec.lam
    classes = np.where(high, ElementClass.HIGH, np.where(w > 0, ElementClass.LOW_POS, ElementClass.LOW_NEG))
    anchor = float(magnitude[high].min())
    radius = norm - anchor

    levels = spec.levels
    if radius > 0:
        codes = np.rint((magnitude[high] - anchor) / radius * levels)
        codes = np.clip(codes, 0, levels).astype(np.int64)
    else:
        codes = np.zeros(int(high.sum()), dtype=np.int64)
    signs = np.where(w[high] < 0, -1, 1).astype(np.int8)

    return QuantizedUpdate(d, classes.astype(np.uint8), codes, signs, anchor, radius, bits)


def decode_mixed(update):
    """Reconstruct the vector carried by a :class:`QuantizedUpdate`.

    Raises
    ------
    MalformedPayload
        If the update's fields disagree with each other.
    """
    d = int(update.d)
    classes = np.asarray(update.classes)
    codes = np.asarray(update.high_codes, dtype=np.int64)
    signs = np.asarray(update.high_signs)
    levels = 2 ** int(update.bits) - 1

    if classes.shape != (d,):
        raise MalformedPayload(f"classes has shape {classes.shape}, expected ({d},)")
    if not np.all(np.isin(classes, list(ElementClass))):
        raise MalformedPayload("classes holds unknown element classes")
    high = classes == ElementClass.HIGH
    n_high = int(high.sum())
    if codes.size != n_high or signs.size != n_high:
        raise MalformedPayload(f"{n_high} High elements but {codes.size} codes and {signs.size} signs")
    if np.any(codes < 0) or np.any(codes > levels):
        raise MalformedPayload(f"High codes must lie in [0, {levels}]")
    if update.anchor < 0 or update.grid_radius < 0:
        raise MalformedPayload("anchor and grid_radius must be non-negative")
    if n_high == 0 and update.anchor != 0:
        raise MalformedPayload("an update without High elements must have a zero anchor")

    half = update.anchor / 2
    out = np.where(classes == ElementClass.LOW_POS, half, -half)
    out[high] = signs * (update.anchor + update.grid_radius * (codes / levels))
    return out


@dataclass(frozen=True, eq=False)
class UniformUpdate:
    """Every element on a symmetric ``2**bits``-point grid over ``[-max|w|, max|w|]``.

    At 32 bits or more the values are carried unquantized.
    """

    d: int
    codes: np.ndarray
    norm: float
    bits: int
    values: np.ndarray = None
    is_zero: bool = False

    high_fraction = 1.0

    @property
    def payload_bits(self):
        return self.d * int(self.bits) + RADIUS_BITS

    def decode(self):
        if self.values is not None:
            return self.values.copy()
        levels = 2 ** int(self.bits) - 1
        return self.norm * (2 * (self.codes / levels) - 1)


def encode_uniform(delta_w, bits):
    """Uniform fixed-width baseline.

    Examples
    --------
    >>> encode_uniform([1.0, -1.0], bits=2).decode()
    array([ 1., -1.])
    """
    w = as_vector(delta_w, "delta_w")
    bits = int(bits)
    if bits < 1:
        raise ValueError("bits must be >= 1")
    norm = float(np.max(np.abs(w), initial=0.0))
    if bits >= LOSSLESS_BITS:
        return UniformUpdate(w.size, None, norm, bits, values=w.copy(), is_zero=norm == 0)
    if norm == 0:
        logger.debug("all-zero update of dimension %d", w.size)
        return UniformUpdate(w.size, np.zeros(w.size, dtype=np.int64), 0.0, bits, is_zero=True)

    levels = 2 ** bits - 1
    codes = np.clip(np.rint((w + norm) / (2 * norm) * levels), 0, levels).astype(np.int64)
    return UniformUpdate(w.size, codes, norm, bits)


@dataclass(frozen=True, eq=False)
class SparseUpdate:
    """Top-q payload: indices and quantized values of the kept entries."""

    d: int
    indices: np.ndarray
    codes: np.ndarray
    scale: float
    bits: int
    charge_indices: bool = False
    is_zero: bool = False

    @property
    def kept(self):
        return int(self.indices.size)

    @property
    def high_fraction(self):
        return self.kept / self.d

    @property
    def payload_bits(self):
        per_entry = int(self.bits) + (ceil_log2(self.d) if self.charge_indices else 0)
        return self.kept * per_entry + RADIUS_BITS

    def decode(self):
        out = np.zeros(self.d)
        levels = 2 ** int(self.bits) - 1
        out[self.indices] = self.scale * (2 * (self.codes / levels) - 1)
        return out


def encode_topq(delta_w, q_fraction, bits, charge_indices=False):
    """Keep the ``ceil(q d)`` largest-magnitude entries and quantize them uniformly.

    Kept values share a symmetric grid over the largest kept magnitude, so the
    largest entry is recovered exactly. Magnitude ties keep the lower index.

    Examples
    --------
    >>> encode_topq([3.0, 1.0, 2.0, 0.0], q_fraction=0.5, bits=8).indices
    array([0, 2])
    """
    w = as_vector(delta_w, "delta_w")
    d = w.size
    if not 0 < q_fraction <= 1:
        raise ValueError("q_fraction must lie in (0,1]")
    bits = int(bits)
    if bits < 1:
        raise ValueError("bits must be >= 1")

    kept = min(d, max(1, math.ceil(round(q_fraction * d, 9))))
    indices = np.sort(np.argsort(-np.abs(w), kind="stable")[:kept])
    values = w[indices]
    scale = float(np.max(np.abs(values), initial=0.0))
    if scale == 0:
        logger.debug("all-zero update of dimension %d", d)
        codes = np.full(kept, 2 ** bits - 1, dtype=np.int64)
        return SparseUpdate(d, indices, codes, 0.0, bits, charge_indices, is_zero=True)

    levels = 2 ** bits - 1
    codes = np.clip(np.rint((values + scale) / (2 * scale) * levels), 0, levels).astype(np.int64)
    return SparseUpdate(d, indices, codes, scale, bits, charge_indices)


def overhead_reduction(s_percent, b, b1=32):
    """Closed-form overhead reduction ``100 - 100/b1 - s (b - 1) / b1`` in percent.

    Examples
    --------
    >>> round(overhead_reduction(0.8574, 10, 32), 2)
    96.63
    """
    if b1 < 1:
        raise ValueError("b1 must be >= 1")
    return 100.0 - 100.0 / b1 - s_percent * (b - 1) / b1


def measured_overhead_reduction(payload_bits, d, b1=32):
    """Overhead reduction from observed payload sizes, ``100 (1 - mean(bits) / (b1 d))``."""
    payload_bits = np.asarray(payload_bits, dtype="float64")
    if payload_bits.size == 0:
        return float("nan")
    return 100.0 * (1.0 - payload_bits.mean() / (b1 * d))


class Quantizer(ABC):
    """A per-user update codec."""

    name = None

    @abstractmethod
    def encode(self, delta_w):
        """Encode ``delta_w``; the result has ``decode()``, ``payload_bits`` and ``high_fraction``."""


class MixedResolution(Quantizer):
    """Adaptive mixed-resolution codec with threshold ``lam`` and ``bits``-wide High codes."""

    name = "mixed"

    def __init__(self, lam, bits):
        self.spec = QuantSpec(lam, bits)

    @property
    def bits(self):
        return int(self.spec.bits)

    def encode(self, delta_w):
        return encode_mixed(delta_w, self.spec)


class Uniform(Quantizer):
    name = "uniform"

    def __init__(self, bits):
        self.bits = int(bits)

    def encode(self, delta_w):
        return encode_uniform(delta_w, self.bits)


class TopQ(Quantizer):
    name = "topq"

    def __init__(self, q_fraction, bits, charge_indices=False):
        self.q_fraction = q_fraction
        self.bits = int(bits)
        self.charge_indices = charge_indices

    def encode(self, delta_w):
        return encode_topq(delta_w, self.q_fraction, self.bits, self.charge_indices)
