"""Variable-length integer (VLI) codes: a group index (bit count) plus raw bits.

Positive values are stored in natural binary; negative values as the
one's complement of ``|value|``.  Group 0 holds only the value 0.
"""

from __future__ import annotations

from typing import NamedTuple

from ..errors import FormatError, RangeError

MAX_MAGNITUDE = (1 << 15) - 1


class VliCode(NamedTuple):
    group: int
    bits: str


def vli_size(value: int) -> int:
    return abs(int(value)).bit_length()


def vli_bits(value: int) -> int:
    """Raw bit pattern of ``value`` as an unsigned integer of ``vli_size(value)`` bits."""
    value = int(value)
    if value >= 0:
        return value
    return value + (1 << (-value).bit_length()) - 1


def vli_value(group: int, bits: int) -> int:
    """Inverse of :func:`vli_bits`."""
    if group == 0:
        return 0
    if bits >> (group - 1):
        return bits
    return bits - (1 << group) + 1


def vli_encode(value: int) -> VliCode:
    value = int(value)
    if abs(value) > MAX_MAGNITUDE:
        raise RangeError(f"|{value}| exceeds the 15-bit VLI range")
    group = vli_size(value)
    if group == 0:
        return VliCode(0, "")
    return VliCode(group, format(vli_bits(value), f"0{group}b"))


def vli_decode(code) -> int:
    group, bits = code
    if len(bits) != group:
        raise FormatError(f"VLI group {group} needs {group} bits, got {len(bits)}")
    if group == 0:
        return 0
    if group > 15 or set(bits) - {"0", "1"}:
        raise FormatError(f"malformed VLI code {code!r}")
    return vli_value(group, int(bits, 2))
