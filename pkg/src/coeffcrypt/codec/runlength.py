"""Zig-zag AC run-length coding into ``(r, v)`` pairs.

The terminal EOB ``(0, 0)`` is not materialized as a pair; it is reported as
the ``eob_present`` flag.  Runs of 16 zeros followed by more nonzero values
emit ZRL ``(15, 0)``.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

from ..errors import ContractError, FormatError

AC_COUNT = 63
EOB = (0, 0)
ZRL = (15, 0)


class RvPair(NamedTuple):
    r: int
    v: int

    @property
    def is_zrl(self) -> bool:
        return self.r == 15 and self.v == 0


def pairs_from_zigzag(ac: Sequence[int]):
    """Return ``(pairs, eob_present)`` for 63 AC values in zig-zag order."""
    if len(ac) != AC_COUNT:
        raise ContractError(f"expected {AC_COUNT} AC values, got {len(ac)}")
    pairs = []
    run = 0
    last_nonzero = max((i for i, x in enumerate(ac) if x), default=-1)
    for i in range(last_nonzero + 1):
        x = int(ac[i])
        if x == 0:
            run += 1
            continue
        while run > 15:
            pairs.append(RvPair(15, 0))
            run -= 16
        pairs.append(RvPair(run, x))
        run = 0
    return pairs, last_nonzero < AC_COUNT - 1


def zigzag_from_pairs(pairs, eob_present: bool = True) -> list:
    """Exact inverse of :func:`pairs_from_zigzag`."""
    out = [0] * AC_COUNT
    k = 0
    for r, v in pairs:
        if v == 0 and not (r == 15):
            raise FormatError(f"pair ({r}, 0) is neither EOB nor ZRL")
        if not 0 <= r <= 15:
            raise FormatError(f"run length {r} out of range")
        k += r
        if k >= AC_COUNT:
            raise FormatError("pairs overflow 63 AC coefficients")
        out[k] = int(v)
        k += 1
    if not eob_present and k != AC_COUNT:
        raise FormatError("block without EOB must fill all 63 coefficients")
    return out
