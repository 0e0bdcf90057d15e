"""Coefficient-domain image model.

Each component stores its blocks in scan order as flat arrays:

* ``dc_size`` / ``dc_bits``: the DC-difference VLI code of every block, kept
  exactly as it appears in the stream (never integrated to absolute DC);
* ``offsets`` plus flat ``r`` / ``v``: the non-EOB ``(r, v)`` pairs of every
  block, ZRL included as ``(15, 0)``;
* ``eob``: whether the block ends with an explicit EOB.

The per-block :class:`Block` view exists for tests and debugging; the cipher
and feature code work on the flat arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from ..errors import ContractError
from .huffman import HuffmanTable
from .runlength import RvPair
from .vli import VliCode

COMPONENT_NAMES = ("Y", "U", "V")


class Block(NamedTuple):
    dc: VliCode
    pairs: tuple
    eob_present: bool

    @property
    def blksize(self) -> int:
        return len(self.pairs)


@dataclass(eq=False)
class Component:
    cid: int
    h: int
    v: int
    tq: int
    td: int
    ta: int
    blocks_w: int
    blocks_h: int
    dc_size: np.ndarray
    dc_bits: np.ndarray
    eob: np.ndarray
    offsets: np.ndarray
    r: np.ndarray
    v_: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.dc_size = np.ascontiguousarray(self.dc_size, dtype=np.uint8)
        self.dc_bits = np.ascontiguousarray(self.dc_bits, dtype=np.uint16)
        self.eob = np.ascontiguousarray(self.eob, dtype=bool)
        self.offsets = np.ascontiguousarray(self.offsets, dtype=np.int64)
        self.r = np.ascontiguousarray(self.r, dtype=np.uint8)
        self.v_ = np.ascontiguousarray(self.v_, dtype=np.int16)

    @property
    def values(self) -> np.ndarray:
        return self.v_

    @property
    def blknum(self) -> int:
        return int(self.dc_size.size)

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def pair_block(self) -> np.ndarray:
        """Block index of every flat pair."""
        return np.repeat(np.arange(self.blknum), self.counts)

    def block(self, j: int) -> Block:
        lo, hi = int(self.offsets[j]), int(self.offsets[j + 1])
        g = int(self.dc_size[j])
        bits = format(int(self.dc_bits[j]), f"0{g}b") if g else ""
        pairs = tuple(RvPair(int(a), int(b)) for a, b in zip(self.r[lo:hi], self.v_[lo:hi]))
        return Block(VliCode(g, bits), pairs, bool(self.eob[j]))

    def grid_position(self, j: int, mcus_x: int):
        """(bx, by) of scan-order block ``j`` in the component's block grid."""
        per = self.h * self.v
        mcu, within = divmod(j, per)
        my, mx = divmod(mcu, mcus_x)
        return mx * self.h + within % self.h, my * self.v + within // self.h

    def with_arrays(self, **arrays) -> "Component":
        if "v" in arrays:
            arrays["v_"] = arrays.pop("v")
        return replace(self, **arrays)

    def check(self):
        n = self.blknum
        if not (self.dc_bits.size == self.eob.size == n and self.offsets.size == n + 1):
            raise ContractError("component arrays disagree on block count")
        if self.offsets[0] != 0 or self.offsets[-1] != self.r.size or self.r.size != self.v_.size:
            raise ContractError("pair offsets inconsistent with pair arrays")
        counts = self.counts
        if (counts < 0).any():
            raise ContractError("negative pair count")
        zero = self.v_ == 0
        if (zero & (self.r != 15)).any():
            raise ContractError("zero-valued pair that is not ZRL")
        if self.r.size and self.r.max() > 15:
            raise ContractError("run length above 15")
        spans = np.bincount(self.pair_block, weights=self.r.astype(np.int64) + 1, minlength=n) if self.r.size else None
        if spans is not None:
            if (spans > 63).any():
                raise ContractError("pairs overflow 63 AC coefficients")
            if ((~self.eob) & (spans != 63)).any():
                raise ContractError("block without EOB must fill 63 coefficients")
        elif (~self.eob).any():
            raise ContractError("block without EOB must fill 63 coefficients")

    def same_blocks(self, other: "Component") -> bool:
        return (
            self.blknum == other.blknum
            and np.array_equal(self.dc_size, other.dc_size)
            and np.array_equal(self.dc_bits, other.dc_bits)
            and np.array_equal(self.eob, other.eob)
            and np.array_equal(self.offsets, other.offsets)
            and np.array_equal(self.r, other.r)
            and np.array_equal(self.v_, other.v_)
        )

    def __eq__(self, other):
        if not isinstance(other, Component):
            return NotImplemented
        return (
            (self.cid, self.h, self.v, self.tq, self.td, self.ta, self.blocks_w, self.blocks_h)
            == (other.cid, other.h, other.v, other.tq, other.td, other.ta, other.blocks_w, other.blocks_h)
            and self.same_blocks(other)
        )


@dataclass(eq=False)
class CoeffImage:
    width: int
    height: int
    components: list
    quant_tables: dict  # id -> raw DQT entry bytes (precision/id byte + table)
    huffman: dict  # (class, id) -> HuffmanTable
    segments: list = field(default_factory=list)  # other header segments as (marker, payload)
    mcus_x: int = 0
    mcus_y: int = 0

    def __post_init__(self):
        if len(self.components) != 3:
            raise ContractError("exactly three components are supported")

    def __getitem__(self, c) -> Component:
        if isinstance(c, str):
            c = COMPONENT_NAMES.index(c)
        return self.components[c]

    def blknum(self, c) -> int:
        return self[c].blknum

    @property
    def n_mcu(self) -> int:
        return self.mcus_x * self.mcus_y

    @property
    def sampling(self) -> tuple:
        return tuple((c.h, c.v) for c in self.components)

    def with_components(self, components) -> "CoeffImage":
        return replace(self, components=list(components))

    def with_huffman(self, huffman) -> "CoeffImage":
        return replace(self, huffman=dict(huffman))

    def check(self):
        for comp in self.components:
            comp.check()
            if comp.blknum != self.n_mcu * comp.h * comp.v:
                raise ContractError("block count does not match the MCU grid")

    def same_blocks(self, other: "CoeffImage") -> bool:
        return len(self.components) == len(other.components) and all(
            a.same_blocks(b) for a, b in zip(self.components, other.components)
        )

    def __eq__(self, other):
        if not isinstance(other, CoeffImage):
            return NotImplemented
        return (
            (self.width, self.height, self.mcus_x, self.mcus_y) == (other.width, other.height, other.mcus_x, other.mcus_y)
            and all(a == b for a, b in zip(self.components, other.components))
            and self.quant_tables == other.quant_tables
            and self.huffman == other.huffman
        )

    def debug_dump(self) -> str:
        """One line per block: component, index, g_DC, DC bits, pair list, EOB flag."""
        lines = []
        for name, comp in zip(COMPONENT_NAMES, self.components):
            for j in range(comp.blknum):
                blk = comp.block(j)
                pairs = " ".join(f"({p.r},{p.v})" for p in blk.pairs)
                lines.append(
                    f"{name} {j} {blk.dc.group} {blk.dc.bits or '-'} [{pairs}] {'EOB' if blk.eob_present else 'FULL'}"
                )
        return "\n".join(lines) + "\n"


def component_from_blocks(template: Component, blocks) -> Component:
    """Build a component's arrays from :class:`Block` objects (used by tests)."""
    dc_size, dc_bits, eob, counts, rr, vv = [], [], [], [], [], []
    for blk in blocks:
        g, bits = blk.dc
        dc_size.append(g)
        dc_bits.append(int(bits, 2) if g else 0)
        eob.append(blk.eob_present)
        counts.append(len(blk.pairs))
        for r, v in blk.pairs:
            rr.append(r)
            vv.append(v)
    offsets = np.concatenate([[0], np.cumsum(counts, dtype=np.int64)])
    return template.with_arrays(
        dc_size=np.array(dc_size), dc_bits=np.array(dc_bits), eob=np.array(eob, dtype=bool),
        offsets=offsets, r=np.array(rr, dtype=np.uint8), v=np.array(vv, dtype=np.int16),
    )
