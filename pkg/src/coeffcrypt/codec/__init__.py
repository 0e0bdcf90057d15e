"""Baseline JPEG coefficient-domain codec."""

from .huffman import HuffmanTable, standard_table
from .jpeg import decode_jpeg, encode_jpeg, required_symbols, resolve_tables
from .kernels import BACKEND
from .model import COMPONENT_NAMES, Block, CoeffImage, Component, component_from_blocks
from .runlength import AC_COUNT, EOB, ZRL, RvPair, pairs_from_zigzag, zigzag_from_pairs
from .vli import MAX_MAGNITUDE, VliCode, vli_decode, vli_encode, vli_size

__all__ = [
    "AC_COUNT", "BACKEND", "Block", "COMPONENT_NAMES", "CoeffImage", "Component", "EOB",
    "HuffmanTable", "MAX_MAGNITUDE", "RvPair", "VliCode", "ZRL", "component_from_blocks",
    "decode_jpeg", "encode_jpeg", "pairs_from_zigzag", "required_symbols", "resolve_tables",
    "standard_table", "vli_decode", "vli_encode", "vli_size", "zigzag_from_pairs",
]
