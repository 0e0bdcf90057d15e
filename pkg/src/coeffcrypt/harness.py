"""Evaluation harness: labeled corpora and retrieval precision through the full protocol."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ContractError
from .index import precision
from .protocol import Config, System

JPEG_SUFFIXES = (".jpg", ".jpeg", ".jpe", ".jfif")


def find_jpegs(root) -> list:
    root = Path(root)
    if root.is_file():
        return [root]
    return sorted(p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in JPEG_SUFFIXES)


def load_labeled(root) -> list:
    """Directory-per-category corpus; returns ``[(category, relative path, bytes)]``."""
    root = Path(root)
    out = []
    for p in find_jpegs(root):
        rel = p.relative_to(root)
        if len(rel.parts) < 2:
            raise ContractError(f"{rel} is not inside a category directory")
        out.append((rel.parts[0], str(rel), p.read_bytes()))
    if not out:
        raise ContractError(f"no JPEG files under {root}")
    return out


@dataclass
class PrecisionRun:
    n_sources: int
    k_g: int
    m: int
    per_query: list  # (query name, category, precision)
    hits: list  # (query name, category, SearchResult-like list of (iid, source, distance, correct))
    system: System

    @property
    def mean(self) -> float:
        return float(np.mean([p for _, _, p in self.per_query])) if self.per_query else 0.0


def partition(n_items: int, n_sources: int, seed: int) -> list:
    """Owner index per item: a seeded shuffle split into near-equal parts."""
    if n_sources < 1 or n_sources > n_items:
        raise ContractError(f"cannot spread {n_items} images over {n_sources} owners")
    order = np.random.default_rng(seed).permutation(n_items)
    owner = np.empty(n_items, dtype=np.int64)
    for j, part in enumerate(np.array_split(order, n_sources)):
        owner[part] = j
    return owner.tolist()


def eval_precision(labeled, n_sources: int = 1, m: int = 10, config: Config | None = None,
                   k_g: int | None = None, queries=None) -> PrecisionRun:
    """Outsource ``labeled`` across ``n_sources`` owners and query every image (or ``queries``).

    One user is authorized by every owner and searches all sources at once;
    with a single source this is a single-source search under the owner's
    vocabulary, otherwise a merged search under the shared k_g vocabularies.
    """
    config = config or Config()
    if k_g is not None:
        config = replace(config, k_owner=k_g, k_global=k_g)
    labeled = list(labeled)
    system = System(config)
    owners = [f"o{j:02d}" for j in range(n_sources)]
    for oid in owners:
        system.add_owner(oid)
    assign = partition(len(labeled), n_sources, config.seed)
    categories, names = {}, {}
    for j, oid in enumerate(owners):
        batch = [(name, data) for (cat, name, data), a in zip(labeled, assign) if a == j]
        cats = [cat for (cat, _, _), a in zip(labeled, assign) if a == j]
        for iid, cat, (name, _) in zip(system.outsource(oid, batch), cats, batch):
            categories[iid] = cat
            names[iid] = name
    for oid in owners:
        system.authorize(oid, "evaluator")
    per_query, hits = [], []
    targets = range(len(labeled)) if queries is None else queries
    for q in targets:
        cat, name, data = labeled[q]
        out = system.query("evaluator", data, None, m)
        ranked = [(iid, src, dist, categories[iid] == cat) for iid, src, dist, _ in out.results]
        per_query.append((name, cat, precision(out.iids, categories, cat, m)))
        hits.append((name, cat, ranked))
    return PrecisionRun(n_sources, config.k_global, m, per_query, hits, system)
