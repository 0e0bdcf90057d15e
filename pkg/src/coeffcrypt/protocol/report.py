"""Security accounting over a simulated workspace."""

from __future__ import annotations

import math

from ..cipher import encrypt_coefficients, gen_val_key, security_strength
from ..codec import decode_jpeg
from ..features import chi_square_uniform, value_histogram
from ..perm import KeySource

PUBLISHED_FEATURE_BITS = 642.0


def feature_table_bits(n_pmt1: int, n_pmt2: int) -> float:
    return 3 * n_pmt1 * math.lgamma(21) / math.log(2) + 3 * n_pmt2 * math.lgamma(11) / math.log(2)


def kba_row(img, iid, seed, n_values=(1, 5)) -> dict:
    """Chi-square (vs uniform) of the in-range value histogram, plain and per table count."""
    row = {"iid": iid, "chi2_plain": chi_square_uniform(value_histogram(img))}
    for n in n_values:
        src = KeySource.seeded(f"{seed}/kba/{iid}/{n}")
        cimg, _ = encrypt_coefficients(img, iid, gen_val_key(src, n, n), src)
        row[f"chi2_n{n}"] = chi_square_uniform(value_histogram(cimg))
    return row


def security_report(system) -> dict:
    cfg = system.config
    images = []
    for iid, enc in sorted(system.cs.images.items()):
        cimg = enc.decode()
        dc_bits = int(sum(int(c.dc_size.astype("int64").sum()) for c in cimg.components))
        terms = security_strength(cimg, enc.n_pmt1, enc.n_pmt2, encrypted_dc_bits=dc_bits)
        images.append({"iid": iid, "owner": enc.owner, **terms})
    kba = []
    for oid, owner in sorted(system.owners.items()):
        for iid, data in sorted(owner.plain.items()):
            kba.append(kba_row(decode_jpeg(data), iid, cfg.seed))
    totals = [r["total"] for r in images]
    return {
        "images": images,
        "kba": kba,
        "summary": {
            "n_images": len(images),
            "min_total_bits": min(totals) if totals else 0.0,
            "max_total_bits": max(totals) if totals else 0.0,
            "feature_table_bits": feature_table_bits(cfg.n_pmt1, cfg.n_pmt2),
            "published_feature_bits": PUBLISHED_FEATURE_BITS,
            "kba_flattened": all(r["chi2_n5"] < r["chi2_n1"] for r in kba),
        },
    }
