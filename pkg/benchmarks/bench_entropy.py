"""Compare the compiled and pure-Python scan coders on the desk corpus.

    python3 benchmarks/bench_entropy.py [--repeat N]
"""

import argparse
import time


from coeffcrypt.codec import decode_jpeg, encode_jpeg, jpeg, kernels
from coeffcrypt.corpus import desk_corpus


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def run(repeat=3, n=20):
    files = [data for _, data in desk_corpus(n)]
    imgs = [decode_jpeg(d) for d in files]
    rows = []
    for name, dec, enc in (("python", kernels.python_decode_scan, kernels.python_encode_scan),
                           ("cython", kernels.compiled_decode_scan, kernels.compiled_encode_scan)):
        if dec is None:
            rows.append((name, None, None))
            continue
        saved = (jpeg.kernels.decode_scan, jpeg.kernels.encode_scan)
        jpeg.kernels.decode_scan, jpeg.kernels.encode_scan = dec, enc
        try:
            out = [decode_jpeg(d) for d in files]
            if not all(a == b for a, b in zip(out, imgs)):
                raise AssertionError(f"{name} backend decodes differently")
            td = _time(lambda: [decode_jpeg(d) for d in files], repeat)
            te = _time(lambda: [encode_jpeg(i) for i in imgs], repeat)
        finally:
            jpeg.kernels.decode_scan, jpeg.kernels.encode_scan = saved
        rows.append((name, td, te))
    return rows


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    rows = run(args.repeat)
    print(f"active backend: {kernels.BACKEND}")
    print("backend,decode_s,encode_s")
    for name, td, te in rows:
        if td is None:
            print(f"{name},n/a,n/a")
        else:
            print(f"{name},{td:.4f},{te:.4f}")
    times = {name: (td, te) for name, td, te in rows if td is not None}
    if len(times) == 2:
        (pd, pe), (cd, ce) = times["python"], times["cython"]
        print(f"speedup,{pd / cd:.1f}x,{pe / ce:.1f}x")


if __name__ == "__main__":
    main()
