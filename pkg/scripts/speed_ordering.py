"""Optimize-stage timings at MNIST scale and the two speed-ordering ratios.

Usage: python scripts/speed_ordering.py [--n 60000] [--epochs 500]

Without the full 60k MNIST the bundled subset is upsampled with jittered
copies; timings depend on n and k, not on image content.
"""

import argparse
from pathlib import Path

from gdr.bench import ENGINES, bench
from gdr.pipeline import load_source


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=60_000)
    ap.add_argument("--epochs", type=int, default=500)
    ap.add_argument("--out", default="out/speed")
    args = ap.parse_args(argv)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = load_source("mnist")
    rows = bench(data, "n", [args.n], ENGINES, epochs=args.epochs, knn="nn_descent",
                 out_csv=out / "speed.csv")
    t = {r["engine"]: r["optimize_ms"] / 1e3 for r in rows}
    for e, s in t.items():
        print(f"{e:>15}  optimize {s:8.1f} s")
    print(f"gdr / umap             {t['gdr'] / t['umap']:.2f}  (target <= 1.1)")
    print(f"tsne / gdr_normalized  {t['tsne'] / t['gdr_normalized']:.1f}  (target >= 5)")


if __name__ == "__main__":
    main()
