"""Barnes-Hut vs sampled repulsion angle over a GDR-normalized run.

Usage: python scripts/angle_agreement.py [--every 10] [--out out/angles]
"""

import argparse
from pathlib import Path

import numpy as np

from gdr.bench import engine_config
from gdr.pipeline import generate, run_pipeline
from gdr.plotting import plot_lines

DATASETS = ("blobs:n=2000,c=5,dim=10", "swiss_roll:n=5000")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--every", type=int, default=10)
    ap.add_argument("--epochs", type=int, default=500)
    ap.add_argument("--out", default="out/angles")
    args = ap.parse_args(argv)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    series = {}
    for spec in DATASETS:
        cfg = engine_config("gdr_normalized", angle_every=args.every, epochs=args.epochs)
        _, rep = run_pipeline(generate(spec), cfg, out_dir=out, prefix=spec.split(":")[0],
                              metrics=False)
        angles = np.asarray(rep.info["angles"])
        epochs = list(range(0, args.epochs, args.every)) + [args.epochs - 1]
        series[spec.split(":")[0]] = (epochs[:len(angles)], angles)
        print(f"{spec:<28} mean {angles.mean():.3f}  max {angles.max():.3f} rad")
    plot_lines(series, out / "angles.svg", "epoch", "mean angle (rad)")


if __name__ == "__main__":
    main()
