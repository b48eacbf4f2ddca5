"""Parameter-irrelevance sweep on MNIST: 4 engines x (base + 6 swaps) x seeds.

Usage: python scripts/run_sweep.py [--seeds 3] [--out out/sweep_mnist]

Writes sweep_cells.csv, sweep_table.md (kNN accuracy and V-score tables) and
sweep.svg. Set GDR_CACHE_DIR to reuse kNN graphs between runs.
"""

import argparse
import time
from pathlib import Path

from gdr.bench import ENGINES, base_deltas, engine_config, sweep, sweep_table, write_cells
from gdr.config import SWEEP_SWITCHES
from gdr.pipeline import load_source


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--engines", default=",".join(ENGINES))
    ap.add_argument("--epochs", type=int, default=500)
    ap.add_argument("--out", default="out/sweep_mnist")
    args = ap.parse_args(argv)

    data = load_source("mnist")
    engines = {e: engine_config(e, epochs=args.epochs) for e in args.engines.split(",")}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    cells = sweep(data, engines, SWEEP_SWITCHES, tuple(range(args.seeds)), out_dir=out,
                  source={"dataset": "mnist"})
    write_cells(cells, out / "sweep_cells.csv")
    text = [f"## {m}\n\n{sweep_table(cells, m).format()}" for m in ("knn_accuracy", "v_score")]
    (out / "sweep_table.md").write_text("\n\n".join(text) + "\n")
    print("\n\n".join(text))
    worst = sorted(base_deltas(cells).items(), key=lambda kv: -abs(kv[1]))[:5]
    print("\nlargest |swap - base| kNN deltas:")
    for (e, s), v in worst:
        print(f"  {e:>15} {s:<16} {v:+.2f}")
    print(f"\n{len(cells)} runs in {(time.perf_counter() - t0) / 60:.1f} min")


if __name__ == "__main__":
    main()
