"""Command line: ``gdr reduce | sweep | bench``."""

from __future__ import annotations

import argparse
import json
import re
import sys
from dataclasses import replace
from pathlib import Path

from .bench import ENGINES, bench, engine_config, sweep, sweep_table, write_cells
from .config import PRESETS, SWEEP_SWITCHES, PipelineConfig, load_config_file, preset
from .pipeline import load_source, rerun, run_pipeline

# config field -> CLI flag, for error messages and the override loop
FLAGS = {
    "normalized": "--normalized", "init": "--init", "pseudo_distance": "--pseudo-distance",
    "symmetrization": "--symmetrization", "sym_attraction": "--sym-attraction", "ab": "--ab",
    "loss": "--loss", "sampling": "--sampling", "apply": "--apply",
    "amplification": "--amplify", "epochs": "--epochs", "lr": "--lr", "neg_rate": "--neg-rate",
    "clip": "--clip", "seed": "--seed", "workers": "--workers", "k": "--k",
    "perplexity": "--perplexity", "calibration": "--calibration", "dim": "--dim",
    "knn": "--knn", "theta": "--theta", "exaggeration": "--exaggeration",
    "override_coupling": "--override-coupling", "loss_every": "--loss-every",
    "angle_every": "--angle-every", "frob_form": "--frob-form",
}


def _bool(text):
    v = text.lower()
    if v in ("true", "1", "yes", "on"):
        return True
    if v in ("false", "0", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _add_source(p):
    src = p.add_argument_group("dataset")
    src.add_argument("--dataset", help="CSV file, IDX file or directory, or 'mnist'")
    src.add_argument("--generator", help="synthetic data, e.g. 'blobs:n=2000,c=5,dim=10,sep=10'")
    src.add_argument("--label-column", type=int, default=None, help="0-based CSV label column")
    src.add_argument("--n", type=int, default=None, help="resample to this many points")
    src.add_argument("--sample-seed", type=int, default=0)


def _add_switches(p):
    p.add_argument("--config", help="flat JSON file of config keys (flags override it)")
    p.add_argument("--preset", choices=PRESETS, default=None)
    s = p.add_argument_group("switches")
    s.add_argument("--normalized", type=_bool)
    s.add_argument("--init", choices=("spectral", "random", "auto"))
    s.add_argument("--pseudo-distance", type=_bool)
    s.add_argument("--symmetrization", choices=("probabilistic", "average"))
    s.add_argument("--sym-attraction", type=_bool)
    s.add_argument("--ab", choices=("fixed", "fit"))
    s.add_argument("--loss", choices=("kl", "frobenius"))
    s.add_argument("--sampling", choices=("explicit", "scalar_sampling", "barnes_hut"))
    s.add_argument("--apply", choices=("collected", "in_loop"))
    s.add_argument("--amplify", type=_bool)
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--neg-rate", type=int)
    s.add_argument("--clip", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--k", type=int, help="neighbors per point")
    s.add_argument("--perplexity", type=float)
    s.add_argument("--calibration", choices=("umap", "perplexity"))
    s.add_argument("--dim", type=int)
    s.add_argument("--knn", choices=("auto", "exact", "nn_descent"))
    s.add_argument("--theta", type=float)
    s.add_argument("--exaggeration", type=float)
    s.add_argument("--override-coupling", type=_bool)
    s.add_argument("--loss-every", type=int)
    s.add_argument("--angle-every", type=int)
    s.add_argument("--frob-form", choices=("exact", "printed"))


def _flag_message(err):
    """Rewrite config field names inside '(conflict: ...)' as the CLI flags that set them."""
    msg = str(err)

    def sub(m):
        body = m.group(1)
        for field, flag in sorted(FLAGS.items(), key=lambda kv: -len(kv[0])):
            body = re.sub(rf"\b{field}\b", flag, body)
        return f"(conflicting flags: {body})"

    return re.sub(r"\(conflict: ([^)]*)\)", sub, msg)


def build_config(args):
    """preset < config file < flags. Returns a validated PipelineConfig."""
    file_cfg = load_config_file(args.config) if args.config else {}
    name = args.preset or file_cfg.get("preset", "gdr")
    cfg = preset(name)
    if file_cfg:
        cfg = PipelineConfig.from_dict({**cfg.to_dict(), **file_cfg})
    overrides = {}
    for field in FLAGS:
        attr = "amplify" if field == "amplification" else field
        val = getattr(args, attr, None)
        if val is not None:
            overrides[field] = val
    if overrides.get("normalized") is not None and "amplification" not in overrides:
        # the normalized switch carries amplification with it
        overrides["amplification"] = None
    cfg = replace(cfg, **overrides)
    return cfg.validate()


def _fail(err):
    print(f"error: {_flag_message(err)}", file=sys.stderr)
    return 2


def cmd_reduce(args):
    if args.from_report:
        rec, rep = rerun(args.from_report, out_dir=args.out)
    else:
        try:
            cfg = build_config(args)
        except ValueError as err:
            return _fail(err)
        source = {"dataset": args.dataset, "generator": args.generator,
                  "label_column": args.label_column, "n": args.n, "sample_seed": args.sample_seed}
        data = load_source(**source)
        rec, rep = run_pipeline(data, cfg, out_dir=args.out, source=source)
    print(json.dumps({"config_hash": rep.config_hash, "timings": rep.timings,
                      "metrics": rep.metrics, "artifacts": rep.artifacts}, indent=2))
    return 0


def cmd_sweep(args):
    try:
        base = build_config(args)
        switches = [s for s in args.switches.split(",") if s] if args.switches is not None \
            else list(SWEEP_SWITCHES)
        bad = set(switches) - set(SWEEP_SWITCHES)
        if bad:
            raise ValueError(f"unknown switches {sorted(bad)}")
        engines = {}
        for e in (args.engines.split(",") if args.engines else [base.preset]):
            engines[e] = base if e == base.preset and not args.engines else \
                engine_config(e, epochs=base.epochs, workers=base.workers)
    except ValueError as err:
        return _fail(err)
    source = {"dataset": args.dataset, "generator": args.generator,
              "label_column": args.label_column, "n": args.n, "sample_seed": args.sample_seed}
    data = load_source(**source)
    seeds = tuple(range(args.seeds))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cells = sweep(data, engines, switches, seeds, out_dir=out, source=source)
    write_cells(cells, out / "sweep_cells.csv")
    text = []
    for metric in ("knn_accuracy", "v_score"):
        text.append(f"## {metric}\n\n" + sweep_table(cells, metric).format())
    (out / "sweep_table.md").write_text("\n\n".join(text) + "\n")
    print("\n\n".join(text))
    return 0


def cmd_bench(args):
    sizes = [int(float(s)) for s in args.sizes.split(",")]
    engines = args.engines.split(",") if args.engines else list(ENGINES)
    bad = set(engines) - set(ENGINES)
    if bad:
        return _fail(ValueError(f"unknown engines {sorted(bad)}"))
    data = load_source(args.dataset, args.generator, args.label_column)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        rows = bench(data, args.axis, sizes, engines, epochs=args.epochs, seed=args.seed,
                     out_csv=out / f"bench_{args.axis}.csv", plot_path=out / f"bench_{args.axis}.svg",
                     workers=args.workers)
    except MemoryError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    for r in rows:
        print(f"{r['engine']:>15} {args.axis}={r['size']:>7}  optimize {r['optimize_ms'] / 1e3:8.2f} s"
              f"  total {r['total_ms'] / 1e3:8.2f} s")
    return 0


def make_parser():
    ap = argparse.ArgumentParser(prog="gdr", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("reduce", help="run one configuration end to end")
    _add_source(r)
    _add_switches(r)
    r.add_argument("--from-report", help="re-run the snapshot stored in a RunReport JSON")
    r.add_argument("--out", default="out")
    r.set_defaults(func=cmd_reduce)

    s = sub.add_parser("sweep", help="base run plus one run per swapped switch")
    _add_source(s)
    _add_switches(s)
    s.add_argument("--switches", default=None,
                   help=f"comma list from {','.join(SWEEP_SWITCHES)} (default all; '' for none)")
    s.add_argument("--engines", default=None, help=f"comma list from {','.join(ENGINES)}")
    s.add_argument("--seeds", type=int, default=1)
    s.add_argument("--out", default="out/sweep")
    s.set_defaults(func=cmd_sweep)

    b = sub.add_parser("bench", help="runtime scaling over points or dimensions")
    _add_source(b)
    b.add_argument("--axis", choices=("n", "D"), default="n")
    b.add_argument("--sizes", required=True, help="comma list, e.g. 7500,15000,30000,60000")
    b.add_argument("--engines", default=None, help=f"comma list from {','.join(ENGINES)}")
    b.add_argument("--epochs", type=int, default=500)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--out", default="out/bench")
    b.set_defaults(func=cmd_bench)
    return ap


def main(argv=None):
    args = make_parser().parse_args(argv)
    if getattr(args, "from_report", None) is None and args.command != "bench" \
            and (args.dataset is None) == (args.generator is None):
        print("error: give exactly one of --dataset or --generator", file=sys.stderr)
        return 2
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
