"""Render every available figure for one or more run directories."""

import argparse
import os
import sys

from . import figures, loader


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="plot_all",
        description="Render learning curves, safe-set evolution and, when a "
                    "benchmark CSV is present, complexity panels.")
    parser.add_argument("run_dirs", nargs="+",
                        help="run directories written by the training CLI")
    parser.add_argument("--out", default="figs",
                        help="output directory for figures and summary CSVs")
    parser.add_argument("--bench", default=None,
                        help="benchmark CSV; <run_dir>/bench.csv is also "
                             "picked up automatically")
    args = parser.parse_args(argv)

    written = []
    try:
        runs = [loader.load_run(d) for d in args.run_dirs]
        os.makedirs(args.out, exist_ok=True)

        res = figures.plot_learning_curves(runs, args.out)
        written += [res["figure"], res["summary"]]

        for run in runs:
            if run.safe_sets:
                tag = run.name if len(runs) > 1 else ""
                res = figures.plot_safe_set_evolution(run, args.out, tag=tag)
                written += [res["figure"], res["summary"]]

        bench_paths = [args.bench] if args.bench else []
        bench_paths += [p for p in (os.path.join(d, "bench.csv")
                                    for d in args.run_dirs)
                        if os.path.isfile(p)]
        if bench_paths:
            res = figures.plot_complexity(bench_paths[0], args.out)
            written += [res["figure"], res["summary"]]
    except (loader.SchemaError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
