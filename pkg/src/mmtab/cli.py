"""Command line entry point: ``mmtab run | synth | importance | report``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import MmtabError

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


def _cmd_run(args) -> int:
    from .bench.runner import RunConfig, run
    config = RunConfig.load(args.config)
    result = run(config, out_dir=args.out, workers=args.workers)
    out = Path(args.out or config.output_dir or "results")
    print((out / "results.txt").read_text(encoding="utf-8"), end="")
    skipped = [r for r in result.records if r["status"] == "skipped"]
    for r in skipped:
        print(f"skipped {r['method']} on {r['dataset']} (seed {r['seed']}): {r['reason']}", file=sys.stderr)
    for e in result.errors:
        print(f"error: {e}", file=sys.stderr)
    return result.exit_code


def _cmd_synth(args) -> int:
    from .bench.synthetic import SyntheticSpec, gen_synthetic
    from .frame import write_csv
    spec = SyntheticSpec.from_json(Path(args.spec).read_text(encoding="utf-8"))
    train, test = gen_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(train, out / "train.csv")
    write_csv(test, out / "test.csv")
    print(f"wrote {train.n_rows} train and {test.n_rows} test rows to {out}")
    return EXIT_OK


def _cmd_importance(args) -> int:
    from .bench.runner import refit_from_manifest
    from .evalkit import permutation_importance
    from .frame import read_csv
    fitted, cell = refit_from_manifest(args.model)
    ds = cell["dataset"]
    data = read_csv(args.data, ds.get("type_overrides") or {}, target=ds["target"], task=ds["task"])
    columns = args.column or [c for c in data.feature_names]
    for col in columns:
        imp = permutation_importance(fitted, data, col, cell["metric"], repeats=args.repeats, seed=args.seed)
        print(f"{col}\t{imp:.6f}")
    return EXIT_OK


def _cmd_report(args) -> int:
    from .evalkit import read_results_csv, render_table
    rows = [r for r in read_results_csv(args.results) if r.get("status", "ok") == "ok"]
    print(render_table(rows), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmtab", description="AutoML benchmark for multimodal tables")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run strategies over datasets from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--out")
    r.add_argument("--workers", type=int)
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("synth", help="write a synthetic train/test pair from a JSON spec")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_synth)

    i = sub.add_parser("importance", help="permutation importance of original columns")
    i.add_argument("--model", required=True, help="per-cell model manifest written by `run`")
    i.add_argument("--data", required=True, help="CSV to score on, usually the test split")
    i.add_argument("--column", action="append", help="column to shuffle (repeatable; default all)")
    i.add_argument("--repeats", type=int, default=5)
    i.add_argument("--seed", type=int, default=0)
    i.set_defaults(func=_cmd_importance)

    rp = sub.add_parser("report", help="render a results CSV as a table")
    rp.add_argument("--results", required=True)
    rp.set_defaults(func=_cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (MmtabError, OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
