"""Command-line surface: gen-data, run, export-dot, compare.

Exit codes: 0 success, 1 runtime failure, 2 configuration/usage error.
"""

import argparse
import dataclasses
import json
import pathlib
import sys

from . import config as cfgmod
from . import datagen, engine
from .errors import ConfigurationError, DataFormatError
from .hierarchy import snapshot_to_dot


def _load_shards(resolved, out_dir=None):
    if resolved.data_dir is not None:
        return datagen.load_population(resolved.data_dir)
    return datagen.generate_population(resolved.population)


def cmd_gen_data(args):
    resolved = cfgmod.load_config(args.config)
    if resolved.population is None:
        raise ConfigurationError("gen-data needs a [population] section")
    shards, planted = datagen.generate_population(resolved.population)
    manifest = datagen.save_population(args.out, resolved.population, shards, planted)
    print(f"wrote {len(shards)} agent shard pairs; manifest at {manifest}")


def cmd_run(args):
    resolved = cfgmod.load_config(args.config)
    run_cfg = resolved.run
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if overrides:
        run_cfg = dataclasses.replace(run_cfg, **overrides)
        resolved = dataclasses.replace(resolved, run=run_cfg)
    shards, _ = _load_shards(resolved)
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    state = engine.run(run_cfg, shards)
    header = engine.metrics_header(run_cfg.schedule.max_levels + 1)
    engine.write_metrics_csv(out / "metrics.csv", header, state.metrics)
    snap_dir = out / "snapshots"
    snap_dir.mkdir(exist_ok=True)
    for snap in state.snapshots:
        with open(snap_dir / f"round_{snap['round']:06d}.json", "w") as fh:
            json.dump(snap, fh, indent=2, sort_keys=True)
            fh.write("\n")
    engine.write_final_state(out / "final_state.json", state)
    manifest = {
        "config": cfgmod.to_dict(resolved),
        "seed": run_cfg.seed,
        "version": "hierfed 0.1.0",
    }
    with open(out / "run_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if args.baseline:
        rows, _ = engine.run_fedavg_baseline(run_cfg, shards)
        engine.write_metrics_csv(out / "metrics_fedavg.csv", engine.BASELINE_HEADER, rows)
    print(f"run complete: {run_cfg.rounds} rounds, outputs under {out}")


def cmd_export_dot(args):
    try:
        with open(args.snapshot) as fh:
            snap = json.load(fh)
    except FileNotFoundError:
        raise DataFormatError(f"no such snapshot: {args.snapshot}") from None
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{args.snapshot}: {e}") from None
    if "levels" not in snap or "round" not in snap:
        raise DataFormatError(f"{args.snapshot}: not a hierarchy snapshot")
    dot = snapshot_to_dot(snap)
    with open(args.out, "w") as fh:
        fh.write(dot)
    print(f"wrote {args.out}")


def _accuracy_columns(path):
    header, rows = engine.read_metrics_csv(path)
    for col in ("mean_personalized_test_accuracy", "global_test_accuracy"):
        if col not in header:
            raise DataFormatError(f"{path}: missing column {col!r}")
    pers = [float(r[header.index("mean_personalized_test_accuracy")]) for r in rows]
    glob = [float(r[header.index("global_test_accuracy")]) for r in rows]
    return pers, glob


def cmd_compare(args):
    pa, ga = _accuracy_columns(pathlib.Path(args.run_dir_a) / args.metrics_a)
    pb, gb = _accuracy_columns(pathlib.Path(args.run_dir_b) / args.metrics_b)
    if len(pa) != len(pb):
        raise DataFormatError(
            f"round count mismatch: {len(pa)} rounds vs {len(pb)} rounds"
        )
    rows = [
        [t, pa[t], pb[t], pa[t] - pb[t], ga[t], gb[t], ga[t] - gb[t]]
        for t in range(len(pa))
    ]
    header = ["round", "personalized_a", "personalized_b", "personalized_delta",
              "global_a", "global_b", "global_delta"]
    if args.out:
        engine.write_metrics_csv(args.out, header, rows)
    final = rows[-1]
    print(f"rounds compared: {len(rows)}")
    print(f"final mean personalized accuracy: a={final[1]:.4f} b={final[2]:.4f} "
          f"delta={final[3]:+.4f}")
    print(f"final global accuracy: a={final[4]:.4f} b={final[5]:.4f} delta={final[6]:+.4f}")


def build_parser():
    p = argparse.ArgumentParser(prog="hierfed")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a planted-cluster population")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    r = sub.add_parser("run", help="run the hierarchical simulation")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--baseline", action="store_true",
                   help="also run the flat federated-averaging baseline")
    r.add_argument("--seed", type=int)
    r.add_argument("--workers", type=int)
    r.set_defaults(func=cmd_run)

    d = sub.add_parser("export-dot", help="render a hierarchy snapshot as DOT")
    d.add_argument("--snapshot", required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_export_dot)

    c = sub.add_parser("compare", help="diff two runs' accuracy columns")
    c.add_argument("--run-dir-a", required=True)
    c.add_argument("--run-dir-b", required=True)
    c.add_argument("--metrics-a", default="metrics.csv",
                   help="metrics filename inside run-dir-a")
    c.add_argument("--metrics-b", default="metrics.csv",
                   help="metrics filename inside run-dir-b (e.g. metrics_fedavg.csv)")
    c.add_argument("--out", help="optional CSV report path")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except ConfigurationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DataFormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # runtime failures from the engine
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
