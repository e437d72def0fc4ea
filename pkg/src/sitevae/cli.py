"""Command line entry point: ``sitevae <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 numerical abort,
4 ingestion error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from . import harness
from .baselines import BaselineConfigError
from .data import IngestionError, generate, load_cache, load_matrix_dir, save_cache
from .harness import ExperimentConfig, Job
from .model import ConfigError, NumericalError
from .objectives import ObjectiveConfigError
from .trainer import NumericalAbort

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INGEST = 0, 2, 3, 4


def load_config(path: str | None, **overrides) -> ExperimentConfig:
    d = {}
    if path is not None:
        try:
            with open(path) as fh:
                d = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config file must hold a mapping")
    d.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(d)


def _experiment_config(args, experiment: str) -> ExperimentConfig:
    cfg = load_config(args.config, experiment=experiment, out=args.out,
                      jobs=getattr(args, "jobs", None))
    if args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    if getattr(args, "paper_scale", False):
        cfg = cfg.with_paper_scale()
    return cfg


def _load_data(path: str):
    p = Path(path)
    if not p.exists():
        raise IngestionError(f"{p} does not exist")
    return load_cache(p) if p.is_file() else load_matrix_dir(p)


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    cfg = load_config(args.config)
    syn = cfg.synthetic if args.seed is None else replace(cfg.synthetic, seed=args.seed)
    ds = generate(syn)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_cache(ds, out)
    print(f"wrote {out}: N={ds.n} D={ds.d} sites={ds.n_sites}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    ds = load_matrix_dir(args.input, pattern=args.pattern, include_diagonal=args.include_diagonal,
                         metadata=args.metadata)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_cache(ds, out)
    print(f"wrote {out}: N={ds.n} D={ds.d} sites={ds.n_sites}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _experiment_config(args, "single_run")
    if args.data is not None:
        cfg = replace(cfg, data_path=args.data)
    k = cfg.k_grid[0] if cfg.k_grid else harness.n_true_sites(cfg)
    if args.method == "jointvae_hinge" and args.capacity is None:
        raise ConfigError("--capacity is required for jointvae_hinge")
    cap = float(args.capacity) if args.method == "jointvae_hinge" else float("nan")
    jobs = [Job(args.method, k, cap, cfg.train.anneal_iters, s) for s in cfg.seeds]
    harness.run_jobs(cfg, jobs)
    for j in jobs:
        print(Path(cfg.out) / "checkpoints" / f"{j.run_id}.lfck")
    return EXIT_OK


def cmd_sweep_capacity(args) -> int:
    harness.run_capacity_sweep(_experiment_config(args, "capacity_sweep"))
    print(harness.report(args.out), end="")
    return EXIT_OK


def cmd_sweep_classes(args) -> int:
    harness.run_class_sweep(_experiment_config(args, "class_sweep"))
    print(harness.report(args.out), end="")
    return EXIT_OK


def cmd_sweep_anneal(args) -> int:
    harness.run_anneal_sweep(_experiment_config(args, "anneal_sweep"))
    print(harness.report(args.out), end="")
    return EXIT_OK


def cmd_export_latents(args) -> int:
    if args.data is not None:
        ds = _load_data(args.data)
    else:
        cfg = load_config(args.config)
        ds = harness.load_dataset(cfg, cfg.synthetic.seed if args.seed is None else args.seed)
    full, flat = harness.export_latents(args.checkpoint, ds, args.out)
    print(f"wrote {full} and {flat}")
    return EXIT_OK


def cmd_report(args) -> int:
    print(harness.report(args.out), end="")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sitevae", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default, jobs=False, paper=False):
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--seed", type=int, help="single seed (overrides the config's seed list)")
        p.add_argument("--out", default=out_default, help="output path")
        if jobs:
            p.add_argument("--jobs", type=int, help="parallel jobs")
        if paper:
            p.add_argument("--paper-scale", action="store_true",
                           help="2500 epochs, batch 512, 5000 anneal iterations")

    p = sub.add_parser("generate", help="draw a synthetic multi-site dataset into a cache file")
    common(p, "dataset.lfds")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("ingest", help="read a directory of connectome CSVs into a cache file")
    p.add_argument("input", help="directory of R x R matrix CSVs plus metadata.csv")
    p.add_argument("--out", default="dataset.lfds")
    p.add_argument("--pattern", default="*.csv")
    p.add_argument("--metadata", default="metadata.csv")
    p.add_argument("--include-diagonal", action="store_true")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train one model per seed and save checkpoints")
    common(p, "run", jobs=True, paper=True)
    p.add_argument("--data", help="cache file or ingest directory (default: synthetic config)")
    p.add_argument("--method", default="jointvae_arch", choices=[m for m in harness.METHODS if m != "pca_kmeans"])
    p.add_argument("--capacity", type=float, help="continuous capacity C_c for jointvae_hinge")
    p.set_defaults(func=cmd_train)

    for name, func, what in (("sweep-capacity", cmd_sweep_capacity, "hinge objective over C_c"),
                             ("sweep-classes", cmd_sweep_classes, "all methods over k"),
                             ("sweep-anneal", cmd_sweep_anneal, "arch-anneal over anneal lengths")):
        p = sub.add_parser(name, help=what)
        common(p, "results", jobs=True, paper=True)
        p.set_defaults(func=func)

    p = sub.add_parser("export-latents", help="write latents.csv and latents_2d.csv from a checkpoint")
    common(p, "latents")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="cache file or ingest directory (default: synthetic config)")
    p.set_defaults(func=cmd_export_latents)

    p = sub.add_parser("report", help="summarize results.csv and ttests.json")
    p.add_argument("--out", default="results", help="results directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (NumericalAbort, NumericalError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except IngestionError as exc:
        print(f"ingestion error: {exc}", file=sys.stderr)
        return EXIT_INGEST
    except (ConfigError, ObjectiveConfigError, BaselineConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
