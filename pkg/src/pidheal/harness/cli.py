"""Command line entry point: ``pidheal {gen,fit,schedule,simulate,compare,verify,bench}``.

Data files are CSV with a header row and depend only on the configuration
and seed.  Anything environment- or time-dependent goes to a ``.meta``
sidecar next to them.

Exit codes: 0 success, 1 a verification check failed, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import platform
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import checks, experiments, persistence
from .config import ConfigError, ExperimentConfig, dump_config, load_config

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG = 0, 1, 2


def write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        raise ValueError(f"no rows for {path}")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(float(v)) if isinstance(v, (float, np.floating)) else v
                             for k, v in row.items()})


def write_meta(out: Path, command: str, cfg: ExperimentConfig, started: float, extra: Optional[dict] = None) -> None:
    lines = [
        f"command = {command}",
        f"schema_version = {SCHEMA_VERSION}",
        f"started_unix = {started:.3f}",
        f"elapsed_s = {time.time() - started:.3f}",
        f"python = {platform.python_version()}",
        f"numpy = {np.__version__}",
        f"platform = {platform.platform()}",
    ]
    for k, v in (extra or {}).items():
        lines.append(f"{k} = {v}")
    lines.append("# configuration")
    (out / f"{command}.meta").write_text("\n".join(lines) + "\n" + dump_config(cfg))


def _task_arrays(task) -> dict:
    return {
        "layers": np.stack(task.stack.layers),
        "data_basis": task.data_basis,
        "complement_basis": task.complement_basis,
        "readout_par": task.readout_par,
        "readout_perp": task.readout_perp,
        "seed": np.array(task.seed),
    }


def _train_states(cfg: ExperimentConfig, out: Path) -> np.ndarray:
    path = out / "train.npz"
    if path.exists():
        with np.load(path) as data:
            return data["states"]
    task = experiments.build_task(cfg)
    states, _ = experiments.training_states(task, cfg.N, cfg.l, [cfg.seed, 1])
    return states


# --------------------------------------------------------------------- commands

def cmd_gen(cfg: ExperimentConfig, out: Path) -> int:
    """Generate the synthetic task and clean training trajectories."""
    task = experiments.build_task(cfg)
    states, labels = experiments.training_states(task, cfg.N, cfg.l, [cfg.seed, 1])
    np.savez(out / "task.npz", **_task_arrays(task))
    np.savez(out / "train.npz", states=states, labels=labels)
    rows = [{"seed": cfg.seed, "t": t, "mean_norm": float(np.mean(np.linalg.norm(states[t], axis=-1))),
             "samples": states.shape[1] * states.shape[2]} for t in range(states.shape[0])]
    write_csv(out / "gen.csv", rows)
    return EXIT_OK


def cmd_fit(cfg: ExperimentConfig, out: Path) -> int:
    """Fit P/I/D embedding bases and write the per-layer rank table."""
    bases, rows = experiments.run_fit(cfg, _train_states(cfg, out))
    for ch, basis in bases.items():
        persistence.save(out / f"basis_{ch.value}.shc", basis)
    write_csv(out / "ranks.csv", rows)
    return EXIT_OK


def cmd_schedule(cfg: ExperimentConfig, out: Path) -> int:
    """Compute the lambda/alpha schedule for the configured c."""
    sched, rows = experiments.run_schedule(cfg)
    persistence.save(out / "schedule.shc", sched)
    write_csv(out / "schedule.csv", rows)
    return EXIT_OK


def cmd_simulate(cfg: ExperimentConfig, out: Path) -> int:
    """Per-step predicted vs measured error, plus the non-orthogonal deviation study."""
    write_csv(out / "simulate.csv", experiments.run_simulate(cfg))
    write_csv(out / "deviation.csv", experiments.run_deviation_study(cfg))
    return EXIT_OK


def cmd_compare(cfg: ExperimentConfig, out: Path) -> int:
    """Accuracy of every scheme and controller under perturbation."""
    write_csv(out / "compare.csv", experiments.run_compare(cfg))
    return EXIT_OK


def cmd_verify(cfg: ExperimentConfig, out: Path) -> int:
    """Run the property suite; exit 1 if any tolerance is missed."""
    results = checks.run_suite(cfg)
    lines = [r.line() for r in results]
    failed = [r for r in results if not r.passed]
    lines.append(f"summary checks={len(results)} failed={len(failed)} seed={cfg.seed}")
    (out / "verify_report.txt").write_text("\n".join(lines) + "\n")
    write_csv(out / "deviation.csv", experiments.run_deviation_study(cfg))
    for line in lines:
        print(line)
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def cmd_bench(cfg: ExperimentConfig, out: Path) -> int:
    """Median wall time of base, controlled and PMP forward passes."""
    with threadpool_limits(limits=1):
        rows = experiments.run_bench(cfg)
    write_csv(out / "bench.csv", rows)
    for row in rows:
        print(f"d={row['d']} mode={row['mode']} median_s={row['median_s']:.4g} "
              f"ratio_to_base={row['ratio_to_base']:.3f} repeats={row['repeats']} warmup={row['warmup']}")
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "fit": cmd_fit,
    "schedule": cmd_schedule,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "verify": cmd_verify,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pidheal", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or name).splitlines()[0])
        p.add_argument("--config", metavar="PATH", help="key = value configuration file")
        p.add_argument("--seed", help="root seed")
        p.add_argument("--out", metavar="DIR", help="output directory")
        p.add_argument("--c", help="control regularization c >= 0")
        p.add_argument("--threshold", help="basis energy threshold in (0, 1]")
        p.add_argument("--gains", metavar="P,I,D", help="channel gains")
        p.add_argument("--controller", metavar="NAME", help="comma-separated controller kinds")
        p.add_argument("--scheme", metavar="MASK", help="comma-separated scheme masks")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any configuration key (repeatable)")
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, str]:
    out = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    for key in ("seed", "out", "c", "threshold", "gains", "controller", "scheme"):
        value = getattr(args, key)
        if value is not None:
            out[key] = value
    return out


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    code = COMMANDS[args.command](cfg, out)
    extra = {}
    if args.command == "bench":
        extra = {"blas_threads": 1}
    write_meta(out, args.command, cfg, started, extra)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
