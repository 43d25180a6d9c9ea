"""Command line entry point: ``anglecov run | compare | bench``."""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import logging
import subprocess
import sys
from dataclasses import replace
from importlib import metadata
from pathlib import Path

from .config import ConfigError, ScenarioConfig, dumps_config, load_config
from .engine import bench, machine_info
from .simulator import RunResult, SimulationError, run

log = logging.getLogger("anglecov")

EXIT_OK = 0
EXIT_SOLVER = 1
EXIT_CONFIG = 2


def version_string() -> str:
    """``git describe`` of the source tree, or the installed package version."""
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def write_manifest(path: Path, cfg: ScenarioConfig, config_path: str | Path, out_dir: Path) -> Path:
    manifest = {
        "config_path": str(Path(config_path).resolve()),
        "output_dir": str(out_dir.resolve()),
        "version": version_string(),
        "started": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    path.write_text(dumps_config(cfg, manifest))
    return path


def _progress(every: int):
    def report(world):
        if world.k % every == 0:
            rec = world.records[-1]
            log.info("t=%.1f J=%.6g uncovered=%d", rec.t, rec.J, rec.uncovered)
    return report


def _load(path: str, **overrides) -> ScenarioConfig | None:
    try:
        return load_config(path, **overrides)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return None


def cmd_run(args) -> int:
    cfg = _load(args.config, seed=args.seed, duration=args.duration)
    if cfg is None:
        return EXIT_CONFIG
    out = Path(args.out) if args.out else Path("runs") / Path(args.config).stem
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out / "manifest.cfg", cfg, args.config, out)
    try:
        result = run(cfg, out, progress=_progress(max(1, int(round(10.0 / cfg.dt)))))
    except SimulationError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    print(f"wrote {out / 'metrics.csv'} ({len(result.records)} steps, "
          f"final J={result.final_J:.6g}, uncovered={result.ledger.uncovered_count})")
    return EXIT_OK


def compare_runs(cfg: ScenarioConfig, out: Path | None = None) -> tuple[RunResult, RunResult, float]:
    """Run gimbal and baseline modes on the same config; returns the final uncovered ratio."""
    results = {}
    for mode in ("gimbal", "baseline"):
        mode_out = out / mode if out is not None else None
        results[mode] = run(replace(cfg, mode=mode), mode_out,
                            progress=_progress(max(1, int(round(10.0 / cfg.dt)))))
    g, b = results["gimbal"], results["baseline"]
    nb = b.ledger.uncovered_count
    ratio = g.ledger.uncovered_count / nb if nb else float("nan")
    return g, b, ratio


def write_comparison(path: Path, g: RunResult, b: RunResult) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "uncovered_gimbal", "uncovered_baseline"])
        for t, ug, ub in zip(g.ledger.times, g.ledger.uncovered, b.ledger.uncovered):
            w.writerow([repr(float(t)), ug, ub])
    return path


def cmd_compare(args) -> int:
    cfg = _load(args.config, seed=args.seed, duration=args.duration)
    if cfg is None:
        return EXIT_CONFIG
    out = Path(args.out) if args.out else Path("runs") / f"{Path(args.config).stem}_compare"
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out / "manifest.cfg", cfg, args.config, out)
    try:
        g, b, ratio = compare_runs(cfg, out)
    except SimulationError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    write_comparison(out / "uncovered.csv", g, b)
    (out / "ratio.txt").write_text(f"{ratio!r}\n")
    print(f"final uncovered: gimbal={g.ledger.uncovered_count} "
          f"baseline={b.ledger.uncovered_count} ratio={ratio:.4f}")
    return EXIT_OK


def _int_list(text: str) -> list[int]:
    return [int(float(v)) for v in text.split(",") if v.strip()]


def cmd_bench(args) -> int:
    info = machine_info()
    print("machine: " + ", ".join(f"{k}={v}" for k, v in info.items()))
    rows = bench(args.m, args.workers, repeats=args.repeats, warmup=args.warmup)
    out = Path(args.out) if args.out else None
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        with out.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["m", "workers", "mean_ms", "p95_ms"])
            for r in rows:
                w.writerow([r.m, r.workers, f"{r.mean_ms:.3f}", f"{r.p95_ms:.3f}"])
    print(f"{'m':>10} {'workers':>7} {'mean_ms':>10} {'p95_ms':>10} {'Mcells/s':>9}")
    for r in rows:
        print(f"{r.m:>10} {r.workers:>7} {r.mean_ms:>10.2f} {r.p95_ms:>10.2f} {r.cells_per_sec / 1e6:>9.2f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="anglecov", description="Angle-aware multi-drone coverage simulator")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one scenario")
    r.add_argument("config")
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.add_argument("--duration", type=float, help="override the simulated horizon (s)")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="gimbal vs fixed-camera baseline")
    c.add_argument("config")
    c.add_argument("--seed", type=int)
    c.add_argument("--out")
    c.add_argument("--duration", type=float, help="override the simulated horizon (s)")
    c.set_defaults(func=cmd_compare)

    b = sub.add_parser("bench", help="time the batch engine")
    b.add_argument("--m", type=_int_list, default=[10**4, 10**5, 10**6])
    b.add_argument("--workers", type=_int_list, default=None)
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--warmup", type=int, default=2)
    b.add_argument("--out", help="CSV report path")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
