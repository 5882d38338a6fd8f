"""Command-line entry point: ``run``, ``sweep``, ``render`` and ``validate-env``.

Exit status 0 on success, 2 for usage or input errors, 3 when a run
diverges numerically (the partial record is still written).
"""
from __future__ import annotations

import argparse
import itertools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib.resources import files
from pathlib import Path

from . import analysis, render
from .controller import ControllerParams, coerce_overrides
from .engine import MODE_ALIASES, SimConfig, _disc_sampler, rng_for, run
from .errors import ConfigError, NeuroSwarmsError, NumericalDivergence
from .geometry import load_environment
from .recordio import format_config, read_config, read_record, write_record

OUTPUT_ENV = "NEUROSWARMS_OUTPUT"
DEFAULT_OUTPUT = "neuroswarms-output"
EXIT_OK, EXIT_USAGE, EXIT_DIVERGED = 0, 2, 3


class UsageError(Exception):
    pass


def output_root(arg: str | None) -> Path:
    return Path(arg or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)


def resolve_env_path(name: str) -> Path:
    """A file path, or the name of a bundled arena (``multireward``, ``hairpin.svg``)."""
    path = Path(name)
    if path.is_file():
        return path
    stem = path.name if path.suffix else path.name + ".svg"
    bundled = files("neuroswarms") / "data" / stem
    if path.parent == Path(".") and bundled.is_file():
        return Path(str(bundled))
    raise UsageError(f"environment file not found: {name}")


def _overrides(args) -> dict:
    out = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {args.config}")
        out.update(read_config(path))
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    coerce_overrides(out)
    return out


def _params(overrides: dict) -> ControllerParams:
    typed = coerce_overrides(overrides)
    # gains are validated once every override is applied
    return ControllerParams(**typed)


def _parse_seeds(text: str) -> list:
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if "-" in part:
                lo, hi = part.split("-", 1)
                seeds.extend(range(int(lo), int(hi) + 1))
            else:
                seeds.append(int(part))
        except ValueError:
            raise UsageError(f"bad seed list {text!r}") from None
    return seeds


def _run_one(job: dict) -> dict:
    """Execute one run and write its files; returns a status dict (picklable)."""
    out = Path(job["out"])
    out.mkdir(parents=True, exist_ok=True)
    env = load_environment(job["env"])
    config = SimConfig(env=env, params=_params(job["overrides"]), mode=job["mode"], seed=job["seed"],
                       rewards_capturable=job["capturable"], record_stride=job["stride"], spawn=job["spawn"])
    status = {"seed": job["seed"], "out": str(out), "overrides": job["overrides"], "diverged": False}
    try:
        record = run(config)
    except NumericalDivergence as exc:
        record = exc.record
        status["diverged"] = True
        status["error"] = str(exc)
    write_record(record, out / "record.jsonl")
    (out / "config.txt").write_text(format_config(config.params), encoding="utf-8")
    meta = dict(record.metadata, diverged=status["diverged"], record_hash=record.digest())
    (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if len(record.t):
        summary = analysis.summarize(record)
        (out / "summary.tsv").write_text(analysis.format_summary_table([summary]), encoding="utf-8")
    status["record_hash"] = meta["record_hash"]
    return status


def _job(args, env_path, overrides, seed, out) -> dict:
    return {"env": str(env_path), "overrides": overrides, "mode": args.mode, "seed": seed,
            "capturable": args.capturable, "stride": args.stride, "spawn": args.spawn, "out": str(out)}


def cmd_run(args) -> int:
    env_path = resolve_env_path(args.env)
    overrides = _overrides(args)
    _params(overrides)
    out = Path(args.out) if args.out else output_root(None) / f"run-seed{args.seed}"
    status = _run_one(_job(args, env_path, overrides, args.seed, out))
    if status["diverged"]:
        print(f"diverged: {status['error']}; partial record in {out}", file=sys.stderr)
        return EXIT_DIVERGED
    print(f"wrote {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    env_path = resolve_env_path(args.env)
    base = _overrides(args)
    seeds = _parse_seeds(args.seeds)
    if not seeds:
        raise UsageError("empty seed list")
    grid_keys, grid_values = [], []
    for item in args.grid or []:
        if "=" not in item:
            raise UsageError(f"--grid expects key=v1,v2,..., got {item!r}")
        key, values = item.split("=", 1)
        grid_keys.append(key.strip())
        grid_values.append([v.strip() for v in values.split(",") if v.strip()])
    combos = [dict(zip(grid_keys, vals)) for vals in itertools.product(*grid_values)] or [{}]
    root = Path(args.out) if args.out else output_root(None) / "sweep"
    jobs = []
    for ci, combo in enumerate(combos):
        overrides = dict(base, **combo)
        _params(overrides)
        for seed in seeds:
            jobs.append(_job(args, env_path, overrides, seed, root / f"combo{ci:03d}" / f"seed{seed}"))
    workers = max(1, args.workers or os.cpu_count() or 1)
    if workers == 1:
        results = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))

    # sequential aggregation, one ensemble table per parameter combination
    root.mkdir(parents=True, exist_ok=True)
    diverged = [r for r in results if r["diverged"]]
    for ci, combo in enumerate(combos):
        summaries = []
        for r in results:
            if Path(r["out"]).parent.name != f"combo{ci:03d}" or r["diverged"]:
                continue
            summaries.append(analysis.summarize(read_record(Path(r["out"]) / "record.jsonl")))
        combo_dir = root / f"combo{ci:03d}"
        (combo_dir / "overrides.txt").write_text(
            "".join(f"{k} = {v}\n" for k, v in dict(base, **combo).items()), encoding="utf-8")
        if summaries:
            (combo_dir / "summary.tsv").write_text(analysis.format_summary_table(summaries), encoding="utf-8")
            stats = analysis.ensemble_stats(summaries)
            (combo_dir / "ensemble.tsv").write_text(analysis.format_ensemble_table(stats), encoding="utf-8")
            for site, group in analysis.group_by_spawn(summaries).items():
                if len(group) < len(summaries):
                    (combo_dir / f"ensemble-{site}.tsv").write_text(
                        analysis.format_ensemble_table(analysis.ensemble_stats(group)), encoding="utf-8")
    (root / "runs.json").write_text(json.dumps(results, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"{len(results)} runs, {len(diverged)} diverged; wrote {root}")
    return EXIT_DIVERGED if diverged else EXIT_OK


def _parse_times(text: str) -> list:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"bad --times value {text!r}") from None


def cmd_render(args) -> int:
    env = load_environment(resolve_env_path(args.env))
    path = Path(args.record)
    if not path.is_file():
        raise UsageError(f"record file not found: {args.record}")
    record = read_record(path)
    times = _parse_times(args.times)
    if not times:
        raise UsageError("no render times given")
    t_end = float(record.t[-1]) if len(record.t) else 0.0
    dt = float(record.metadata.get("params", {}).get("dt", 0.0)) * int(record.metadata.get("record_stride", 1))
    for t in times:
        if t < 0 or t > t_end + 0.5 * dt + 1e-9 and len(record.t):
            raise UsageError(f"time {t} lies beyond the record (last sample at {t_end})")
    out = Path(args.out) if args.out else output_root(None) / "frames"
    out.mkdir(parents=True, exist_ok=True)
    for t in times:
        image = render.render_frame(env, record, t, scale=args.scale)
        dest = out / f"frame-{t:09.3f}.ppm"
        render.write_ppm(image, dest)
        print(f"wrote {dest}")
    return EXIT_OK


def cmd_validate_env(args) -> int:
    env = load_environment(resolve_env_path(args.env))
    rng = rng_for(0, "validate")
    for disc in env.spawn_discs:
        _disc_sampler(env, disc, rng)()
    for m in list(env.cues) + list(env.rewards):
        if not env.contains([m.x, m.y]):
            print(f"warning: {m.id!r} lies outside the interior", file=sys.stderr)
    print(f"{env.width:g} x {env.height:g} points, {len(env.walls)} wall segments, "
          f"interior area {env.interior_area:g}, notional radius {env.notional_radius:.3f}")
    print(f"{len(env.rewards)} rewards, {len(env.cues)} cues, {len(env.spawn_discs)} spawn discs")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="neuroswarms", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def sim_flags(p):
        p.add_argument("--env", required=True, help="SVG arena file or bundled arena name")
        p.add_argument("--mode", default="multi", choices=sorted(MODE_ALIASES))
        p.add_argument("--config", help="flat key=value parameter file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="parameter override (repeatable)")
        p.add_argument("--capturable", action="store_true", help="rewards deactivate on first contact")
        p.add_argument("--spawn", help="spawn disc id for the agent(s); default: random disc per unit")
        p.add_argument("--stride", type=int, default=10, help="ticks between recorded samples")
        p.add_argument("--out", help=f"output directory (default under ${OUTPUT_ENV})")

    p = sub.add_parser("run", help="run one simulation")
    sim_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="seeds x parameter grid, run in parallel")
    sim_flags(p)
    p.add_argument("--seeds", required=True, help="e.g. 0-39 or 1,5,9")
    p.add_argument("--grid", action="append", metavar="KEY=V1,V2", help="swept parameter (repeatable)")
    p.add_argument("--workers", type=int, default=0, help="worker processes (default: CPU count)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("render", help="write PPM frames from a record")
    p.add_argument("--env", required=True)
    p.add_argument("--record", required=True)
    p.add_argument("--times", required=True, help="comma-separated times in seconds")
    p.add_argument("--scale", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("validate-env", help="parse and check an arena file")
    p.add_argument("--env", required=True)
    p.set_defaults(func=cmd_validate_env)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, NeuroSwarmsError, OSError) as exc:
        print(f"neuroswarms {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
