"""Command line entry point: ``lbft run | sweep | check``.

``run`` writes two line-delimited JSON files into the output directory:
``<name>-<seed>.trace.jsonl`` (one header line with the resolved config,
then one record per simulator event) and ``<name>-<seed>.metrics.jsonl``.
The output directory defaults to ``$LBFT_OUT_DIR`` or ``./lbft-out``.
"""

from __future__ import annotations

import argparse
import itertools
import json
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path
from typing import Optional

import yaml
from pydantic import ValidationError

from . import analysis
from .scenario import ScenarioConfig, load_config
from .simnet import message_counts, run

OUT_ENV = "LBFT_OUT_DIR"
DEFAULT_OUT = "lbft-out"


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def bundled(name: str) -> Path:
    """Path of a scenario file shipped with the package, e.g. ``smoke.yaml``."""
    return Path(str(resources.files("lbft") / "scenarios" / name))


def format_validation_error(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{path}: {e['msg']}")
    return "\n".join(lines)


def run_metrics(trace) -> dict:
    cfg = trace.config
    stats = analysis.chain_stats(trace)
    safety = analysis.trace_safety(trace)
    production = analysis.ProductionTrace.from_simulation(trace)
    counts = message_counts(trace)
    per_block = [c["total"] for c in counts.values()]
    return {
        "kind": "run",
        "scenario": cfg.name,
        "seed": trace.seed,
        "negative_control": cfg.adversary.negative_control,
        "safety_ok": safety.ok,
        "violation": None
        if safety.ok
        else {"height": safety.height, "blocks": [b.hex() for b in safety.blocks], "nodes": list(safety.nodes)},
        "committed_blocks": stats.committed_blocks,
        "committed_total": len(analysis.first_commit_times(trace)),
        "certified_rate": stats.certified_rate,
        "committed_rate": stats.committed_rate,
        "honest_committed_rate": stats.honest_committed_rate,
        "unique_certified": stats.unique_certified_count,
        "unique_fraction": analysis.unique_fraction(production, cfg.network.delta),
        "honest_productions": len(production.honest_times),
        "adversary_productions": len(production.adversary_times),
        "commit_latency": stats.latency_summary(),
        "messages": dict(sorted(trace.messages.items())),
        "messages_per_certified_block": statistics.fmean(per_block) if per_block else None,
        "events": trace.events,
        "end_time": trace.end_time,
    }


def write_outputs(trace, out_dir: Path) -> tuple[Path, Path, dict]:
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{trace.config.name}-{trace.seed}"
    trace_path = out_dir / f"{stem}.trace.jsonl"
    metrics_path = out_dir / f"{stem}.metrics.jsonl"
    header = {"kind": "header", "format": 1, "seed": trace.seed, "config": json.loads(trace.config.to_json())}
    with trace_path.open("w") as fh:
        fh.write(_dumps(header) + "\n")
        for line in trace.record_lines():
            fh.write(line + "\n")
    metrics = run_metrics(trace)
    with metrics_path.open("w") as fh:
        fh.write(_dumps(metrics) + "\n")
    return trace_path, metrics_path, metrics


def _load(path: str, overrides: dict) -> ScenarioConfig:
    cfg = load_config(path)
    return cfg.with_updates(overrides) if overrides else cfg


def _overrides(args) -> dict:
    out = {}
    if getattr(args, "horizon", None) is not None:
        out["horizon"] = args.horizon
    if getattr(args, "pattern", None) is not None:
        out["network.pattern"] = args.pattern
    return out


def _out_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)


def cmd_run(args) -> int:
    try:
        cfg = _load(args.config, _overrides(args))
    except ValidationError as e:
        print(f"config error in {args.config}:\n{format_validation_error(e)}", file=sys.stderr)
        return 2
    except (OSError, yaml.YAMLError, json.JSONDecodeError) as e:
        print(f"cannot read {args.config}: {e}", file=sys.stderr)
        return 2
    trace = run(cfg, args.seed)
    trace_path, metrics_path, metrics = write_outputs(trace, _out_dir(args))
    verdict = "ok" if metrics["safety_ok"] else "SAFETY VIOLATION"
    print(
        f"{cfg.name} seed={trace.seed}: {metrics['committed_blocks']} committed, {verdict}; "
        f"trace={trace_path} metrics={metrics_path}"
    )
    if not metrics["safety_ok"] and not cfg.adversary.negative_control:
        return 1
    return 0


# -- sweeps --------------------------------------------------------------


def expand_grid(grid: dict) -> list[dict]:
    keys = sorted(grid)
    return [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]


def cell_config(base: ScenarioConfig, cell: dict) -> ScenarioConfig:
    """Apply a grid cell.  ``lambda_delta`` sets ``network.delta`` from the cell's lambda."""
    updates = {k: v for k, v in cell.items() if k != "lambda_delta"}
    if "lambda_delta" in cell:
        lam = updates.get("lottery.lambda", base.lottery.lam)
        updates["network.delta"] = cell["lambda_delta"] / lam
    return base.with_updates(updates)


def _run_cell(job) -> dict:
    base_json, cell, seeds = job
    try:
        base = ScenarioConfig.model_validate(json.loads(base_json))
        cfg = cell_config(base, cell).with_updates({"record_events": False})
        runs = [run_metrics(run(cfg, s)) for s in seeds]
    except (ValidationError, ValueError) as e:
        return {"kind": "cell", "cell": cell, "error": str(e).splitlines()[0]}
    record = {"kind": "cell", "cell": cell, "runs": len(runs)}
    for key in ("certified_rate", "committed_rate", "honest_committed_rate", "unique_fraction",
                "messages_per_certified_block"):
        xs = [r[key] for r in runs if r[key] is not None]
        record[key] = {
            "mean": statistics.fmean(xs) if xs else None,
            "std": statistics.stdev(xs) if len(xs) > 1 else 0.0,
        }
    record["violations"] = sum(1 for r in runs if not r["safety_ok"])
    ins = analysis.LivenessInputs(cfg.lottery.beta, cfg.lottery.lam, cfg.network.delta)
    record["eta_squared"] = analysis.eta(ins) ** 2
    record["liveness_margin"] = analysis.liveness_condition(ins).margin
    return record


def sweep(base: ScenarioConfig, grid: dict, seeds: list[int], workers: int = 1) -> list[dict]:
    cells = expand_grid(grid)
    base_json = json.dumps(json.loads(base.to_json()))
    jobs = [(base_json, c, seeds) for c in cells]
    if workers <= 1:
        return [_run_cell(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_cell, jobs))


def cmd_sweep(args) -> int:
    grid_doc = yaml.safe_load(Path(args.grid).read_text())
    base_path = grid_doc.get("base", args.config)
    if base_path is None:
        print("sweep needs a base config (--config or 'base' in the grid file)", file=sys.stderr)
        return 2
    base_path = Path(base_path)
    if not base_path.is_absolute():
        base_path = Path(args.grid).parent / base_path
    try:
        base = _load(str(base_path), _overrides(args))
    except ValidationError as e:
        print(f"config error in {base_path}:\n{format_validation_error(e)}", file=sys.stderr)
        return 2
    reps = args.repetitions or grid_doc.get("repetitions", 10)
    first = args.seed if args.seed is not None else base.seed
    seeds = list(range(first, first + reps))
    records = sweep(base, grid_doc["grid"], seeds, args.workers)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{base.name}.sweep.jsonl"
    with path.open("w") as fh:
        for r in records:
            fh.write(_dumps(r) + "\n")
    failed = sum(1 for r in records if "error" in r)
    print(f"{len(records)} cells x {reps} seeds -> {path} ({failed} failed)")
    return 0


def cmd_check(args) -> int:
    try:
        ins = analysis.LivenessInputs(args.beta, args.lam, args.delta, args.slack)
    except ValueError as e:
        print(f"invalid inputs: {e}", file=sys.stderr)
        return 2
    v = analysis.liveness_condition(ins)
    print(f"eta={v.eta:.6f}")
    print(f"eta^2(1-beta)={v.lhs:.6f} (1+delta)beta={v.rhs:.6f} margin={v.margin:.6f}")
    print("holds" if v.holds else "fails")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lbft", description="LBFT consensus simulator")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.add_argument("--horizon", type=float)
    r.add_argument("--pattern", choices=("broadcast", "gossip", "leader"))
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a parameter grid")
    s.add_argument("--grid", required=True, help="YAML with 'grid' (dotted path -> values), optional 'base'")
    s.add_argument("--config", help="base scenario when the grid file names none")
    s.add_argument("--seed", type=int, help="first seed")
    s.add_argument("--repetitions", type=int)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out")
    s.add_argument("--horizon", type=float)
    s.add_argument("--pattern", choices=("broadcast", "gossip", "leader"))
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("check", help="evaluate the liveness condition")
    c.add_argument("--beta", type=float, required=True)
    c.add_argument("--lam", "--lambda", dest="lam", type=float, default=1.0)
    c.add_argument("--delta", type=float, required=True, help="network delay bound")
    c.add_argument("--slack", type=float, default=0.1)
    c.set_defaults(func=cmd_check)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
