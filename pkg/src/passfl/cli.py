"""Command-line front end: ``passfl optimize | pareto | train | gen-scenario``.

Exit codes: 0 success, 2 configuration error, 3 infeasible instance,
4 internal assertion. A ``manifest.json`` is written into the output
directory on every exit path.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import asdict, dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from . import driver, flsim
from .scenario import ConfigError, RunConfig, default_template, load_config, scenario_to_dict
from .solvers import InfeasibleError

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_INTERNAL = 0, 2, 3, 4
FLOAT_FMT = "%.17g"


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


@dataclass
class RunManifest:
    command: str
    config_path: str | None
    seed: int
    output_dir: str
    version: str = field(default_factory=_version)
    timings: dict = field(default_factory=dict)
    status: str = "running"
    exit_code: int | None = None
    message: str = ""
    outputs: list[str] = field(default_factory=list)

    def write(self) -> None:
        out = Path(self.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "manifest.json").write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return FLOAT_FMT % float(v)


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([r if isinstance(r, str) else _fmt(r) for r in row])


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig(default_template())
    if not Path(path).exists():
        raise ConfigError(f"config file not found: {path}")
    return load_config(path)


def _check_lambda(lam: float) -> float:
    if not 0.0 < lam < 1.0:
        raise ConfigError(f"lambda out of (0,1): {lam}")
    return lam


def parse_lambda_grid(text: str, scenario, grid_points: int) -> np.ndarray:
    text = text.strip()
    if text == "default":
        return driver.scenario_lambda_grid(scenario, 21, grid_points)
    parts = [p for p in text.split(",") if p.strip()]
    if not parts:
        raise ConfigError("empty lambda grid")
    try:
        grid = [float(p) for p in parts]
    except ValueError as exc:
        raise ConfigError(f"bad lambda grid: {exc}") from exc
    return np.array([_check_lambda(l) for l in grid])


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_optimize(args, manifest: RunManifest) -> None:
    lam = _check_lambda(args.lam)
    cfg = _config(args.config)
    scenario = cfg.scenario(args.seed)
    out = driver.optimize_round(scenario, lam, args.mode, cfg.grid_points)
    odir = Path(args.out)
    (odir / "round.json").write_text(json.dumps(_json_safe(out.to_dict()), indent=2, sort_keys=True) + "\n")
    rows = [[label, n, x] for label, p in out.placements.items() for n, x in enumerate(p.positions_m)]
    write_csv(odir / "positions.csv", ["slot_or_shared", "antenna_index", "x_m"], rows)
    manifest.outputs += ["round.json", "positions.csv"]
    print(f"tau_t = {out.tau_t:.6g} s, F_learn = {out.f_learn:.6g} samples, "
          f"{out.scheduled_count}/{scenario.num_devices} scheduled")


def cmd_pareto(args, manifest: RunManifest) -> None:
    cfg = _config(args.config)
    scenario = cfg.scenario(args.seed)
    grid = parse_lambda_grid(args.lambda_grid, scenario, cfg.grid_points)
    points = driver.pareto_sweep(scenario, grid, args.mode, grid_points=cfg.grid_points)
    rows = [[p.lam, p.tau_t, p.f_learn, int(p.dominated)] for p in points]
    write_csv(Path(args.out) / "pareto.csv", ["lambda", "tau_t_s", "f_learn_samples", "dominated"], rows)
    manifest.outputs.append("pareto.csv")
    kept = driver.retained(points)
    print(f"{len(points)} points, {len(kept)} on the front")


def cmd_train(args, manifest: RunManifest) -> None:
    lam = _check_lambda(args.lam)
    if args.pipeline not in driver.PIPELINES:
        raise ConfigError(f"unknown pipeline {args.pipeline!r}; choose from {', '.join(driver.PIPELINES)}")
    if args.rounds < 0:
        raise ConfigError("--rounds must be nonnegative")
    cfg = _config(args.config)
    scenario = cfg.scenario(args.seed)
    K = scenario.num_devices
    if args.dataset:
        X, y = flsim.load_csv_dataset(args.dataset)
        task = flsim.task_from_arrays(X, y, args.task, K, args.seed, args.alpha)
    elif args.task == "quadratic":
        task = flsim.make_quadratic_task(K, args.seed, alpha=args.alpha)
    elif args.task == "softmax":
        task = flsim.make_softmax_task(K, args.seed, alpha=args.alpha)
    else:
        raise ConfigError(f"unknown task {args.task!r}")
    log = flsim.run_federated(scenario, task, args.rounds, lam, args.pipeline, args.seed,
                              args.local_steps, args.batch_size, args.mode,
                              grid_points=cfg.grid_points)
    odir = Path(args.out)
    cols = ["round", "loss", "gap", "metric", "tau_t_s", "cum_latency_s", "scheduled_count"]
    write_csv(odir / "train.csv", cols, [[r[c] for c in cols] for r in log.rows()])
    brows = []
    if log.bound is not None:
        brows = [[t + 1, a, log.bound.envelope[t + 1]] for t, a in enumerate(log.bound.a_t)]
    write_csv(odir / "bound.csv", ["round", "A_t", "envelope"], brows)
    manifest.outputs += ["train.csv", "bound.csv"]
    if log.rounds:
        print(f"{log.rounds} rounds, final gap {log.gap[-1]:.6g}, "
              f"cumulative latency {log.cum_latency[-1]:.6g} s")


def cmd_gen_scenario(args, manifest: RunManifest) -> None:
    cfg = _config(args.config)
    scenario = cfg.scenario(args.seed)
    (Path(args.out) / "scenario.json").write_text(
        json.dumps(scenario_to_dict(scenario, cfg.grid_points), indent=2) + "\n")
    manifest.outputs.append("scenario.json")


COMMANDS = {"optimize": cmd_optimize, "pareto": cmd_pareto, "train": cmd_train,
            "gen-scenario": cmd_gen_scenario}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="passfl", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", nargs="?", default=None, help="JSON config (defaults if omitted)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default="out", help="output directory")

    sp = sub.add_parser("optimize", help="optimise one round")
    common(sp)
    sp.add_argument("--lambda", dest="lam", type=float, default=0.5)
    sp.add_argument("--mode", choices=driver.MODES, default="per_user")

    sp = sub.add_parser("pareto", help="sweep the trade-off weight")
    common(sp)
    sp.add_argument("--lambda-grid", default="default",
                    help="comma-separated weights in (0,1), or 'default' for 21 adaptive points")
    sp.add_argument("--mode", choices=driver.MODES, default="per_user")

    sp = sub.add_parser("train", help="run federated training")
    common(sp)
    sp.add_argument("--pipeline", default="fedpass")
    sp.add_argument("--rounds", type=int, default=20)
    sp.add_argument("--lambda", dest="lam", type=float, default=0.5)
    sp.add_argument("--mode", choices=driver.MODES, default="per_user")
    sp.add_argument("--task", choices=flsim.KINDS, default="quadratic")
    sp.add_argument("--dataset", default=None, help="CSV file, label in the last column")
    sp.add_argument("--alpha", type=float, default=0.35, help="Dirichlet concentration")
    sp.add_argument("--local-steps", type=int, default=5)
    sp.add_argument("--batch-size", type=int, default=None)

    sp = sub.add_parser("gen-scenario", help="draw a scenario and write it as a config")
    common(sp)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    manifest = RunManifest(args.command, args.config, args.seed, str(args.out))
    start = time.time()
    code = EXIT_OK
    try:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, manifest)
        manifest.status = "ok"
    except ConfigError as exc:
        code, manifest.status, manifest.message = EXIT_CONFIG, "config_error", str(exc)
    except InfeasibleError as exc:
        code, manifest.status, manifest.message = EXIT_INFEASIBLE, "infeasible", str(exc)
    except (driver.InternalAssertionError, AssertionError) as exc:
        code, manifest.status, manifest.message = EXIT_INTERNAL, "internal_error", str(exc)
    finally:
        manifest.exit_code = code
        manifest.timings = {"start_unix_s": start, "elapsed_s": time.time() - start}
        try:
            manifest.write()
        except OSError as exc:
            print(f"passfl: could not write manifest: {exc}", file=sys.stderr)
    if code:
        print(f"passfl {args.command}: {manifest.message}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
