"""Command-line entry point: ``aoisched <command> --config cfg.json --out DIR``.

Exit codes: 0 success, 2 invalid configuration or request, 3 state space
too large, 4 solver non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, analysis, metrics, region
from .errors import (AoiSchedError, CapacityError, InvalidConfigError, InvalidRequestError,
                     NonConvergenceError, ReducibleChainError, TraceError)
from .mdp import DEFAULT_STATE_CAP, action_symbol, build_model
from .model import (SystemConfig, harvest_quanta_table, load_config, never_transmits,
                    state_count, tx_quanta_table)
from .solver import evaluate_policy, solve

log = logging.getLogger("aoisched")

EXIT_OK, EXIT_CONFIG, EXIT_CAPACITY, EXIT_CONVERGENCE = 0, 2, 3, 4


class Run:
    """Collects output paths and writes the run manifest."""

    def __init__(self, args, config_bytes: bytes | None):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs: list[str] = []
        self.config_hash = hashlib.sha256(config_bytes).hexdigest() if config_bytes is not None else None
        self.started = time.perf_counter()

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def write_json(self, name: str, data) -> None:
        with open(self.path(name), "w") as fh:
            json.dump(data, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, name: str, header, rows) -> None:
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])

    def finish(self) -> None:
        params = {k: v for k, v in vars(self.args).items() if k not in ("func", "command")}
        manifest = {
            "command": self.args.command,
            "config_hash": self.config_hash,
            "parameters": params,
            "seeds": [self.args.seed] if getattr(self.args, "seed", None) is not None else [],
            "outputs": sorted(self.outputs),
            "tool_version": __version__,
            "wall_clock_seconds": round(time.perf_counter() - self.started, 3),
        }
        with open(self.out / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _load(args) -> tuple[SystemConfig, bytes]:
    if not args.config:
        raise InvalidConfigError("--config is required for this command")
    raw = Path(args.config).read_bytes() if Path(args.config).exists() else None
    if raw is None:
        raise InvalidConfigError(f"config file {args.config} not found")
    return load_config(args.config), raw


def _parse_list(text: str | None, cast=int) -> list:
    if not text:
        return []
    return [cast(v) for v in text.split(",") if v.strip()]


def _policy_rows(model, policy):
    cols = model.state_columns()
    names = list(cols)
    for s in range(model.n_states):
        yield [s] + [int(cols[c][s]) for c in names] + [action_symbol(int(policy.actions[s]))]


def _weights(args):
    w = _parse_list(getattr(args, "weights", None), float)
    return np.array(w) if w else None


# -- commands ------------------------------------------------------------------

def cmd_validate(args) -> int:
    cfg, raw = _load(args)
    n = state_count(cfg)
    warnings = []
    for i in never_transmits(cfg):
        warnings.append(f"device {i + 1} can never transmit: cheapest update needs "
                        f"{int(tx_quanta_table(cfg)[i].min())} quanta, battery holds {cfg.battery_levels - 1}")
    if cfg.harvest_efficiency == 0 or harvest_quanta_table(cfg).max() == 0:
        warnings.append("no device ever harvests a whole quantum")
    if n > args.state_cap:
        warnings.append(f"state space of {n} exceeds the cap {args.state_cap}")
    report = {
        "K": cfg.K,
        "state_count": n,
        "state_cap": args.state_cap,
        "channel_mode": cfg.channel_mode,
        "energy_unit_joules": [cfg.energy_unit(i) for i in range(cfg.K)],
        "tx_quanta": tx_quanta_table(cfg).tolist(),
        "harvest_quanta": harvest_quanta_table(cfg).tolist(),
        "channel_representatives": [float(v) for v in cfg.quantizer.representatives],
        "warnings": warnings,
    }
    for msg in warnings:
        print(f"warning: {msg}", file=sys.stderr)
    print(json.dumps(report, indent=2))
    if args.out:
        run = Run(args, raw)
        run.write_json("validation.json", report)
        run.finish()
    return EXIT_OK


def _solve(args):
    cfg, raw = _load(args)
    model = build_model(cfg, state_cap=args.state_cap)
    res = solve(model, args.objective, _weights(args) if args.objective == "aoi" else None,
                method=args.method)
    return cfg, raw, model, res


def cmd_solve(args) -> int:
    cfg, raw, model, res = _solve(args)
    ev = evaluate_policy(model, res.policy, _weights(args))
    run = Run(args, raw)
    run.write_json("solve.json", res.to_dict(ev))
    header = ["state_idx"] + list(model.state_columns()) + ["action"]
    run.write_csv("policy.csv", header, _policy_rows(model, res.policy))
    run.finish()
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg, raw, model, res = _solve(args)
    traj, summ = analysis.simulate_policy(model, res.policy, args.horizon, seed=args.seed,
                                          weights=_weights(args))
    run = Run(args, raw)
    out = summ.to_dict()
    out.update({"horizon": args.horizon, "seed": args.seed, "objective": args.objective,
                "solver_gain": float(res.gain)})
    run.write_json("simulation.json", out)
    if args.trajectory:
        header = (["slot", "action"] + [f"b_{i}" for i in range(1, cfg.K + 1)]
                  + [f"a_{i}" for i in range(1, cfg.K + 1)] + ["bits"])
        run.write_csv("trajectory.csv", header, analysis.trajectory_rows(model, traj))
    run.finish()
    return EXIT_OK


def _parse_fix(items) -> dict:
    fixed = {}
    for item in items or []:
        try:
            dev, coords = item.split("=")
            b, h, a = (int(v) for v in coords.split(","))
        except ValueError:
            raise InvalidRequestError(f"bad --fix {item!r}; expected DEVICE=battery,channel,aoi") from None
        fixed[int(dev)] = (b, h, a)
    return fixed


def cmd_slice(args) -> int:
    cfg, raw, model, res = _solve(args)
    aoi_values = _parse_list(args.aoi_slice) or None
    sl = analysis.policy_slice(model, res.policy, args.device, aoi_values, _parse_fix(args.fix))
    run = Run(args, raw)
    run.write_csv("slice.csv", ["aoi", "battery", "channel", "action"], sl.rows())
    run.finish()
    return EXIT_OK


def cmd_region(args) -> int:
    cfg, raw = _load(args)
    model = build_model(cfg, state_cap=args.state_cap)
    result = region.characterize_region(model, args.grid, args.refine, args.method, args.threads)
    header = region.region_header(cfg.K)
    run = Run(args, raw)
    run.write_csv("region.csv", header, (p.row() for p in result.labeled_sweep()))
    run.write_csv("frontier.csv", header, (p.row() for p in result.frontier))
    run.write_csv("operating_points.csv", header, (result.S.row(), result.F.row()))
    failed = [p for p in result.sweep if not p.ok]
    for p in failed:
        print(f"warning: weights {p.weights.tolist()} failed: {p.error}", file=sys.stderr)
    run.finish()
    return EXIT_OK


def cmd_metrics(args) -> int:
    if not args.trace:
        raise InvalidRequestError("--trace is required")
    trace = metrics.read_trace_csv(args.trace)
    raw = Path(args.trace).read_bytes()
    run = Run(args, raw)
    summ = metrics.summary(trace, a0=args.a0)
    run.write_csv("metrics.csv", ["metric", "value"], summ.items())
    rows = ([r["n"], r["X"], r["T"], r["A"], r["voiu"]] for r in metrics.packet_table(trace))
    run.write_csv("packets.csv", ["n", "X", "T", "A", "voiu"], rows)
    run.finish()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aoisched", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, solver=True):
        p.add_argument("--config", help="system configuration JSON")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--state-cap", type=int, default=DEFAULT_STATE_CAP)
        if solver:
            p.add_argument("--objective", choices=("aoi", "throughput"), default="aoi")
            p.add_argument("--method", choices=("pi", "rvi"), default="pi")
            p.add_argument("--weights", help="comma-separated importance weights (default: from config)")

    p = sub.add_parser("validate", help="check a config and print derived quantities")
    common(p, solver=False)
    p.set_defaults(func=cmd_validate, out=None)

    p = sub.add_parser("solve", help="solve the MDP; writes solve.json and policy.csv")
    common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="solve, then simulate the policy")
    common(p)
    p.add_argument("--horizon", type=int, default=100_000)
    p.add_argument("--trajectory", action="store_true", help="also write trajectory.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("slice", help="policy slice over (battery, channel) for given AoI values")
    common(p)
    p.add_argument("--aoi-slice", help="comma list of AoI values (default: 1 and the cap)")
    p.add_argument("--device", type=int, default=1)
    p.add_argument("--fix", action="append", help="pin another device: DEVICE=battery,channel,aoi")
    p.set_defaults(func=cmd_slice)

    p = sub.add_parser("region", help="weight sweep, Pareto frontier, S and F points")
    common(p, solver=False)
    p.add_argument("--grid", type=int, default=21)
    p.add_argument("--refine", type=int, default=3)
    p.add_argument("--method", choices=("pi", "rvi"), default="pi")
    p.set_defaults(func=cmd_region)

    p = sub.add_parser("metrics", help="AoI / PAoI / VoIU of an update trace CSV")
    p.add_argument("--trace", help="CSV with columns n,t_gen,t_recv")
    p.add_argument("--out", default=".")
    p.add_argument("--a0", type=float, default=0.0, help="age at the first generation instant")
    p.set_defaults(func=cmd_metrics, seed=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InvalidConfigError, InvalidRequestError, TraceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (NonConvergenceError, ReducibleChainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except AoiSchedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
