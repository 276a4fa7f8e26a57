"""
Command-line entry point: ``python -m boltzmix <subcommand> [flags]``.

Exit codes: 0 every check passed, 2 config error or bad usage, 3 a check
failed, 4 numerical abort.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from . import __version__, suites
from .config import OUTPUT_DIR, LoadedConfig, load_config
from .errors import BoltzmixError, CheckFailure
from .log import LOG_PREFIX, get_logger, set_level
from .reporting import RunManifest, to_jsonable, write_csv, write_json

logger = get_logger(__name__)

SUBCOMMANDS = ("validate", "verify-kinematics", "verify-kernels", "verify-averaging", "moments-ode", "simulate",
               "verify-all")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Config file (default: configs/default.json)")
    common.add_argument("--out", help="Output directory (default: $BOLTZMIX_OUTPUT_DIR or ./output)")
    common.add_argument("--seed", type=int, help="Override the config seed")
    common.add_argument("--threads", type=int, default=1, help="Threads for the averaging sweep")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING, ERROR or CRITICAL")

    parser = argparse.ArgumentParser(prog="boltzmix", description="Mixture Boltzmann toolkit")
    parser.add_argument("--version", action="version", version=f"boltzmix {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="Validate a config file")
    sub.add_parser("verify-kinematics", parents=[common], help="Collision-map checks")
    sub.add_parser("verify-kernels", parents=[common], help="Kernel bounds and constants table")
    for name in ("verify-averaging", "moments-ode", "verify-all"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--kmax", type=int, help="Largest order of the averaging grid")
        p.add_argument("--tol", type=float, help="Quadrature tolerance of the averaging sweep")
        if name != "verify-averaging":
            p.add_argument("--k", type=float, help="Moment order of the ODI constants (default: config, else k*)")
    sub.add_parser("simulate", parents=[common], help="Run the particle solver")
    return parser


class Context:
    """Parsed flags, the loaded config and the manifest of one invocation."""

    def __init__(self, args: argparse.Namespace, cfg: LoadedConfig):
        self.args = args
        self.cfg = cfg
        self.out = Path(args.out or OUTPUT_DIR)
        ver = cfg.model.verification
        self.seed = args.seed if args.seed is not None else ver.seed
        self.manifest = RunManifest(cfg.config_hash, args.command, self.seed,
                                    permutation=list(cfg.mixture.permutation))

    @property
    def kmax(self) -> int:
        return getattr(self.args, "kmax", None) or self.cfg.model.averaging.kmax

    @property
    def tol(self) -> float:
        return getattr(self.args, "tol", None) or self.cfg.model.averaging.tol

    @property
    def k(self) -> float:
        return getattr(self.args, "k", None) or self.cfg.model.moments.k

    def emit(self, outcome: suites.SuiteOutcome, report_name: str) -> None:
        self.manifest.record(write_json(self.out / report_name, outcome.report()))
        for name, (header, rows) in outcome.tables.items():
            self.manifest.record(write_csv(self.out / name, header, rows))
        failed = [c.name for c in outcome.checks if not c.passed]
        status = "PASS" if not failed else f"FAIL ({len(failed)} of {len(outcome.checks)})"
        print(f"{LOG_PREFIX}{outcome.name}: {status}")
        for c in outcome.checks:
            if not c.passed:
                print(f"{LOG_PREFIX}  {c.name}: observed {c.observed:.6g}, tolerance {c.tolerance:.6g}")


def _validate(ctx: Context) -> List[suites.SuiteOutcome]:
    cfg = ctx.cfg
    summary = {
        "config_hash": cfg.config_hash,
        "species": [cfg.mixture.spec(i).label for i in range(1, cfg.mixture.n_species + 1)],
        "permutation": list(cfg.mixture.permutation),
        "gamma_bar": cfg.mixture.gamma_bar,
        "gamma_bar_bar": cfg.mixture.gamma_bar_bar,
    }
    print(json.dumps(to_jsonable(summary), indent=2))
    return []


def _kinematics(ctx: Context) -> List[suites.SuiteOutcome]:
    out = suites.run_kinematics(ctx.cfg, ctx.cfg.model.verification.n_samples, ctx.seed)
    ctx.emit(out, "kinematics_report.json")
    return [out]


def _kernels(ctx: Context) -> List[suites.SuiteOutcome]:
    ver = ctx.cfg.model.verification
    out = suites.run_kernels(ctx.cfg, ver.n_samples, ver.mc_samples, ctx.seed)
    ctx.emit(out, "kernels_report.json")
    return [out]


def _averaging(ctx: Context) -> List[suites.SuiteOutcome]:
    out = suites.run_averaging(ctx.cfg, ctx.kmax, ctx.tol, ctx.args.threads, ctx.seed)
    ctx.emit(out, "averaging_report.json")
    return [out]


def _moments_ode(ctx: Context, averaging_outcome: Optional[suites.SuiteOutcome] = None) -> List[suites.SuiteOutcome]:
    if averaging_outcome is None:
        averaging_outcome = suites.run_averaging(ctx.cfg, ctx.kmax, ctx.tol, ctx.args.threads, ctx.seed)
    out = suites.run_moments_ode(ctx.cfg, ctx.k, ctx.seed, ctx.args.threads, averaging_outcome)
    print(json.dumps(to_jsonable(out.payload["constants"]), indent=2))
    ctx.emit(out, "moments_ode.json")
    return [out]


def _simulate(ctx: Context, seed: Optional[int] = None) -> List[suites.SuiteOutcome]:
    seed = seed if seed is not None else (ctx.args.seed if ctx.args.seed is not None
                                          else ctx.cfg.model.simulation.seed)
    ctx.manifest.seed = seed
    out = suites.run_simulation(ctx.cfg, seed, ctx.args.threads)
    report = out.objects["report"]
    ctx.manifest.record(write_json(ctx.out / "conservation.json", report.conservation.to_dict()))
    ctx.emit(out, "simulate_report.json")
    return [out]


def _verify_all(ctx: Context) -> List[suites.SuiteOutcome]:
    outcomes = _kinematics(ctx) + _kernels(ctx)
    averaging_outcome = suites.run_averaging(ctx.cfg, ctx.kmax, ctx.tol, ctx.args.threads, ctx.seed,
                                             outcomes[-1].objects["constants"])
    ctx.emit(averaging_outcome, "averaging_report.json")
    outcomes.append(averaging_outcome)
    mom = _moments_ode(ctx, averaging_outcome)
    sim = _simulate(ctx, ctx.cfg.model.simulation.seed if ctx.args.seed is None else ctx.args.seed)
    traj = suites.run_trajectory_checks(ctx.cfg, sim[0], mom[0], ctx.seed)
    ctx.emit(traj, "trajectory_report.json")
    return outcomes + mom + sim + [traj]


COMMANDS: Dict[str, Callable[[Context], List[suites.SuiteOutcome]]] = {
    "validate": _validate,
    "verify-kinematics": _kinematics,
    "verify-kernels": _kernels,
    "verify-averaging": _averaging,
    "moments-ode": _moments_ode,
    "simulate": _simulate,
    "verify-all": _verify_all,
}


def _fail(message: str, code: int) -> int:
    print(f"{LOG_PREFIX}error: {message}", file=sys.stderr)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.log_level:
        set_level(args.log_level)

    cfg, error = load_config(args.config)
    if error:
        return _fail(error, 2)
    try:
        ctx = Context(args, cfg)
        outcomes = COMMANDS[args.command](ctx)
        if args.command != "validate":
            ctx.manifest.write(ctx.out)
        failed = [o.name for o in outcomes if not o.passed]
        if failed:
            raise CheckFailure(f"checks failed in {', '.join(failed)}")
    except BoltzmixError as e:
        return _fail(str(e), e.exit_code)
    return 0


if __name__ == "__main__":
    sys.exit(main())
