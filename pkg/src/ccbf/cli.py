"""Command line front end: run, plot, validate, sweep.

Exit codes separate the failure families: 0 success, 1 internal error,
2 configuration or schema error, 3 scenario halted as terminally
infeasible.  `CCBF_LOG` picks the log level (debug, info, warning, ...).

A scenario argument is a file path, or the name of a bundled scenario
(`paper_sis3`) when no such file exists.  `run` writes result.csv, a
meta.json manifest whose embedded normalized config reproduces the run
exactly, and messages.csv when tracing.  `sweep` fans several scenarios
across worker processes, one subdirectory each.
"""

from __future__ import annotations

import argparse
import importlib.resources
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ScenarioConfig, load_config, normalize_config, parse_config
from .errors import CcbfError, ConfigError
from .plot import write_plot
from .simulate import run_scenario, write_messages_csv, write_result_csv

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3

log = logging.getLogger("ccbf.cli")


def read_scenario_text(name: str) -> str:
    """File contents, or a bundled scenario by name."""
    path = Path(name)
    if path.exists():
        return path.read_text(encoding="utf-8")
    base = name if name.endswith(".cfg") else name + ".cfg"
    if os.sep not in name and "/" not in name:
        bundled = importlib.resources.files("ccbf").joinpath("scenarios", base)
        if bundled.is_file():
            return bundled.read_text(encoding="utf-8")
        raise ConfigError([(name, "no such file or bundled scenario")])
    raise ConfigError([(name, "no such file")])


def effective_config(args) -> ScenarioConfig:
    """Scenario text plus CLI overrides, revalidated as one unit."""
    cfg = parse_config(read_scenario_text(args.scenario))
    kw = {}
    if getattr(args, "out", None) is not None:
        kw["output_dir"] = args.out
    if getattr(args, "trace", False):
        kw["trace"] = True
    if getattr(args, "no_collab", False):
        kw["collaboration"] = False
    if getattr(args, "continue_on_infeasible", False):
        kw["continue_on_infeasible"] = True
    if getattr(args, "dt", None) is not None:
        kw["dt"] = args.dt
    if getattr(args, "t_final", None) is not None:
        kw["t_final"] = args.t_final
    if kw:
        cfg = parse_config(normalize_config(cfg.replace(**kw)))
    return cfg


def run_config(cfg: ScenarioConfig, out_dir: Path) -> int:
    """Simulate one validated scenario and write its artifacts."""
    out_dir.mkdir(parents=True, exist_ok=True)
    system = cfg.build_system()
    specs = cfg.build_specs()
    x0 = np.array(cfg.x0)
    started = time.perf_counter()
    result = run_scenario(system, specs, x0, **cfg.run_kwargs())
    elapsed = time.perf_counter() - started

    write_result_csv(out_dir / "result.csv", result)
    if cfg.trace:
        write_messages_csv(out_dir / "messages.csv", result)
    meta = {
        "config": normalize_config(cfg),
        "versions": {
            "ccbf": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "wall_time_s": round(elapsed, 6),
        "halted_at": result.halted_at,
        "infeasible_nodes": list(result.infeasible_nodes),
        "max_state_clamp": result.max_clamp,
    }
    with open(out_dir / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")

    if result.halted_at is not None:
        nodes = ", ".join(str(i) for i in result.infeasible_nodes)
        print(f"terminally infeasible at t={result.halted_at:g} (nodes {nodes}); "
              f"partial results in {out_dir}", file=sys.stderr)
        return EXIT_INFEASIBLE
    if result.infeasible_nodes:
        log.warning("continued past infeasible rounds at nodes %s",
                    sorted(result.infeasible_nodes))
    print(f"wrote {out_dir / 'result.csv'}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = effective_config(args)
    return run_config(cfg, Path(cfg.output_dir))


def cmd_validate(args) -> int:
    cfg = parse_config(read_scenario_text(args.scenario))
    sys.stdout.write(normalize_config(cfg))
    return EXIT_OK


def cmd_plot(args) -> int:
    out = args.out
    if out is None:
        source = Path(args.result)
        out = source.with_suffix(".svg")
    write_plot(args.result, out, meta_path=args.meta)
    print(f"wrote {out}")
    return EXIT_OK


def _sweep_one(payload) -> tuple[str, int]:
    name, normalized, out_dir = payload
    try:
        cfg = parse_config(normalized)
        code = run_config(cfg, Path(out_dir))
    except ConfigError as exc:
        for path, msg in exc.violations:
            print(f"{name}: {path}: {msg}", file=sys.stderr)
        code = EXIT_CONFIG
    except CcbfError as exc:
        print(f"{name}: {exc}", file=sys.stderr)
        code = EXIT_INTERNAL
    return name, code


def cmd_sweep(args) -> int:
    from concurrent.futures import ProcessPoolExecutor

    jobs = []
    used = set()
    root = Path(args.out or "out")
    for scenario in args.scenarios:
        sub_args = argparse.Namespace(
            scenario=scenario, out=None, trace=args.trace,
            no_collab=args.no_collab,
            continue_on_infeasible=args.continue_on_infeasible,
            dt=args.dt, t_final=args.t_final)
        cfg = effective_config(sub_args)
        stem = Path(scenario).stem
        name = stem
        serial = 1
        while name in used:
            serial += 1
            name = f"{stem}-{serial}"
        used.add(name)
        cfg = cfg.replace(output_dir=str(root / name))
        jobs.append((name, normalize_config(cfg), str(root / name)))

    worst = EXIT_OK
    with ProcessPoolExecutor(max_workers=args.workers) as pool:
        for name, code in pool.map(_sweep_one, jobs):
            status = {EXIT_OK: "ok", EXIT_INFEASIBLE: "halted"}.get(code, "error")
            print(f"{name}: {status}")
            worst = max(worst, code)
    return worst


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ccbf",
        description="Simulate decentralized barrier-certified control of "
                    "coupled networks.")
    parser.add_argument("--version", action="version", version=f"ccbf {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_flags(p):
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--trace", action="store_true",
                       help="record the negotiation message log")
        p.add_argument("--no-collab", action="store_true",
                       help="disable the negotiation protocol")
        p.add_argument("--continue-on-infeasible", action="store_true",
                       help="fall back to box-only filtering instead of halting")
        p.add_argument("--dt", type=float, help="integration step override")
        p.add_argument("--t-final", type=float, help="horizon override")

    p_run = sub.add_parser("run", help="simulate one scenario")
    p_run.add_argument("scenario", help="config file or bundled scenario name")
    add_run_flags(p_run)
    p_run.set_defaults(handler=cmd_run)

    p_plot = sub.add_parser("plot", help="render a result table to SVG")
    p_plot.add_argument("result", help="result.csv from a run")
    p_plot.add_argument("--out", help="output SVG path")
    p_plot.add_argument("--meta", help="manifest for threshold and bound lines")
    p_plot.set_defaults(handler=cmd_plot)

    p_val = sub.add_parser("validate", help="check a scenario and print its "
                                            "normalized form")
    p_val.add_argument("scenario", help="config file or bundled scenario name")
    p_val.set_defaults(handler=cmd_validate)

    p_sweep = sub.add_parser("sweep", help="run several scenarios in parallel")
    p_sweep.add_argument("scenarios", nargs="+",
                         help="config files or bundled scenario names")
    p_sweep.add_argument("--workers", type=int, default=None,
                         help="worker process count")
    add_run_flags(p_sweep)
    p_sweep.set_defaults(handler=cmd_sweep)
    return parser


def _configure_logging() -> None:
    wanted = os.environ.get("CCBF_LOG", "").strip().upper()
    level = getattr(logging, wanted, None) if wanted else logging.WARNING
    if not isinstance(level, int):
        level = logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        for path, msg in exc.violations:
            print(f"{path}: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except CcbfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
