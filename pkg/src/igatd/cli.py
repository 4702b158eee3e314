"""Command-line entry point: ``igatd run --preset cantilever ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, PRESETS, parse_config, write_config
from .output import export_fields, write_history
from .topopt import TopologyOptimizer

log = logging.getLogger("igatd")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="igatd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a topology optimization")
    run.add_argument("--preset", choices=sorted(PRESETS))
    run.add_argument("--config", type=Path, help="flat TOML config file (flags take precedence)")
    run.add_argument("--p", type=int, help="solution degree")
    run.add_argument("--d", type=int, help="level-set degree")
    run.add_argument("--nelems", type=int, help="elements per direction")
    run.add_argument("--max-iter", type=int, dest="max_iter")
    run.add_argument("--out", dest="out_dir", help="output directory")
    run.add_argument("--export-stride", type=int, dest="export_stride")
    run.add_argument("-q", "--quiet", action="store_true")
    return parser


def run_command(args) -> int:
    overrides = {k: getattr(args, k) for k in ("p", "d", "nelems", "max_iter", "out_dir", "export_stride")}
    cfg = parse_config(args.config, args.preset, overrides)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_config(cfg, out / "config.toml")

    opt = TopologyOptimizer(cfg)
    geometry = opt.geometry

    def export(state):
        export_fields(
            out / f"fields_{state.iteration:04d}.vtk",
            state.phi,
            geometry,
            cfg.export_resolution,
            state.evaluation.u,
            state.evaluation.materials.alpha,
            title=f"igatd iteration {state.iteration}",
        )

    def on_iteration(state):
        write_history(state.history, out / "history.csv")
        if cfg.export_stride and state.iteration % cfg.export_stride == 0:
            export(state)

    result = opt.run(on_iteration)
    write_history(result.history, out / "history.csv")
    last = len(result.history)
    ev = result.evaluation
    # after MaxIterations the final level set is the one produced by the last update
    final = last + 1 if result.stop_reason.value == "MaxIterations" else last
    export_fields(out / f"fields_{final:04d}.vtk", result.phi, geometry, cfg.export_resolution,
                  ev.u, ev.materials.alpha, title="igatd final state")
    log.info("stopped: %s after %d iterations, J=%.6g, area=%.6g", result.stop_reason.value, last, ev.J, ev.area)
    return result.stop_reason.exit_code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        return run_command(args)
    except ConfigError as exc:
        print(f"igatd: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.exception("igatd: run failed: %s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
