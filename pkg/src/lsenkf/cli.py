"""Command line entry point: ``lsenkf {mesh,forward,invert,run,metrics} --config FILE``.

Exit status: 0 on success, 1 for configuration errors, 2 when a numerical
stage fails.
"""

import argparse
import logging
from pathlib import Path
import sys

from .experiments import (ConfigError, StageError, build_setup, generate, invert,
                          load_config, metrics_from_files, run_experiment,
                          write_config_echo, write_meshes)
from . import io

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


def _cmd_mesh(cfg):
    setup = build_setup(cfg)
    write_meshes(cfg, setup)
    print(f"fine mesh: {setup.fine.n_nodes} nodes, coarse mesh: {setup.coarse.n_nodes} nodes")


def _cmd_forward(cfg):
    write_config_echo(cfg)
    generate(cfg, build_setup(cfg))


def _cmd_invert(cfg):
    write_config_echo(cfg)
    _report(invert(cfg, build_setup(cfg)))


def _cmd_run(cfg):
    _report(run_experiment(cfg))


def _cmd_metrics(cfg):
    res = metrics_from_files(cfg, build_setup(cfg))
    items = {}
    for name, m in res.items():
        for key, val in m.items():
            items[f"{name}.{key}"] = float(val)
            print(f"{name}.{key}={val:.6g}")
    io.write_key_values(Path(cfg.output_dir) / "metrics_recomputed.txt", items)


def _report(result):
    print(f"iterations: {result.iterations}  final misfit: {result.misfits()[-1]:.6g}")
    for name, m in (result.metrics or {}).items():
        print(f"{name}: relative L2 error {m['relative_l2_error']:.4f}, Jaccard {m['jaccard']:.4f}")


COMMANDS = {
    "mesh": _cmd_mesh,
    "forward": _cmd_forward,
    "invert": _cmd_invert,
    "run": _cmd_run,
    "metrics": _cmd_metrics,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="lsenkf",
        description="Level-set EnKF reconstruction of acoustic sources from "
                    "multi-frequency boundary data.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="key=value run configuration")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        COMMANDS[args.command](cfg)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        print(f"error in '{args.command}': {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
