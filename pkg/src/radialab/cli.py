"""Command line front end: ``radialab <experiment> [options]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigError, NumericalError, RadialabError, RegularityFailure
from .experiments import (
    EXPERIMENT_NAMES,
    load_config_file,
    make_config,
    parse_number_list,
    parse_params,
    run_experiment,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="radialab",
        description="Concentration and weak-limit experiments for radial laws.",
    )
    p.add_argument("experiment", choices=EXPERIMENT_NAMES)
    p.add_argument("--config", help="TOML file with [experiment], [shape] and [output] sections")
    p.add_argument("--shape", help="built-in shape name; two comma-separated names for two-shape runs")
    p.add_argument("--params", help="parameters of the (first) shape, e.g. beta=2,alpha=1")
    p.add_argument("--params-b", help="parameters of the second shape")
    p.add_argument("--shape-lambda", metavar="EXPR",
                   help="custom non-compact shape given by Lambda(u) = -log psi(u)")
    p.add_argument("--dims", help="comma-separated, strictly increasing d grid")
    p.add_argument("--n", help="sample size per cell (comma-separated list allowed)")
    p.add_argument("--replicates", type=int)
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    p.add_argument("--tol", type=float, help="relative quadrature tolerance")
    p.add_argument("--out", help="report path (default: stdout)")
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--dump-samples", metavar="DIR", help="also write every sample batch here")
    return p


def _shape_overrides(args, current):
    if args.shape_lambda:
        block = {"kind": "custom", "lambda": args.shape_lambda}
        if args.params:
            block.update(parse_params(args.params))
        return [block]
    if args.shape:
        names = [s.strip() for s in args.shape.split(",") if s.strip()]
        blocks = [{"kind": name} for name in names]
    elif current:
        blocks = [dict(b) for b in current]
    else:
        blocks = None
    for idx, text in ((0, args.params), (1, args.params_b)):
        if text:
            if blocks is None or idx >= len(blocks):
                raise ConfigError(f"--params{'-b' if idx else ''} given without a matching --shape")
            blocks[idx].update(parse_params(text))
    return blocks


def config_from_args(args):
    values = load_config_file(args.config) if args.config else {}
    experiment = args.experiment
    if values.get("name") and values["name"] != experiment:
        raise ConfigError(f"config file is for {values['name']!r}, command line asks for {experiment!r}")
    shapes = _shape_overrides(args, values.get("shapes"))
    if shapes is not None:
        values["shapes"] = shapes
    if args.dims:
        values["dims"] = parse_number_list(args.dims)
    if args.n:
        values["n"] = parse_number_list(args.n, int)
    for key, val in (("replicates", args.replicates), ("seed", args.seed), ("tol", args.tol),
                     ("output", args.out), ("format", args.format),
                     ("dump_samples", args.dump_samples)):
        if val is not None:
            values[key] = val
    values.pop("name", None)
    return make_config(experiment, **values)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
        report = run_experiment(config)
        if config.output:
            path = report.write(config.output)
            print(f"radialab {config.experiment}: {len(report.rows)} rows over "
                  f"{len(config.d_grid)} d values written to {path}")
        else:
            sys.stdout.write(report.render())
            print(f"radialab {config.experiment}: {len(report.rows)} rows", file=sys.stderr)
    except ConfigError as exc:
        print(f"radialab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, RegularityFailure) as exc:
        print(f"radialab: numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except RadialabError as exc:
        # Remaining library errors (unsupported shape operations, missing
        # boundary data) are problems with what was asked for.
        print(f"radialab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
