"""Command line interface.

Exit codes: 0 on success, 2 on scenario validation failure, 3 on numerical
failure (unobservable configuration, diverging iteration, blow-up). On exit
3 the diagnostic report has already been written to the output directory.
"""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .errors import ScenarioError
from .runner import SUBCOMMANDS, run
from .scenario import load_scenario

_HELP = {
    "simulate": "integrate the nonlinear model and write trajectory + energy series",
    "gramian": "observability Gramian of the above-threshold modes over the window",
    "gcc": "sharp geometric control time for the observation region",
    "reconstruct": "determining-modes experiment: simulate, observe, rebuild the high part",
    "analyticity": "time-analyticity radius estimates, global and localized",
    "sweep": "cartesian sweep of reconstruction runs over declared parameter lists",
    "commutator": "cutoff-commutator norms across model resolutions",
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="modalrecon",
        description="determining-modes experiments for 1D conservative "
                    "semilinear models",
    )
    parser.add_argument("--version", action="version",
                        version=f"modalrecon {__version__}")
    subs = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sp = subs.add_parser(name, help=_HELP[name])
        sp.add_argument("--scenario", required=True, metavar="PATH",
                        help="scenario TOML file")
        sp.add_argument("--out", default=None, metavar="DIR",
                        help="output directory (default: scenario output_dir)")
        sp.add_argument("--threads", type=int, default=1, metavar="K",
                        help="worker threads for sweep fan-out")
        sp.add_argument("--no-figures", action="store_true",
                        help="skip figure rendering")
        sp.add_argument("--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioError as e:
        print(f"scenario error: {e}", file=sys.stderr)
        return 2
    try:
        manifest = run(
            args.subcommand, scenario, out_dir=args.out,
            threads=max(1, args.threads), figures=not args.no_figures,
            verbose=args.verbose,
        )
    except ScenarioError as e:
        print(f"scenario error: {e}", file=sys.stderr)
        return 2
    if manifest.failed:
        detail = manifest.summary.get("error", "see the failure report")
        print(f"numerical failure: {detail}", file=sys.stderr)
        print(f"report written to {manifest.outputs.get('report', '-')}",
              file=sys.stderr)
        return 3
    print(f"wrote {manifest.outputs['manifest']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
