"""kamlab command line.

    kamlab weakkam|mather|eigen|sweep|wkernel|fk-mc|transport|run [--config FILE] [--set key=value ...] [--out DIR]
    kamlab verify [DIR or manifest.json]

Exit codes: 0 success, 1 certificate failure, 2 configuration error,
3 numerical failure (non-convergence).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .config import OUTPUT_ENV, load_config
from .errors import ConfigurationError, NumericalError
from .pipeline import STAGES, run_pipeline, verify

EXIT_OK, EXIT_CERT, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("kamlab")


def _csv_floats(text: str) -> list[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kamlab", description="Weak KAM / semiclassical certificates on the torus")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML experiment file (defaults used when absent)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key, e.g. --set grid.N=512 (repeatable)")
        p.add_argument("--out", help="output directory (beats $KAMLAB_OUTPUT_DIR and output.directory)")
        return p

    common(sub.add_parser("weakkam", help="forward/backward weak KAM solutions and I = u + u*"))
    common(sub.add_parser("mather", help="minimum mean cycles for L- and L+"))
    p = common(sub.add_parser("eigen", help="Perron eigenpairs, HJ residuals, collinearity"))
    p.add_argument("--beta", type=_csv_floats, help="beta value(s), comma separated")
    p = common(sub.add_parser("sweep", help="beta sweep: u_beta -> u, LDP and Varadhan checks"))
    p.add_argument("--betas", type=_csv_floats)
    common(sub.add_parser("wkernel", help="unit-time action kernel W by min-plus powering"))
    p = common(sub.add_parser("fk-mc", help="Feynman-Kac bridge Monte Carlo estimate"))
    p.add_argument("--y", type=_csv_floats)
    p.add_argument("--x", type=_csv_floats)
    p.add_argument("--beta", type=float)
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int)
    p = common(sub.add_parser("transport", help="Kantorovich problem and duality certificates"))
    p.add_argument("--variant", choices=["plain", "tilde"])
    common(sub.add_parser("run", help="all stages"))
    p = sub.add_parser("verify", help="check a manifest: artifact hashes and certificates")
    p.add_argument("path", nargs="?", default=None, help="output directory or manifest file")
    p.add_argument("--out", help=argparse.SUPPRESS)
    return ap


def _flag_overrides(args) -> list[str]:
    out = []
    fl = lambda v: json.dumps(v)
    if getattr(args, "beta", None) is not None:
        key = "eigen.betas" if args.command == "eigen" else "mc.beta"
        out.append(f"{key}={fl(args.beta)}")
    if getattr(args, "betas", None) is not None:
        out.append(f"sweep.betas={fl(args.betas)}")
    for name in ("y", "x"):
        if getattr(args, name, None) is not None:
            out.append(f"mc.{name}={fl(getattr(args, name))}")
    if getattr(args, "samples", None) is not None:
        out.append(f"mc.samples={args.samples}")
    if getattr(args, "seed", None) is not None:
        out.append(f"mc.seed={args.seed}")
    if getattr(args, "variant", None) is not None:
        out.append(f"transport.variant={args.variant}")
    return out


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "verify":
        target = args.path or args.out or os.environ.get(OUTPUT_ENV) or "kamlab_out"
        code, msgs = verify(target)
        for m in msgs:
            print(m)
        print("verify:", "ok" if code == 0 else f"FAILED (exit {code})")
        return code
    try:
        cfg = load_config(args.config, list(args.set) + _flag_overrides(args))
        stages = STAGES if args.command == "run" else [args.command]
        manifest = run_pipeline(cfg, stages, args.out)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for name, c in sorted(manifest["certificates"].items()):
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {name}: {c['value']:.6g} (tol {c['tol']:.3g})")
    bad_stages = [s for s, e in manifest["stages"].items() if e["status"] != "ok"]
    for s in bad_stages:
        print(f"stage {s}: {manifest['stages'][s]['status']} {manifest['stages'][s].get('error', '')}")
    if any(manifest["stages"][s]["status"] == "numerical_failure" for s in bad_stages):
        return EXIT_NUMERIC
    return EXIT_OK if manifest["all_passed"] else EXIT_CERT


if __name__ == "__main__":
    sys.exit(main())
