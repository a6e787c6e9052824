"""Command-line front end.

Exit codes: 0 success, 1 input/parse error, 2 numerical failure, 3 borderline
multiplier, 4 not stabilizable, 5 certificates disagree or undecidable,
6 closed-loop verification failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._jsonout import dump, fmt
from .attainability import RANK_TOL, certify
from .errors import LPFSError, ScenarioError
from .propagator import monodromy
from .scenarios import SCENARIOS, write_scenarios
from .spectral import multipliers_csv, split
from .synthesis import REPORT_MARGIN, FeedbackLaw, simulate_closed_loop, synthesize, verify_law
from .system import load_scenario

EXIT_OK, EXIT_PARSE, EXIT_NUMERIC, EXIT_BORDERLINE, EXIT_NOT_STAB, EXIT_UNDECIDED, EXIT_VERIFY = range(7)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_PARSE)


def _positive(kind):
    def conv(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
        return v
    return conv


def _nonneg(text):
    v = float(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative: {text!r}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lpfs", description="Stabilizability certificates and periodic feedback synthesis.")
    p.add_argument("--version", action="version", version=f"lpfs {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, scenario=True):
        if scenario:
            sp.add_argument("--scenario", required=True, metavar="PATH", help="scenario JSON file")
        sp.add_argument("--out", default=".", metavar="DIR", help="output directory (created if missing)")
        sp.add_argument("--samples-per-period", type=_positive(int), default=None)
        sp.add_argument("--rank-tol", type=_positive(float), default=RANK_TOL)
        sp.add_argument("--unit-margin", type=_nonneg, default=0.0)

    a = sub.add_parser("analyze", help="Floquet multipliers and the unstable/stable split")
    common(a)
    c = sub.add_parser("certify", help="run the three stabilizability certificates")
    common(c)
    s = sub.add_parser("synthesize", help="build and verify a periodic stabilizing feedback")
    common(s)
    s.add_argument("--epsilon", type=_positive(float), default=None)
    s.add_argument("--horizon-N", type=_positive(int), default=None)
    s.add_argument("--riccati-tol", type=_positive(float), default=1e-10)
    s.add_argument("--max-iters", type=_positive(int), default=5000)
    s.add_argument("--allow-borderline", action="store_true",
                   help="synthesize even when a multiplier near the unit circle is classified stable")
    v = sub.add_parser("verify", help="closed-loop Floquet analysis of a feedback law file")
    common(v)
    v.add_argument("--law", required=True, metavar="PATH")
    m = sub.add_parser("simulate", help="write a trajectory CSV (open loop unless --law is given)")
    common(m)
    m.add_argument("--law", default=None, metavar="PATH")
    m.add_argument("--initial", default=None, metavar="Y0", help="comma-separated initial state (default: all ones)")
    m.add_argument("--periods", type=_positive(float), default=6.0)
    g = sub.add_parser("scenario", help="write shipped scenario files")
    g.add_argument("--out", default=".", metavar="DIR")
    g.add_argument("--name", action="append", choices=list(SCENARIOS), default=None)
    g.add_argument("--seed", type=int, default=None, help="also write a random system for this seed")
    return p


# ---------------------------------------------------------------------- commands


def _tolerances(args) -> dict:
    out = {"rank_tol": args.rank_tol, "unit_margin": args.unit_margin,
           "samples_per_period": args.samples_per_period}
    for k in ("epsilon", "horizon_N", "riccati_tol", "max_iters"):
        if hasattr(args, k):
            out[k] = getattr(args, k)
    out["report_margin"] = REPORT_MARGIN
    return out


def _load(args):
    system = load_scenario(args.scenario, args.samples_per_period)
    if args.samples_per_period is None:
        args.samples_per_period = system.grid.samples_per_period
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return system, out


def cmd_analyze(args) -> int:
    system, out = _load(args)
    mono = monodromy(system)
    sp = split(mono, args.unit_margin)
    (out / "multipliers.csv").write_text(multipliers_csv(sp), encoding="utf-8")
    doc = {"label": system.label, **sp.to_dict(), "monodromy_convergence_witness": mono.convergence_witness,
           "tolerances": _tolerances(args)}
    dump(doc, out / "split.json")
    print(f"n0 = {sp.n0}, delta_bar = {fmt(sp.delta_bar)}")
    if sp.has_borderline:
        print("borderline multiplier within 1e-6 of the unit circle", file=sys.stderr)
        return EXIT_BORDERLINE
    return EXIT_OK


def cmd_certify(args) -> int:
    system, out = _load(args)
    sp = split(monodromy(system), args.unit_margin)
    cert = certify(system, sp, None, args.rank_tol)
    dump({**cert.to_dict(), "tolerances": _tolerances(args)}, out / "certificate.json")
    print(f"verdicts b/c/d = {cert.verdict_b}/{cert.verdict_c}/{cert.verdict_d}")
    if cert.undecidable or not cert.agreement:
        print("certificates undecidable or in disagreement", file=sys.stderr)
        return EXIT_UNDECIDED
    return EXIT_OK if cert.verdict_b else EXIT_NOT_STAB


def cmd_synthesize(args) -> int:
    system, out = _load(args)
    res = synthesize(system, None, rank_tol=args.rank_tol, unit_margin=args.unit_margin, epsilon=args.epsilon,
                     N=args.horizon_N, riccati_tol=args.riccati_tol, max_iters=args.max_iters,
                     allow_borderline=args.allow_borderline)
    dump(res.law.to_dict(), out / "law.json")
    dump({**res.to_dict(), "tolerances": _tolerances(args)}, out / "report.json")
    print(f"closed-loop spectral radius = {fmt(res.report.spectral_radius)}")
    return EXIT_OK


def _load_law(path) -> FeedbackLaw:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ScenarioError(f"cannot read feedback law {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"feedback law {path} is not valid JSON: {exc.msg} (line {exc.lineno})") from exc
    if not isinstance(data, dict):
        raise ScenarioError("feedback law must be a JSON object")
    return FeedbackLaw.from_dict(data)


def cmd_verify(args) -> int:
    system, out = _load(args)
    law = _load_law(args.law)
    rep = verify_law(system, law)
    dump({"label": system.label, **rep.to_dict(), "tolerances": _tolerances(args)}, out / "report.json")
    print(f"closed-loop spectral radius = {fmt(rep.spectral_radius)}")
    return EXIT_OK if rep.stable else EXIT_VERIFY


def cmd_simulate(args) -> int:
    system, out = _load(args)
    law = _load_law(args.law) if args.law else None
    if args.initial is None:
        h0 = np.ones(system.n_x)
    else:
        try:
            h0 = np.array([float(v) for v in args.initial.split(",")])
        except ValueError:
            raise ScenarioError(f"--initial must be comma-separated numbers, got {args.initial!r}") from None
        if h0.size != system.n_x:
            raise ScenarioError(f"--initial has {h0.size} entries, expected {system.n_x}")
    times, states, controls = simulate_closed_loop(system, law, h0, args.periods)
    cols = ["t"] + [f"y{i + 1}" for i in range(system.n_x)] + ["norm_y"] + [f"u{i + 1}" for i in range(controls.shape[1])]
    norms = np.linalg.norm(states, axis=1)
    lines = [",".join(cols)]
    for t, y, nrm, u in zip(times, states, norms, controls):
        lines.append(",".join(fmt(v) for v in (t, *y, nrm, *u)))
    (out / "trajectory.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"final |y| = {fmt(norms[-1])}")
    return EXIT_OK


def cmd_scenario(args) -> int:
    for p in write_scenarios(args.out, args.name, seed=args.seed):
        print(p)
    return EXIT_OK


COMMANDS = {"analyze": cmd_analyze, "certify": cmd_certify, "synthesize": cmd_synthesize,
            "verify": cmd_verify, "simulate": cmd_simulate, "scenario": cmd_scenario}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_PARSE
    try:
        return COMMANDS[args.command](args)
    except LPFSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # anything unexpected counts as a numerical failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
