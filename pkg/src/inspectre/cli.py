"""
Command-line front end.

    inspectre run FILE [--semantics ...] [--predictor ...] [--depth N]
    inspectre check FILE --property ni|isa-ct|mil-ct|consistency [...]
    inspectre corpus list|verify [IDS...]

Exit codes: 0 success, 1 verdict mismatch / insecure, 2 parse error,
3 exploration budget exceeded.  `INSPECTRE_SEED` overrides the PRNG seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import List, Optional

from . import corpus as corpus_mod
from .consistency import check_memory_consistency
from .isa import parse_isa
from .mil import ParseError
from .ooo import initial_state
from .predictors import CONSTRAINTS, PREDICTORS, compose_predictors
from .security import (
    ExplosionBudgetExceeded, check_conditional_ni, check_isa_constant_time,
    check_mil_constant_time, trace_set,
)
from .speculative import initial_state as spec_initial_state

EXIT_OK, EXIT_FAIL, EXIT_PARSE, EXIT_BUDGET = 0, 1, 2, 3


def _seed(args) -> int:
    env = os.environ.get("INSPECTRE_SEED")
    if env is not None:
        return int(env)
    return args.seed


def _load(path: str):
    with open(path) as fh:
        return parse_isa(fh.read())


def _names_list(s: Optional[str]) -> List[str]:
    return [p for p in (s or "").replace(",", " ").split() if p]


def _predictor(args):
    names = _names_list(args.predictor)
    if not names:
        return None
    return compose_predictors(*(PREDICTORS[n] for n in names))


def _constraints(args):
    return tuple(CONSTRAINTS[n] for n in _names_list(args.constraint))


def cmd_run(args) -> int:
    prog = _load(args.file)
    if args.semantics == "spec":
        st0 = spec_initial_state(prog)
    else:
        st0 = initial_state(prog)
    traces = trace_set(st0, args.semantics, args.depth, _predictor(args),
                       _constraints(args), args.budget)
    out = sys.stdout if args.trace_out in (None, "-") \
        else open(args.trace_out, "w")
    try:
        for tr in sorted(traces):
            out.write(json.dumps([list(o) for o in tr]) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_check(args) -> int:
    prog = _load(args.file)
    if args.property == "ni":
        verdict = check_conditional_ni(
            prog, None, args.semantics, args.depth, _predictor(args),
            _constraints(args), budget=args.budget)
        print(json.dumps(verdict.to_json()))
        return EXIT_OK if verdict.secure else EXIT_FAIL
    if args.property == "isa-ct":
        verdict = check_isa_constant_time(prog)
    elif args.property == "mil-ct":
        verdict = check_mil_constant_time(prog)
    elif args.property == "consistency":
        res = check_memory_consistency(
            prog, target="spec" if args.semantics == "spec" else "ooo",
            depth=args.depth, samples=args.samples, seed=_seed(args),
            pred=_predictor(args), constraints=_constraints(args))
        print(json.dumps({"verdict": "Consistent" if res.ok else "Violation",
                          "detail": res.detail, "seed": res.seed}))
        return EXIT_OK if res.ok else EXIT_FAIL
    else:
        raise ValueError(args.property)
    print(json.dumps(verdict.to_json()))
    return EXIT_OK if verdict.secure else EXIT_FAIL


def cmd_corpus(args) -> int:
    if args.action == "list":
        for e in corpus_mod.ENTRIES:
            print("%-26s %s  pred=%s constr=%s depth=%d"
                  % (e.id, e.semantics, ",".join(e.predictors) or "-",
                     ",".join(e.constraints) or "-", e.depth))
        return EXIT_OK
    ids = args.ids or [e.id for e in corpus_mod.ENTRIES]
    failed = False
    for eid in ids:
        entry = corpus_mod.ENTRY_BY_ID[eid]
        for ok, detail in corpus_mod.verify_entry(entry):
            status = "ok" if ok else "FAIL"
            print("%-26s %-4s %s" % (entry.id, status, detail))
            failed |= not ok
    return EXIT_FAIL if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="inspectre",
        description="explore and check microarchitectural leakage models")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--semantics", default="spec",
                       choices=("inorder", "ooo", "spec"))
        p.add_argument("--predictor", default="",
                       help="comma-separated: %s" % ",".join(PREDICTORS))
        p.add_argument("--constraint", default="",
                       help="comma-separated: %s" % ",".join(CONSTRAINTS))
        p.add_argument("--depth", type=int, default=30)
        p.add_argument("--budget", type=int, default=400000)
        p.add_argument("--seed", type=int, default=0)

    rp = sub.add_parser("run", help="enumerate observation traces")
    rp.add_argument("file")
    common(rp)
    rp.add_argument("--trace-out", default="-")
    rp.set_defaults(fn=cmd_run)

    cp = sub.add_parser("check", help="check a security property")
    cp.add_argument("file")
    cp.add_argument("--property", required=True,
                    choices=("ni", "isa-ct", "mil-ct", "consistency"))
    common(cp)
    cp.add_argument("--samples", type=int, default=100)
    cp.set_defaults(fn=cmd_check)

    gp = sub.add_parser("corpus", help="list or verify the bundled corpus")
    gp.add_argument("action", choices=("list", "verify"))
    gp.add_argument("ids", nargs="*")
    gp.set_defaults(fn=cmd_corpus)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ParseError as exc:
        print("parse error: %s" % exc, file=sys.stderr)
        return EXIT_PARSE
    except ExplosionBudgetExceeded as exc:
        print("budget exceeded: %s" % exc, file=sys.stderr)
        return EXIT_BUDGET


if __name__ == "__main__":
    sys.exit(main())
