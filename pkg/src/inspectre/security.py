"""
Security policies, trace-set exploration, conditional noninterference, and
the constant-time equivalence checkers.

A policy labels part of the initial memory/register footprint as low
(attacker-visible); the remaining (high) locations range over finite
candidate value sets.  A program is conditionally noninterferent for a
target semantics when no pair of low-equivalent initial states that the
sequential machine cannot distinguish becomes distinguishable — by its set
of observation traces — under the target semantics.
"""

from __future__ import annotations

import gc
import itertools
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Set, Tuple

from .isa import IsaProgram, REGISTER_IDS
from .mil import MEM, PC, REG, Name
from .ooo import Obs, State, enabled, initial_state, step
from .inorder import HALTED, run_inorder
from .speculative import SpecState, spec_step
from .speculative import initial_state as spec_initial_state
from .predictors import Constraint, Predictor, enabled_under

Trace = Tuple[Obs, ...]


class FootprintMismatch(ValueError):
    pass


class ExplosionBudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class SecurityPolicy:
    low_mem: FrozenSet[int]
    low_reg: FrozenSet[str]
    high_mem: Tuple[Tuple[int, Tuple[int, ...]], ...] = ()
    high_reg: Tuple[Tuple[str, Tuple[int, ...]], ...] = ()


def policy_of(prog: IsaProgram) -> SecurityPolicy:
    """Derive the policy from a program's secret declarations: everything
    in the footprint that is not declared secret is low."""
    high_mem = tuple((s.loc, s.candidates) for s in prog.secrets
                     if s.space == "mem")
    high_reg = tuple((s.loc, s.candidates) for s in prog.secrets
                     if s.space == "reg")
    low_mem = frozenset(prog.footprint_mem()) - {a for a, _ in high_mem}
    low_reg = frozenset(prog.footprint_reg()) - {r for r, _ in high_reg}
    return SecurityPolicy(low_mem, low_reg, high_mem, high_reg)


def secret_assignments(pol: SecurityPolicy) -> List[Dict[tuple, int]]:
    """Every way of valuing the high locations with their candidates."""
    keys: List[tuple] = [("mem", a) for a, _ in pol.high_mem]
    keys += [("reg", r) for r, _ in pol.high_reg]
    spaces = [c for _, c in pol.high_mem] + [c for _, c in pol.high_reg]
    out = []
    for combo in itertools.product(*spaces):
        out.append(dict(zip(keys, combo)))
    return out


def low_equivalent(st1: State, st2: State, pol: SecurityPolicy) -> bool:
    """Indistinguishable to the attacker: the same microinstructions, and
    the same initial contents of every low location."""
    if set(st1.I) != set(st2.I):
        raise FootprintMismatch("states decode different pools")
    for t, m in st1.I.items():
        if m != st2.I[t]:
            raise FootprintMismatch("pools disagree at %s" % str(t))
    low_regids = {REGISTER_IDS[r] for r in pol.low_reg}
    for m in st1.I.values():
        if m.name[0] != 0 or not m.is_store() or m.res == PC:
            continue
        a = m.addr[1]
        low = (a in pol.low_mem) if m.res == MEM else (a in low_regids)
        if low and st1.s.get(m.name) != st2.s.get(m.name):
            return False
    return True


# ---------------------------------------------------------------------------
# Trace sets
# ---------------------------------------------------------------------------

def trace_set(st0: State, semantics: str, depth: int,
              pred: Optional[Predictor] = None,
              constraints: Tuple[Constraint, ...] = (),
              budget: int = 200000) -> Set[Trace]:
    """The prefix-closed set of observation traces of all executions of at
    most `depth` transitions.  `semantics` is "inorder" (deterministic run),
    "ooo", or "spec"."""
    if semantics == "inorder":
        run = run_inorder(st0, max_steps=depth)
        return {tuple(run.trace[:i]) for i in range(len(run.trace) + 1)}

    if semantics not in ("ooo", "spec"):
        raise ValueError("unknown semantics %r" % semantics)

    # Exploration allocates a large acyclic heap of tuples and frozensets;
    # generational collections scan all of it repeatedly for nothing, so
    # switch the cycle collector off for the duration.
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        return _trace_set_graph(st0, semantics, depth, pred, constraints,
                                budget)
    finally:
        if gc_was_enabled:
            gc.enable()


def _trace_set_graph(st0: State, semantics: str, depth: int,
                     pred: Optional[Predictor],
                     constraints: Tuple[Constraint, ...],
                     budget: int) -> Set[Trace]:
    def successors(st):
        if semantics == "ooo":
            return [(nxt, obs, False) for nxt, obs in
                    (step(st, *p) for p in enabled(st))]
        params = enabled_under(st, pred, constraints)
        # Retirement is silent, conflict-free (it excludes any competing
        # rollback of the same or a depending name) and only ever enables
        # transitions, so exploring it eagerly preserves the trace set
        # while collapsing its interleavings.  Forced retirements are not
        # charged against the depth budget: a real execution may defer
        # them past the horizon, so charging them would hide traces that
        # genuine depth-bounded executions exhibit.
        rets = [p for p in params if p[0] == "ret"]
        if rets:
            p = min(rets, key=lambda q: q[1])
            nxt, obs = spec_step(st, p)
            return [(nxt, obs, True)]
        return [(nxt, obs, False) for nxt, obs in
                (spec_step(st, p) for p in params)]

    nodes = 0

    # Phase 1: explore the state graph breadth-first, deduplicating on
    # state identity alone.  Each state is expanded once, at the minimal
    # number of depth-charged transitions needed to reach it; states first
    # reached at the depth bound need no expansion since no bounded path
    # continues from them.  Free (forced-retirement) edges stay within the
    # current level.  Edges are cached as (successor key, observation,
    # free).
    k0 = st0.key()
    edges: Dict[object, List[Tuple[object, Optional[Obs], bool]]] = {}
    level = {k0: st0}
    for n in range(depth + 1):
        nxt_level: Dict[object, State] = {}
        work = list(level.items())
        while work:
            key, st = work.pop()
            if key in edges:
                continue
            if n >= depth:
                # Expansion at the bound is only needed to follow free
                # edges; charged successors are unreachable in budget.
                succs = successors(st)
                if not (len(succs) == 1 and succs[0][2]):
                    continue
            else:
                succs = successors(st)
            out = []
            for nxt, obs, free in succs:
                nodes += 1
                if nodes > budget:
                    raise ExplosionBudgetExceeded(
                        "exploration exceeded %d nodes" % budget)
                nk = nxt.key()
                out.append((nk, obs, free))
                if nk in edges:
                    continue
                if free:
                    work.append((nk, nxt))
                elif nk not in nxt_level:
                    nxt_level[nk] = nxt
            edges[key] = out
        for k in list(nxt_level):
            if k in edges:
                del nxt_level[k]
        level = nxt_level
        if not level:
            break

    # Phase 2: enumerate traces over the cached edges.
    traces: Set[Trace] = {()}
    best: Dict[Tuple[object, Trace], int] = {(k0, ()): 0}
    frontier: List[Tuple[object, Trace, int]] = [(k0, (), 0)]
    while frontier:
        key, trace, n = frontier.pop()
        for nk, obs, free in edges.get(key, ()):
            n2 = n if free else n + 1
            if n2 > depth:
                continue
            nodes += 1
            if nodes > budget:
                raise ExplosionBudgetExceeded(
                    "exploration exceeded %d nodes" % budget)
            t2 = trace + (obs,) if obs is not None else trace
            pair = (nk, t2)
            prev = best.get(pair)
            if prev is not None and prev <= n2:
                continue
            best[pair] = n2
            traces.add(t2)
            frontier.append((nk, t2, n2))
    return traces


# ---------------------------------------------------------------------------
# Verdicts
# ---------------------------------------------------------------------------

@dataclass
class Verdict:
    secure: bool
    label: str
    depth: int = 0
    pair: Optional[dict] = None
    witness_trace: Optional[Trace] = None
    detail: str = ""

    def to_json(self) -> dict:
        out = {"verdict": self.label, "depth": self.depth}
        if self.pair is not None:
            out["pair"] = self.pair
        if self.witness_trace is not None:
            out["witness_trace"] = [list(o) for o in self.witness_trace]
        if self.detail:
            out["detail"] = self.detail
        return out


def _pair_info(a1: Dict[tuple, int], a2: Dict[tuple, int]) -> dict:
    fmt = lambda a: {"%s:%s" % (k[0], k[1]): v for k, v in a.items()}
    return {"secrets1": fmt(a1), "secrets2": fmt(a2)}


def secret_pairs(pol: SecurityPolicy):
    assigns = secret_assignments(pol)
    for i, a1 in enumerate(assigns):
        for a2 in assigns[i + 1:]:
            yield a1, a2


def check_conditional_ni(prog: IsaProgram, pol: Optional[SecurityPolicy],
                         semantics: str = "spec", depth: int = 30,
                         pred: Optional[Predictor] = None,
                         constraints: Tuple[Constraint, ...] = (),
                         inorder_fuel: int = 2000,
                         budget: int = 200000) -> Verdict:
    """Bounded conditional noninterference: for every pair of initial
    states that agree on the low locations and that the sequential machine
    cannot tell apart, the target semantics' trace sets must coincide."""
    pol = pol or policy_of(prog)
    make = spec_initial_state if semantics == "spec" else initial_state
    for a1, a2 in secret_pairs(pol):
        st1, st2 = make(prog, a1), make(prog, a2)
        seq1 = trace_set(initial_state(prog, a1), "inorder", inorder_fuel)
        seq2 = trace_set(initial_state(prog, a2), "inorder", inorder_fuel)
        if not (seq1 <= seq2 and seq2 <= seq1):
            continue    # already sequentially distinguishable: no obligation
        ts1 = trace_set(st1, semantics, depth, pred, constraints, budget)
        ts2 = trace_set(st2, semantics, depth, pred, constraints, budget)
        for one, other, flip in ((ts1, ts2, False), (ts2, ts1, True)):
            diff = one - other
            if diff:
                witness = min(diff, key=lambda tr: (len(tr), tr))
                return Verdict(False, "Insecure", depth,
                               _pair_info(a2, a1) if flip else _pair_info(a1, a2),
                               witness)
    return Verdict(True, "Secure-up-to-depth", depth)


# ---------------------------------------------------------------------------
# Constant-time equivalence
# ---------------------------------------------------------------------------

def _ct_equiv(st1: State, st2: State, resources: Tuple[str, ...]) -> bool:
    if set(st1.I) != set(st2.I):
        return False
    for t, m in st1.I.items():
        m2 = st2.I[t]
        if m is m2 or m == m2:
            continue
        # The initial-content pseudo-instruction carries the starting
        # values as store literals, and high locations differ between any
        # pair worth comparing; everything observable about those stores
        # (guard, address, executedness) is compared below.
        if (t[0] == 0 and m.is_store() and m2.is_store()
                and m.guard == m2.guard and m.res == m2.res
                and m.addr == m2.addr):
            continue
        return False
    if st1.C != st2.C or st1.F != st2.F:
        return False
    for t, m in st1.I.items():
        if m.is_internal():
            continue
        relevant = m.res in resources
        if not relevant:
            continue
        if st1.value(m.guard) != st2.value(m.guard):
            return False
        if (t in st1.s) != (t in st2.s):
            return False
        if m.res == PC:
            if st1.s.get(t) != st2.s.get(t):
                return False
        elif m.addr is not None:
            if st1.value(m.addr) != st2.value(m.addr):
                return False
    return True


def isa_ct_equiv(st1: State, st2: State) -> bool:
    """The two states use the same memory addresses and the same control
    flow: agreement on guards, executedness and addresses of memory
    operations, and on program-counter store values."""
    return _ct_equiv(st1, st2, (MEM, PC))


def mil_ct_equiv(st1: State, st2: State) -> bool:
    """isa_ct_equiv strengthened to register accesses as well."""
    return _ct_equiv(st1, st2, (MEM, PC, REG))


def _advance_to_relevant(st: State, resources: Tuple[str, ...], fuel: int):
    """Run the in-order machine up to (but not through) its next transition
    on a load/store of one of the compared resources.  Returns the state at
    that point and the pending relevant transition (None once finished)."""
    from .inorder import inorder_next
    from .ooo import step as ooo_step
    for _ in range(fuel + 1):
        nxt = inorder_next(st)
        if nxt is None:
            return st, None
        m = st.I[nxt[1]]
        if not m.is_internal() and m.res in resources:
            return st, nxt
        st, _obs = ooo_step(st, *nxt)
    return st, None


def _check_ct(prog: IsaProgram, pol: Optional[SecurityPolicy], fuel: int,
              equiv, resources: Tuple[str, ...]) -> Verdict:
    # Guard-false microinstructions complete without a transition, so the
    # two runs cannot be aligned by raw step counts; the definitions'
    # substance is that operations on the compared resources happen in
    # lockstep.  Advance each run to its next such operation, require the
    # two to agree, apply both, and compare the resulting states.
    from .ooo import step as ooo_step
    pol = pol or policy_of(prog)
    for a1, a2 in secret_pairs(pol):
        st1, st2 = initial_state(prog, a1), initial_state(prog, a2)
        for n in range(fuel + 1):
            st1, p1 = _advance_to_relevant(st1, resources, fuel)
            st2, p2 = _advance_to_relevant(st2, resources, fuel)
            if p1 != p2:
                return Verdict(False, "Insecure", n, _pair_info(a1, a2),
                               detail="operation schedules diverge: "
                               "%r vs %r" % (p1, p2))
            if not equiv(st1, st2):
                return Verdict(False, "Insecure", n, _pair_info(a1, a2))
            if p1 is None:
                break
            st1, _ = ooo_step(st1, *p1)
            st2, _ = ooo_step(st2, *p2)
    return Verdict(True, "Secure", fuel)


def check_isa_constant_time(prog: IsaProgram,
                            pol: Optional[SecurityPolicy] = None,
                            fuel: int = 2000) -> Verdict:
    return _check_ct(prog, pol, fuel, isa_ct_equiv, (MEM, PC))


def check_mil_constant_time(prog: IsaProgram,
                            pol: Optional[SecurityPolicy] = None,
                            fuel: int = 2000) -> Verdict:
    return _check_ct(prog, pol, fuel, mil_ct_equiv, (MEM, PC, REG))
