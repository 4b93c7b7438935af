"""
Executable oracles for the metatheory: memory consistency against the
sequential machine, commutation of adjacent transitions, stability and
monotonicity of the store may/act analyses, and soundness of the
dependency computation.  All sampling is seeded for replay.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Set, Tuple

from .isa import IsaProgram, parse_isa
from .mil import MEM, Name
from .inorder import commits, run_inorder
from .ooo import (
    CMT, EXE, FTC, State, apply_step, enabled, initial_state, step, str_act,
    str_may,
)
from .speculative import SpecState, apply_spec_step, deps, spec_step
from .speculative import initial_state as spec_initial_state
from .ooo import denote
from .predictors import Predictor, enabled_under


class PreconditionViolated(ValueError):
    pass


@dataclass
class Verdict:
    ok: bool
    detail: str = ""
    seed: Optional[int] = None
    warnings: Tuple[str, ...] = ()


# ---------------------------------------------------------------------------
# Random programs and runs
# ---------------------------------------------------------------------------

_REGS = ("r0", "r1", "r2", "r3")
_ADDRS = (0, 1, 2, 3, 4, 5)


def random_program(rng: random.Random, max_instrs: int = 6,
                   with_secret: bool = False) -> IsaProgram:
    """A small terminating program: forward branches only, literal and
    register-indirect memory accesses over a fixed six-cell footprint."""
    n = rng.randint(1, max_instrs)
    lines = []
    for a in _ADDRS:
        lines.append(".mem %d %d" % (a, rng.randint(0, 7)))
    for r in _REGS:
        # Registers that may be used as addresses stay inside the footprint.
        lines.append(".reg %s %d" % (r, rng.choice(_ADDRS)))
    if with_secret:
        lines.append(".secret mem %d 0 1" % rng.choice(_ADDRS))
    for i in range(n):
        kind = rng.random()
        r = rng.choice(_REGS)
        r2 = rng.choice(_REGS)
        a = rng.choice(_ADDRS)
        if kind < 0.18:
            ins = "loadi %s, %d" % (r, rng.randint(0, 7))
        elif kind < 0.30:
            ins = "addi %s, %s, %d" % (r, r2, rng.randint(0, 3))
        elif kind < 0.45:
            if rng.random() < 0.5:
                ins = "load %s, [%d]" % (r, a)
            else:
                ins = "load %s, [%s]" % (r, r2)
        elif kind < 0.65:
            src = "[%d]" % a if rng.random() < 0.5 else "[%s]" % r2
            ins = "store %s, %s" % (src, r)
        elif kind < 0.72:
            ins = "storei [%d], %d" % (a, rng.randint(0, 7))
        elif kind < 0.80:
            ins = "cmplt f, %s, %s" % (r, r2)
        elif kind < 0.92 and i + 1 < n:
            target = rng.randint(i + 1, n)   # forward only: terminates
            if rng.random() < 0.5:
                ins = "blt %s, %s, L%d" % (r, r2, target)
            else:
                ins = "jmp L%d" % target
        else:
            ins = "mov %s, %s" % (r, r2)
        lines.append("L%d: %s" % (i, ins))
    lines.append("L%d: halt" % n)
    return parse_isa("\n".join(lines))


def random_ooo_run(st: State, rng: random.Random, depth: int,
                   record_states: bool = True):
    """Random-schedule out-of-order run; returns the visited states (when
    recorded), the chosen parameters, and the commit log as
    (address, value) pairs.  Mutates `st` when states are not recorded."""
    states, params, commits_log = [st], [], []
    for _ in range(depth):
        choices = enabled(st)
        if not choices:
            break
        p = choices[rng.randrange(len(choices))]
        if p[0] == CMT:
            m = st.I[p[1]]
            commits_log.append((st.value(m.addr), st.s[p[1]]))
        if record_states:
            st, _obs = step(st, *p)
            states.append(st)
        else:
            apply_step(st, *p)
        params.append(p)
    return states, params, commits_log


def random_spec_run(st: SpecState, rng: random.Random, depth: int,
                    pred: Optional[Predictor] = None, constraints=(),
                    record_states: bool = True):
    states, params, commits_log = [st], [], []
    for _ in range(depth):
        choices = enabled_under(st, pred, constraints)
        if not choices:
            break
        p = choices[rng.randrange(len(choices))]
        if p[0] == CMT:
            m = st.I[p[1]]
            commits_log.append((st.value(m.addr), st.s[p[1]]))
        if record_states:
            st, _obs = spec_step(st, p)
            states.append(st)
        else:
            apply_spec_step(st, p)
        params.append(p)
    return states, params, commits_log


# ---------------------------------------------------------------------------
# Memory consistency
# ---------------------------------------------------------------------------

def check_memory_consistency(prog: IsaProgram,
                             inits: Optional[Dict[tuple, int]] = None,
                             target: str = "ooo",
                             depth: int = 60,
                             samples: int = 100,
                             seed: int = 0,
                             pred: Optional[Predictor] = None,
                             constraints=(),
                             inorder_fuel: int = 4000) -> Verdict:
    """Every sampled run's per-address commit sequence must be a prefix of
    the sequential machine's."""
    oracle = commits(run_inorder(initial_state(prog, inits), inorder_fuel))
    rng = random.Random(seed)
    for i in range(samples):
        if target == "ooo":
            st0 = initial_state(prog, inits)
            _, _, log = random_ooo_run(st0, rng, depth, record_states=False)
        else:
            st0 = spec_initial_state(prog, inits)
            _, _, log = random_spec_run(st0, rng, depth, pred, constraints,
                                        record_states=False)
        per_addr: Dict[int, List[int]] = {}
        for a, v in log:
            per_addr.setdefault(a, []).append(v)
        for a, seq in per_addr.items():
            ref = oracle.get(a, [])
            if seq != ref[:len(seq)]:
                return Verdict(
                    False,
                    "sample %d: address %d commits %r, sequential %r"
                    % (i, a, seq, ref), seed)
    return Verdict(True, "%d samples consistent" % samples, seed)


# ---------------------------------------------------------------------------
# Commutation
# ---------------------------------------------------------------------------

@dataclass
class CommutationWitness:
    start: State
    p1: tuple
    p2: tuple
    end: State
    midpoint: Optional[State]


def states_equal(a: State, b: State) -> bool:
    if set(a.I) != set(b.I) or a.s != b.s or a.C != b.C or a.F != b.F:
        return False
    return all(a.I[t] == b.I[t] for t in a.I)


def check_commute(st0: State, p1: tuple, p2: tuple) -> Optional[CommutationWitness]:
    """For consecutive out-of-order steps p1 then p2 with p2's name older,
    find the reordered execution p2 then p1 reaching the same state.
    Returns None when no midpoint exists (a lemma violation).  Also checks
    that two adjacent commits never target the same address."""
    try:
        st1, _ = step(st0, *p1)
        st2, obs2 = step(st1, *p2)
    except ValueError as exc:
        raise PreconditionViolated(str(exc))
    if p2[1] >= p1[1]:
        raise PreconditionViolated("second step must have the older name")
    if p1[0] == CMT and p2[0] == CMT:
        m1, m2 = st0.I[p1[1]], st0.I[p2[1]]
        if st0.value(m1.addr) == st1.value(m2.addr):
            # An older commit can never directly follow a younger one to
            # the same address; such a pair cannot be reordered.
            return None
    try:
        mid, _ = step(st0, *p2)
        end, _ = step(mid, *p1)
    except ValueError:
        return None
    if not states_equal(end, st2):
        return None
    return CommutationWitness(st0, p1, p2, st2, mid)


def check_commute_run(states: Sequence[State],
                      params: Sequence[tuple]) -> Verdict:
    """Apply check_commute to every adjacent pair of a run where the
    second step's name is older; also asserts no adjacent same-address
    commit pair occurs."""
    for i in range(len(params) - 1):
        p1, p2 = params[i], params[i + 1]
        if p2[1] >= p1[1]:
            continue
        if p1[0] == CMT and p2[0] == CMT:
            m1 = states[i].I[p1[1]]
            m2 = states[i].I[p2[1]]
            if states[i].value(m1.addr) == states[i + 1].value(m2.addr):
                return Verdict(False,
                               "adjacent commits to one address at step %d" % i)
        if check_commute(states[i], p1, p2) is None:
            return Verdict(False, "no midpoint for steps %d/%d: %r %r"
                           % (i, i + 1, p1, p2))
    return Verdict(True)


# ---------------------------------------------------------------------------
# Store-set lemmas
# ---------------------------------------------------------------------------

def check_strmay_lemmas(states: Sequence[State],
                        params: Sequence[tuple]) -> Verdict:
    """Along a legal out-of-order run: per access, the may/act store sets
    only shrink, and a step whose name is not older than the access leaves
    them untouched."""
    for i in range(len(params)):
        pre, post = states[i], states[i + 1]
        rule, tstep = params[i]
        for t, m in pre.I.items():
            if m.is_internal():
                continue
            may0 = {x.name for x in str_may(pre, t)}
            may1 = {x.name for x in str_may(post, t)}
            act0 = {x.name for x in str_act(pre, t)}
            act1 = {x.name for x in str_act(post, t)}
            if not may1 <= may0:
                return Verdict(False, "str_may grew at %s on step %d"
                               % (str(t), i))
            if not act1 <= act0:
                return Verdict(False, "str_act grew at %s on step %d"
                               % (str(t), i))
            if rule == EXE and tstep >= t and (may1 != may0 or act1 != act0):
                return Verdict(False,
                               "step at %s changed store sets of older %s"
                               % (str(tstep), str(t)))
    return Verdict(True)


# ---------------------------------------------------------------------------
# Dependency-set soundness
# ---------------------------------------------------------------------------

def _load_outcome(st: State, t: Name):
    d = denote(st, t)
    act = frozenset(m.name for m in str_act(st, t))
    return (d, act)


def check_deps_oracle(st: State, t: Name,
                      rng: Optional[random.Random] = None,
                      values: Sequence[int] = (0, 1, 5, 97)) -> Verdict:
    """Brute-force check that nothing outside deps(t) can influence the
    load at t: mutating any other name's value (or removing it) leaves the
    load's denotation and active store set unchanged.  Mutations inside
    deps that never change the outcome are reported as warnings only."""
    m = st.I[t]
    if not m.is_load():
        raise PreconditionViolated("%s is not a load" % str(t))
    T = deps(st, t)
    baseline = _load_outcome(st, t)
    warnings = []
    for n in st.I:
        if n == t or n >= t:
            continue
        mutations = [None] + list(values)
        changed = False
        for v in mutations:
            s2 = dict(st.s)
            if v is None:
                s2.pop(n, None)
            else:
                s2[n] = v
            view = State(st.prog, st.I, s2, st.C, st.F, st.origin,
                         st.stores, st.max_name)
            outcome = _load_outcome(view, t)
            if n not in T:
                if outcome != baseline:
                    return Verdict(
                        False,
                        "mutating %s (outside deps) changed the load at %s"
                        % (str(n), str(t)))
            elif outcome != baseline:
                changed = True
        if n in T and n in st.s and not changed:
            warnings.append("no mutation of dependency %s changed %s"
                            % (str(n), str(t)))
    return Verdict(True, warnings=tuple(warnings))
