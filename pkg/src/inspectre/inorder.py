"""
Sequential (in-order) reference machine.

The in-order machine runs the same transition rules as the out-of-order
one, but always at the smallest name that is not yet completed, which makes
its run deterministic.  It serves as the memory-consistency oracle: any
out-of-order or speculative run must commit, per address, a prefix of the
value sequence this machine commits.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .isa import IsaProgram
from .mil import Name
from .ooo import (
    CMT, EXE, FTC, Obs, State, can_cmt, can_exe, can_ftc, initial_state,
    step,
)

HALTED = "halted"
STUCK = "stuck"
LIMIT = "limit"


def completed(st: State, t: Name) -> bool:
    """A micro is completed once nothing about it can still change the
    machine: its guard is false, or it has executed and (for memory stores)
    committed / (for PC stores) fetched."""
    m = st.I[t]
    if st.value(m.guard) == 0:
        return True
    if t not in st.s:
        return False
    if m.is_mem_store():
        return t in st.C
    if m.is_pc_store():
        return t in st.F
    return True


def inorder_next(st: State) -> Optional[Tuple[str, Name]]:
    """The unique transition of the in-order machine: the pending rule at
    the minimal uncompleted name, or None when halted or stuck."""
    pending = [t for t in st.I if not completed(st, t)]
    if not pending:
        return None
    t = min(pending)
    m = st.I[t]
    if t not in st.s:
        if can_exe(st, t) is not None:
            return (EXE, t)
        return None
    if m.is_mem_store() and can_cmt(st, t) is not None:
        return (CMT, t)
    if m.is_pc_store() and can_ftc(st, t) is not None:
        return (FTC, t)
    return None


def is_halted(st: State) -> bool:
    return all(completed(st, t) for t in st.I)


@dataclass
class Run:
    final: State
    trace: List[Obs] = field(default_factory=list)
    commit_log: List[Tuple[int, int]] = field(default_factory=list)
    status: str = LIMIT
    steps: int = 0


def inorder_step(st: State) -> Optional[Tuple[State, Optional[Obs]]]:
    nxt = inorder_next(st)
    if nxt is None:
        return None
    return step(st, *nxt)


def run_inorder(prog_or_state, max_steps: int = 20000) -> Run:
    st = (initial_state(prog_or_state)
          if isinstance(prog_or_state, IsaProgram) else prog_or_state)
    run = Run(final=st)
    while run.steps < max_steps:
        nxt = inorder_next(st)
        if nxt is None:
            run.status = HALTED if is_halted(st) else STUCK
            break
        rule, t = nxt
        if rule == CMT:
            m = st.I[t]
            run.commit_log.append((st.value(m.addr), st.s[t]))
        st, obs = step(st, rule, t)
        if obs is not None:
            run.trace.append(obs)
        run.steps += 1
    run.final = st
    return run


def commits(run: Run, addr: Optional[int] = None):
    """Committed value sequence of a run, per address or for one address."""
    if addr is not None:
        return [v for a, v in run.commit_log if a == addr]
    out: Dict[int, List[int]] = {}
    for a, v in run.commit_log:
        out.setdefault(a, []).append(v)
    return out
