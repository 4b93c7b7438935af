"""
Out-of-order MIL semantics.

A machine state is (I, s, C, F): the decoded microinstruction pool I, the
storage s mapping executed names to values, the set C of committed memory
stores, and the set F of fetched program-counter stores.  Three rules drive
execution:

  * execute:  pick any unexecuted micro whose guard holds and whose
    operation denotes a value; record the value in storage.
  * commit:   make an executed memory store architecturally visible once
    every potentially conflicting earlier store has committed.
  * fetch:    consume an executed program-counter store, decoding the
    target instruction into fresh microinstructions.

Observations: data loads from committed memory (`DL a`), data store commits
(`DS a`), and instruction fetches (`IL a`); everything else is silent.
"""

from __future__ import annotations

from typing import Dict, FrozenSet, Iterator, List, Optional, Set, Tuple

from .isa import IsaProgram, REGISTER_IDS, UndecodableAddress, translate
from .mil import (
    MEM, PC, REG, Micro, Name, eval_expr, lit, store,
)

Obs = Tuple[str, int]        # ("DL"|"DS"|"IL", address)
SILENT: Optional[Obs] = None

EXE, CMT, FTC = "exe", "cmt", "ftc"


class State:
    """Out-of-order machine state.

    `stores` caches, per resource, the name-sorted list of store micros in
    I (the only micros the may/act store analyses ever scan).  `origin`
    maps each instruction index in I to the code address it was decoded
    from (index 0 is the initial-content pseudo-instruction), which
    identifies I up to the translation function.
    """

    __slots__ = ("prog", "I", "s", "C", "F", "origin", "stores", "max_name",
                 "mask")

    def __init__(self, prog: IsaProgram, I: Dict[Name, Micro],
                 s: Dict[Name, int], C: Set[Name], F: Set[Name],
                 origin: Dict[int, int], stores: Dict[str, List[Micro]],
                 max_name: Name):
        self.prog = prog
        self.I = I
        self.s = s
        self.C = C
        self.F = F
        self.origin = origin
        self.stores = stores
        self.max_name = max_name
        self.mask = prog.mask

    def copy(self) -> "State":
        return State(self.prog, dict(self.I), dict(self.s), set(self.C),
                     set(self.F), dict(self.origin),
                     {r: list(v) for r, v in self.stores.items()},
                     self.max_name)

    def value(self, e: tuple) -> Optional[int]:
        tag = e[0]
        if tag == "name":
            return self.s.get(e[1])
        if tag == "lit":
            return e[1] & self.mask
        return eval_expr(e, self.s, self.mask)

    def add_micros(self, micros: List[Micro], addr: int) -> None:
        for m in micros:
            self.I[m.name] = m
            if m.is_store():
                self.stores.setdefault(m.res, []).append(m)
            if m.name > self.max_name:
                self.max_name = m.name
        if micros:
            self.origin[micros[0].name[0]] = addr

    def view_with_storage(self, s) -> "State":
        """A read-only state sharing this one's pool but a different
        storage; used for snapshot comparisons."""
        return State(self.prog, self.I, s, self.C, self.F, self.origin,
                     self.stores, self.max_name)

    def key(self):
        """Hashable identity for state-space exploration."""
        return (frozenset(self.origin.items()), frozenset(self.s.items()),
                frozenset(self.C), frozenset(self.F))

    def __repr__(self):
        return "<State |I|=%d |s|=%d |C|=%d |F|=%d>" % (
            len(self.I), len(self.s), len(self.C), len(self.F))


def initial_state(prog: IsaProgram,
                  overrides: Optional[Dict[tuple, int]] = None) -> State:
    """Build the starting state: one executed bootstrap store per data
    memory cell and register in the program footprint, plus an executed and
    fetched program-counter store of the entry point (whose translation is
    already decoded).

    `overrides` replaces initial values, keyed by ("mem", addr) or
    ("reg", name); used to pick secret candidate values.
    """
    overrides = overrides or {}
    st = State(prog, {}, {}, set(), set(), {0: 0}, {}, (0, 0))
    boot: List[Micro] = []
    j = 0

    def emit(res, addr_e, value, tag=None):
        nonlocal j
        j += 1
        m = store((0, j), res, addr_e, lit(value), tag=tag)
        boot.append(m)
        st.s[m.name] = value
        return m

    for a in prog.footprint_mem():
        v = overrides.get(("mem", a), prog.mem_init.get(a, 0))
        m = emit(MEM, lit(a), v)
        st.C.add(m.name)
    for r in prog.footprint_reg():
        v = overrides.get(("reg", r), prog.reg_init.get(r, 0))
        emit(REG, lit(REGISTER_IDS[r]), v)
    entry = emit(PC, None, prog.entry)
    st.F.add(entry.name)
    for m in boot:
        st.I[m.name] = m
        st.stores.setdefault(m.res, []).append(m)
    st.max_name = (0, j)
    st.add_micros(translate(prog.entry, st.max_name, prog), prog.entry)
    return st


# ---------------------------------------------------------------------------
# Store may/act analyses
# ---------------------------------------------------------------------------

def str_may(st: State, t: Name) -> List[Micro]:
    """Earlier same-resource stores that may bind the access at t: guard
    not false and address not provably different."""
    m = st.I[t]
    av = None if m.addr is None else st.value(m.addr)
    out = []
    is_pc = m.res == PC
    for cand in st.stores.get(m.res, ()):
        if cand.name >= t:
            continue
        g = cand.guard_const
        if g is None:
            g = st.value(cand.guard)
        if g == 0:
            continue
        if not is_pc:
            cv = cand.addr_const
            if cv is None:
                cv = st.value(cand.addr)
            if av is not None and cv is not None and av != cv:
                continue
        out.append(cand)
    return out


def str_act(st: State, t: Name) -> List[Micro]:
    """Members of str_may(t) not superseded by a later may-store whose
    guard holds and whose address resolves to either the access address or
    the candidate's own address."""
    may = str_may(st, t)
    if len(may) <= 1:
        return may
    m = st.I[t]
    av = None if m.addr is None else st.value(m.addr)
    out = []
    for cand in may:
        cv = None if cand.addr is None else st.value(cand.addr)
        superseded = False
        for later in may:
            if later.name <= cand.name:
                continue
            g = later.guard_const
            if g is None:
                g = st.value(later.guard)
            if g != 1:
                continue
            if later.addr is None:       # PC store: the single implicit cell
                superseded = True
                break
            lv = later.addr_const
            if lv is None:
                lv = st.value(later.addr)
            if lv is not None and (lv == av or lv == cv):
                superseded = True
                break
        if not superseded:
            out.append(cand)
    return out


# ---------------------------------------------------------------------------
# Denotation and rules
# ---------------------------------------------------------------------------

def denote(st: State, t: Name) -> Optional[Tuple[int, Optional[Obs]]]:
    """Value and observation of the micro at t in storage st, or None when
    its operation does not (yet) denote."""
    m = st.I[t]
    if m.is_internal():
        v = st.value(m.expr)
        return None if v is None else (v, SILENT)
    if m.is_store():
        v = st.value(m.val)
        if v is None:
            return None
        if m.addr is not None and st.value(m.addr) is None:
            return None
        return (v, SILENT)
    # Load: requires a unique active source, a resolved address, and a
    # source with a value; observable only when reading committed memory.
    act = str_act(st, t)
    if len(act) != 1:
        return None
    src = act[0].name
    if src not in st.s:
        return None
    av = 0
    if m.addr is not None:
        av = st.value(m.addr)
        if av is None:
            return None
    if m.res == MEM and src in st.C:
        return (st.s[src], ("DL", av))
    return (st.s[src], SILENT)


def can_exe(st: State, t: Name) -> Optional[Tuple[int, Optional[Obs]]]:
    if t in st.s:
        return None
    m = st.I[t]
    g = m.guard_const
    if g is None:
        g = st.value(m.guard)
    if g != 1:
        return None
    return denote(st, t)


def can_cmt(st: State, t: Name) -> Optional[Obs]:
    m = st.I[t]
    if not m.is_mem_store() or t not in st.s or t in st.C:
        return None
    for prior in str_may(st, t):
        if prior.name not in st.C:
            return None
    return ("DS", st.value(m.addr))


def can_ftc(st: State, t: Name) -> Optional[Obs]:
    m = st.I[t]
    if not m.is_pc_store() or t not in st.s or t in st.F:
        return None
    if st.s[t] not in st.prog.instrs:
        return None
    for prior in str_may(st, t):
        if prior.name not in st.F:
            return None
    return ("IL", st.s[t])


def enabled(st: State) -> List[Tuple[str, Name]]:
    """All (rule, name) transitions applicable in st."""
    out = []
    for t, m in st.I.items():
        if t not in st.s:
            if can_exe(st, t) is not None:
                out.append((EXE, t))
        else:
            if m.is_mem_store() and can_cmt(st, t) is not None:
                out.append((CMT, t))
            if m.is_pc_store() and can_ftc(st, t) is not None:
                out.append((FTC, t))
    return out


def apply_step(st: State, rule: str, t: Name) -> Optional[Obs]:
    """Apply one transition in place, returning its observation.  Raises
    ValueError when the transition is not enabled."""
    if rule == EXE:
        res = can_exe(st, t)
        if res is None:
            raise ValueError("execute not enabled at %s" % str(t))
        v, obs = res
        st.s[t] = v
        return obs
    if rule == CMT:
        obs = can_cmt(st, t)
        if obs is None:
            raise ValueError("commit not enabled at %s" % str(t))
        st.C.add(t)
        return obs
    if rule == FTC:
        obs = can_ftc(st, t)
        if obs is None:
            raise ValueError("fetch not enabled at %s" % str(t))
        addr = st.s[t]
        micros = translate(addr, st.max_name, st.prog)
        st.F.add(t)
        st.add_micros(micros, addr)
        return obs
    raise ValueError("unknown rule %r" % rule)


def step(st: State, rule: str, t: Name) -> Tuple[State, Optional[Obs]]:
    """Apply one transition, returning the successor state and its
    observation.  Raises ValueError when the transition is not enabled."""
    nxt = st.copy()
    obs = apply_step(nxt, rule, t)
    return nxt, obs


def fetchable(st: State, t: Name) -> bool:
    """True when a fetch at t would decode successfully."""
    m = st.I[t]
    return m.is_pc_store() and t in st.s and st.s[t] in st.prog.instrs


def step_param(pre: State, post: State) -> Tuple[str, Name]:
    """Recover the (rule, name) parameter of a single transition from the
    state pair it relates."""
    dc = post.C - pre.C
    if dc:
        (t,) = dc
        return (CMT, t)
    df = post.F - pre.F
    if df:
        (t,) = df
        return (FTC, t)
    ds = set(post.s) - set(pre.s)
    if len(ds) == 1:
        return (EXE, ds.pop())
    raise ValueError("states are not related by a single transition")


def run(st: State, schedule, max_steps: int = 10000) -> Tuple[State, List[Obs]]:
    """Drive st with `schedule(state, enabled_params) -> param or None`
    until no transition applies (or the scheduler declines)."""
    trace: List[Obs] = []
    for _ in range(max_steps):
        params = enabled(st)
        if not params:
            break
        choice = schedule(st, params)
        if choice is None:
            break
        st, obs = step(st, *choice)
        if obs is not None:
            trace.append(obs)
    return st, trace
