"""
Speculative MIL semantics.

Extends the out-of-order machine with value prediction and recovery.  A
speculative state carries, besides (I, s, C, F):

  * delta: per-name snapshots.  When a micro executes, the values of
    everything its result depends on are recorded; when an instruction is
    fetched, each new micro records the fetching PC store's value.  A
    snapshot that still matches the live storage certifies the execution
    and lets the micro retire; a mismatch forces a rollback.
  * P: the names whose current value is a prediction not yet validated by
    a real execution.

Rules: prd (guess the value of an internal operation), exe / cmt / ftc
(the out-of-order rules, snapshotting dependencies), pexe (re-execute a
predicted micro for real), ret (retire a micro whose snapshot is
consistent), rbk (undo a misspeculated micro; for a fetched PC store this
also squashes every micro it decoded, transitively).

Snapshots double as fetch provenance: the entry recorded at fetch time is
kept across prediction and rollback so that a squash always reaches the
whole wrong path.
"""

from __future__ import annotations

from typing import Dict, FrozenSet, List, Optional, Set, Tuple

from .isa import IsaProgram
from .mil import MEM, PC, Micro, Name, expr_names
from .ooo import (
    Obs, State, can_cmt, can_exe, can_ftc, denote, str_act, str_may,
)
from .ooo import initial_state as _ooo_initial_state
from .isa import translate

PRD, EXE, PEXE, CMT, FTC, RET, RBK = \
    "prd", "exe", "pexe", "cmt", "ftc", "ret", "rbk"

# (rule, name) or (rule, name, predicted value)
SpecStepParam = tuple


class RuleNotEnabled(ValueError):
    pass


class SpecState(State):
    __slots__ = ("delta", "P", "prov", "delta_fs")

    def __init__(self, prog, I, s, C, F, origin, stores, max_name,
                 delta=None, P=None, prov=None, delta_fs=None):
        State.__init__(self, prog, I, s, C, F, origin, stores, max_name)
        self.delta: Dict[Name, Dict[Name, int]] = delta if delta is not None else {}
        self.P: Set[Name] = P if P is not None else set()
        self.prov: Dict[Name, Name] = prov if prov is not None else {}
        # Frozen mirror of each delta snapshot, built once when the
        # snapshot is recorded and shared across copies (snapshots are
        # never mutated in place), so key() reuses cached hashes.
        self.delta_fs: Dict[Name, FrozenSet] = \
            delta_fs if delta_fs is not None else {}

    def copy(self) -> "SpecState":
        return SpecState(
            self.prog, dict(self.I), dict(self.s), set(self.C), set(self.F),
            dict(self.origin), {r: list(v) for r, v in self.stores.items()},
            self.max_name, dict(self.delta), set(self.P), dict(self.prov),
            dict(self.delta_fs))

    def key(self):
        return (State.key(self), frozenset(self.delta_fs.items()),
                frozenset(self.P))


def initial_state(prog: IsaProgram,
                  overrides: Optional[Dict[tuple, int]] = None) -> SpecState:
    base = _ooo_initial_state(prog, overrides)
    return SpecState(base.prog, base.I, base.s, base.C, base.F, base.origin,
                     base.stores, base.max_name)


# ---------------------------------------------------------------------------
# Dependencies
# ---------------------------------------------------------------------------

def asn(st: State, t: Name) -> FrozenSet[Name]:
    """Names of the active sources of the load at t."""
    return frozenset(m.name for m in str_act(st, t))


def srcs(st: State, t: Name) -> FrozenSet[Name]:
    """Names controlling which store the load at t reads from: the guard
    and address names of every same-resource store between the oldest
    active source and t."""
    sources = asn(st, t)
    if not sources:
        return frozenset()
    return frozenset(_srcs_from(st, t, min(sources)))


def _srcs_from(st: State, t: Name, lo: Name) -> Set[Name]:
    m = st.I[t]
    out: Set[Name] = set()
    for cand in st.stores.get(m.res, ()):
        if lo <= cand.name < t:
            out |= cand.guard_names
            if cand.addr is not None:
                out |= expr_names(cand.addr)
    return out


def depsX(st: State, t: Name) -> FrozenSet[Name]:
    m = st.I[t]
    if not m.is_load():
        return frozenset()
    return asn(st, t) | srcs(st, t)


def deps(st: State, t: Name) -> FrozenSet[Name]:
    """Every name whose value can influence the result of the micro at t:
    its free names plus, for loads, the sources it may read from and the
    names that arbitrate between them."""
    m = st.I[t]
    if m.kind != "load":
        return m.fn
    sources = {a.name for a in str_act(st, t)}
    if not sources:
        return m.fn
    out = _srcs_from(st, t, min(sources))
    out |= sources
    out |= m.fn
    return frozenset(out)


# ---------------------------------------------------------------------------
# t-equivalence
# ---------------------------------------------------------------------------

def _act_names(st: SpecState, view: State, t: Name) -> FrozenSet[Name]:
    T = deps(view, t)
    restricted = st.view_with_storage(
        {n: view.s[n] for n in T if n in view.s})
    return frozenset(m.name for m in str_act(restricted, t))


def t_equivalent(st1: State, st2: State, t: Name) -> bool:
    """The two states assign the micro at t the same meaning: they agree on
    its free names and, for loads, on which store it reads and the value
    stored there."""
    m1, m2 = st1.I.get(t), st2.I.get(t)
    if m1 is None or m2 is None or m1 != m2:
        return False
    for n in m1.fn:
        if st1.s.get(n) != st2.s.get(n):
            return False
    if m1.is_load():
        sa1 = _act_names(st1, st1, t)
        sa2 = _act_names(st1, st2, t)
        if sa1 != sa2:
            return False
        for n in sa1:
            if st1.s.get(n) != st2.s.get(n):
                return False
    return True


def _t_equiv_snapshot(st: SpecState, t: Name) -> bool:
    """t-equivalence between st and st with its storage replaced by the
    snapshot taken when t executed."""
    m = st.I[t]
    snap = st.delta[t]
    s = st.s
    for n in m.fn:
        if s.get(n) != snap.get(n):
            return False
    if m.kind != "load":
        return True
    return t_equivalent(st, st.view_with_storage(snap), t)


# ---------------------------------------------------------------------------
# Rules
# ---------------------------------------------------------------------------

def _snapshot(st: SpecState, base: State, t: Name) -> Dict[Name, int]:
    """Dependency snapshot of t over `base`, keeping fetch provenance."""
    snap: Dict[Name, int] = {}
    tf = st.prov.get(t)
    if tf is not None and tf in st.s:
        snap[tf] = st.s[tf]
    for n in deps(base, t):
        if n in base.s:
            snap[n] = base.s[n]
    return snap


def _provenance_entry(st: SpecState, t: Name) -> Dict[Name, int]:
    tf = st.prov.get(t)
    if tf is not None and tf in st.s:
        return {tf: st.s[tf]}
    return {}


def delta_plus(st: SpecState, t: Name) -> FrozenSet[Name]:
    """Names that (transitively) recorded t in their snapshot — the micros
    whose existence or value hinges on t."""
    out: Set[Name] = set()
    frontier = [t]
    while frontier:
        cur = frontier.pop()
        for t2, snap in st.delta.items():
            if cur in snap and t2 not in out and t2 != t:
                out.add(t2)
                frontier.append(t2)
    return frozenset(out)


def can_prd(st: SpecState, t: Name) -> bool:
    m = st.I.get(t)
    return m is not None and m.is_internal() and t not in st.s


def can_spec_ftc(st: SpecState, t: Name) -> Optional[Obs]:
    """Fetch premise of the speculative machine: in-order fetching is
    judged along the path the store was executed under.  When the live
    storage no longer satisfies the base premise (a prior PC store's guard
    was resolved the other way after t executed), re-evaluate it with t's
    dependency snapshot overlaid, so a store executed on the speculated
    path can still be fetched — and rolled back later."""
    obs = can_ftc(st, t)
    if obs is not None:
        return obs
    snap = st.delta.get(t)
    if not snap or t not in st.s or t in st.F:
        return None
    view = st.view_with_storage({**st.s, **snap})
    return can_ftc(view, t)


def can_ret(st: SpecState, t: Name) -> bool:
    if t not in st.s or t in st.P or t not in st.delta:
        return False
    if any(n in st.delta for n in st.delta[t]):
        return False
    return _t_equiv_snapshot(st, t)


def can_rbk(st: SpecState, t: Name) -> bool:
    if t not in st.s or t in st.P or t not in st.delta:
        return False
    return not _t_equiv_snapshot(st, t)


def spec_enabled(st: SpecState, pred=None) -> List[SpecStepParam]:
    """All applicable rule parameters; `pred` maps a state to candidate
    predicted values per name."""
    out: List[SpecStepParam] = []
    guesses = pred(st) if pred is not None else {}
    for t, vals in guesses.items():
        if can_prd(st, t):
            for v in sorted(vals):
                out.append((PRD, t, v))
    for t, m in st.I.items():
        if t not in st.s:
            if can_exe(st, t) is not None:
                out.append((EXE, t))
        else:
            if t in st.P:
                base = st.view_with_storage(
                    {n: v for n, v in st.s.items() if n != t})
                if can_exe(base, t) is not None:
                    out.append((PEXE, t))
            if (m.is_mem_store() and t not in st.delta
                    and can_cmt(st, t) is not None):
                out.append((CMT, t))
            if m.is_pc_store() and can_spec_ftc(st, t) is not None:
                out.append((FTC, t))
            # Retire and rollback share the snapshot comparison; evaluate
            # it once per candidate.
            if t not in st.P and t in st.delta:
                if _t_equiv_snapshot(st, t):
                    if not any(n in st.delta for n in st.delta[t]):
                        out.append((RET, t))
                else:
                    out.append((RBK, t))
    return out


def _set_delta(st: SpecState, t: Name, snap: Dict[Name, int]) -> None:
    st.delta[t] = snap
    st.delta_fs[t] = frozenset(snap.items())


def _del_delta(st: SpecState, t: Name) -> None:
    del st.delta[t]
    del st.delta_fs[t]


def apply_spec_step(st: SpecState, param: SpecStepParam) -> Optional[Obs]:
    """Apply one speculative transition in place."""
    rule, t = param[0], param[1]
    if rule == PRD:
        v = param[2]
        if not can_prd(st, t):
            raise RuleNotEnabled(str(param))
        prov = _provenance_entry(st, t)
        st.s[t] = v
        _set_delta(st, t, prov)
        st.P.add(t)
        return None

    if rule == EXE:
        res = can_exe(st, t)
        if res is None:
            raise RuleNotEnabled(str(param))
        v, obs = res
        snap = _snapshot(st, st, t)
        st.s[t] = v
        _set_delta(st, t, snap)
        return obs

    if rule == PEXE:
        if t not in st.P:
            raise RuleNotEnabled(str(param))
        base = st.view_with_storage(
            {n: v for n, v in st.s.items() if n != t})
        res = can_exe(base, t)
        if res is None:
            raise RuleNotEnabled(str(param))
        v, obs = res
        snap = _snapshot(st, base, t)
        st.s[t] = v
        _set_delta(st, t, snap)
        st.P.discard(t)
        return obs

    if rule == CMT:
        if t in st.delta:
            raise RuleNotEnabled(str(param))
        obs = can_cmt(st, t)
        if obs is None:
            raise RuleNotEnabled(str(param))
        st.C.add(t)
        return obs

    if rule == FTC:
        obs = can_spec_ftc(st, t)
        if obs is None:
            raise RuleNotEnabled(str(param))
        addr = st.s[t]
        micros = translate(addr, st.max_name, st.prog)
        st.F.add(t)
        st.add_micros(micros, addr)
        v = st.s[t]
        for m in micros:
            st.prov[m.name] = t
            _set_delta(st, m.name, {t: v})
        return obs

    if rule == RET:
        if not can_ret(st, t):
            raise RuleNotEnabled(str(param))
        _del_delta(st, t)
        return None

    if rule == RBK:
        if not can_rbk(st, t):
            raise RuleNotEnabled(str(param))
        if t in st.F:
            _rollback_fetched(st, t)
            return None
        del st.s[t]
        prov = _provenance_entry(st, t)
        if prov:
            _set_delta(st, t, prov)
        else:
            _del_delta(st, t)
        return None

    raise RuleNotEnabled(str(param))


def spec_step(st: SpecState, param: SpecStepParam) -> Tuple[SpecState, Optional[Obs]]:
    nxt = st.copy()
    obs = apply_spec_step(nxt, param)
    return nxt, obs


def _rollback_fetched(st: SpecState, t: Name) -> None:
    """Undo a misfetched PC store in place: squash every micro it decoded
    (transitively) and forget its own value so it re-executes."""
    squash = delta_plus(st, t)
    prov = _provenance_entry(st, t)
    for t2 in squash:
        st.I.pop(t2, None)
        st.s.pop(t2, None)
        st.F.discard(t2)
        st.delta.pop(t2, None)
        st.delta_fs.pop(t2, None)
        st.P.discard(t2)
        st.C.discard(t2)
        st.prov.pop(t2, None)
    for k in {t2[0] for t2 in squash}:
        st.origin.pop(k, None)
    if squash:
        st.stores = {r: [m for m in lst if m.name not in squash]
                     for r, lst in st.stores.items()}
    del st.s[t]
    st.F.discard(t)
    if prov:
        _set_delta(st, t, prov)
    else:
        _del_delta(st, t)
    if st.I:
        st.max_name = max(st.max_name, max(st.I))


# ---------------------------------------------------------------------------
# Wellformedness of reachable states
# ---------------------------------------------------------------------------

def wellformed_partition(st: SpecState):
    """Partition the pool into a retired block plus one block per
    in-flight instruction, each traceable through fetch provenance to the
    retired block.  Returns (retired_names, {instr_index: names}) or None
    when some in-flight instruction has no surviving producer."""
    blocks: Dict[int, Set[Name]] = {}
    for t in st.I:
        blocks.setdefault(t[0], set()).add(t)
    retired: Set[Name] = set()
    retired_idx: Set[int] = set()
    pending = dict(blocks)
    changed = True
    while changed:
        changed = False
        for k, names in list(pending.items()):
            if any(t in st.delta for t in names):
                continue
            fetchers = {st.prov[t] for t in names if t in st.prov}
            if fetchers and not all(f in retired or f[0] in retired_idx
                                    for f in fetchers):
                continue
            retired |= names
            retired_idx.add(k)
            del pending[k]
            changed = True
    for names in pending.values():
        # In-flight blocks must trace back to a surviving producer (blocks
        # decoded at start-up are anchored to the retired lineage).
        for t in names:
            f = st.prov.get(t)
            if f is not None and f not in st.I:
                return None
    return frozenset(retired), {k: frozenset(v) for k, v in pending.items()}


def run_spec(st: SpecState, schedule, pred=None, max_steps: int = 10000):
    """Drive a speculative state with a scheduler until quiescent."""
    trace: List[Obs] = []
    for _ in range(max_steps):
        params = spec_enabled(st, pred)
        if not params:
            break
        choice = schedule(st, params)
        if choice is None:
            break
        st, obs = spec_step(st, choice)
        if obs is not None:
            trace.append(obs)
    return st, trace
