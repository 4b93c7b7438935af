"""
Value predictors and scheduler constraints.

A predictor is a pure function from a machine state to a partial map from
names to finite candidate-value sets; the speculative machine's predict
rule may guess any candidate.  Predictors compose by pointwise union.

A constraint is a predicate over (state, rule parameter) that filters the
enabled transitions of the speculative machine; constraints model
countermeasures (fences, speculation barriers) and restricted pipelines.
"""

from __future__ import annotations

from typing import Callable, Dict, FrozenSet, List, Optional, Set, Tuple

from .mil import MEM, PC, REG, Micro, Name, expr_names
from .ooo import str_act
from .speculative import (
    CMT, EXE, FTC, PEXE, PRD, RBK, RET, SpecState, spec_enabled, srcs,
)

Prediction = Dict[Name, Set[int]]
Predictor = Callable[[SpecState], Prediction]
Constraint = Callable[[SpecState, tuple], bool]


def _merge(into: Prediction, add: Prediction) -> None:
    for t, vals in add.items():
        into.setdefault(t, set()).update(vals)


def compose_predictors(*preds: Predictor) -> Predictor:
    def composed(st: SpecState) -> Prediction:
        out: Prediction = {}
        for p in preds:
            _merge(out, p(st))
        return out
    return composed


def _value_name(m: Micro) -> Optional[Name]:
    """The single name a PC store's value operand refers to, if its value
    expression is exactly a name reference."""
    if m.val is not None and m.val[0] == "name":
        return m.val[1]
    return None


# ---------------------------------------------------------------------------
# Predictors
# ---------------------------------------------------------------------------

def pred_br(st: SpecState) -> Prediction:
    """Branch prediction: guess the (boolean) names guarding PC stores
    whose jump target is already known."""
    out: Prediction = {}
    for m in st.stores.get(PC, ()):
        if st.value(m.val) is None:
            continue
        for t in m.guard_names:
            if t in st.s:
                continue
            dep = st.I.get(t)
            if dep is not None and dep.is_internal():
                out.setdefault(t, set()).update((0, 1))
    return out


def _btb_candidates(st: SpecState) -> List[int]:
    cands = st.prog.btb_candidates
    if cands is None:
        cands = tuple(st.prog.code_labels())
    return list(cands)


def pred_btb(st: SpecState) -> Prediction:
    """Indirect-jump target prediction: guess the unresolved target name
    of any indirect-jump PC store."""
    out: Prediction = {}
    cands = _btb_candidates(st)
    if not cands:
        return out
    for m in st.stores.get(PC, ()):
        if m.tag != "ijmp":
            continue
        t = _value_name(m)
        if t is not None and t not in st.s:
            out.setdefault(t, set()).update(cands)
    return out


def rsb_depth(st: SpecState, t_call: Name, t_ret: Name) -> FrozenSet[int]:
    """Running call-stack depths between a call and a return: 1 at the
    call, +1 per intervening call, -1 per intervening return."""
    depth = 1
    seen = {1}
    for m in st.stores.get(PC, ()):
        if not (t_call < m.name < t_ret):
            continue
        if m.tag == "call":
            depth += 1
            seen.add(depth)
        elif m.tag == "ret":
            depth -= 1
            seen.add(depth)
    return frozenset(seen)


def _ret_sites(st: SpecState):
    for m in st.stores.get(PC, ()):
        if m.tag != "ret":
            continue
        t = _value_name(m)
        if t is not None and t not in st.s:
            yield t, m


def pred_rsb(st: SpecState, capacity: Optional[int] = None) -> Prediction:
    """Return-address prediction via a bounded return stack: a return may
    be predicted to land on the address saved by a prior call that the
    intervening call/return balance leaves on top of a stack of at most
    `capacity` entries."""
    n = capacity if capacity is not None else st.prog.rsb_capacity
    out: Prediction = {}
    calls = [m for m in st.stores.get(PC, ()) if m.tag == "call"]
    for t, ret_m in _ret_sites(st):
        for call_m in calls:
            if call_m.name >= ret_m.name:
                continue
            depths = rsb_depth(st, call_m.name, ret_m.name)
            if not depths <= frozenset(range(1, n + 1)):
                continue
            # The call matches when its frame is back on top at the return.
            if _depth_at_end(st, call_m.name, ret_m.name) != 1:
                continue
            ra = call_m.ret_ra
            if ra is not None and ra in st.s:
                out.setdefault(t, set()).add(st.s[ra])
    return out


def _depth_at_end(st: SpecState, t_call: Name, t_ret: Name) -> int:
    depth = 1
    for m in st.stores.get(PC, ()):
        if not (t_call < m.name < t_ret):
            continue
        if m.tag == "call":
            depth += 1
        elif m.tag == "ret":
            depth -= 1
    return depth


def pred_rsb_btb(st: SpecState, capacity: Optional[int] = None) -> Prediction:
    """Return-stack prediction that falls back to indirect-jump candidates
    when the stack cannot answer (no matching call within capacity)."""
    out = pred_rsb(st, capacity)
    n = capacity if capacity is not None else st.prog.rsb_capacity
    cands = _btb_candidates(st)
    calls = [m for m in st.stores.get(PC, ()) if m.tag == "call"]
    for t, ret_m in _ret_sites(st):
        if t in out:
            continue
        overflow = not calls
        for call_m in calls:
            if call_m.name >= ret_m.name:
                continue
            if (_depth_at_end(st, call_m.name, ret_m.name) == 1
                    and max(rsb_depth(st, call_m.name, ret_m.name)) > n):
                overflow = True
        if overflow and cands:
            out.setdefault(t, set()).update(cands)
    return out


def _pending_store_loads(st: SpecState):
    """Pairs (t_a, load_addr) where t_a is the unresolved address name of a
    memory store appearing among the active sources of a younger memory
    load whose own address is resolved."""
    for m in st.stores.get(MEM, ()):
        if m.addr is None or m.addr[0] != "name":
            continue
        t_a = m.addr[1]
        if t_a in st.s:
            continue
        dep = st.I.get(t_a)
        if dep is None or not dep.is_internal():
            continue
        for t_l, ml in st.I.items():
            if (ml.is_load() and ml.res == MEM and t_l > m.name
                    and ml.addr is not None):
                av = st.value(ml.addr)
                if av is None:
                    continue
                if any(a.name == m.name for a in str_act(st, t_l)):
                    yield t_a, av


def pred_stl(st: SpecState) -> Prediction:
    """Store-to-load independence prediction: guess that a pending store's
    address differs from a younger load's, letting the load go early."""
    out: Prediction = {}
    footprint = st.prog.footprint_mem()
    for t_a, load_addr in _pending_store_loads(st):
        vals = {a for a in footprint if a != load_addr}
        if vals:
            out.setdefault(t_a, set()).update(vals)
    return out


def pred_stld(st: SpecState) -> Prediction:
    """Store-to-load dependence prediction: guess that a pending store's
    address equals a younger load's, forwarding its value early."""
    out: Prediction = {}
    for t_a, load_addr in _pending_store_loads(st):
        out.setdefault(t_a, set()).add(load_addr)
    return out


PREDICTORS: Dict[str, Predictor] = {
    "br": pred_br,
    "btb": pred_btb,
    "rsb": pred_rsb,
    "rsb_btb": pred_rsb_btb,
    "stl": pred_stl,
    "stld": pred_stld,
}


# ---------------------------------------------------------------------------
# Constraints
# ---------------------------------------------------------------------------

def _is_exec(param: tuple) -> bool:
    return param[0] in (EXE, PEXE)


def constraint_fetch_only(st: SpecState, param: tuple) -> bool:
    """Speculative fetch without speculative data access: a non-PC load or
    store may execute only when no older micro is still unretired."""
    if not _is_exec(param):
        return True
    t = param[1]
    m = st.I[t]
    if m.is_internal() or m.res == PC:
        return True
    return not any(t2 < t for t2 in st.delta)


def constraint_lfence(st: SpecState, param: tuple) -> bool:
    """Load-fence ordering: a fence waits for every older memory load to
    execute and retire; younger memory accesses and register writes wait
    for every older fence to execute and retire."""
    if not _is_exec(param):
        return True
    t = param[1]
    m = st.I[t]
    if m.tag == "fence":
        for t2, m2 in st.I.items():
            if t2 >= t or not (m2.is_load() and m2.res == MEM):
                continue
            g = st.value(m2.guard)
            if g == 0:
                continue
            if g is None or t2 not in st.s or t2 in st.delta:
                return False
            if any(n in st.delta for n in m2.guard_names):
                return False
        return True
    restricted = (m.is_mem_access()
                  or (m.is_store() and m.res == REG))
    if not restricted:
        return True
    for t2, m2 in st.I.items():
        if t2 < t and m2.tag == "fence":
            if t2 not in st.s or t2 in st.delta:
                return False
    return True


def constraint_ssbs(st: SpecState, param: tuple) -> bool:
    """Speculative store bypass disable: a load may not execute while a
    predicted store address that differs from the load's address is
    arbitrating its source."""
    if not _is_exec(param):
        return True
    t = param[1]
    m = st.I[t]
    if not (m.is_load() and m.res == MEM) or m.addr is None:
        return True
    av = st.value(m.addr)
    if av is None:
        return True
    for t2 in srcs(st, t):
        if t2 in st.P and t2 in st.s and st.s[t2] != av:
            return False
    return True


CONSTRAINTS: Dict[str, Constraint] = {
    "fetch_only": constraint_fetch_only,
    "lfence": constraint_lfence,
    "ssbs": constraint_ssbs,
}


def enabled_under(st: SpecState, pred: Optional[Predictor],
                  constraints: Tuple[Constraint, ...] = ()) -> List[tuple]:
    """Speculative enabled set filtered by scheduler constraints."""
    params = spec_enabled(st, pred)
    for c in constraints:
        params = [p for p in params if c(st, p)]
    return params
