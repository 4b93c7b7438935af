"""Predictors and scheduler constraints."""

from conftest import branch_walkthrough_state, four_stores_state
from inspectre.isa import parse_isa
from inspectre.mil import MEM, PC
from inspectre.predictors import (
    CONSTRAINTS, PREDICTORS, compose_predictors, constraint_fetch_only,
    constraint_lfence, constraint_ssbs, enabled_under, pred_br, pred_btb,
    pred_rsb, pred_stl, pred_stld,
)
from inspectre.speculative import (
    EXE, PRD, initial_state, spec_enabled, spec_step,
)


def run_until(st, pred, constraints=(), max_steps=400, pick=min):
    while max_steps:
        ps = enabled_under(st, pred, constraints)
        if not ps:
            return st
        st, _ = spec_step(st, pick(ps))
        max_steps -= 1
    return st


def test_registry_names():
    assert set(PREDICTORS) == {"br", "btb", "rsb", "rsb_btb", "stl", "stld"}
    assert set(CONSTRAINTS) == {"fetch_only", "lfence", "ssbs"}


def test_pred_br_guesses_branch_guard():
    st = branch_walkthrough_state()
    assert pred_br(st) == {(1, 2): {0, 1}}
    st, _ = spec_step(st, (PRD, (1, 2), 0))
    assert pred_br(st) == {}                    # already resolved


def test_pred_btb_uses_declared_candidates():
    prog = parse_isa(".btb 1004\n.reg r0 1004\njmpi r0\nhalt")
    st = initial_state(prog)
    guesses = pred_btb(st)
    assert len(guesses) == 1
    (vals,) = guesses.values()
    assert vals == {1004}


def test_pred_btb_defaults_to_code_labels():
    prog = parse_isa(".reg r0 1004\njmpi r0\nA: halt\nB: halt")
    st = initial_state(prog)
    (vals,) = pred_btb(st).values()
    assert vals == set(prog.code_labels()) != set()


def test_pred_rsb_matches_call_frame():
    prog = parse_isa("call F\nhalt\nF: ret")
    st = initial_state(prog)
    # Decode everything, execute the call path until the return-target
    # load is the only unresolved internal left unresolved by the stack.
    st = run_until(st, None, max_steps=6)
    guesses = pred_rsb(st)
    if guesses:
        for vals in guesses.values():
            # The only saved return address is the instruction after the
            # call.
            assert vals == {prog.entry + 4}


def test_pred_stl_and_stld_partition_footprint():
    st = four_stores_state()
    st.prog = parse_isa(".mem 0 0\n.mem 1 0\n.mem 5 0\nhalt")
    st.s.update({(1, 1): 1, (2, 1): 0, (4, 1): 1})
    stl = pred_stl(st)
    stld = pred_stld(st)
    assert stld == {(3, 1): {1}}                # alias with the load
    assert stl == {(3, 1): {0, 5}}              # anything but the load
    assert compose_predictors(pred_stl, pred_stld)(st) == {(3, 1): {0, 1, 5}}


def test_constraint_fetch_only_blocks_speculative_loads():
    st = branch_walkthrough_state()
    st, _ = spec_step(st, (PRD, (1, 2), 0))
    # The memory store at (1,4) has older unretired micros: blocked.
    assert not constraint_fetch_only(st, (EXE, (1, 4)))
    # Internal and PC micros stay allowed.
    assert constraint_fetch_only(st, (EXE, (1, 1)))


def decode_all(st):
    """Advance only PC stores (execute + fetch) until no more decode."""
    while True:
        ps = [p for p in spec_enabled(st)
              if p[0] in ("exe", "ftc") and st.I[p[1]].res == PC]
        if not ps:
            return st
        st, _ = spec_step(st, ps[0])


def test_constraint_lfence_orders_around_fence():
    prog = parse_isa(".mem 5 1\nload r0, [5]\nlfence\nload r1, [6]\nhalt")
    st = decode_all(initial_state(prog))
    fence = next(t for t, m in st.I.items() if m.tag == "fence")
    older_load = next(t for t, m in st.I.items()
                      if m.is_load() and m.res == MEM and t < fence)
    younger_load = next(t for t, m in st.I.items()
                        if m.is_load() and m.res == MEM and t > fence)
    # Fence can't execute before the older load retires.
    assert not constraint_lfence(st, (EXE, fence))
    # Younger load can't execute before the fence retires.
    assert not constraint_lfence(st, (EXE, younger_load))
    assert constraint_lfence(st, (EXE, older_load))


def test_constraint_ssbs_blocks_bypassing_load():
    st = four_stores_state(spec=True)
    st.prog = parse_isa(".mem 0 0\n.mem 1 0\n.mem 5 0\nhalt")
    for p in [(EXE, (1, 1)), (EXE, (1, 2)), (EXE, (2, 1)), (EXE, (2, 2)),
              (EXE, (4, 1)), (PRD, (3, 1), 0)]:
        st, _ = spec_step(st, p)
    # The third store's address is a prediction that differs from the
    # load's address: the load must wait.
    assert not constraint_ssbs(st, (EXE, (4, 2)))
    st2, _ = spec_step(st, (EXE, (3, 2)))
    assert not constraint_ssbs(st2, (EXE, (4, 2)))


def test_enabled_under_filters():
    st = branch_walkthrough_state()
    st, _ = spec_step(st, (PRD, (1, 2), 0))
    st, _ = spec_step(st, (EXE, (1, 1)))
    allp = spec_enabled(st)
    filtered = enabled_under(st, None, (constraint_fetch_only,))
    assert set(filtered) <= set(allp)
    assert (EXE, (1, 4)) in allp and (EXE, (1, 4)) not in filtered


def test_prediction_parameters_surface_in_enabled():
    st = branch_walkthrough_state()
    ps = spec_enabled(st, pred_br)
    assert (PRD, (1, 2), 0) in ps and (PRD, (1, 2), 1) in ps
