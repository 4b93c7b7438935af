"""Randomized checkers: commit prefixes, commutation, dependency soundness."""

import random

import pytest

from conftest import four_stores_state
from inspectre.consistency import (
    CommutationWitness, PreconditionViolated, check_commute,
    check_commute_run, check_deps_oracle, check_memory_consistency,
    check_strmay_lemmas, random_ooo_run, random_program, random_spec_run,
    states_equal,
)
from inspectre.inorder import run_inorder
from inspectre.isa import parse_isa
from inspectre.ooo import enabled, initial_state, step
from inspectre.predictors import PREDICTORS
from inspectre.speculative import initial_state as spec_initial_state


def test_random_program_parses_and_halts():
    rng = random.Random(3)
    for _ in range(30):
        prog = random_program(rng)
        run = run_inorder(prog)
        # Loads from never-written cells leave the machine stuck; either
        # way the run must terminate well before the step limit.
        assert run.status in ("halted", "stuck"), prog.instrs


def test_memory_consistency_small_program():
    prog = parse_isa("storei [5], 1\nstorei [5], 2\nstorei [6], 3\nhalt")
    v = check_memory_consistency(prog, depth=40, samples=50, seed=11)
    assert v.ok, v.detail
    v = check_memory_consistency(prog, target="spec", depth=40, samples=30,
                                 seed=11, pred=PREDICTORS["br"])
    assert v.ok, v.detail


def decode_all(st):
    while True:
        ps = [p for p in enabled(st)
              if st.I[p[1]].res == "PC" and p[0] in ("exe", "ftc")]
        if not ps:
            return st
        st, _ = step(st, *ps[0])


def test_commute_finds_midpoint():
    prog = parse_isa("storei [5], 1\nstorei [6], 2\nhalt")
    st = decode_all(initial_state(prog))
    # Execute both stores: younger first, then older — must commute.
    names = sorted(t for t, m in st.I.items()
                   if m.is_mem_store() and t[0] > 0)
    young, old = names[1], names[0]
    w = check_commute(st, ("exe", young), ("exe", old))
    assert isinstance(w, CommutationWitness)
    direct, _ = step(*[st, "exe", young])
    direct, _ = step(direct, "exe", old)
    assert states_equal(w.end, direct)
    assert w.midpoint is not None and not states_equal(w.midpoint, direct)


def test_commute_rejects_bad_order():
    prog = parse_isa("storei [5], 1\nstorei [6], 2\nhalt")
    st = decode_all(initial_state(prog))
    names = sorted(t for t, m in st.I.items()
                   if m.is_mem_store() and t[0] > 0)
    with pytest.raises(PreconditionViolated):
        check_commute(st, ("exe", names[0]), ("exe", names[1]))


def test_commute_run_over_random_runs():
    rng = random.Random(5)
    for _ in range(15):
        prog = random_program(rng)
        states, params, _ = random_ooo_run(initial_state(prog), rng, 40)
        v = check_commute_run(states, params)
        assert v.ok, v.detail


def test_strmay_lemmas_over_random_runs():
    rng = random.Random(6)
    for _ in range(10):
        prog = random_program(rng)
        states, params, _ = random_ooo_run(initial_state(prog), rng, 30)
        v = check_strmay_lemmas(states, params)
        assert v.ok, v.detail


def test_deps_oracle_four_stores():
    base = {(1, 1): 1, (1, 2): 1, (2, 1): 0, (2, 2): 2, (3, 2): 3, (4, 1): 1}
    for t31 in (0, 1, 5):
        st = four_stores_state(s={**base, (3, 1): t31})
        v = check_deps_oracle(st, (4, 2))
        assert v.ok, v.detail


def test_deps_oracle_rejects_non_load():
    st = four_stores_state()
    with pytest.raises(PreconditionViolated):
        check_deps_oracle(st, (1, 1))


def test_deps_oracle_random_states():
    rng = random.Random(9)
    checked = 0
    while checked < 40:
        prog = random_program(rng)
        st = initial_state(prog)
        _ = random_ooo_run(st, rng, rng.randint(0, 30), record_states=False)
        loads = [t for t, m in st.I.items()
                 if m.is_load() and m.res == "M" and t[0] > 0]
        for t in loads:
            v = check_deps_oracle(st, t, rng)
            assert v.ok, v.detail
            checked += 1


def test_spec_run_respects_commit_prefix():
    rng = random.Random(14)
    for _ in range(10):
        prog = random_program(rng)
        oracle = run_inorder(prog)
        st = spec_initial_state(prog)
        _, _, log = random_spec_run(st, rng, 50, PREDICTORS["br"],
                                    record_states=False)
        per = {}
        for a, v in log:
            per.setdefault(a, []).append(v)
        from inspectre.inorder import commits
        ref = commits(oracle)
        for a, seq in per.items():
            assert seq == ref.get(a, [])[:len(seq)]
