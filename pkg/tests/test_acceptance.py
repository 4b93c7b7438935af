"""Acceptance suite: one test (and one printed pass/fail line) per criterion.

These are the end-to-end checks the build is judged by; the unit suites
cover the same modules at finer grain.  Several criteria sample random
schedules — all seeds are fixed, so the suite is deterministic.
"""

import gc
import random
import time

from conftest import branch_walkthrough_state, four_stores_state
from inspectre.consistency import (
    check_commute_run, check_deps_oracle, check_memory_consistency,
    check_strmay_lemmas, random_ooo_run, random_program,
)
from inspectre.corpus import ENTRIES, ENTRY_BY_ID, load_program, verify_entry
from inspectre.isa import check_translation_wellformed, parse_isa, translate
from inspectre.ooo import initial_state
from inspectre.predictors import PREDICTORS
from inspectre.security import check_conditional_ni, check_mil_constant_time
from inspectre.speculative import (
    CMT, EXE, FTC, PEXE, PRD, RBK, RET, can_rbk, can_ret, deps,
    spec_enabled, spec_step, t_equivalent,
)

from test_isa import ALL_INSTRUCTION_FORMS


def _report(num, desc, failures):
    status = "PASS" if not failures else "FAIL"
    print("criterion %d (%s): %s" % (num, desc, status))
    assert not failures, "; ".join(failures)


# ---------------------------------------------------------------------------
# 1. Semantics replay: the two walkthrough figures, step for step.
# ---------------------------------------------------------------------------

def test_criterion_01_semantics_replay():
    failures = []

    def check(cond, msg):
        if not cond:
            failures.append(msg)

    # --- Conditional branch walkthrough -----------------------------------
    st = branch_walkthrough_state()
    t1, t2, t3, t4, t5, t6 = [(1, i) for i in range(1, 7)]

    def go(p):
        nonlocal st
        st, obs = spec_step(st, p)
        return obs

    go((PRD, t2, 0))
    check(st.s[t2] == 0 and st.delta[t2] == {} and st.P == {t2},
          "prediction state")
    # The elided steps: execute and retire the register load and pc read.
    for p in [(EXE, t1), (EXE, t3), (RET, t1), (RET, t3)]:
        go(p)
    check(st.s[t1] == 1 and st.s[t3] == 32 and sorted(st.delta) == [t2],
          "state after resolving load and pc read")
    go((EXE, t6))
    check(st.s[t6] == 36 and st.delta[t6] == {t2: 0, t3: 32},
          "fall-through pc store snapshot")
    go((EXE, t4))
    check(st.delta[t4] == {t1: 1}, "memory store snapshot")
    go((PEXE, t2))
    check(st.s[t2] == 1 and st.delta[t2] == {t1: 1} and t2 not in st.P,
          "prediction resolved the other way")
    obs = go((FTC, t6))
    check(obs == ("IL", 36), "speculative fetch observation")
    new = sorted(t for t in st.I if t[0] == 2)
    check(len(new) == 2 and all(st.delta[t] == {t6: 36} for t in new),
          "fetched micros snapshot the pc store")
    # Enabled/blocked pattern at the fetched state:
    check(can_ret(st, t4), "store with retired deps must be retirable")
    check((CMT, t4) not in spec_enabled(st),
          "commit blocked while the store is unretired")
    check(not can_ret(st, t6) and t2 in st.delta[t6] and t2 in st.delta,
          "pc store blocked: unretired dep and stale snapshot")
    check(can_rbk(st, t6), "misfetched pc store must be rollbackable")
    go((RET, t4))
    go((RBK, t6))
    check(not any(t[0] == 2 for t in st.I) and t6 not in st.s
          and t6 not in st.delta, "rollback squashes the fetched window")
    obs = go((CMT, t4))
    check(obs == ("DS", 16) and t4 in st.C, "final commit observation")

    # --- Load/store dependency walkthrough --------------------------------
    t11, t12, t21, t31, t41, t42 = \
        (1, 1), (1, 2), (2, 1), (3, 1), (4, 1), (4, 2)
    base = {t11: 1, t12: 1, t21: 0, (2, 2): 2, t41: 1}
    st = four_stores_state(s=dict(base), spec=True)
    go((PRD, t31, 0))
    check(st.s[t31] == 0 and st.delta[t31] == {}, "address prediction")
    go((EXE, t42))
    check(st.s[t42] == 1 and st.delta[t42] ==
          {t11: 1, t21: 0, t31: 0, t41: 1, t12: 1},
          "speculative load forwards from the first store")
    check(not can_ret(st, t42), "load blocked on the predicted address")
    go((PEXE, t31))
    check(st.s[t31] == 1 and st.delta[t31] == {},
          "address resolves against the prediction")
    check(can_rbk(st, t42) and not can_ret(st, t42),
          "active-store set changed: rollback enabled")
    go((RBK, t42))
    check(t42 not in st.s and sorted(st.delta) == [t31],
          "rollback erases the load")

    # Variant: the third store resolves to a different address, so the
    # misprediction never affected the load's source — no rollback, and
    # the load retires once its address dependency has.
    st = four_stores_state(s=dict(base), spec=True, third_addr=5)
    go((PRD, t31, 0))
    go((EXE, t42))
    go((PEXE, t31))
    check(st.s[t31] == 5 and not can_rbk(st, t42),
          "harmless misprediction must not enable rollback")
    check(not can_ret(st, t42), "retire still waits for the dependency")
    go((RET, t31))
    check(can_ret(st, t42) and not can_rbk(st, t42),
          "dependency retired: load retirable")
    go((RET, t42))
    check(not st.delta and st.s[t42] == 1, "load retires with its value")

    _report(1, "semantics replay", failures)


# ---------------------------------------------------------------------------
# 2. Attack witnesses reproduced by the corpus.
# ---------------------------------------------------------------------------

WITNESS_ENTRIES = ("spectre_pht", "spectre_pht_icache", "spectre_btb",
                   "spectre_stl", "spectre_stld", "spectre_ooo_cmov")


def test_criterion_02_attack_witnesses():
    failures = []
    for eid in WITNESS_ENTRIES:
        for ok, detail in verify_entry(ENTRY_BY_ID[eid]):
            if not ok:
                failures.append("%s: %s" % (eid, detail))
    _report(2, "attack witnesses", failures)


# ---------------------------------------------------------------------------
# 3. Countermeasure verdicts.
# ---------------------------------------------------------------------------

COUNTERMEASURE_ENTRIES = ("spectre_pht_lfence", "spectre_pht_icache_lfence",
                          "spectre_pht_cmov_masked", "retpoline",
                          "spectre_stl_ssbs", "spectre_stld_ssbs",
                          "cmov_masked")


def test_criterion_03_countermeasures():
    failures = []
    for eid in COUNTERMEASURE_ENTRIES:
        for ok, detail in verify_entry(ENTRY_BY_ID[eid]):
            if not ok:
                failures.append("%s: %s" % (eid, detail))
    _report(3, "countermeasure verdicts", failures)


# ---------------------------------------------------------------------------
# 4. Memory consistency under random schedules (out-of-order and
#    speculative with every predictor).
# ---------------------------------------------------------------------------

def test_criterion_04_memory_consistency():
    failures = []
    t0 = time.time()
    gc.disable()
    try:
        rng = random.Random(2024)
        programs = [(e.id, load_program(e.file), 60) for e in ENTRIES]
        programs += [("random-%d" % i, random_program(rng), 30)
                     for i in range(200)]
        for pid, prog, depth in programs:
            v = check_memory_consistency(prog, depth=depth, samples=500,
                                         seed=7)
            if not v.ok:
                failures.append("%s ooo: %s" % (pid, v.detail))
            for pname, pred in PREDICTORS.items():
                v = check_memory_consistency(prog, target="spec",
                                             depth=depth, samples=500,
                                             seed=7, pred=pred)
                if not v.ok:
                    failures.append("%s spec/%s: %s"
                                    % (pid, pname, v.detail))
    finally:
        gc.enable()
    print("criterion 4 elapsed: %.0fs (single worker; samples are "
          "schedule-independent)" % (time.time() - t0))
    _report(4, "memory consistency", failures)


# ---------------------------------------------------------------------------
# 5./6. Commutation and store-set lemmas over sampled runs.
# ---------------------------------------------------------------------------

def _sampled_runs(n, seed, depth=30):
    rng = random.Random(seed)
    runs = []
    while len(runs) < n:
        prog = random_program(rng)
        states, params, _ = random_ooo_run(initial_state(prog), rng, depth)
        runs.append((states, params))
    return runs


def test_criterion_05_commutation():
    failures = []
    for i, (states, params) in enumerate(_sampled_runs(500, seed=31)):
        v = check_commute_run(states, params)
        if not v.ok:
            failures.append("run %d: %s" % (i, v.detail))
    _report(5, "commutation lemma", failures)


def test_criterion_06_store_set_lemmas():
    failures = []
    for i, (states, params) in enumerate(_sampled_runs(500, seed=31)):
        v = check_strmay_lemmas(states, params)
        if not v.ok:
            failures.append("run %d: %s" % (i, v.detail))
    _report(6, "store-set lemmas", failures)


# ---------------------------------------------------------------------------
# 7. Dependency-set soundness and the worked equivalence verdicts.
# ---------------------------------------------------------------------------

def test_criterion_07_deps_soundness():
    failures = []
    rng = random.Random(47)
    checked = 0
    while checked < 1000:
        prog = random_program(rng)
        st = initial_state(prog)
        random_ooo_run(st, rng, rng.randint(0, 40), record_states=False)
        for t, m in sorted(st.I.items()):
            if not (m.is_load() and m.res == "M" and t[0] > 0):
                continue
            v = check_deps_oracle(st, t, rng)
            if not v.ok:
                failures.append(v.detail)
            checked += 1
            if checked >= 1000:
                break

    # Worked four-store example: two storages that pick different
    # forwarding stores are inequivalent; two that pick the same one are
    # equivalent even though the mispredicted address differs.
    base = {(1, 1): 1, (1, 2): 1, (2, 1): 0, (2, 2): 2, (3, 2): 3,
            (4, 1): 1}
    s1 = four_stores_state(s={**base, (3, 1): 1})
    s2 = four_stores_state(s={**base, (3, 1): 0})
    s3 = four_stores_state(s={**base, (3, 1): 5})
    t42 = (4, 2)
    if deps(s1, t42) != frozenset({(4, 1), (3, 2), (3, 1)}):
        failures.append("deps with matching third store")
    if deps(s2, t42) != frozenset({(4, 1), (1, 2), (1, 1), (2, 1), (3, 1)}):
        failures.append("deps with missing third store")
    if t_equivalent(s1, s2, t42):
        failures.append("different forwarding stores must differ")
    if not t_equivalent(s2, s3, t42):
        failures.append("same forwarding store must be equivalent")
    _report(7, "dependency soundness", failures)


# ---------------------------------------------------------------------------
# 8. Constant-time implies conditional noninterference (out-of-order).
# ---------------------------------------------------------------------------

def test_criterion_08_ct_implies_ni():
    failures = []
    rng = random.Random(59)
    programs = [(e.id, load_program(e.file)) for e in ENTRIES]
    programs += [("random-%d" % i, random_program(rng, max_instrs=4,
                                                  with_secret=True))
                 for i in range(100)]
    secure_ct = 0
    for pid, prog in programs:
        if not prog.secrets:
            continue
        ct = check_mil_constant_time(prog)
        if not ct.secure:
            continue
        secure_ct += 1
        ni = check_conditional_ni(prog, None, semantics="ooo", depth=30,
                                  budget=400000)
        if not ni.secure:
            failures.append("%s: constant time but OoO-distinguishable"
                            % pid)
    if not secure_ct:
        failures.append("no constant-time programs sampled")

    # The two conditional-move translations split exactly as expected:
    # the guarded-store form leaks through register access timing, the
    # unconditional select form does not.
    if check_mil_constant_time(load_program("spectre_ooo_cmov")).secure:
        failures.append("guarded cmov must not be constant time")
    if not check_mil_constant_time(load_program("cmov_masked")).secure:
        failures.append("select-form cmov must be constant time")
    _report(8, "constant time implies noninterference", failures)


# ---------------------------------------------------------------------------
# 9. Translation wellformedness over the whole instruction set.
# ---------------------------------------------------------------------------

def test_criterion_09_translation_wellformed():
    failures = []
    for line in ALL_INSTRUCTION_FORMS:
        prog = parse_isa("%s\nL: halt" % line)
        micros = translate(prog.entry, (0, 9), prog)
        violations = check_translation_wellformed(micros)
        if violations:
            failures.append("%s: %r" % (line, violations))
    _report(9, "translation wellformedness", failures)
