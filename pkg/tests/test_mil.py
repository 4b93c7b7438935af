"""Expression evaluation, microinstruction basics, and the .mil parser."""

import pytest
from hypothesis import given, strategies as st

from inspectre.mil import (
    BINOPS, MEM, PC, REG, ParseError, eval_expr, expr_names, format_expr,
    format_micro, free_names, internal, lit, load, parse_mil,
    parse_mil_line, parse_name, ref, store,
)

MASK = (1 << 64) - 1


def test_eval_expr_arith_and_compare():
    s = {(1, 1): 5, (1, 2): 3}
    assert eval_expr(("+", ref((1, 1)), ref((1, 2))), s, MASK) == 8
    assert eval_expr(("-", lit(3), lit(5)), s, MASK) == MASK - 1
    assert eval_expr(("*", lit(7), lit(9)), s, MASK) == 63
    assert eval_expr(("<", ref((1, 2)), ref((1, 1))), s, MASK) == 1
    assert eval_expr((">=", ref((1, 2)), ref((1, 1))), s, MASK) == 0
    assert eval_expr(("=", lit(4), lit(4)), s, MASK) == 1
    assert eval_expr(("!=", lit(4), lit(4)), s, MASK) == 0
    assert eval_expr(("!", lit(0)), s, MASK) == 1
    assert eval_expr(("&", lit(2), lit(0)), s, MASK) == 0
    assert eval_expr(("|", lit(0), lit(9)), s, MASK) == 1
    assert eval_expr(("sel", lit(1), lit(10), lit(20)), s, MASK) == 10
    assert eval_expr(("sel", lit(0), lit(10), lit(20)), s, MASK) == 20


def test_eval_expr_none_iff_undefined_name():
    e = ("+", ref((1, 1)), lit(1))
    assert eval_expr(e, {}, MASK) is None
    assert eval_expr(e, {(1, 1): 1}, MASK) == 2


def test_eval_expr_wraps_at_word():
    mask8 = (1 << 8) - 1
    assert eval_expr(("+", lit(255), lit(1)), {}, mask8) == 0
    assert eval_expr(lit(256), {}, mask8) == 0


_names = st.tuples(st.integers(0, 3), st.integers(1, 4))


def _exprs(depth=3):
    leaf = st.one_of(st.builds(lit, st.integers(0, 100)),
                     st.builds(ref, _names))
    return st.recursive(
        leaf,
        lambda sub: st.one_of(
            st.tuples(st.sampled_from(BINOPS), sub, sub),
            st.tuples(st.just("!"), sub),
            st.tuples(st.just("sel"), sub, sub, sub)),
        max_leaves=8)


@given(_exprs(), st.dictionaries(_names, st.integers(0, 7)))
def test_eval_expr_defined_iff_names_resolved(e, s):
    v = eval_expr(e, s, MASK)
    if expr_names(e) <= set(s):
        assert v is not None and 0 <= v <= MASK
    else:
        assert v is None


@given(_exprs())
def test_format_parse_expr_roundtrip(e):
    lines = "t0_1 : 1 ? %s" % format_expr(e)
    m = parse_mil_line(lines, 1)
    assert m.expr == e


def test_micro_classification():
    ld = load((1, 1), MEM, lit(4))
    stm = store((1, 2), MEM, lit(4), lit(9))
    stp = store((1, 3), PC, lit(99), lit(8))
    op = internal((1, 4), lit(0))
    assert ld.is_load() and ld.is_mem_access() and not ld.is_store()
    assert stm.is_store() and stm.is_mem_store() and not stm.is_pc_store()
    assert stp.is_pc_store() and stp.addr is None  # PC has no address cell
    assert op.is_internal()


def test_free_names_include_guard_addr_val():
    m = store((2, 1), MEM, ref((1, 1)), ref((1, 2)), guard=ref((1, 3)))
    assert free_names(m) == {(1, 1), (1, 2), (1, 3)}
    assert m.guard_names == {(1, 3)}


def test_parse_name():
    assert parse_name("t3_12") == (3, 12)
    assert parse_name("x1_2") is None
    assert parse_name("t1") is None


def test_parse_mil_program():
    text = """
    # comment
    t1_1 : 1 ? ld R 10
    t1_2 : 1 ? t1_1 = 1
    t1_3 : t1_2 ? st PC 100
    t1_4 : !t1_2 ? st M 16 t1_1   [fence]
    """
    micros = parse_mil(text)
    assert [m.name for m in micros] == [(1, 1), (1, 2), (1, 3), (1, 4)]
    assert micros[0].is_load() and micros[0].res == REG
    assert micros[2].is_pc_store() and micros[2].guard == ("name", (1, 2))
    assert micros[3].tag == "fence"
    assert micros[3].guard == ("!", ("name", (1, 2)))


def test_parse_mil_rejects_duplicates_and_junk():
    with pytest.raises(ParseError):
        parse_mil("t1_1 : 1 ? 0\nt1_1 : 1 ? 1")
    with pytest.raises(ParseError):
        parse_mil_line("t1_1 : 1 ? ld X 3", 1)
    with pytest.raises(ParseError):
        parse_mil_line("nonsense", 1)
    with pytest.raises(ParseError):
        parse_mil_line("t1_1 : 1 ? 1 2", 1)


def test_format_micro_roundtrip_all_kinds():
    micros = [
        internal((1, 1), ("+", ref((0, 1)), lit(4))),
        load((1, 2), MEM, ("+", lit(16), ref((1, 1)))),
        load((1, 3), PC, None),
        store((1, 4), MEM, ref((1, 1)), ref((1, 2)), guard=("!", ref((0, 2)))),
        store((1, 5), PC, None, lit(1000)),
    ]
    for m in micros:
        again = parse_mil_line(format_micro(m), 1)
        assert again == m
