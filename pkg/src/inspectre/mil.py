"""
Core microinstruction language (MIL).

A microinstruction is a guarded single assignment `c ? t <- o` where `t` is
a globally ordered name, `c` a boolean-valued expression, and `o` either an
internal computation, a load, or a store on one of three resource kinds
(program counter, register file, memory).

Names are (instr_index, micro_index) pairs ordered lexicographically:
instruction 0 is the bootstrap block that seeds initial resource values,
instruction k is the k-th fetched instruction.

Operands of loads and stores are expressions; in practice translations emit
either literals or single-name references, but expression operands are also
what hand-written test programs use (e.g. a PC store of `t3 + 4`).
"""

from __future__ import annotations

from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple

Name = Tuple[int, int]
Value = int

DEFAULT_WORD = 64

PC = "PC"
REG = "R"
MEM = "M"
RESOURCES = (PC, REG, MEM)

# Expression AST nodes are plain tuples:
#   ("lit", v) | ("name", t) | ("!", e) | ("sel", c, a, b) | (op, e1, e2)
BINOPS = ("+", "-", "*", "=", "!=", "<", ">=", "&", "|")

TRUE = ("lit", 1)


# Mask used when folding closed subexpressions at construction time; all
# values handled by the tools fit well inside the default word.
_CONST_MASK = (1 << DEFAULT_WORD) - 1


def lit(v: Value) -> tuple:
    return ("lit", v)


def ref(t: Name) -> tuple:
    return ("name", t)


def expr_names(e: tuple) -> FrozenSet[Name]:
    """Free names of an expression."""
    tag = e[0]
    if tag == "lit":
        return frozenset()
    if tag == "name":
        return frozenset((e[1],))
    if tag == "!":
        return expr_names(e[1])
    if tag == "sel":
        return expr_names(e[1]) | expr_names(e[2]) | expr_names(e[3])
    return expr_names(e[1]) | expr_names(e[2])


def eval_expr(e: tuple, s: Dict[Name, Value], mask: int) -> Optional[Value]:
    """Evaluate `e` under partial storage `s`; None iff some free name is
    undefined.  Arithmetic wraps modulo the word mask; comparisons and
    boolean connectives yield 0/1 with nonzero meaning true."""
    tag = e[0]
    if tag == "lit":
        return e[1] & mask
    if tag == "name":
        return s.get(e[1])
    if tag == "!":
        v = eval_expr(e[1], s, mask)
        return None if v is None else (0 if v else 1)
    if tag == "sel":
        c = eval_expr(e[1], s, mask)
        a = eval_expr(e[2], s, mask)
        b = eval_expr(e[3], s, mask)
        if c is None or a is None or b is None:
            return None
        return a if c else b
    a = eval_expr(e[1], s, mask)
    b = eval_expr(e[2], s, mask)
    if a is None or b is None:
        return None
    if tag == "+":
        return (a + b) & mask
    if tag == "-":
        return (a - b) & mask
    if tag == "*":
        return (a * b) & mask
    if tag == "=":
        return 1 if a == b else 0
    if tag == "!=":
        return 1 if a != b else 0
    if tag == "<":
        return 1 if a < b else 0
    if tag == ">=":
        return 1 if a >= b else 0
    if tag == "&":
        return 1 if (a and b) else 0
    if tag == "|":
        return 1 if (a or b) else 0
    raise ValueError("unknown expression node %r" % (tag,))


class Micro:
    """One microinstruction.

    kind is "int" (internal computation), "load", or "store"; loads and
    stores carry the resource kind, an address expression (absent for the
    program counter, which is a single implicit cell) and, for stores, a
    value expression.

    `tag` carries scheduling metadata for PC stores and fences:
    "fence" | "ijmp" | "call" | "ret"; `ret_ra` names the store that saves
    the return address of a call.
    """

    __slots__ = (
        "name", "guard", "kind", "res", "expr", "addr", "val",
        "tag", "ret_ra", "guard_names", "fn",
        "guard_const", "addr_const",
    )

    def __init__(self, name, guard, kind, res=None, expr=None, addr=None,
                 val=None, tag=None, ret_ra=None):
        self.name = name
        self.guard = guard
        self.kind = kind
        self.res = res
        self.expr = expr
        self.addr = addr
        self.val = val
        self.tag = tag
        self.ret_ra = ret_ra
        self.guard_names = expr_names(guard)
        fn = self.guard_names
        if expr is not None:
            fn = fn | expr_names(expr)
        if addr is not None:
            fn = fn | expr_names(addr)
        if val is not None:
            fn = fn | expr_names(val)
        self.fn = fn
        # Closed guards and addresses evaluate to the same value in every
        # storage; precompute them (bootstrap stores and most guards).
        self.guard_const = (eval_expr(guard, {}, _CONST_MASK)
                            if not self.guard_names else None)
        self.addr_const = (eval_expr(addr, {}, _CONST_MASK)
                           if addr is not None and not expr_names(addr)
                           else None)

    # -- classification helpers -------------------------------------------

    def is_load(self) -> bool:
        return self.kind == "load"

    def is_store(self) -> bool:
        return self.kind == "store"

    def is_internal(self) -> bool:
        return self.kind == "int"

    def is_mem_access(self) -> bool:
        return self.kind in ("load", "store") and self.res == MEM

    def is_pc_store(self) -> bool:
        return self.kind == "store" and self.res == PC

    def is_mem_store(self) -> bool:
        return self.kind == "store" and self.res == MEM

    def __eq__(self, other):
        return (isinstance(other, Micro)
                and self.name == other.name and self.guard == other.guard
                and self.kind == other.kind and self.res == other.res
                and self.expr == other.expr and self.addr == other.addr
                and self.val == other.val)

    def __hash__(self):
        return hash((self.name, self.guard, self.kind, self.res,
                     self.expr, self.addr, self.val))

    def __repr__(self):
        return "Micro(%s)" % format_micro(self)


def internal(name: Name, expr: tuple, guard: tuple = TRUE, tag=None) -> Micro:
    return Micro(name, guard, "int", expr=expr, tag=tag)


def load(name: Name, res: str, addr: Optional[tuple], guard: tuple = TRUE) -> Micro:
    if res == PC:
        addr = None
    return Micro(name, guard, "load", res=res, addr=addr)


def store(name: Name, res: str, addr: Optional[tuple], val: tuple,
          guard: tuple = TRUE, tag=None, ret_ra=None) -> Micro:
    if res == PC:
        addr = None
    return Micro(name, guard, "store", res=res, addr=addr, val=val,
                 tag=tag, ret_ra=ret_ra)


def free_names(x) -> FrozenSet[Name]:
    """Free names of an expression or microinstruction."""
    if isinstance(x, Micro):
        return x.fn
    return expr_names(x)


def bound_names(x) -> FrozenSet[Name]:
    if isinstance(x, Micro):
        return frozenset((x.name,))
    return frozenset(m.name for m in x)


# ---------------------------------------------------------------------------
# Pretty printing
# ---------------------------------------------------------------------------

def format_name(t: Name) -> str:
    return "t%d_%d" % t


_PREC = {"|": 1, "&": 2, "=": 3, "!=": 3, "<": 3, ">=": 3,
         "+": 4, "-": 4, "*": 5}


def format_expr(e: tuple, prec: int = 0) -> str:
    tag = e[0]
    if tag == "lit":
        return str(e[1])
    if tag == "name":
        return format_name(e[1])
    if tag == "!":
        return "!" + format_expr(e[1], 6)
    if tag == "sel":
        s = "sel(%s, %s, %s)" % tuple(format_expr(x) for x in e[1:])
        return s
    p = _PREC[tag]
    s = "%s %s %s" % (format_expr(e[1], p), tag, format_expr(e[2], p + 1))
    return "(" + s + ")" if p < prec else s


def format_micro(m: Micro) -> str:
    if m.kind == "int":
        op = format_expr(m.expr)
    elif m.kind == "load":
        op = "ld %s" % m.res if m.res == PC else \
            "ld %s %s" % (m.res, format_expr(m.addr, 6))
    else:
        if m.res == PC:
            op = "st PC %s" % format_expr(m.val, 6)
        else:
            op = "st %s %s %s" % (m.res, format_expr(m.addr, 6),
                                  format_expr(m.val, 6))
    text = "%s : %s ? %s" % (format_name(m.name), format_expr(m.guard), op)
    if m.tag:
        text += "  [%s]" % m.tag
    return text


def format_program(micros: Iterable[Micro]) -> str:
    return "\n".join(format_micro(m) for m in sorted(micros, key=lambda m: m.name))


# ---------------------------------------------------------------------------
# Parsing of the `.mil` format: one microinstruction per line,
#   t<i>_<j> : <guard> ? <op>
# with `#` comments.  Used for hand-written test programs.
# ---------------------------------------------------------------------------

class ParseError(ValueError):
    def __init__(self, msg, line=None, col=None):
        self.line = line
        self.col = col
        where = "" if line is None else " (line %s)" % line
        super().__init__(msg + where)


_TOKEN_CHARS = set("+-*=!<>&|()?:,[]")


def _tokenize(text: str, lineno: int) -> List[str]:
    toks = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c.isalnum() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            toks.append(text[i:j])
            i = j
            continue
        if text[i:i + 2] in ("!=", ">="):
            toks.append(text[i:i + 2])
            i += 2
            continue
        if c in _TOKEN_CHARS:
            toks.append(c)
            i += 1
            continue
        raise ParseError("unexpected character %r" % c, lineno)
    return toks


class _ExprParser:
    """Small precedence-climbing parser over a token list."""

    def __init__(self, toks: List[str], lineno: int):
        self.toks = toks
        self.i = 0
        self.lineno = lineno

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else None

    def next(self):
        t = self.peek()
        self.i += 1
        return t

    def expect(self, tok):
        t = self.next()
        if t != tok:
            raise ParseError("expected %r, found %r" % (tok, t), self.lineno)

    def atom(self) -> tuple:
        t = self.next()
        if t is None:
            raise ParseError("unexpected end of line", self.lineno)
        if t == "(":
            e = self.expr(0)
            self.expect(")")
            return e
        if t == "!":
            return ("!", self.atom())
        if t == "sel":
            self.expect("(")
            c = self.expr(0)
            self.expect(",")
            a = self.expr(0)
            self.expect(",")
            b = self.expr(0)
            self.expect(")")
            return ("sel", c, a, b)
        if t.isdigit():
            return ("lit", int(t))
        name = parse_name(t)
        if name is not None:
            return ("name", name)
        raise ParseError("cannot parse operand %r" % t, self.lineno)

    def expr(self, min_prec: int) -> tuple:
        left = self.atom()
        while True:
            op = self.peek()
            if op not in _PREC or _PREC[op] < min_prec:
                return left
            self.next()
            right = self.expr(_PREC[op] + 1)
            left = (op, left, right)


def parse_name(text: str) -> Optional[Name]:
    if not text.startswith("t"):
        return None
    body = text[1:].split("_")
    if len(body) != 2 or not all(p.isdigit() for p in body):
        return None
    return (int(body[0]), int(body[1]))


def parse_mil_line(line: str, lineno: int) -> Optional[Micro]:
    line = line.split("#", 1)[0].strip()
    if not line:
        return None
    tag = None
    if line.endswith("]"):
        line, _, rest = line.rpartition("[")
        tag = rest[:-1].strip()
        line = line.strip()
    toks = _tokenize(line, lineno)
    if len(toks) < 4:
        raise ParseError("malformed microinstruction", lineno)
    name = parse_name(toks[0])
    if name is None or toks[1] != ":":
        raise ParseError("expected 't<i>_<j> :'", lineno)
    p = _ExprParser(toks[2:], lineno)
    guard = p.expr(0)
    p.expect("?")
    head = p.peek()
    if head == "ld":
        p.next()
        res = p.next()
        if res not in RESOURCES:
            raise ParseError("unknown resource %r" % res, lineno)
        addr = None if res == PC else p.expr(0)
        m = load(name, res, addr, guard)
    elif head == "st":
        p.next()
        res = p.next()
        if res not in RESOURCES:
            raise ParseError("unknown resource %r" % res, lineno)
        addr = None if res == PC else p.expr(0)
        val = p.expr(0)
        m = store(name, res, addr, val, guard, tag=tag)
    else:
        m = internal(name, p.expr(0), guard, tag=tag)
    if p.peek() is not None:
        raise ParseError("trailing tokens after %r" % p.peek(), lineno)
    return m


def parse_mil(text: str) -> List[Micro]:
    """Parse a `.mil` listing into microinstructions (sorted by name)."""
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        m = parse_mil_line(line, lineno)
        if m is not None:
            out.append(m)
    out.sort(key=lambda m: m.name)
    seen = set()
    for m in out:
        if m.name in seen:
            raise ParseError("duplicate name %s" % format_name(m.name))
        seen.add(m.name)
    return out
