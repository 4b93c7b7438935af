"""
Toy ISA: parsing of `.isa` programs and their translation to MIL.

Each ISA instruction occupies 4 address units; translation of one
instruction yields the per-instruction microinstruction shapes used
throughout the test corpus (register-file reads/writes through explicit
address micros, guarded PC stores for branches, call/return sequences that
push and pop return addresses through the stack pointer register, etc.).

Program text grammar (one item per line, `#` starts a comment):

    LABEL: OPCODE operand, operand, ...
    .word N                      word width in bits (default 64)
    .entry LABEL                 execution entry point (default: first instr)
    .array NAME BASE SIZE [v...] memory array: size cell at BASE, data after
    .mem ADDR VAL                single initialized memory cell
    .reg NAME VAL                initial register value
    .secret mem ADDR v1 v2 ...   high memory cell with candidate values
    .secret reg NAME v1 v2 ...   high register with candidate values
    .public mem ADDR | reg NAME  explicit low annotation (documentation)
    .btb LABEL ...               indirect-jump predictor candidates
    .rsb N                       return-stack-buffer capacity

Memory operands are written `[base]`, `[rN]`, or `[base + rN]` where `base`
may be a number, label, or array name.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .mil import (
    MEM, PC, REG, DEFAULT_WORD, Micro, Name, ParseError, TRUE,
    internal, lit, load, ref, store, expr_names,
)

CODE_BASE = 1000
INSTR_SIZE = 4

# Fixed register file layout: registers are cells of the register resource.
REGISTER_IDS = {("r%d" % i): i for i in range(10)}
REGISTER_IDS.update({"z": 10, "f": 11, "sp": 12})


class UndecodableAddress(Exception):
    pass


@dataclass(frozen=True)
class Instr:
    op: str
    args: tuple = ()

    def __str__(self):
        return ("%s %s" % (self.op, ", ".join(map(str, self.args)))).strip()


@dataclass(frozen=True)
class MemSpec:
    """A memory operand `[base + reg]`; either part may be absent."""
    base: int = 0
    reg: Optional[str] = None

    def __str__(self):
        if self.reg is None:
            return "[%d]" % self.base
        if self.base == 0:
            return "[%s]" % self.reg
        return "[%d + %s]" % (self.base, self.reg)


@dataclass(frozen=True)
class SecretDecl:
    space: str            # "mem" | "reg"
    loc: object           # address or register name
    candidates: Tuple[int, ...]


@dataclass
class IsaProgram:
    instrs: Dict[int, Instr] = field(default_factory=dict)
    labels: Dict[str, int] = field(default_factory=dict)
    arrays: Dict[str, Tuple[int, int]] = field(default_factory=dict)
    mem_init: Dict[int, int] = field(default_factory=dict)
    reg_init: Dict[str, int] = field(default_factory=dict)
    secrets: List[SecretDecl] = field(default_factory=list)
    publics: List[Tuple[str, object]] = field(default_factory=list)
    word: int = DEFAULT_WORD
    entry: int = CODE_BASE
    btb_candidates: Optional[Tuple[int, ...]] = None
    rsb_capacity: int = 4

    @property
    def mask(self) -> int:
        return (1 << self.word) - 1

    def footprint_mem(self) -> List[int]:
        """All data memory addresses backed by a bootstrap store."""
        addrs = set(self.mem_init)
        for sec in self.secrets:
            if sec.space == "mem":
                addrs.add(sec.loc)
        return sorted(addrs)

    def footprint_reg(self) -> List[str]:
        regs = set(self.reg_init)
        for sec in self.secrets:
            if sec.space == "reg":
                regs.add(sec.loc)
        for ins in self.instrs.values():
            for a in ins.args:
                if isinstance(a, str) and a in REGISTER_IDS:
                    regs.add(a)
                elif isinstance(a, MemSpec) and a.reg is not None:
                    regs.add(a.reg)
        if any(ins.op in ("call", "callp", "ret", "ovwret")
               for ins in self.instrs.values()):
            regs.add("sp")
        return sorted(regs, key=lambda r: REGISTER_IDS[r])

    def code_labels(self) -> List[int]:
        return sorted(set(self.labels.values()))

    def label_of(self, addr: int) -> Optional[str]:
        for name, a in self.labels.items():
            if a == addr:
                return name
        return None


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_OPCODES = {
    "loadi": 2, "mov": 2, "add": 3, "addi": 3, "load": 2, "store": 2,
    "storei": 2, "cmplt": 3, "cmpeq": 3, "beq": 1, "blt": 3, "cjmpi": 2,
    "cmov": 3, "cmovm": 3, "jmp": 1, "jmpi": 1, "jmpm": 1, "call": 1,
    "callp": 2, "ret": 0, "ovwret": 1, "lfence": 0, "halt": 0,
}


def _value(tok: str, symbols: Dict[str, int], lineno: int) -> int:
    tok = tok.strip()
    if tok in symbols:
        return symbols[tok]
    try:
        return int(tok, 0)
    except ValueError:
        raise ParseError("unknown value %r" % tok, lineno)


def _memspec(tok: str, symbols: Dict[str, int], lineno: int) -> MemSpec:
    tok = tok.strip()
    if not (tok.startswith("[") and tok.endswith("]")):
        raise ParseError("expected memory operand [..], got %r" % tok, lineno)
    body = tok[1:-1].strip()
    if "+" in body:
        left, right = (p.strip() for p in body.split("+", 1))
        if right in REGISTER_IDS:
            return MemSpec(_value(left, symbols, lineno), right)
        if left in REGISTER_IDS:
            return MemSpec(_value(right, symbols, lineno), left)
        raise ParseError("bad memory operand %r" % tok, lineno)
    if body in REGISTER_IDS:
        return MemSpec(0, body)
    return MemSpec(_value(body, symbols, lineno), None)


def parse_isa(text: str) -> IsaProgram:
    prog = IsaProgram()
    lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            lines.append((lineno, line))

    # First pass: assign instruction addresses so labels can be resolved.
    addr = CODE_BASE
    pending: List[Tuple[int, str, int]] = []  # (lineno, text, addr)
    directives: List[Tuple[int, str]] = []
    for lineno, line in lines:
        if line.startswith("."):
            directives.append((lineno, line))
            continue
        body = line
        while ":" in body:
            label, _, rest = body.partition(":")
            prog.labels[label.strip()] = addr
            body = rest.strip()
        if body:
            pending.append((lineno, body, addr))
            addr += INSTR_SIZE

    symbols = dict(prog.labels)

    # Directives (arrays first, so array names resolve in operands).
    entry_label = None
    for lineno, line in directives:
        parts = line.split()
        head = parts[0]
        if head == ".array":
            if len(parts) < 4:
                raise ParseError(".array NAME BASE SIZE [values...]", lineno)
            name = parts[1]
            base = _value(parts[2], symbols, lineno)
            size = _value(parts[3], symbols, lineno)
            values = [_value(v, symbols, lineno) for v in parts[4:]]
            prog.arrays[name] = (base, size)
            symbols[name] = base
            # Layout: size cell at base, elements at base+1 ...
            prog.mem_init[base] = size
            for i in range(size):
                prog.mem_init[base + 1 + i] = values[i] if i < len(values) else 0
        elif head == ".word":
            prog.word = int(parts[1], 0)
        elif head == ".entry":
            entry_label = parts[1]
        elif head == ".mem":
            prog.mem_init[_value(parts[1], symbols, lineno)] = \
                _value(parts[2], symbols, lineno)
        elif head == ".reg":
            if parts[1] not in REGISTER_IDS:
                raise ParseError("unknown register %r" % parts[1], lineno)
            prog.reg_init[parts[1]] = _value(parts[2], symbols, lineno)
        elif head == ".secret":
            space = parts[1]
            if space == "mem":
                loc = _value(parts[2], symbols, lineno)
            elif space == "reg":
                loc = parts[2]
                if loc not in REGISTER_IDS:
                    raise ParseError("unknown register %r" % loc, lineno)
            else:
                raise ParseError(".secret mem|reg ...", lineno)
            cands = tuple(_value(v, symbols, lineno) for v in parts[3:])
            if not cands:
                raise ParseError("secret needs candidate values", lineno)
            prog.secrets.append(SecretDecl(space, loc, cands))
        elif head == ".public":
            loc = parts[2] if parts[1] == "reg" else \
                _value(parts[2], symbols, lineno)
            prog.publics.append((parts[1], loc))
        elif head == ".btb":
            prog.btb_candidates = tuple(
                _value(v, symbols, lineno) for v in parts[1:])
        elif head == ".rsb":
            prog.rsb_capacity = int(parts[1], 0)
        else:
            raise ParseError("unknown directive %r" % head, lineno)

    # Second pass: instructions.
    for lineno, body, iaddr in pending:
        opcode, _, rest = body.partition(" ")
        op = opcode.lower()
        if op not in _OPCODES:
            raise ParseError("unknown opcode %r" % opcode, lineno)
        raw_args = [a.strip() for a in rest.split(",") if a.strip()] if rest.strip() else []
        if len(raw_args) != _OPCODES[op]:
            raise ParseError("%s expects %d operands" % (op, _OPCODES[op]), lineno)
        args = []
        for i, a in enumerate(raw_args):
            if a.startswith("["):
                args.append(_memspec(a, symbols, lineno))
            elif a in REGISTER_IDS:
                args.append(a)
            else:
                args.append(_value(a, symbols, lineno))
        # Register-position sanity for common shapes.
        prog.instrs[iaddr] = Instr(op, tuple(args))

    if entry_label is not None:
        prog.entry = _value(entry_label, symbols, 0)
    elif prog.instrs:
        prog.entry = min(prog.instrs)
    return prog


def format_isa(prog: IsaProgram) -> str:
    lines = []
    for addr in sorted(prog.instrs):
        label = prog.label_of(addr)
        prefix = "%s: " % label if label else ""
        lines.append(prefix + str(prog.instrs[addr]))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Translation to MIL
# ---------------------------------------------------------------------------

class _Tr:
    """Allocates consecutive micro names within one instruction."""

    def __init__(self, instr_index: int):
        self.k = instr_index
        self.j = 0
        self.out: List[Micro] = []

    def emit(self, builder, *args, **kw) -> Name:
        self.j += 1
        name = (self.k, self.j)
        self.out.append(builder(name, *args, **kw))
        return name


def _reg_addr(tr: _Tr, regname: str) -> Name:
    return tr.emit(internal, lit(REGISTER_IDS[regname]))


def _reg_read(tr: _Tr, regname: str, guard=TRUE) -> Name:
    a = _reg_addr(tr, regname)
    return tr.emit(load, REG, ref(a), guard)


def _mem_addr_expr(tr: _Tr, spec: MemSpec):
    """Address expression for a memory operand; constant bases fold to a
    literal, register-relative operands go through an internal micro so the
    address has a name of its own."""
    if spec.reg is None:
        return lit(spec.base)
    r = _reg_read(tr, spec.reg)
    e = ("+", lit(spec.base), ref(r)) if spec.base else ref(r)
    return ref(tr.emit(internal, e))


def translate(addr: int, t_max: Name, prog: IsaProgram) -> List[Micro]:
    """Translate the instruction at `addr` into microinstructions whose
    names are all greater than `t_max` (fresh instruction index)."""
    ins = prog.instrs.get(addr)
    if ins is None:
        raise UndecodableAddress(hex(addr) if addr > 0 else addr)
    tr = _Tr(t_max[0] + 1)
    op, args = ins.op, ins.args
    nxt = addr + INSTR_SIZE

    def fallthrough():
        tr.emit(store, PC, None, lit(nxt))

    if op == "loadi":
        rd, imm = args
        a = _reg_addr(tr, rd)
        tr.emit(store, REG, ref(a), lit(imm))
        fallthrough()
    elif op == "mov":
        rd, rs = args
        v = _reg_read(tr, rs)
        a = _reg_addr(tr, rd)
        tr.emit(store, REG, ref(a), ref(v))
        fallthrough()
    elif op == "addi":
        rd, rs, imm = args
        a = _reg_addr(tr, rs)
        v = tr.emit(load, REG, ref(a))
        sum_ = tr.emit(internal, ("+", ref(v), lit(imm)))
        ad = a if rd == rs else _reg_addr(tr, rd)
        tr.emit(store, REG, ref(ad), ref(sum_))
        pcl = tr.emit(load, PC, None)
        inc = tr.emit(internal, ("+", ref(pcl), lit(INSTR_SIZE)))
        tr.emit(store, PC, None, ref(inc))
    elif op == "add":
        rd, ra, rb = args
        va = _reg_read(tr, ra)
        vb = _reg_read(tr, rb)
        sum_ = tr.emit(internal, ("+", ref(va), ref(vb)))
        ad = _reg_addr(tr, rd)
        tr.emit(store, REG, ref(ad), ref(sum_))
        fallthrough()
    elif op == "load":
        rd, spec = args
        ae = _mem_addr_expr(tr, spec)
        v = tr.emit(load, MEM, ae)
        ad = _reg_addr(tr, rd)
        tr.emit(store, REG, ref(ad), ref(v))
        fallthrough()
    elif op in ("store", "storei"):
        spec, src = args
        if op == "store":
            vexpr = ref(_reg_read(tr, src))
        else:
            vexpr = lit(src)
        ae = _mem_addr_expr(tr, spec)
        tr.emit(store, MEM, ae, vexpr)
        fallthrough()
    elif op in ("cmplt", "cmpeq"):
        rf, ra, rb = args
        va = _reg_read(tr, ra)
        vb = _reg_read(tr, rb)
        rel = "<" if op == "cmplt" else "="
        c = tr.emit(internal, (rel, ref(va), ref(vb)))
        af = _reg_addr(tr, rf)
        tr.emit(store, REG, ref(af), ref(c))
        fallthrough()
    elif op == "beq":
        (target,) = args
        v = tr.emit(load, REG, lit(REGISTER_IDS["z"]))
        c = tr.emit(internal, ("=", ref(v), lit(1)))
        pcl = tr.emit(load, PC, None)
        tr.emit(store, PC, None, lit(target), guard=ref(c))
        tr.emit(store, PC, None, ("+", ref(pcl), lit(INSTR_SIZE)),
                guard=("!", ref(c)))
    elif op == "blt":
        ra, rb, target = args
        va = tr.emit(load, REG, lit(REGISTER_IDS[ra]))
        vb = tr.emit(load, REG, lit(REGISTER_IDS[rb]))
        c = tr.emit(internal, ("<", ref(va), ref(vb)))
        tr.emit(store, PC, None, lit(target), guard=ref(c))
        tr.emit(store, PC, None, lit(nxt), guard=("!", ref(c)))
    elif op == "cjmpi":
        rc, rt = args
        vc = tr.emit(load, REG, lit(REGISTER_IDS[rc]))
        # The target read precedes the condition internal so that it is
        # not younger than a predicted condition: a core that only
        # speculates PC values may still fetch through it.
        vt = tr.emit(load, REG, lit(REGISTER_IDS[rt]))
        c = tr.emit(internal, ("!=", ref(vc), lit(1)))
        tr.emit(store, PC, None, lit(nxt), guard=ref(c))
        tr.emit(store, PC, None, ref(vt), guard=("!", ref(c)), tag="ijmp")
    elif op == "cmov":
        rf, rd, rs = args
        vf = tr.emit(load, REG, lit(REGISTER_IDS[rf]))
        g = ("=", ref(vf), lit(1))
        vs = tr.emit(load, REG, lit(REGISTER_IDS[rs]), guard=g)
        tr.emit(store, REG, lit(REGISTER_IDS[rd]), ref(vs), guard=g)
        fallthrough()
    elif op == "cmovm":
        rf, rd, rs = args
        vf = tr.emit(load, REG, lit(REGISTER_IDS[rf]))
        vd = tr.emit(load, REG, lit(REGISTER_IDS[rd]))
        vs = tr.emit(load, REG, lit(REGISTER_IDS[rs]))
        sel = ("+", ("*", ("!", ref(vf)), ref(vd)),
               ("*", ref(vf), ref(vs)))
        tr.emit(store, REG, lit(REGISTER_IDS[rd]), sel)
        fallthrough()
    elif op == "jmp":
        (target,) = args
        v = tr.emit(internal, lit(target))
        tr.emit(store, PC, None, ref(v))
    elif op == "jmpi":
        (r,) = args
        v = tr.emit(load, REG, lit(REGISTER_IDS[r]))
        al = tr.emit(internal, ref(v))
        tr.emit(store, PC, None, ref(al), tag="ijmp")
    elif op == "jmpm":
        (spec,) = args
        ae = _mem_addr_expr(tr, spec)
        v = tr.emit(load, MEM, ae)
        al = tr.emit(internal, ref(v))
        tr.emit(store, PC, None, ref(al), tag="ijmp")
    elif op in ("call", "callp"):
        target = args[0]
        push = nxt if op == "call" else args[1]
        sp = REGISTER_IDS["sp"]
        vsp = tr.emit(load, REG, lit(sp))
        dec = tr.emit(internal, ("-", ref(vsp), lit(4)))
        tr.emit(store, REG, lit(sp), ref(dec))
        ra = tr.emit(internal, lit(push))
        sra = tr.emit(store, MEM, ref(vsp), ref(ra))
        tr.emit(store, PC, None, lit(target), tag="call", ret_ra=sra)
    elif op == "ret":
        sp = REGISTER_IDS["sp"]
        vsp = tr.emit(load, REG, lit(sp))
        inc = tr.emit(internal, ("+", ref(vsp), lit(4)))
        tr.emit(store, REG, lit(sp), ref(inc))
        vra = tr.emit(load, MEM, ref(inc))
        al = tr.emit(internal, ref(vra))
        tr.emit(store, PC, None, ref(al), tag="ret")
    elif op == "ovwret":
        (spec,) = args
        sp = REGISTER_IDS["sp"]
        vsp = tr.emit(load, REG, lit(sp))
        slot = tr.emit(internal, ("+", ref(vsp), lit(4)))
        ae = _mem_addr_expr(tr, spec)
        v = tr.emit(load, MEM, ae)
        al = tr.emit(internal, ref(v))
        tr.emit(store, MEM, ref(slot), ref(al))
        tr.emit(store, PC, None, lit(nxt))
    elif op == "lfence":
        tr.emit(internal, lit(0), tag="fence")
        tr.emit(store, PC, None, lit(nxt))
    elif op == "halt":
        tr.emit(internal, lit(0))
    else:   # pragma: no cover
        raise UndecodableAddress(addr)
    return tr.out


# ---------------------------------------------------------------------------
# Translation wellformedness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str

    def __str__(self):
        return "%s: %s" % (self.kind, self.detail)


def check_translation_wellformed(micros: List[Micro]) -> List[Violation]:
    """Check the image of one translate() call.

    Violations: PCLoadAfterPCStore (a PC load named after a PC store),
    PCNameUsed (a PC store's name is free in the instruction), and
    NonUniquePCStore (some guard valuation enables zero or several PC
    stores).  Instructions with no PC store at all (program end) are
    exempt from the uniqueness clause.
    """
    from itertools import product

    out = []
    pc_loads = [m for m in micros if m.is_load() and m.res == PC]
    pc_stores = [m for m in micros if m.is_pc_store()]
    for ld_ in pc_loads:
        for st_ in pc_stores:
            if ld_.name > st_.name:
                out.append(Violation(
                    "PCLoadAfterPCStore",
                    "%s follows %s" % (str(ld_.name), str(st_.name))))
    for st_ in pc_stores:
        for m in micros:
            if st_.name in m.fn:
                out.append(Violation(
                    "PCNameUsed",
                    "PC store %s free in %s" % (str(st_.name), str(m.name))))
    if pc_stores:
        gnames = sorted(set().union(*(m.guard_names for m in pc_stores)))
        if len(gnames) > 8:
            raise ValueError("too many guard names to enumerate")
        bad = []
        for bits in product((0, 1), repeat=len(gnames)):
            s = dict(zip(gnames, bits))
            holding = [m for m in pc_stores
                       if eval_guard_total(m.guard, s)]
            if len(holding) != 1:
                bad.append((s, len(holding)))
        if bad:
            s, k = bad[0]
            out.append(Violation(
                "NonUniquePCStore",
                "%d PC-store guards hold under %s" % (k, s)))
    return out


def eval_guard_total(e: tuple, s: Dict[Name, int]) -> int:
    """Guard evaluation over a total boolean valuation of its free names."""
    from .mil import eval_expr
    full = dict(s)
    for n in expr_names(e):
        full.setdefault(n, 0)
    return eval_expr(e, full, (1 << DEFAULT_WORD) - 1)
