"""Shared builders for hand-constructed machine states.

Several tests replay small executions over pools written out
microinstruction by microinstruction rather than produced by the ISA
translator; the helpers here assemble consistent State/SpecState values
from such pools.
"""

from __future__ import annotations

from typing import Dict, Iterable, Optional

from inspectre.isa import Instr, IsaProgram, REGISTER_IDS
from inspectre.mil import MEM, PC, REG, Micro, internal, lit, load, ref, store
from inspectre.ooo import State
from inspectre.speculative import SpecState


def make_state(prog: IsaProgram, micros: Iterable[Micro], s=None, C=(), F=(),
               spec: bool = False) -> State:
    micros = sorted(micros, key=lambda m: m.name)
    I = {m.name: m for m in micros}
    stores: Dict[str, list] = {}
    for m in micros:
        if m.is_store():
            stores.setdefault(m.res, []).append(m)
    origin = {k: 0 for k in {t[0] for t in I}}
    cls = SpecState if spec else State
    return cls(prog, I, dict(s or {}), set(C), set(F), origin, stores,
               max(I))


def branch_walkthrough_state() -> SpecState:
    """A register-conditional branch mid-flight.

    Pool (instruction 1): load the z register, compare it to 1, read the
    program counter, store the loaded value to memory address 16, and two
    guarded PC stores — taken target 100 when the comparison holds, fall
    through to PC+4 otherwise.  The bootstrap block holds z = 1 and an
    already-fetched entry PC of 32, so the fall-through resolves to 36.
    """
    prog = IsaProgram()
    prog.instrs = {36: Instr("jmp", (100,)), 100: Instr("halt")}
    z = REGISTER_IDS["z"]
    micros = [
        store((0, 1), REG, lit(z), lit(1)),
        store((0, 2), PC, None, lit(32)),
        load((1, 1), REG, lit(z)),
        internal((1, 2), ("=", ref((1, 1)), lit(1))),
        load((1, 3), PC, None),
        store((1, 4), MEM, lit(16), ref((1, 1))),
        store((1, 5), PC, None, lit(100), guard=ref((1, 2))),
        store((1, 6), PC, None, ("+", ref((1, 3)), lit(4)),
              guard=("!", ref((1, 2)))),
    ]
    return make_state(prog, micros, s={(0, 1): 1, (0, 2): 32}, F={(0, 2)},
                      spec=True)


def four_stores_pool(third_addr: int = 1):
    """*(1):=1; *(0):=2; *(third_addr):=3; *(1) — each address through an
    internal micro of its own, then the load."""
    return [
        internal((1, 1), lit(1)),
        store((1, 2), MEM, ref((1, 1)), lit(1)),
        internal((2, 1), lit(0)),
        store((2, 2), MEM, ref((2, 1)), lit(2)),
        internal((3, 1), lit(third_addr)),
        store((3, 2), MEM, ref((3, 1)), lit(3)),
        internal((4, 1), lit(1)),
        load((4, 2), MEM, ref((4, 1))),
    ]


def four_stores_state(s=None, spec: bool = False, third_addr: int = 1,
                      C=()) -> State:
    return make_state(IsaProgram(), four_stores_pool(third_addr), s=s, C=C,
                      spec=spec)
