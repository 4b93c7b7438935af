"""
Executable model of a microarchitectural instruction semantics: a guarded
single-assignment microinstruction language, out-of-order / in-order /
speculative machines over it, value predictors and countermeasure
constraints, and checkers for noninterference, constant-time, and
memory-consistency properties.
"""

__version__ = "1.0.0"
