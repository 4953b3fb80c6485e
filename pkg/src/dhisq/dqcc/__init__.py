"""Compiler from a small dynamic-circuit IR to per-controller HISQ programs."""
from .codegen import CodegenError, Compiled, codegen_bisp, codegen_lockstep, compile_circuit
from .ir import Barrier, CircuitIR, Conditional, Gate, IRError, Measure, parse_ir
from .mapping import MappingConfig, MappingError, Port, default_mapping
from .schedule import ScheduledOp, ScheduleError, SyncPoint, insert_sync, schedule

__all__ = [
    "Barrier", "CircuitIR", "CodegenError", "Compiled", "Conditional", "Gate", "IRError",
    "MappingConfig", "MappingError", "Measure", "Port", "ScheduleError", "ScheduledOp",
    "SyncPoint", "codegen_bisp", "codegen_lockstep", "compile_circuit", "default_mapping",
    "insert_sync", "parse_ir", "schedule",
]
