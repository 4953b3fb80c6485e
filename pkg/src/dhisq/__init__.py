"""Cycle-level model of a distributed quantum control ISA with booking-based sync."""
from .fabric import NodeSpec, Topology
from .isa import Program, assemble, decode, disassemble, encode
from .sim import Durations, FixedOutcomes, RandomOutcomes, SimConfig, run, run_lockstep

__version__ = "0.1.0"

__all__ = [
    "Durations", "FixedOutcomes", "NodeSpec", "Program", "RandomOutcomes", "SimConfig",
    "Topology", "assemble", "decode", "disassemble", "encode", "run", "run_lockstep",
]
