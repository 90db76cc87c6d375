"""opsizer - analytical modeling and discrete sizing of basic CMOS op-amps.

The pipeline: parse a netlist into a circuit graph, recognize its
functional blocks level by level, instantiate a symbolic performance
model (symmetry and behavioral constraints, intermediate and op-amp
performance equations), solve DC operating points, and size the circuit
against a performance specification by discrete branch-and-bound search.
"""

from .netlist import CircuitGraph, Device, parse_netlist, serialize_netlist, validate
from .blocks import FunctionalBlockTree, decompose
from .device import TechParams, parse_tech
from .modelgen import CircuitModel, instantiate_model
from .dc import solve_dc
from .sizing import Spec, SizingProblem, SizingResult, parse_spec, size_circuit, verify_sizing

__all__ = [
    "CircuitGraph",
    "Device",
    "parse_netlist",
    "serialize_netlist",
    "validate",
    "FunctionalBlockTree",
    "decompose",
    "TechParams",
    "parse_tech",
    "CircuitModel",
    "instantiate_model",
    "solve_dc",
    "Spec",
    "SizingProblem",
    "SizingResult",
    "parse_spec",
    "size_circuit",
    "verify_sizing",
]

__version__ = "0.1.0"
