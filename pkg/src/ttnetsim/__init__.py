"""ttnetsim: deterministic simulator for a time-triggered in-vehicle network.

A TT-Ethernet backbone (two-step PCF clock sync, TT/RC/BE traffic classes)
bridged to TT-CAN sub-networks through gateways that serve as both sync
masters on the Ethernet side and time masters on the CAN side.
"""

__version__ = "0.1.0"

from .kernel import (EventKind, EventTrace, SimulationError, Simulator,
                     PS_PER_NS, PS_PER_US, PS_PER_MS, PS_PER_S, us, ms)

__all__ = [
    "EventKind", "EventTrace", "SimulationError", "Simulator",
    "PS_PER_NS", "PS_PER_US", "PS_PER_MS", "PS_PER_S", "us", "ms",
    "__version__",
]
