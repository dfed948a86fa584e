"""Minimum-compliance membrane design toolkit.

Assembles and solves the mutually dual finite-element conic programs of
optimal membrane design, recovers thickness/stress/displacement fields,
builds equivalent string networks, and lifts Michell-regime solutions to
3D vault shells.
"""

from memopt.material import Material, build_material

__all__ = ["Material", "build_material"]
__version__ = "0.1.0"
