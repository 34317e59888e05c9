from .state import Density, PhaseGrid
from .collision import CollisionOperator
from .dissipation import DissipationStructure
from .variational import Trajectory, l_functional

__all__ = ["Density", "PhaseGrid", "CollisionOperator", "DissipationStructure", "Trajectory", "l_functional"]
