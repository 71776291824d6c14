"""Hamilton-Jacobi ensembles: Lagrangian orbits, Eulerian fields and action functions.

The package evolves ensembles of identical classical systems either member by
member or as fields over configuration (or momentum) space, solves the
Hamilton-Jacobi equation by characteristics, recovers trajectories from
complete integrals, glues multivalued flows from single-valued layers and
handles a magnetic dipole with spin.
"""

from .errors import ConfigurationError, HJError, NumericalError
from .grid import GridField, GridSpec
from .models import DipoleParams, PhaseState, SystemModel

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "DipoleParams",
    "GridField",
    "GridSpec",
    "HJError",
    "NumericalError",
    "PhaseState",
    "SystemModel",
    "__version__",
]
