"""Generalized multiscale finite elements for gas transport in fractured shale."""
from .kernels import BACKEND
from .mesh import CoarseGrid, FineMesh, FracturePolyline, build_coarse_grid, generate_test_mesh, read_mesh, write_mesh
from .physics import ConstantCoefficients, NonlinearCoefficients, StressDependentPermeability
from .fine_solver import DAY, YEAR, DirichletBC, TimeGrid, run
from .offline import construct_offline_space
from .coarse_solver import CoarseSolver
from .online import EnrichmentPolicy, run_online
from .metrics import relative_errors, weighted_h1, weighted_l2

__version__ = "0.1.0"
