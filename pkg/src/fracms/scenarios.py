"""Reference scenario: a 60 m x 60 m shale block with ten straight and bent fractures."""
from __future__ import annotations

import numpy as np

from .mesh import FineMesh, FracturePolyline, generate_test_mesh

DOMAIN = (60.0, 60.0)
APERTURE = 1e-2

# Polylines in metres. Two fractures reach the left (production) boundary.
REFERENCE_FRACTURES = (
    ((0.0, 9.0), (22.0, 20.0), (31.0, 33.0)),
    ((6.0, 47.0), (25.0, 38.0)),
    ((12.0, 28.0), (17.0, 55.0)),
    ((28.0, 5.0), (44.0, 24.0)),
    ((34.0, 52.0), (40.0, 37.0), (55.0, 31.0)),
    ((46.0, 8.0), (56.0, 19.0)),
    ((38.0, 14.0), (51.0, 47.0)),
    ((21.0, 44.0), (32.0, 56.0)),
    ((0.0, 39.0), (11.0, 20.0)),
    ((26.0, 27.0), (37.0, 44.0)),
)


def reference_fractures(aperture: float = APERTURE) -> list[FracturePolyline]:
    return [FracturePolyline(np.array(p, dtype=float), aperture) for p in REFERENCE_FRACTURES]


def reference_mesh(cells: int = 70, lock_every: int | None = 7, aperture: float = APERTURE) -> FineMesh:
    """Fine mesh of the reference scenario.

    With the defaults the mesh has 71 x 71 nodes and every 7th grid line is
    kept straight, so coarse grids of 5 x 5 and 10 x 10 cells resolve it.
    """
    return generate_test_mesh(DOMAIN, reference_fractures(aperture), DOMAIN[0] / cells, lock_every=lock_every)
