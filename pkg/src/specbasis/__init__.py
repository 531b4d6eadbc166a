"""Learn spectral bases of point clouds by optimal approximation of random probes.

A small MLP maps each point to ``K`` features; their QR factor is read as
the leading eigenvectors of an implicit normalized operator, whose first
column fixes the metric.  Training minimizes how badly smooth random probe
functions are reconstructed by progressive M-orthogonal projection, and the
worst-case errors double as eigenvalue estimates.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    ContractError,
    DegenerateBasisError,
    DegenerateGeometryError,
    DimensionError,
    NonFiniteError,
    ParseError,
    SingularGramError,
    SmoothingUnderflowError,
    SpecbasisError,
)
from .geometry import PointCloud, TriangleMesh, KnnGraph, build_knn, synth_manifold, icosphere  # noqa: E402
from .probes import ProbeConfig, generate_probes  # noqa: E402
from .spectral import (  # noqa: E402
    SpectralBasis,
    estimate_eigenvalues,
    extract_mass,
    progressive_project,
    unnormalized_basis,
)
from .train import TrainConfig, preset_config, train  # noqa: E402
