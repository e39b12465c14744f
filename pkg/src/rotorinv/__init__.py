"""Eigenvalue-based recovery of transversely isotropic elastic constants.

Forward map: structured hex FEM of a three-segment stepped rotor ->
lowest natural eigenvalues, split into bending pairs and a torsional
mode. Inversion: bounded least squares (projected Levenberg-Marquardt)
and ensemble Kalman inversion.
"""

__version__ = "0.1.0"

from .elastic import (  # noqa: F401
    IsotropicMaterial,
    MaterialParams,
    check_admissible,
    compliance_isotropic,
    compliance_transversely_isotropic,
    stiffness_from_compliance,
    stiffness_transversely_isotropic,
)
