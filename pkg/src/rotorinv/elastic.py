"""Elasticity tensors for isotropic and transversely isotropic materials.

Voigt convention used everywhere in this package (tensor-strain form,
no factor 2 on the shear components):

    v = (e_11, e_22, e_33, e_23, e_13, e_12)

Shear entries of the compliance matrix are therefore 1/(2G) and the
matching stress rule is s_23 = 2*G*e_23. Element B-matrices in the FEM
module follow the same convention; mixing it with the engineering
(gamma = 2*e) convention is the classic silent bug this docstring is
here to prevent.

The transversely isotropic material has its symmetry axis along z and
is described by five constants p = (E_x, E_z, G_xy, G_xz, nu_xz). The
axial Poisson coupling enters the compliance as -nu_xz/E_x (standard
engineering convention, nu_xz/E_x = nu_zx/E_z), which keeps the matrix
positive definite over the admissible parameter set.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PARAM_NAMES = ("E_x", "E_z", "G_xy", "G_xz", "nu_xz")

#: indices of the log-scaled (modulus) parameters; nu_xz stays linear
MODULUS_INDICES = (0, 1, 2, 3)

#: relative slack applied to the admissibility inequalities so that
#: points on the boundary do not flap between admissible/inadmissible
ADMISSIBILITY_SLACK = 1e-12

#: default cap on the condition number accepted by stiffness_from_compliance
DEFAULT_CONDITION_CAP = 1e14


class InvalidMaterialError(ValueError):
    """Material constants violate their positivity/range invariants."""


class SingularComplianceError(ValueError):
    """Compliance matrix is numerically singular (condition cap exceeded)."""


class DegenerateTensorError(ValueError):
    """Closed-form stiffness factor is undefined (admissibility boundary)."""


class EmptyIntervalError(ValueError):
    """No value of E_x satisfies the admissibility constraints."""


@dataclass(frozen=True)
class IsotropicMaterial:
    """Isotropic elastic material: Young's modulus, Poisson ratio, density."""

    E: float
    nu: float
    rho: float = 1.0

    def __post_init__(self):
        if not self.E > 0:
            raise InvalidMaterialError(f"E must be positive, got {self.E}")
        if not self.rho > 0:
            raise InvalidMaterialError(f"rho must be positive, got {self.rho}")
        if not -1.0 < self.nu < 0.5:
            raise InvalidMaterialError(f"nu must lie in (-1, 0.5), got {self.nu}")

    @property
    def G(self) -> float:
        """Shear modulus, E = 2G(1+nu)."""
        return self.E / (2.0 * (1.0 + self.nu))

    @property
    def lam(self) -> float:
        """Second Lame constant."""
        return self.E * self.nu / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu))


@dataclass(frozen=True)
class MaterialParams:
    """The five constants of a transversely isotropic material (z axis).

    nu_zx is not stored; it follows from nu_xz/E_x = nu_zx/E_z.
    """

    E_x: float
    E_z: float
    G_xy: float
    G_xz: float
    nu_xz: float

    def __post_init__(self):
        for name in ("E_x", "E_z", "G_xy", "G_xz"):
            if not getattr(self, name) > 0:
                raise InvalidMaterialError(
                    f"{name} must be positive, got {getattr(self, name)}"
                )

    @property
    def nu_zx(self) -> float:
        return self.nu_xz * self.E_z / self.E_x

    def as_array(self) -> np.ndarray:
        return np.array([self.E_x, self.E_z, self.G_xy, self.G_xz, self.nu_xz])

    @classmethod
    def from_array(cls, p) -> "MaterialParams":
        p = np.asarray(p, dtype=float)
        if p.shape != (5,):
            raise InvalidMaterialError(f"expected 5 parameters, got shape {p.shape}")
        return cls(*p)

    def replace(self, **kw) -> "MaterialParams":
        vals = {n: getattr(self, n) for n in PARAM_NAMES}
        vals.update(kw)
        return MaterialParams(**vals)


def compliance_isotropic(m: IsotropicMaterial) -> np.ndarray:
    """6x6 compliance matrix (1/E)*[[1,-nu,..],[..,1+nu]] of an isotropic material."""
    E, nu = m.E, m.nu
    S = np.zeros((6, 6))
    S[:3, :3] = -nu / E
    for i in range(3):
        S[i, i] = 1.0 / E
    for i in range(3, 6):
        S[i, i] = (1.0 + nu) / E
    return S


def stiffness_isotropic(m: IsotropicMaterial) -> np.ndarray:
    """6x6 stiffness matrix from the Lame constants (shear block 2G)."""
    G, lam = m.G, m.lam
    C = np.zeros((6, 6))
    C[:3, :3] = lam
    for i in range(3):
        C[i, i] = lam + 2.0 * G
    for i in range(3, 6):
        C[i, i] = 2.0 * G
    return C


def compliance_transversely_isotropic(p: MaterialParams) -> np.ndarray:
    """6x6 compliance matrix of a transversely isotropic material.

    Upper 3x3 block in (e11,e22,e33): diag 1/E_x, 1/E_x, 1/E_z with
    in-plane coupling 1/E_x - 1/(2 G_xy) and axial coupling -nu_xz/E_x;
    shear block diag(1/(2 G_xz), 1/(2 G_xz), 1/(2 G_xy)).
    """
    a = 1.0 / p.E_x
    b = 1.0 / p.E_x - 1.0 / (2.0 * p.G_xy)
    c = -p.nu_xz / p.E_x
    S = np.zeros((6, 6))
    S[0, 0] = S[1, 1] = a
    S[0, 1] = S[1, 0] = b
    S[0, 2] = S[2, 0] = S[1, 2] = S[2, 1] = c
    S[2, 2] = 1.0 / p.E_z
    S[3, 3] = S[4, 4] = 1.0 / (2.0 * p.G_xz)
    S[5, 5] = 1.0 / (2.0 * p.G_xy)
    return S


def stiffness_from_compliance(S, condition_cap: float = DEFAULT_CONDITION_CAP) -> np.ndarray:
    """Numerical inverse of a compliance matrix, C = S^-1.

    Raises SingularComplianceError when cond(S) exceeds `condition_cap`.
    """
    S = np.asarray(S, dtype=float)
    cond = np.linalg.cond(S)
    if not np.isfinite(cond) or cond > condition_cap:
        raise SingularComplianceError(
            f"compliance matrix condition number {cond:.3e} exceeds cap {condition_cap:.1e}"
        )
    C = np.linalg.inv(S)
    return 0.5 * (C + C.T)


def _stiffness_scalars(p: MaterialParams, tol: float = 1e-12):
    """Independent entries (C11, C12, C13, C33, C44, C66) of the closed-form
    stiffness. C44 covers the two axial shear slots, C66 the in-plane one.
    """
    Ex, Ez, G, nu = p.E_x, p.E_z, p.G_xy, p.nu_xz
    den = Ex * Ex - 4.0 * G * (Ex - nu * nu * Ez)
    scale = Ex * Ex + 4.0 * G * (Ex + nu * nu * Ez)
    if abs(den) <= tol * scale:
        raise DegenerateTensorError(
            "stiffness factor denominator E_x^2 - 4 G_xy (E_x - nu_xz^2 E_z) "
            "vanishes; parameters sit on the admissibility boundary"
        )
    K = G / den
    C11 = 4.0 * K * G * (nu * nu * Ez - Ex)
    C12 = K * (-4.0 * G * nu * nu * Ez + 4.0 * G * Ex - 2.0 * Ex * Ex)
    C13 = -2.0 * K * nu * Ex * Ez
    C33 = K * ((Ex * Ex / G) * Ez - 4.0 * Ex * Ez)
    return C11, C12, C13, C33, 2.0 * p.G_xz, 2.0 * p.G_xy


def stiffness_transversely_isotropic(p: MaterialParams, tol: float = 1e-12) -> np.ndarray:
    """Closed-form 6x6 stiffness of a transversely isotropic material.

    Assembled from the analytic block inverse of the compliance; agrees
    with stiffness_from_compliance(compliance_transversely_isotropic(p))
    on the admissible set.
    """
    C11, C12, C13, C33, C44, C66 = _stiffness_scalars(p, tol=tol)
    C = np.zeros((6, 6))
    C[0, 0] = C[1, 1] = C11
    C[0, 1] = C[1, 0] = C12
    C[0, 2] = C[2, 0] = C[1, 2] = C[2, 1] = C13
    C[2, 2] = C33
    C[3, 3] = C[4, 4] = C44
    C[5, 5] = C66
    return C


def tensor_to_voigt(t) -> np.ndarray:
    """Flatten a symmetric 3x3 tensor to (t11,t22,t33,t23,t13,t12)."""
    t = np.asarray(t, dtype=float)
    return np.array([t[0, 0], t[1, 1], t[2, 2], t[1, 2], t[0, 2], t[0, 1]])


def voigt_to_tensor(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.array(
        [
            [v[0], v[5], v[4]],
            [v[5], v[1], v[3]],
            [v[4], v[3], v[2]],
        ]
    )


def stress_from_strain(material, eps) -> np.ndarray:
    """Stress tensor from a symmetric 3x3 strain tensor.

    Isotropic: sigma = 2 G eps + lam tr(eps) I.
    Transversely isotropic: componentwise closed-form stiffness.
    """
    eps = np.asarray(eps, dtype=float)
    if isinstance(material, IsotropicMaterial):
        return 2.0 * material.G * eps + material.lam * np.trace(eps) * np.eye(3)
    p = material
    C11, C12, C13, C33, C44, C66 = _stiffness_scalars(p)
    e = tensor_to_voigt(eps)
    s = np.empty(6)
    s[0] = C11 * e[0] + C12 * e[1] + C13 * e[2]
    s[1] = C12 * e[0] + C11 * e[1] + C13 * e[2]
    s[2] = C13 * (e[0] + e[1]) + C33 * e[2]
    s[3] = C44 * e[3]
    s[4] = C44 * e[4]
    s[5] = C66 * e[5]
    return voigt_to_tensor(s)


def strain_from_stress(material, sigma) -> np.ndarray:
    """Strain tensor from a symmetric 3x3 stress tensor (compliance form)."""
    sigma = np.asarray(sigma, dtype=float)
    if isinstance(material, IsotropicMaterial):
        G, lam = material.G, material.lam
        return (sigma - lam / (3.0 * lam + 2.0 * G) * np.trace(sigma) * np.eye(3)) / (2.0 * G)
    p = material
    s = tensor_to_voigt(sigma)
    a = 1.0 / p.E_x
    b = 1.0 / p.E_x - 1.0 / (2.0 * p.G_xy)
    c = -p.nu_xz / p.E_x
    e = np.empty(6)
    e[0] = a * s[0] + b * s[1] + c * s[2]
    e[1] = b * s[0] + a * s[1] + c * s[2]
    e[2] = c * (s[0] + s[1]) + s[2] / p.E_z
    e[3] = s[3] / (2.0 * p.G_xz)
    e[4] = s[4] / (2.0 * p.G_xz)
    e[5] = s[5] / (2.0 * p.G_xy)
    return voigt_to_tensor(e)


@dataclass(frozen=True)
class AdmissibilityReport:
    ok: bool
    violations: tuple[str, ...]

    def __bool__(self) -> bool:
        return self.ok


def check_admissible(p: MaterialParams, slack: float = ADMISSIBILITY_SLACK) -> AdmissibilityReport:
    """Check positivity plus the two compliance-positivity constraints.

    Constraint 1: E_x - nu_xz^2 E_z >= E_x |E_x/(2 G_xy) - 1| + nu_xz^2 E_z
    Constraint 2: E_x <= 4 G_xy

    Inequalities are evaluated non-strictly with a small relative slack.
    """
    violations = []
    for name in ("E_x", "E_z", "G_xy", "G_xz"):
        if not getattr(p, name) > 0:
            violations.append(f"{name} must be positive")
    if not violations:
        nu2Ez = p.nu_xz * p.nu_xz * p.E_z
        lhs = p.E_x - nu2Ez
        rhs = p.E_x * abs(p.E_x / (2.0 * p.G_xy) - 1.0) + nu2Ez
        tol = slack * max(abs(lhs), abs(rhs), p.E_x)
        if lhs < rhs - tol:
            violations.append(
                "E_x - nu_xz^2 E_z >= E_x |E_x/(2 G_xy) - 1| + nu_xz^2 E_z violated"
            )
        if p.E_x > 4.0 * p.G_xy * (1.0 + slack):
            violations.append("E_x <= 4 G_xy violated")
    return AdmissibilityReport(ok=not violations, violations=tuple(violations))


def admissible_interval_Ex(p: MaterialParams) -> tuple[float, float]:
    """Closed interval of E_x values admissible with the other four fixed.

    With q = nu_xz^2 E_z the constraints reduce to
        4 G_xy q <= E_x^2 <= 4 G_xy (E_x - q),
    i.e. lo = 2 sqrt(G_xy q) and hi = 2 G_xy (1 + sqrt(1 - q/G_xy)).
    Raises EmptyIntervalError when q > G_xy (no real upper root).
    """
    for name in ("E_z", "G_xy", "G_xz"):
        if not getattr(p, name) > 0:
            raise InvalidMaterialError(f"{name} must be positive")
    q = p.nu_xz * p.nu_xz * p.E_z
    if q > p.G_xy:
        raise EmptyIntervalError(
            f"nu_xz^2 E_z = {q:.4e} exceeds G_xy = {p.G_xy:.4e}; no admissible E_x"
        )
    lo = 2.0 * math.sqrt(p.G_xy * q)
    hi = 2.0 * p.G_xy * (1.0 + math.sqrt(1.0 - q / p.G_xy))
    return lo, hi


def sample_admissible(rng: np.random.Generator, n: int, margin: float = 0.05) -> list[MaterialParams]:
    """Draw admissible parameter sets, spread over several decades.

    E_x is drawn uniformly inside its admissible interval (shrunk by
    `margin` on both ends) so every sample is admissible by construction.
    """
    out = []
    while len(out) < n:
        nu = rng.uniform(-0.45, 0.45)
        E_z = 10.0 ** rng.uniform(8.0, 10.0)
        G_xy = 10.0 ** rng.uniform(9.5, 11.0)
        G_xz = 10.0 ** rng.uniform(8.0, 10.0)
        if nu * nu * E_z >= G_xy:
            continue
        probe = MaterialParams(1.0, E_z, G_xy, G_xz, nu)
        lo, hi = admissible_interval_Ex(probe)
        width = hi - lo
        E_x = rng.uniform(lo + margin * width, hi - margin * width)
        p = MaterialParams(E_x, E_z, G_xy, G_xz, nu)
        if check_admissible(p):
            out.append(p)
    return out


def isotropic_as_transverse(m: IsotropicMaterial) -> MaterialParams:
    """Transversely isotropic parameter set equivalent to an isotropic material."""
    return MaterialParams(E_x=m.E, E_z=m.E, G_xy=m.G, G_xz=m.G, nu_xz=m.nu)


def max_rel_dev(A, B) -> float:
    """max |A - B| scaled by max |A|; the cross-check metric for 6x6 tensors."""
    A = np.asarray(A, float)
    B = np.asarray(B, float)
    return float(np.abs(A - B).max() / np.abs(A).max())
