import numpy as np
import pytest

from rotorinv.elastic import (
    IsotropicMaterial,
    MaterialParams,
    sample_admissible,
    stiffness_isotropic,
    stiffness_transversely_isotropic,
    stress_from_strain,
    tensor_to_voigt,
)
from rotorinv.fem import (
    AssembledSystem,
    DegenerateElementError,
    MissingMaterialError,
    ParametrizedSystem,
    assemble,
    assemble_parametrized,
    element_mass,
    element_stiffness,
    shape_functions,
    ti_stiffness_coefficients,
)
from rotorinv.mesh import CORE, STEEL, RotorGeometry, RotorMesh, build_rotor_mesh, mesh_volume

P_TRUE = MaterialParams(2e11, 2e8, 7.6923e10, 5e8, 0.3)
STEEL_MAT = IsotropicMaterial(E=2e11, nu=0.3, rho=7850.0)

UNIT_CUBE = np.array(
    [
        [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
        [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
    ],
    dtype=float,
)


def rigid_modes(coords):
    """Six rigid motions of a node set: 3 translations, 3 linearized rotations."""
    n = coords.shape[0]
    modes = np.zeros((6, 3 * n))
    for d in range(3):
        modes[d, d::3] = 1.0
    x, y, z = coords[:, 0], coords[:, 1], coords[:, 2]
    modes[3, 1::3], modes[3, 2::3] = -z, y       # rotation about x
    modes[4, 0::3], modes[4, 2::3] = z, -x       # rotation about y
    modes[5, 0::3], modes[5, 1::3] = -y, x       # rotation about z
    return modes


# --------------------------------------------------------------------------
# independent single-element oracle: engineering-Voigt route


def oracle_element_stiffness(coords, C_tensor_voigt):
    """Second implementation of the element stiffness: standard engineering
    strain convention (gamma = 2e), dense 2x2x2 Gauss quadrature, written
    without any helpers from the package."""
    # convert tensor-strain material matrix to engineering convention
    C_eng = np.array(C_tensor_voigt, dtype=float).copy()
    C_eng[:, 3:] *= 0.5
    g = 1.0 / np.sqrt(3.0)
    K = np.zeros((24, 24))
    signs = [(-1, -1, -1), (1, -1, -1), (1, 1, -1), (-1, 1, -1),
             (-1, -1, 1), (1, -1, 1), (1, 1, 1), (-1, 1, 1)]
    for gx in (-g, g):
        for gy in (-g, g):
            for gz in (-g, g):
                dN = np.zeros((8, 3))
                for a, (sx, sy, sz) in enumerate(signs):
                    dN[a, 0] = sx * (1 + sy * gy) * (1 + sz * gz) / 8.0
                    dN[a, 1] = sy * (1 + sx * gx) * (1 + sz * gz) / 8.0
                    dN[a, 2] = sz * (1 + sx * gx) * (1 + sy * gy) / 8.0
                J = dN.T @ coords
                detJ = np.linalg.det(J)
                dNdx = dN @ np.linalg.inv(J)
                B = np.zeros((6, 24))
                for a in range(8):
                    bx, by, bz = dNdx[a]
                    B[0, 3 * a] = bx
                    B[1, 3 * a + 1] = by
                    B[2, 3 * a + 2] = bz
                    B[3, 3 * a + 1] = bz
                    B[3, 3 * a + 2] = by
                    B[4, 3 * a] = bz
                    B[4, 3 * a + 2] = bx
                    B[5, 3 * a] = by
                    B[5, 3 * a + 1] = bx
                K += B.T @ C_eng @ B * detJ
    return K


# --------------------------------------------------------------------------
# element stiffness


def test_rigid_translation_in_kernel():
    C = stiffness_isotropic(IsotropicMaterial(E=1.0, nu=0.0))
    Ke = element_stiffness(UNIT_CUBE, C)
    norm = np.abs(Ke).max()
    for mode in rigid_modes(UNIT_CUBE)[:3]:
        assert np.abs(Ke @ mode).max() <= 1e-10 * norm


def test_rigid_rotation_in_kernel():
    C = stiffness_transversely_isotropic(P_TRUE)
    Ke = element_stiffness(UNIT_CUBE, C)
    norm = np.abs(Ke).max()
    rot_z = rigid_modes(UNIT_CUBE)[5]
    assert np.abs(Ke @ rot_z).max() <= 1e-8 * norm


def test_element_stiffness_matches_independent_oracle():
    for C in (
        stiffness_isotropic(IsotropicMaterial(E=1.0, nu=0.0)),
        stiffness_isotropic(IsotropicMaterial(E=2e11, nu=0.3)),
        stiffness_transversely_isotropic(P_TRUE),
    ):
        Ke = element_stiffness(UNIT_CUBE, C)
        Ko = oracle_element_stiffness(UNIT_CUBE, C)
        assert np.abs(Ke - Ko).max() <= 1e-12 * np.abs(Ko).max()
        assert np.allclose(Ke, Ke.T)
        assert np.trace(Ke) > 0
        assert np.linalg.eigvalsh(Ke).min() > -1e-10 * np.abs(Ke).max()


def test_element_stiffness_degenerate():
    bad = UNIT_CUBE.copy()
    bad[6] = bad[7]  # collapse an edge far enough to flip a Gauss point
    bad[6, 2] = -2.0
    with pytest.raises(DegenerateElementError):
        element_stiffness(bad, stiffness_isotropic(IsotropicMaterial(E=1.0, nu=0.0)))


def test_energy_consistency_voigt_vs_tensor():
    # u^T K u equals the quadrature of sigma(eps):eps for the same
    # displacement field; exact for box elements
    rng = np.random.default_rng(3)
    mats = [IsotropicMaterial(E=2e11, nu=0.3), P_TRUE] + sample_admissible(rng, 2)
    for m in mats:
        if isinstance(m, IsotropicMaterial):
            C = stiffness_isotropic(m)
        else:
            C = stiffness_transversely_isotropic(m)
        coords = UNIT_CUBE * np.array([0.7, 1.3, 2.1])
        u = rng.standard_normal(24)
        Ke = element_stiffness(coords, C)
        energy_K = 0.5 * u @ Ke @ u
        g = 1.0 / np.sqrt(3.0)
        energy_q = 0.0
        for gx in (-g, g):
            for gy in (-g, g):
                for gz in (-g, g):
                    _, dN = shape_functions(np.array([gx, gy, gz]))
                    J = dN.T @ coords
                    grads = dN @ np.linalg.inv(J)
                    H = u.reshape(8, 3).T @ grads  # displacement gradient
                    eps = 0.5 * (H + H.T)
                    sig = stress_from_strain(m, eps)
                    energy_q += 0.5 * np.tensordot(sig, eps) * np.linalg.det(J)
        assert energy_q == pytest.approx(energy_K, rel=1e-12)


# --------------------------------------------------------------------------
# element mass


def test_mass_conservation_unit_cube():
    Me = element_mass(UNIT_CUBE, rho=1.0)
    ux = np.zeros(24)
    ux[0::3] = 1.0
    assert ux @ Me @ ux == pytest.approx(1.0, rel=1e-12)
    assert np.linalg.eigvalsh(Me).min() > 0


def test_mass_linearity_in_rho():
    M1 = element_mass(UNIT_CUBE, rho=1.0)
    M3 = element_mass(UNIT_CUBE, rho=3.0)
    assert np.allclose(M3, 3.0 * M1, rtol=1e-14)


def test_mass_quadrature_exactness():
    M2 = element_mass(UNIT_CUBE, rho=2.5, order=2)
    M3 = element_mass(UNIT_CUBE, rho=2.5, order=3)
    assert np.abs(M2 - M3).max() <= 1e-12 * np.abs(M2).max()


def test_scaling_laws_one_element():
    # doubling all element sides multiplies M by 8 and K by 2
    C = stiffness_isotropic(IsotropicMaterial(E=2e11, nu=0.3))
    K1 = element_stiffness(UNIT_CUBE, C)
    K2 = element_stiffness(2.0 * UNIT_CUBE, C)
    M1 = element_mass(UNIT_CUBE, 7850.0)
    M2 = element_mass(2.0 * UNIT_CUBE, 7850.0)
    assert np.allclose(K2, 2.0 * K1, rtol=1e-12)
    assert np.allclose(M2, 8.0 * M1, rtol=1e-12)


# --------------------------------------------------------------------------
# assembly


def single_element_mesh():
    conn = np.arange(8, dtype=np.int64).reshape(1, 8)
    return RotorMesh(
        coords=UNIT_CUBE,
        elems=conn,
        regions=np.array([STEEL]),
        plane_of_node=np.array([0, 0, 0, 0, 1, 1, 1, 1]),
        plane_z=np.array([0.0, 1.0]),
    )


def two_element_mesh():
    coords = np.vstack([UNIT_CUBE, UNIT_CUBE[4:] + [0, 0, 1]])
    conn = np.array([[0, 1, 2, 3, 4, 5, 6, 7], [4, 5, 6, 7, 8, 9, 10, 11]])
    return RotorMesh(
        coords=coords,
        elems=conn,
        regions=np.array([STEEL, STEEL]),
        plane_of_node=np.repeat([0, 1, 2], 4),
        plane_z=np.array([0.0, 1.0, 2.0]),
    )


def test_assemble_single_element_equals_element_matrices():
    mesh = single_element_mesh()
    C = stiffness_isotropic(STEEL_MAT)
    sys = assemble(mesh, {STEEL: (C, STEEL_MAT.rho)})
    assert np.allclose(sys.K.toarray(), element_stiffness(UNIT_CUBE, C))
    assert np.allclose(sys.M.toarray(), element_mass(UNIT_CUBE, STEEL_MAT.rho))


def test_assemble_missing_material():
    with pytest.raises(MissingMaterialError):
        assemble(single_element_mesh(), {})


def test_two_element_kernel_dimension_6():
    # dense eigendecomposition oracle on the stacked two-element system
    mesh = two_element_mesh()
    C = stiffness_isotropic(IsotropicMaterial(E=1.0, nu=0.3))
    sys = assemble(mesh, {STEEL: (C, 1.0)})
    w = np.linalg.eigvalsh(sys.K.toarray())
    scale = np.abs(w).max()
    assert (np.abs(w) < 1e-10 * scale).sum() == 6


def test_assembled_K_psd_and_kernel_is_rigid():
    mesh = build_rotor_mesh(RotorGeometry(nz=(1, 2, 1), n_inner=1))
    C = stiffness_isotropic(STEEL_MAT)
    sys = assemble(mesh, {STEEL: (C, STEEL_MAT.rho), CORE: (stiffness_transversely_isotropic(P_TRUE), 7650.0)})
    K = sys.K
    norm = np.abs(K.data).max()
    for mode in rigid_modes(mesh.coords):
        assert np.abs(K @ mode).max() <= 1e-8 * norm
    rng = np.random.default_rng(5)
    for _ in range(20):
        v = rng.standard_normal(K.shape[0])
        assert v @ (K @ v) >= -1e-10 * norm * (v @ v)


def test_total_mass_matches_region_volumes():
    geo = RotorGeometry()
    mesh = build_rotor_mesh(geo)
    rho = {STEEL: 7850.0, CORE: 7650.0}
    sys = assemble(
        mesh,
        {
            STEEL: (stiffness_isotropic(STEEL_MAT), rho[STEEL]),
            CORE: (stiffness_transversely_isotropic(P_TRUE), rho[CORE]),
        },
    )
    vols = mesh_volume(mesh)
    expected = sum(vols[r] * rho[r] for r in vols)
    for d in range(3):
        e = np.zeros(sys.ndof)
        e[d::3] = 1.0
        assert e @ (sys.M @ e) == pytest.approx(expected, rel=1e-10)


def test_assembly_invariant_under_node_renumbering():
    mesh = build_rotor_mesh(RotorGeometry(nz=(1, 1, 1), n_inner=1))
    C = stiffness_isotropic(STEEL_MAT)
    mats = {STEEL: (C, 7850.0), CORE: (C, 7850.0)}
    sys = assemble(mesh, mats)
    rng = np.random.default_rng(17)
    perm = rng.permutation(mesh.n_nodes)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(mesh.n_nodes)
    shuffled = RotorMesh(
        coords=mesh.coords[perm],
        elems=inv[mesh.elems],
        regions=mesh.regions,
        plane_of_node=mesh.plane_of_node[perm],
        plane_z=mesh.plane_z,
    )
    sys2 = assemble(shuffled, mats)
    # K2 = P K P^T for the dof permutation induced by perm
    dof_perm = np.empty(sys.ndof, dtype=int)
    for new, old in enumerate(perm):
        dof_perm[3 * new : 3 * new + 3] = [3 * old, 3 * old + 1, 3 * old + 2]
    K2 = sys2.K.toarray()
    K1 = sys.K.toarray()[np.ix_(dof_perm, dof_perm)]
    assert np.abs(K2 - K1).max() <= 1e-12 * np.abs(K1).max()


# --------------------------------------------------------------------------
# parametrized assembly


def test_parametrized_matches_direct_assembly():
    mesh = build_rotor_mesh(RotorGeometry(nz=(1, 2, 1)))
    fixed = {STEEL: (stiffness_isotropic(STEEL_MAT), STEEL_MAT.rho)}
    psys = assemble_parametrized(mesh, fixed, core_rho=7650.0)
    for p in (P_TRUE, P_TRUE.replace(E_z=3e8), P_TRUE.replace(nu_xz=-0.1)):
        direct = assemble(
            mesh,
            {**fixed, CORE: (stiffness_transversely_isotropic(p), 7650.0)},
        )
        K = psys.stiffness(p)
        assert np.abs((K - direct.K)).max() <= 1e-10 * np.abs(direct.K.data).max()
    assert np.abs((psys.M - assemble(
        mesh, {**fixed, CORE: (stiffness_transversely_isotropic(P_TRUE), 7650.0)}
    ).M)).max() <= 1e-12 * np.abs(psys.M.data).max()


def test_ti_coefficients_reconstruct_stiffness():
    c = ti_stiffness_coefficients(P_TRUE)
    C = stiffness_transversely_isotropic(P_TRUE)
    assert c[0] == C[0, 0] and c[1] == C[0, 1] and c[2] == C[0, 2]
    assert c[3] == C[2, 2] and c[4] == C[3, 3] and c[5] == C[5, 5]
