"""Trilinear hexahedral elements and global K/M assembly.

Element: 8-node hex, 2x2x2 Gauss quadrature, consistent mass. The
B-matrix produces tensor shear strains (e_23, not gamma_23), matching
the Voigt convention of the elastic module; the energy weight
diag(1,1,1,2,2,2) accounts for the double appearance of the shear
components in sigma:eps.

Global matrices are CSR. The core material is the only thing that
changes between forward evaluations, and its stiffness enters linearly
through six scalar entries, so `ParametrizedSystem` precomputes one
sparse data column per entry and rebuilds K(p) with a single dot
product.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .elastic import MaterialParams, stiffness_transversely_isotropic
from .mesh import CORE, RotorMesh

#: corner signs of the reference hex, matching the mesh corner ordering
CORNER_SIGNS = np.array(
    [
        [-1, -1, -1],
        [1, -1, -1],
        [1, 1, -1],
        [-1, 1, -1],
        [-1, -1, 1],
        [1, -1, 1],
        [1, 1, 1],
        [-1, 1, 1],
    ],
    dtype=float,
)

ENERGY_WEIGHT = np.diag([1.0, 1.0, 1.0, 2.0, 2.0, 2.0])


class DegenerateElementError(ValueError):
    pass


class MissingMaterialError(KeyError):
    pass


def gauss_points(order: int = 2) -> tuple[np.ndarray, np.ndarray]:
    pts, wts = np.polynomial.legendre.leggauss(order)
    return pts, wts


def shape_functions(xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Trilinear shape functions N (8,) and gradients dN/dxi (8,3)."""
    t = 1.0 + CORNER_SIGNS * xi
    N = t.prod(axis=1) / 8.0
    dN = np.empty((8, 3))
    dN[:, 0] = CORNER_SIGNS[:, 0] * t[:, 1] * t[:, 2] / 8.0
    dN[:, 1] = CORNER_SIGNS[:, 1] * t[:, 0] * t[:, 2] / 8.0
    dN[:, 2] = CORNER_SIGNS[:, 2] * t[:, 0] * t[:, 1] / 8.0
    return N, dN


def _b_matrix(grads: np.ndarray) -> np.ndarray:
    """6x24 strain-displacement matrix in tensor-strain Voigt form."""
    B = np.zeros((6, 24))
    gx, gy, gz = grads[:, 0], grads[:, 1], grads[:, 2]
    B[0, 0::3] = gx
    B[1, 1::3] = gy
    B[2, 2::3] = gz
    B[3, 1::3] = gz / 2.0
    B[3, 2::3] = gy / 2.0
    B[4, 0::3] = gz / 2.0
    B[4, 2::3] = gx / 2.0
    B[5, 0::3] = gy / 2.0
    B[5, 1::3] = gx / 2.0
    return B


def element_stiffness(coords, C, order: int = 2) -> np.ndarray:
    """24x24 element stiffness for a hex with nodal coords (8,3).

    C is the 6x6 material stiffness in tensor-strain Voigt form.
    """
    coords = np.asarray(coords, dtype=float)
    Cw = ENERGY_WEIGHT @ np.asarray(C, dtype=float)
    if not np.allclose(Cw, Cw.T, rtol=1e-10, atol=0):
        raise ValueError("energy-weighted material matrix is not symmetric")
    pts, wts = gauss_points(order)
    K = np.zeros((24, 24))
    for ix, px in enumerate(pts):
        for iy, py in enumerate(pts):
            for iz, pz in enumerate(pts):
                _, dN = shape_functions(np.array([px, py, pz]))
                J = dN.T @ coords
                detJ = np.linalg.det(J)
                if detJ <= 0:
                    raise DegenerateElementError(f"non-positive Jacobian {detJ:.3e}")
                grads = dN @ np.linalg.inv(J)
                B = _b_matrix(grads)
                w = wts[ix] * wts[iy] * wts[iz] * detJ
                K += w * (B.T @ Cw @ B)
    return 0.5 * (K + K.T)


def element_mass(coords, rho: float, order: int = 2) -> np.ndarray:
    """24x24 consistent mass matrix of a hex element."""
    coords = np.asarray(coords, dtype=float)
    pts, wts = gauss_points(order)
    m = np.zeros((8, 8))
    for ix, px in enumerate(pts):
        for iy, py in enumerate(pts):
            for iz, pz in enumerate(pts):
                N, dN = shape_functions(np.array([px, py, pz]))
                detJ = np.linalg.det(dN.T @ coords)
                if detJ <= 0:
                    raise DegenerateElementError(f"non-positive Jacobian {detJ:.3e}")
                m += wts[ix] * wts[iy] * wts[iz] * detJ * rho * np.outer(N, N)
    return np.kron(m, np.eye(3))


@dataclass(frozen=True)
class AssembledSystem:
    """Global stiffness and mass (CSR) with node-major dof layout:
    dof(node, direction) = 3*node + direction."""

    K: sp.csr_matrix
    M: sp.csr_matrix

    @property
    def ndof(self) -> int:
        return self.K.shape[0]


def _element_dofs(conn: np.ndarray) -> np.ndarray:
    dof = np.empty(24, dtype=np.int64)
    dof[0::3] = 3 * conn
    dof[1::3] = 3 * conn + 1
    dof[2::3] = 3 * conn + 2
    return dof


def _element_groups(mesh: RotorMesh):
    """Group elements by (region, box size); K_e/M_e are shared per group."""
    box = mesh.coords[mesh.elems]
    sides = np.round(box.max(axis=1) - box.min(axis=1), 12)
    groups: dict[tuple, list[int]] = {}
    for e in range(mesh.n_elems):
        key = (str(mesh.regions[e]), tuple(sides[e]))
        groups.setdefault(key, []).append(e)
    return groups, box


def assemble(mesh: RotorMesh, materials: dict[str, tuple[np.ndarray, float]]) -> AssembledSystem:
    """Assemble K and M given per-region (stiffness 6x6, density) pairs."""
    for reg in mesh.region_names():
        if reg not in materials:
            raise MissingMaterialError(f"no material assigned to region {reg!r}")
    n = 3 * mesh.n_nodes
    groups, box = _element_groups(mesh)
    rows, cols, kdata, mdata = [], [], [], []
    for (reg, _size), elems in groups.items():
        C, rho = materials[reg]
        coords = box[elems[0]]
        coords = coords - coords.mean(axis=0)
        Ke = element_stiffness(coords, C)
        Me = element_mass(coords, rho)
        for e in elems:
            dof = _element_dofs(mesh.elems[e])
            ii, jj = np.meshgrid(dof, dof, indexing="ij")
            rows.append(ii.ravel())
            cols.append(jj.ravel())
            kdata.append(Ke.ravel())
            mdata.append(Me.ravel())
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    K = sp.coo_matrix((np.concatenate(kdata), (rows, cols)), shape=(n, n)).tocsr()
    M = sp.coo_matrix((np.concatenate(mdata), (rows, cols)), shape=(n, n)).tocsr()
    return AssembledSystem(K=K, M=M)


# --------------------------------------------------------------------------
# parametrized assembly: K(p) = K_fixed + sum_k c_k(p) K_hat_k over the core

#: 0/1 patterns of the six independent stiffness entries of a transversely
#: isotropic material, in the order (C11, C12, C13, C33, C44, C66)
_TI_PATTERNS = []
for _slots in (
    [(0, 0), (1, 1)],
    [(0, 1), (1, 0)],
    [(0, 2), (2, 0), (1, 2), (2, 1)],
    [(2, 2)],
    [(3, 3), (4, 4)],
    [(5, 5)],
):
    _P = np.zeros((6, 6))
    for _i, _j in _slots:
        _P[_i, _j] = 1.0
    _TI_PATTERNS.append(_P)


def ti_stiffness_coefficients(p: MaterialParams) -> np.ndarray:
    C = stiffness_transversely_isotropic(p)
    return np.array([C[0, 0], C[0, 1], C[0, 2], C[2, 2], C[3, 3], C[5, 5]])


@dataclass(frozen=True)
class ParametrizedSystem:
    """Assembly with the core stiffness left as six free coefficients."""

    indices: np.ndarray
    indptr: np.ndarray
    shape: tuple[int, int]
    data_fixed: np.ndarray       # (nnz,)
    data_core: np.ndarray        # (6, nnz)
    M: sp.csr_matrix

    @property
    def ndof(self) -> int:
        return self.shape[0]

    def stiffness(self, p: MaterialParams) -> sp.csr_matrix:
        coeffs = ti_stiffness_coefficients(p)
        data = self.data_fixed + coeffs @ self.data_core
        return sp.csr_matrix((data, self.indices, self.indptr), shape=self.shape)

    def system(self, p: MaterialParams) -> AssembledSystem:
        return AssembledSystem(K=self.stiffness(p), M=self.M)


def assemble_parametrized(
    mesh: RotorMesh,
    fixed_materials: dict[str, tuple[np.ndarray, float]],
    core_rho: float,
    core_region: str = CORE,
) -> ParametrizedSystem:
    """Precompute the sparse pieces of K(p) and the fixed mass matrix.

    fixed_materials covers every region except `core_region`; the core
    contributes one data column per independent stiffness entry.
    """
    for reg in mesh.region_names():
        if reg != core_region and reg not in fixed_materials:
            raise MissingMaterialError(f"no material assigned to region {reg!r}")
    n = 3 * mesh.n_nodes
    groups, box = _element_groups(mesh)
    rows, cols, mdata = [], [], []
    fixed_cols, core_cols = [], []
    for (reg, _size), elems in groups.items():
        coords = box[elems[0]]
        coords = coords - coords.mean(axis=0)
        if reg == core_region:
            k_parts = [element_stiffness(coords, P).ravel() for P in _TI_PATTERNS]
            k_fixed = np.zeros(24 * 24)
            rho = core_rho
        else:
            C, rho = fixed_materials[reg]
            k_parts = [np.zeros(24 * 24)] * 6
            k_fixed = element_stiffness(coords, C).ravel()
        Me = element_mass(coords, rho).ravel()
        for e in elems:
            dof = _element_dofs(mesh.elems[e])
            ii, jj = np.meshgrid(dof, dof, indexing="ij")
            rows.append(ii.ravel())
            cols.append(jj.ravel())
            mdata.append(Me)
            fixed_cols.append(k_fixed)
            core_cols.append(np.stack(k_parts))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)

    # one conversion fixes the CSR pattern; every data column shares the
    # same (rows, cols), so the resulting indices always coincide
    template = sp.coo_matrix((np.concatenate(fixed_cols), (rows, cols)), shape=(n, n)).tocsr()

    def to_csr_data(values: np.ndarray) -> np.ndarray:
        m = sp.coo_matrix((values, (rows, cols)), shape=(n, n)).tocsr()
        assert np.array_equal(m.indices, template.indices)
        return m.data

    data_fixed = template.data
    data_core = np.stack(
        [to_csr_data(np.concatenate([c[k] for c in core_cols])) for k in range(6)]
    )
    M = sp.coo_matrix((np.concatenate(mdata), (rows, cols)), shape=(n, n)).tocsr()
    return ParametrizedSystem(
        indices=template.indices,
        indptr=template.indptr,
        shape=(n, n),
        data_fixed=data_fixed,
        data_core=data_core,
        M=M,
    )


def dump_system(system: AssembledSystem, prefix: str) -> None:
    """Write K and M in matrix-market format for external inspection."""
    from scipy.io import mmwrite

    mmwrite(f"{prefix}_K.mtx", system.K)
    mmwrite(f"{prefix}_M.mtx", system.M)
