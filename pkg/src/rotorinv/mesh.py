"""Structured hexahedral mesh of a three-segment stepped rotor.

The rotor is a beam along z with square cross-sections: two shaft
segments (half-width a_shaft) around a core segment (half-width
a_core >= a_shaft). The section grid of the core contains the shaft
grid, so the mesh is conforming across the steps. Cross-sections are
symmetric in x and y, which is what makes bending modes appear as
degenerate pairs.

Region tags: 'steel' for the shafts, 'core' for the middle segment;
with copper_shell enabled the outermost element layer of the core
section is tagged 'copper'.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

STEEL = "steel"
CORE = "core"
COPPER = "copper"


class InvalidGeometryError(ValueError):
    pass


@dataclass(frozen=True)
class RotorGeometry:
    """Dimensions and element counts of the stepped rotor.

    lengths: (left shaft, core, right shaft) [m]
    half_widths: (a_shaft, a_core) [m]
    n_inner: elements across the shaft width (same in x and y)
    n_ring: elements across each core overhang band (0 iff widths equal)
    nz: axial element counts per segment
    refinement: uniform multiplier on all element counts
    """

    lengths: tuple[float, float, float] = (0.2, 0.4, 0.2)
    half_widths: tuple[float, float] = (0.025, 0.075)
    n_inner: int = 2
    n_ring: int = 1
    nz: tuple[int, int, int] = (3, 6, 3)
    copper_shell: bool = False
    refinement: int = 1

    def __post_init__(self):
        if any(L <= 0 for L in self.lengths):
            raise InvalidGeometryError(f"segment lengths must be positive: {self.lengths}")
        a_s, a_c = self.half_widths
        if a_s <= 0 or a_c < a_s:
            raise InvalidGeometryError(f"need 0 < a_shaft <= a_core, got {self.half_widths}")
        if self.n_inner < 1 or any(n < 1 for n in self.nz) or self.refinement < 1:
            raise InvalidGeometryError("element counts must be >= 1")
        if a_c > a_s and self.n_ring < 1:
            raise InvalidGeometryError("n_ring must be >= 1 when a_core > a_shaft")
        if a_c == a_s and self.n_ring != 0:
            raise InvalidGeometryError("n_ring must be 0 when a_core == a_shaft")

    def refined(self, factor: int) -> "RotorGeometry":
        return replace(self, refinement=self.refinement * factor)


@dataclass(frozen=True)
class RotorMesh:
    """Conforming 8-node hex mesh with per-element region tags.

    Element corner ordering: bottom face (-z) counter-clockwise seen
    from +z, then the top face in the same order; axis-aligned boxes
    therefore have positive Jacobians everywhere.
    """

    coords: np.ndarray          # (n_nodes, 3)
    elems: np.ndarray           # (n_elems, 8) int
    regions: np.ndarray         # (n_elems,) unicode tags
    plane_of_node: np.ndarray   # (n_nodes,) index into plane_z
    plane_z: np.ndarray         # sorted z levels of the structured grid

    @property
    def n_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def n_elems(self) -> int:
        return self.elems.shape[0]

    def region_names(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.regions.tolist())))


def _section_coords(g: RotorGeometry) -> tuple[np.ndarray, int, int]:
    """1D section grid plus the (inclusive) node index range of the shaft."""
    r = g.refinement
    a_s, a_c = g.half_widths
    n_in, n_ring = g.n_inner * r, g.n_ring * r
    inner = np.linspace(-a_s, a_s, n_in + 1)
    if a_c > a_s:
        left = np.linspace(-a_c, -a_s, n_ring + 1)[:-1]
        right = np.linspace(a_s, a_c, n_ring + 1)[1:]
        xs = np.concatenate([left, inner, right])
        i0 = n_ring
    else:
        xs = inner
        i0 = 0
    return xs, i0, n_in


def build_rotor_mesh(g: RotorGeometry) -> RotorMesh:
    """Generate the structured stepped-rotor mesh for a geometry."""
    r = g.refinement
    xs, i0, n_in = _section_coords(g)
    nsx = len(xs)
    L1, L2, L3 = g.lengths
    nz = tuple(n * r for n in g.nz)
    z_parts = [np.linspace(0.0, L1, nz[0] + 1)]
    z_parts.append(np.linspace(L1, L1 + L2, nz[1] + 1)[1:])
    z_parts.append(np.linspace(L1 + L2, L1 + L2 + L3, nz[2] + 1)[1:])
    zs = np.concatenate(z_parts)
    tol = 1e-12 * (L1 + L2 + L3)
    full_plane = (zs >= L1 - tol) & (zs <= L1 + L2 + tol)

    node_id = -np.ones((len(zs), nsx, nsx), dtype=np.int64)
    coords = []
    plane_of_node = []
    for k in range(len(zs)):
        for j in range(nsx):
            for i in range(nsx):
                in_shaft = i0 <= i <= i0 + n_in and i0 <= j <= i0 + n_in
                if full_plane[k] or in_shaft:
                    node_id[k, j, i] = len(coords)
                    coords.append((xs[i], xs[j], zs[k]))
                    plane_of_node.append(k)

    elems, regions = [], []
    kz = 0
    for seg in range(3):
        seg_region = STEEL if seg != 1 else CORE
        for _ in range(nz[seg]):
            for j in range(nsx - 1):
                for i in range(nsx - 1):
                    inner_cell = i0 <= i < i0 + n_in and i0 <= j < i0 + n_in
                    if seg != 1 and not inner_cell:
                        continue
                    region = seg_region
                    if seg == 1 and g.copper_shell and (
                        i in (0, nsx - 2) or j in (0, nsx - 2)
                    ):
                        region = COPPER
                    n000 = node_id[kz, j, i]
                    n100 = node_id[kz, j, i + 1]
                    n110 = node_id[kz, j + 1, i + 1]
                    n010 = node_id[kz, j + 1, i]
                    n001 = node_id[kz + 1, j, i]
                    n101 = node_id[kz + 1, j, i + 1]
                    n111 = node_id[kz + 1, j + 1, i + 1]
                    n011 = node_id[kz + 1, j + 1, i]
                    elems.append((n000, n100, n110, n010, n001, n101, n111, n011))
                    regions.append(region)
            kz += 1

    return RotorMesh(
        coords=np.asarray(coords, dtype=float),
        elems=np.asarray(elems, dtype=np.int64),
        regions=np.asarray(regions),
        plane_of_node=np.asarray(plane_of_node, dtype=np.int64),
        plane_z=zs,
    )


def mesh_volume(mesh: RotorMesh) -> dict[str, float]:
    """Exact per-region volume (elements are axis-aligned boxes)."""
    box = mesh.coords[mesh.elems]           # (m, 8, 3)
    sides = box.max(axis=1) - box.min(axis=1)
    vols = sides.prod(axis=1)
    out: dict[str, float] = {}
    for reg in mesh.region_names():
        out[reg] = float(vols[mesh.regions == reg].sum())
    return out


def write_mesh_text(mesh: RotorMesh, path) -> None:
    """Dump nodes and elements to a plain text file for external viewers."""
    with open(path, "w") as f:
        f.write(f"nodes {mesh.n_nodes}\n")
        for x, y, z in mesh.coords:
            f.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")
        f.write(f"elements {mesh.n_elems}\n")
        for conn, reg in zip(mesh.elems, mesh.regions):
            f.write(" ".join(str(int(c)) for c in conn) + f" {reg}\n")
