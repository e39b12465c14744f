"""Forward map: elastic constants -> lowest labeled eigenvalues.

Modes are classified by the dominant motion of the section centroid
line: transverse deflection (bending), rotation about the beam axis
(torsional), or axial stretch. Bending modes come in near-degenerate
pairs because the cross-section is symmetric in x and y. The returned
data sets are assembled label-by-label, so a reordering of torsional
vs bending modes between parameter values cannot scramble the output.

Eigenvalues are Lambda = omega^2 [rad^2/s^2]; frequencies in Hz are
omega / (2 pi).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .elastic import IsotropicMaterial, MaterialParams, check_admissible, stiffness_isotropic
from .eigsolve import DimensionTooSmallError, EigenSettings, Spectrum, smallest_eigenpairs
from .fem import ParametrizedSystem, assemble_parametrized
from .mesh import CORE, RotorGeometry, RotorMesh, build_rotor_mesh

log = logging.getLogger(__name__)

RIGID = "rigid"
BENDING = "bending"
TORSIONAL = "torsional"
AXIAL = "axial"
OTHER = "other"

#: dataset variants: (number of bending pairs, include first torsional mode)
DATASETS = {
    "2bp": (2, False),
    "3bp": (3, False),
    "3bp1t": (3, True),
}


def dataset_size(variant: str) -> int:
    pairs, torsional = DATASETS[variant]
    return 2 * pairs + (1 if torsional else 0)


class InadmissibleParametersError(ValueError):
    """Forward map refused: parameters violate the admissibility constraints."""


class NotEnoughModesError(RuntimeError):
    """Classification could not supply the requested data set."""


@dataclass(frozen=True)
class ModalResult:
    """Spectrum plus one label per mode and the bending-pair grouping."""

    spectrum: Spectrum
    labels: tuple[str, ...]
    pairs: tuple[tuple[int, int], ...]
    ambiguous: tuple[int, ...]

    def indices(self, label: str) -> list[int]:
        return [i for i, lab in enumerate(self.labels) if lab == label]


def _plane_groups(mesh: RotorMesh):
    order = np.argsort(mesh.plane_of_node, kind="stable")
    sorted_planes = mesh.plane_of_node[order]
    boundaries = np.searchsorted(sorted_planes, np.arange(len(mesh.plane_z) + 1))
    return [order[boundaries[k] : boundaries[k + 1]] for k in range(len(mesh.plane_z))]


def classify_modes(
    spectrum: Spectrum,
    mesh: RotorMesh,
    rigid_tol: float = 1e-6,
    ambiguous_margin: float = 0.1,
) -> ModalResult:
    """Label every mode of a free-free rotor spectrum.

    Rigid modes are split off by the eigenvalue gap test; the rest are
    labeled by the largest of three normalized indicators accumulated
    over the cross-section planes. Modes whose top two indicators are
    within `ambiguous_margin` are labeled 'other' and reported.
    """
    n_rigid = spectrum.n_rigid(rigid_tol)
    planes = _plane_groups(mesh)
    plane_xy = [(mesh.coords[pl, 0], mesh.coords[pl, 1]) for pl in planes]
    labels = [RIGID] * n_rigid
    ambiguous = []
    for m in range(n_rigid, len(spectrum)):
        u = spectrum.vectors[:, m].reshape(-1, 3)
        bend = tors = axial = 0.0
        for pl, (x, y) in zip(planes, plane_xy):
            ux, uy, uz = u[pl, 0], u[pl, 1], u[pl, 2]
            bend += ux.mean() ** 2 + uy.mean() ** 2
            r2 = x * x + y * y
            theta = (x @ uy - y @ ux) / r2.sum()
            tors += theta * theta * r2.mean()
            axial += uz.mean() ** 2
        scores = {BENDING: bend, TORSIONAL: tors, AXIAL: axial}
        ranked = sorted(scores.items(), key=lambda kv: kv[1], reverse=True)
        top, second = ranked[0], ranked[1]
        if top[1] <= 0 or (top[1] - second[1]) < ambiguous_margin * top[1]:
            labels.append(OTHER)
            ambiguous.append(m)
            log.warning(
                "ambiguous mode %d: %s=%.3e vs %s=%.3e", m, top[0], top[1], second[0], second[1]
            )
        else:
            labels.append(top[0])

    bend_idx = [i for i, lab in enumerate(labels) if lab == BENDING]
    pairs = tuple(
        (bend_idx[2 * k], bend_idx[2 * k + 1]) for k in range(len(bend_idx) // 2)
    )
    return ModalResult(
        spectrum=spectrum,
        labels=tuple(labels),
        pairs=pairs,
        ambiguous=tuple(ambiguous),
    )


@dataclass
class ForwardContext:
    """Everything fixed across forward evaluations: mesh, assembled
    pieces, solver settings, and the optional result cache."""

    mesh: RotorMesh
    system: ParametrizedSystem
    eigen: EigenSettings = field(default_factory=EigenSettings)
    n_solve: int = 13
    rigid_tol: float = 1e-6
    ambiguous_margin: float = 0.1
    cache_enabled: bool = True
    _cache: dict = field(default_factory=dict, repr=False)
    n_evaluations: int = 0
    n_cache_hits: int = 0

    @classmethod
    def create(
        cls,
        geometry: RotorGeometry,
        fixed_materials: dict[str, tuple[np.ndarray, float]],
        core_rho: float,
        **kw,
    ) -> "ForwardContext":
        mesh = build_rotor_mesh(geometry)
        system = assemble_parametrized(mesh, fixed_materials, core_rho=core_rho)
        return cls(mesh=mesh, system=system, **kw)

    def solve_modal(self, p: MaterialParams, n_modes: int) -> ModalResult:
        sys = self.system.system(p)
        spectrum = smallest_eigenpairs(sys.K, sys.M, n_modes, self.eigen)
        return classify_modes(
            spectrum, self.mesh, rigid_tol=self.rigid_tol, ambiguous_margin=self.ambiguous_margin
        )


def _cache_key(p: MaterialParams, variant: str) -> tuple:
    # 1e-12 relative quantization: 13 significant digits
    return (variant,) + tuple(f"{v:.12e}" for v in p.as_array())


def _select(modal: ModalResult, variant: str) -> np.ndarray | None:
    pairs_needed, want_torsional = DATASETS[variant]
    bend = modal.indices(BENDING)
    if len(bend) < 2 * pairs_needed:
        return None
    values = [modal.spectrum.values[i] for i in bend[: 2 * pairs_needed]]
    if want_torsional:
        tors = modal.indices(TORSIONAL)
        if not tors:
            return None
        values.append(modal.spectrum.values[tors[0]])
    return np.array(values)


def forward_map(p: MaterialParams, variant: str, ctx: ForwardContext) -> np.ndarray:
    """Lowest eigenvalues of the requested data set, bending pairs first
    (ascending), then the first torsional mode for the 7-value variant.
    """
    if variant not in DATASETS:
        raise KeyError(f"unknown data set variant {variant!r}")
    report = check_admissible(p)
    if not report:
        raise InadmissibleParametersError("; ".join(report.violations))

    key = _cache_key(p, variant)
    if ctx.cache_enabled and key in ctx._cache:
        ctx.n_cache_hits += 1
        return ctx._cache[key].copy()

    ctx.n_evaluations += 1
    labels: tuple[str, ...] = ()
    values = None
    try:
        modal = ctx.solve_modal(p, ctx.n_solve)
        labels = modal.labels
        values = _select(modal, variant)
    except DimensionTooSmallError:
        pass  # fewer than 7 modes requested; the retry below asks for more
    if values is None:
        # the torsional mode can interleave above the requested window;
        # transparently ask for more modes once
        try:
            modal = ctx.solve_modal(p, min(2 * ctx.n_solve, ctx.system.ndof))
            labels = modal.labels
            values = _select(modal, variant)
        except DimensionTooSmallError:
            pass
    if values is None:
        raise NotEnoughModesError(
            f"could not extract data set {variant!r}: labels {labels}"
        )
    if ctx.cache_enabled:
        ctx._cache[key] = values.copy()
    return values


def frequencies_hz(eigenvalues: np.ndarray) -> np.ndarray:
    return np.sqrt(np.maximum(eigenvalues, 0.0)) / (2.0 * np.pi)


def default_fixed_materials(
    steel: IsotropicMaterial, copper: IsotropicMaterial | None = None
) -> dict[str, tuple[np.ndarray, float]]:
    mats = {"steel": (stiffness_isotropic(steel), steel.rho)}
    if copper is not None:
        mats["copper"] = (stiffness_isotropic(copper), copper.rho)
    return mats


def context_from_config(cfg) -> ForwardContext:
    """Build the forward context described by an ExperimentConfig."""
    fixed = default_fixed_materials(
        cfg.materials.steel,
        cfg.materials.copper if cfg.geometry.copper_shell else None,
    )
    return ForwardContext.create(
        cfg.geometry,
        fixed,
        core_rho=cfg.materials.core_rho,
        eigen=cfg.solver.eigen_settings(),
        n_solve=cfg.solver.n_solve,
        rigid_tol=cfg.solver.rigid_tol,
        ambiguous_margin=cfg.solver.ambiguous_margin,
        cache_enabled=cfg.solver.cache,
    )
