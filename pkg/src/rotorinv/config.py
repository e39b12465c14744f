"""Experiment configuration: dataclasses plus YAML round-tripping.

The reference configuration ships as package data and is the single
source of the default geometry, densities, bounds, and solver knobs.
Serialization is canonical (sorted keys), so parse -> serialize ->
parse is a fixpoint and config hashes are stable.
"""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field, fields
from importlib import resources

import numpy as np
import yaml

from .eigsolve import EigenSettings
from .elastic import PARAM_NAMES, IsotropicMaterial, MaterialParams, check_admissible
from .mesh import RotorGeometry


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MaterialsConfig:
    steel: IsotropicMaterial = IsotropicMaterial(E=2e11, nu=0.3, rho=7850.0)
    copper: IsotropicMaterial = IsotropicMaterial(E=1.1e11, nu=0.34, rho=8960.0)
    core_rho: float = 7650.0


@dataclass(frozen=True)
class LsqConfig:
    max_iter: int = 100
    tol_grad: float = 1e-10
    tol_step: float = 1e-12
    fd_rel_step: float = 1e-6
    damping0: float = 1e-3


@dataclass(frozen=True)
class EkiConfig:
    ensemble_size: int = 60
    tol_c: float = 1e-8
    tol_v: float = 1e-10
    max_iter: int = 200
    noise_floor: float = 1e-8   # gamma for the delta = 0 covariance substitute
    init_spread: float = 0.5    # initial ensemble uniform on (1 +/- spread) * p_true


@dataclass(frozen=True)
class SolverConfig:
    n_solve: int = 16
    dense_threshold: int = 300
    shift_eps: float = 1e-4
    residual_tol: float = 1e-8
    rigid_tol: float = 1e-6
    ambiguous_margin: float = 0.1
    cache: bool = True

    def eigen_settings(self) -> EigenSettings:
        return EigenSettings(
            dense_threshold=self.dense_threshold,
            shift_eps=self.shift_eps,
            residual_tol=self.residual_tol,
            rigid_tol=self.rigid_tol,
        )


@dataclass(frozen=True)
class BeamValidationConfig:
    length: float = 1.0
    half_width: float = 0.025
    E: float = 2e11
    nu: float = 0.3
    rho: float = 7850.0
    levels: tuple[tuple[int, int], ...] = ((2, 16), (4, 32), (8, 64))
    tolerance: float = 0.05


@dataclass(frozen=True)
class ExperimentConfig:
    geometry: RotorGeometry = RotorGeometry()
    materials: MaterialsConfig = MaterialsConfig()
    p_true: MaterialParams = MaterialParams(2e11, 2e8, 7.6923e10, 5e8, 0.3)
    bounds: dict = field(
        default_factory=lambda: {
            "E_x": (9.0e10, 3.05e11),
            "E_z": (9.0e7, 3.1e8),
            "G_xy": (3.46e10, 1.19e11),
            "G_xz": (2.25e8, 7.75e8),
            "nu_xz": (0.135, 0.465),
        }
    )
    solver: SolverConfig = SolverConfig()
    lsq: LsqConfig = LsqConfig()
    eki: EkiConfig = EkiConfig()
    datasets: tuple[str, ...] = ("2bp", "3bp", "3bp1t")
    unknown_sets: tuple[tuple[str, ...], ...] = (
        ("E_x",), ("E_z",), ("G_xy",), ("G_xz",), ("nu_xz",),
        ("E_z", "G_xz"), ("E_x", "G_xy"),
        ("E_x", "E_z", "G_xy", "G_xz", "nu_xz"),
    )
    deltas: tuple[float, ...] = (1e-2, 1e-4, 1e-6, 1e-8, 1e-10)
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    sweep_unknowns: tuple[str, ...] = ("E_z", "G_xz")
    sweep_dataset: str = "3bp1t"
    beam: BeamValidationConfig = BeamValidationConfig()
    output_dir: str = "out"

    def __post_init__(self):
        if not check_admissible(self.p_true):
            raise ConfigError("p_true is not admissible")
        for name in PARAM_NAMES:
            if name not in self.bounds:
                raise ConfigError(f"missing bounds for {name}")
        if any(d < 0 for d in self.deltas):
            raise ConfigError("noise levels must be non-negative")
        for us in self.unknown_sets:
            for name in us:
                if name not in PARAM_NAMES:
                    raise ConfigError(f"unknown parameter name {name!r}")
        for ds in tuple(self.datasets) + (self.sweep_dataset,):
            if ds not in ("2bp", "3bp", "3bp1t"):
                raise ConfigError(f"unknown data set variant {ds!r}")


def _to_plain(obj):
    if isinstance(obj, (RotorGeometry, MaterialsConfig, IsotropicMaterial, MaterialParams,
                        LsqConfig, EkiConfig, SolverConfig, BeamValidationConfig)):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return {f.name: _to_plain(getattr(cfg, f.name)) for f in fields(cfg)}


def _num(value, cast=float):
    # YAML 1.1 parses bare '1e-2' as a string; be forgiving
    if isinstance(value, str):
        value = float(value)
    return cast(value)


def _tuples(seq, depth=1):
    if depth == 1:
        return tuple(seq)
    return tuple(_tuples(s, depth - 1) for s in seq)


def config_from_dict(raw: dict) -> ExperimentConfig:
    try:
        geo = raw.get("geometry", {})
        geometry = RotorGeometry(
            lengths=tuple(_num(v) for v in geo.get("lengths", (0.2, 0.4, 0.2))),
            half_widths=tuple(_num(v) for v in geo.get("half_widths", (0.025, 0.075))),
            n_inner=int(geo.get("n_inner", 2)),
            n_ring=int(geo.get("n_ring", 1)),
            nz=tuple(int(v) for v in geo.get("nz", (3, 6, 3))),
            copper_shell=bool(geo.get("copper_shell", False)),
            refinement=int(geo.get("refinement", 1)),
        )
        mats = raw.get("materials", {})

        def iso(d, default):
            if not d:
                return default
            return IsotropicMaterial(E=_num(d["E"]), nu=_num(d["nu"]), rho=_num(d["rho"]))

        defaults = MaterialsConfig()
        materials = MaterialsConfig(
            steel=iso(mats.get("steel"), defaults.steel),
            copper=iso(mats.get("copper"), defaults.copper),
            core_rho=_num(mats.get("core_rho", defaults.core_rho)),
        )
        pt = raw.get("p_true")
        if pt is None:
            p_true = ExperimentConfig().p_true
        elif isinstance(pt, dict):
            p_true = MaterialParams(**{k: _num(v) for k, v in pt.items()})
        else:
            p_true = MaterialParams.from_array([_num(v) for v in pt])

        def sub(cls, key):
            d = dict(raw.get(key, {}))
            kwargs = {}
            for f in fields(cls):
                if f.name not in d:
                    continue
                v = d.pop(f.name)
                if f.type in ("int", int):
                    kwargs[f.name] = int(v)
                elif f.type in ("bool", bool):
                    kwargs[f.name] = bool(v)
                elif f.type in ("float", float):
                    kwargs[f.name] = _num(v)
                else:
                    kwargs[f.name] = v
            if d:
                raise ConfigError(f"unknown keys in {key!r}: {sorted(d)}")
            return cls(**kwargs)

        solver = sub(SolverConfig, "solver")
        lsq = sub(LsqConfig, "lsq")
        eki = sub(EkiConfig, "eki")

        beam_raw = dict(raw.get("beam", {}))
        beam_defaults = BeamValidationConfig()
        beam = BeamValidationConfig(
            length=_num(beam_raw.get("length", beam_defaults.length)),
            half_width=_num(beam_raw.get("half_width", beam_defaults.half_width)),
            E=_num(beam_raw.get("E", beam_defaults.E)),
            nu=_num(beam_raw.get("nu", beam_defaults.nu)),
            rho=_num(beam_raw.get("rho", beam_defaults.rho)),
            levels=_tuples(
                [[int(a), int(b)] for a, b in beam_raw.get("levels", beam_defaults.levels)], 2
            ),
            tolerance=_num(beam_raw.get("tolerance", beam_defaults.tolerance)),
        )

        bounds_raw = raw.get("bounds")
        if bounds_raw is None:
            bounds = ExperimentConfig().bounds
        else:
            bounds = {k: tuple(_num(v) for v in pair) for k, pair in bounds_raw.items()}

        return ExperimentConfig(
            geometry=geometry,
            materials=materials,
            p_true=p_true,
            bounds=bounds,
            solver=solver,
            lsq=lsq,
            eki=eki,
            datasets=tuple(raw.get("datasets", ExperimentConfig().datasets)),
            unknown_sets=_tuples(raw.get("unknown_sets", ExperimentConfig().unknown_sets), 2),
            deltas=tuple(_num(v) for v in raw.get("deltas", ExperimentConfig().deltas)),
            seeds=tuple(int(v) for v in raw.get("seeds", ExperimentConfig().seeds)),
            sweep_unknowns=tuple(raw.get("sweep_unknowns", ExperimentConfig().sweep_unknowns)),
            sweep_dataset=raw.get("sweep_dataset", ExperimentConfig().sweep_dataset),
            beam=beam,
            output_dir=str(raw.get("output_dir", "out")),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def serialize_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=True, default_flow_style=None)


def load_config(path=None) -> ExperimentConfig:
    """Load a config file, or the packaged reference config when no path is given."""
    if path is None:
        text = resources.files("rotorinv.data").joinpath("reference.yaml").read_text()
    else:
        with open(path) as f:
            text = f.read()
    raw = yaml.safe_load(text)
    if not isinstance(raw, dict):
        raise ConfigError("config file must contain a mapping")
    return config_from_dict(raw)


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as f:
        f.write(serialize_config(cfg))


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()[:16]
