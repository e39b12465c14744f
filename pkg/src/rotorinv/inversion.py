"""Noise model, cost functions, and bounded least-squares recovery.

Measurements carry multiplicative noise: lam_i^d = (1 + zeta_i) lam_i
with zeta_i ~ N(0, delta^2). The matching likelihood covariance is
diagonal with entries lam_i^2 delta^2.

Optimization runs on a masked subset of the five parameters, in scaled
coordinates: log10 for the four moduli (they span 1e8..1e11), the raw
value for nu_xz. Bounds are simple boxes in physical coordinates,
enforced by projection.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .elastic import MODULUS_INDICES, PARAM_NAMES, MaterialParams, check_admissible
from .forward import InadmissibleParametersError, forward_map

log = logging.getLogger(__name__)


class ZeroTruthError(ValueError):
    pass


class ZeroEigenvalueInModelError(ValueError):
    pass


class InadmissibleStartError(ValueError):
    pass


# --------------------------------------------------------------------------
# noise model


@dataclass(frozen=True)
class NoisyData:
    """Perturbed eigenvalues plus the realization that produced them.

    `truth` and `zeta` are available in simulation studies (inverse
    crime) and feed the discrepancy-principle stopping rule; `values`
    is all a real measurement would provide.
    """

    values: np.ndarray
    delta: float
    seed: int | None
    zeta: np.ndarray | None = None
    truth: np.ndarray | None = None


def add_multiplicative_noise(lam, delta: float, seed: int | None) -> NoisyData:
    """lam_i -> (1 + zeta_i) lam_i with i.i.d. zeta_i ~ N(0, delta^2)."""
    lam = np.asarray(lam, dtype=float)
    if delta < 0:
        raise ValueError("noise level must be non-negative")
    if delta == 0:
        return NoisyData(values=lam.copy(), delta=0.0, seed=seed, zeta=np.zeros_like(lam), truth=lam.copy())
    rng = np.random.default_rng(seed)
    zeta = rng.normal(0.0, delta, size=lam.shape)
    return NoisyData(values=(1.0 + zeta) * lam, delta=delta, seed=seed, zeta=zeta, truth=lam.copy())


def noise_covariance_diagonal(data: NoisyData, noise_floor: float = 1e-8) -> np.ndarray:
    """Diagonal of the likelihood covariance, lam_i^2 delta^2.

    delta = 0 leaves the covariance undefined; a small relative floor
    keeps the noisy-data machinery usable as pure regularization.
    """
    delta_eff = data.delta if data.delta > 0 else noise_floor
    return (data.values * delta_eff) ** 2


# --------------------------------------------------------------------------
# cost functions


def cost_exact(p: MaterialParams, lam, fwd) -> float:
    """Plain least-squares misfit ||f(p) - lam||_2^2."""
    lam = np.asarray(lam, dtype=float)
    r = fwd(p) - lam
    return float(r @ r)


def cost_mle(p: MaterialParams, data: NoisyData, fwd) -> float:
    """Maximum-likelihood cost for multiplicative noise:
    sum (f_i - lam_i^d)^2 / (f_i^2 delta^2) + log f_i."""
    if data.delta <= 0:
        raise ValueError("cost_mle requires delta > 0")
    f = fwd(p)
    if (f <= 0).any():
        raise ZeroEigenvalueInModelError("model produced a non-positive eigenvalue")
    r = (f - data.values) / (f * data.delta)
    return float(r @ r + np.log(f).sum())


def relative_error(p_hat, p_true) -> np.ndarray:
    """Elementwise |p_true - p_hat| / p_true."""
    p_hat = np.asarray(p_hat, dtype=float)
    p_true = np.asarray(p_true, dtype=float)
    if (p_true == 0).any():
        raise ZeroTruthError("relative error undefined for zero truth entries")
    return np.abs(p_true - p_hat) / np.abs(p_true)


# --------------------------------------------------------------------------
# unknown subspace and scaling


@dataclass(frozen=True)
class UnknownSet:
    """Mask over the five parameters plus per-unknown physical bounds."""

    names: tuple[str, ...]
    bounds: np.ndarray          # (k, 2) physical
    reference: MaterialParams   # supplies the frozen (known) parameters

    def __post_init__(self):
        if len(self.names) == 0:
            raise ValueError("at least one unknown parameter is required")
        for name in self.names:
            if name not in PARAM_NAMES:
                raise ValueError(f"unknown parameter name {name!r}")
        if self.bounds.shape != (len(self.names), 2):
            raise ValueError("bounds must be one (lo, hi) pair per unknown")
        if (self.bounds[:, 0] >= self.bounds[:, 1]).any():
            raise ValueError("bounds must satisfy lo < hi")

    @classmethod
    def create(cls, names, bounds_map: dict, reference: MaterialParams) -> "UnknownSet":
        names = tuple(names)
        bounds = np.array([bounds_map[n] for n in names], dtype=float)
        return cls(names=names, bounds=bounds, reference=reference)

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(PARAM_NAMES.index(n) for n in self.names)

    @property
    def log_mask(self) -> np.ndarray:
        return np.array([PARAM_NAMES.index(n) in MODULUS_INDICES for n in self.names])

    def embed(self, x: np.ndarray) -> MaterialParams:
        """Full parameter vector: unknowns from x, knowns from the reference."""
        full = self.reference.as_array()
        full[list(self.indices)] = x
        return MaterialParams.from_array(full)

    def extract(self, p: MaterialParams) -> np.ndarray:
        return p.as_array()[list(self.indices)]

    def to_internal(self, x: np.ndarray) -> np.ndarray:
        z = np.array(x, dtype=float)
        z[self.log_mask] = np.log10(z[self.log_mask])
        return z

    def from_internal(self, z: np.ndarray) -> np.ndarray:
        x = np.array(z, dtype=float)
        x[self.log_mask] = 10.0 ** x[self.log_mask]
        return x

    @property
    def internal_bounds(self) -> np.ndarray:
        zb = self.bounds.copy()
        zb[self.log_mask] = np.log10(zb[self.log_mask])
        return zb

    def clip_internal(self, z: np.ndarray) -> np.ndarray:
        zb = self.internal_bounds
        return np.clip(z, zb[:, 0], zb[:, 1])


# --------------------------------------------------------------------------
# projected Levenberg-Marquardt


@dataclass
class LsqTrace:
    iterates: list = field(default_factory=list)   # physical coordinates
    costs: list = field(default_factory=list)
    step_norms: list = field(default_factory=list)


@dataclass
class LsqResult:
    estimate: np.ndarray        # physical coordinates of the unknowns
    cost: float
    status: str                 # converged | max-iterations | stalled
    message: str
    n_iter: int
    trace: LsqTrace

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def _residual_builder(data, unknowns: UnknownSet, fwd):
    """Residual vector and auxiliary log term as functions of f(p).

    Noiseless (delta = 0): r = f - lam, no extra term.
    Noisy: r_i = (f_i - lam_i^d) / (f_i delta) plus sum log f_i, which
    together reproduce the maximum-likelihood cost.
    """
    if isinstance(data, NoisyData) and data.delta > 0:
        lam, delta = data.values, data.delta

        def build(f):
            if (f <= 0).any():
                raise ZeroEigenvalueInModelError("model produced a non-positive eigenvalue")
            r = (f - lam) / (f * delta)
            # d r_i / d f_i = lam_i / (f_i^2 delta); d log f_i / d f_i = 1/f_i
            dr_df = lam / (f * f * delta)
            return r, float(np.log(f).sum()), dr_df, 1.0 / f

        return build
    lam = data.values if isinstance(data, NoisyData) else np.asarray(data, dtype=float)

    def build(f):
        return f - lam, 0.0, np.ones_like(f), np.zeros_like(f)

    return build


def lsq_recover(data, unknowns: UnknownSet, x0, fwd_map, cfg=None, max_iter=None) -> LsqResult:
    """Bound-constrained minimization of the misfit by projected
    Levenberg-Marquardt with a forward-difference Jacobian of f.

    `fwd_map(p: MaterialParams) -> eigenvalues` is evaluated in scaled
    coordinates internally; `x0` and the returned estimate are physical.
    """
    from .config import LsqConfig

    cfg = cfg or LsqConfig()
    if max_iter is not None:
        import dataclasses

        cfg = dataclasses.replace(cfg, max_iter=max_iter)

    x0 = np.asarray(x0, dtype=float)
    if (x0 < unknowns.bounds[:, 0]).any() or (x0 > unknowns.bounds[:, 1]).any():
        raise InadmissibleStartError(f"x0 {x0} outside bounds")
    if not check_admissible(unknowns.embed(x0)):
        raise InadmissibleStartError("x0 is not an admissible parameter set")

    build = _residual_builder(data, unknowns, fwd_map)
    zb = unknowns.internal_bounds
    z = unknowns.to_internal(x0)
    trace = LsqTrace()

    def f_of(z_):
        return fwd_map(unknowns.embed(unknowns.from_internal(z_)))

    def cost_of(f):
        r, logterm, _, _ = build(f)
        return float(r @ r + logterm)

    def try_f(z_):
        try:
            return f_of(z_)
        except InadmissibleParametersError:
            return None

    f = f_of(z)
    cost = cost_of(f)
    mu = cfg.damping0
    status, message = "max-iterations", f"no convergence in {cfg.max_iter} iterations"
    n_done = cfg.max_iter
    for it in range(cfg.max_iter):
        r, _logterm, dr_df, dlog_df = build(f)
        # forward-difference Jacobian of f in scaled coordinates; one-sided
        # steps flipped away from the nearest bound
        k = len(z)
        J = np.empty((len(f), k))
        for j in range(k):
            h = cfg.fd_rel_step * max(1.0, abs(z[j]))
            if z[j] + h > zb[j, 1]:
                h = -h
                log.debug("fd step flipped to one-sided backward for %s", unknowns.names[j])
            z_try = z.copy()
            z_try[j] = min(max(z_try[j] + h, zb[j, 0]), zb[j, 1])
            f_j = try_f(z_try)
            if f_j is None:
                z_try[j] = z[j] - h
                z_try[j] = min(max(z_try[j], zb[j, 0]), zb[j, 1])
                f_j = f_of(z_try)
            J[:, j] = (f_j - f) / (z_try[j] - z[j])

        Jr = J * dr_df[:, None]
        grad = 2.0 * Jr.T @ r + J.T @ dlog_df
        H = 2.0 * Jr.T @ Jr

        trace.iterates.append(unknowns.from_internal(z))
        trace.costs.append(cost)

        # projected gradient test: gradient components pointing outside an
        # active bound do not count
        pg = grad.copy()
        at_lo = z <= zb[:, 0] + 1e-14
        at_hi = z >= zb[:, 1] - 1e-14
        pg[at_lo & (pg > 0)] = 0.0
        pg[at_hi & (pg < 0)] = 0.0
        gscale = max(cost, 1e-30)
        if np.linalg.norm(pg) <= cfg.tol_grad * gscale:
            status, message, n_done = "converged", "projected gradient below tolerance", it
            trace.step_norms.append(0.0)
            break

        accepted = False
        for _ in range(40):
            D = np.diag(np.maximum(np.diag(H), 1e-30))
            try:
                step = np.linalg.solve(H + mu * D, -grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(H + mu * D, -grad, rcond=None)[0]
            z_new = np.clip(z + step, zb[:, 0], zb[:, 1])
            step_norm = float(np.linalg.norm(z_new - z))
            zscale = max(1.0, np.linalg.norm(z))
            if step_norm <= cfg.tol_step * zscale:
                trace.step_norms.append(step_norm)
                status, message, n_done = "converged", "step size below tolerance", it
                accepted = None
                break
            if step_norm < 1e3 * np.finfo(float).eps * zscale:
                trace.step_norms.append(step_norm)
                status, message, n_done = "stalled", "step below machine precision floor", it
                accepted = None
                break
            f_new = try_f(z_new)
            if f_new is not None:
                cost_new = cost_of(f_new)
                if cost_new < cost:
                    z, f, cost = z_new, f_new, cost_new
                    mu = max(mu * 0.3, 1e-14)
                    trace.step_norms.append(step_norm)
                    accepted = True
                    break
            mu *= 4.0
        if accepted is None:
            break
        if not accepted:
            status, message, n_done = "stalled", "no acceptable damped step", it
            break
        if trace.step_norms[-1] <= cfg.tol_step * max(1.0, np.linalg.norm(z)):
            status, message, n_done = "converged", "step size below tolerance", it + 1
            break

    trace.iterates.append(unknowns.from_internal(z))
    trace.costs.append(cost)
    return LsqResult(
        estimate=unknowns.from_internal(z),
        cost=cost,
        status=status,
        message=message,
        n_iter=min(n_done + 1, cfg.max_iter),
        trace=trace,
    )
