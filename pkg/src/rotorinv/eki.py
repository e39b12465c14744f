"""Ensemble Kalman inversion with fixed unit regularization.

One update step, applied synchronously to all J members:

    p_j <- p_j + C_pG (C_GG + alpha Gamma)^-1 (y + sqrt(alpha) eta_j - G_j)

with ensemble means p_bar, G_bar, cross-covariances C_pG, C_GG built
with 1/(J-1), data y, noise covariance Gamma (diagonal here), and
perturbations eta_j ~ N(0, Gamma) drawn freshly per iteration and
member. alpha is fixed to 1.

Stopping: noiseless runs end once the relative member change and the
ensemble variance both fall below their tolerances; noisy runs follow
the discrepancy principle, ending once the whitened misfit of the
ensemble mean drops to the (realized, when known) noise norm.

Randomness is a counter-based stream keyed by (seed, iteration,
member), so results do not depend on evaluation order.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .elastic import MaterialParams, check_admissible
from .forward import InadmissibleParametersError
from .inversion import NoisyData, UnknownSet, noise_covariance_diagonal

log = logging.getLogger(__name__)

_INIT_TAG = 101
_PERT_TAG = 211


class SingularUpdateError(np.linalg.LinAlgError):
    pass


def ensemble_update(members, gvals, data, gamma_diag, alpha=1.0, eta=None):
    """One Kalman update of the ensemble; pure linear algebra.

    members: (J, d) parameter vectors
    gvals:   (J, N) forward values
    data:    (N,) observations
    gamma_diag: (N,) diagonal of the noise covariance
    eta:     (J, N) perturbations, zeros when omitted
    """
    members = np.asarray(members, dtype=float)
    gvals = np.asarray(gvals, dtype=float)
    data = np.asarray(data, dtype=float)
    J = members.shape[0]
    if J < 2:
        raise ValueError("need at least two ensemble members")
    if eta is None:
        eta = np.zeros_like(gvals)

    p_bar = members.mean(axis=0)
    g_bar = gvals.mean(axis=0)
    dp = members - p_bar
    dg = gvals - g_bar
    C_gg = dg.T @ dg / (J - 1)
    C_pg = dp.T @ dg / (J - 1)

    A = C_gg + alpha * np.diag(gamma_diag)
    innovations = data[None, :] + np.sqrt(alpha) * eta - gvals
    try:
        gain_t = np.linalg.solve(A, innovations.T)
    except np.linalg.LinAlgError:
        log.warning("singular ensemble update; falling back to pseudo-inverse")
        gain_t = np.linalg.pinv(A) @ innovations.T
    return members + (C_pg @ gain_t).T


@dataclass
class EkiTrace:
    means: list = field(default_factory=list)        # physical-coordinate means
    variances: list = field(default_factory=list)    # max_k var(p_k / p_bar_k)
    rel_changes: list = field(default_factory=list)  # ||r_n|| over members x coords
    misfits: list = field(default_factory=list)      # whitened data misfit of the mean
    n_clipped: list = field(default_factory=list)


@dataclass
class EkiResult:
    estimate: np.ndarray        # physical coordinates of the unknowns
    members: np.ndarray         # final ensemble (internal coordinates)
    status: str                 # converged | discrepancy | max-iterations
    n_iter: int
    trace: EkiTrace

    @property
    def converged(self) -> bool:
        return self.status in ("converged", "discrepancy")


@dataclass(frozen=True)
class StoppingConfig:
    tol_c: float = 1e-8
    tol_v: float = 1e-10
    max_iter: int = 200
    discrepancy_norm: float | None = None   # ||Gamma^-1/2 zeta||; None -> sqrt(N)


def _variance_stat(phys: np.ndarray) -> float:
    mean = phys.mean(axis=0)
    ratios = phys / mean[None, :]
    return float(ratios.var(axis=0, ddof=1).max())


def _rel_change(phys_new: np.ndarray, phys_old: np.ndarray) -> float:
    r = np.abs(phys_new - phys_old) / np.abs(phys_old)
    return float(np.linalg.norm(r.ravel()))


def eki_run(
    forward,
    init_members: np.ndarray,
    data: np.ndarray,
    gamma_diag: np.ndarray,
    stop: StoppingConfig,
    seed: int,
    noisy: bool,
    alpha: float = 1.0,
    to_physical=None,
    from_physical=None,
    repair=None,
    perturb: bool | None = None,
) -> EkiResult:
    """Iterate ensemble updates until a stopping rule fires.

    `forward` maps one member vector to its model output. `to_physical`
    / `from_physical` convert between the internal member coordinates
    and the physical ones used for the stopping statistics, the trace,
    and the discrepancy misfit of the ensemble mean (identity when
    omitted). `repair` post-processes proposed members (bounds
    projection); it must be deterministic.

    `perturb` controls the data perturbations eta ~ N(0, Gamma); it
    defaults to `noisy`. Noise-free data leaves Gamma as a purely
    numerical regularizer of the gain, and injecting perturbations from
    that artificial covariance would keep the ensemble jittering above
    the relative-change tolerance forever.
    """
    members = np.array(init_members, dtype=float)
    J, _d = members.shape
    n_data = len(data)
    to_physical = to_physical or (lambda z: z)
    from_physical = from_physical or (lambda x: x)
    if perturb is None:
        perturb = noisy
    sqrt_gamma = np.sqrt(gamma_diag)
    disc_target = stop.discrepancy_norm if stop.discrepancy_norm is not None else np.sqrt(n_data)

    trace = EkiTrace()
    status = "max-iterations"
    n_iter = stop.max_iter
    best = None  # (misfit, mean_phys, members)

    def mean_misfit(phys_members: np.ndarray) -> tuple[np.ndarray, float]:
        mean_phys = phys_members.mean(axis=0)
        try:
            g_mean = forward(from_physical(mean_phys))
            misfit = float(np.linalg.norm((data - g_mean) / sqrt_gamma))
        except InadmissibleParametersError:
            misfit = np.inf  # nonconvex admissible set; skip the stopping test
        return mean_phys, misfit

    phys = np.array([to_physical(m) for m in members])
    for n in range(stop.max_iter):
        mean_phys, misfit = mean_misfit(phys)
        trace.means.append(mean_phys)
        trace.variances.append(_variance_stat(phys))
        trace.misfits.append(misfit)
        if np.isfinite(misfit) and (best is None or misfit < best[0]):
            best = (misfit, mean_phys, members.copy())

        if noisy and misfit <= disc_target:
            status, n_iter = "discrepancy", n
            break

        gvals = np.array([forward(m) for m in members])
        if perturb:
            eta = np.stack(
                [
                    np.random.default_rng([seed, _PERT_TAG, n, j]).normal(0.0, sqrt_gamma)
                    for j in range(J)
                ]
            )
        else:
            eta = None
        proposed = ensemble_update(members, gvals, data, gamma_diag, alpha=alpha, eta=eta)
        if repair is not None:
            proposed, clipped = repair(members, proposed)
        else:
            clipped = 0
        trace.n_clipped.append(clipped)

        phys_new = np.array([to_physical(m) for m in proposed])
        rel_change = _rel_change(phys_new, phys)
        trace.rel_changes.append(rel_change)
        members, phys = proposed, phys_new

        if not noisy and rel_change <= stop.tol_c and _variance_stat(phys) <= stop.tol_v:
            status, n_iter = "converged", n + 1
            break

    mean_phys, misfit = mean_misfit(phys)
    trace.means.append(mean_phys)
    trace.variances.append(_variance_stat(phys))
    trace.misfits.append(misfit)
    if status == "max-iterations" and best is not None and best[0] < misfit:
        # return the best-seen mean rather than the last iterate
        mean_phys = best[1]
        members = best[2]
    return EkiResult(
        estimate=mean_phys,
        members=members,
        status=status,
        n_iter=n_iter,
        trace=trace,
    )


# --------------------------------------------------------------------------
# elastic-parameter wrapper


def draw_initial_ensemble(
    unknowns: UnknownSet,
    p_center: MaterialParams,
    J: int,
    seed: int,
    spread: float = 0.5,
    max_tries: int = 1000,
) -> np.ndarray:
    """J members uniform on (1 +/- spread) * center, clipped to bounds and
    redrawn until admissible; internal coordinates."""
    center = unknowns.extract(p_center)
    lo = np.maximum(center * (1.0 - spread), unknowns.bounds[:, 0])
    hi = np.minimum(center * (1.0 + spread), unknowns.bounds[:, 1])
    members = np.empty((J, len(center)))
    for j in range(J):
        rng = np.random.default_rng([seed, _INIT_TAG, j])
        for _ in range(max_tries):
            x = rng.uniform(lo, hi)
            if check_admissible(unknowns.embed(x)):
                members[j] = unknowns.to_internal(x)
                break
        else:
            raise RuntimeError("could not draw an admissible initial member")
    return members


def make_bounds_repair(unknowns: UnknownSet):
    """Clip proposals to bounds, then backtrack toward the previous
    (admissible) position until the joint constraints hold again.

    Both operations keep members inside the affine span of the
    ensemble, so the invariant-subspace property survives.
    """

    def repair(old: np.ndarray, proposed: np.ndarray):
        clipped = 0
        out = np.empty_like(proposed)
        for j in range(proposed.shape[0]):
            z = unknowns.clip_internal(proposed[j])
            if not np.array_equal(z, proposed[j]):
                clipped += 1
            if not check_admissible(unknowns.embed(unknowns.from_internal(z))):
                t = 0.5
                while t > 1e-6:
                    z_try = old[j] + t * (z - old[j])
                    if check_admissible(unknowns.embed(unknowns.from_internal(z_try))):
                        break
                    t *= 0.5
                else:
                    z_try = old[j]
                z = z_try
                clipped += 1
                log.debug("member %d backtracked to stay admissible", j)
            out[j] = z
        return out, clipped

    return repair


def recover_eki(
    data: NoisyData,
    unknowns: UnknownSet,
    ctx,
    variant: str,
    seed: int,
    eki_cfg=None,
    p_init_center: MaterialParams | None = None,
) -> EkiResult:
    """Ensemble Kalman recovery of the masked parameters from eigenvalue data."""
    from .config import EkiConfig
    from .forward import forward_map

    cfg = eki_cfg or EkiConfig()
    center = p_init_center or unknowns.reference
    members = draw_initial_ensemble(
        unknowns, center, cfg.ensemble_size, seed, spread=cfg.init_spread
    )
    gamma = noise_covariance_diagonal(data, noise_floor=cfg.noise_floor)

    def forward(z):
        return forward_map(unknowns.embed(unknowns.from_internal(z)), variant, ctx)

    disc = None
    if data.delta > 0 and data.zeta is not None:
        disc = float(np.linalg.norm(data.zeta * np.asarray(data.truth) / np.sqrt(gamma)))
    stop = StoppingConfig(
        tol_c=cfg.tol_c, tol_v=cfg.tol_v, max_iter=cfg.max_iter, discrepancy_norm=disc
    )
    return eki_run(
        forward,
        members,
        data.values,
        gamma,
        stop,
        seed=seed,
        noisy=data.delta > 0,
        to_physical=unknowns.from_internal,
        from_physical=unknowns.to_internal,
        repair=make_bounds_repair(unknowns),
    )
