"""Direct computation of forced-damped periodic orbits and their multipliers.

The perturbed orbit is a fixed point of the time-``l delta`` map of the
non-autonomous system; Newton's method uses the perturbed variational flow
for its Jacobian ``X(l delta) - I``.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynsys import PhaseState
from .errors import IntegrationError, NoOrbitFoundError, PreconditionError
from .integrate import flow_with_variations
from .tolerances import DEFAULT


@dataclass(frozen=True)
class VerifyConfig:
    epsilon: float
    forcing_period_delta: float
    cycles_l: int = 1
    seed: Optional[np.ndarray] = None
    newton_tol: Optional[float] = None
    max_iter: int = 30
    integration_tol: float = 1e-11
    persistence_radius: float = 0.25
    override_guard: bool = False

    def __post_init__(self):
        if self.epsilon < 0:
            raise PreconditionError("epsilon must be non-negative")
        if not self.forcing_period_delta > 0:
            raise PreconditionError("forcing period must be positive")
        if int(self.cycles_l) != self.cycles_l or self.cycles_l < 1:
            raise PreconditionError("cycles_l must be a positive integer")

    @property
    def period(self):
        return self.cycles_l * self.forcing_period_delta


@dataclass(frozen=True)
class PerturbedOrbit:
    initial_condition: PhaseState
    period: float
    monodromy_P: np.ndarray = field(repr=False)
    multipliers: np.ndarray
    residual: float
    epsilon: float
    iterations: int = 0
    distance_from_seed: float = 0.0

    @property
    def moduli(self):
        return np.abs(self.multipliers)


def _period_map(sys, x, cfg, tol):
    vt = flow_with_variations(
        sys, x, cfg.period, tol=tol, eps=cfg.epsilon, delta=cfg.forcing_period_delta
    )
    return vt.base.final, vt.final_transition


def find_perturbed_orbit(sys, cfg, seed=None, reference_scale=None):
    """Newton iteration for ``x(l delta; xi, eps) = xi``.

    ``sys`` must carry its perturbation.  A run that fails to converge, or
    converges farther than ``cfg.persistence_radius * reference_scale`` from
    the seed, raises :class:`NoOrbitFoundError`: no orbit persists from that
    seed.

    Parameters
    ----------
    reference_scale : float, optional
        Size of the conservative orbit the seed lies on (defaults to the
        norm of the seed).
    """
    seed = np.asarray(cfg.seed if seed is None else getattr(seed, "x", seed), dtype=float)
    if seed.ndim != 1 or seed.size != sys.dim:
        raise PreconditionError(f"seed must have {sys.dim} components")
    if cfg.epsilon and sys.perturbation is None:
        raise PreconditionError("system has no perturbation attached")
    scale = max(float(np.max(np.abs(seed))), 1.0)
    ntol = cfg.newton_tol if cfg.newton_tol is not None else DEFAULT.newton_perturbed * scale
    tol = cfg.integration_tol
    x = seed.copy()
    history = []
    try:
        xf, X = _period_map(sys, x, cfg, tol)
        F = xf - x
        r = float(np.linalg.norm(F))
        history.append(r)
        it = 0
        while r > ntol:
            if it >= cfg.max_iter:
                raise NoOrbitFoundError(
                    f"Newton did not converge in {cfg.max_iter} iterations", history, x
                )
            A = X - np.eye(sys.dim)
            dx = np.linalg.lstsq(A, -F, rcond=None)[0]
            lam = 1.0
            while True:
                xn = x + lam * dx
                xf_n, X_n = _period_map(sys, xn, cfg, tol)
                Fn = xf_n - xn
                rn = float(np.linalg.norm(Fn))
                if rn < r or lam < 1.0 / 64:
                    break
                lam *= 0.5
            x, F, X, r = xn, Fn, X_n, rn
            history.append(r)
            it += 1
            if not np.isfinite(r) or r > 1e6 * max(history[0], 1.0):
                raise NoOrbitFoundError("Newton iteration diverged", history, x)
    except IntegrationError as exc:
        raise NoOrbitFoundError(f"integration failed during Newton: {exc}", history, x) from exc
    ref = reference_scale if reference_scale is not None else max(float(np.linalg.norm(seed)), 1e-12)
    dist = float(np.linalg.norm(x - seed))
    if dist > cfg.persistence_radius * ref:
        raise NoOrbitFoundError(
            f"Newton converged to a point {dist:.3g} away from the seed "
            f"(> {cfg.persistence_radius} x orbit scale {ref:.3g}); no orbit persists from this seed",
            history,
            x,
        )
    mu = np.linalg.eigvals(X)
    return PerturbedOrbit(PhaseState.from_array(x), cfg.period, X, mu, r, cfg.epsilon, len(history) - 1, dist)


def measured_multipliers(po, deadband=None):
    """Multipliers of ``P(eps)`` with a stability label from their moduli."""
    deadband = DEFAULT.deadband_multiplier if deadband is None else deadband
    mu = po.multipliers
    mod = np.abs(mu)
    if np.all(mod < 1.0 - deadband):
        label = "stable"
    elif np.any(mod > 1.0 + deadband):
        label = "unstable"
    else:
        label = "marginal"
    return mu, mod, label


def assign_to_subspaces(mu, subspaces):
    """Group measured multipliers by the conservative cluster they continue from."""
    centres = [np.asarray(V.eig_cluster) for V in subspaces]
    groups = {i: [] for i in range(len(subspaces))}
    pool = list(mu)
    # greedy by distance, each subspace takes 2v multipliers
    cap = [V.dim_2v for V in subspaces]
    pairs = sorted(
        ((min(abs(m - c) for c in centres[i]), j, i) for j, m in enumerate(pool) for i in range(len(subspaces))),
        key=lambda t: t[0],
    )
    used = set()
    for _, j, i in pairs:
        if j in used or len(groups[i]) >= cap[i]:
            continue
        groups[i].append(pool[j])
        used.add(j)
    return {i: np.array(g) for i, g in groups.items()}


@dataclass(frozen=True)
class ScoreReport:
    epsilons: np.ndarray
    errors: np.ndarray  # (n_eps, n_quantities)
    orders: np.ndarray  # slopes between consecutive eps
    order_fit: float
    verdict_agreement: tuple


def empirical_orders(eps, err):
    eps = np.asarray(eps, dtype=float)
    err = np.asarray(err, dtype=float)
    o = np.argsort(eps)
    eps, err = eps[o], err[o]
    with np.errstate(divide="ignore", invalid="ignore"):
        slopes = np.diff(np.log(err), axis=0) / np.diff(np.log(eps))[:, None] if err.ndim == 2 else (
            np.diff(np.log(err)) / np.diff(np.log(eps))
        )
    return slopes


def score(epsilons, predicted, measured, predicted_verdicts=(), measured_labels=()):
    """Compare predicted and measured multiplier moduli over an ``eps`` list.

    ``predicted`` and ``measured`` have shape ``(n_eps, k)`` (moduli in the
    same order).  The fitted order is the least-squares slope of
    ``log|pred - meas|`` against ``log eps`` over all quantities.
    """
    eps = np.asarray(epsilons, dtype=float)
    P = np.atleast_2d(np.asarray(predicted, dtype=float))
    M = np.atleast_2d(np.asarray(measured, dtype=float))
    if P.shape[0] != eps.size:
        P, M = P.T, M.T
    err = np.abs(P - M)
    emax = err.max(axis=1)
    if eps.size >= 2 and np.all(emax > 0):
        slopes = empirical_orders(eps, emax)
        fit = float(np.polyfit(np.log(eps), np.log(emax), 1)[0])
    else:
        slopes, fit = np.array([]), float("nan")
    agree = tuple(
        (pv == "asymptotically-stable") == (ml == "stable") and (pv == "unstable") == (ml == "unstable")
        for pv, ml in zip(predicted_verdicts, measured_labels)
    )
    return ScoreReport(eps, err, np.asarray(slopes), fit, agree)
