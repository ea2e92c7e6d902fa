"""Volume contractions and stability verdicts for forced-damped orbits.

The volume contraction of the perturbation over a strongly invariant
subspace ``V`` of dimension ``2v`` is

    C_V = -1/(m tau v) * trace(S_V Psi_g R_V),
    Psi_g = int_0^{m tau} X0(t)^{-1} d_x g(x0(t), t) X0(t) dt,

and sets the first-order modulus of the perturbed multipliers attached to
``V``: ``|mu| = 1 - eps (m tau / 2) C_V``.
"""

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    EpsilonGuardError,
    EpsilonValidityWarning,
    IncompleteInputError,
    StaleSubspaceError,
)
from .floquet import decompose, full_space, min_separation, spectral_summary
from .integrate import flow_with_variations, symplectic_inverse
from .tolerances import DEFAULT


# ----------------------------------------------------------------------------
# contractions
# ----------------------------------------------------------------------------


def pulled_back_jacobian(orbit, pert, delta, tol=1e-11, eps=0.0):
    """``Psi_g`` over ``[0, m tau]`` as a quadrature appended to the variational run."""
    sys = orbit.system
    d = sys.dim

    def integrand(t, x, X):
        A = pert.state_jacobian(x, t, delta)
        if eps:
            return np.linalg.solve(X, A @ X)
        return symplectic_inverse(X) @ A @ X

    vt = flow_with_variations(sys, orbit.z, orbit.period, tol=tol, quadrature=integrand, quad_shape=(d, d))
    return vt.quadrature


def contraction_from_psi(subspace, Psi, period):
    return -float(np.trace(subspace.S @ Psi @ subspace.R)) / (period * subspace.v)


def _check_fresh(subspace, Pi, tol=1e-7):
    r = np.linalg.norm(Pi @ subspace.R - subspace.R @ subspace.B)
    bound = tol * np.linalg.norm(Pi) * max(1.0, np.linalg.norm(subspace.R))
    if r > bound:
        raise StaleSubspaceError(
            f"subspace ({subspace.kind}) is not invariant for this monodromy: residual {r:.2e} > {bound:.2e}"
        )


def volume_contraction(orbit, pert, spec, subspace, tol=1e-11, return_error=False, Psi=None):
    """Volume contraction ``C_V`` of ``pert`` over ``subspace`` along ``orbit``.

    With ``return_error`` the value is paired with the change observed when
    the integration tolerance is relaxed a hundredfold.
    """
    orb = orbit if orbit.m == spec.m else orbit.with_cycles(spec.m)
    _check_fresh(subspace, orb.monodromy)
    delta = spec.resolve(orbit)
    if Psi is None:
        Psi = pulled_back_jacobian(orb, pert, delta, tol)
    C = contraction_from_psi(subspace, Psi, orb.period)
    if not return_error:
        return C
    Psi2 = pulled_back_jacobian(orb, pert, delta, min(tol * 100, 1e-6))
    return C, abs(C - contraction_from_psi(subspace, Psi2, orb.period))


@dataclass(frozen=True)
class ContractionReport:
    kinds: tuple
    values: np.ndarray
    full_space: float
    uniform_alpha: Optional[float] = None
    errors: Optional[np.ndarray] = None
    subspaces: tuple = field(default=(), repr=False)
    Psi: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def tangent(self):
        return float(self.values[0]) if self.kinds and self.kinds[0] == "tangent" else None

    @property
    def normal(self):
        return np.array([v for k, v in zip(self.kinds, self.values) if k == "normal-pair"])

    def additivity_defect(self, n):
        """Relative defect of ``n C_full = C_T + sum C_N``."""
        lhs = n * self.full_space
        rhs = float(np.sum(self.values))
        return abs(lhs - rhs) / max(abs(lhs), abs(rhs), np.finfo(float).tiny)


def contractions(orbit, pert, spec, subspaces=None, tol=1e-11, with_errors=False):
    """Contractions over the tangent space, every normal pair and the full space."""
    orb = orbit if orbit.m == spec.m else orbit.with_cycles(spec.m)
    subspaces = decompose(orb) if subspaces is None else subspaces
    delta = spec.resolve(orbit)
    Psi = pulled_back_jacobian(orb, pert, delta, tol)
    vals, errs = [], []
    Psi2 = pulled_back_jacobian(orb, pert, delta, min(tol * 100, 1e-6)) if with_errors else None
    for V in subspaces:
        _check_fresh(V, orb.monodromy)
        c = contraction_from_psi(V, Psi, orb.period)
        vals.append(c)
        if with_errors:
            errs.append(abs(c - contraction_from_psi(V, Psi2, orb.period)))
    F = full_space(orb)
    return ContractionReport(
        kinds=tuple(V.kind for V in subspaces),
        values=np.array(vals),
        full_space=contraction_from_psi(F, Psi, orb.period),
        uniform_alpha=uniform_contraction_check(pert, orb.system, orb, delta=delta),
        errors=np.array(errs) if with_errors else None,
        subspaces=tuple(subspaces),
        Psi=Psi,
    )


def uniform_contraction_check(pert, sys, orbit=None, delta=None, samples=64, defect_tol=1e-8, rng=None):
    """Return ``alpha`` when ``d_q Q`` is symmetric and ``d_p Q = -alpha I`` everywhere sampled.

    Samples are taken along ``orbit`` when given, otherwise at random points
    near the origin.
    """
    n = sys.n
    if delta is None:
        delta = pert.period if pert.period is not None else (orbit.tau if orbit is not None else 1.0)
    if orbit is not None:
        t = np.arange(samples) * (orbit.period / samples)
        x = orbit.state(t)
    else:
        rng = np.random.default_rng(0) if rng is None else rng
        x = 0.1 * rng.standard_normal((samples, 2 * n))
        t = rng.uniform(0.0, delta, samples)
    dQ = pert.state_jacobian(x, t, delta)[..., n:, :]
    dq, dp = dQ[..., :n], dQ[..., n:]
    scale = max(1.0, float(np.max(np.abs(dQ))))
    if np.max(np.abs(dq - np.swapaxes(dq, -1, -2))) > defect_tol * scale:
        return None
    alpha = -float(np.mean(np.diagonal(dp, axis1=-2, axis2=-1)))
    if np.max(np.abs(dp + alpha * np.eye(n))) > defect_tol * scale:
        return None
    return alpha


def determinant_residual(subspace, Psi, eps, period):
    """``|det(B_V (I + eps S_V Psi R_V)) - (1 - eps m tau v C_V)|``."""
    v = subspace.v
    C = contraction_from_psi(subspace, Psi, period)
    M = subspace.B @ (np.eye(2 * v) + eps * subspace.S @ Psi @ subspace.R)
    return abs(np.linalg.det(M) - (1.0 - eps * period * v * C))


# ----------------------------------------------------------------------------
# verdicts
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class StabilityVerdict:
    verdict: str  # unstable | asymptotically-stable | inconclusive
    clauses: tuple
    reason: dict
    predicted_multipliers: dict = field(default_factory=dict)
    validity: dict = field(default_factory=dict)
    flags: tuple = ()

    @property
    def is_stable(self):
        return self.verdict == "asymptotically-stable"


def _sign(x, scale, deadband):
    if abs(x) <= deadband * scale:
        return 0
    return 1 if x > 0 else -1


def classify(orbit, zero, T_prime, contraction, summary=None, eps=None, tol=None, m_scale=None):
    """Existence/stability verdict for the perturbed orbit born at ``zero``.

    Parameters
    ----------
    orbit : PeriodicOrbit
    zero : MelnikovZero or dict with ``derivative`` (``M'(s0)``) and ``s0``
    T_prime : float
        ``T'(h)`` of the family at the orbit.
    contraction : ContractionReport
    summary : SpectralSummary, optional
    eps : float, optional
        When given, predicted multiplier moduli are attached.
    m_scale : float, optional
        Scale of the Melnikov curve used for the dead-band on ``M'``.
    """
    tol = DEFAULT if tol is None else tol
    summary = spectral_summary(orbit) if summary is None else summary
    dM = float(zero["derivative"] if isinstance(zero, dict) else zero.derivative)
    kind = zero.get("kind", "simple") if isinstance(zero, dict) else zero.kind
    P = orbit.period
    db = tol.sign_deadband
    flags = []
    clauses = []
    reason = dict(T_prime=float(T_prime), M_prime=dM)
    mu = summary.eigenvalues
    if kind != "simple":
        flags.append("saddle-node-candidate")

    # conservative instability
    if np.any(np.abs(mu) > 1.0 + tol.cluster):
        clauses.append("conservative-instability")
        reason["max_conservative_modulus"] = float(np.max(np.abs(mu)))
        return StabilityVerdict("unstable", tuple(clauses), reason, {}, {}, tuple(flags))

    CT = contraction.tangent
    CN = contraction.normal
    n = orbit.system.n
    reason.update(C_T=CT, C_N=[float(c) for c in CN])
    if CT is None:
        raise IncompleteInputError("tangent-space contraction missing")
    c_scale = max(float(np.max(np.abs(contraction.values))), 1.0 / P)
    s_T = _sign(T_prime, max(abs(T_prime), P), 0.0) if T_prime else 0
    ms = m_scale if m_scale is not None else max(abs(dM), 1.0)
    s_M = _sign(dM, ms, db)
    sTM = s_T * s_M
    s_CT = _sign(CT, c_scale, db)
    if sTM < 0:
        clauses.append("tangent-saddle: T'M'<0")
    elif sTM > 0 and s_CT < 0:
        clauses.append("tangent-expansion: T'M'>0 and C_T<0")
    for k, c in enumerate(CN):
        if _sign(c, c_scale, db) < 0:
            clauses.append(f"normal-expansion: C_N{k + 1}<0")
    spectral_flags = []
    if "minus-one" in summary.flags:
        spectral_flags.append("resonant-normal-spectrum: multiplier at -1")
    if "repeated-pairs" in summary.flags:
        spectral_flags.append("resonant-normal-spectrum: repeated normal pairs")

    validity = {}
    if eps is not None:
        preds, validity = predict_multipliers(orbit, contraction, eps, T_prime, dM, subspaces=contraction.subspaces)
    else:
        preds = {}

    if clauses:
        return StabilityVerdict("unstable", tuple(clauses), reason, preds, validity, tuple(flags + spectral_flags))

    missing = []
    if sTM == 0:
        missing.append("sign of T'M' undecided (dead-band)")
    if s_CT == 0:
        missing.append("C_T within dead-band")
    if len(CN) < n - 1:
        raise IncompleteInputError(f"need {n - 1} normal contractions, got {len(CN)}")
    for k, c in enumerate(CN):
        if _sign(c, c_scale, db) == 0:
            missing.append(f"C_N{k + 1}=0: Neimark-Sacker/torus candidate")
            flags.append("neimark-sacker-candidate")
    missing += spectral_flags
    if kind != "simple":
        missing.append("zero is not simple")
    if missing:
        reason["missing"] = missing
        return StabilityVerdict("inconclusive", (), reason, preds, validity, tuple(flags + spectral_flags))
    clauses = ["contraction: T'M'>0", "contraction: C_T>0"] + [f"contraction: C_N{k + 1}>0" for k in range(len(CN))]
    return StabilityVerdict("asymptotically-stable", tuple(clauses), reason, preds, validity, tuple(flags))


def epsilon_guard(subspaces, eps, tol=None, override=False):
    """Check ``eps`` against the separation of the multiplier clusters."""
    tol = DEFAULT if tol is None else tol
    sep = min_separation(subspaces)
    status = "ok"
    if eps >= tol.eps_refuse_fraction * sep:
        status = "refused"
        if not override:
            raise EpsilonGuardError(
                f"eps={eps} is at least {tol.eps_refuse_fraction} x min separation {sep:.3g}; "
                "first-order predictions are meaningless here. Reduce eps or pass override=True."
            )
    elif eps >= tol.eps_warn_fraction * sep:
        status = "warn"
        warnings.warn(
            f"eps={eps} is not small against min separation {sep:.3g}", EpsilonValidityWarning, stacklevel=3
        )
    return dict(separation=float(sep), status=status, eps=float(eps))


def tangent_pair(eps, period, CT, aM):
    """First-order tangent multipliers; ``aM = m T'(h) M'(s0)``."""
    base = 1.0 + eps * (-period * CT - aM) / 2.0
    disc = -eps * aM
    if disc >= 0:
        r = np.sqrt(disc)
        return np.array([base + r, base - r], dtype=complex)
    r = np.sqrt(-disc)
    return np.array([base + 1j * r, base - 1j * r])


def predict_multipliers(orbit, contraction, eps, T_prime=None, M_prime=None, subspaces=None, tol=None, override=False):
    """First-order multiplier moduli per subspace.

    Complex pairs get ``1 - eps (m tau / 2) C_V``.  For the tangent pair the
    leading real splitting ``+-sqrt(-eps m T' M')`` is included when the pair
    is real (``T'M' < 0``).

    Returns
    -------
    dict
        ``kind_index -> array of predicted moduli``.
    dict
        Validity information (separation, guard status).
    """
    subspaces = contraction.subspaces if subspaces is None else subspaces
    P = orbit.period
    if eps == 0:
        return {f"{k}{i}": np.ones(2) for i, k in enumerate(contraction.kinds)}, dict(
            separation=float(min_separation(subspaces)) if subspaces else np.inf, status="ok", eps=0.0
        )
    validity = epsilon_guard(subspaces, eps, tol, override) if subspaces else dict(status="unchecked")
    out = {}
    for i, (k, C) in enumerate(zip(contraction.kinds, contraction.values)):
        if k == "tangent" and T_prime is not None and M_prime is not None:
            aM = orbit.m * T_prime * M_prime
            if aM < 0:
                out[f"{k}{i}"] = np.abs(tangent_pair(eps, P, C, aM))
                continue
        out[f"{k}{i}"] = np.full(2, 1.0 - eps * (P / 2.0) * C)
    return out, validity
