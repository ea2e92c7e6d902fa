"""Spectral analysis of monodromy matrices.

Covers normality of the orbit, spectral stability, and the splitting of
phase space into strongly invariant subspaces with their symplectic left
inverses ``S = (R^T J R)^{-1} R^T J``.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .dynsys import apply_J, symplectic_form
from .errors import (
    AmbiguousNormalityWarning,
    ClusteringWarning,
    NonGenericSpectrumError,
    PreconditionError,
)
from .tolerances import DEFAULT


@dataclass(frozen=True)
class StronglyInvariantSubspace:
    basis_R: np.ndarray
    left_inverse_S: np.ndarray
    block_B: np.ndarray
    eig_cluster: np.ndarray
    kind: str = "custom"

    @property
    def dim_2v(self):
        return self.basis_R.shape[1]

    @property
    def v(self):
        return self.dim_2v // 2

    # short aliases
    R = property(lambda self: self.basis_R)
    S = property(lambda self: self.left_inverse_S)
    B = property(lambda self: self.block_B)

    def invariance_residual(self, Pi):
        return float(np.linalg.norm(Pi @ self.R - self.R @ self.B) / max(np.linalg.norm(Pi), 1.0))


@dataclass(frozen=True)
class NormalityReport:
    cls: str
    geometric_multiplicity_of_one: int
    range_test: bool | None
    singular_values: np.ndarray = field(repr=False)
    ambiguous: bool = False
    note: str = ""

    @property
    def is_normal(self):
        return self.cls.startswith("m-normal")


@dataclass(frozen=True)
class SpectralSummary:
    eigenvalues: np.ndarray
    on_unit_circle: bool
    trivial_pair_ok: bool
    trivial_pair: np.ndarray
    normal_pairs: list
    separations: np.ndarray
    reciprocal_defect: float
    determinant: float
    flags: tuple = ()


def symplectic_left_inverse(R):
    """``(R^T J R)^{-1} R^T J``."""
    R = np.asarray(R, dtype=float)
    J = symplectic_form(R.shape[0] // 2)
    G = R.T @ J @ R
    return np.linalg.solve(G, R.T @ J)


def make_subspace(Pi, R, kind="custom"):
    """Wrap a basis ``R`` of a ``Pi``-invariant subspace with its ``S`` and ``B``."""
    R = np.asarray(R, dtype=float)
    S = symplectic_left_inverse(R)
    B = S @ Pi @ R
    return StronglyInvariantSubspace(R, S, B, np.linalg.eigvals(B), kind)


def _reciprocal_defect(mu):
    # every eigenvalue must have a partner at 1/mu
    return float(max(np.min(np.abs(mu - 1.0 / m)) for m in mu))


def _trivial_indices(mu, cluster_tol):
    d = np.abs(mu - 1.0)
    order = np.argsort(d)
    return order[:2], d[order]


def spectral_summary(orbit_or_matrix, cluster_tol=None, m=None):
    """Floquet multipliers of ``Pi`` with clustering and (A.2)/(A.3) flags."""
    cluster_tol = DEFAULT.cluster if cluster_tol is None else cluster_tol
    Pi = _monodromy(orbit_or_matrix, m)
    mu = np.linalg.eigvals(Pi)
    triv, dsorted = _trivial_indices(mu, cluster_tol)
    n_near_one = int(np.sum(dsorted < cluster_tol))
    on_circle = bool(np.all(np.abs(np.abs(mu) - 1.0) < cluster_tol))
    rest = np.delete(mu, triv)
    pairs = _pair_up(rest)
    seps = []
    for i in range(len(pairs)):
        for j in range(i + 1, len(pairs)):
            seps.append(np.min(np.abs(np.subtract.outer(pairs[i], pairs[j]))))
    flags = []
    if n_near_one > 2:
        flags.append("extra-unit-multipliers")
    if np.any(np.abs(rest + 1.0) < cluster_tol):
        flags.append("minus-one")
    if seps and min(seps) < cluster_tol:
        flags.append("repeated-pairs")
    if flags:
        warnings.warn(f"degenerate multiplier clustering: {flags}", ClusteringWarning, stacklevel=2)
    trivial_ok = n_near_one == 2
    if trivial_ok and hasattr(orbit_or_matrix, "anchor_z"):
        trivial_ok = classify_normality(orbit_or_matrix, m, warn=False).geometric_multiplicity_of_one == 1
    return SpectralSummary(
        eigenvalues=mu,
        on_unit_circle=on_circle,
        trivial_pair_ok=bool(trivial_ok),
        trivial_pair=mu[triv],
        normal_pairs=pairs,
        separations=np.array(seps),
        reciprocal_defect=_reciprocal_defect(mu),
        determinant=float(np.real(np.prod(mu))),
        flags=tuple(flags),
    )


def _pair_up(mu):
    """Group non-trivial multipliers into conjugate/reciprocal pairs."""
    mu = list(mu)
    pairs = []
    while mu:
        a = mu.pop(0)
        if abs(a.imag) > 1e-9 * max(1.0, abs(a)):
            partner = np.conj(a)  # elliptic (or quartet half)
        else:
            partner = 1.0 / a if a != 0 else a
        k = int(np.argmin([abs(b - partner) for b in mu])) if mu else None
        if k is None:
            pairs.append(np.array([a]))
        else:
            pairs.append(np.array([a, mu.pop(k)]))
    return pairs


def _monodromy(orbit_or_matrix, m=None):
    if hasattr(orbit_or_matrix, "monodromy"):
        orb = orbit_or_matrix if m is None else orbit_or_matrix.with_cycles(m)
        return orb.monodromy
    return np.asarray(orbit_or_matrix, dtype=float)


def classify_normality(orbit, m=None, rank_tol=None, warn=True):
    """Classify the orbit as m-normal (case i / ii) or non-normal."""
    rank_tol = DEFAULT.rank if rank_tol is None else rank_tol
    orb = orbit if m is None else orbit.with_cycles(m)
    Pi = orb.monodromy
    d = Pi.shape[0]
    A = Pi - np.eye(d)
    sv = np.linalg.svd(A, compute_uv=False)
    cutoff = rank_tol * max(sv[0], np.linalg.norm(Pi, 2))
    gm = int(np.sum(sv < cutoff))
    ambiguous = bool(np.any((sv >= cutoff) & (sv < 10 * cutoff)) or np.any((sv < cutoff) & (sv > 0.1 * cutoff)))
    f = apply_J(orb.system.gradient(orb.z))
    note = ""
    range_test = None
    if gm == 1:
        cls = "m-normal-case-i"
    elif gm == 2:
        if gm == d:
            # Pi - I vanishes: its range is numerically indistinguishable from noise
            cls = "non-normal"
            ambiguous = True
            note = "Pi - I vanishes to tolerance; range test degenerate (isochronous case)"
        else:
            U, s, Vt = np.linalg.svd(A)
            r = int(np.sum(s >= cutoff))
            proj = U[:, :r] @ (U[:, :r].T @ f)
            in_range = np.linalg.norm(f - proj) <= 1e-6 * np.linalg.norm(f)
            range_test = bool(in_range)
            cls = "non-normal" if in_range else "m-normal-case-ii"
    else:
        cls = "non-normal"
    if ambiguous and warn:
        warnings.warn(
            f"borderline rank decision for Pi - I (singular values {sv}, cutoff {cutoff:.2e}) {note}",
            AmbiguousNormalityWarning,
            stacklevel=2,
        )
    return NormalityReport(cls, gm, range_test, sv, ambiguous, note)


def _trivial_subspace(Pi, cluster_tol):
    """Orthonormal basis of the generalized eigenspace of the +1 cluster."""
    mu = np.linalg.eigvals(Pi)
    d = np.sort(np.abs(mu - 1.0))
    if d[1] > cluster_tol:
        raise PreconditionError(f"no +1 multiplier pair within {cluster_tol} (distances {d[:2]})")
    thr = 0.5 * (d[1] + d[2]) if d.size > 2 else 2 * d[1] + cluster_tol
    _, Z, sdim = la.schur(Pi, output="real", sort=lambda re, im: abs(complex(re, im) - 1.0) < thr)
    if sdim != 2:
        raise PreconditionError(f"+1 cluster has dimension {sdim}, expected 2")
    return Z[:, :2]


def tangent_basis(orbit, cluster_tol=None):
    """Tangent-space subspace ``R_T = [J DH(z), b(z)]``.

    ``b`` lies in the +1 generalized eigenspace, is orthogonal to the flow
    and satisfies ``<b, DH(z)> = 1``.  Then ``B_T = [[1, -m T'(h)], [0, 1]]``.
    """
    cluster_tol = DEFAULT.cluster if cluster_tol is None else cluster_tol
    sys = orbit.system
    DH = sys.gradient(orbit.z)
    if np.linalg.norm(DH) == 0.0:
        raise PreconditionError("DH(z) = 0: anchor is an equilibrium")
    f = apply_J(DH)
    Pi = orbit.monodromy
    Q = _trivial_subspace(Pi, cluster_tol)
    c = np.linalg.lstsq(np.vstack([f @ Q, DH @ Q]), np.array([0.0, 1.0]), rcond=None)[0]
    b = Q @ c
    b = b - (b @ f) / (f @ f) * f
    b = b / (b @ DH)
    R = np.column_stack([f, b])
    return make_subspace(Pi, R, "tangent")


def _normalize_eigvec(w):
    w = w / np.linalg.norm(w)
    k = int(np.argmax(np.abs(w) > 1e-8 * np.max(np.abs(w))))
    return w * (np.conj(w[k]) / abs(w[k]))


def decompose(orbit, cluster_tol=None):
    """Tangent subspace plus one subspace per normal multiplier pair.

    Raises :class:`NonGenericSpectrumError` when the normal spectrum contains
    ``-1`` or repeated pairs (period doubling / Krein collisions).
    """
    cluster_tol = DEFAULT.cluster if cluster_tol is None else cluster_tol
    Pi = orbit.monodromy
    T = tangent_basis(orbit, cluster_tol)
    mu, W = np.linalg.eig(Pi)
    order = np.argsort(np.abs(mu - 1.0))
    rest = order[2:]
    if np.any(np.abs(mu[rest] + 1.0) < cluster_tol):
        raise NonGenericSpectrumError("multiplier at -1: possible period doubling (non-generic, not handled)")
    used = set()
    subspaces = [T]
    for i in rest:
        if i in used:
            continue
        lam = mu[i]
        if abs(lam.imag) > 1e-9:
            j = [k for k in rest if k != i and k not in used and abs(mu[k] - np.conj(lam)) < 1e-6]
            if not j:
                raise NonGenericSpectrumError(f"no conjugate partner for multiplier {lam}")
            j = j[0]
            idx = [i, j]
            w = _normalize_eigvec(W[:, i])
            R = np.column_stack([w.real, w.imag])
        else:
            j = [k for k in rest if k != i and k not in used and abs(mu[k] * lam - 1.0) < 1e-6]
            if not j:
                raise NonGenericSpectrumError(f"no reciprocal partner for multiplier {lam}")
            j = j[0]
            idx = [i, j]
            R = np.column_stack([_normalize_eigvec(W[:, i]).real, _normalize_eigvec(W[:, j]).real])
        used.update(idx)
        subspaces.append(make_subspace(Pi, R, "normal-pair"))
    for a in range(1, len(subspaces)):
        for b in range(a + 1, len(subspaces)):
            ea, eb = subspaces[a].eig_cluster, subspaces[b].eig_cluster
            if np.min(np.abs(np.subtract.outer(ea, eb))) < cluster_tol:
                raise NonGenericSpectrumError("repeated normal multiplier pairs: possible Krein collision")
    Rfull = np.hstack([s.R for s in subspaces])
    Sfull = np.vstack([s.S for s in subspaces])
    err = np.linalg.norm(Sfull @ Rfull - np.eye(Pi.shape[0]))
    if err > 1e-6:
        raise NonGenericSpectrumError(f"stacked symplectic left inverses do not invert R (error {err:.2e})")
    return subspaces


def full_space(orbit):
    Pi = orbit.monodromy
    return make_subspace(Pi, np.eye(Pi.shape[0]), "full")


def separation(A, B):
    """``min_{||Y||_F = 1} ||Y A - B Y||_F`` via the Kronecker form of the Sylvester map."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    v, w = A.shape[0], B.shape[0]
    K = np.kron(A.T, np.eye(w)) - np.kron(np.eye(v), B)
    return float(np.linalg.svd(K, compute_uv=False)[-1])


def min_separation(subspaces):
    seps = [
        separation(subspaces[i].B, subspaces[j].B)
        for i in range(len(subspaces))
        for j in range(i + 1, len(subspaces))
    ]
    return min(seps) if seps else np.inf


# ----------------------------------------------------------------------------
# structural checks
# ----------------------------------------------------------------------------


def j_orthogonality(V, W):
    """``||R_V^T J R_W|| / (||R_V|| ||R_W||)``; zero for distinct subspaces."""
    J = symplectic_form(V.R.shape[0] // 2)
    return float(np.linalg.norm(V.R.T @ J @ W.R) / (np.linalg.norm(V.R) * np.linalg.norm(W.R)))


def gram_condition(V):
    J = symplectic_form(V.R.shape[0] // 2)
    return float(np.linalg.cond(V.R.T @ J @ V.R))


def trace_form(V, A):
    """``trace(S_V A R_V)``."""
    return float(np.trace(V.S @ A @ V.R))


def left_invariance_residual(V, Pi):
    return float(np.linalg.norm(V.S @ Pi - V.B @ V.S))
