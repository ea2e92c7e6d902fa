"""Conservative periodic orbits: Newton shooting and family continuation."""

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import PchipInterpolator

from .dynsys import apply_J
from .errors import (
    ContinuationStallError,
    ExtrapolationError,
    NoConvergenceError,
    NonNormalityWarning,
    PreconditionError,
)
from .integrate import DEFAULT_TOL, flow_with_variations
from .tolerances import DEFAULT

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class PeriodicOrbit:
    """Periodic orbit of the conservative flow through ``anchor_z``.

    ``monodromy`` is ``X0(m tau; z)``; ``monodromy_1`` the single-period map.
    """

    system: object = field(repr=False)
    anchor_z: np.ndarray
    minimal_period_tau: float
    cycles_m: int
    energy_h: float
    residual: float
    monodromy_1: np.ndarray = field(repr=False)
    phase_anchor: np.ndarray = field(repr=False, default=None)
    tol: float = DEFAULT_TOL

    @property
    def z(self):
        return self.anchor_z

    @property
    def tau(self):
        return self.minimal_period_tau

    @property
    def m(self):
        return self.cycles_m

    @property
    def h(self):
        return self.energy_h

    @property
    def omega(self):
        return TWO_PI / self.minimal_period_tau

    @property
    def period(self):
        """Total period ``m tau``."""
        return self.cycles_m * self.minimal_period_tau

    @cached_property
    def monodromy(self):
        return np.linalg.matrix_power(self.monodromy_1, self.cycles_m)

    def with_cycles(self, m):
        return PeriodicOrbit(
            self.system, self.anchor_z, self.tau, int(m), self.h, self.residual,
            self.monodromy_1, self.phase_anchor, self.tol,
        )

    @cached_property
    def variational(self):
        """Single-period variational run, kept for dense evaluation."""
        return flow_with_variations(self.system, self.anchor_z, self.tau, tol=self.tol)

    def state(self, t):
        """``x0(t; z)`` for any real ``t`` (periodic extension)."""
        t = np.mod(np.asarray(t, dtype=float), self.tau)
        return self.variational.base.dense_eval(t)

    def transition(self, t):
        """``X0(t; z)`` for ``t >= 0`` using ``X0(t) = X0(t mod tau) X0(tau)^k``."""
        t = np.asarray(t, dtype=float)
        k = np.floor(t / self.tau).astype(int)
        X = self.variational.transition(t - k * self.tau)
        if np.ndim(t) == 0:
            return X @ np.linalg.matrix_power(self.monodromy_1, int(k))
        out = np.empty_like(X)
        for kk in np.unique(k):
            sel = k == kk
            out[sel] = X[sel] @ np.linalg.matrix_power(self.monodromy_1, int(kk))
        return out

    def samples(self, N, cycles=None):
        """States at ``N`` uniform nodes over ``[0, m tau)``."""
        T = (cycles or self.cycles_m) * self.tau
        t = np.arange(N) * (T / N)
        return t, self.state(t)

    def shifted(self, s):
        """Same orbit re-anchored at ``x0(s; z)``."""
        z = self.state(s)
        X = self.transition(np.mod(s, self.tau))
        # X0(tau; x0(s)) = X0(s) X0(tau; z) X0(s)^{-1}
        P = X @ self.monodromy_1 @ np.linalg.inv(X)
        return PeriodicOrbit(self.system, z, self.tau, self.m, self.h, self.residual, P, None, self.tol)

    def amplitude(self, N=256):
        _, x = self.samples(N, cycles=1)
        return np.max(np.abs(x[:, : self.system.n]), axis=0)


def _shoot(sys, z, tau, tol):
    vt = flow_with_variations(sys, z, tau, tol=tol)
    return vt.base.final, vt.final_transition


def find_periodic_orbit(
    sys,
    guess_z,
    guess_tau,
    constraint=None,
    m=1,
    tol=DEFAULT_TOL,
    shoot_tol=None,
    max_iter=25,
    phase_anchor=None,
    arclength=None,
):
    """Newton (Gauss-Newton) shooting for a periodic orbit.

    ``constraint`` is ``("energy", h)``, ``("period", tau)`` or ``None``.  The
    phase is fixed by the hyperplane through ``phase_anchor`` (default the
    guess) orthogonal to the flow there.  ``arclength = (y_pred, tangent)``
    adds a pseudo-arclength row for continuation.
    """
    shoot_tol = DEFAULT.shooting if shoot_tol is None else shoot_tol
    z = np.array(getattr(guess_z, "x", guess_z), dtype=float)
    tau = float(guess_tau)
    if not tau > 0:
        raise PreconditionError("period guess must be positive")
    anchor = z.copy() if phase_anchor is None else np.asarray(phase_anchor, dtype=float)
    f_anchor = apply_J(sys.gradient(anchor))
    d = z.size
    scale = max(1.0, np.linalg.norm(z))
    history = []

    def residual_and_jac(z, tau):
        phi, X = _shoot(sys, z, tau, tol)
        r = [phi - z, [np.dot(z - anchor, f_anchor)]]
        rows = [np.hstack([X - np.eye(d), apply_J(sys.gradient(phi))[:, None]]), np.hstack([f_anchor, 0.0])]
        if constraint is not None:
            kind, val = constraint
            if kind == "energy":
                r.append([sys.hamiltonian(z) - val])
                rows.append(np.hstack([sys.gradient(z), 0.0]))
            elif kind == "period":
                r.append([tau - val])
                rows.append(np.hstack([np.zeros(d), 1.0]))
            else:
                raise ValueError(f"unknown constraint {kind!r}")
        if arclength is not None:
            y_pred, tan = arclength
            r.append([np.dot(np.append(z, tau) - y_pred, tan)])
            rows.append(tan)
        return np.concatenate(r), np.vstack(rows), phi, X

    r, A, phi, X = residual_and_jac(z, tau)
    for it in range(max_iter):
        closure = np.linalg.norm(phi - z)
        history.append(float(np.linalg.norm(r)))
        if closure <= shoot_tol * scale and np.linalg.norm(r[d:]) <= shoot_tol * scale:
            break
        dy = np.linalg.lstsq(A, -r, rcond=None)[0]
        lam = 1.0
        for _ in range(6):
            zn, tn = z + lam * dy[:d], tau + lam * dy[d]
            if tn <= 0:
                lam *= 0.5
                continue
            try:
                rn, An, phin, Xn = residual_and_jac(zn, tn)
            except Exception:
                lam *= 0.5
                continue
            if np.linalg.norm(rn) < np.linalg.norm(r) or lam < 0.1:
                break
            lam *= 0.5
        else:
            raise NoConvergenceError("shooting step failed", history)
        if it < 3 and np.linalg.norm(rn) >= np.linalg.norm(r):
            raise NoConvergenceError("shooting residual not decreasing (guess outside Newton basin)", history)
        z, tau, r, A, phi, X = zn, tn, rn, An, phin, Xn
    else:
        raise NoConvergenceError(f"shooting did not converge in {max_iter} iterations", history)

    if np.linalg.norm(apply_J(sys.gradient(z))) <= shoot_tol * scale:
        raise NoConvergenceError("shooting converged to an equilibrium, not a periodic orbit", history)
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[-1] < DEFAULT.rank * sv[0]:
        warnings.warn(
            f"shooting Jacobian rank-deficient beyond the trivial kernel (sigma_min/sigma_max={sv[-1] / sv[0]:.2e}); "
            "orbit may not be normal",
            NonNormalityWarning,
            stacklevel=2,
        )
    return PeriodicOrbit(
        system=sys,
        anchor_z=z,
        minimal_period_tau=tau,
        cycles_m=int(m),
        energy_h=float(sys.hamiltonian(z)),
        residual=float(np.linalg.norm(phi - z)),
        monodromy_1=X,
        phase_anchor=anchor,
        tol=tol,
    )


def orbit_from_equilibrium(sys, mode=0, amplitude=1e-3, equilibrium=None, tol=DEFAULT_TOL):
    """Seed orbit on the Lyapunov family of linear mode ``mode``."""
    x_eq = np.zeros(sys.dim) if equilibrium is None else np.asarray(equilibrium, dtype=float)
    A = sys.jacobian(x_eq)
    lam, V = np.linalg.eig(A)
    pos = np.where(lam.imag > 0)[0]
    pos = pos[np.argsort(lam.imag[pos])]
    k = pos[mode]
    w = V[:, k]
    w = w / w[np.argmax(np.abs(w))]
    guess = x_eq + amplitude * np.real(w) / np.linalg.norm(np.real(w))
    tau = TWO_PI / lam[k].imag
    h = float(sys.hamiltonian(guess))
    return find_periodic_orbit(sys, guess, tau, constraint=("energy", h), tol=tol)


# ----------------------------------------------------------------------------
# families
# ----------------------------------------------------------------------------


def floquet_indices(orbit, cluster_tol=None):
    """Stability indices ``mu + 1/mu`` of the non-trivial single-period multipliers.

    Elliptic pairs give real values in ``(-2, 2)``; values below ``-2``
    indicate a pair that has passed through ``-1``.
    """
    mu = np.linalg.eigvals(orbit.monodromy_1)
    idx = np.argsort(np.abs(mu - 1.0))
    rest = mu[idx[2:]]
    s = rest + 1.0 / rest
    s = np.sort_complex(s)
    return s[::2] if s.size else s


def bifurcation_flags(orbit, tol=1e-6):
    s = floquet_indices(orbit)
    flags = []
    if np.any((np.abs(s.imag) < tol) & (s.real < -2 - tol)):
        flags.append("period-doubling")
    if np.any((np.abs(s.imag) < tol) & (s.real > 2 + tol)):
        flags.append("real-pair")
    if np.any(np.abs(s.imag) >= tol):
        flags.append("krein-quartet")
    return flags


@dataclass
class OrbitFamily:
    system: object = field(repr=False)
    orbits: list
    parametrization: str = "energy"
    flags: list = field(default_factory=list)
    stop_reason: str = ""

    @property
    def energies(self):
        return np.array([o.h for o in self.orbits])

    @property
    def periods(self):
        return np.array([o.tau for o in self.orbits])

    @property
    def frequencies(self):
        return TWO_PI / self.periods

    def _param(self):
        return self.energies if self.parametrization == "energy" else self.periods

    @cached_property
    def period_fn(self):
        h, T = self.energies, self.periods
        order = np.argsort(h)
        return PchipInterpolator(h[order], T[order], extrapolate=False)

    def period_derivative_fn(self, h):
        return period_derivative(self, h)

    def validate(self):
        p = self._param()
        dp = np.diff(p)
        return bool(np.all(dp > 0) or np.all(dp < 0))

    def nearest(self, h):
        return self.orbits[int(np.argmin(np.abs(self.energies - h)))]

    def __len__(self):
        return len(self.orbits)


def _tangent(sys, orbit, prev_tangent=None):
    d = orbit.z.size
    f = apply_J(sys.gradient(orbit.z))
    A = np.vstack(
        [
            np.hstack([orbit.monodromy_1 - np.eye(d), f[:, None]]),
            np.hstack([f, 0.0]),
        ]
    )
    _, _, Vt = np.linalg.svd(A)
    t = Vt[-1]
    if prev_tangent is not None and np.dot(t, prev_tangent) < 0:
        t = -t
    return t


def continue_family(
    sys,
    seed,
    direction=1,
    step=0.05,
    min_step=1e-5,
    max_step=0.5,
    max_steps=200,
    stop: Optional[Callable] = None,
    stop_on_flags=("period-doubling",),
    tol=DEFAULT_TOL,
    parametrization="energy",
):
    """Pseudo-arclength continuation in ``(z, tau)`` from ``seed``.

    ``direction`` selects the sign of the energy change.  ``stop(orbit, family)``
    ends the run when it returns true; bifurcation flags listed in
    ``stop_on_flags`` also end it.
    """
    from .floquet import classify_normality

    report = classify_normality(seed.with_cycles(1))
    if not report.is_normal and not report.ambiguous:
        raise PreconditionError(
            f"seed orbit is not 1-normal ({report.cls}); several families may meet here"
        )
    orbits = [seed]
    fam = OrbitFamily(sys, orbits, parametrization)
    tan = _tangent(sys, seed)
    dh_dir = np.dot(sys.gradient(seed.z), tan[:-1])
    if np.sign(dh_dir) != np.sign(direction):
        tan = -tan
    ds = step
    easy = 0
    while len(orbits) < max_steps:
        cur = orbits[-1]
        y = np.append(cur.z, cur.tau)
        y_pred = y + ds * tan
        try:
            new = find_periodic_orbit(
                sys,
                y_pred[:-1],
                y_pred[-1],
                phase_anchor=cur.z,
                arclength=(y_pred, tan),
                tol=tol,
                max_iter=8,
            )
            mono_ok = (new.h - cur.h) * direction > 0
        except Exception:
            new, mono_ok = None, False
        if new is None or not mono_ok:
            ds *= 0.5
            easy = 0
            if ds < min_step:
                fam.stop_reason = "stall"
                raise ContinuationStallError(
                    f"continuation step fell below {min_step} at h={cur.h}", last_orbit=cur, family=fam
                )
            continue
        orbits.append(new)
        tan = _tangent(sys, new, tan)
        easy += 1
        if easy >= 4:
            ds = min(2 * ds, max_step)
            easy = 0
        flags = bifurcation_flags(new)
        if flags:
            fam.flags.append((len(orbits) - 1, flags))
            if any(f in stop_on_flags for f in flags):
                fam.stop_reason = flags[0]
                break
        if stop is not None and stop(new, fam):
            fam.stop_reason = "predicate"
            break
    else:
        fam.stop_reason = "max-steps"
    return fam


def period_derivative(family, h, dh=None, tol=None):
    """``T'(h)`` by a centred three-point difference on locally re-solved orbits."""
    hs = family.energies
    lo, hi = np.min(hs), np.max(hs)
    if not (lo <= h <= hi):
        raise ExtrapolationError(f"h={h} outside sampled range [{lo}, {hi}]")
    sys = family.system
    if dh is None:
        spacing = np.min(np.abs(np.diff(np.sort(hs)))) if hs.size > 1 else abs(h) * 1e-2
        dh = max(min(spacing * 0.25, abs(h) * 1e-3), 1e-7 * max(1.0, abs(h)))
    tol = tol or family.orbits[0].tol
    near = family.nearest(h)
    T = []
    for hh in (h - dh, h + dh):
        o = find_periodic_orbit(sys, near.z, near.tau, constraint=("energy", hh), tol=tol)
        T.append(o.tau)
    return (T[1] - T[0]) / (2 * dh)
