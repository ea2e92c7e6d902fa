"""Melnikov functions along conservative periodic orbits.

For a resonance ``m:l`` (orbit of period ``m tau`` forced with period
``delta = m tau / l``) the Melnikov function is

    M(s) = int_0^{m tau} < DH(x0(u)), g(x0(u), u - s; delta) > du,

which is the work done by the non-conservative forces along the orbit
shifted in phase by ``s``.  The integrand is ``m tau``-periodic and smooth,
so the periodic trapezoid rule converges spectrally; accuracy is estimated by
comparing against the same rule on half the nodes.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .errors import CapabilityError, PreconditionError, ResonanceSpecError
from .tolerances import DEFAULT

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class ResonanceSpec:
    """``m`` orbit cycles against ``l`` forcing cycles, ``gcd(m, l) = 1``."""

    m: int = 1
    l: int = 1
    delta: Optional[float] = None

    def __post_init__(self):
        if int(self.m) != self.m or int(self.l) != self.l or self.m < 1 or self.l < 1:
            raise ResonanceSpecError(f"m and l must be positive integers, got {self.m}, {self.l}")
        if math.gcd(int(self.m), int(self.l)) != 1:
            raise ResonanceSpecError(f"m={self.m} and l={self.l} are not relatively prime")

    @classmethod
    def for_orbit(cls, orbit, m=1, l=1):
        return cls(m, l, m * orbit.tau / l)

    def resolve(self, orbit):
        """Forcing period for ``orbit``; checks a given ``delta`` against ``m tau / l``."""
        d = self.m * orbit.tau / self.l
        if self.delta is None:
            return d
        if abs(self.delta - d) > 1e-10 * max(1.0, d):
            raise ResonanceSpecError(
                f"forcing period {self.delta!r} does not match m*tau/l = {d!r} "
                f"(m={self.m}, l={self.l}, tau={orbit.tau!r})"
            )
        return float(self.delta)


@dataclass(frozen=True)
class MelnikovZero:
    s0: float
    kind: str  # "simple" | "quadratic"
    derivative: float
    value: float
    theta: float = float("nan")


@dataclass(frozen=True)
class MelnikovCurve:
    orbit_ref: object = field(repr=False)
    spec: ResonanceSpec
    s_grid: np.ndarray
    values: np.ndarray
    zeros: tuple = ()
    error_estimate: float = 0.0
    period: float = float("nan")
    method: str = "hamiltonian"
    evaluate: Optional[Callable] = field(default=None, repr=False, compare=False)
    derivative: Optional[Callable] = field(default=None, repr=False, compare=False)

    @property
    def scale(self):
        return float(max(np.max(np.abs(self.values)), np.finfo(float).tiny))

    @property
    def theta_grid(self):
        """Phase ``theta = 2 pi s / T`` with ``T`` the orbit's minimal period."""
        T = self.period / self.spec.m
        return TWO_PI * self.s_grid / T

    def with_zeros(self, zeros):
        return MelnikovCurve(
            self.orbit_ref, self.spec, self.s_grid, self.values, tuple(zeros), self.error_estimate,
            self.period, self.method, self.evaluate, self.derivative,
        )

    @classmethod
    def from_function(cls, fun, period, grid_size=256, derivative=None, spec=None):
        """Curve from an explicit ``period``-periodic function (testing and synthetic input)."""
        s = np.arange(grid_size) * (period / grid_size)
        vals = np.asarray([fun(si) for si in s], dtype=float)
        return cls(None, spec or ResonanceSpec(), s, vals, (), 0.0, float(period), "function", fun, derivative)


# ----------------------------------------------------------------------------
# quadrature kernels
# ----------------------------------------------------------------------------


def _orbit_nodes(orbit, N):
    u = np.arange(N) * (orbit.period / N)
    return u, orbit.state(u)


def _work_matrix(sys, pert, x, u, s, delta):
    """``<DH(x(u)), g(x(u), u - s)>`` for all ``(s, u)`` pairs."""
    DH = sys.gradient(x)
    n = sys.n
    out = np.empty((s.size, u.size))
    for k in range(0, s.size, 64):
        ss = s[k : k + 64]
        Q = pert.momentum_force(x[None, :, :], u[None, :] - ss[:, None], delta)
        out[k : k + 64] = np.einsum("ui,sui->su", DH[:, n:], Q)
    return out


def _dt_matrix(sys, pert, x, u, s, delta):
    DH = sys.gradient(x)
    n = sys.n
    dg = pert.time_derivative(x[None, :, :], u[None, :] - s[:, None], delta)
    return np.einsum("ui,sui->su", DH[:, n:], dg[..., n:])


def _trapezoid(kernel, period, N, s):
    """Periodic trapezoid on ``N`` nodes with an error estimate from ``N/2``."""
    W = kernel(N, s)
    full = W.sum(axis=1) * (period / N)
    half = W[:, ::2].sum(axis=1) * (period / (N // 2))
    return full, np.abs(full - half)


def _adaptive(kernel, period, s, nodes, target, max_nodes=1 << 15):
    N = nodes
    while True:
        val, err = _trapezoid(kernel, period, N, s)
        e = float(np.max(err)) if err.size else 0.0
        if e <= target or N >= max_nodes:
            return val, e, N
        N *= 2


def _force_scale(sys, pert, x, u, delta):
    Q = pert.momentum_force(x, u, delta)
    DH = sys.gradient(x)
    return float(max(np.max(np.abs(Q)) * np.max(np.abs(DH)), 1.0))


def _prepare(orbit, pert, spec, grid_size):
    if pert is None:
        raise PreconditionError("no perturbation given")
    if grid_size < 64:
        raise PreconditionError(f"grid_size must be at least 64, got {grid_size}")
    if orbit.residual > 1e-8:
        raise PreconditionError(f"orbit residual {orbit.residual:.2e} exceeds 1e-8")
    orb = orbit if orbit.m == spec.m else orbit.with_cycles(spec.m)
    delta = spec.resolve(orbit)
    return orb, delta


def melnikov(orbit, pert, spec, grid_size=256, nodes=256, rel_tol=1e-10, find=True, tol=None):
    """Sample ``M(s)`` on a uniform grid over ``[0, m tau)``.

    Parameters
    ----------
    orbit : PeriodicOrbit
    pert : PerturbationField
    spec : ResonanceSpec
    grid_size : int
        Number of uniform ``s`` samples.
    nodes : int
        Initial number of quadrature nodes over one orbit period; doubled until
        the estimated error falls below ``rel_tol * m tau * force_scale``.
    """
    tol = DEFAULT if tol is None else tol
    orb, delta = _prepare(orbit, pert, spec, grid_size)
    sys = orb.system
    T = orb.period
    cache = {}

    def kernel(N, s):
        if N not in cache:
            cache[N] = _orbit_nodes(orb, N)
        u, x = cache[N]
        return _work_matrix(sys, pert, x, u, s, delta)

    u0, x0 = _orbit_nodes(orb, nodes)
    target = rel_tol * T * _force_scale(sys, pert, x0, u0, delta)
    s = np.arange(grid_size) * (T / grid_size)
    vals, err, N = _adaptive(kernel, T, s, nodes * spec.m, target)

    def evaluate(si):
        return float(_trapezoid(kernel, T, N, np.atleast_1d(float(si)))[0][0])

    def _deriv(si):
        return melnikov_derivative(orb, pert, spec, si, nodes=N)

    deriv = _deriv if pert.force_time_derivative is not None else None

    curve = MelnikovCurve(orb, spec, s, vals, (), err, T, "hamiltonian", evaluate, deriv)
    return find_zeros(curve, tol=tol) if find else curve


def _spectral_derivative(values, period):
    N = values.shape[-1]
    k = np.fft.rfftfreq(N, d=period / N) * TWO_PI
    spec = np.fft.rfft(values, axis=-1) * (1j * k)
    if N % 2 == 0:
        spec[..., -1] = 0.0
    return np.fft.irfft(spec, n=N, axis=-1)


def melnikov_energy_form(orbit, pert, spec, grid_size=256, nodes=256, rel_tol=1e-10, find=False, tol=None):
    """``M(s)`` as the work ``int <qdot0(u), Q(q0, qdot0, u - s)> du``.

    Velocities come from spectral differentiation of the sampled
    configuration, independently of the Hamiltonian gradient.
    """
    tol = DEFAULT if tol is None else tol
    orb, delta = _prepare(orbit, pert, spec, grid_size)
    n = orb.system.n
    T = orb.period
    cache = {}

    def kernel(N, s):
        if N not in cache:
            u, x = _orbit_nodes(orb, N)
            q = x[:, :n]
            qd = _spectral_derivative(q.T, T).T
            cache[N] = (u, q, qd)
        u, q, qd = cache[N]
        out = np.empty((s.size, u.size))
        for k in range(0, s.size, 64):
            ss = s[k : k + 64]
            Q = pert.lagrangian_force(q[None], qd[None], u[None, :] - ss[:, None], delta)
            out[k : k + 64] = np.einsum("ui,sui->su", qd, Q)
        return out

    u0, x0 = _orbit_nodes(orb, nodes)
    target = rel_tol * T * _force_scale(orb.system, pert, x0, u0, delta)
    s = np.arange(grid_size) * (T / grid_size)
    vals, err, N = _adaptive(kernel, T, s, nodes * spec.m, target)

    def evaluate(si):
        return float(_trapezoid(kernel, T, N, np.atleast_1d(float(si)))[0][0])

    curve = MelnikovCurve(orb, spec, s, vals, (), err, T, "energy", evaluate, None)
    return find_zeros(curve, tol=tol) if find else curve


def melnikov_derivative(orbit, pert, spec, s, nodes=None, allow_fd=False, rel_tol=1e-10):
    """``M'(s) = -int <DH(x0(u)), d_t g(x0(u), u - s)> du``.

    Raises :class:`CapabilityError` when the perturbation provides no
    analytic ``d_t g``, unless ``allow_fd`` selects the finite-difference
    fallback of :class:`PerturbationField`.
    """
    if pert.force_time_derivative is None and not allow_fd:
        raise CapabilityError(
            "perturbation has no time derivative; pass allow_fd=True to use central differences"
        )
    orb = orbit if orbit.m == spec.m else orbit.with_cycles(spec.m)
    delta = spec.resolve(orbit)
    T = orb.period
    sv = np.atleast_1d(np.asarray(s, dtype=float))
    cache = {}

    def kernel(N, ss):
        if N not in cache:
            cache[N] = _orbit_nodes(orb, N)
        u, x = cache[N]
        return _dt_matrix(orb.system, pert, x, u, ss, delta)

    if nodes is None:
        u0, x0 = _orbit_nodes(orb, 256)
        scale = _force_scale(orb.system, pert, x0, u0, delta) * TWO_PI / delta
        val, _, _ = _adaptive(kernel, T, sv, 256 * spec.m, rel_tol * T * scale)
    else:
        val = _trapezoid(kernel, T, int(nodes), sv)[0]
    val = -val
    return float(val[0]) if np.ndim(s) == 0 else val


def work_balance(orbit, pert, spec, s=0.0, nodes=512):
    """Single value ``M(s)`` (convenience for sweeps)."""
    orb = orbit if orbit.m == spec.m else orbit.with_cycles(spec.m)
    delta = spec.resolve(orbit)
    u, x = _orbit_nodes(orb, nodes * spec.m)
    W = _work_matrix(orb.system, pert, x, u, np.atleast_1d(float(s)), delta)
    return float(W.sum() * orb.period / u.size)


# ----------------------------------------------------------------------------
# zeros
# ----------------------------------------------------------------------------


def _fd(fun, s, h):
    return (fun(s + h) - fun(s - h)) / (2 * h)


def find_zeros(curve, tol=None):
    """Locate and classify the zeros of a sampled periodic curve.

    Critical points of ``M`` split the period into monotone pieces, each
    holding at most one sign change; these are polished with Brent's method.
    Critical points where ``|M|`` is negligible are reported as tangential
    (quadratic) zeros.
    """
    tol = DEFAULT if tol is None else tol
    T = curve.period
    s, v = curve.s_grid, curve.values
    N = s.size
    scale = curve.scale
    if not np.any(np.abs(v) > 0):
        return curve.with_zeros([])
    fun = curve.evaluate or _interpolant(s, v, T)
    h = T / N
    if curve.derivative is not None:
        dfun = curve.derivative
    else:
        dfun = lambda x: _fd(fun, x, 1e-4 * h)  # noqa: E731
    dscale = scale * TWO_PI / T
    xtol = max(1e-14 * T, 1e-15)

    dv = _spectral_derivative(v, T)
    # critical points of M
    crit = []
    for i in range(N):
        j = (i + 1) % N
        a, b = s[i], s[i] + h
        if dv[i] == 0.0:
            crit.append(a)
        elif np.sign(dv[i]) != np.sign(dv[j]) and dv[j] != 0.0:
            try:
                crit.append(brentq(dfun, a, b, xtol=xtol))
            except ValueError:
                crit.append(a if abs(dv[i]) < abs(dv[j]) else b)
    crit = np.sort(np.mod(crit, T))

    zeros = []
    if crit.size == 0:
        breaks = np.append(s, T)
    else:
        breaks = np.sort(np.concatenate([crit, s, [T]]))
    bvals = np.array([fun(b) if b not in s else v[np.searchsorted(s, b)] for b in breaks[:-1]])
    bvals = np.append(bvals, bvals[0])
    for i in range(breaks.size - 1):
        a, b = breaks[i], breaks[i + 1]
        fa, fb = bvals[i], bvals[i + 1]
        if fa == 0.0:
            zeros.append(a)
        elif fa * fb < 0:
            zeros.append(brentq(fun, a, b, xtol=xtol, rtol=4 * np.finfo(float).eps))
    # tangential zeros: critical points with |M| below the polishing tolerance
    for c in crit:
        if abs(fun(c)) <= tol.zero_polish * scale:
            zeros.append(c)
    zeros = np.sort(np.mod(zeros, T))
    if zeros.size:
        keep = np.append(True, np.diff(zeros) > 1e-9 * T)
        zeros = zeros[keep]
        if zeros.size > 1 and (zeros[0] + T - zeros[-1]) <= 1e-9 * T:
            zeros = zeros[:-1]
    Tmin = T / curve.spec.m
    out = []
    for z0 in zeros:
        d = float(dfun(z0))
        kind = "quadratic" if abs(d) <= tol.zero_type * dscale else "simple"
        out.append(MelnikovZero(float(z0), kind, d, float(fun(z0)), float(TWO_PI * z0 / Tmin)))
    return curve.with_zeros(out)


def _interpolant(s, v, T):
    """Trigonometric interpolant of uniform periodic samples."""
    N = s.size
    c = np.fft.rfft(v) / N
    k = np.arange(c.size)
    w = np.where((k == 0) | ((N % 2 == 0) & (k == N // 2)), 1.0, 2.0)

    def f(x):
        ph = np.exp(1j * TWO_PI * k * (x - s[0]) / T)
        return float(np.real(np.sum(w * c * ph)))

    return f


def fit_harmonic(curve, harmonic=1):
    """Least-squares fit ``A cos(k w s) + B sin(k w s) + C``, ``w = 2 pi / delta``.

    Returns ``(amplitude, offset, phase, max_residual)`` with
    ``amplitude = sqrt(A^2 + B^2)``.
    """
    delta = curve.period / curve.spec.l if curve.orbit_ref is not None else curve.period
    if curve.spec.delta is not None:
        delta = curve.spec.delta
    w = harmonic * TWO_PI / delta
    s = curve.s_grid
    A = np.column_stack([np.cos(w * s), np.sin(w * s), np.ones_like(s)])
    c = np.linalg.lstsq(A, curve.values, rcond=None)[0]
    res = float(np.max(np.abs(A @ c - curve.values)))
    return float(np.hypot(c[0], c[1])), float(c[2]), float(np.arctan2(-c[1], c[0])), res


# ----------------------------------------------------------------------------
# family sweeps
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class FoldEvent:
    """A tangency of the zero level set with a line of constant frequency."""

    omega_bar: float
    theta: float
    count_before: int
    count_after: int

    @property
    def tangencies(self):
        return abs(self.count_after - self.count_before) // 2

    @property
    def count_at_event(self):
        return min(self.count_before, self.count_after) + self.tangencies


@dataclass(frozen=True)
class LevelSetTable:
    """``M`` over ``(orbit, theta)`` for one damping value.

    Rows are ordered by increasing normalized frequency ``omega_bar``.
    """

    parameter: float
    energies: np.ndarray
    omega_bar: np.ndarray
    theta: np.ndarray
    values: np.ndarray  # (n_orbits, n_theta)
    dtheta: np.ndarray
    flags: list
    zero_counts: np.ndarray
    contours: list = field(default_factory=list)
    n_components: int = 0
    onset: float = float("nan")
    termination: float = float("nan")
    zeros: list = field(default_factory=list)  # per row: list of (theta, dM/dtheta)
    events: list = field(default_factory=list)

    @property
    def count_sequence(self):
        """Zero counts along the sweep with repeats collapsed."""
        return compress_counts(self.zero_counts)

    @property
    def resolved_sequence(self):
        """Count sequence with the zero count at every fold event inserted."""
        out = []
        prev = None
        for i, c in enumerate(self.zero_counts):
            if prev is not None and c != prev:
                out.append(min(prev, c) + abs(c - prev) // 2)
            if not out or out[-1] != c:
                out.append(int(c))
            prev = c
        return out


def compress_counts(counts):
    """Collapse consecutive repeats: ``[0,0,2,2,4,2,0] -> [0,2,4,2,0]``."""
    out = []
    for c in counts:
        if not out or out[-1] != c:
            out.append(int(c))
    return out


def _crossing(x, y):
    """Linear interpolation of the abscissa where ``y`` changes sign."""
    out = []
    for i in range(len(y) - 1):
        if y[i] == 0:
            out.append(x[i])
        elif y[i] * y[i + 1] < 0:
            out.append(x[i] - y[i] * (x[i + 1] - x[i]) / (y[i + 1] - y[i]))
    return out


def resonance_flags(orbits, m=1, near=2e-2):
    """Rows where the normal multipliers sit at or near ``-1`` or collide.

    Stability indices ``s = mu + 1/mu`` of the normal pairs are tracked along
    the family; a row is flagged when an index is within ``near`` of ``-2``
    or of another index, or when such a crossing happens between the row and
    a neighbour.
    """
    from .orbits import floquet_indices

    idx = []
    for o in orbits:
        s = floquet_indices(o.with_cycles(m) if m != 1 else o)
        idx.append(np.sort(s.real) if np.all(np.abs(s.imag) < 1e-9) else None)
    flags = [[] for _ in orbits]
    for i, s in enumerate(idx):
        if s is None:
            flags[i].append("krein-quartet")
            continue
        if np.any(np.abs(s + 2.0) < near) or np.any(s < -2.0):
            flags[i].append("near-period-doubling")
        if s.size > 1 and np.min(np.diff(s)) < near:
            flags[i].append("near-collision")
    for i in range(len(idx) - 1):
        a, b = idx[i], idx[i + 1]
        if a is None or b is None or a.size != b.size:
            continue
        if np.any(np.sign(a + 2.0) != np.sign(b + 2.0)):
            flags[i].append("period-doubling-crossing")
            flags[i + 1].append("period-doubling-crossing")
        if a.size > 1:
            # pair labels follow continuity, so an ordering swap marks a collision
            d0, d1 = np.diff(a), np.diff(b)
            if np.min(np.abs(d0)) < 5 * near and np.min(np.abs(d1)) < 5 * near:
                ia, ib = np.argmin(np.abs(d0)), np.argmin(np.abs(d1))
                if ia == ib and (a[ia + 1] - a[ia]) * (b[ib + 1] - b[ib]) <= 0:
                    flags[i].append("pair-collision")
                    flags[i + 1].append("pair-collision")
    return [["contraction-clause-not-applicable"] + sorted(set(f)) if f else [] for f in flags]


def family_sweep(
    family,
    pert_builder,
    parameters,
    m=1,
    l=1,
    n_theta=256,
    nodes=256,
    reference_period=None,
    flag_near=2e-2,
    tol=None,
):
    """Melnikov level sets over an orbit family.

    Parameters
    ----------
    family : OrbitFamily
    pert_builder : callable
        ``parameter -> PerturbationField``.
    parameters : sequence of float
        Damping (or other) values to sweep.
    reference_period : float, optional
        ``T(0)`` for the normalized frequency ``T(0)/T(h)``; defaults to the
        longest period in the family.

    Returns
    -------
    list of LevelSetTable
    """
    from scipy import ndimage
    from skimage import measure

    orbits = list(family.orbits)
    order = np.argsort([o.tau for o in orbits])[::-1]
    orbits = [orbits[i] for i in order]
    T0 = reference_period or orbits[0].tau
    wbar = np.array([T0 / o.tau for o in orbits])
    h = np.array([o.h for o in orbits])
    theta = np.arange(n_theta) * (TWO_PI / n_theta)
    dtheta = TWO_PI / n_theta
    flags = resonance_flags(orbits, m, flag_near)

    tables = []
    for par in parameters:
        pert = pert_builder(par)
        vals = np.empty((len(orbits), n_theta))
        for i, o in enumerate(orbits):
            spec = ResonanceSpec(m, l, m * o.tau / l)
            c = melnikov(o, pert, spec, grid_size=n_theta * m, nodes=nodes, find=False)
            if m == 1:
                vals[i] = c.values
            else:
                vals[i] = np.interp(theta * o.tau / TWO_PI, c.s_grid, c.values, period=c.period)
        dth = _spectral_derivative(vals, TWO_PI)
        counts = np.array([int(np.sum(np.sign(r) != np.sign(np.roll(r, -1)))) for r in vals])

        # connected components of {M > 0}, identifying theta = 0 and 2 pi
        lab, nlab = ndimage.label(vals > 0)
        if nlab:
            for i in range(lab.shape[0]):
                a, b = lab[i, 0], lab[i, -1]
                if a and b and a != b:
                    lab[lab == b] = a
            ncomp = len(np.unique(lab[lab > 0]))
        else:
            ncomp = 0

        # polylines on a periodically extended grid, keeping those starting in [0, 2 pi)
        tiled = np.concatenate([vals, vals, vals[:, :1]], axis=1)
        contours = []
        for cnt in measure.find_contours(tiled, 0.0):
            rows, cols = cnt[:, 0], cnt[:, 1]
            if np.min(cols) >= n_theta:
                continue
            w = np.interp(rows, np.arange(len(orbits)), wbar)
            contours.append(np.column_stack([w, np.mod(cols * dtheta, TWO_PI)]))

        crossings = _crossing(wbar, vals.max(axis=1))
        onset = crossings[0] if crossings else float("nan")
        term = crossings[-1] if len(crossings) > 1 else float("nan")

        zeros = []
        for i, r in enumerate(vals):
            zs = []
            for j in range(n_theta):
                k = (j + 1) % n_theta
                if r[j] == 0 or r[j] * r[k] < 0:
                    t0 = theta[j] + dtheta * r[j] / (r[j] - r[k])
                    d = np.interp(t0, np.append(theta, TWO_PI), np.append(dth[i], dth[i, 0]))
                    zs.append((float(t0), float(d)))
            zeros.append(zs)

        events = []
        for i in range(len(orbits) - 1):
            if counts[i] != counts[i + 1]:
                # the fold sits at the extremum of M nearest zero in the pair of rows
                j = int(np.argmin(np.abs(vals[i]) + np.abs(vals[i + 1])))
                a, b = vals[i, j], vals[i + 1, j]
                w = wbar[i] - a * (wbar[i + 1] - wbar[i]) / (b - a) if a != b else wbar[i]
                events.append(FoldEvent(float(w), float(theta[j]), int(counts[i]), int(counts[i + 1])))
        tables.append(
            LevelSetTable(
                float(par), h, wbar, theta, vals, dth, flags, counts, contours, ncomp, onset, term, zeros, events
            )
        )
    return tables
