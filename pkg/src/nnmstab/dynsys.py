"""Conservative mechanical systems in Hamiltonian form and their perturbations.

Phase-space points are stored as flat arrays ``x = (q, p)`` of length ``2n``.
All callables in this module broadcast over leading axes: ``x`` may have
shape ``(..., 2n)`` and time ``t`` any shape broadcastable to ``x.shape[:-1]``.
"""

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import (
    DegenerateMassError,
    DomainError,
    PreconditionError,
    UnstableEquilibriumWarning,
)

FD_STEP = 1e-6
FD_TIME_STEP = 1e-7


def symplectic_form(n):
    """Return the canonical ``2n x 2n`` matrix ``[[0, I], [-I, 0]]``."""
    J = np.zeros((2 * n, 2 * n))
    J[:n, n:] = np.eye(n)
    J[n:, :n] = -np.eye(n)
    return J


def apply_J(v):
    """``J @ v`` along the last axis without forming ``J``."""
    v = np.asarray(v)
    n = v.shape[-1] // 2
    return np.concatenate([v[..., n:], -v[..., :n]], axis=-1)


@dataclass(frozen=True, eq=False)
class PhaseState:
    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        if q.ndim != 1 or q.shape != p.shape or q.size < 1:
            raise ValueError("q and p must be 1-d arrays of equal length n >= 1")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise DomainError("phase state has non-finite entries")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    def __eq__(self, other):
        if not isinstance(other, PhaseState):
            return NotImplemented
        return np.array_equal(self.q, other.q) and np.array_equal(self.p, other.p)

    __hash__ = None

    @classmethod
    def from_array(cls, x):
        x = np.asarray(x, dtype=float)
        n = x.size // 2
        return cls(x[:n], x[n:])

    @property
    def n(self):
        return self.q.size

    @property
    def x(self):
        return np.concatenate([self.q, self.p])


def _fd_gradient(fun, y, step=FD_STEP):
    """Central-difference gradient of a scalar function, broadcast over leading axes."""
    y = np.asarray(y, dtype=float)
    d = y.shape[-1]
    out = np.empty(y.shape)
    for i in range(d):
        h = step * (1.0 + np.abs(y[..., i]))
        e = np.zeros(y.shape)
        e[..., i] = h
        out[..., i] = (fun(y + e) - fun(y - e)) / (2.0 * h)
    return out


def _fd_jacobian(fun, y, step=FD_STEP):
    """Central-difference Jacobian ``d fun_i / d y_j``; shape ``(..., m, d)``."""
    y = np.asarray(y, dtype=float)
    d = y.shape[-1]
    cols = []
    for j in range(d):
        h = step * (1.0 + np.abs(y[..., j]))
        e = np.zeros(y.shape)
        e[..., j] = h
        cols.append((fun(y + e) - fun(y - e)) / (2.0 * h)[..., None])
    return np.stack(cols, axis=-1)


# ----------------------------------------------------------------------------
# mechanical ingredients
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class MechanicalIngredients:
    """Lagrangian data ``L = 1/2 <qd, M qd> + <qd, G1> + G0 - V``.

    ``mass`` is either a constant ``(n, n)`` array or a callable ``q -> M(q)``.
    Derivative closures are optional; missing ones fall back to central
    differences of the corresponding ingredient.
    """

    n: int
    mass: object
    potential: Callable
    potential_gradient: Optional[Callable] = None
    potential_hessian: Optional[Callable] = None
    gyro_linear: Optional[Callable] = None
    gyro_linear_jacobian: Optional[Callable] = None
    gyro_linear_is_linear: bool = False
    gyro_const: Optional[Callable] = None
    gyro_const_gradient: Optional[Callable] = None
    gyro_const_hessian: Optional[Callable] = None

    @property
    def constant_mass(self):
        return not callable(self.mass)

    def mass_at(self, q):
        q = np.asarray(q, dtype=float)
        if self.constant_mass:
            M = np.asarray(self.mass, dtype=float)
            return np.broadcast_to(M, q.shape[:-1] + M.shape)
        return np.asarray(self.mass(q), dtype=float)


def _check_mass(M, q):
    M = np.asarray(M)
    scale = np.max(np.abs(M))
    if not np.all(np.abs(M - np.swapaxes(M, -1, -2)) <= 1e-12 * max(scale, 1.0)):
        raise PreconditionError("mass matrix is not symmetric")
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        bad = np.asarray(q).reshape(-1, M.shape[-1])[0]
        raise DegenerateMassError(bad) from None


@dataclass(frozen=True)
class HamiltonianSystem:
    """Bundle of ``H``, ``DH`` and ``D^2 H`` for a conservative system.

    ``velocity(q, p)`` returns the Legendre inverse ``qdot = F(q, p)``.
    """

    n: int
    hamiltonian: Callable
    gradient: Callable
    hessian: Callable
    velocity: Callable
    derivative_mode: str = "analytic"
    name: str = "custom"
    params: dict = field(default_factory=dict)
    perturbation: Optional["PerturbationField"] = None

    @property
    def dim(self):
        return 2 * self.n

    @property
    def J(self):
        return symplectic_form(self.n)

    def with_perturbation(self, pert):
        return replace(self, perturbation=pert)

    def energy(self, x):
        return self.hamiltonian(np.asarray(x, dtype=float))

    def hamiltonian_field(self, x):
        return apply_J(self.gradient(x))

    def jacobian(self, x):
        """``J D^2H(x)``."""
        Hx = self.hessian(x)
        n = self.n
        return np.concatenate([Hx[..., n:, :], -Hx[..., :n, :]], axis=-2)


def build_from_mechanical(ing: MechanicalIngredients, name="mechanical", params=None):
    """Legendre-transform mechanical ingredients into a :class:`HamiltonianSystem`.

    ``H(q, p) = 1/2 <p - G1, M^{-1}(q)(p - G1)> - G0(q) + V(q)``.
    """
    n = ing.n
    zeros_n = lambda q: np.zeros(np.shape(q))
    zero_s = lambda q: np.zeros(np.shape(q)[:-1])

    G1 = ing.gyro_linear or zeros_n
    G0 = ing.gyro_const or zero_s
    V = ing.potential

    def dV(q):
        return ing.potential_gradient(q) if ing.potential_gradient else _fd_gradient(V, q)

    def d2V(q):
        if ing.potential_hessian:
            return ing.potential_hessian(q)
        return _fd_jacobian(dV, q)

    def dG0(q):
        if ing.gyro_const is None:
            return zeros_n(q)
        return ing.gyro_const_gradient(q) if ing.gyro_const_gradient else _fd_gradient(G0, q)

    def d2G0(q):
        if ing.gyro_const is None:
            return np.zeros(np.shape(q) + (n,))
        if ing.gyro_const_hessian:
            return ing.gyro_const_hessian(q)
        return _fd_jacobian(dG0, q)

    def dG1(q):
        if ing.gyro_linear is None:
            return np.zeros(np.shape(q) + (n,))
        if ing.gyro_linear_jacobian:
            return ing.gyro_linear_jacobian(q)
        return _fd_jacobian(G1, q)

    def split(x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != 2 * n:
            raise ValueError(f"expected last axis of length {2 * n}, got {x.shape}")
        return x[..., :n], x[..., n:]

    W_const = None
    if ing.constant_mass:
        _check_mass(ing.mass_at(np.zeros(n)), np.zeros(n))
        W_const = np.linalg.inv(np.asarray(ing.mass, dtype=float))

    def inv_mass(q):
        if W_const is not None:
            return W_const
        M = ing.mass_at(q)
        try:
            return np.linalg.inv(M)
        except np.linalg.LinAlgError:
            raise DegenerateMassError(np.asarray(q).reshape(-1, n)[0]) from None

    def velocity(q, p):
        W = inv_mass(q)
        return np.einsum("...ij,...j->...i", W, p - G1(q))

    def H(x):
        q, p = split(x)
        v = p - G1(q)
        W = inv_mass(q)
        return 0.5 * np.einsum("...i,...ij,...j->...", v, W, v) - G0(q) + V(q)

    def _dHdq_general(q, p):
        # q-dependent mass: d/dq of the kinetic term by differences of M
        def kin(qq):
            v = p - G1(qq)
            return 0.5 * np.einsum("...i,...ij,...j->...", v, inv_mass(qq), v)

        return _fd_gradient(kin, q) - dG0(q) + dV(q)

    def DH(x):
        q, p = split(x)
        W = inv_mass(q)
        w = np.einsum("...ij,...j->...i", W, p - G1(q))
        if ing.constant_mass:
            dq = -np.einsum("...ji,...j->...i", dG1(q), w) - dG0(q) + dV(q)
        else:
            dq = _dHdq_general(q, p)
        return np.concatenate([dq, w], axis=-1)

    analytic = ing.constant_mass and (ing.gyro_linear is None or ing.gyro_linear_is_linear)

    def D2H(x):
        x = np.asarray(x, dtype=float)
        q, p = split(x)
        W = inv_mass(q)
        if analytic:
            A = dG1(q)
            Hpp = W
            Hpq = -W @ A
            Hqq = np.swapaxes(A, -1, -2) @ W @ A - d2G0(q) + d2V(q)
            top = np.concatenate([Hqq, np.swapaxes(Hpq, -1, -2)], axis=-1)
            bot = np.concatenate([Hpq, Hpp], axis=-1)
            out = np.concatenate([top, bot], axis=-2)
        else:
            out = _fd_jacobian(DH, x)
        return 0.5 * (out + np.swapaxes(out, -1, -2))


    return HamiltonianSystem(
        n=n,
        hamiltonian=H,
        gradient=DH,
        hessian=D2H,
        velocity=velocity,
        derivative_mode="analytic" if analytic else "finite-difference",
        name=name,
        params=dict(params or {}),
    )


def from_hamiltonian(n, hamiltonian, gradient=None, hessian=None, name="custom", params=None):
    """Wrap a bare Hamiltonian; missing derivatives use central differences.

    The velocity map is ``dH/dp``.
    """
    grad = gradient or (lambda x: _fd_gradient(hamiltonian, x))
    if hessian is None:
        def hess(x):
            h = _fd_jacobian(grad, x)
            return 0.5 * (h + np.swapaxes(h, -1, -2))
    else:
        hess = hessian

    def velocity(q, p):
        return grad(np.concatenate([q, p], axis=-1))[..., n:]

    mode = "analytic" if (gradient is not None and hessian is not None) else "finite-difference"
    return HamiltonianSystem(n, hamiltonian, grad, hess, velocity, mode, name, dict(params or {}))


# ----------------------------------------------------------------------------
# perturbations
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class PerturbationField:
    """Small periodic non-conservative force ``g = (0, Q)``.

    ``lagrangian_force(q, qdot, t, delta)`` is the generalized force ``Q``.
    ``force_jacobian(x, t, delta)`` returns ``[dQ/dq, dQ/dp]`` (shape
    ``(..., n, 2n)``) in phase coordinates and ``force_time_derivative`` the
    partial ``dQ/dt``; both fall back to central differences when absent.
    """

    n: int
    lagrangian_force: Callable
    velocity: Callable
    force_jacobian: Optional[Callable] = None
    force_time_derivative: Optional[Callable] = None
    period: Optional[float] = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def momentum_force(self, x, t, delta):
        x = np.asarray(x, dtype=float)
        n = self.n
        q, p = x[..., :n], x[..., n:]
        return self.lagrangian_force(q, self.velocity(q, p), t, delta)

    def value(self, x, t, delta=None):
        delta = self._delta(delta)
        Q = self.momentum_force(x, t, delta)
        return np.concatenate([np.zeros(np.shape(Q)), Q], axis=-1)

    def state_jacobian(self, x, t, delta=None):
        delta = self._delta(delta)
        x = np.asarray(x, dtype=float)
        if self.force_jacobian is not None:
            dQ = self.force_jacobian(x, t, delta)
        else:
            dQ = _fd_jacobian(lambda y: self.momentum_force(y, t, delta), x)
        dQ = np.asarray(dQ, dtype=float)
        return np.concatenate([np.zeros(dQ.shape), dQ], axis=-2)

    def time_derivative(self, x, t, delta=None):
        delta = self._delta(delta)
        if self.force_time_derivative is not None:
            dQ = self.force_time_derivative(x, t, delta)
        else:
            h = FD_TIME_STEP * delta
            t = np.asarray(t, dtype=float)
            dQ = (self.momentum_force(x, t + h, delta) - self.momentum_force(x, t - h, delta)) / (2 * h)
        return np.concatenate([np.zeros(np.shape(dQ)), dQ], axis=-1)

    @property
    def has_time_derivative(self):
        return True

    def _delta(self, delta):
        if delta is None:
            if self.period is None:
                raise PreconditionError("forcing period delta not given and no default set")
            return self.period
        if not delta > 0:
            raise PreconditionError("forcing period delta must be positive")
        return delta

    def scaled(self, factor):
        """Perturbation multiplied by a constant (used for sign-flip checks)."""
        fq, fj, ft = self.lagrangian_force, self.force_jacobian, self.force_time_derivative
        return replace(
            self,
            lagrangian_force=lambda q, v, t, d: factor * fq(q, v, t, d),
            force_jacobian=None if fj is None else (lambda x, t, d: factor * fj(x, t, d)),
            force_time_derivative=None if ft is None else (lambda x, t, d: factor * ft(x, t, d)),
            name=f"{factor}*{self.name}",
        )


def zero_perturbation(system):
    n = system.n
    return PerturbationField(
        n=n,
        lagrangian_force=lambda q, v, t, d: np.zeros(np.shape(q)),
        velocity=system.velocity,
        force_jacobian=lambda x, t, d: np.zeros(np.shape(x)[:-1] + (n, 2 * n)),
        force_time_derivative=lambda x, t, d: np.zeros(np.shape(x)[:-1] + (n,)),
        name="zero",
    )


# ----------------------------------------------------------------------------
# operations
# ----------------------------------------------------------------------------


def vector_field(sys, x, t=None, eps=0.0, delta=None):
    """``J DH(x) + eps g(x, t; delta)``; the second term only if ``eps != 0``."""
    x = np.asarray(x, dtype=float)
    f = sys.hamiltonian_field(x)
    if eps:
        if sys.perturbation is None:
            raise PreconditionError("eps > 0 requires an attached perturbation")
        if t is None:
            raise PreconditionError("time t required for perturbed vector field")
        f = f + eps * sys.perturbation.value(x, t, delta)
    if not np.all(np.isfinite(f)):
        raise DomainError(f"non-finite vector field at x={x}")
    return f


def linearized_frequencies(sys, equilibrium=None, tol=1e-10):
    """Positive linear frequencies of ``J D^2H`` at a fixed point, ascending."""
    if equilibrium is None:
        x = np.zeros(sys.dim)
    elif isinstance(equilibrium, PhaseState):
        x = equilibrium.x
    else:
        x = np.asarray(equilibrium, dtype=float)
    A = sys.jacobian(x)
    scale = max(1.0, np.linalg.norm(A))
    if np.linalg.norm(sys.hamiltonian_field(x)) > tol * scale:
        raise PreconditionError(f"x={x} is not a fixed point of the conservative flow")
    lam = np.linalg.eigvals(A)
    off = lam[np.abs(lam.real) > 1e-8 * scale]
    if off.size:
        warnings.warn(
            f"equilibrium has eigenvalues off the imaginary axis: {off}",
            UnstableEquilibriumWarning,
            stacklevel=2,
        )
    lam = lam[np.argsort(-lam.imag)][: sys.n]
    return np.sort(np.abs(lam.imag))
