"""Time integration of the flow and of the first-variational system.

Both operations run scipy's DOP853 (explicit embedded 8(5,3) Runge-Kutta pair
with 7th-order dense output).  The variational run integrates ``x`` and the
transition matrix ``X`` as one state so that ``X`` is error-controlled and
densely available.  Scalar or matrix quadratures can be appended to the same
state so their accuracy is governed by the same step controller.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp

from .dynsys import apply_J, symplectic_form, vector_field
from .errors import IntegrationError, PreconditionError

DEFAULT_TOL = 1e-11


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    dense: Callable
    energy_drift: float
    eps: float = 0.0

    def dense_eval(self, t):
        """State at time(s) ``t``; shape ``(..., 2n)``."""
        t = np.asarray(t, dtype=float)
        return np.moveaxis(self.dense(t), 0, -1)

    @property
    def final(self):
        return self.states[-1]

    @property
    def t_final(self):
        return self.times[-1]


@dataclass(frozen=True)
class VariationalTrajectory:
    base: Trajectory
    dim: int
    _dense_full: Callable
    symplectic_defect: Optional[float]
    final_transition: np.ndarray
    quadrature: Optional[np.ndarray] = None

    def transition(self, t):
        """``X(t)``; shape ``(..., 2n, 2n)``."""
        t = np.asarray(t, dtype=float)
        d = self.dim
        y = np.moveaxis(self._dense_full(t), 0, -1)
        return y[..., d : d + d * d].reshape(t.shape + (d, d))


def _check_tol(tol):
    if not (1e-14 <= tol <= 1e-4):
        raise PreconditionError(f"tol={tol} outside [1e-14, 1e-4]")


def _solve(rhs, y0, t0, t_final, tol, t_eval=None):
    y0 = np.asarray(y0, dtype=float)
    try:
        sol = solve_ivp(
            rhs,
            (t0, t_final),
            y0,
            method="DOP853",
            rtol=max(tol, 2.3e-14),
            atol=tol,
            dense_output=True,
            t_eval=t_eval,
        )
    except (FloatingPointError, ValueError) as exc:
        raise IntegrationError(f"integration failed: {exc}", last_time=t0) from exc
    if sol.status != 0 or not np.all(np.isfinite(sol.y)):
        last = sol.t[-1] if sol.t.size else t0
        raise IntegrationError(f"integration failed: {sol.message}", last_time=float(last))
    return sol


def flow(sys, x0, t_final, tol=DEFAULT_TOL, eps=0.0, delta=None, t0=0.0):
    """Integrate ``xdot = J DH(x) + eps g(x, t; delta)`` from ``t0`` to ``t_final``."""
    _check_tol(tol)
    x0 = np.asarray(getattr(x0, "x", x0), dtype=float)

    def rhs(t, x):
        return vector_field(sys, x, t, eps, delta)

    sol = _solve(rhs, x0, t0, t_final, tol)
    states = sol.y.T
    H = sys.hamiltonian(states)
    return Trajectory(
        times=sol.t,
        states=states,
        dense=sol.sol,
        energy_drift=float(np.max(np.abs(H - H[0]))),
        eps=float(eps),
    )


def flow_with_variations(
    sys, x0, t_final, tol=DEFAULT_TOL, eps=0.0, delta=None, t0=0.0, quadrature=None, quad_shape=None
):
    """Integrate the flow jointly with ``Xdot = (J D^2H + eps d_x g) X``, ``X(t0) = I``.

    ``quadrature(t, x, X)`` (optional) returns an array of shape
    ``quad_shape`` whose time integral over ``[t0, t_final]`` is returned as
    ``VariationalTrajectory.quadrature``.
    """
    _check_tol(tol)
    x0 = np.asarray(getattr(x0, "x", x0), dtype=float)
    d = x0.size
    n = d // 2
    pert = sys.perturbation
    if eps and pert is None:
        raise PreconditionError("eps > 0 requires an attached perturbation")
    nq = 0 if quadrature is None else int(np.prod(quad_shape))

    def rhs(t, y):
        x = y[:d]
        X = y[d : d + d * d].reshape(d, d)
        Hx = sys.hessian(x)
        A = np.concatenate([Hx[n:, :], -Hx[:n, :]], axis=0)
        f = apply_J(sys.gradient(x))
        if eps:
            A = A + eps * pert.state_jacobian(x, t, delta)
            f = f + eps * pert.value(x, t, delta)
        out = [f, (A @ X).ravel()]
        if nq:
            out.append(np.asarray(quadrature(t, x, X), dtype=float).ravel())
        return np.concatenate(out)

    y0 = np.concatenate([x0, np.eye(d).ravel(), np.zeros(nq)])
    if not np.all(np.isfinite(rhs(t0, y0))):
        raise IntegrationError("non-finite vector field at initial point", last_time=t0)
    sol = _solve(rhs, y0, t0, t_final, tol)
    full = sol.y.T
    states = full[:, :d]
    H = sys.hamiltonian(states)
    base = Trajectory(
        times=sol.t,
        states=states,
        dense=lambda t, _s=sol.sol, _d=d: _s(t)[:_d],
        energy_drift=float(np.max(np.abs(H - H[0]))),
        eps=float(eps),
    )
    defect = None
    if not eps:
        J = symplectic_form(n)
        Xs = full[:, d : d + d * d].reshape(-1, d, d)
        defect = float(np.max(np.abs(np.swapaxes(Xs, -1, -2) @ J @ Xs - J)))
    quad = full[-1, d + d * d :].reshape(quad_shape) if nq else None
    return VariationalTrajectory(
        base=base,
        dim=d,
        _dense_full=sol.sol,
        symplectic_defect=defect,
        final_transition=full[-1, d : d + d * d].reshape(d, d),
        quadrature=quad,
    )


def symplectic_inverse(X):
    """``X^{-1} = J X^T J^T`` for symplectic ``X`` (broadcast over leading axes)."""
    X = np.asarray(X)
    J = symplectic_form(X.shape[-1] // 2)
    return J @ np.swapaxes(X, -1, -2) @ J.T


def pullback_integrand(vt, A):
    """Return ``t -> X^{-1}(t) A(t) X(t)`` along a variational trajectory.

    Uses the symplectic inverse on conservative runs and a dense solve
    otherwise.
    """
    symplectic = vt.base.eps == 0.0

    def kernel(t):
        X = vt.transition(t)
        At = A(t) if callable(A) else np.asarray(A)
        if symplectic:
            return symplectic_inverse(X) @ At @ X
        return np.linalg.solve(X, At @ X)

    return kernel
