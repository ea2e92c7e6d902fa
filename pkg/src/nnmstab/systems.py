"""Built-in example systems and perturbations.

``gyroscopic`` is a point mass on four springs in a frame rotating at a
constant rate; ``chain3`` is three unit masses coupled by linear springs with
a cubic/quadratic spring on the first mass, driven parametrically through the
third coordinate by a truncated square wave.
"""

import numpy as np

from .dynsys import (
    MechanicalIngredients,
    PerturbationField,
    build_from_mechanical,
    from_hamiltonian,
)
from .errors import DomainError

TWO_PI = 2.0 * np.pi

GYRO_DEFAULTS = dict(Omega=0.942, l0=1.0, k=(1.0, 4.08, 1.37, 2.51), m_b=1.0)
CHAIN3_DEFAULTS = dict(k=1.0, a=-0.5, b=1.0)


# ----------------------------------------------------------------------------
# linear oscillator / Duffing / polynomial
# ----------------------------------------------------------------------------


def linear_oscillator(frequencies=(1.0,)):
    w2 = np.asarray(frequencies, dtype=float) ** 2
    n = w2.size
    ing = MechanicalIngredients(
        n=n,
        mass=np.eye(n),
        potential=lambda q: 0.5 * np.sum(w2 * q**2, axis=-1),
        potential_gradient=lambda q: w2 * q,
        potential_hessian=lambda q: np.broadcast_to(np.diag(w2), np.shape(q) + (n,)),
    )
    return build_from_mechanical(ing, name="linear", params={"frequencies": list(map(float, frequencies))})


def duffing(k=1.0, k3=1.0):
    """One-DOF oscillator with ``V = k q^2 / 2 + k3 q^4 / 4``."""
    ing = MechanicalIngredients(
        n=1,
        mass=np.eye(1),
        potential=lambda q: 0.5 * k * q[..., 0] ** 2 + 0.25 * k3 * q[..., 0] ** 4,
        potential_gradient=lambda q: k * q + k3 * q**3,
        potential_hessian=lambda q: (k + 3 * k3 * q**2)[..., None],
    )
    return build_from_mechanical(ing, name="duffing", params={"k": k, "k3": k3})


def polynomial(n, terms, mass=None):
    """Unit-mass (or constant-mass) system with a polynomial potential.

    ``terms`` is a list of ``(coeff, powers)`` where ``powers`` has length ``n``.
    """
    terms = [(float(c), np.asarray(pw, dtype=int)) for c, pw in terms]
    for _, pw in terms:
        if pw.shape != (n,) or np.any(pw < 0):
            raise ValueError("each term needs n non-negative integer powers")

    def mono(q, pw):
        return np.prod(q ** pw, axis=-1)

    def V(q):
        return sum(c * mono(q, pw) for c, pw in terms) if terms else np.zeros(np.shape(q)[:-1])

    def dV(q):
        out = np.zeros(np.shape(q))
        for c, pw in terms:
            for i in range(n):
                if pw[i] == 0:
                    continue
                d = pw.copy()
                d[i] -= 1
                out[..., i] += c * pw[i] * mono(q, d)
        return out

    def d2V(q):
        out = np.zeros(np.shape(q) + (n,))
        for c, pw in terms:
            for i in range(n):
                for j in range(n):
                    d = pw.copy()
                    f = d[i]
                    d[i] -= 1
                    f *= d[j]
                    d[j] -= 1
                    if f == 0:
                        continue
                    out[..., i, j] += c * f * mono(q, d)
        return out

    ing = MechanicalIngredients(
        n=n,
        mass=np.eye(n) if mass is None else np.asarray(mass, dtype=float),
        potential=V,
        potential_gradient=dV,
        potential_hessian=d2V,
    )
    return build_from_mechanical(
        ing, name="polynomial", params={"n": n, "terms": [[c, pw.tolist()] for c, pw in terms]}
    )


# ----------------------------------------------------------------------------
# gyroscopic four-spring system
# ----------------------------------------------------------------------------


def _spring_anchors(l0):
    # l_{1,3} = sqrt((l0 +- x)^2 + y^2), l_{2,4} = sqrt(x^2 + (l0 +- y)^2)
    return np.array([[-l0, 0.0], [0.0, -l0], [l0, 0.0], [0.0, l0]])


def _spring_geometry(q, l0):
    """Per-spring lengths and unit vectors; shapes ``(..., 4)`` and ``(..., 4, 2)``."""
    d = q[..., None, :] - _spring_anchors(l0)
    r = np.sqrt(np.sum(d**2, axis=-1))
    if np.any(r <= 1e-12 * l0):
        raise DomainError("spring length vanishes: outside working domain")
    return r, d / r[..., None]


def spring_potential(k, l0):
    k = np.asarray(k, dtype=float)

    def V(q):
        r, _ = _spring_geometry(q, l0)
        return 0.5 * np.sum(k * (r - l0) ** 2, axis=-1)

    def dV(q):
        r, u = _spring_geometry(q, l0)
        return np.einsum("...j,...ja->...a", k * (r - l0), u)

    def d2V(q):
        r, u = _spring_geometry(q, l0)
        uu = u[..., :, None] * u[..., None, :]
        c = (r - l0) / r
        return np.einsum("...j,...jab->...ab", k, uu + c[..., None, None] * (np.eye(2) - uu))

    def C(q):
        """Stiffness-weighted projector sum, the damping matrix of the spring dashpots."""
        _, u = _spring_geometry(q, l0)
        return np.einsum("j,...ja,...jb->...ab", k, u, u)

    def dC_dot(q, v):
        """``d/dq [C(q) v]`` at fixed ``v``; shape ``(..., 2, 2)``."""
        r, u = _spring_geometry(q, l0)
        P = np.eye(2) - u[..., :, None] * u[..., None, :]
        uv = np.einsum("...ja,...a->...j", u, v)
        # d(u u^T v)/dq = (u.v) P / r + u (v^T P) / r
        t1 = (k * uv / r)[..., None, None] * P
        vP = np.einsum("...a,...jab->...jb", v, P)
        t2 = (k / r)[..., None, None] * (u[..., :, None] * vP[..., None, :])
        return np.sum(t1 + t2, axis=-3)

    return V, dV, d2V, C, dC_dot


def gyroscopic(Omega=0.942, l0=1.0, k=(1.0, 4.08, 1.37, 2.51), m_b=1.0):
    """Rotating point mass on four springs, ``p = m_b qdot + G q``."""
    V, dV, d2V, _, _ = spring_potential(k, l0)
    G = m_b * np.array([[0.0, -Omega], [Omega, 0.0]])
    ing = MechanicalIngredients(
        n=2,
        mass=m_b * np.eye(2),
        potential=V,
        potential_gradient=dV,
        potential_hessian=d2V,
        gyro_linear=lambda q: np.einsum("ij,...j->...i", G, q),
        gyro_linear_jacobian=lambda q: np.broadcast_to(G, np.shape(q)[:-1] + (2, 2)),
        gyro_linear_is_linear=True,
        gyro_const=lambda q: 0.5 * m_b * Omega**2 * np.sum(q**2, axis=-1),
        gyro_const_gradient=lambda q: m_b * Omega**2 * q,
        gyro_const_hessian=lambda q: np.broadcast_to(m_b * Omega**2 * np.eye(2), np.shape(q) + (2,)),
    )
    params = dict(Omega=float(Omega), l0=float(l0), k=[float(v) for v in k], m_b=float(m_b))
    return build_from_mechanical(ing, name="gyroscopic", params=params)


def gyroscopic_perturbation(system, alpha=0.0, beta=0.0, e=1.0):
    """Uniform damping ``-alpha p``, dashpot damping ``-beta C(q) qdot`` and a
    rotating force of amplitude ``e`` and period ``delta``."""
    pr = system.params
    _, _, _, C, dC_dot = spring_potential(pr["k"], pr["l0"])
    m_b, Om = pr["m_b"], pr["Omega"]
    G = m_b * np.array([[0.0, -Om], [Om, 0.0]])

    def forcing(t, delta):
        w = TWO_PI / delta
        t = np.asarray(t, dtype=float)
        return e * np.stack([np.cos(w * t), -np.sin(w * t)], axis=-1)

    def Q(q, qd, t, delta):
        p = m_b * qd + np.einsum("ij,...j->...i", G, q)
        out = forcing(t, delta) - alpha * p
        if beta:
            out = out - beta * np.einsum("...ij,...j->...i", C(q), qd)
        return np.broadcast_to(out, np.broadcast_shapes(np.shape(out), np.shape(q)))

    def dQ(x, t, delta):
        q, p = x[..., :2], x[..., 2:]
        qd = (p - np.einsum("ij,...j->...i", G, q)) / m_b
        dq = np.zeros(np.shape(q) + (2,))
        dp = np.broadcast_to(-alpha * np.eye(2), np.shape(q) + (2,)).copy()
        if beta:
            Cq = C(q)
            # Q_beta = -beta C(q) (p - G q) / m_b
            dq = -beta * (dC_dot(q, qd) - Cq @ G / m_b)
            dp = dp - beta * Cq / m_b
        return np.concatenate([dq, dp], axis=-1)

    def dQdt(x, t, delta):
        w = TWO_PI / delta
        t = np.asarray(t, dtype=float)
        val = e * w * np.stack([-np.sin(w * t), -np.cos(w * t)], axis=-1)
        return np.broadcast_to(val, np.broadcast_shapes(np.shape(val), np.shape(x)[:-1] + (2,)))

    return PerturbationField(
        n=2,
        lagrangian_force=Q,
        velocity=system.velocity,
        force_jacobian=dQ,
        force_time_derivative=dQdt,
        name="gyroscopic",
        params=dict(alpha=float(alpha), beta=float(beta), e=float(e)),
    )


# ----------------------------------------------------------------------------
# three-DOF chain with parametric forcing
# ----------------------------------------------------------------------------


def chain3(k=1.0, a=-0.5, b=1.0):
    K = k * np.array([[1.0 + 1.0 / 3.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]])

    def V(q):
        q1 = q[..., 0]
        return 0.5 * np.einsum("...i,ij,...j->...", q, K, q) + a * q1**3 / 3 + b * q1**4 / 4

    def dV(q):
        out = np.einsum("ij,...j->...i", K, q)
        q1 = q[..., 0]
        out[..., 0] += a * q1**2 + b * q1**3
        return out

    def d2V(q):
        out = np.broadcast_to(K, np.shape(q) + (3,)).copy()
        q1 = q[..., 0]
        out[..., 0, 0] += 2 * a * q1 + 3 * b * q1**2
        return out

    ing = MechanicalIngredients(n=3, mass=np.eye(3), potential=V, potential_gradient=dV, potential_hessian=d2V)
    return build_from_mechanical(ing, name="chain3", params=dict(k=float(k), a=float(a), b=float(b)))


def square_wave(t, delta, harmonics=3):
    """Odd-harmonic Fourier truncation of a unit square wave of period ``delta``."""
    w = TWO_PI / delta
    t = np.asarray(t, dtype=float)
    return (4 / np.pi) * sum(np.sin((2 * j - 1) * w * t) / (2 * j - 1) for j in range(1, harmonics + 1))


def square_wave_dt(t, delta, harmonics=3):
    w = TWO_PI / delta
    t = np.asarray(t, dtype=float)
    return (4 / np.pi) * w * sum(np.cos((2 * j - 1) * w * t) for j in range(1, harmonics + 1))


def chain3_perturbation(system, alpha=0.121, harmonics=3, dof=2):
    """Mass-proportional damping ``-alpha qdot`` plus ``q_dof f(t)``."""
    n = system.n

    def Q(q, qd, t, delta):
        out = -alpha * qd
        out = np.broadcast_to(out, np.broadcast_shapes(np.shape(out), np.shape(t) + (n,))).copy()
        out[..., dof] += q[..., dof] * square_wave(t, delta, harmonics)
        return out

    def dQ(x, t, delta):
        shape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(t))
        out = np.zeros(shape + (n, 2 * n))
        out[..., :, n:] = -alpha * np.eye(n)
        out[..., dof, dof] = square_wave(t, delta, harmonics)
        return out

    def dQdt(x, t, delta):
        shape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(t))
        out = np.zeros(shape + (n,))
        out[..., dof] = x[..., dof] * square_wave_dt(t, delta, harmonics)
        return out

    return PerturbationField(
        n=n,
        lagrangian_force=Q,
        velocity=system.velocity,
        force_jacobian=dQ,
        force_time_derivative=dQdt,
        name="parametric_square_wave",
        params=dict(alpha=float(alpha), harmonics=int(harmonics), dof=int(dof)),
    )


# ----------------------------------------------------------------------------
# generic linear damping + harmonic forcing
# ----------------------------------------------------------------------------


def generic_perturbation(system, alpha=0.0, damping_matrix=None, forcing=()):
    """``Q = -alpha p - C qdot + sum_k a_k cos(j_k w t + phi_k) [q_{m_k}] e_{i_k}``.

    Each forcing entry is a dict with ``dof``, ``amplitude``, ``harmonic``
    (default 1), ``phase`` (default 0) and optional ``parametric_dof``.
    """
    n = system.n
    Cd = np.zeros((n, n)) if damping_matrix is None else np.asarray(damping_matrix, dtype=float)
    terms = [
        dict(
            dof=int(f["dof"]),
            amplitude=float(f["amplitude"]),
            harmonic=int(f.get("harmonic", 1)),
            phase=float(f.get("phase", 0.0)),
            parametric_dof=f.get("parametric_dof"),
        )
        for f in forcing
    ]
    vel = system.velocity

    def _p(q, qd):
        # momenta from velocities by inverting F along p (F affine in p)
        n_ = q.shape[-1]
        p0 = np.zeros(np.shape(q))
        F0 = vel(q, p0)
        cols = [vel(q, np.eye(n_)[i] + p0) - F0 for i in range(n_)]
        A = np.stack(cols, axis=-1)
        return np.linalg.solve(A, (qd - F0)[..., None])[..., 0]

    def Q(q, qd, t, delta):
        w = TWO_PI / delta
        t = np.asarray(t, dtype=float)
        out = -np.einsum("ij,...j->...i", Cd, qd)
        if alpha:
            out = out - alpha * _p(q, qd)
        shape = np.broadcast_shapes(np.shape(out), np.shape(t) + (n,))
        out = np.broadcast_to(out, shape).copy()
        for f in terms:
            val = f["amplitude"] * np.cos(f["harmonic"] * w * t + f["phase"])
            if f["parametric_dof"] is not None:
                val = val * q[..., int(f["parametric_dof"])]
            out[..., f["dof"]] += val
        return out

    def dQdt(x, t, delta):
        w = TWO_PI / delta
        t = np.asarray(t, dtype=float)
        shape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(t))
        out = np.zeros(shape + (n,))
        for f in terms:
            val = -f["amplitude"] * f["harmonic"] * w * np.sin(f["harmonic"] * w * t + f["phase"])
            if f["parametric_dof"] is not None:
                val = val * x[..., int(f["parametric_dof"])]
            out[..., f["dof"]] += val
        return out

    return PerturbationField(
        n=n,
        lagrangian_force=Q,
        velocity=vel,
        force_jacobian=None,
        force_time_derivative=dQdt,
        name="generic",
        params=dict(
            alpha=float(alpha),
            damping_matrix=Cd.tolist(),
            forcing=[{k: v for k, v in f.items() if v is not None} for f in terms],
        ),
    )


BUILTIN_SYSTEMS = {
    "linear": linear_oscillator,
    "duffing": duffing,
    "gyroscopic": gyroscopic,
    "chain3": chain3,
    "polynomial": polynomial,
}

__all__ = [
    "linear_oscillator",
    "duffing",
    "polynomial",
    "gyroscopic",
    "gyroscopic_perturbation",
    "chain3",
    "chain3_perturbation",
    "generic_perturbation",
    "square_wave",
    "from_hamiltonian",
    "BUILTIN_SYSTEMS",
]
