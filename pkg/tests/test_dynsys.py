import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nnmstab import systems
from nnmstab.dynsys import (
    MechanicalIngredients,
    PhaseState,
    apply_J,
    build_from_mechanical,
    from_hamiltonian,
    linearized_frequencies,
    symplectic_form,
    vector_field,
    zero_perturbation,
)
from nnmstab.errors import DegenerateMassError, DomainError, PreconditionError

SYSTEMS = {
    "duffing": lambda: systems.duffing(1.0, 1.0),
    "gyroscopic": lambda: systems.gyroscopic(),
    "chain3": lambda: systems.chain3(),
    "linear2": lambda: systems.linear_oscillator([1.0, 2.3]),
    "polynomial": lambda: systems.polynomial(2, [(0.5, [2, 0]), (0.7, [0, 2]), (0.2, [2, 1]), (0.1, [0, 4])]),
}


def fd_grad(f, x, h=1e-6):
    out = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        out[i] = (f(x + e) - f(x - e)) / (2 * h)
    return out


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_symplectic_form_properties(n):
    J = symplectic_form(n)
    np.testing.assert_array_equal(J.T, -J)
    np.testing.assert_array_equal(J @ J, -np.eye(2 * n))


@given(arrays(float, (4, 6), elements=st.floats(-1e3, 1e3)))
def test_apply_J_matches_matrix(v):
    np.testing.assert_allclose(apply_J(v), v @ symplectic_form(3).T)


@pytest.mark.parametrize("name", sorted(SYSTEMS))
def test_gradient_and_hessian_match_differences(name):
    sys_ = SYSTEMS[name]()
    rng = np.random.default_rng(1)
    x = 0.2 * rng.standard_normal(sys_.dim)
    np.testing.assert_allclose(sys_.gradient(x), fd_grad(sys_.hamiltonian, x), atol=1e-7)
    H2 = np.array([fd_grad(lambda y: sys_.gradient(y)[i], x) for i in range(sys_.dim)])
    np.testing.assert_allclose(sys_.hessian(x), H2, atol=1e-6)
    np.testing.assert_allclose(sys_.hessian(x), sys_.hessian(x).T, atol=1e-10)


@pytest.mark.parametrize("name", sorted(SYSTEMS))
def test_conservative_field_preserves_energy(name):
    sys_ = SYSTEMS[name]()
    x = 0.3 * np.random.default_rng(2).standard_normal((10, sys_.dim))
    f = vector_field(sys_, x)
    assert np.max(np.abs(np.sum(sys_.gradient(x) * f, axis=-1))) < 1e-12


def test_velocity_is_legendre_inverse():
    # qdot = dH/dp for the gyroscopic system
    g = systems.gyroscopic()
    x = np.array([0.1, -0.2, 0.3, 0.05])
    np.testing.assert_allclose(g.velocity(x[:2], x[2:]), g.gradient(x)[2:], atol=1e-12)


def test_mechanical_matches_explicit_hamiltonian():
    K = np.array([[2.0, -1.0], [-1.0, 2.0]])
    M = np.diag([1.0, 3.0])
    ing = MechanicalIngredients(n=2, mass=M, potential=lambda q: 0.5 * np.einsum("...i,ij,...j->...", q, K, q))
    s = build_from_mechanical(ing)
    W = np.linalg.inv(M)

    def H(x):
        q, p = x[..., :2], x[..., 2:]
        return 0.5 * np.einsum("...i,ij,...j->...", p, W, p) + 0.5 * np.einsum("...i,ij,...j->...", q, K, q)

    ref = from_hamiltonian(2, H)
    x = np.array([0.3, -0.1, 0.2, 0.4])
    assert s.hamiltonian(x) == pytest.approx(H(x), abs=1e-14)
    np.testing.assert_allclose(s.gradient(x), ref.gradient(x), atol=1e-7)
    # linear frequencies of M^{-1} K
    w = np.sqrt(np.sort(np.linalg.eigvals(W @ K).real))
    np.testing.assert_allclose(linearized_frequencies(s), w, atol=1e-8)


def test_singular_mass_rejected():
    ing = MechanicalIngredients(n=2, mass=np.diag([1.0, 0.0]), potential=lambda q: np.sum(q**2, axis=-1))
    with pytest.raises(DegenerateMassError):
        build_from_mechanical(ing)


def test_phase_state_validation():
    s = PhaseState([1.0, 2.0], [3.0, 4.0])
    np.testing.assert_array_equal(s.x, [1, 2, 3, 4])
    assert PhaseState.from_array(s.x) == s
    with pytest.raises(ValueError):
        PhaseState([1.0], [1.0, 2.0])
    with pytest.raises(DomainError):
        PhaseState([np.nan], [0.0])


def test_perturbed_field_needs_time_and_perturbation():
    d = systems.duffing()
    with pytest.raises(PreconditionError):
        vector_field(d, np.zeros(2), 0.0, eps=0.1, delta=1.0)
    dp = d.with_perturbation(zero_perturbation(d))
    with pytest.raises(PreconditionError):
        vector_field(dp, np.zeros(2), None, eps=0.1, delta=1.0)
    np.testing.assert_array_equal(vector_field(dp, np.ones(2), 0.0, eps=0.1, delta=1.0), vector_field(d, np.ones(2)))


def test_perturbation_jacobian_and_time_derivative_match_differences(gyro, pert_alpha, pert_beta):
    x = np.array([0.2, 0.05, -0.1, 0.3])
    t, delta = 0.7, 6.67 / 3
    for pert in (pert_alpha, pert_beta):
        Jx = pert.state_jacobian(x, t, delta)
        Jfd = np.array([fd_grad(lambda y: pert.value(y, t, delta)[i], x) for i in range(4)])
        np.testing.assert_allclose(Jx, Jfd, atol=1e-7)
        dt = pert.time_derivative(x, t, delta)
        h = 1e-6
        np.testing.assert_allclose(dt, (pert.value(x, t + h, delta) - pert.value(x, t - h, delta)) / (2 * h), atol=1e-7)


def test_scaled_perturbation_flips_sign(duffing_forcing):
    x, t = np.array([0.3, -0.2]), 0.4
    np.testing.assert_allclose(duffing_forcing.scaled(-1.0).value(x, t, 5.0), -duffing_forcing.value(x, t, 5.0))


@pytest.mark.parametrize(
    "builder, expected",
    [
        (lambda: systems.gyroscopic(), (0.92513, 3.1431)),
        (lambda: systems.chain3(), (0.30394, 1.0854, 1.7501)),
    ],
)
def test_linearized_frequencies_reference_systems(builder, expected):
    np.testing.assert_allclose(linearized_frequencies(builder()), expected, atol=1e-4)


def test_linearized_frequencies_rejects_non_equilibrium():
    with pytest.raises(PreconditionError):
        linearized_frequencies(systems.duffing(), equilibrium=[0.5, 0.0])


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 4.0), st.floats(0.0, 3.0))
def test_duffing_linear_frequency(k, k3):
    assert linearized_frequencies(systems.duffing(k, k3))[0] == pytest.approx(np.sqrt(k), rel=1e-10)
