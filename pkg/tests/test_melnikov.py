import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from nnmstab import systems
from nnmstab.dynsys import zero_perturbation
from nnmstab.errors import CapabilityError, PreconditionError, ResonanceSpecError
from nnmstab.melnikov import (
    MelnikovCurve,
    ResonanceSpec,
    compress_counts,
    find_zeros,
    fit_harmonic,
    melnikov,
    melnikov_derivative,
    melnikov_energy_form,
    work_balance,
)

ALPHA, AMP = 0.1, 1.0


def dense_duffing_oracle(z, tau, s_values, N=100_000):
    """Brute-force ``M(s) = int p (-alpha p + A cos(2 pi (u - s)/tau)) du`` on ``N`` nodes.

    The orbit is re-integrated here with a separate solver call.
    """
    u = np.arange(N) * (tau / N)
    sol = solve_ivp(lambda t, x: [x[1], -x[0] - x[0] ** 3], (0, tau), z, method="DOP853",
                    rtol=1e-13, atol=1e-14, t_eval=u)
    p = sol.y[1]
    out = []
    for s in s_values:
        integrand = p * (-ALPHA * p + AMP * np.cos(2 * np.pi * (u - s) / tau))
        out.append(integrand.sum() * tau / N)
    return np.array(out)


@pytest.fixture(scope="module")
def duffing_curve(duffing_orbit, duffing_forcing):
    return melnikov(duffing_orbit, duffing_forcing, ResonanceSpec(1, 1))


@pytest.fixture(scope="module")
def gyro_curves(gyro_high, pert_alpha, pert_beta):
    spec = ResonanceSpec(1, 3)
    return {"alpha": melnikov(gyro_high, pert_alpha, spec), "beta": melnikov(gyro_high, pert_beta, spec)}


def test_duffing_matches_dense_quadrature(duffing_orbit, duffing_curve):
    s = np.linspace(0, duffing_orbit.tau, 7, endpoint=False) + 0.123
    ref = dense_duffing_oracle(duffing_orbit.z, duffing_orbit.tau, s)
    got = np.array([duffing_curve.evaluate(si) for si in s])
    np.testing.assert_allclose(got, ref, atol=1e-7)
    # and on the grid
    ref_grid = dense_duffing_oracle(duffing_orbit.z, duffing_orbit.tau, duffing_curve.s_grid[::32])
    np.testing.assert_allclose(duffing_curve.values[::32], ref_grid, atol=1e-7)


def test_duffing_zeros_are_simple_and_alternate(duffing_curve):
    z = duffing_curve.zeros
    assert len(z) == 2
    assert all(x.kind == "simple" for x in z)
    assert np.sign(z[0].derivative) == -np.sign(z[1].derivative)
    for x in z:
        assert abs(duffing_curve.evaluate(x.s0)) < 1e-9


def test_zero_forcing_gives_zero_curve(gyro_high, gyro):
    c = melnikov(gyro_high, zero_perturbation(gyro), ResonanceSpec(1, 3), grid_size=64)
    assert np.all(c.values == 0.0)
    assert c.zeros == ()


def test_periodic_in_forcing_period(gyro_high, gyro_curves):
    c = gyro_curves["alpha"]
    delta = gyro_high.tau / 3
    for s in (0.1, 0.77, 1.9):
        assert c.evaluate(s + delta) == pytest.approx(c.evaluate(s), abs=1e-10)


@pytest.mark.parametrize("case", ["alpha", "beta"])
def test_energy_form_agrees(gyro_high, pert_alpha, pert_beta, gyro_curves, case):
    pert = pert_alpha if case == "alpha" else pert_beta
    e = melnikov_energy_form(gyro_high, pert, ResonanceSpec(1, 3))
    c = gyro_curves[case]
    tol = max(c.error_estimate, e.error_estimate, 1e-12)
    assert np.max(np.abs(e.values - c.values)) <= 2 * tol + 1e-11


def test_derivative_matches_differences(gyro_high, pert_beta, gyro_curves):
    c = gyro_curves["beta"]
    s = np.array([0.3, 1.7, 4.0])
    d = melnikov_derivative(gyro_high, pert_beta, ResonanceSpec(1, 3), s)
    h = 1e-4
    fd = [(c.evaluate(x + h) - c.evaluate(x - h)) / (2 * h) for x in s]
    np.testing.assert_allclose(d, fd, atol=1e-6)


def test_derivative_needs_time_derivative(gyro_high, pert_beta):
    from dataclasses import replace

    bare = replace(pert_beta, force_time_derivative=None)
    with pytest.raises(CapabilityError):
        melnikov_derivative(gyro_high, bare, ResonanceSpec(1, 3), 0.1)


def test_harmonic_fit_on_gyroscopic_curves(gyro_curves):
    amp_a, off_a, _, res_a = fit_harmonic(gyro_curves["alpha"])
    amp_b, off_b, _, res_b = fit_harmonic(gyro_curves["beta"])
    assert amp_a == pytest.approx(1.4408, rel=1e-3)
    assert amp_b == pytest.approx(amp_a, rel=1e-10)  # damping only shifts the offset
    assert off_b == pytest.approx(-1.1557, rel=1e-3)
    assert off_a == pytest.approx(-1.1118, rel=1e-3)
    assert max(res_a, res_b) < 1e-8


def test_work_balance_matches_curve(gyro_high, pert_alpha, gyro_curves):
    s = gyro_curves["alpha"].s_grid[5]
    assert work_balance(gyro_high, pert_alpha, ResonanceSpec(1, 3), s) == pytest.approx(
        gyro_curves["alpha"].values[5], abs=1e-9
    )


@settings(max_examples=40, deadline=None)
@given(st.floats(0.5, 3.0), st.floats(-0.9, 0.9), st.integers(1, 4), st.floats(0.0, 6.0))
def test_zeros_of_shifted_cosine(a, c_frac, k, phase):
    T = 2 * np.pi
    f = lambda s: a * np.cos(k * s + phase) + c_frac * a  # noqa: E731
    df = lambda s: -a * k * np.sin(k * s + phase)  # noqa: E731
    curve = find_zeros(MelnikovCurve.from_function(f, T, grid_size=128, derivative=df))
    assert len(curve.zeros) == 2 * k
    for z in curve.zeros:
        assert abs(f(z.s0)) < 1e-9
        assert z.kind == "simple"
        assert z.derivative == pytest.approx(df(z.s0), abs=1e-12)


def test_tangential_zero_is_quadratic():
    T = 2 * np.pi
    f = lambda s: np.cos(s) - 1.0  # noqa: E731
    curve = find_zeros(MelnikovCurve.from_function(f, T, grid_size=128, derivative=lambda s: -np.sin(s)))
    assert [z.kind for z in curve.zeros] == ["quadratic"]
    assert curve.zeros[0].s0 == pytest.approx(0.0, abs=1e-6) or curve.zeros[0].s0 == pytest.approx(T, abs=1e-6)


def test_no_zeros_when_sign_definite():
    curve = find_zeros(MelnikovCurve.from_function(lambda s: np.cos(s) - 1.5, 2 * np.pi, grid_size=64))
    assert curve.zeros == ()


@pytest.mark.parametrize("m, l", [(2, 4), (3, 6), (0, 1), (1, -2)])
def test_resonance_spec_rejects_bad_pairs(m, l):
    with pytest.raises(ResonanceSpecError):
        ResonanceSpec(m, l)


def test_resonance_spec_checks_forcing_period(gyro_high):
    assert ResonanceSpec(1, 3).resolve(gyro_high) == pytest.approx(gyro_high.tau / 3)
    with pytest.raises(ResonanceSpecError):
        ResonanceSpec(1, 3, delta=gyro_high.tau / 3 * 1.001).resolve(gyro_high)


def test_grid_too_coarse(gyro_high, pert_alpha):
    with pytest.raises(PreconditionError):
        melnikov(gyro_high, pert_alpha, ResonanceSpec(1, 3), grid_size=16)


@pytest.mark.parametrize(
    "counts, expected",
    [([0, 0, 2, 2, 4, 2, 0], [0, 2, 4, 2, 0]), ([], []), ([3], [3]), ([1, 1, 1], [1])],
)
def test_compress_counts(counts, expected):
    assert compress_counts(counts) == expected


def test_subharmonic_resonance_two_cycles(duffing_orbit):
    # 2:1 resonance of a hardening Duffing orbit under harmonic forcing of period 2 tau
    pert = systems.generic_perturbation(systems.duffing(), alpha=0.05, forcing=[dict(dof=0, amplitude=0.5)])
    c = melnikov(duffing_orbit, pert, ResonanceSpec(2, 1), grid_size=128)
    assert c.period == pytest.approx(2 * duffing_orbit.tau)
    # the orbit only has odd harmonics, so forcing at half its frequency does no net work
    assert np.max(c.values) == pytest.approx(np.min(c.values), abs=1e-9)
