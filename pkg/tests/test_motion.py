import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import eigh
from scipy.optimize import brentq

from iontomo import motion
from iontomo.motion import ChainConfig, ChainError, ForcedModeParams

EQUAL = ChainConfig(masses=(9.012,) * 4)


def char_poly_roots(h, n_grid=200_001):
    """Eigenvalues from sign changes of det(H - x I) on a fine grid, refined by Brent."""
    f = lambda x: np.linalg.det(h - x * np.eye(len(h)))
    hi = np.abs(h).sum(axis=1).max()  # Gershgorin bound
    grid = np.linspace(1e-9, hi * 1.01, n_grid)
    vals = np.array([f(x) for x in grid])
    idx = np.flatnonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))
    return np.array([brentq(f, grid[i], grid[i + 1], xtol=1e-15, rtol=1e-15) for i in idx])


def test_two_ion_separation():
    x = motion.equilibrium_positions(2)
    assert x[1] - x[0] == pytest.approx(2 ** (1 / 3), rel=1e-12)


def test_three_ion_positions():
    x = motion.equilibrium_positions(3)
    assert x[1] == pytest.approx(0, abs=1e-14)
    assert x[2] == pytest.approx((5 / 4) ** (1 / 3), rel=1e-12)


def test_four_ion_symmetry_and_residual():
    x = motion.equilibrium_positions(4)
    assert np.allclose(x, -x[::-1], atol=1e-15)
    assert 0 < x[2] < x[3]
    assert np.max(np.abs(motion.potential_gradient(x))) < 1e-12


def test_hessian_matches_finite_difference():
    x = motion.equilibrium_positions(4)
    eps = 1e-6
    num = np.array([(motion.potential_gradient(x + eps * e) - motion.potential_gradient(x - eps * e)) / (2 * eps)
                    for e in np.eye(4)])
    assert np.allclose(num, motion.hessian(x), atol=1e-7)


def test_equal_mass_com_mode():
    spec = motion.axial_modes(EQUAL)
    assert spec.ratios[0] == pytest.approx(1, abs=1e-12)
    assert np.allclose(spec.eigenvectors[:, 0], 0.5, atol=1e-12)
    assert spec.ratios[1] == pytest.approx(np.sqrt(3), abs=1e-12)


def test_equal_mass_eigenvectors_symmetric():
    vec = motion.axial_modes(EQUAL).eigenvectors
    for m in range(4):
        v = vec[:, m]
        assert np.allclose(v, v[::-1], atol=1e-12) or np.allclose(v, -v[::-1], atol=1e-12)


def test_default_chain_top_mode_out_of_phase():
    vec = motion.axial_modes().eigenvectors
    top = vec[:, 3]
    assert np.sign(top[0]) == -np.sign(top[3])
    # mode 3 has the two Be ions moving together
    assert np.sign(vec[0, 2]) == np.sign(vec[3, 2])


def test_mode_ratios_against_characteristic_polynomial():
    cfg = ChainConfig()
    roots = char_poly_roots(motion.mass_weighted_hessian(cfg))
    assert len(roots) == 4
    ratios = motion.mode_ratios(cfg)
    assert np.allclose(ratios, np.sqrt(roots), rtol=1e-9)
    assert ratios[3] / ratios[2] == pytest.approx(np.sqrt(roots[3] / roots[2]), rel=1e-9)


def test_mode_ratios_against_generalized_eigenproblem():
    cfg = ChainConfig()
    x = motion.equilibrium_positions(4)
    m = np.diag(np.asarray(cfg.masses) / cfg.reference_mass)
    lam = eigh(motion.hessian(x), m, eigvals_only=True)
    assert np.allclose(motion.mode_ratios(cfg), np.sqrt(lam), rtol=1e-12)


def test_eigenvectors_orthonormal_and_hessian_rebuilt():
    cfg = ChainConfig()
    spec = motion.axial_modes(cfg)
    v = spec.eigenvectors
    assert np.allclose(v.T @ v, np.eye(4), atol=1e-10)
    rebuilt = motion.hessian_from_spectrum(spec, cfg)
    assert np.allclose(rebuilt, motion.hessian(motion.equilibrium_positions(4)), atol=1e-9)


def test_default_axial_frequency_gives_reference_splitting():
    spec = motion.axial_modes()
    assert (spec.frequencies[3] - spec.frequencies[2]) / (2 * np.pi) == pytest.approx(251e3, rel=1e-12)
    assert np.all(np.diff(spec.frequencies) > 0)


def test_explicit_axial_frequency():
    w = 2 * np.pi * 3e6
    spec = motion.axial_modes(ChainConfig(axial_frequency=w))
    assert spec.omega_ref == w
    assert np.allclose(spec.frequencies, w * motion.mode_ratios(ChainConfig()))


def test_config_validation():
    with pytest.raises(ValueError):
        ChainConfig(masses=(9.0, 24.0, 20.0, 9.0))
    with pytest.raises(ValueError):
        ChainConfig(masses=(9.0, -1.0, -1.0, 9.0))
    with pytest.raises(ValueError):
        ChainConfig(be_force_sign=0)
    cfg = ChainConfig(axial_frequency=1e7)
    assert ChainConfig.from_dict(cfg.to_dict()) == cfg


def test_loop_closes_after_one_period():
    delta = motion.DEFAULT_DETUNING
    p = ForcedModeParams(drive=2 * np.pi * 20e3, detuning=delta, duration=2 * np.pi / delta)
    tr = motion.forced_trajectory(p)
    assert abs(tr.alpha[-1]) < 1e-12
    assert tr.phase == pytest.approx(2 * np.pi * (p.drive / delta) ** 2, rel=1e-12)


@pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
def test_loop_closure_integer_counts(k):
    delta = -2 * motion.DEFAULT_DETUNING
    p = ForcedModeParams(drive=1e5, detuning=delta, duration=2 * np.pi * k / abs(delta))
    assert abs(motion.alpha_closed_form(p, p.duration)) < 1e-10
    # the loop runs clockwise for negative detuning
    expected = -k * 2 * np.pi * (1e5 / delta) ** 2
    assert motion.phase_closed_form(p, p.duration) == pytest.approx(expected, rel=1e-12)


def test_phase_doubles_with_loop_count():
    delta = motion.DEFAULT_DETUNING
    one = motion.phase_closed_form(ForcedModeParams(1e5, delta, 1.0), 2 * np.pi / delta)
    two = motion.phase_closed_form(ForcedModeParams(1e5, delta, 1.0), 4 * np.pi / delta)
    assert two == pytest.approx(2 * one, rel=1e-12)


@pytest.mark.parametrize("sign", [1, -1])
def test_ode_matches_closed_form(sign):
    delta = sign * motion.DEFAULT_DETUNING
    p = ForcedModeParams(drive=2 * np.pi * 15e3, detuning=delta, duration=2 * np.pi / abs(delta))
    num = motion.integrate_trajectory(p)
    exact = motion.alpha_closed_form(p, num.times)
    assert np.max(np.abs(num.alpha - exact)) < 1e-9
    assert num.phase == pytest.approx(float(motion.phase_closed_form(p, p.duration)), abs=1e-9)


def test_phase_is_twice_enclosed_area():
    delta = motion.DEFAULT_DETUNING
    p = ForcedModeParams(drive=3e5, detuning=delta, duration=2 * np.pi / delta)
    tr = motion.forced_trajectory(p, n_points=20001)
    assert 2 * motion.enclosed_area(tr.alpha[:-1]) == pytest.approx(tr.phase, rel=1e-6)
    # a constant drive phase rotates the loop without changing its area
    rotated = tr.alpha * np.exp(1j * 0.77)
    assert motion.enclosed_area(rotated[:-1]) == pytest.approx(motion.enclosed_area(tr.alpha[:-1]), rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 10.0))
def test_phase_quadratic_in_drive(factor):
    delta = motion.DEFAULT_DETUNING
    t = 2 * np.pi / delta
    base = motion.phase_closed_form(ForcedModeParams(1e4, delta, t), t)
    scaled = motion.phase_closed_form(ForcedModeParams(1e4 * factor, delta, t), t)
    assert scaled == pytest.approx(factor ** 2 * base, rel=1e-12)


def test_forced_params_validation():
    with pytest.raises(ValueError):
        ForcedModeParams(1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        ForcedModeParams(1.0, 1.0, 0.0)


def test_splitting_consistency():
    g = motion.gate_phases()
    assert 3 * g.delta / (2 * np.pi) == pytest.approx(250.8e3, rel=1e-12)
    assert abs(g.splitting - 3 * g.delta) / (2 * np.pi) < 1e3
    assert g.detunings[0] == pytest.approx(g.delta)
    # 251 kHz against 3 x 83.6 kHz leaves a 200 Hz offset on the top mode
    assert g.detunings[1] == pytest.approx(-2 * g.delta, rel=2e-3)
    assert g.loops == (1, 2)


def test_splitting_mismatch_raises():
    with pytest.raises(ChainError):
        motion.gate_phases(ChainConfig(axial_frequency=2 * np.pi * 5e6))


def displacement_couplings(cfg, spec):
    """Independent oracle: unweighted mode displacements from K u = w^2 M u with u^T M u = 1."""
    m = np.diag(np.asarray(cfg.masses) / cfg.reference_mass)
    lam, u = eigh(motion.hessian(motion.equilibrium_positions(4)), m)
    i, j = cfg.qubit_ions
    return u[i] / lam ** 0.25, cfg.be_force_sign * u[j] / lam ** 0.25


def test_equal_mass_ratio_against_hand_formula():
    # splitting exactly 3 delta, so mode 4 sits at -2 delta and runs two loops
    cfg = ChainConfig(masses=(9.012,) * 4, reference_splitting=3 * motion.DEFAULT_DETUNING)
    g = motion.gate_phases(cfg)
    a, b = displacement_couplings(cfg, motion.axial_modes(cfg))
    om3, om4 = abs(a[2]), abs(a[3])
    assert abs(a[2]) == pytest.approx(abs(b[2]), rel=1e-12)
    # loop orientation follows the sign of each detuning: +delta and -2 delta
    sign = -np.sign(a[2] * b[2]) * np.sign(a[3] * b[3])
    assert g.ratio == pytest.approx(sign * 2 * (om3 / om4) ** 2, rel=1e-9)
    assert abs(g.ratio - motion.gate_phase_ratio(ChainConfig())) > 0.1


def test_default_ratio_against_hand_formula():
    cfg = ChainConfig()
    a, b = displacement_couplings(cfg, motion.axial_modes(cfg))
    g = motion.gate_phases(cfg)
    d3, d4 = g.detunings
    hand = (a[2] * b[2] / d3 ** 2 * np.sign(d3)) / (a[3] * b[3] / d4 ** 2 * 2 * np.sign(d4))
    assert g.ratio == pytest.approx(hand, rel=1e-9)


def test_ratio_independent_of_force_sign():
    assert motion.gate_phase_ratio(ChainConfig(be_force_sign=1)) == pytest.approx(
        motion.gate_phase_ratio(ChainConfig()), rel=1e-12)


def test_gate_phase_document():
    doc = motion.gate_phases().to_dict()
    assert set(doc) >= {"delta_hz", "splitting_hz", "three_delta_hz", "phase_ratio", "loops"}
    assert doc["delta_hz"] == pytest.approx(83.6e3)
