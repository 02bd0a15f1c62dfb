import cmath
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import cubic_roots, resolvent_ss
from rydloss.errors import PoleError, TrackingError, ValidationError, WindowError
from rydloss.medium import angular_to_mhz, mhz_to_angular
from rydloss.polaritons import (
    BRANCHES,
    K_INFINITE,
    PropagatorQuery,
    branch_spectrum,
    dark_momentum,
    default_q_grid,
    eigenpairs_at,
    g_ss,
    group_velocity,
    hamiltonian,
    hellmann_feynman_velocity,
    inverse_group_velocity,
    inverse_group_velocity_closed_form,
    omega_plus,
    saturation_energies,
)


def _sorted(values):
    values = np.asarray(values)
    return values[np.lexsort((values.imag, values.real))]


def test_hamiltonian_is_complex_symmetric(operating_point):
    h = hamiltonian(np.array([-0.1, 0.0, 0.3]), operating_point)
    assert h.shape == (3, 3, 3)
    np.testing.assert_array_equal(h, np.swapaxes(h, -1, -2))


def test_dark_state_at_zero_momentum(operating_point):
    # (Omega/2, 0, -g) is annihilated by H(0) whenever Delta_s = 0, for any Delta
    p = operating_point.replace(gamma_s=0.0)
    v = np.array([p.omega_c_rabi / 2, 0.0, -p.g_peak])
    np.testing.assert_allclose(hamiltonian(0.0, p) @ v, 0.0, atol=1e-9)


def test_bright_roots_at_operating_point(operating_point):
    p = operating_point.lossless()
    roots = np.sort(cubic_roots(0.0, p).real)
    mhz = angular_to_mhz(roots)
    assert mhz[0] == pytest.approx(-1012.6, abs=0.05)
    assert mhz[1] == pytest.approx(0.0, abs=1e-9)
    assert mhz[2] == pytest.approx(987.6, abs=0.05)


def test_dark_rydberg_weight(operating_point):
    p = operating_point.lossless()
    spec = branch_spectrum(default_q_grid(p, n=201), p)
    s0 = spec.rydberg_overlap["D"][spec.seed_index]
    assert abs(s0) ** 2 == pytest.approx(0.99986, abs=5e-6)


@pytest.fixture(scope="module")
def lossy_spectrum():
    from rydloss.medium import from_experiment_units
    p = from_experiment_units({"omega_c_MHz": 23.5, "gamma_MHz": 7.0, "gamma_s_MHz": 0.4,
                               "delta_MHz": 25.0, "delta_s_MHz": -1.0, "OD": 37.0,
                               "sigma_z_um": 40.0, "g_MHz": 1000.0})
    return branch_spectrum(default_q_grid(p, n=801), p)


def test_branches_reproduce_eigenvalues(lossy_spectrum):
    spec = lossy_spectrum
    p = spec.params
    for i in range(0, spec.q_grid.size, 37):
        q = spec.q_grid[i]
        ours = _sorted([spec.omega[b][i] for b in BRANCHES])
        ref = _sorted(cubic_roots(q, p))
        np.testing.assert_allclose(ours, ref, rtol=1e-10, atol=1e-8 * p.g_peak)


def test_trace_and_normalization(lossy_spectrum):
    spec = lossy_spectrum
    p = spec.params
    for i in range(0, spec.q_grid.size, 50):
        total = sum(spec.omega[b][i] for b in BRANCHES)
        assert total == pytest.approx(np.trace(hamiltonian(spec.q_grid[i], p)), rel=1e-12, abs=1e-9)
        for b in BRANCHES:
            v = spec.eigenvectors[b][i]
            assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)
            assert abs(spec.rydberg_overlap[b][i]) <= 1.0 + 1e-12


def test_branches_are_continuous(lossy_spectrum):
    spec = lossy_spectrum
    for b in BRANCHES:
        v = spec.eigenvectors[b]
        overlap = np.abs(np.einsum("ij,ij->i", v[:-1].conj(), v[1:]))
        assert overlap.min() > 0.5


def test_labels_stable_under_grid_doubling(operating_point):
    p = operating_point
    coarse = branch_spectrum(default_q_grid(p, n=401), p)
    fine = branch_spectrum(default_q_grid(p, n=801), p)
    # every coarse point appears in the fine grid
    idx = np.searchsorted(fine.q_grid, coarse.q_grid)
    np.testing.assert_allclose(fine.q_grid[idx], coarse.q_grid, rtol=1e-12, atol=1e-15)
    for b in BRANCHES:
        np.testing.assert_allclose(fine.omega[b][idx], coarse.omega[b], rtol=1e-10, atol=1e-8)


def test_branch_spectrum_validation(operating_point):
    with pytest.raises(ValidationError):
        branch_spectrum(np.array([0.0, -1.0, 1.0]), operating_point)
    with pytest.raises(ValidationError):
        branch_spectrum(np.array([0.1, 0.2, 0.3]), operating_point)
    with pytest.raises(ValidationError):
        group_velocity("X", 0.0, branch_spectrum(default_q_grid(operating_point, n=51), operating_point))


def test_tracking_refuses_low_overlap(operating_point, monkeypatch):
    import rydloss.polaritons as pol
    p = operating_point.lossless()
    gc = p.g_peak / p.light_speed
    coarse = np.array([-3 * gc, 0.0, 3 * gc])
    branch_spectrum(coarse, p)
    # the bright states rotate by about 0.12 in overlap across this step
    monkeypatch.setattr(pol, "MIN_TRACKING_OVERLAP", 0.99)
    with pytest.raises(TrackingError):
        pol.branch_spectrum(coarse, p)
    spec = pol.branch_spectrum(np.array([-1e-6, 0.0, 1e-6]), p)
    with pytest.raises(TrackingError):
        pol.eigenpairs_at(3 * gc, spec)


def test_dark_group_velocity_at_resonance(operating_point):
    p = operating_point.lossless().replace(delta=0.0, delta_s=0.0)
    spec = branch_spectrum(default_q_grid(p, n=401), p)
    vg = group_velocity("D", 0.0, spec)
    expected = p.light_speed * p.omega_c_rabi ** 2 / (4 * p.g_peak ** 2 + p.omega_c_rabi ** 2)
    assert vg.real == pytest.approx(expected, rel=1e-6)


def test_photon_branch_reaches_light_speed(operating_point):
    p = operating_point.lossless()
    grid = default_q_grid(p, q_max=2000 * p.g_peak / p.light_speed, n=801)
    spec = branch_spectrum(grid, p)
    q = 1000 * p.g_peak / p.light_speed
    vg = group_velocity("U", q, spec)
    assert vg.real == pytest.approx(p.light_speed, rel=1e-5)


@pytest.mark.parametrize("branch", BRANCHES)
def test_hellmann_feynman_agrees_with_differences(lossy_spectrum, branch):
    spec = lossy_spectrum
    for q in (-0.03, 0.0, 0.01, 0.2):
        w, v = eigenpairs_at(q, spec)
        hf = hellmann_feynman_velocity(v[:, BRANCHES.index(branch)], spec.params)
        fd = group_velocity(branch, q, spec)
        assert abs(hf - fd) <= 1e-6 * spec.params.light_speed


def test_group_velocity_window(lossy_spectrum):
    spec = lossy_spectrum
    with pytest.raises(WindowError):
        group_velocity("D", spec.q_grid[-1], spec)
    with pytest.raises(WindowError):
        group_velocity("D", 2 * spec.q_grid[-1], spec)


def test_omega_plus_limits(operating_point):
    p = operating_point.lossless().replace(delta=0.0, delta_s=0.0)
    assert omega_plus(p) == pytest.approx(p.omega_c_rabi / 2, rel=1e-14)
    big = p.replace(delta=20 * p.omega_c_rabi)
    assert omega_plus(big).real == pytest.approx(big.omega_c_rabi ** 2 / (4 * big.delta), rel=3e-3)


def test_omega_plus_matches_saturation_root(operating_point):
    p = operating_point.lossless()
    assert omega_plus(p) == pytest.approx(saturation_energies(p)[1], rel=1e-12)
    lossy = operating_point
    # the delta~ variant only moves by gamma_s/2 inside the root
    assert abs(omega_plus(lossy) - omega_plus(lossy, use_delta_tilde=True)) < lossy.gamma_s


def test_dark_branch_saturates(operating_point):
    p = operating_point.lossless()
    _, hi = saturation_energies(p)
    values = []
    for scale in (1e3, 1e4, 1e5):
        q = scale * p.g_peak / p.light_speed
        ev = np.sort(np.linalg.eigvals(hamiltonian(q, p)).real)
        # the dark branch sits just below omega_+ at large positive q
        values.append(abs(ev[1] - hi) / abs(hi))
    assert values[-1] < 1e-3
    # 1/q approach
    assert values[0] / values[1] == pytest.approx(10.0, rel=0.05)
    assert values[1] / values[2] == pytest.approx(10.0, rel=0.05)


def test_dark_momentum_inverts_dispersion(operating_point):
    p = operating_point
    for nu in (-3.0, 0.5, 2.0):
        w = mhz_to_angular(nu)
        q = dark_momentum(w, p)
        h = hamiltonian(0.0, p)
        h[0, 0] = p.light_speed * q
        assert np.min(np.abs(np.linalg.eigvals(h) - w)) < 1e-8 * p.g_peak


def test_inverse_group_velocity_is_dq_domega(operating_point):
    p = operating_point
    w = mhz_to_angular(1.3)
    h = 1e-4
    fd = (dark_momentum(w + h, p) - dark_momentum(w - h, p)) / (2 * h)
    assert inverse_group_velocity(w, p) == pytest.approx(fd, rel=1e-7)


@pytest.mark.parametrize("delta_mhz, delta_s_mhz", [(25.0, 0.0), (15.0, -2.0), (30.0, 1.0)])
def test_closed_form_density_of_states(operating_point, delta_mhz, delta_s_mhz):
    # large-g regime, zero loss
    p = operating_point.lossless().with_detunings(delta_mhz, delta_s_mhz)
    p = p.replace(g_peak=mhz_to_angular(20000.0))
    exact = inverse_group_velocity(-2 * omega_plus(p), p)
    assert abs(inverse_group_velocity_closed_form(p) / exact - 1) < 1e-2


def test_reduced_closed_form_matches_general_at_zero_delta_s(operating_point):
    p = operating_point.lossless().replace(delta_s=0.0)
    assert inverse_group_velocity_closed_form(p, reduced=True) == pytest.approx(
        inverse_group_velocity_closed_form(p), rel=1e-12)


@given(st.floats(-0.5, 0.5), st.floats(-200, 200), st.floats(-40, 40), st.floats(1, 20),
       st.floats(0, 3), st.floats(-5, 5))
def test_g_ss_matches_resolvent(k, om_re, delta, gamma, gamma_s, delta_s):
    from rydloss.medium import from_experiment_units
    p = from_experiment_units({"omega_c_MHz": 23.5, "gamma_MHz": gamma, "gamma_s_MHz": gamma_s,
                               "delta_MHz": delta, "delta_s_MHz": delta_s, "OD": 37.0,
                               "sigma_z_um": 40.0})
    w = complex(mhz_to_angular(om_re), 0.3)
    ours = g_ss(PropagatorQuery(k, w), p)
    ref = resolvent_ss(k, w, p)
    assert abs(ours - ref) <= 1e-10 * max(abs(ref), 1e-6)


def test_g_ss_infinite_limit(operating_point):
    p = operating_point
    w = mhz_to_angular(3.0) + 0.1j
    inf = g_ss(PropagatorQuery(K_INFINITE, w), p)
    vals = [g_ss(PropagatorQuery(s * p.g_peak / p.light_speed, w), p) for s in (1e4, 1e5, 1e6)]
    errs = [abs(v - inf) for v in vals]
    assert errs[-1] < 1e-4 * abs(inf)
    # 1/k approach
    assert errs[0] / errs[1] == pytest.approx(10.0, rel=0.01)
    assert errs[1] / errs[2] == pytest.approx(10.0, rel=0.01)


def test_g_ss_errors(operating_point):
    p = operating_point
    with pytest.raises(ValidationError):
        g_ss(PropagatorQuery(2.0, 0.0), p, k_max=1.0)
    with pytest.raises(ValidationError):
        PropagatorQuery("big", 0.0)
    # two-level limit with no loss: pole of the Rydberg propagator at omega = -Delta_s
    bare = p.lossless().replace(omega_c_rabi=0.0, delta_s=0.0)
    with pytest.raises(PoleError):
        g_ss(PropagatorQuery(K_INFINITE, 0.0), bare)


def test_omega_plus_branch_is_continuous_in_loss(operating_point):
    # scaling the linewidths down must approach the zero-loss value smoothly
    ref = omega_plus(operating_point.lossless())
    diffs = []
    for f in (1.0, 0.1, 0.01):
        q = operating_point.replace(gamma_p=f * operating_point.gamma_p,
                                    gamma_s=f * operating_point.gamma_s)
        diffs.append(abs(omega_plus(q) - ref))
    assert diffs[0] > diffs[1] > diffs[2]
    assert diffs[2] < 1e-2 * abs(ref)
    assert not math.isnan(cmath.phase(ref))
