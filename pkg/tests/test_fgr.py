import json
import math

import numpy as np
import pytest

from oracles import cubic_roots
from rydloss.errors import ValidationError, WindowError
from rydloss.fgr import (
    ManifoldGrid,
    asymptotic_reference,
    beta_asymptotic,
    beta_full,
    beta_map,
    beta_max_locus,
    beta_simplified,
    conservation_points,
    incoming_momentum,
    permutation_multiplicity,
    rate,
    rate_prefactor,
    simplified_integrand,
)
from rydloss.interactions import blockade_radius, chi_bar
from rydloss.medium import angular_to_mhz, mhz_to_angular
from rydloss.polaritons import dark_momentum, omega_plus


def test_permutation_count_and_prefactor():
    assert permutation_multiplicity() == 6
    assert rate_prefactor() == pytest.approx(18 / math.pi, rel=1e-15)


def test_incoming_momentum(experiment):
    assert incoming_momentum(experiment) == pytest.approx(0.0, abs=1e-15)
    p = experiment.with_detunings(25.0, -2.0)
    q0 = incoming_momentum(p)
    # the zero-loss dispersion passes through zero energy at q0
    roots = cubic_roots(q0, p.lossless())
    assert np.min(np.abs(roots)) < 1e-8 * p.g_peak
    with pytest.raises(WindowError):
        incoming_momentum(experiment.with_detunings(25.0, 30.0))


@pytest.fixture(scope="module")
def manifold_points(request):
    from rydloss.medium import load_preset
    p = load_preset("experiment", delta_s_MHz=-1.0)
    r_b = blockade_radius(0.0, p)
    q0 = incoming_momentum(p)
    q2 = q0 + np.linspace(-3.0, 3.0, 13) / r_b
    return p, q0, conservation_points(p, q2)


def test_conservation_constraints_hold(manifold_points):
    p, q0, pts = manifold_points
    assert len(pts) > 0
    zl = p.lossless()
    for pt in pts:
        assert pt.q1 + pt.q2 + pt.q3 == pytest.approx(3 * q0, abs=1e-9 * p.g_peak / p.light_speed)
        assert sum(pt.energies) == pytest.approx(0.0, abs=1e-9 * p.omega_c_rabi)
        # each leg is an eigenvalue of the zero-loss Hamiltonian at its momentum
        for q, e in ((pt.q1, pt.energies[0]), (pt.q2, pt.energies[1]), (pt.q3, pt.energies[2])):
            assert np.min(np.abs(cubic_roots(q, zl) - e)) < 1e-7 * p.g_peak
        # the U leg sits above the dark band
        assert pt.energies[1] > omega_plus(zl).real
        assert pt.weight > 0 and pt.jacobian > 0


def test_roots_come_in_mirror_pairs(manifold_points):
    _, _, pts = manifold_points
    by_q2 = {}
    for pt in pts:
        by_q2.setdefault(pt.q2, []).append(pt)
    for group in by_q2.values():
        assert len(group) % 2 == 0
        e1 = sorted(pt.energies[0] for pt in group)
        e3 = sorted(pt.energies[2] for pt in group)
        np.testing.assert_allclose(e1, e3, rtol=1e-9)


def test_jacobian_is_inverse_velocity_difference(manifold_points):
    p, _, pts = manifold_points
    zl = p.lossless()
    h = 1e-5
    for pt in pts[:4]:
        e1, _, e3 = pt.energies
        v1 = 2 * h / (dark_momentum(e1 + h, zl) - dark_momentum(e1 - h, zl)).real
        v3 = 2 * h / (dark_momentum(e3 + h, zl) - dark_momentum(e3 - h, zl)).real
        assert pt.jacobian == pytest.approx(1 / abs(v1 - v3), rel=1e-5)


def test_beta_full_basic(experiment):
    res = beta_full(experiment)
    assert res.method == "full"
    assert res.magnitude > 0
    assert res.accepted
    d = res.diagnostics
    assert d["n_roots"] > 0 and d["max_roots_per_q2"] >= 2
    assert d["tail_bound"] < 1e-3 * res.magnitude
    with pytest.raises(ValidationError):
        beta_full(experiment, terms="C")


def test_beta_full_window_convergence(experiment):
    a = beta_full(experiment, ManifoldGrid(window_rb=40.0)).magnitude
    b = beta_full(experiment, ManifoldGrid(window_rb=80.0)).magnitude
    assert b == pytest.approx(a, rel=1e-3)


def test_rates_vanish_without_interactions(experiment):
    p = experiment.replace(c6=0.0)
    assert beta_full(p).beta == 0
    assert beta_simplified(p).beta == 0


def test_vertex_suppression_scales_with_loss(experiment):
    # |chi_bar(0) / chi_bar(2 w+)| at delta = 3 Omega falls linearly with the linewidths
    ratios = []
    for f in (1.0, 0.1, 0.01):
        p = experiment.replace(delta=3 * experiment.omega_c_rabi, gamma_p=f * experiment.gamma_p,
                               gamma_s=f * experiment.gamma_s)
        ratios.append(abs(chi_bar(0.0, p) / chi_bar(2 * omega_plus(p), p)))
    assert ratios[0] / ratios[1] == pytest.approx(10.0, rel=0.05)
    assert ratios[1] / ratios[2] == pytest.approx(10.0, rel=0.01)
    assert ratios[2] < 5e-3


def test_second_diagram_is_finite_fraction(experiment):
    p = experiment.replace(delta=3 * experiment.omega_c_rabi)
    a = beta_full(p, terms="A").magnitude
    b = beta_full(p, terms="B").magnitude
    assert 0 < b < a


def test_simplified_integrand_even_and_decaying(experiment):
    r_b = blockade_radius(0.0, experiment)
    q = np.array([0.1, 1.0, 5.0]) / r_b
    f = simplified_integrand(q, experiment)
    np.testing.assert_allclose(f, simplified_integrand(-q, experiment), rtol=1e-12)
    assert f[0] > f[1] > f[2]


def test_simplified_against_trapezoid(experiment):
    res = beta_simplified(experiment)
    r_b = res.diagnostics["r_b"]
    q = np.linspace(-40 / r_b, 40 / r_b, 40001)
    integral = np.trapezoid(simplified_integrand(q, experiment), q)
    ref = rate_prefactor() * res.diagnostics["inverse_group_velocity"] * integral
    assert res.beta == pytest.approx(ref, rel=1e-6)
    assert res.accepted


def test_simplified_scales_as_sqrt_c6(experiment):
    base = beta_simplified(experiment).magnitude
    for c in (0.5, 2.0, 4.0):
        val = beta_simplified(experiment.replace(c6=c * experiment.c6)).magnitude
        assert val / base == pytest.approx(math.sqrt(c), rel=1e-6)


def test_asymptotic_normalization(experiment):
    ref = asymptotic_reference(experiment)
    assert beta_asymptotic(ref).magnitude == pytest.approx(beta_simplified(ref).magnitude, rel=1e-12)
    assert "regime_warning" in beta_asymptotic(experiment.replace(delta=experiment.omega_c_rabi)).diagnostics
    assert "regime_warning" not in beta_asymptotic(ref).diagnostics


def test_asymptotic_tracks_simplified(experiment):
    om = experiment.omega_c_rabi
    ratios = [beta_simplified(experiment.replace(delta=x * om)).magnitude
              / beta_asymptotic(experiment.replace(delta=x * om)).magnitude
              for x in np.linspace(5, 10, 6)]
    assert max(ratios) / min(ratios) < 1.3


def test_asymptotic_monotone(experiment):
    om = experiment.omega_c_rabi
    vals = [beta_asymptotic(experiment.replace(delta=x * om)).magnitude for x in np.linspace(3, 20, 18)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_rate_dispatch(experiment):
    assert rate(experiment, "simplified").beta == beta_simplified(experiment).beta
    with pytest.raises(ValidationError):
        rate(experiment, "magic")


def test_beta_map_holes_and_checkpoint(experiment, tmp_path):
    p = experiment.lossless().replace(gamma_p=1e-9)
    d0 = 0.5 * p.omega_c_rabi
    deltas = np.array([d0, mhz_to_angular(25.0)])
    ck = tmp_path / "ck.jsonl"
    first = beta_map(deltas, [0.0], p.lossless(), checkpoint=str(ck))
    # chi_bar(0) vanishes at delta_0 in the zero-loss limit
    assert len(first.holes) == 1 and first.holes[0][:2] == (0, 0)
    assert np.isnan(first.values[0, 0]) and np.isfinite(first.values[0, 1])
    lines = ck.read_text().splitlines()
    assert len(lines) == 2
    # a truncated trailing record is ignored and resume does not recompute
    ck.write_text(lines[0] + "\n" + lines[1] + "\n" + lines[1][:10])
    again = beta_map(deltas, [0.0], p.lossless(), checkpoint=str(ck))
    np.testing.assert_array_equal(np.isnan(again.values), np.isnan(first.values))
    assert again.values[0, 1] == first.values[0, 1]
    assert len(again.holes) == 1
    with pytest.raises(ValidationError):
        beta_map([], [0.0], p)


def test_beta_map_parallel_matches_serial(experiment):
    deltas = mhz_to_angular(np.array([15.0, 20.0, 25.0]))
    dss = mhz_to_angular(np.array([-1.0, 1.0]))
    a = beta_map(deltas, dss, experiment)
    b = beta_map(deltas, dss, experiment, workers=2)
    np.testing.assert_array_equal(a.values, b.values)
    ridge = a.ridge()
    assert ridge.shape == (2,)
    assert all(r in deltas for r in ridge)


def test_locus_at_zero_delta_s(experiment):
    (pt,) = beta_max_locus([0.0], experiment)
    assert angular_to_mhz(pt.delta_star) == pytest.approx(15.65, abs=0.05)
    assert not pt.multimodal


def test_locus_resolves_two_resonances_at_low_loss(experiment):
    p = experiment.replace(gamma_p=0.1 * experiment.gamma_p, gamma_s=0.1 * experiment.gamma_s)
    (pt,) = beta_max_locus([0.0], p)
    assert pt.multimodal
    lo, hi = (angular_to_mhz(x) for x in pt.maxima)
    # close to delta_0 = 11.75 MHz and delta_+ = 16.44 MHz
    assert lo == pytest.approx(11.75, abs=0.2)
    assert hi == pytest.approx(16.44, abs=0.2)


def test_locus_window_error(experiment):
    om = experiment.omega_c_rabi
    with pytest.raises(WindowError):
        beta_max_locus([0.0], experiment, window=(3 * om, 4 * om), coarse_points=9)


def test_checkpoint_records_are_json(experiment, tmp_path):
    ck = tmp_path / "c.jsonl"
    beta_map(mhz_to_angular(np.array([20.0])), [0.0], experiment, checkpoint=str(ck))
    rec = json.loads(ck.read_text())
    assert set(rec) == {"i", "j", "re", "im", "error"}
