import math

import numpy as np
import pytest
from scipy.linalg import null_space

from phonon_forge import singlemode as sm

GAMMA = 43.2
FIG2 = sm.CavityModeParams(omega=2.0, kappa=6.1e-3, n_th=10.0)


def drive(x, delta_b=0.0, gamma=GAMMA):
    return sm.DriveParams.from_eta_omega(x, gamma, delta_b)


def test_saturation_examples():
    assert sm.saturation(drive(0.0)) == 0.0
    assert sm.saturation(drive(0.4)) == pytest.approx(8 * 0.4**2 / 43.2**2)
    assert sm.saturation(drive(0.4)) == pytest.approx(6.86e-4, rel=1e-3)
    assert sm.saturation(drive(0.3, 5.0)) == sm.saturation(drive(0.3, -5.0))


def test_drive_validation():
    with pytest.raises(ValueError):
        sm.DriveParams(eta=-0.1, Omega=1.0, gamma=1.0)
    with pytest.raises(ValueError):
        sm.DriveParams(eta=0.1, Omega=1.0, gamma=0.0)
    with pytest.raises(ValueError):
        sm.CavityModeParams(1.0, 0.0, 1.0)


def test_thermal_rates():
    m = sm.CavityModeParams(1.0, 0.2, 3.0)
    assert (m.kappa_up, m.kappa_down) == pytest.approx((0.6, 0.8))


def test_gain_vacuum_and_zero_drive():
    vac = sm.NumberDistribution.vacuum(10)
    assert sm.gain(vac, drive(0.0)) == 0.0
    d = drive(0.3)
    assert sm.gain(vac, d) == pytest.approx(GAMMA * sm.saturation(d) / 2)


def test_small_signal_threshold_closed_form():
    x = sm.threshold_small_signal(FIG2, GAMMA)
    assert x == pytest.approx(math.sqrt(6.1e-3 * GAMMA) / 2)
    assert x == pytest.approx(0.255, abs=0.002)
    assert sm.gain(sm.NumberDistribution.vacuum(5), drive(x)) == pytest.approx(FIG2.kappa)


def test_gain_clamps_at_kappa_above_threshold():
    d = drive(0.4)
    G = sm.gain(sm.steady_state(d, FIG2), d)
    assert G / FIG2.kappa == pytest.approx(1.0, rel=0.01)


@pytest.mark.parametrize("x", [0.05, 0.15, 0.25, 0.35, 0.5])
def test_gain_never_exceeds_kappa(x):
    d = drive(x)
    assert sm.gain(sm.steady_state(d, FIG2), d) <= FIG2.kappa * (1 + 1e-9)


def test_rate_rhs_hand_built_matrix():
    # kappa = n_th = gamma = 1 and s = 1 (so A = 1/2), levels 0..3
    mode = sm.CavityModeParams(1.0, 1.0, 1.0)
    d = sm.DriveParams.from_eta_omega(math.sqrt(1 / 8), 1.0)
    assert sm.saturation(d) == pytest.approx(1.0)
    M = np.array([[-1.5, 2.0, 0.0, 0.0],
                  [1.5, -4.5, 4.0, 0.0],
                  [0.0, 2.5, -7.5, 6.0],
                  [0.0, 0.0, 3.5, -6.0]])
    P = np.array([0.4, 0.3, 0.2, 0.1])
    np.testing.assert_allclose(sm.rate_rhs(P, d, mode), M @ P, atol=1e-14)
    np.testing.assert_allclose(sm.rate_matrix(3, d, mode).toarray(), M, atol=1e-14)


def test_rate_rhs_thermal_detailed_balance():
    mode = sm.CavityModeParams(1.0, 0.3, 4.0)
    P = sm.NumberDistribution.thermal(4.0, 400)
    np.testing.assert_allclose(sm.rate_rhs(P.P, drive(0.0), mode), 0.0, atol=1e-15)


def test_rate_rhs_conserves_probability(rng):
    for _ in range(10):
        P = rng.random(60)
        P /= P.sum()
        mode = sm.CavityModeParams(1.0, rng.uniform(0.01, 1), rng.uniform(0, 20))
        d = drive(rng.uniform(0, 2), rng.uniform(-5, 5), rng.uniform(1, 50))
        with pytest.warns(sm.TruncationWarning):
            dP = sm.rate_rhs(P, d, mode)
        assert abs(dP.sum()) < 1e-12


def test_steady_state_zero_drive_is_geometric():
    mode = sm.CavityModeParams(1.0, 0.01, 10.0)
    dist = sm.steady_state(drive(0.0), mode)
    x = 10 / 11
    n = dist.n
    np.testing.assert_allclose(dist.P[:200], ((1 - x) * x**n)[:200], rtol=1e-9)
    assert dist.mean == pytest.approx(10.0, rel=1e-6)
    assert sm.g2_zero(dist) == pytest.approx(2.0, rel=1e-6)
    assert not dist.truncated


@pytest.fixture(scope="module")
def cold_lasing():
    return sm.steady_state(drive(0.4), sm.CavityModeParams(2.0, 6.1e-3, 0.0))


def test_cold_lasing_is_coherent(cold_lasing):
    assert sm.g2_zero(cold_lasing) == pytest.approx(1.0, abs=0.01)


def test_cold_lasing_fano_factor_matches_saturable_gain_law(cold_lasing):
    # the product formula gives var / mean = A / (A - kappa) with A = gamma s / 2
    A = sm.pump_rate(drive(0.4))
    assert cold_lasing.variance / cold_lasing.mean == pytest.approx(A / (A - 6.1e-3), rel=0.01)


@pytest.mark.xfail(strict=True, reason="var/mean = A/(A - kappa) = 1.68 at eta*Omega = 0.4; Poissonian only far "
                                       "above threshold")
def test_cold_lasing_fano_factor_poissonian(cold_lasing):
    assert cold_lasing.variance / cold_lasing.mean == pytest.approx(1.0, abs=0.02)


def test_fano_factor_tends_to_one_far_above_threshold():
    d = sm.steady_state(drive(3.0), sm.CavityModeParams(2.0, 6.1e-3, 0.0))
    assert d.variance / d.mean == pytest.approx(1.0, abs=0.02)


def test_steady_state_matches_null_space(rng):
    for _ in range(5):
        mode = sm.CavityModeParams(1.0, rng.uniform(0.005, 0.5), rng.uniform(0, 5))
        d = drive(rng.uniform(0, 1), 0.0, rng.uniform(5, 50))
        dist = sm.steady_state(d, mode, 50, auto_extend=False)
        v = null_space(sm.rate_matrix(50, d, mode).toarray())[:, 0]
        np.testing.assert_allclose(dist.P, v / v.sum(), atol=1e-8)


def test_steady_state_extends_truncation():
    dist = sm.steady_state(drive(0.4), FIG2, n_max=100)
    assert dist.n_max > 100 and not dist.truncated


def test_steady_state_needs_loss():
    with pytest.raises(ValueError):
        sm.CavityModeParams(1.0, 0.0, 1.0)


def test_mean_field_limits():
    assert sm.mean_n_steady(drive(0.0), FIG2) == 10.0
    assert sm.mean_n_steady(drive(0.4), FIG2) == pytest.approx(2200, rel=0.1)


def _mean_field_case(x):
    # near threshold the mean-field root misses the fluctuation-smeared kink
    if 0.22 <= x <= 0.31:
        return pytest.param(x, marks=pytest.mark.xfail(strict=True, reason="mean field ignores number fluctuations "
                                                                           "near threshold"))
    return x


@pytest.mark.parametrize("x", [_mean_field_case(round(v, 2)) for v in np.arange(0.1, 0.61, 0.05)])
def test_mean_field_matches_distribution(x):
    d = drive(x)
    assert sm.mean_n_steady(d, FIG2) == pytest.approx(sm.steady_state(d, FIG2).mean, rel=0.02)


def test_g2_known_distributions():
    assert sm.g2_zero(sm.NumberDistribution.thermal(7.0, 600)) == pytest.approx(2.0, rel=1e-6)
    assert sm.g2_zero(sm.NumberDistribution.poisson(40.0, 200)) == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(ValueError):
        sm.g2_zero(sm.NumberDistribution.vacuum(5))


def test_g2_transition_across_threshold():
    for x in (0.1, 0.15, 0.2):
        assert sm.g2_zero(sm.steady_state(drive(x), FIG2)) == pytest.approx(2.0, abs=0.1)
    for x in (0.35, 0.45, 0.6):
        assert sm.g2_zero(sm.steady_state(drive(x), FIG2)) == pytest.approx(1.0, abs=0.05)


def test_linewidth_properties():
    d = drive(0.3)
    widths = [sm.linewidth(d, FIG2, n) for n in (10, 100, 1000)]
    assert widths[0] > widths[1] > widths[2]
    r4, r2 = sm.steady_report(drive(0.4), FIG2), sm.steady_report(drive(0.2), FIG2)
    assert r4.linewidth / r2.linewidth < 0.05
    assert 1e-5 < r4.linewidth < 1e-4
    # thermal term dominates; the pump term adds about ten percent
    assert r4.linewidth == pytest.approx(FIG2.kappa * 10 / r4.mean_n, rel=0.15)
    assert r4.linewidth > FIG2.kappa * 10 / r4.mean_n
    with pytest.raises(ValueError):
        sm.linewidth(d, FIG2, 0.0)


def test_lineshape_lorentzian():
    dnu, n = 1e-3, 500.0
    S = sm.lineshape(FIG2, dnu, n, [2.0, 2.0 + dnu / 2, 2.0 - dnu / 2])
    assert S[0] == pytest.approx(4 * n / dnu**2)
    assert S[1] == pytest.approx(S[0] / 2) and S[2] == pytest.approx(S[0] / 2)


def test_lineshape_narrows_with_drive():
    nu = np.linspace(1.99, 2.01, 20001)
    fwhm = []
    for x in (0.2, 0.3, 0.4):
        r = sm.steady_report(drive(x), FIG2)
        S = sm.lineshape(FIG2, r.linewidth, r.mean_n, nu)
        S /= S.max()
        above = nu[S >= 0.5]
        fwhm.append(above[-1] - above[0])
    assert fwhm[0] > fwhm[1] > fwhm[2]


def test_threshold_crossover_near_closed_form():
    x = sm.threshold_crossover(FIG2, GAMMA)
    assert x == pytest.approx(math.sqrt(FIG2.kappa * GAMMA) / 2, rel=0.1)


def test_mean_n_monotone():
    xs = np.linspace(0.0, 0.6, 13)
    n = [sm.steady_state(drive(x), FIG2).mean for x in xs]
    assert np.all(np.diff(n) >= 0)
    nt = [sm.steady_state(drive(0.3), sm.CavityModeParams(2.0, 6.1e-3, v)).mean for v in (0, 2, 5, 10, 20)]
    assert np.all(np.diff(nt) >= 0)


def test_evolution_zero_drive_relaxes_exponentially():
    mode = sm.CavityModeParams(1.0, 0.05, 3.0)
    tr = sm.evolve_distribution(sm.NumberDistribution.vacuum(100), drive(0.0), mode, 100.0, dt=1.0, n_max=150)
    expected = 3.0 * (1 - np.exp(-0.05 * tr.t))
    np.testing.assert_allclose(tr.mean[1:], expected[1:], rtol=0.01)
    np.testing.assert_allclose(tr.norm, 1.0, atol=1e-6)


def test_explicit_and_implicit_agree():
    mode = sm.CavityModeParams(1.0, 0.05, 2.0)
    d = drive(0.8, 0.0, 10.0)
    args = (sm.NumberDistribution.vacuum(10), d, mode, 40.0)
    a = sm.evolve_distribution(*args, dt=1.0, method="implicit", n_max=300)
    b = sm.evolve_distribution(*args, dt=1.0, method="explicit", n_max=300)
    np.testing.assert_allclose(a.mean, b.mean, rtol=1e-5, atol=1e-8)


def test_evolution_truncation_breach_aborts():
    with pytest.raises(sm.TruncationError):
        sm.evolve_distribution(sm.NumberDistribution.vacuum(10), drive(0.4), FIG2, 20 / FIG2.kappa,
                               dt=1 / FIG2.kappa, n_max=300)


@pytest.fixture(scope="module")
def buildup():
    return sm.evolve_distribution(sm.NumberDistribution.vacuum(10), drive(0.4), FIG2, 30 / FIG2.kappa,
                                  dt=0.05 / FIG2.kappa)


def test_buildup_normalised(buildup):
    np.testing.assert_allclose(buildup.norm, 1.0, atol=1e-6)
    assert buildup.mean[-1] == pytest.approx(buildup.target_mean, rel=1e-3)


@pytest.mark.xfail(strict=True, reason="the 90% build-up time from vacuum is ~8 / kappa; the quoted ~14 / kappa "
                                       "matches only near-complete build-up")
def test_buildup_time_to_90_percent(buildup):
    assert buildup.time_to_fraction(0.9) * FIG2.kappa == pytest.approx(14, rel=0.3)


def test_buildup_time_to_near_completion(buildup):
    assert buildup.time_to_fraction(0.99) * FIG2.kappa == pytest.approx(14, rel=0.3)
