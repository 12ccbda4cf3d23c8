import math
from dataclasses import replace

import numpy as np
import pytest

from phonon_forge.twomode import (ClosureBreakdownError, MomentState, NoOscillationError, TwoModeParams,
                                  dominant_frequency, init_state, integrate, moment_rhs, phase_diagram,
                                  phonon_stats, run, single_mode_consistency, single_mode_threshold)
from phonon_forge.twomode.moments import N_MOM, PAIRS, gaussian_moments, index, mean_n, mean_n2

FREE = TwoModeParams(kappa=(1e-300, 1e-300), n_th=(0.0, 0.0))


def test_moment_index_covers_orders_one_to_four():
    assert N_MOM == 14 == len(PAIRS)
    assert sorted(index(n, m) for n, m in PAIRS) == list(range(14))
    with pytest.raises(KeyError):
        index(0, 0)
    with pytest.raises(KeyError):
        index(3, 2)


def test_vacuum_moments():
    b = gaussian_moments(0.0, 0.0, 1.0, 1.0)
    assert b[index(0, 2)] == 1 and b[index(2, 0)] == 1
    assert b[index(1, 1)] == -1j
    assert b[index(0, 4)] == 3 and b[index(4, 0)] == 3
    assert mean_n(b) == pytest.approx(0.0, abs=1e-15)
    assert mean_n2(b) == pytest.approx(0.0, abs=1e-15)


def test_init_state_thermal_displaced():
    p = TwoModeParams()
    s = init_state(0.5, 0.5, p)
    br = s.block(1)
    assert br[index(0, 1)] == pytest.approx(1.0)
    assert br[index(1, 0)] == 0
    assert br[index(0, 2)] == pytest.approx(1.0 + 2 * 8.2 + 1)
    assert br[index(1, 1)] == pytest.approx(-1j)
    assert s.mean_n(1) == pytest.approx(8.2 + 0.25)
    assert s.energy(1) == pytest.approx(0.5)
    assert s.sigma_z == -1 and s.sigma_minus == 0


def test_g2_thermal_and_coherent():
    th = MomentState(init_state(0.0, 0.0, TwoModeParams()).y)
    for n1, _, g2 in phonon_stats(th):
        assert g2 == pytest.approx(2.0, abs=1e-6)
    coh = gaussian_moments(40.0, 0.0, 1.0, 1.0)
    n1, n2 = mean_n(coh), mean_n2(coh)
    assert n1 == pytest.approx(400.0)
    assert (n2 - n1) / n1**2 == pytest.approx(1.0, abs=1e-12)


def test_phonon_stats_vacuum_g2_undefined():
    vac = init_state(0.0, 0.0, replace(TwoModeParams(), n_th=(0.0, 0.0)))
    stats = phonon_stats(vac)
    assert stats[0][0] == pytest.approx(0.0, abs=1e-15)
    assert math.isnan(stats[0][2])


def test_first_moment_rows(rng):
    p = TwoModeParams(Omega=0.7)
    y = rng.normal(size=2 * N_MOM + 2) + 1j * rng.normal(size=2 * N_MOM + 2)
    d = moment_rhs(MomentState(y), p)
    g = p.couplings()
    sm_, sp_ = y[2 * N_MOM], np.conj(y[2 * N_MOM])
    sz = y[2 * N_MOM + 1]
    for q in range(2):
        X, P = y[q * N_MOM + index(0, 1)], y[q * N_MOM + index(1, 0)]
        w, k = p.omega[q], p.kappa[q]
        assert d[q * N_MOM + index(0, 1)] == pytest.approx(w * P - k / 2 * X + 1j * g[q] * (sm_ - sp_))
        assert d[q * N_MOM + index(1, 0)] == pytest.approx(-w * X - k / 2 * P - g[q] * (sm_ + sp_))
    XmP = [y[q * N_MOM + index(0, 1)] - 1j * y[q * N_MOM + index(1, 0)] for q in range(2)]
    dsm = (1j * p.delta - p.gamma / 2) * sm_ + 0.5j * sz * sum(g[q] * XmP[q] for q in range(2))
    assert d[2 * N_MOM] == pytest.approx(dsm)
    term = sum(g[q] * sp_ * XmP[q] for q in range(2))
    assert d[2 * N_MOM + 1] == pytest.approx(-p.gamma * (sz + 1) - 1j * (term - np.conj(term)))


def test_thermal_state_is_stationary_without_drive():
    p = TwoModeParams()
    d = moment_rhs(init_state(0.0, 0.0, p), p)
    np.testing.assert_allclose(d, 0.0, atol=1e-12)


def test_free_oscillator_conserves_energy():
    p = FREE
    t_max = 100 * 2 * np.pi / min(p.omega)
    rec = integrate(init_state(3.0, 1.0, p), p, t_max=t_max, rtol=1e-11, atol=1e-13)
    np.testing.assert_allclose(rec.energy[0], 3.0, rtol=1e-8)
    np.testing.assert_allclose(rec.energy[1], 1.0, rtol=1e-8)


def test_relaxation_to_thermal_level():
    p = TwoModeParams(kappa=(0.5, 0.4))
    start = init_state(20.0, 5.0, replace(p, n_th=(0.0, 0.0)))
    rec = integrate(start, p, t_max=80.0)
    np.testing.assert_allclose(rec.mean_n[:, -1], p.n_th, rtol=1e-6)
    assert rec.classification == "below-threshold"


def test_gaussianity_preserved_without_drive():
    p = TwoModeParams(kappa=(0.2, 0.1))
    rec = integrate(init_state(4.0, 2.0, replace(p, n_th=(1.0, 3.0))), p, t_max=15.0, rtol=1e-10, atol=1e-12)
    for q in range(2):
        b = rec.final.block(q)
        x, pp = b[index(0, 1)].real, b[index(1, 0)].real
        vx = b[index(0, 2)].real - x * x
        vp = b[index(2, 0)].real - pp * pp
        cov = b[index(1, 1)].real - pp * x
        dev = np.abs(b - gaussian_moments(x, pp, vx, vp, cov)) / np.maximum(1.0, np.abs(b))
        assert dev.max() < 1e-6


def test_unphysical_state_aborts():
    p = TwoModeParams()
    s = init_state(0.0, 0.0, p)
    s.y[index(0, 2)] = -5.0
    with pytest.raises(ClosureBreakdownError, match="closure"):
        integrate(s, p, t_max=1.0)


def test_driven_run_stays_in_bloch_ball():
    p = TwoModeParams().with_eta_omega(1.0)
    rec = run(0.5, 0.5, p, t_max=200.0)
    assert np.all(np.abs(rec.sigma_z) <= 1 + 1e-3)
    assert np.all(rec.sigma_minus_abs**2 + rec.sigma_z**2 / 4 <= 1 + 1e-3)
    assert np.all(rec.energy >= 0)


def test_dominant_frequency_synthetic():
    dt = 0.25
    t = np.arange(4000) * dt
    f = dominant_frequency(np.cos(2.5 * t + 0.3) + 0.2 * np.cos(1.6 * t), dt)
    assert abs(f - 2.5) < 2 * np.pi / (len(t) * dt)
    with pytest.raises(NoOscillationError):
        dominant_frequency(np.ones_like(t), dt)


def test_params_from_single_eta():
    p = TwoModeParams.from_single_eta(0.1)
    assert p.eta[1] == pytest.approx(0.1 * math.sqrt(1.6 / 2.5))
    assert p.with_eta_omega(0.5).Omega == pytest.approx(5.0)
    with pytest.raises(ValueError):
        TwoModeParams(kappa=(0.0, 0.1))
    with pytest.raises(ValueError):
        TwoModeParams(driven_ion=2)


def test_driven_ion_choice_is_a_phase_convention():
    # flipping the BR coupling sign maps X_BR -> -X_BR, a symmetry of an undisplaced BR start
    a = run(0.5, 0.0, TwoModeParams().with_eta_omega(1.0), t_max=100.0)
    b = run(0.5, 0.0, replace(TwoModeParams(), driven_ion=1).with_eta_omega(1.0), t_max=100.0)
    np.testing.assert_allclose(a.mean_n, b.mean_n, rtol=1e-6)


@pytest.mark.parametrize("q,expected", [(0, 0.75), (1, 0.40)])
def test_single_mode_consistency(q, expected):
    r = single_mode_consistency(TwoModeParams(), q)
    assert r.moment_equations == pytest.approx(expected, rel=0.1)
    assert r.relative_difference < 0.01


def test_threshold_sqrt_kappa_law():
    p = TwoModeParams()
    p4 = replace(p, kappa=(4 * p.kappa[0], 4 * p.kappa[1]))
    for q in (0, 1):
        assert single_mode_threshold(p4, q) / single_mode_threshold(p, q) == pytest.approx(2.0, rel=1e-3)
        expected = math.sqrt(p.kappa[q] * p.gamma) / (2 * p.eta[q] / p.eta[0])
        assert single_mode_threshold(p, q) == pytest.approx(expected, rel=0.01)


def test_phase_diagram_below_threshold():
    pd = phase_diagram(TwoModeParams(), [0.2], [0.5, 5.0], 0.5, t_max=800.0)
    assert pd.classification.shape == (1, 2)
    assert set(pd.classification.ravel()) == {"below-threshold"}
    np.testing.assert_allclose(pd.n_com, 13.0, rtol=0.1)
    np.testing.assert_allclose(pd.n_br, 8.2 * 1.5, rtol=0.5)


def test_phase_diagram_records_failed_cells():
    pd = phase_diagram(TwoModeParams(), [0.2], [0.5], 0.5, t_max=-1.0)
    assert pd.classification[0, 0] == "failed"
    assert (0, 0) in pd.errors
    with pytest.raises(ValueError):
        phase_diagram(TwoModeParams(), [], [0.5])
