import math
from dataclasses import replace

import numpy as np
import pytest

from aqis.metrics import (
    EchoCurve,
    TauSweepSeries,
    eigenbasis_observable,
    loschmidt_adiabatic,
    otoc_adiabatic,
    otoc_series,
    phase_uniformity,
    post_cycle_expectation,
    scaling_fit,
    scrambling_sigma,
    tau_sweep,
    tracked_levels,
)
from aqis.models import lmg, observable_matrix
from aqis.propagation import RampProtocol, phase_table
from aqis.spectrum import doublet_pairing, spectral_decomposition
from aqis.states import PureState, expectation, microcanonical_sb


@pytest.fixture(scope="module")
def lmg64():
    model = lmg(64)
    dec = spectral_decomposition(model, 0.0)
    Sx = observable_matrix(model, "Sx")
    d = doublet_pairing(dec, Sx)
    table = phase_table(model, RampProtocol(0.0, 1.25, 1e3), levels=16, tau_max=1e4, workers=1)
    return model, dec, Sx, d, table


def zero_phases(table):
    return replace(table, rates=np.where(table.tracked, 0.0, np.nan))


def test_zero_phases_return_initial_value(lmg64):
    model, dec, Sx, d, table = lmg64
    st = microcanonical_sb(dec, d, 8)
    V = eigenbasis_observable(dec, Sx)
    got = post_cycle_expectation(st, zero_phases(table), V)
    assert got == pytest.approx(expectation(st, Sx), abs=1e-12)


def test_single_doublet_cosine_law(lmg64):
    model, dec, Sx, d, table = lmg64
    st = microcanonical_sb(dec, d, 1)
    V = eigenbasis_observable(dec, Sx)
    for tau in (1e3, 2.5e3, 7e3):
        t = table.with_tau(tau)
        want = math.cos(t.delta_phi[0]) * expectation(st, Sx)
        assert post_cycle_expectation(st, t, V) == pytest.approx(want, abs=1e-10)


def test_full_and_doublet_sums_agree_at_zero_coupling(lmg64):
    model, dec, Sx, d, table = lmg64
    st = microcanonical_sb(dec, d, 12)
    V = eigenbasis_observable(dec, Sx)
    full = post_cycle_expectation(st, table, V)
    reduced = post_cycle_expectation(st, table, doublets=d, approx=True)
    assert full == pytest.approx(reduced, abs=1e-10)


def test_global_phase_invariance(lmg64):
    model, dec, Sx, d, _ = lmg64
    st = microcanonical_sb(dec, d, 8)
    table = phase_table(model, RampProtocol(0.0, 1.25, 512.0), levels=8, workers=1)
    V = eigenbasis_observable(dec, Sx)
    shifted = replace(table, rates=table.rates + 0.5)
    assert post_cycle_expectation(st, table, V) == pytest.approx(post_cycle_expectation(st, shifted, V), abs=1e-12)


def test_tracked_levels(lmg64):
    model, dec, Sx, d, table = lmg64
    st = microcanonical_sb(dec, d, 5)
    assert tracked_levels(st) == (5, 5)
    assert tracked_levels(st, margin=2) == (7, 7)


def test_tau_sweep_single_doublet_is_a_cosine(lmg64):
    model, dec, Sx, d, table = lmg64
    st = microcanonical_sb(dec, d, 1)
    V = eigenbasis_observable(dec, Sx)
    taus = np.linspace(1e3, 1e4, 64)
    series = tau_sweep(st, table, V, taus)
    rp, rm = table.doublet_rates()
    want = np.cos(2 * taus * (rp[0] - rm[0])) * expectation(st, Sx)
    np.testing.assert_allclose(series.values, want, atol=1e-9)
    assert series.initial == pytest.approx(expectation(st, Sx), abs=1e-10)


def test_tau_sweep_without_scrambling_is_constant(lmg64):
    model, dec, Sx, d, _ = lmg64
    st = microcanonical_sb(dec, d, 6)
    confined = phase_table(model, RampProtocol(0.0, 0.0, 1e3), levels=6, workers=1)
    series = tau_sweep(st, confined, eigenbasis_observable(dec, Sx))
    assert series.variance < 1e-20
    assert scrambling_sigma(series) < 1e-10


def test_tau_sweep_rejects_short_taus(lmg64):
    model, dec, Sx, d, table = lmg64
    st = microcanonical_sb(dec, d, 2)
    with pytest.raises(ValueError):
        tau_sweep(st, table, eigenbasis_observable(dec, Sx), [10.0, 20.0])


def test_variance_decreases_with_support():
    model = lmg(1000)
    dec = spectral_decomposition(model, 0.0)
    Sx = observable_matrix(model, "Sx")
    d = doublet_pairing(dec, Sx)
    table = phase_table(model, RampProtocol(0.0, 1.25, 1e3), levels=256, tau_max=1e4)
    sig = []
    for n_mc in (4, 64, 256):
        st = microcanonical_sb(dec, d, n_mc)
        series = tau_sweep(st, table, doublets=d, approx=True)
        sig.append(scrambling_sigma(series) / series.initial)
    assert sig[0] > sig[1] > sig[2]


def test_sigma_of_two_values():
    s = TauSweepSeries(np.array([1e3, 2e3]), np.array([0.3, -0.3]), 1.0)
    assert scrambling_sigma(s) == pytest.approx(0.3, abs=1e-15)
    assert scrambling_sigma(TauSweepSeries(np.array([1e3, 2e3]), np.array([0.2, 0.2]), 1.0)) == 0.0


def test_scaling_fit_on_exact_power_law():
    n = np.array([4, 8, 16, 32, 64, 128, 256, 512])
    fit = scaling_fit(np.column_stack([n, n ** (-2 / 3)]))
    assert fit.exponent == pytest.approx(-2 / 3, abs=1e-10)
    assert fit.prefactor == pytest.approx(1.0, abs=1e-10)
    flat = scaling_fit(np.column_stack([n, np.full(n.size, 0.3)]))
    assert flat.exponent == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        scaling_fit([[4, 1.0], [8, 0.5]])


def test_echo_basics(lmg64):
    model, dec, Sx, d, table = lmg64
    st = microcanonical_sb(dec, d, 8)
    dt = np.logspace(-3, 1, 50)
    curve = loschmidt_adiabatic(st, table, np.r_[0.0, dt])
    assert curve.L[0] == 1.0
    eig = PureState(np.eye(model.dim)[2], model, dec)
    flat = loschmidt_adiabatic(eig, table, dt)
    np.testing.assert_allclose(flat.L, 1.0, atol=1e-15)
    with pytest.raises(ValueError):
        loschmidt_adiabatic(st, table, dt, tag="bogus")


def test_echo_two_level_beat(lmg64):
    model, dec, Sx, d, table = lmg64
    st = microcanonical_sb(dec, d, 1)
    dt = np.linspace(0.0, 50.0, 101)
    curve = loschmidt_adiabatic(st, table, dt, tag="phase-rate")
    rp, rm = table.doublet_rates()
    np.testing.assert_allclose(curve.L, np.abs(np.cos(dt * (rp[0] - rm[0]) / 2)), atol=1e-12)


def test_echo_slope_and_revival_helpers():
    dt = np.logspace(-2, 2, 200)
    curve = EchoCurve(dt, np.minimum(1.0, 0.1 / dt), "phase-rate")
    assert curve.decay_slope() == pytest.approx(-1.0, abs=1e-9)
    assert math.isnan(curve.max_revival())
    beat = EchoCurve(dt, np.abs(np.cos(dt)), "phase-rate")
    assert beat.max_revival() > 0.99


def test_otoc_identity_at_equal_times(lmg64):
    model, dec, Sx, d, table = lmg64
    st = microcanonical_sb(dec, d, 8)
    V = eigenbasis_observable(dec, Sx)
    got = otoc_adiabatic(st, V, replace(table, rates=np.zeros_like(table.rates)))
    phys = dec.vectors @ st.coefficients
    x2 = Sx.matrix @ (Sx.matrix @ phys)
    want = float(np.vdot(x2, x2).real)
    assert abs(got - want) / want < 1e-10


def test_otoc_at_zero_coupling_reduces_to_doublet_sum(lmg64):
    # Sx is block diagonal in the doublets at g0 = 0, so the OTOC only sees delta phi
    model, dec, Sx, d, table = lmg64
    st = microcanonical_sb(dec, d, 6)
    taus = np.linspace(1e3, 1e4, 16)
    series = otoc_series(st, table, Sx, taus)
    m4 = d.m[:6] ** 4
    for tau, val in zip(taus, series.rescaled):
        dphi = table.with_tau(tau).delta_phi[:6]
        assert val == pytest.approx(float(np.sum(m4 * np.cos(2 * dphi)) / m4.sum()), abs=1e-9)


def test_uniformity_of_equispaced_and_identical_phases(lmg64):
    model, dec, Sx, d, table = lmg64
    n = table.delta_phi.size
    rates = np.full_like(table.rates, np.nan)
    n0 = table.sizes[0]
    j = np.arange(n)
    rates[:n] = 2 * np.pi * j / n / (2 * table.protocol.tau)
    rates[n0 : n0 + n] = 0.0
    equi = phase_uniformity(replace(table, rates=rates), (0, n), bins=4)
    assert equi.D <= 1.0 / n + 1e-12
    rates[:n] = 0.0
    same = phase_uniformity(replace(table, rates=rates), (0, n), bins=4)
    assert same.D == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(np.hypot(*same.circle_points.T), 1.0)
    with pytest.raises(ValueError):
        phase_uniformity(table, (0, n + 1))


def test_negligible_untracked_tail_is_dropped(lmg64):
    model, dec, Sx, d, table = lmg64
    V = eigenbasis_observable(dec, Sx)
    base = microcanonical_sb(dec, d, 8).coefficients
    for amp, fine in ((1e-7, True), (1e-5, False)):
        c = base.copy()
        c[20] = amp  # level 20 is beyond the 16 the table tracks
        st = PureState(c / np.linalg.norm(c), model, dec)
        if fine:
            series = tau_sweep(st, table, V)
            assert post_cycle_expectation(st, table, V) == pytest.approx(series.values[0], abs=1e-9)
        else:
            with pytest.raises(ValueError, match="does not track"):
                tau_sweep(st, table, V)
