import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from alignbounds.bounds_stoch import crbs_flat_closed, snr1_flat
from alignbounds.errors import NoTransition
from alignbounds.ezzb import (
    EzzbFlatInput,
    _term1_integrand,
    ezzb_flat,
    ezzb_flat_constants,
    ezzb_terms,
    log_upper_tail,
    overlap_factor,
    pmin,
    snr2,
    snr3,
    upper_tail,
)
from alignbounds.spectral import TWO_PI, Flat, ImageGeometry, build_frequency_grid, calibrate_noise

db = lambda x: 10 * math.log10(x)  # noqa: E731
lin = lambda x: 10 ** (x / 10)  # noqa: E731


def test_overlap_examples():
    assert overlap_factor([0, 0, 0, 0], 5.0) == 1.0
    assert overlap_factor([1.0, 5.0], 5.0) == 0.0
    assert overlap_factor([2.5, 2.5], 5.0) == 0.25
    assert overlap_factor([7.0, 0.0], 5.0) == 0.0


def _flat_setup(n=16, snr=1.0):
    g = build_frequency_grid(ImageGeometry(n, n))
    m = Flat(1.0)
    return g, m, calibrate_noise(m, snr)


def test_pmin_at_zero_offset_is_quarter():
    g, m, noise = _flat_setup()
    for K in (1, 3):
        assert pmin(np.zeros(2 * K), g, m, noise, K) == 0.25


@settings(max_examples=40, deadline=None)
@given(
    K=st.integers(1, 3),
    snr_db=st.floats(-20, 20),
    delta=st.lists(st.floats(-4, 4), min_size=6, max_size=6),
)
def test_pmin_range(K, snr_db, delta):
    g, m, noise = _flat_setup(8, lin(snr_db))
    p = pmin(np.array(delta[: 2 * K]), g, m, noise, K)
    assert 0.0 <= p <= 0.25


def test_pmin_nonincreasing_along_first_path():
    g, m, noise = _flat_setup(16, 1.0)
    K = 2
    vals = [pmin([h, h / 2, h / 2, h / 2], g, m, noise, K) for h in np.linspace(0, 2, 81)]
    assert all(b <= a + 1e-15 for a, b in zip(vals, vals[1:]))
    assert vals[-1] < vals[0]


def test_tail_functions():
    assert upper_tail(0.0) == 0.5
    assert float(log_upper_tail(30.0)) == pytest.approx(math.log(upper_tail(30.0)), rel=1e-12)
    assert np.isfinite(log_upper_tail(1e3))


def test_constants_vanish_at_low_snr():
    k = ezzb_flat_constants(EzzbFlatInput(2500, 5, 1e-12, 20))
    assert k.kappa1 < 1e-20 and k.kappa2 < 1e-20 and k.c2 < 1e-16
    assert -1e-16 < k.a <= 0 and 0 <= k.b < 1e-16


def test_b_saturates_at_half_pixels():
    k = ezzb_flat_constants(EzzbFlatInput(2500, 1, 1e12, 20))
    assert k.b == pytest.approx(1250, rel=1e-5)


@pytest.mark.parametrize("K,snr", [(1, 1.0), (10, 0.3), (50, 40.0)])
def test_constants_match_general_band_forms(K, snr):
    """Re-derivation from per-bin S/N and band-general formulas evaluated at W = 2 pi."""
    n_p, W = 2500, TWO_PI
    m = Flat(1.0, W)
    N = calibrate_noise(m, snr).level
    S = m.amplitude
    k1 = S * S * (K + 1) / (2 * N * N + 2 * (K + 1) * N * S)
    k2 = S * S * K / (N * N + (K + 1) * N * S)
    c2 = W**3 * n_p * k1 / (math.pi * 3 * 2**5)
    a = -W * n_p / (2 * math.pi) * math.log((math.sqrt(k2 + 1) + 1) / 2)
    b = W * n_p / (4 * math.pi) * (math.sqrt(k2 + 1) - 1) / math.sqrt(k2 + 1)
    got = ezzb_flat_constants(EzzbFlatInput(n_p, K, snr, 20))
    assert got.kappa1 == pytest.approx(k1, rel=1e-12)
    assert got.kappa2 == pytest.approx(k2, rel=1e-12)
    assert got.c2 == pytest.approx(c2, rel=1e-12)
    assert got.a == pytest.approx(a, rel=1e-12)
    assert got.b == pytest.approx(b, rel=1e-12)


def test_input_validation():
    for args in [(15, 1, 1.0, 2.0), (100, 0, 1.0, 2.0), (100, 1, 0.0, 2.0), (100, 1, 1.0, 0.5)]:
        with pytest.raises(ValueError):
            EzzbFlatInput(*args)


def test_low_snr_plateau():
    for K in (1, 10):
        v = ezzb_flat(EzzbFlatInput(2500, K, lin(-60), 20))
        assert v == pytest.approx(400 / 12, rel=0.01)


@pytest.mark.parametrize("K", [1, 10])
def test_high_snr_matches_crbs(K):
    for snr in (1e4, lin(40)):
        r = ezzb_flat(EzzbFlatInput(2500, K, snr, 20)) / crbs_flat_closed(2500, K, TWO_PI, snr)
        assert 0.95 <= r <= 1.05


def test_monotone_in_snr():
    vals = [ezzb_flat(EzzbFlatInput(2500, 10, lin(x), 20)) for x in np.linspace(-60, 60, 200)]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(vals, vals[1:]))


def test_terms_sum_and_dominance():
    for x in (-50, 0, 50):
        inp = EzzbFlatInput(2500, 10, lin(x), 20)
        t1, t2 = ezzb_terms(inp)
        assert t1 + t2 == ezzb_flat(inp)
    t1, t2 = ezzb_terms(EzzbFlatInput(2500, 10, lin(-60), 20))
    assert t2 / (t1 + t2) > 0.99
    t1, t2 = ezzb_terms(EzzbFlatInput(2500, 10, lin(40), 20))
    assert t1 / (t1 + t2) > 1 - 1e-12


def test_prior_variance_ceiling():
    # the low-SNR limit of the high-SNR term is 3K/(pi^2 (K+1)); see the plateau
    # discussion in the README.  For wide priors it is negligible against D^2/12.
    grid = np.linspace(-60, 60, 121)
    for K in (1, 10, 50):
        for x in grid:
            assert ezzb_flat(EzzbFlatInput(2500, K, lin(x), 100)) <= 100**2 / 12 * (1 + 1e-3)
            excess = 3 * K / (math.pi**2 * (K + 1))
            assert ezzb_flat(EzzbFlatInput(2500, K, lin(x), 20)) <= 400 / 12 + excess + 1e-9


def test_low_snr_term1_limit():
    K = 10
    t1, _ = ezzb_terms(EzzbFlatInput(2500, K, 1e-8, 20))
    assert t1 == pytest.approx(3 * K / (math.pi**2 * (K + 1)), rel=1e-4)


@pytest.mark.parametrize("n_p", [1600, 2500, 4096])
@pytest.mark.parametrize("K", [1, 10, 50])
def test_ezzb_dominates_crbs_in_transition(n_p, K):
    D = 20
    lo, hi = db(snr3(n_p, K)), db(snr2(n_p, K, D))
    for x in np.linspace(lo, hi, 15):
        s = lin(x)
        assert ezzb_flat(EzzbFlatInput(n_p, K, s, D)) >= crbs_flat_closed(n_p, K, TWO_PI, s)


def _simpson(n_p, upper, n):
    h = np.linspace(0, upper, n + 1)
    f = np.array([_term1_integrand(x, n_p) for x in h])
    return integrate.simpson(f, x=h)


@pytest.mark.parametrize("x", [-20, 0, 20, 40])
def test_quadrature_step_halving(x):
    inp = EzzbFlatInput(2500, 10, lin(x), 20)
    k = ezzb_flat_constants(inp)
    upper = math.sqrt(2 * k.b)
    coarse, fine = _simpson(inp.n_p, upper, 2048), _simpson(inp.n_p, upper, 4096)
    assert abs(fine - coarse) <= 1e-6 * abs(fine)
    t1, _ = ezzb_terms(inp)
    assert t1 == pytest.approx(fine / k.c2, rel=1e-6)


def test_threshold_ordering():
    s3, s2, s1 = snr3(2500, 10), snr2(2500, 10, 20), snr1_flat(10)
    assert s3 < s2 < s1


def test_frozen_threshold_values():
    assert db(snr3(2500, 10)) == pytest.approx(-13.87, abs=0.02)
    assert db(snr2(2500, 10, 20)) == pytest.approx(-6.29, abs=0.02)
    assert db(snr2(2500, 1, 20)) == pytest.approx(-1.32, abs=0.02)


def test_snr2_moves_down_with_image_size_and_frames():
    vals = [snr2(n, 1, 20) for n in (1600, 2500, 4096, 10000)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert db(snr2(2500, 1, 20)) - db(snr2(2500, 50, 20)) > 3.0
    assert snr3(2500, 50) < snr3(2500, 10) < snr3(2500, 1)


def test_snr2_equal_contribution():
    s = snr2(2500, 10, 20)
    k = ezzb_flat_constants(EzzbFlatInput(2500, 10, s, 20))
    ratio = (1 / (4 * k.c2)) / (400 / 6 * math.exp(k.log_tail_weight))
    # 0.01 dB bisection tolerance
    assert ratio == pytest.approx(1.0, rel=0.03)


def test_snr3_half_saturation():
    k = ezzb_flat_constants(EzzbFlatInput(2500, 10, snr3(2500, 10), 1))
    assert math.exp(k.log_tail_weight) == pytest.approx(0.25, rel=0.01)


def test_narrow_prior_has_no_transition():
    with pytest.raises(NoTransition) as info:
        snr2(2500, 10, 1.0)
    assert info.value.lo_db == -60 and info.value.hi_db == 60
