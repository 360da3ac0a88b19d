import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alignbounds.bounds_det import (
    DetBoundInput,
    GradientEnergy,
    ShiftPriorGG,
    bcrb,
    bcrb_dense_oracle,
    bcrb_pixel_oracle,
    crbd,
    crbd_known,
    gg_lambda2,
    gradient_energy,
)
from alignbounds.errors import SingularGradient, UnsupportedShape

energies = st.tuples(st.floats(1e-2, 1e4), st.floats(1e-2, 1e4), st.floats(-0.95, 0.95)).map(
    lambda t: GradientEnergy(t[0], t[1], t[2] * math.sqrt(t[0] * t[1]))
)


def _image(seed=0, shape=(16, 16)):
    return np.random.default_rng(seed).standard_normal(shape)


def test_constant_image_has_no_gradient():
    g = gradient_energy(np.full((8, 8), 2.0))
    assert (g.e_xx, g.e_yy, g.e_xy) == pytest.approx((0, 0, 0), abs=1e-20)
    with pytest.raises(SingularGradient):
        crbd(DetBoundInput(g, 1.0))


def test_pure_tone_energy():
    n = 32
    w0 = 2 * math.pi * 3 / n
    x = np.arange(n)
    u = np.tile(np.sin(w0 * x), (n, 1))
    g = gradient_energy(u)
    assert g.e_xx == pytest.approx(w0**2 * n * n / 2, rel=1e-12)
    assert abs(g.e_yy) < 1e-18 and abs(g.e_xy) < 1e-12


def test_transpose_swaps_energies():
    u = _image(1, (8, 12))
    a, b = gradient_energy(u), gradient_energy(u.T)
    assert a.e_xx == pytest.approx(b.e_yy, rel=1e-12)
    assert a.e_yy == pytest.approx(b.e_xx, rel=1e-12)
    assert a.e_xy == pytest.approx(b.e_xy, rel=1e-9, abs=1e-9)


def test_symmetric_examples():
    g = GradientEnergy(50.0, 50.0, 0.0)
    assert crbd(DetBoundInput(g, 1.0)) == pytest.approx(2 / 50)
    assert crbd_known(DetBoundInput(g, 1.0)) == pytest.approx(1 / 50)


@settings(max_examples=100, deadline=None)
@given(g=energies, s2=st.floats(1e-6, 1e6), t=st.floats(1e-3, 1e3))
def test_crbd_identities(g, s2, t):
    inp = DetBoundInput(g, s2, 1)
    assert crbd_known(inp) == crbd(inp) / 2
    assert crbd(DetBoundInput(g, s2, 100)) == crbd(inp)
    assert crbd(DetBoundInput(g, s2 * t, 1)) == pytest.approx(t * crbd(inp), rel=1e-12)


def test_lambda2_examples():
    assert gg_lambda2(2, 1) == pytest.approx(1.0, rel=1e-14)
    assert gg_lambda2(2, 3) == pytest.approx(9.0, rel=1e-14)
    # Laplacian prior: Gamma(1)^2 / (Gamma(3) Gamma(1)) = 1/2
    assert gg_lambda2(1, 1) == pytest.approx(0.5, rel=1e-14)


@settings(max_examples=100, deadline=None)
@given(c=st.floats(0.5001, 64), d=st.floats(1e-3, 100))
def test_lambda2_positive_and_quadratic(c, d):
    v = gg_lambda2(c, d)
    assert v > 0 and math.isfinite(v)
    assert gg_lambda2(c, 2 * d) == pytest.approx(4 * v, rel=1e-12)


@pytest.mark.parametrize("c", [0.5, 0.2, -1.0])
def test_lambda2_rejects_heavy_shapes(c):
    with pytest.raises(UnsupportedShape):
        gg_lambda2(c, 1.0)


def test_prior_object():
    assert ShiftPriorGG(2.0, 2.0).lambda2 == pytest.approx(4.0)
    with pytest.raises(ValueError):
        ShiftPriorGG(2.0, 0.0)


@pytest.mark.parametrize("K", [1, 2, 5, 8])
def test_bcrb_matches_dense_oracle(K):
    g = gradient_energy(_image(K))
    for s2 in (1e-3, 1.0, 1e3):
        for lam2 in (1e-2, 1.0, 1e2):
            inp = DetBoundInput(g, s2, K)
            assert bcrb(inp, lam2) == pytest.approx(bcrb_dense_oracle(inp, lam2), rel=1e-10)


def test_bcrb_k2_closed_form():
    # Q = q I: eigenvalues 1 and 1/3 of I - 11^T/3
    q, s2, lam2 = 40.0, 2.0, 0.5
    inp = DetBoundInput(GradientEnergy(q, q, 0.0), s2, 2)
    expected = (2 / (q / s2 + 1 / lam2) + 2 / (q / (3 * s2) + 1 / lam2)) / 4
    assert bcrb(inp, lam2) == pytest.approx(expected, rel=1e-13)


def test_bcrb_k1_is_2x2_inverse():
    g = GradientEnergy(30.0, 20.0, 5.0)
    s2, lam2 = 1.5, 0.7
    m = g.matrix / (2 * s2) + np.eye(2) / lam2
    assert bcrb(DetBoundInput(g, s2, 1), lam2) == pytest.approx(np.trace(np.linalg.inv(m)) / 2, rel=1e-13)


@pytest.mark.parametrize("K", [1, 3])
def test_bcrb_keeps_image_as_nuisance(K):
    """Pixel-level oracle: the image is an explicit unknown, not pre-eliminated."""
    u = _image(7, (6, 6))
    g = gradient_energy(u)
    for s2, lam2 in ((0.1, 1.0), (10.0, 0.3)):
        got = bcrb(DetBoundInput(g, s2, K), lam2)
        assert got == pytest.approx(bcrb_pixel_oracle(u, s2, K, lam2), rel=1e-9)


def test_bcrb_limits():
    g = gradient_energy(_image(4))
    inp = DetBoundInput(g, 1.0, 5)
    assert bcrb(inp, 1e12) == pytest.approx(crbd(inp), rel=1e-6)
    assert bcrb(inp, 1e12) <= crbd(inp)
    assert bcrb(DetBoundInput(g, 1e14, 5), 2.0) == pytest.approx(2.0, rel=1e-4)


@settings(max_examples=40, deadline=None)
@given(g=energies, s2=st.floats(1e-4, 1e4), K=st.integers(1, 8))
def test_bcrb_below_crbd_and_monotone_in_prior(g, s2, K):
    inp = DetBoundInput(g, s2, K)
    lams = np.logspace(-4, 8, 25)
    vals = [bcrb(inp, lam) for lam in lams]
    assert all(b >= a * (1 - 1e-12) for a, b in zip(vals, vals[1:]))
    assert max(vals) <= crbd(inp) * (1 + 1e-12)
    assert bcrb(inp, lams[0]) <= lams[0]


def test_input_validation():
    g = GradientEnergy(1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        DetBoundInput(g, 0.0)
    with pytest.raises(ValueError):
        DetBoundInput(g, 1.0, 0)
    with pytest.raises(ValueError):
        GradientEnergy(-1.0, 1.0, 0.0)
    with pytest.raises(SingularGradient):
        crbd(DetBoundInput(GradientEnergy(1.0, 1.0, 1.0), 1.0))
