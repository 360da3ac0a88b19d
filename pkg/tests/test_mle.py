import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from alignbounds.errors import DegenerateInput
from alignbounds.mle import (
    RegistrationConfig,
    mle_avg,
    mle_pairwise,
    register_pair,
    rmse,
    shifted_average,
)
from alignbounds.spectral import ImageGeometry, sigma2_for_snr
from alignbounds.synth import TrialSeed, UniformBox, fourier_shift, gen_flat_image, make_observations

G64 = ImageGeometry(64, 64)
EPS = 1e-9


def _obs(K, seed, trial=0, snr=None):
    s = TrialSeed(seed, trial)
    u = gen_flat_image(G64, s)
    s2 = 0.0 if snr is None else sigma2_for_snr(u, snr)
    return make_observations(u, K, UniformBox(5), s2, s)


def test_config_validation():
    for kw in ({"upsample_factor": 0}, {"tol": 0.0}, {"max_iters": 0}):
        with pytest.raises(ValueError):
            RegistrationConfig(**kw)


def test_register_self_is_zero():
    u = gen_flat_image(G64, TrialSeed(0))
    for up in (1, 10, 100):
        assert np.array_equal(register_pair(u, u, up), [0.0, 0.0])


def test_register_integer_shift_exact():
    u = gen_flat_image(G64, TrialSeed(1))
    assert np.array_equal(register_pair(fourier_shift(u, (3, -2)), u, 100), [3.0, -2.0])


def test_register_subpixel_shift():
    u = gen_flat_image(G64, TrialSeed(2))
    est = register_pair(fourier_shift(u, (1.25, -0.5)), u, 100)
    assert np.max(np.abs(est - [1.25, -0.5])) <= 0.01 + EPS


@pytest.mark.parametrize("up", [10, 100, 1000])
def test_register_random_shifts_at_resolution(up):
    rng = np.random.default_rng(up)
    for t in range(5):
        u = gen_flat_image(G64, TrialSeed(3, t))
        tau = rng.uniform(-5, 5, 2)
        est = register_pair(fourier_shift(u, tau), u, up)
        assert np.max(np.abs(est - tau)) <= 1 / up + EPS


def test_register_errors():
    u = gen_flat_image(G64, TrialSeed(0))
    with pytest.raises(DegenerateInput):
        register_pair(np.zeros_like(u), u)
    with pytest.raises(ValueError):
        register_pair(u, u[:32])


def test_shifted_average_trivial_cases():
    u = gen_flat_image(G64, TrialSeed(0))
    assert np.allclose(shifted_average(u, [[0, 0]]), u, atol=1e-12)
    assert np.allclose(shifted_average(np.stack([u, u, u]), np.zeros((3, 2))), u, atol=1e-12)


def test_shifted_average_undoes_shifts():
    u = gen_flat_image(G64, TrialSeed(0))
    taus = np.array([[0, 0], [1.5, -2.25], [-3.1, 0.7]])
    frames = np.stack([fourier_shift(u, t) for t in taus])
    avg = shifted_average(frames, taus)
    # Nyquist lines are not invertible under the cosine convention; compare the rest
    f = np.fft.fft2(avg - u)
    f[32, :] = 0
    f[:, 32] = 0
    assert np.max(np.abs(f)) < 1e-9


def test_shifted_average_noise_variance():
    K, v = 9, []
    for t in range(20):
        obs = make_observations(np.zeros((64, 64)), K, UniformBox(5), 1.0, TrialSeed(4, t))
        taus = np.vstack([[0, 0], obs.true_shifts])
        v.append(shifted_average(obs.frames, taus).var())
    assert np.mean(v) == pytest.approx(1 / (K + 1), rel=0.10)


def test_noiseless_recovery():
    its = []
    for t in range(10):
        obs = _obs(10, 5, t)
        r = mle_avg(obs)
        assert r.converged
        assert np.max(np.abs(r.shifts - obs.true_shifts)) <= 0.01 + EPS
        its.append(r.iterations)
        # after the first pass, frames only jitter by single grid steps
        assert max(r.per_iter_shift_delta[1:], default=0.0) <= 0.01 + EPS
    assert np.median(its) <= 3


def test_result_fields():
    obs = _obs(4, 6, snr=10.0)
    cfg = RegistrationConfig(max_iters=1)
    r = mle_avg(obs, cfg)
    assert r.shifts.shape == (4, 2) and np.all(np.isfinite(r.shifts))
    assert r.iterations == 1 and r.converged == (r.per_iter_shift_delta[0] < cfg.tol)
    assert r.config is cfg
    r = mle_avg(obs)
    assert r.converged and r.per_iter_shift_delta[-1] < 1e-3
    assert len(r.per_iter_shift_delta) == len(r.objective) == r.iterations
    assert r.fused.shape == (64, 64)
    assert 0 <= r.n_nonmonotone < max(r.iterations, 1)


def test_gauge_invariance():
    obs = _obs(6, 7, snr=3.0)
    base = mle_avg(obs)
    init = np.vstack([[0, 0], base.shifts])
    for offset in ([0.37, -1.2], [4.0, 2.5]):
        r = mle_avg(obs, initial_shifts=init + np.array(offset))
        assert np.max(np.abs(r.shifts - base.shifts)) <= 0.01 + EPS


def test_k1_matches_pairwise():
    for t in range(10):
        for snr in (None, 3.0):
            obs = _obs(1, 8, t, snr)
            r = mle_avg(obs)
            assert np.max(np.abs(r.shifts - mle_pairwise(obs))) <= 1e-12


def test_initial_shift_forms():
    obs = _obs(2, 9)
    a = mle_avg(obs, initial_shifts=obs.true_shifts)
    b = mle_avg(obs, initial_shifts=np.vstack([[0, 0], obs.true_shifts]))
    assert np.array_equal(a.shifts, b.shifts)
    with pytest.raises(ValueError):
        mle_avg(obs, initial_shifts=np.zeros((5, 2)))


def test_accepts_plain_arrays_and_rejects_bad_input():
    obs = _obs(2, 10)
    assert np.array_equal(mle_avg(obs.frames).shifts, mle_avg(obs).shifts)
    with pytest.raises(ValueError):
        mle_avg(obs.frames[:1])
    frames = obs.frames.copy()
    frames[2] = 0
    with pytest.raises(DegenerateInput):
        mle_avg(frames)
    with pytest.raises(ValueError):
        mle_avg(obs, RegistrationConfig(ref_frame=5))


def test_deterministic_across_thread_limits():
    obs = _obs(10, 11, snr=1.0)
    a = mle_avg(obs)
    with threadpool_limits(limits=1):
        b = mle_avg(obs)
    assert a.shifts.tobytes() == b.shifts.tobytes()


def test_leave_one_out_variant_recovers_noiseless_shifts():
    obs = _obs(5, 12)
    r = mle_avg(obs, RegistrationConfig(exclude_self=True))
    assert np.max(np.abs(r.shifts - obs.true_shifts)) <= 0.01 + EPS


def test_upsampling_sensitivity():
    """At high SNR the estimate settles once the grid is finer than the noise."""
    errs = {}
    for up in (10, 100, 1000):
        e = []
        for t in range(8):
            obs = _obs(1, 13, t, snr=1000.0)
            e.append(rmse(mle_avg(obs, RegistrationConfig(upsample_factor=up, tol=1e-4)).shifts, obs.true_shifts))
        errs[up] = float(np.mean(e))
    assert errs[100] < errs[10]
    assert errs[1000] == pytest.approx(errs[100], abs=0.01)


def test_rmse_helper():
    assert rmse([[1, 1]], [[0, 0]]) == 1.0
    assert rmse([[3, 0]], [[0, 4]]) == pytest.approx(np.sqrt(12.5))
