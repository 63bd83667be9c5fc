import numpy as np
import pytest

from conftest import crandn, random_params
from lmlds import kernels
from lmlds.errors import NumericalError
from lmlds.gaussian_lds import (
    CovarianceMode,
    SliceLDSParams,
    em_fit,
    em_step,
    exact_posterior_bruteforce,
    forecast,
    kalman_filter,
    rts_smoother,
    sample_trajectory,
    smooth,
)


def cn_logpdf(y, mean, cov):
    d = y - mean
    sign, logdet = np.linalg.slogdet(cov)
    return float(-len(y) * np.log(np.pi) - logdet.real - np.vdot(d, np.linalg.solve(cov, d)).real)


def lemma_posterior(params, y):
    # single-observation posterior in information form
    qi = np.linalg.inv(params.q0)
    ri = np.linalg.inv(params.r)
    ch = params.c.conj().T
    sigma = np.linalg.inv(qi + ch @ ri @ params.c)
    mean = sigma @ (ch @ ri @ y + qi @ params.u0)
    return mean, sigma


def assert_psd(m, tol=1e-10):
    np.testing.assert_allclose(m, m.conj().swapaxes(-1, -2), atol=1e-12)
    assert np.min(np.linalg.eigvalsh(m)) >= -tol


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    return request.param


def test_scalar_noiseless_identity(backend):
    ys = np.array([2.0, 2.0, 2.0, 2.0])
    p = SliceLDSParams(u0=[2.0], q0=[[0.0]], a=[[1.0]], q=[[0.0]], c=[[1.0]], r=[[1e-12]])
    f = kalman_filter(p, ys[:, None], backend)
    np.testing.assert_allclose(f.filtered_means[:, 0], ys, atol=1e-6)


def test_single_step_matches_lemma(rng, backend):
    p = random_params(rng, 3, 2)
    y = crandn(rng, 3)
    f = kalman_filter(p, y[None, :], backend)
    mean, sigma = lemma_posterior(p, y)
    np.testing.assert_allclose(f.filtered_means[0], mean, atol=1e-10)
    np.testing.assert_allclose(f.filtered_covs[0], sigma, atol=1e-10)
    marginal_cov = p.c @ p.q0 @ p.c.conj().T + p.r
    assert abs(f.log_likelihood - cn_logpdf(y, p.c @ p.u0, marginal_cov)) < 1e-10


def test_filter_matches_bruteforce(rng, backend):
    p = random_params(rng, 2, 2)
    ys = crandn(rng, 4, 2)
    f = kalman_filter(p, ys, backend)
    for n in range(1, 5):
        means, cov, ll = exact_posterior_bruteforce(p, ys[:n])
        np.testing.assert_allclose(f.filtered_means[n - 1], means[-1], atol=1e-8)
        np.testing.assert_allclose(f.filtered_covs[n - 1], cov[-2:, -2:], atol=1e-8)
    assert abs(f.log_likelihood - ll) < 1e-8


def test_smoother_matches_bruteforce(rng, backend):
    for _ in range(10):
        j, i, n = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 5)
        p = random_params(rng, i, j)
        ys = crandn(rng, n, i)
        sm = smooth(p, ys, backend)
        means, cov, _ = exact_posterior_bruteforce(p, ys)
        np.testing.assert_allclose(sm.smoothed_means, means, atol=1e-8)
        for t in range(n):
            np.testing.assert_allclose(sm.smoothed_covs[t], cov[t * j : (t + 1) * j, t * j : (t + 1) * j], atol=1e-8)
            if t:
                block = cov[t * j : (t + 1) * j, (t - 1) * j : t * j]
                np.testing.assert_allclose(sm.cross_covs[t], block, atol=1e-8)
        assert_psd(sm.smoothed_covs)


def test_smoother_last_step_equals_filter(rng, backend):
    p = random_params(rng, 3, 2)
    ys = crandn(rng, 6, 3)
    f = kalman_filter(p, ys, backend)
    sm = rts_smoother(p, f, backend)
    assert np.array_equal(sm.smoothed_means[-1], f.filtered_means[-1])
    assert np.array_equal(sm.smoothed_covs[-1], f.filtered_covs[-1])


def test_noiseless_smoother_inverts_projection(rng, backend):
    c = np.array([[2.0, 1.0], [0.5, -1.0]])
    a = np.array([[0.9, 0.1], [-0.2, 0.7]])
    p = SliceLDSParams(u0=[0, 0], q0=np.eye(2), a=a, q=np.zeros((2, 2)), c=c, r=1e-12 * np.eye(2))
    x = [rng.standard_normal(2)]
    for _ in range(4):
        x.append(a @ x[-1])
    ys = np.array(x) @ c.T
    sm = smooth(p, ys, backend)
    np.testing.assert_allclose(sm.smoothed_means, np.linalg.solve(c, ys.T).T, atol=1e-5)


def test_bruteforce_decouples_when_a_is_zero(rng):
    p = random_params(rng, 2, 2).replace(a=np.zeros((2, 2)))
    ys = crandn(rng, 3, 2)
    means, _, _ = exact_posterior_bruteforce(p, ys)
    alone, _, _ = exact_posterior_bruteforce(p.replace(u0=np.zeros(2), q0=p.q), ys[2:])
    np.testing.assert_allclose(means[2], alone[0], atol=1e-12)
    single, _, _ = exact_posterior_bruteforce(p, ys[:1])
    mean, _ = lemma_posterior(p, ys[0])
    np.testing.assert_allclose(single[0], mean, atol=1e-10)


def test_bruteforce_size_limit(rng):
    p = random_params(rng, 1, 3)
    with pytest.raises(ValueError):
        exact_posterior_bruteforce(p, np.zeros((22, 1)))


def test_singular_innovation_reports_step(backend):
    p = SliceLDSParams(u0=[0.0], q0=[[1.0]], a=[[0.0]], q=[[0.0]], c=[[1.0]], r=[[0.0]])
    with pytest.raises(NumericalError) as info:
        kalman_filter(p, np.ones((3, 1)), backend)
    assert info.value.step == 1


def test_real_input_closure(rng, backend):
    p = random_params(rng, 3, 2, complex_=False)
    ys = rng.standard_normal((20, 3))
    sm = smooth(p, ys, backend)
    for arr in (sm.filtered_means, sm.filtered_covs, sm.smoothed_means, sm.smoothed_covs, sm.cross_covs):
        assert np.max(np.abs(arr.imag)) <= 1e-12
    fitted, _ = em_fit(p, ys, max_iters=5, backend=backend)
    for arr in fitted.as_dict().values():
        assert np.max(np.abs(arr.imag)) <= 1e-12


def test_backends_agree(rng):
    p = random_params(rng, 4, 3)
    ys = crandn(rng, 40, 4)
    a = smooth(p, ys, "numba")
    b = smooth(p, ys, "numpy")
    np.testing.assert_allclose(a.smoothed_means, b.smoothed_means, atol=1e-10)
    np.testing.assert_allclose(a.smoothed_covs, b.smoothed_covs, atol=1e-10)
    np.testing.assert_allclose(a.cross_covs, b.cross_covs, atol=1e-10)
    assert abs(a.log_likelihood - b.log_likelihood) < 1e-8


def test_backend_switch():
    before = kernels.get_backend()
    try:
        kernels.set_backend("numpy")
        assert kernels.get_backend() == "numpy"
    finally:
        kernels.set_backend(before)
    with pytest.raises(ValueError):
        kernels.set_backend("fortran")


# --- EM --------------------------------------------------------------------


@pytest.mark.parametrize("mode", list(CovarianceMode))
def test_em_monotone_and_covariances_valid(rng, mode):
    truth = random_params(rng, 3, 2, complex_=True)
    ys, _ = sample_trajectory(truth, 120, rng)
    init = random_params(rng, 3, 2)
    fitted, trace = em_fit(init, ys, max_iters=30, mode=mode, tol=None)
    assert len(trace) == 31
    assert np.all(np.diff(trace) >= -1e-8)
    for name in ("q0", "q", "r"):
        assert_psd(getattr(fitted, name))
        if mode is CovarianceMode.DIAGONAL:
            m = getattr(fitted, name)
            assert not np.any(m - np.diag(np.diag(m)))


def test_em_stops_on_tolerance(rng):
    truth = random_params(rng, 3, 2)
    ys, _ = sample_trajectory(truth, 80, rng)
    _, trace = em_fit(truth, ys, max_iters=500, tol=1e-4)
    assert len(trace) < 501
    assert trace[-1] - trace[-2] < 1e-4 * abs(trace[-2])
    assert np.all(np.diff(trace)[:-1] >= 1e-4 * np.abs(trace[:-2]))


def test_em_fixed_point_self_consistency(rng):
    truth = random_params(rng, 3, 2, complex_=False)
    ys, _ = sample_trajectory(truth, 150, rng, real=True)
    converged, trace = em_fit(truth, ys, max_iters=3000, tol=1e-13)
    sm = smooth(converged, ys)
    again = em_step(converged, ys, sm, CovarianceMode.FULL)
    assert again.max_change(converged) < 1e-6
    assert np.all(np.diff(trace) >= -1e-8)


def test_em_single_observation(rng):
    init = random_params(rng, 3, 2)
    fitted, trace = em_fit(init, crandn(rng, 1, 3), max_iters=3)
    assert np.array_equal(fitted.a, init.a)
    assert np.array_equal(fitted.q, init.q)
    assert not np.array_equal(fitted.c, init.c)


def test_em_rejects_zero_iterations(rng):
    with pytest.raises(ValueError):
        em_fit(random_params(rng, 2, 1), crandn(rng, 5, 2), max_iters=0)


def test_em_failure_reports_iteration():
    p = SliceLDSParams(u0=[0.0], q0=[[1.0]], a=[[0.0]], q=[[0.0]], c=[[1.0]], r=[[0.0]])
    with pytest.raises(NumericalError) as info:
        em_fit(p, np.ones((3, 1)), max_iters=2)
    assert info.value.iteration == 0 and info.value.step == 1


# --- sampling and forecasting ------------------------------------------------


def test_zero_noise_orbit(rng):
    p = random_params(rng, 3, 2)
    z = np.zeros((2, 2))
    p = p.replace(q0=z, q=z, r=np.zeros((3, 3)))
    ys, _ = sample_trajectory(p, 6, 3)
    x = p.u0
    for n in range(6):
        np.testing.assert_allclose(ys[n], p.c @ x, atol=1e-12)
        x = p.a @ x


def test_iid_when_transition_is_zero(rng):
    q = np.array([[2.0, 0.5], [0.5, 1.0]])
    p = SliceLDSParams(u0=[5.0, 5.0], q0=np.eye(2), a=np.zeros((2, 2)), q=q, c=np.eye(2), r=np.zeros((2, 2)))
    ys, xs = sample_trajectory(p, 20001, 11)
    np.testing.assert_array_equal(ys, xs)
    emp = ys[1:].T @ ys[1:].conj() / 20000
    np.testing.assert_allclose(emp, q, atol=0.08)


def test_initial_state_covariance_monte_carlo():
    q0 = np.array([[2.0, 0.6 + 0.3j], [0.6 - 0.3j, 1.0]])
    p = SliceLDSParams(u0=[0.0, 0.0], q0=q0, a=np.eye(2), q=np.eye(2), c=np.eye(2), r=np.eye(2))
    rng = np.random.default_rng(5)
    x1 = np.array([sample_trajectory(p, 1, rng)[1][0] for _ in range(10000)])
    emp = x1.T @ x1.conj() / len(x1)
    assert np.linalg.norm(emp - q0) / np.linalg.norm(q0) < 0.05


def test_sampling_is_deterministic(rng):
    p = random_params(rng, 2, 2)
    a = sample_trajectory(p, 10, 42)
    b = sample_trajectory(p, 10, 42)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_forecast_scalar():
    p = SliceLDSParams(u0=[0.0], q0=[[1.0]], a=[[0.5]], q=[[1.0]], c=[[2.0]], r=[[1.0]])
    np.testing.assert_allclose(forecast(p, [1.0], 3)[:, 0], [1.0, 0.5, 0.25])


def test_forecast_identity_dynamics(rng):
    p = random_params(rng, 3, 2).replace(a=np.eye(2))
    mean = crandn(rng, 2)
    out = forecast(p, mean, 4)
    for h in range(4):
        np.testing.assert_allclose(out[h], p.c @ mean)
    other = random_params(rng, 3, 2)
    np.testing.assert_allclose(forecast(other, mean, 1)[0], other.c @ other.a @ mean)
    with pytest.raises(ValueError):
        forecast(p, mean, 0)


def test_params_validate_shapes():
    with pytest.raises(ValueError):
        SliceLDSParams(u0=[0.0], q0=np.eye(2), a=[[1.0]], q=[[1.0]], c=[[1.0]], r=[[1.0]])
