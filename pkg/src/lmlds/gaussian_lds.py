"""Complex linear-Gaussian state-space models: inference, EM, sampling.

The model for one transform-domain slice is::

    x_1         ~ CN(u0, q0)
    x_{n+1} | x_n ~ CN(a x_n, q)
    y_n   | x_n ~ CN(c x_n, r)

with circularly-symmetric complex normals.  Real data simply has zero
imaginary parts; every formula uses Hermitian transposes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import kernels
from .errors import NumericalError

__all__ = [
    "CovarianceMode",
    "SliceLDSParams",
    "FilterResult",
    "SmootherResult",
    "kalman_filter",
    "rts_smoother",
    "smooth",
    "exact_posterior_bruteforce",
    "em_step",
    "em_fit",
    "sample_trajectory",
    "forecast",
    "complex_normal",
    "DEFAULT_MAX_ITERS",
    "DEFAULT_TOL",
]

EIG_FLOOR = 1e-12
DEFAULT_MAX_ITERS = 100
DEFAULT_TOL = 1e-6


class CovarianceMode(str, enum.Enum):
    DIAGONAL = "diagonal"
    FULL = "full"


@dataclass(frozen=True, eq=False)
class SliceLDSParams:
    """Parameters of one slice system; all arrays are complex128."""

    u0: np.ndarray  # (J,)
    q0: np.ndarray  # (J, J)
    a: np.ndarray  # (J, J)
    q: np.ndarray  # (J, J)
    c: np.ndarray  # (I, J)
    r: np.ndarray  # (I, I)

    def __post_init__(self):
        for f in fields(self):
            arr = np.array(getattr(self, f.name), dtype=np.complex128)
            arr.setflags(write=False)
            object.__setattr__(self, f.name, arr)
        j = self.u0.shape[0]
        i = self.c.shape[0]
        expected = {
            "u0": (j,),
            "q0": (j, j),
            "a": (j, j),
            "q": (j, j),
            "c": (i, j),
            "r": (i, i),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(
                    f"{name} has shape {getattr(self, name).shape}, expected {shape}"
                )

    @property
    def n_latent(self) -> int:
        return self.u0.shape[0]

    @property
    def n_obs(self) -> int:
        return self.c.shape[0]

    def conj(self) -> "SliceLDSParams":
        return SliceLDSParams(*(np.conj(getattr(self, f.name)) for f in fields(self)))

    def replace(self, **changes) -> "SliceLDSParams":
        return replace(self, **changes)

    def equals(self, other: "SliceLDSParams") -> bool:
        """Bitwise equality of every array."""
        return all(
            np.array_equal(getattr(self, f.name), getattr(other, f.name)) for f in fields(self)
        )

    def as_dict(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def max_change(self, other: "SliceLDSParams") -> float:
        return max(
            float(np.max(np.abs(getattr(self, f.name) - getattr(other, f.name))))
            for f in fields(self)
        )


@dataclass(frozen=True, eq=False)
class FilterResult:
    predicted_means: np.ndarray
    predicted_covs: np.ndarray
    filtered_means: np.ndarray
    filtered_covs: np.ndarray
    log_likelihood: float


@dataclass(frozen=True, eq=False)
class SmootherResult:
    filtered_means: np.ndarray
    filtered_covs: np.ndarray
    smoothed_means: np.ndarray
    smoothed_covs: np.ndarray
    # cross_covs[n] = Cov(x_n, x_{n-1} | y); entry 0 is unused and zero
    cross_covs: np.ndarray
    log_likelihood: float
    _filter: FilterResult | None = field(default=None, repr=False)


def _as_obs(obs, n_obs):
    y = np.asarray(obs, dtype=np.complex128)
    if y.ndim == 1 and n_obs == 1:
        y = y[:, None]
    if y.ndim != 2 or y.shape[1] != n_obs:
        raise ValueError(f"observations must have shape (N, {n_obs}), got {y.shape}")
    if y.shape[0] < 1:
        raise ValueError("need at least one observation")
    return y


def kalman_filter(params: SliceLDSParams, obs, backend: str | None = None) -> FilterResult:
    """Forward pass; raises :class:`NumericalError` on a singular innovation covariance."""
    y = _as_obs(obs, params.n_obs)
    p = params
    pm, pc, fm, fc, ll, fail = kernels.forward(p.u0, p.q0, p.a, p.q, p.c, p.r, y, backend)
    if fail >= 0:
        raise NumericalError("innovation covariance is not positive definite", step=int(fail))
    return FilterResult(pm, pc, fm, fc, float(ll))


def rts_smoother(
    params: SliceLDSParams, filtered: FilterResult, backend: str | None = None
) -> SmootherResult:
    f = filtered
    sm, sc, xc, fail = kernels.backward(
        params.a, f.predicted_means, f.predicted_covs, f.filtered_means, f.filtered_covs, backend
    )
    if fail >= 0:
        n_steps = f.filtered_means.shape[0]
        raise NumericalError(
            "predicted covariance is not positive definite", step=int(fail - n_steps)
        )
    return SmootherResult(
        f.filtered_means, f.filtered_covs, sm, sc, xc, f.log_likelihood, _filter=f
    )


def smooth(params: SliceLDSParams, obs, backend: str | None = None) -> SmootherResult:
    """Filter then smooth."""
    return rts_smoother(params, kalman_filter(params, obs, backend), backend)


def exact_posterior_bruteforce(params: SliceLDSParams, obs):
    """Condition the explicit joint Gaussian over all latents and observations.

    Only for small problems (``N * J <= 64``).  Returns ``(means, cov,
    log_likelihood)`` where ``means`` is ``(N, J)`` and ``cov`` the full
    ``NJ x NJ`` posterior covariance, so ``cov`` block ``(n, n-1)`` is the
    lag-one cross-covariance.
    """
    y = _as_obs(obs, params.n_obs)
    n_steps = y.shape[0]
    j, i = params.n_latent, params.n_obs
    if n_steps * j > 64:
        raise ValueError("exact_posterior_bruteforce is limited to N*J <= 64")
    a, c = params.a, params.c

    mean_x = np.zeros((n_steps, j), np.complex128)
    marg = np.zeros((n_steps, j, j), np.complex128)
    mean_x[0], marg[0] = params.u0, params.q0
    for n in range(1, n_steps):
        mean_x[n] = a @ mean_x[n - 1]
        marg[n] = a @ marg[n - 1] @ a.conj().T + params.q
    cov_x = np.zeros((n_steps * j, n_steps * j), np.complex128)
    for m in range(n_steps):
        block = marg[m]
        for n in range(m, n_steps):
            cov_x[n * j : (n + 1) * j, m * j : (m + 1) * j] = block
            cov_x[m * j : (m + 1) * j, n * j : (n + 1) * j] = block.conj().T
            block = a @ block

    big_c = np.kron(np.eye(n_steps), c)
    mean_y = big_c @ mean_x.reshape(-1)
    cov_xy = cov_x @ big_c.conj().T
    cov_y = big_c @ cov_xy + np.kron(np.eye(n_steps), params.r)
    resid = y.reshape(-1) - mean_y
    try:
        gain = np.linalg.solve(cov_y, cov_xy.conj().T).conj().T
    except np.linalg.LinAlgError as exc:
        raise NumericalError("joint observation covariance is singular") from exc
    post_mean = mean_x.reshape(-1) + gain @ resid
    post_cov = cov_x - gain @ cov_xy.conj().T
    post_cov = 0.5 * (post_cov + post_cov.conj().T)

    _, logdet = np.linalg.slogdet(cov_y)
    quad = np.vdot(resid, np.linalg.solve(cov_y, resid)).real
    ll = -n_steps * i * np.log(np.pi) - logdet.real - quad
    return post_mean.reshape(n_steps, j), post_cov, float(ll)


def _repair(s: np.ndarray, mode: CovarianceMode) -> np.ndarray:
    s = 0.5 * (s + s.conj().T)
    if mode == CovarianceMode.DIAGONAL:
        return np.diag(np.maximum(np.diag(s).real, EIG_FLOOR)).astype(np.complex128)
    w, v = np.linalg.eigh(s)
    if w[0] < EIG_FLOOR:
        s = (v * np.maximum(w, EIG_FLOOR)) @ v.conj().T
        s = 0.5 * (s + s.conj().T)
    return s


def _solve_right(lhs, herm):
    # lhs @ inv(herm) for Hermitian ``herm``
    return np.linalg.solve(herm, lhs.conj().T).conj().T


def em_step(
    params: SliceLDSParams, obs, sm: SmootherResult, mode: CovarianceMode
) -> SliceLDSParams:
    """Closed-form M-step given the smoothed posterior ``sm`` of ``params``."""
    mode = CovarianceMode(mode)
    y = _as_obs(obs, params.n_obs)
    n_steps = y.shape[0]
    mu, v = sm.smoothed_means, sm.smoothed_covs
    second = v + np.einsum("ni,nj->nij", mu, mu.conj())
    total = second.sum(axis=0)
    yx = np.einsum("ni,nj->ij", y, mu.conj())
    yy = np.einsum("ni,nj->ij", y, y.conj())

    try:
        c = _solve_right(yx, total)
        r = _repair((yy - c @ yx.conj().T) / n_steps, mode)
        a, q = params.a, params.q
        if n_steps > 1:
            lag = sm.cross_covs[1:] + np.einsum("ni,nj->nij", mu[1:], mu[:-1].conj())
            s10 = lag.sum(axis=0)
            s00 = total - second[-1]
            s11 = total - second[0]
            a = _solve_right(s10, s00)
            q = _repair((s11 - a @ s10.conj().T) / (n_steps - 1), mode)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular sufficient statistics in M-step") from exc
    return SliceLDSParams(u0=mu[0], q0=_repair(v[0], mode), a=a, q=q, c=c, r=r)


def em_fit(
    init: SliceLDSParams,
    obs,
    max_iters: int = DEFAULT_MAX_ITERS,
    mode: CovarianceMode = CovarianceMode.FULL,
    tol: float | None = DEFAULT_TOL,
    backend: str | None = None,
    return_smoother: bool = False,
):
    """Run EM from ``init``.

    Returns the fitted parameters and the log-likelihood trace: entry ``t``
    is the log-likelihood of the parameters after ``t`` M-steps, so the trace
    has at most ``max_iters + 1`` entries.  Iteration stops early once the
    improvement falls below ``tol * max(1, |loglik|)``; ``tol=None``
    disables early stopping.  With ``return_smoother`` the smoothed
    posterior under the returned parameters is appended to the result.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")
    mode = CovarianceMode(mode)
    y = _as_obs(obs, init.n_obs)
    params = init
    trace = []
    it = 0
    try:
        sm = smooth(params, y, backend)
        trace.append(sm.log_likelihood)
        for it in range(1, max_iters + 1):
            candidate = em_step(params, y, sm, mode)
            sm_next = smooth(candidate, y, backend)
            params, sm = candidate, sm_next
            trace.append(sm.log_likelihood)
            if tol is not None and trace[-1] - trace[-2] < tol * max(1.0, abs(trace[-2])):
                break
    except NumericalError as exc:
        raise exc.with_context(iteration=it) from exc
    if return_smoother:
        return params, np.asarray(trace), sm
    return params, np.asarray(trace)


def complex_normal(rng: np.random.Generator, cov: np.ndarray, size=(), real: bool = False):
    """Draw from CN(0, cov) (or N(0, cov) when ``real``) for a PSD ``cov``.

    Complex draws have independent real and imaginary parts of variance 1/2.
    """
    cov = np.asarray(cov, dtype=np.complex128)
    d = cov.shape[0]
    w, v = np.linalg.eigh(0.5 * (cov + cov.conj().T))
    root = v * np.sqrt(np.maximum(w, 0.0))
    shape = (size,) if isinstance(size, (int, np.integer)) else tuple(size)
    if real:
        z = rng.standard_normal(shape + (d,)).astype(np.complex128)
        root = root.real
    else:
        z = (rng.standard_normal(shape + (d,)) + 1j * rng.standard_normal(shape + (d,))) * np.sqrt(
            0.5
        )
    return z @ root.T


def sample_trajectory(
    params: SliceLDSParams, n_steps: int, rng_seed=None, real: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """Ancestral sample of ``(observations (N, I), latents (N, J))``.

    ``rng_seed`` may be an int, a ``SeedSequence`` or a ``Generator``.
    ``real=True`` draws real Gaussian noise (the parameters must then be real
    for a real trajectory).
    """
    rng = np.random.default_rng(rng_seed)
    p = params
    x = np.empty((n_steps, p.n_latent), np.complex128)
    y = np.empty((n_steps, p.n_obs), np.complex128)
    x[0] = p.u0 + complex_normal(rng, p.q0, real=real)
    for n in range(n_steps):
        if n > 0:
            x[n] = p.a @ x[n - 1] + complex_normal(rng, p.q, real=real)
        y[n] = p.c @ x[n] + complex_normal(rng, p.r, real=real)
    return y, x


def forecast(params: SliceLDSParams, last_smoothed_mean, horizon: int) -> np.ndarray:
    """Predicted observations ``c a^h mean`` for ``h = 1..horizon``; shape ``(horizon, I)``."""
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    state = np.asarray(last_smoothed_mean, dtype=np.complex128)
    out = np.empty((horizon, params.n_obs), np.complex128)
    for h in range(horizon):
        state = params.a @ state
        out[h] = params.c @ state
    return out
