"""Transform-domain multilinear dynamical system.

The observation tensors ``Y_n`` (``I x 1 x K``, stored as ``I x K``
matrices) are transformed along their tubes; in the transform domain each
frontal slice ``k`` follows its own linear-Gaussian system, so training is
``K`` independent EM fits that can run concurrently.
"""

from __future__ import annotations

import enum
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ReconstructionError
from .gaussian_lds import (
    DEFAULT_MAX_ITERS,
    DEFAULT_TOL,
    CovarianceMode,
    SliceLDSParams,
    em_fit,
    forecast,
    smooth,
)
from .tensor_core import TransformKind

__all__ = [
    "ModelFamily",
    "LMLDSModel",
    "VectorLDSModel",
    "slice_seed",
    "init_slice",
    "init_model",
    "train",
    "infer_last_latents",
    "predict",
    "predict_complex",
    "param_count",
    "latent_dim_for_budget",
    "fit_baseline_lds",
    "as_observations",
]

IMAG_WARN = 1e-9
IMAG_FAIL = 1e-6


class ModelFamily(str, enum.Enum):
    LDS = "lds"
    MLDS = "mlds"
    L_MLDS = "l_mlds"


@dataclass(frozen=True, eq=False)
class LMLDSModel:
    kind: TransformKind
    dims: tuple[int, int, int]  # (I, J, K)
    slices: tuple[SliceLDSParams, ...]
    n_train: int = 0
    mode: CovarianceMode = CovarianceMode.FULL
    seed: int = 0
    # smoothed latent mean of every slice at the last training epoch, (K, J)
    last_latents: np.ndarray | None = None

    def __post_init__(self):
        i, j, k = self.dims
        if len(self.slices) != k:
            raise ValueError(f"expected {k} slice systems, got {len(self.slices)}")
        for idx, p in enumerate(self.slices):
            if p.n_obs != i or p.n_latent != j:
                raise ValueError(
                    f"slice {idx} has (I, J) = ({p.n_obs}, {p.n_latent}), expected ({i}, {j})"
                )
        if self.last_latents is not None and np.shape(self.last_latents) != (k, j):
            raise ValueError(f"last_latents must have shape {(k, j)}")

    def n_parameters(self) -> int:
        """Stored entries of the transition, projection and covariance blocks.

        The initial latent mean is not counted, matching
        ``param_count(ModelFamily.L_MLDS, ...)``.
        """
        return sum(p.a.size + p.c.size + p.q0.size + p.q.size + p.r.size for p in self.slices)

    def equals(self, other: "LMLDSModel") -> bool:
        if (self.kind, tuple(self.dims), self.n_train, self.mode, self.seed) != (
            other.kind,
            tuple(other.dims),
            other.n_train,
            other.mode,
            other.seed,
        ):
            return False
        if (self.last_latents is None) != (other.last_latents is None):
            return False
        if self.last_latents is not None and not np.array_equal(
            self.last_latents, other.last_latents
        ):
            return False
        return all(a.equals(b) for a, b in zip(self.slices, other.slices))


@dataclass(frozen=True, eq=False)
class VectorLDSModel:
    """Single LDS over vectorized ``I x K`` observations (column-major stacking)."""

    params: SliceLDSParams
    rows: int
    tubes: int
    n_train: int = 0
    mode: CovarianceMode = CovarianceMode.FULL
    seed: int = 0
    last_latent: np.ndarray | None = None

    def n_parameters(self) -> int:
        return param_count(ModelFamily.LDS, self.rows * self.tubes, self.params.n_latent, 1)

    def predict(self, horizon: int) -> np.ndarray:
        f = forecast(self.params, self.last_latent, horizon).real
        return unvec_obs(f, self.rows, self.tubes)


def vec_obs(y: np.ndarray) -> np.ndarray:
    """``(N, I, K)`` -> ``(N, I*K)`` stacking frontal slices."""
    n, i, k = y.shape
    return np.ascontiguousarray(y.transpose(0, 2, 1)).reshape(n, i * k)


def unvec_obs(v: np.ndarray, rows: int, tubes: int) -> np.ndarray:
    return np.ascontiguousarray(v.reshape(-1, tubes, rows).transpose(0, 2, 1))


def as_observations(data) -> np.ndarray:
    """Accept a ``TensorSeries`` or an ``(N, I, K)`` array."""
    obs = getattr(data, "observations", data)
    arr = np.asarray(obs)
    if arr.ndim != 3:
        raise ValueError(f"observations must have shape (N, I, K), got {arr.shape}")
    return arr


def slice_seed(seed: int, k: int) -> np.random.SeedSequence:
    """Seed of slice ``k``: ``SeedSequence([seed, k])``, independent of scheduling."""
    return np.random.SeedSequence([int(seed), int(k)])


def init_slice(n_obs: int, n_latent: int, rng, real: bool = True) -> SliceLDSParams:
    """Random start: Gaussian initial mean, identity covariances, and
    transition/projection columns taken from left singular vectors of
    standard normal matrices."""
    if n_latent > n_obs:
        raise ValueError(f"latent dimension {n_latent} exceeds observation dimension {n_obs}")
    rng = np.random.default_rng(rng)
    if real:
        u0 = rng.standard_normal(n_latent)
    else:
        u0 = (rng.standard_normal(n_latent) + 1j * rng.standard_normal(n_latent)) * np.sqrt(0.5)
    a = np.linalg.svd(rng.standard_normal((n_latent, n_latent)))[0][:, :n_latent]
    c = np.linalg.svd(rng.standard_normal((n_obs, n_latent)), full_matrices=False)[0]
    return SliceLDSParams(
        u0=u0,
        q0=np.eye(n_latent),
        a=a,
        q=np.eye(n_latent),
        c=c[:, :n_latent],
        r=np.eye(n_obs),
    )


def init_model(dims, kind, mode=CovarianceMode.FULL, seed: int = 0) -> LMLDSModel:
    """Seeded initial model.

    Slices that stay real for real data get real draws; under DFT the
    remaining slices are drawn once and mirrored by conjugation, so the
    initial model is conjugate-symmetric.
    """
    kind = TransformKind.parse(kind)
    i, j, k = (int(d) for d in dims)
    kind.check_length(k)
    mirror = kind.mirror_index(k)
    real = kind.real_slices(k)
    slices: list[SliceLDSParams | None] = [None] * k
    for s in range(k):
        if mirror[s] < s:
            slices[s] = slices[mirror[s]].conj()
        else:
            slices[s] = init_slice(i, j, slice_seed(seed, s), real=bool(real[s]))
    return LMLDSModel(kind, (i, j, k), tuple(slices), 0, CovarianceMode(mode), int(seed))


def _resolve_workers(workers):
    if workers is None:
        return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (
            os.cpu_count() or 1
        )
    if workers < 1:
        raise ValueError("workers must be >= 1")
    return int(workers)


def _run_slices(fn, indices, workers):
    if workers == 1 or len(indices) <= 1:
        return [fn(s) for s in indices]
    pool = ThreadPoolExecutor(max_workers=min(workers, len(indices)))
    try:
        return list(pool.map(fn, indices))
    finally:
        pool.shutdown(wait=True, cancel_futures=True)


def train(
    data,
    latent_dim: int,
    kind="dft",
    mode=CovarianceMode.FULL,
    seed: int = 0,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float | None = DEFAULT_TOL,
    workers: int | None = 1,
    exploit_symmetry: bool = True,
    init: LMLDSModel | None = None,
    backend: str | None = None,
) -> tuple[LMLDSModel, list[np.ndarray]]:
    """Fit one EM per transform-domain slice.

    ``data`` holds the training epochs only.  Returns the model (with the
    smoothed latent means at the last epoch) and the per-slice
    log-likelihood traces.  The first failing slice (lowest index) aborts
    training with a :class:`NumericalError` naming it.
    """
    kind = TransformKind.parse(kind)
    mode = CovarianceMode(mode)
    y = as_observations(data)
    n, i, k = y.shape
    if n < 2:
        raise ValueError("training needs at least two epochs")
    kind.check_length(k)
    workers = _resolve_workers(workers)
    if init is None:
        init = init_model((i, latent_dim, k), kind, mode, seed)
    elif tuple(init.dims) != (i, latent_dim, k) or init.kind != kind:
        raise ValueError("initial model does not match data dimensions / transform")

    yt = kind.forward(y.astype(np.complex128), axis=2)
    mirror = kind.mirror_index(k)
    use_mirror = exploit_symmetry and not np.any(np.imag(y))
    todo = [s for s in range(k) if not use_mirror or mirror[s] >= s]

    def fit_one(s):
        try:
            params, trace, sm = em_fit(
                init.slices[s],
                yt[:, :, s],
                max_iters=max_iters,
                mode=mode,
                tol=tol,
                backend=backend,
                return_smoother=True,
            )
        except NumericalError as exc:
            raise exc.with_context(slice_index=s) from exc
        return params, trace, sm.smoothed_means[-1]

    fitted = dict(zip(todo, _run_slices(fit_one, todo, workers)))
    slices, traces, latents = [], [], []
    for s in range(k):
        if s in fitted:
            params, trace, lat = fitted[s]
        else:
            params, trace, lat = fitted[mirror[s]]
            params, lat = params.conj(), np.conj(lat)
        slices.append(params)
        traces.append(trace)
        latents.append(lat)
    model = LMLDSModel(
        kind, (i, latent_dim, k), tuple(slices), n, mode, int(seed), np.array(latents)
    )
    return model, traces


def infer_last_latents(model: LMLDSModel, data, backend: str | None = None) -> np.ndarray:
    """Smoothed latent mean of every slice at the last epoch of ``data``."""
    y = as_observations(data)
    i, _, k = model.dims
    if y.shape[1:] != (i, k):
        raise ValueError(f"data epochs are {y.shape[1:]}, model expects {(i, k)}")
    yt = model.kind.forward(y.astype(np.complex128), axis=2)
    return np.array(
        [smooth(p, yt[:, :, s], backend).smoothed_means[-1] for s, p in enumerate(model.slices)]
    )


def predict_complex(model: LMLDSModel, last_latents=None, horizon: int = 1) -> np.ndarray:
    """Time-domain predictions ``(horizon, I, K)`` before discarding imaginary parts."""
    latents = model.last_latents if last_latents is None else np.asarray(last_latents)
    if latents is None:
        raise ValueError("model carries no latent state; pass last_latents")
    i, _, k = model.dims
    yt = np.empty((horizon, i, k), np.complex128)
    for s, p in enumerate(model.slices):
        yt[:, :, s] = forecast(p, latents[s], horizon)
    return model.kind.inverse(yt, axis=2)


def predict(model: LMLDSModel, last_latents=None, horizon: int = 1) -> np.ndarray:
    """Real predictions ``(horizon, I, K)`` for the epochs after training.

    Raises :class:`ReconstructionError` when the inverse transform leaves an
    imaginary part above ``1e-6``.
    """
    out = predict_complex(model, last_latents, horizon)
    residue = float(np.max(np.abs(out.imag))) if out.size else 0.0
    if residue > IMAG_FAIL:
        raise ReconstructionError(
            f"prediction has imaginary residue {residue:.3g}; conjugate symmetry is broken"
        )
    if residue > IMAG_WARN:
        warnings.warn(f"prediction imaginary residue {residue:.3g} discarded", RuntimeWarning)
    return out.real.copy()


def param_count(family, n_obs: int, n_latent: int, n_tubes: int) -> int:
    """Number of model parameters for observations ``I x K`` and latent ``J``."""
    family = ModelFamily(family)
    i, j, k = int(n_obs), int(n_latent), int(n_tubes)
    if min(i, j, k) < 1:
        raise ValueError("dimensions must be positive")
    if family is ModelFamily.LDS:
        return (j * k) ** 2 + i * j * k**2 + 2 * (j * k) ** 2 + (i * k) ** 2
    if family is ModelFamily.MLDS:
        return i * j + j**2 + 2 * k**2 + (i * k) ** 2 + 2 * (j * k) ** 2
    return j * j * k + i * j * k + 2 * j * j * k + i * i * k


def latent_dim_for_budget(
    family, n_obs: int, n_tubes: int, budget: int, j_max: int | None = None
) -> int:
    """Latent dimension that matches a parameter budget.

    For ``L_MLDS`` the largest ``J`` whose count does not exceed the budget;
    for ``LDS`` the smallest ``J`` whose count reaches it.
    """
    family = ModelFamily(family)
    if family is ModelFamily.MLDS:
        raise ValueError("budget matching is defined for LDS and L_MLDS only")
    limit = j_max if j_max is not None else 1 << 20

    def count(j):
        return param_count(family, n_obs, j, n_tubes)

    if family is ModelFamily.L_MLDS:
        if count(1) > budget:
            raise ValueError(f"no latent dimension fits a budget of {budget} parameters")
        j = 1
        while j < limit and count(j + 1) <= budget:
            j += 1
        return j
    j = 1
    while count(j) < budget:
        j += 1
        if j > limit:
            raise ValueError(f"no latent dimension <= {limit} reaches a budget of {budget}")
    return j


def fit_baseline_lds(
    data,
    latent_dim: int,
    mode=CovarianceMode.FULL,
    seed: int = 0,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float | None = DEFAULT_TOL,
    backend: str | None = None,
) -> tuple[VectorLDSModel, np.ndarray]:
    """Fit one LDS to the vectorized observations, initialized like slice 0."""
    mode = CovarianceMode(mode)
    y = as_observations(data)
    n, i, k = y.shape
    v = vec_obs(y.astype(np.complex128))
    init = init_slice(i * k, latent_dim, slice_seed(seed, 0), real=True)
    params, trace, sm = em_fit(
        init, v, max_iters=max_iters, mode=mode, tol=tol, backend=backend, return_smoother=True
    )
    model = VectorLDSModel(params, i, k, n, mode, int(seed), sm.smoothed_means[-1])
    return model, trace
