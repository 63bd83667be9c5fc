"""Dataset files, synthetic ground truth, the relative-error metric and
model persistence.

Dataset layout
--------------
* manifest: JSON object with ``rows``, ``tubes``, ``length`` and ``name``;
* data: one ``epoch,row,tube,value`` record per line, 1-based indices,
  values written with 17 significant digits.

Model files are JSON with a ``schema_version``; complex entries are stored
as ``[re, im]`` pairs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError, ModelFormatError
from .gaussian_lds import CovarianceMode, SliceLDSParams, sample_trajectory
from .model import LMLDSModel, init_model
from .tensor_core import TransformKind

__all__ = [
    "TensorSeries",
    "SplitSpec",
    "load_series",
    "save_series",
    "write_long_format",
    "generate_synthetic",
    "relative_error",
    "save_model",
    "load_model",
    "model_to_dict",
    "model_from_dict",
    "SCHEMA_VERSION",
]

SCHEMA_VERSION = 1
_HERMITIAN_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class TensorSeries:
    """``N`` real observation matrices of shape ``I x K``."""

    observations: np.ndarray  # (N, I, K) float64
    name: str = ""

    def __post_init__(self):
        obs = np.array(self.observations, dtype=np.float64)
        if obs.ndim != 3 or obs.shape[0] < 1:
            raise ValueError(f"observations must have shape (N>=1, I, K), got {obs.shape}")
        if not np.all(np.isfinite(obs)):
            raise ValueError("observations contain non-finite values")
        obs.setflags(write=False)
        object.__setattr__(self, "observations", obs)

    @property
    def n(self) -> int:
        return self.observations.shape[0]

    @property
    def rows(self) -> int:
        return self.observations.shape[1]

    @property
    def tubes(self) -> int:
        return self.observations.shape[2]

    def head(self, n: int) -> "TensorSeries":
        return TensorSeries(self.observations[:n], self.name)

    def split(self, spec: "SplitSpec") -> tuple["TensorSeries", "TensorSeries"]:
        spec.validate(self.n)
        obs = self.observations
        return (
            TensorSeries(obs[: spec.n_train], self.name),
            TensorSeries(obs[spec.n_train : spec.n_train + spec.n_test], self.name),
        )


@dataclass(frozen=True)
class SplitSpec:
    n_train: int
    n_test: int

    def validate(self, length: int) -> None:
        if self.n_train < 2:
            raise ValueError("n_train must be at least 2")
        if self.n_test < 0:
            raise ValueError("n_test must be non-negative")
        if self.n_train + self.n_test > length:
            raise ValueError(
                f"split {self.n_train}+{self.n_test} exceeds series length {length}"
            )


def _read_manifest(path):
    try:
        meta = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid manifest JSON: {exc}") from exc
    missing = [k for k in ("rows", "tubes", "length") if k not in meta]
    if missing:
        raise DataFormatError(f"{path}: manifest is missing {', '.join(missing)}")
    dims = {}
    for key in ("rows", "tubes", "length"):
        val = meta[key]
        if not isinstance(val, int) or isinstance(val, bool) or val < 1:
            raise DataFormatError(f"{path}: manifest {key} must be a positive integer")
        dims[key] = val
    return dims["length"], dims["rows"], dims["tubes"], str(meta.get("name", ""))


def load_series(manifest_path, data_path) -> TensorSeries:
    n, i, k, name = _read_manifest(manifest_path)
    values = np.empty((n, i, k))
    seen = np.zeros((n, i, k), dtype=bool)
    with open(data_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            parts = text.split(",")
            if len(parts) != 4:
                raise DataFormatError(f"{data_path}:{lineno}: expected 4 fields, got {len(parts)}")
            try:
                e, r, t = (int(p) for p in parts[:3])
                v = float(parts[3])
            except ValueError as exc:
                raise DataFormatError(f"{data_path}:{lineno}: {exc}") from exc
            if not (1 <= e <= n and 1 <= r <= i and 1 <= t <= k):
                raise DataFormatError(
                    f"{data_path}:{lineno}: index ({e},{r},{t}) out of range "
                    f"({n},{i},{k})"
                )
            if not math.isfinite(v):
                raise DataFormatError(f"{data_path}:{lineno}: non-finite value {parts[3]!r}")
            if seen[e - 1, r - 1, t - 1]:
                raise DataFormatError(
                    f"{data_path}:{lineno}: duplicate cell ({e},{r},{t})"
                )
            seen[e - 1, r - 1, t - 1] = True
            values[e - 1, r - 1, t - 1] = v
    if not seen.all():
        e, r, t = (int(x) + 1 for x in np.argwhere(~seen)[0])
        raise DataFormatError(f"{data_path}: missing cell ({e},{r},{t})")
    return TensorSeries(values, name)


def _check_writable(paths, overwrite):
    if overwrite:
        return
    for p in paths:
        if Path(p).exists():
            raise FileExistsError(f"{p} exists; pass overwrite=True to replace it")


def write_long_format(path, observations, first_epoch: int = 1, overwrite: bool = False) -> None:
    """Write ``(N, I, K)`` values as ``epoch,row,tube,value`` lines."""
    _check_writable([path], overwrite)
    obs = np.asarray(observations, dtype=np.float64)
    lines = []
    for e in range(obs.shape[0]):
        for r in range(obs.shape[1]):
            for t in range(obs.shape[2]):
                lines.append(f"{e + first_epoch},{r + 1},{t + 1},{obs[e, r, t]:.17g}\n")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(lines)


def save_series(series: TensorSeries, manifest_path, data_path, overwrite: bool = False) -> None:
    _check_writable([manifest_path, data_path], overwrite)
    meta = {"rows": series.rows, "tubes": series.tubes, "length": series.n, "name": series.name}
    Path(manifest_path).write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    write_long_format(data_path, series.observations, overwrite=True)


def generate_synthetic(
    dims,
    kind="dft",
    seed: int = 0,
    n_steps: int = 300,
    rho: float = 0.9,
    noise_scale: float = 1.0,
    name: str = "synthetic",
) -> tuple[TensorSeries, LMLDSModel]:
    """Sample a real series from a seeded ground-truth model.

    The ground truth is :func:`init_model` with every transition rescaled to
    spectral radius ``rho`` and covariances multiplied by ``noise_scale``.
    Under DFT the slice noise is drawn conjugate-symmetrically so the
    inverse transform is real up to roundoff.
    """
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must lie in (0, 1)")
    if noise_scale < 0:
        raise ValueError("noise_scale must be non-negative")
    kind = TransformKind.parse(kind)
    i, j, k = (int(d) for d in dims)
    base = init_model((i, j, k), kind, CovarianceMode.FULL, seed)
    mirror = kind.mirror_index(k)
    real = kind.real_slices(k)

    slices: list[SliceLDSParams | None] = [None] * k
    yt = np.empty((n_steps, i, k), np.complex128)
    for s in range(k):
        if mirror[s] < s:
            slices[s] = slices[mirror[s]].conj()
            yt[:, :, s] = np.conj(yt[:, :, mirror[s]])
            continue
        p = base.slices[s]
        radius = np.max(np.abs(np.linalg.eigvals(p.a)))
        p = p.replace(
            a=p.a * (rho / radius),
            q0=p.q0 * noise_scale,
            q=p.q * noise_scale,
            r=p.r * noise_scale,
        )
        slices[s] = p
        y, _ = sample_trajectory(p, n_steps, np.random.SeedSequence([seed, s, 1]), real=real[s])
        yt[:, :, s] = y
    obs = kind.inverse(yt, axis=2)
    residue = np.max(np.abs(obs.imag)) if obs.size else 0.0
    scale = max(1.0, float(np.max(np.abs(obs.real))))
    if residue > 1e-12 * scale:
        raise ArithmeticError(f"synthetic series has imaginary residue {residue:.3g}")
    truth = LMLDSModel(kind, (i, j, k), tuple(slices), 0, CovarianceMode.FULL, int(seed))
    return TensorSeries(obs.real, name), truth


def relative_error(predicted, actual) -> float:
    """Frobenius norm of the error relative to the norm of ``actual``."""
    predicted = np.asarray(predicted)
    actual = np.asarray(actual)
    if predicted.shape != actual.shape:
        raise ValueError(f"shape mismatch {predicted.shape} vs {actual.shape}")
    denom = np.linalg.norm(actual)
    if denom == 0:
        raise ValueError("relative error is undefined for an all-zero target")
    return float(np.linalg.norm(predicted - actual) / denom)


# ---------------------------------------------------------------------------
# model persistence
# ---------------------------------------------------------------------------


def _enc(arr) -> list:
    arr = np.asarray(arr, dtype=np.complex128)
    return np.stack([arr.real, arr.imag], axis=-1).tolist()


def _dec(obj, shape, what) -> np.ndarray:
    arr = np.asarray(obj, dtype=np.float64)
    if arr.shape != tuple(shape) + (2,):
        raise ModelFormatError(f"{what} has shape {arr.shape[:-1]}, expected {tuple(shape)}")
    return arr[..., 0] + 1j * arr[..., 1]


def model_to_dict(model: LMLDSModel) -> dict:
    i, j, k = model.dims
    out = {
        "schema_version": SCHEMA_VERSION,
        "transform": {"name": model.kind.name, "levels": model.kind.levels},
        "dims": {"rows": i, "latent": j, "tubes": k},
        "mode": model.mode.value,
        "seed": model.seed,
        "n_train": model.n_train,
        "slices": [{name: _enc(v) for name, v in p.as_dict().items()} for p in model.slices],
        "last_latents": None if model.last_latents is None else _enc(model.last_latents),
    }
    return out


def model_from_dict(obj: dict) -> LMLDSModel:
    version = obj.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ModelFormatError(f"unsupported schema_version {version!r}")
    try:
        t = obj["transform"]
        kind = TransformKind(t["name"], t.get("levels"))
        d = obj["dims"]
        i, j, k = int(d["rows"]), int(d["latent"]), int(d["tubes"])
        mode = CovarianceMode(obj["mode"])
        raw = obj["slices"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model header: {exc}") from exc
    if len(raw) != k:
        raise ModelFormatError(f"dims declare {k} tubes but file has {len(raw)} slices")
    shapes = {"u0": (j,), "q0": (j, j), "a": (j, j), "q": (j, j), "c": (i, j), "r": (i, i)}
    slices = []
    for s, entry in enumerate(raw):
        arrays = {}
        for name, shape in shapes.items():
            if name not in entry:
                raise ModelFormatError(f"slice {s} lacks {name}")
            arrays[name] = _dec(entry[name], shape, f"slice {s} {name}")
        for name in ("q0", "q", "r"):
            m = arrays[name]
            if np.max(np.abs(m - m.conj().T), initial=0.0) > _HERMITIAN_TOL * max(
                1.0, float(np.max(np.abs(m), initial=0.0))
            ):
                raise ModelFormatError(f"slice {s} covariance {name} is not Hermitian")
        slices.append(SliceLDSParams(**arrays))
    latents = obj.get("last_latents")
    if latents is not None:
        latents = _dec(latents, (k, j), "last_latents")
    try:
        return LMLDSModel(
            kind,
            (i, j, k),
            tuple(slices),
            int(obj.get("n_train", 0)),
            mode,
            int(obj.get("seed", 0)),
            latents,
        )
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from exc


def save_model(model: LMLDSModel, path, overwrite: bool = False) -> None:
    _check_writable([path], overwrite)
    text = json.dumps(model_to_dict(model), indent=1)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_model(path) -> LMLDSModel:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: invalid JSON: {exc}") from exc
    return model_from_dict(obj)
