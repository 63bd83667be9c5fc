"""Third-order tensors, structural views and the transform-domain product.

A third-order tensor is a complex ``ndarray`` of shape ``(I, J, K)``.  Frontal
slice ``k`` is ``t[:, :, k]`` and the mode-3 tube at ``(i, j)`` is
``t[i, j, :]``.  Every invertible transform acts along the last axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft

from .errors import IncompatibleLengthError

__all__ = [
    "TransformKind",
    "DFT",
    "DCT",
    "DWT",
    "IDENTITY",
    "BlockDiagView",
    "as_tensor3",
    "mat_view",
    "vec_view",
    "ten_view",
    "transform",
    "inverse_transform",
    "tubal_mult",
    "l_product",
    "l_product_bruteforce",
    "hermitian_transpose",
    "l_identity",
]

_KINDS = ("dft", "dct", "dwt", "identity")
_SQRT_HALF = np.sqrt(0.5)


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class TransformKind:
    """An invertible 1-D transform applied to every mode-3 tube.

    ``dft`` is the unnormalized forward DFT with a ``1/K`` inverse, ``dct``
    the orthonormal DCT-II, ``dwt`` the orthonormal Haar transform and
    ``identity`` leaves tubes untouched.  ``levels`` applies to ``dwt`` only;
    ``None`` means full decomposition.
    """

    name: str
    levels: int | None = None

    def __post_init__(self):
        if self.name not in _KINDS:
            raise ValueError(f"unknown transform {self.name!r}; expected one of {_KINDS}")
        if self.levels is not None:
            if self.name != "dwt":
                raise ValueError("levels only applies to the dwt transform")
            if self.levels < 1:
                raise ValueError("dwt levels must be positive")

    @classmethod
    def parse(cls, value: "str | TransformKind") -> "TransformKind":
        if isinstance(value, TransformKind):
            return value
        name, _, levels = str(value).lower().partition(":")
        return cls(name, int(levels) if levels else None)

    def __str__(self):
        if self.levels is not None:
            return f"{self.name}:{self.levels}"
        return self.name

    def check_length(self, k: int) -> None:
        if k < 1:
            raise IncompatibleLengthError("tube length must be positive")
        if self.name == "dwt":
            if not _is_pow2(k):
                raise IncompatibleLengthError(
                    f"dwt requires a power-of-2 tube length, got K={k}"
                )
            if self.levels is not None and 2**self.levels > k:
                raise IncompatibleLengthError(
                    f"dwt with {self.levels} levels needs K >= {2**self.levels}, got K={k}"
                )

    def dwt_levels(self, k: int) -> int:
        return self.levels if self.levels is not None else int(np.log2(k))

    @property
    def preserves_real(self) -> bool:
        """True if real tubes map to real tubes."""
        return self.name != "dft"

    @property
    def orthonormal(self) -> bool:
        return self.name != "dft"

    def mirror_index(self, k: int) -> np.ndarray:
        """Slice whose transform of a real tube is the conjugate of slice ``m``.

        For ``dft`` this is ``(K - m) mod K``; for real-preserving kinds every
        slice is its own mirror.
        """
        idx = np.arange(k)
        if self.name == "dft":
            return (-idx) % k
        return idx

    def real_slices(self, k: int) -> np.ndarray:
        """Mask of slices that stay real when the input tubes are real."""
        return self.mirror_index(k) == np.arange(k)

    def forward(self, x: np.ndarray, axis: int = -1) -> np.ndarray:
        x = np.asarray(x, dtype=np.complex128)
        self.check_length(x.shape[axis])
        if self.name == "identity":
            return x.copy()
        if self.name == "dft":
            return _dft(x, axis)
        if self.name == "dct":
            return _apply_real(lambda v: scipy.fft.dct(v, type=2, norm="ortho", axis=axis), x)
        return _haar(x, axis, self.dwt_levels(x.shape[axis]), inverse=False)

    def inverse(self, x: np.ndarray, axis: int = -1) -> np.ndarray:
        x = np.asarray(x, dtype=np.complex128)
        self.check_length(x.shape[axis])
        if self.name == "identity":
            return x.copy()
        if self.name == "dft":
            return np.fft.ifft(x, axis=axis)
        if self.name == "dct":
            return _apply_real(lambda v: scipy.fft.idct(v, type=2, norm="ortho", axis=axis), x)
        return _haar(x, axis, self.dwt_levels(x.shape[axis]), inverse=True)


DFT = TransformKind("dft")
DCT = TransformKind("dct")
DWT = TransformKind("dwt")
IDENTITY = TransformKind("identity")


def _apply_real(fn, x):
    # scipy's real transforms: handle real and imaginary parts separately
    out = fn(x.real).astype(np.complex128)
    if np.any(x.imag):
        out += 1j * fn(x.imag)
    return out


def _dft(x, axis):
    if np.any(x.imag):
        return np.fft.fft(x, axis=axis)
    # real input: build the full spectrum from the half spectrum so that
    # conjugate symmetry holds exactly
    k = x.shape[axis]
    xr = np.moveaxis(x.real, axis, -1)
    half = np.fft.rfft(xr, axis=-1)
    full = np.empty(xr.shape, dtype=np.complex128)
    nh = half.shape[-1]
    full[..., :nh] = half
    full[..., nh:] = np.conj(half[..., 1 : k - nh + 1][..., ::-1])
    full[..., 0] = full[..., 0].real
    if k % 2 == 0:
        full[..., k // 2] = full[..., k // 2].real
    return np.moveaxis(full, -1, axis)


def _haar(x, axis, levels, inverse):
    out = np.moveaxis(x, axis, -1).copy()
    k = out.shape[-1]
    if not inverse:
        n = k
        for _ in range(levels):
            even, odd = out[..., 0:n:2], out[..., 1:n:2]
            approx = (even + odd) * _SQRT_HALF
            detail = (even - odd) * _SQRT_HALF
            out[..., : n // 2] = approx
            out[..., n // 2 : n] = detail
            n //= 2
    else:
        n = k >> levels
        for _ in range(levels):
            approx = out[..., :n].copy()
            detail = out[..., n : 2 * n].copy()
            out[..., 0 : 2 * n : 2] = (approx + detail) * _SQRT_HALF
            out[..., 1 : 2 * n : 2] = (approx - detail) * _SQRT_HALF
            n *= 2
    return np.moveaxis(out, -1, axis)


def as_tensor3(t) -> np.ndarray:
    """Validate and convert to a complex ``(I, J, K)`` array."""
    arr = np.asarray(t, dtype=np.complex128)
    if arr.ndim != 3:
        raise ValueError(f"expected a third-order tensor, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ValueError(f"all tensor dimensions must be positive, got {arr.shape}")
    return arr


@dataclass(frozen=True)
class BlockDiagView:
    """Block-diagonal ``IK x JK`` matrix stored as its ``K`` diagonal blocks."""

    blocks: np.ndarray  # (K, I, J)

    @property
    def n_blocks(self) -> int:
        return self.blocks.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        k, i, j = self.blocks.shape
        return i * k, j * k

    def block(self, k: int) -> np.ndarray:
        return self.blocks[k]

    def to_dense(self) -> np.ndarray:
        k, i, j = self.blocks.shape
        out = np.zeros((i * k, j * k), dtype=self.blocks.dtype)
        for b in range(k):
            out[b * i : (b + 1) * i, b * j : (b + 1) * j] = self.blocks[b]
        return out

    def __matmul__(self, other):
        if isinstance(other, BlockDiagView):
            return BlockDiagView(self.blocks @ other.blocks)
        other = np.asarray(other)
        k, _, j = self.blocks.shape
        return (self.blocks @ other.reshape(k, j)[..., None])[..., 0].reshape(-1)


def mat_view(t) -> BlockDiagView:
    t = as_tensor3(t)
    return BlockDiagView(np.ascontiguousarray(np.moveaxis(t, 2, 0)))


def vec_view(t) -> np.ndarray:
    """Stack the frontal slices of an ``I x 1 x K`` tensor into one vector."""
    t = as_tensor3(t)
    if t.shape[1] != 1:
        raise ValueError(f"vec_view needs a middle dimension of 1, got shape {t.shape}")
    return np.ascontiguousarray(t[:, 0, :].T).reshape(-1)


def ten_view(x, rows: int | None = None) -> np.ndarray:
    """Fold a :class:`BlockDiagView` or a stacked vector back into a tensor.

    ``rows`` is required for vectors and gives ``I``; the result is then
    ``I x 1 x K``.
    """
    if isinstance(x, BlockDiagView):
        return np.ascontiguousarray(np.moveaxis(x.blocks, 0, 2))
    v = np.asarray(x, dtype=np.complex128)
    if v.ndim != 1:
        raise ValueError("ten_view expects a BlockDiagView or a 1-D vector")
    if rows is None or rows < 1 or v.size % rows:
        raise ValueError(f"cannot fold a length-{v.size} vector into {rows} rows")
    return np.ascontiguousarray(v.reshape(-1, rows).T[:, None, :])


def transform(t, kind: TransformKind) -> np.ndarray:
    return TransformKind.parse(kind).forward(as_tensor3(t), axis=2)


def inverse_transform(t, kind: TransformKind) -> np.ndarray:
    return TransformKind.parse(kind).inverse(as_tensor3(t), axis=2)


def tubal_mult(a, b, kind: TransformKind) -> np.ndarray:
    kind = TransformKind.parse(kind)
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    if a.ndim != 1 or a.shape != b.shape:
        raise ValueError(f"tubes must be 1-D of equal length, got {a.shape} and {b.shape}")
    return kind.inverse(kind.forward(a) * kind.forward(b))


def _check_product_dims(a, b):
    if a.shape[1] != b.shape[0] or a.shape[2] != b.shape[2]:
        raise ValueError(f"incompatible L-product operands {a.shape} and {b.shape}")


def l_product(a, b, kind: TransformKind) -> np.ndarray:
    """Slice-wise matrix product in the transform domain."""
    kind = TransformKind.parse(kind)
    a, b = as_tensor3(a), as_tensor3(b)
    _check_product_dims(a, b)
    at = kind.forward(a, axis=2)
    bt = kind.forward(b, axis=2)
    return kind.inverse(np.einsum("ipk,pjk->ijk", at, bt), axis=2)


def l_product_bruteforce(a, b, kind: TransformKind) -> np.ndarray:
    """Tube-by-tube sum of tubal products; reference path for :func:`l_product`."""
    kind = TransformKind.parse(kind)
    a, b = as_tensor3(a), as_tensor3(b)
    _check_product_dims(a, b)
    n_i, n_p, k = a.shape
    n_j = b.shape[1]
    out = np.zeros((n_i, n_j, k), dtype=np.complex128)
    for i in range(n_i):
        for j in range(n_j):
            for p in range(n_p):
                out[i, j] += tubal_mult(a[i, p], b[p, j], kind)
    return out


def hermitian_transpose(c, kind: TransformKind) -> np.ndarray:
    kind = TransformKind.parse(kind)
    ct = kind.forward(as_tensor3(c), axis=2)
    return kind.inverse(np.conj(ct).transpose(1, 0, 2), axis=2)


def l_identity(n: int, k: int, kind: TransformKind) -> np.ndarray:
    """Tensor whose transform-domain frontal slices are all ``n x n`` identities."""
    kind = TransformKind.parse(kind)
    eye = np.repeat(np.eye(n, dtype=np.complex128)[:, :, None], k, axis=2)
    return kind.inverse(eye, axis=2)
