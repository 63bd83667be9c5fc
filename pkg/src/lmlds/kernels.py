"""Kalman filter / RTS smoother inner loops.

Two interchangeable backends compute the same forward-backward pass:

* ``numba``: ``@njit(nogil=True)`` loops with a hand-rolled complex Cholesky,
  so concurrent slice fits in threads actually run in parallel;
* ``numpy``: the same recursions written with ``numpy.linalg``.

The default is ``numba`` unless the environment variable
``LMLDS_DISABLE_NUMBA`` is set to a non-empty value other than ``0``, or numba
cannot be imported.  :func:`set_backend` switches at runtime.

Both backends return ``fail_step = -1`` on success, otherwise the 0-based
time index whose covariance factorization broke down (forward pass) or
``N + n`` for a failure at step ``n`` of the backward pass.
"""

from __future__ import annotations

import os

import numpy as np

_LOG_PI = float(np.log(np.pi))

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


def _env_disabled() -> bool:
    flag = os.environ.get("LMLDS_DISABLE_NUMBA", "")
    return flag not in ("", "0")


_backend = "numba" if HAVE_NUMBA and not _env_disabled() else "numpy"


def get_backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _backend = name


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------


def _herm(m):
    return 0.5 * (m + m.conj().swapaxes(-1, -2))


def _forward_numpy(u0, q0, a, q, c, r, y):
    n_steps, n_obs = y.shape
    n_lat = u0.shape[0]
    pm = np.empty((n_steps, n_lat), np.complex128)
    pc = np.empty((n_steps, n_lat, n_lat), np.complex128)
    fm = np.empty((n_steps, n_lat), np.complex128)
    fc = np.empty((n_steps, n_lat, n_lat), np.complex128)
    ll = 0.0
    m, p = u0, q0
    ch = c.conj().T
    for n in range(n_steps):
        pm[n], pc[n] = m, p
        cp = c @ p
        s = cp @ ch + r
        try:
            lo = np.linalg.cholesky(_herm(s))
        except np.linalg.LinAlgError:
            return pm, pc, fm, fc, ll, n
        e = y[n] - c @ m
        w = np.linalg.solve(lo, e)
        z = np.linalg.solve(lo, cp)
        # gain^H = S^{-1} C P
        kt = np.linalg.solve(lo.conj().T, z)
        kgain = kt.conj().T
        fm[n] = m + kgain @ e
        fc[n] = _herm(p - kgain @ cp)
        ll -= n_obs * _LOG_PI + 2.0 * np.sum(np.log(np.diag(lo).real)) + np.vdot(w, w).real
        m = a @ fm[n]
        p = _herm(a @ fc[n] @ a.conj().T + q)
    return pm, pc, fm, fc, ll, -1


def _backward_numpy(a, pm, pc, fm, fc):
    n_steps, n_lat = fm.shape
    sm = np.empty_like(fm)
    sc = np.empty_like(fc)
    xc = np.zeros_like(fc)
    sm[-1], sc[-1] = fm[-1], fc[-1]
    for n in range(n_steps - 2, -1, -1):
        try:
            lo = np.linalg.cholesky(_herm(pc[n + 1]))
        except np.linalg.LinAlgError:
            return sm, sc, xc, n_steps + n
        # gain^H = P_{n+1}^{-1} A V_n
        gh = np.linalg.solve(lo.conj().T, np.linalg.solve(lo, a @ fc[n]))
        g = gh.conj().T
        sm[n] = fm[n] + g @ (sm[n + 1] - pm[n + 1])
        sc[n] = _herm(fc[n] + g @ (sc[n + 1] - pc[n + 1]) @ gh)
        xc[n + 1] = sc[n + 1] @ gh
    return sm, sc, xc, -1


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------


def _chol(s, lo):
    # lower Cholesky of a Hermitian matrix into ``lo``; False if not PD
    n = s.shape[0]
    for j in range(n):
        d = s[j, j].real
        for k in range(j):
            d -= lo[j, k].real * lo[j, k].real + lo[j, k].imag * lo[j, k].imag
        if not d > 0.0:
            return False
        ljj = np.sqrt(d)
        lo[j, j] = ljj
        for i in range(j + 1, n):
            acc = s[i, j]
            for k in range(j):
                acc -= lo[i, k] * np.conj(lo[j, k])
            lo[i, j] = acc / ljj
        for i in range(j):
            lo[i, j] = 0.0
    return True


def _fwd_sub(lo, b):
    # solve L x = b in place, b is (n, m)
    n, m = b.shape
    for col in range(m):
        for i in range(n):
            acc = b[i, col]
            for k in range(i):
                acc -= lo[i, k] * b[k, col]
            b[i, col] = acc / lo[i, i].real


def _bwd_sub_h(lo, b):
    # solve L^H x = b in place
    n, m = b.shape
    for col in range(m):
        for i in range(n - 1, -1, -1):
            acc = b[i, col]
            for k in range(i + 1, n):
                acc -= np.conj(lo[k, i]) * b[k, col]
            b[i, col] = acc / lo[i, i].real


def _mm(x, y):
    n, p = x.shape
    m = y.shape[1]
    out = np.zeros((n, m), np.complex128)
    for i in range(n):
        for k in range(p):
            xik = x[i, k]
            for j in range(m):
                out[i, j] += xik * y[k, j]
    return out


def _mm_h(x, y):
    # x @ y^H
    n, p = x.shape
    m = y.shape[0]
    out = np.zeros((n, m), np.complex128)
    for i in range(n):
        for j in range(m):
            acc = 0j
            for k in range(p):
                acc += x[i, k] * np.conj(y[j, k])
            out[i, j] = acc
    return out


def _hm(x, y):
    # x^H @ y
    p, n = x.shape
    m = y.shape[1]
    out = np.zeros((n, m), np.complex128)
    for k in range(p):
        for i in range(n):
            xki = np.conj(x[k, i])
            for j in range(m):
                out[i, j] += xki * y[k, j]
    return out


def _mv(x, v):
    n, p = x.shape
    out = np.zeros(n, np.complex128)
    for i in range(n):
        acc = 0j
        for k in range(p):
            acc += x[i, k] * v[k]
        out[i] = acc
    return out


def _herm_inplace(m):
    n = m.shape[0]
    for i in range(n):
        m[i, i] = m[i, i].real
        for j in range(i + 1, n):
            v = 0.5 * (m[i, j] + np.conj(m[j, i]))
            m[i, j] = v
            m[j, i] = np.conj(v)


def _forward_loop(u0, q0, a, q, c, r, y):
    n_steps, n_obs = y.shape
    n_lat = u0.shape[0]
    pm = np.empty((n_steps, n_lat), np.complex128)
    pc = np.empty((n_steps, n_lat, n_lat), np.complex128)
    fm = np.empty((n_steps, n_lat), np.complex128)
    fc = np.empty((n_steps, n_lat, n_lat), np.complex128)
    lo = np.zeros((n_obs, n_obs), np.complex128)
    ll = 0.0
    m = u0.copy()
    p = q0.copy()
    for n in range(n_steps):
        pm[n] = m
        pc[n] = p
        cp = _mm(c, p)
        s = _mm_h(cp, c) + r
        _herm_inplace(s)
        if not _chol(s, lo):
            return pm, pc, fm, fc, ll, n
        e = (y[n] - _mv(c, m)).reshape(n_obs, 1)
        w = e.copy()
        _fwd_sub(lo, w)
        kt = cp.copy()
        _fwd_sub(lo, kt)
        _bwd_sub_h(lo, kt)
        # kt = S^{-1} C P, gain = kt^H
        fmn = m + _hm(kt, e)[:, 0]
        fcn = p - _hm(kt, cp)
        _herm_inplace(fcn)
        fm[n] = fmn
        fc[n] = fcn
        logdet = 0.0
        quad = 0.0
        for i in range(n_obs):
            logdet += np.log(lo[i, i].real)
            quad += w[i, 0].real * w[i, 0].real + w[i, 0].imag * w[i, 0].imag
        ll -= n_obs * _LOG_PI + 2.0 * logdet + quad
        m = _mv(a, fmn)
        p = _mm_h(_mm(a, fcn), a) + q
        _herm_inplace(p)
    return pm, pc, fm, fc, ll, -1


def _backward_loop(a, pm, pc, fm, fc):
    n_steps, n_lat = fm.shape
    sm = np.empty_like(fm)
    sc = np.empty_like(fc)
    xc = np.zeros_like(fc)
    sm[n_steps - 1] = fm[n_steps - 1]
    sc[n_steps - 1] = fc[n_steps - 1]
    lo = np.zeros((n_lat, n_lat), np.complex128)
    for n in range(n_steps - 2, -1, -1):
        pn = pc[n + 1].copy()
        if not _chol(pn, lo):
            return sm, sc, xc, n_steps + n
        gh = _mm(a, fc[n])
        _fwd_sub(lo, gh)
        _bwd_sub_h(lo, gh)
        diff = (sm[n + 1] - pm[n + 1]).reshape(n_lat, 1)
        sm[n] = fm[n] + _hm(gh, diff)[:, 0]
        scn = fc[n] + _hm(gh, _mm(sc[n + 1] - pc[n + 1], gh))
        _herm_inplace(scn)
        sc[n] = scn
        xc[n + 1] = _mm(sc[n + 1], gh)
    return sm, sc, xc, -1


if HAVE_NUMBA:
    _jit = numba.njit(cache=True, nogil=True)
    _chol = _jit(_chol)
    _fwd_sub = _jit(_fwd_sub)
    _bwd_sub_h = _jit(_bwd_sub_h)
    _mm = _jit(_mm)
    _mm_h = _jit(_mm_h)
    _hm = _jit(_hm)
    _mv = _jit(_mv)
    _herm_inplace = _jit(_herm_inplace)
    _forward_numba = _jit(_forward_loop)
    _backward_numba = _jit(_backward_loop)


def _prep(*arrays):
    return tuple(np.ascontiguousarray(x, dtype=np.complex128) for x in arrays)


def forward(u0, q0, a, q, c, r, y, backend: str | None = None):
    """Kalman forward pass.

    Returns predicted means/covariances, filtered means/covariances, the
    complex-Gaussian log-likelihood and ``fail_step``.
    """
    args = _prep(u0, q0, a, q, c, r, y)
    if (backend or _backend) == "numba":
        return _forward_numba(*args)
    return _forward_numpy(*args)


def backward(a, pm, pc, fm, fc, backend: str | None = None):
    """RTS backward pass: smoothed means, covariances, lag-one cross-covariances."""
    args = _prep(a, pm, pc, fm, fc)
    if (backend or _backend) == "numba":
        return _backward_numba(*args)
    return _backward_numpy(*args)
