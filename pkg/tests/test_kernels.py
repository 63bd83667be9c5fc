import os
import subprocess
import sys

import numpy as np
import pytest

from conftest import crandn, random_params
from lmlds import kernels
from lmlds.gaussian_lds import smooth


@pytest.mark.parametrize("flag, expected", [("1", "numpy"), ("0", "numba"), ("", "numba")])
def test_env_flag_selects_backend(flag, expected):
    env = dict(os.environ, LMLDS_DISABLE_NUMBA=flag)
    out = subprocess.run(
        [sys.executable, "-c", "from lmlds import kernels; print(kernels.get_backend())"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == expected


def test_set_backend_rejects_unknown():
    with pytest.raises(ValueError):
        kernels.set_backend("cuda")


def test_backends_agree(rng):
    for _ in range(10):
        p = random_params(rng, 4, 3)
        y = crandn(rng, 30, 4)
        a = smooth(p, y, backend="numba")
        b = smooth(p, y, backend="numpy")
        for name in ("filtered_means", "filtered_covs", "smoothed_means", "smoothed_covs", "cross_covs"):
            np.testing.assert_allclose(getattr(a, name), getattr(b, name), atol=1e-12)
        assert abs(a.log_likelihood - b.log_likelihood) < 1e-9


def test_switch_is_global(rng):
    before = kernels.get_backend()
    try:
        kernels.set_backend("numpy")
        assert kernels.get_backend() == "numpy"
    finally:
        kernels.set_backend(before)
