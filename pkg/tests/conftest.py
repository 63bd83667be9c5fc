import numpy as np
import pytest

from lmlds.gaussian_lds import SliceLDSParams

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20181203)


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def random_psd(rng, n, complex_=True, jitter=0.5):
    m = crandn(rng, n, n) if complex_ else rng.standard_normal((n, n))
    return m @ m.conj().T / n + jitter * np.eye(n)


def random_params(rng, n_obs, n_latent, complex_=True, radius=0.8):
    draw = (lambda *s: crandn(rng, *s)) if complex_ else (lambda *s: rng.standard_normal(s))
    a = draw(n_latent, n_latent)
    a *= radius / max(np.max(np.abs(np.linalg.eigvals(a))), 1e-12)
    return SliceLDSParams(
        u0=draw(n_latent),
        q0=random_psd(rng, n_latent, complex_),
        a=a,
        q=random_psd(rng, n_latent, complex_),
        c=draw(n_obs, n_latent),
        r=random_psd(rng, n_obs, complex_),
    )
