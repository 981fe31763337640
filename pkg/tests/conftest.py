import numpy as np
import pytest

from sfinet.gradcheck import check_grad


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def assert_grads_match(build_loss, params, tol=1e-4, step=1e-5):
    """Analytic vs central-finite-difference gradients for named leaves."""
    errs = check_grad(build_loss, params, step=step)
    bad = {k: v for k, v in errs.items() if v >= tol}
    assert not bad, f"gradient mismatch: {bad}"
