import numpy as np
import pytest

from lrunet import gradcheck


def test_numeric_grad_quadratic():
    x = np.array([1.0, -2.0, 3.0])
    g = gradcheck.numeric_grad(lambda: float((x ** 2).sum()), x, step=1e-5)
    assert np.allclose(g, 2 * x, atol=1e-8)


def test_relative_error_metric():
    a = np.array([1.0, 0.0])
    assert gradcheck.relative_error(a, a) == 0.0
    assert gradcheck.relative_error(np.array([2.0]), np.array([1.0])) == pytest.approx(0.5)
    # denominator floors at 1, so tiny absolute noise stays tiny
    assert gradcheck.relative_error(np.array([1e-9]), np.array([0.0])) == pytest.approx(1e-9)


def test_all_op_checks_pass():
    results = gradcheck.run_op_checks(seeds=(0, 1))
    names = [r.name for r in results]
    assert len(names) == len(set(names))
    for r in results:
        assert r.passed, r.line()


def test_network_check_passes():
    result = gradcheck.run_network_check(seed=0)
    assert result.passed, result.line()


def test_corrupt_hook_is_caught():
    gradcheck.CORRUPT_SHUFFLE_BACKWARD = True
    try:
        results = gradcheck.run_op_checks(seeds=(0,))
    finally:
        gradcheck.CORRUPT_SHUFFLE_BACKWARD = False
    bad = {r.name: r for r in results}["channel_shuffle"]
    assert not bad.passed
    assert bad.max_rel_err > bad.tolerance
