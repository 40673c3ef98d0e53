"""Smoke test for the bam_py extension.

Build and install first, e.g. ``maturin develop -m crates/py/Cargo.toml``,
then run ``python python/smoke_test.py`` or ``pytest python``.
"""

import math

import bam_py

X1 = """dims 3 4
0 0 2
0 1 1
0 2 1
1 2 1
1 3 2
2 2 1
2 3 1
"""


def test_tensor_round_trip():
    x = bam_py.Tensor.parse(X1)
    assert x.dims == [3, 4]
    assert x.total == 9
    assert x.nnz == 7
    y = bam_py.Tensor([3, 4], x.entries())
    assert y.entries() == x.entries()


def test_scores_are_consistent():
    x = bam_py.Tensor.parse(X1)
    exact = bam_py.exact_log_marginal(x, "klnmf", 2)
    assert math.isfinite(exact)
    # VB is a lower bound on the exact value
    assert bam_py.vb_elbo(x, "klnmf", 2, restarts=3) <= exact + 1e-9
    # with one latent state and no resampling every SIS weight is the exact value
    one = bam_py.exact_log_marginal(x, "klnmf", 1)
    smc = bam_py.smc_log_marginal(x, "klnmf", 1, particles=50, schedule="never")
    assert abs(smc["log_z"] - one) < 1e-9
    assert smc["resampling_events"] == 0


def test_bad_input_raises():
    try:
        bam_py.Tensor.parse("dims 2 2\n0 0 x\n")
    except ValueError:
        pass
    else:
        raise AssertionError("malformed tensor accepted")


if __name__ == "__main__":
    test_tensor_round_trip()
    test_scores_are_consistent()
    test_bad_input_raises()
    print("ok")
