"""Property tests for the CI metric over randomly generated matrices."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chip.ci import NEG_TOL_FACTOR, RowMask, ci_all, ci_combined_exact, ci_single, nuclear_norm, rank_change
from chip.tensor_io import ActivationMatrix

SETTINGS = settings(max_examples=40, deadline=None, derandomize=True)


@st.composite
def matrices(draw, min_rows=2, max_rows=8, min_cols=2, max_cols=16):
    rows = draw(st.integers(min_rows, max_rows))
    cols = draw(st.integers(min_cols, max_cols))
    seed = draw(st.integers(0, 2**31 - 1))
    a = np.random.default_rng(seed).standard_normal((rows, cols))
    return ActivationMatrix("prop", a)


@SETTINGS
@given(matrices(), st.floats(0.0, 10.0))
def test_homogeneity(m, alpha):
    scaled = ActivationMatrix("prop", alpha * m.data)
    for ch in range(m.rows):
        base = ci_single(m, ch).value
        got = ci_single(scaled, ch).value
        assert got == pytest.approx(alpha * base, rel=1e-8, abs=1e-8)


@SETTINGS
@given(matrices(), st.integers(0, 2**31 - 1))
def test_permutation_equivariance(m, perm_seed):
    perm = np.random.default_rng(perm_seed).permutation(m.rows)
    permuted = ActivationMatrix("prop", m.data[perm])
    norm = nuclear_norm(m)
    for new_pos, old_ch in enumerate(perm):
        a = ci_single(m, int(old_ch)).value
        b = ci_single(permuted, new_pos).value
        assert abs(a - b) <= 1e-9 * max(1.0, norm)


@SETTINGS
@given(matrices(min_rows=3), st.integers(0, 2**31 - 1))
def test_non_negativity_and_monotonicity(m, mask_seed):
    rng = np.random.default_rng(mask_seed)
    size = int(rng.integers(1, m.rows - 1))
    rows = sorted(int(r) for r in rng.choice(m.rows, size=size, replace=False))
    small = ci_combined_exact(m, RowMask.of(m.rows, rows[:-1]))
    big = ci_combined_exact(m, RowMask.of(m.rows, rows))
    tol = NEG_TOL_FACTOR * max(1.0, nuclear_norm(m))
    assert small >= 0.0
    assert big >= 0.0
    assert big >= small - tol


@SETTINGS
@given(matrices(min_rows=3))
def test_zero_row_properties(m):
    a = m.data.copy()
    a[1] = 0.0
    z = ActivationMatrix("prop", a)
    assert ci_single(z, 1).value == 0.0
    assert rank_change(z, 1) == 0


@SETTINGS
@given(matrices())
def test_single_channel_consistency(m):
    for ch in range(m.rows):
        exact = ci_combined_exact(m, RowMask.of(m.rows, [ch]))
        single = ci_single(m, ch).value
        assert exact == pytest.approx(single, rel=1e-10, abs=1e-12)


@SETTINGS
@given(st.integers(2, 8), st.integers(0, 2**31 - 1))
def test_orthogonal_rows_make_approx_exact(rows, seed):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((rows + 2, rows)))
    scales = rng.uniform(0.5, 3.0, rows)
    m = ActivationMatrix("prop", (q * scales).T)
    scores = ci_all(m)
    pick = sorted(int(r) for r in rng.choice(rows, size=max(1, rows // 2), replace=False))
    from chip.ci import ci_combined_approx

    approx = ci_combined_approx(scores, set(pick))
    exact = ci_combined_exact(m, RowMask.of(rows, pick))
    assert approx == pytest.approx(exact, rel=1e-8, abs=1e-9)
