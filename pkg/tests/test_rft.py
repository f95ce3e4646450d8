import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from salmap.rft import rft_rank, rft_select


def oracle_scores(x, y, bins):
    """Exhaustive reference: direct variance arithmetic per candidate split."""
    n, p = x.shape
    out = np.full(p, y.var())
    for j in range(p):
        lo, hi = x[:, j].min(), x[:, j].max()
        if not lo < hi:
            continue
        best = None
        for b in range(1, bins):
            t = lo + (hi - lo) * b / bins
            left = x[:, j] < t
            nl = left.sum()
            if nl == 0 or nl == n:
                continue
            cost = (nl * y[left].var() + (n - nl) * y[~left].var()) / n
            best = cost if best is None else min(best, cost)
        if best is not None:
            out[j] = max(best, 0.0)
    return out


class TestScores:
    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(0)
        x = rng.random((400, 12))
        y = rng.random(400) + 0.5 * x[:, 3]
        res = rft_rank(x, y, bins=16)
        assert_allclose(res.r_op, oracle_scores(x, y, 16), atol=1e-10)

    def test_oracle_with_skewed_columns(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((256, 6)) ** 3  # heavy tails stress binning
        y = rng.standard_normal(256)
        res = rft_rank(x, y, bins=8)
        assert_allclose(res.r_op, oracle_scores(x, y, 8), atol=1e-10)

    def test_planted_feature_wins(self):
        rng = np.random.default_rng(2)
        x = rng.random((500, 20))
        y = np.where(x[:, 7] > 0.5, 1.0, 0.0)
        res = rft_rank(x, y, bins=16)
        assert res.ranking[0] == 7
        assert res.r_op[7] < 0.05
        assert res.r_op[7] < res.r_op[[c for c in range(20) if c != 7]].min()

    def test_constant_column_scores_target_variance(self):
        rng = np.random.default_rng(3)
        x = rng.random((100, 3))
        x[:, 1] = 2.5
        y = rng.random(100)
        res = rft_rank(x, y, bins=4)
        assert res.r_op[1] == pytest.approx(y.var(), abs=1e-15)
        assert res.target_variance == pytest.approx(y.var(), abs=1e-15)

    def test_scores_never_exceed_target_variance(self):
        rng = np.random.default_rng(4)
        x = rng.random((300, 10))
        y = rng.random(300)
        res = rft_rank(x, y, bins=16)
        assert np.all(res.r_op <= y.var() + 1e-12)
        assert np.all(res.r_op >= 0.0)


class TestRanking:
    def test_ascending_with_index_tiebreak(self):
        rng = np.random.default_rng(5)
        col = rng.random(200)
        x = np.stack([rng.random(200), col, col], axis=1)
        y = col + 0.1 * rng.random(200)
        res = rft_rank(x, y, bins=8)
        scores = res.r_op[res.ranking]
        assert np.all(np.diff(scores) >= 0)
        pos1 = np.where(res.ranking == 1)[0][0]
        pos2 = np.where(res.ranking == 2)[0][0]
        assert res.r_op[1] == res.r_op[2]
        assert pos1 < pos2

    def test_selection(self):
        rng = np.random.default_rng(6)
        x = rng.random((150, 8))
        y = x[:, 2] + 0.01 * rng.random(150)
        picked = rft_select(x, y, bins=8, keep=3)
        assert picked.shape == (3,)
        assert picked[0] == 2
        res = rft_rank(x, y, bins=8)
        assert_array_equal(picked, res.ranking[:3])
        sel = res.with_selected(5)
        assert_array_equal(sel.selected, res.ranking[:5])
        assert res.selected.size == 0  # original untouched

    def test_keep_range_checked(self):
        rng = np.random.default_rng(7)
        x = rng.random((64, 4))
        y = rng.random(64)
        with pytest.raises(ValueError):
            rft_select(x, y, bins=4, keep=0)
        with pytest.raises(ValueError):
            rft_select(x, y, bins=4, keep=5)


class TestValidation:
    def test_shape_errors(self):
        with pytest.raises(ValueError):
            rft_rank(np.zeros((0, 3)), np.zeros(0))
        with pytest.raises(ValueError):
            rft_rank(np.zeros((64, 3)), np.zeros(32))
        with pytest.raises(ValueError):
            rft_rank(np.zeros((64, 3)), np.zeros(64), bins=1)

    def test_needs_enough_samples(self):
        rng = np.random.default_rng(8)
        with pytest.raises(ValueError):
            rft_rank(rng.random((31, 2)), rng.random(31), bins=16)
