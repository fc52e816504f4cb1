"""The compiled and numpy kernels must agree."""
import numpy as np
import numpy.testing as npt
import pytest

from prcurves import kernels
from prcurves.nn import ops
from prcurves.nn.model import rope_tables


class TestMetricKernels:
    def test_joint(self, rng):
        tables = [rng.dirichlet(np.ones(3), size=3 ** d) for d in range(4)]
        npt.assert_allclose(kernels.joint_from_tables_nb(tables), kernels.joint_from_tables_np(tables),
                            rtol=1e-15)

    @pytest.mark.parametrize("n_blocks", [1, 3, 7])
    def test_pr_sums(self, rng, n_blocks):
        p, q = rng.dirichlet(np.ones(1000)), rng.dirichlet(np.ones(1000))
        lams = np.geomspace(0.01, 100, 9)
        a1, b1 = kernels.pr_sums_nb(p, q, lams, n_blocks)
        a2, b2 = kernels.pr_sums_np(p, q, lams, n_blocks)
        npt.assert_allclose(a1, a2, rtol=1e-13)
        npt.assert_allclose(b1, b2, rtol=1e-13)
        npt.assert_allclose(a1, [np.minimum(l * p, q).sum() for l in lams], rtol=1e-12)

    def test_pr_sums_block_count_stable(self, rng):
        p, q = rng.dirichlet(np.ones(500)), rng.dirichlet(np.ones(500))
        lams = np.array([0.5, 2.0])
        ref = kernels.pr_sums(p, q, lams, 5)
        npt.assert_array_equal(ref[0], kernels.pr_sums(p, q, lams, 5)[0])

    def test_knn(self, rng):
        x, y = rng.standard_normal((80, 4)), rng.standard_normal((50, 4))
        r_nb, r_np = kernels.kth_nn_sqdist_nb(x, 3), kernels.kth_nn_sqdist_np(x, 3)
        npt.assert_allclose(r_nb, r_np, rtol=1e-12)
        npt.assert_array_equal(kernels.in_any_ball_nb(y, x, r_np), kernels.in_any_ball_np(y, x, r_np))

    @pytest.mark.parametrize("p", [0.5, 0.9, 0.99])
    def test_cover_counts(self, rng, p):
        probs = rng.dirichlet(np.ones(12) * 0.3, size=(200, 3))
        k = kernels.cover_counts_nb(probs, p)
        npt.assert_array_equal(k, kernels.cover_counts_np(probs, p))
        srt = -np.sort(-probs, axis=-1)
        npt.assert_array_equal(k, (np.cumsum(srt, axis=-1) < p - kernels.MASS_TOL).sum(-1) + 1)

    def test_cover_counts_exact_fraction(self):
        # 9 of 10 uniform tokens reach 0.9 even with float round-off
        assert kernels.cover_counts(np.full((1, 10), 0.1), 0.9)[0] == 9


class TestModelKernels:
    B, T, H, d, f = 6, 5, 2, 8, 12

    def test_rms(self, rng):
        x = rng.standard_normal((30, self.d))
        g = rng.random(self.d) + 0.5
        y1, xh1, inv1 = ops.rms_fwd_nb(x, g)
        y2, xh2, inv2 = ops.rms_fwd_np(x, g)
        npt.assert_allclose(y1, y2, rtol=1e-12)
        dy = rng.standard_normal(x.shape)
        for a, b in zip(ops.rms_bwd_nb(dy, g, xh1, inv1), ops.rms_bwd_np(dy, g, xh2, inv2)):
            npt.assert_allclose(a, b, rtol=1e-11, atol=1e-13)

    def test_swiglu(self, rng):
        z = rng.standard_normal((30, 2 * self.f))
        h1, s1 = ops.swiglu_fwd_nb(z)
        h2, s2 = ops.swiglu_fwd_np(z)
        npt.assert_allclose(h1, h2, rtol=1e-12)
        dh = rng.standard_normal(h1.shape)
        npt.assert_allclose(ops.swiglu_bwd_nb(dh, z, s1), ops.swiglu_bwd_np(dh, z, s2), rtol=1e-11, atol=1e-14)

    @pytest.mark.parametrize("rope", [True, False])
    def test_attention(self, rng, rope):
        B, T, H, d = self.B, self.T, self.H, self.d
        cos, sin = rope_tables(T, d // H, np.float64)
        qkv = rng.standard_normal((B * T, 3 * d))
        o1, c1 = ops.attn_fwd_nb(qkv, B, T, H, cos, sin, rope)
        o2, c2 = ops.attn_fwd_np(qkv, B, T, H, cos, sin, rope)
        npt.assert_allclose(o1, o2, rtol=1e-11, atol=1e-13)
        do = rng.standard_normal(o1.shape)
        npt.assert_allclose(ops.attn_bwd_nb(do, c1, B, T, H, cos, sin, rope),
                            ops.attn_bwd_np(do, c2, B, T, H, cos, sin, rope), rtol=1e-10, atol=1e-12)
