import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lorita import nn
from lorita.errors import ShapeError


def make_model(dims, depth, seed=0):
    return nn.build_mlp(dims, depth=depth, seed=seed)


class TestFactorizedDense:
    def test_shape_chain_enforced(self):
        good = [np.zeros((4, 3)), np.zeros((3, 3))]
        nn.FactorizedDense(good)
        with pytest.raises(ShapeError):
            nn.FactorizedDense([np.zeros((4, 3)), np.zeros((4, 3))])

    def test_collapse_is_factor_product(self):
        rng = np.random.default_rng(0)
        factors = [rng.standard_normal((5, 4))] + [
            rng.standard_normal((4, 4)) for _ in range(2)
        ]
        layer = nn.FactorizedDense([f.copy() for f in factors])
        expected = factors[0] @ factors[1] @ factors[2]
        assert np.allclose(nn.collapse(layer), expected, atol=1e-12)

    def test_collapse_single_factor_identity(self):
        w = np.random.default_rng(1).standard_normal((3, 6))
        layer = nn.FactorizedDense([w.copy()])
        assert np.array_equal(nn.collapse(layer), w)


class TestInit:
    @pytest.mark.parametrize("depth", [1, 2, 3])
    def test_collapsed_variance_matches_single_factor(self, depth):
        """Collapsed-product entries should have variance 2/n regardless of
        how many factors the layer is split into."""
        n = 64
        samples = []
        for seed in range(40):
            layer = nn.init_factorized(n, n, depth, seed=seed)
            samples.append(nn.collapse(layer).ravel())
        var = np.var(np.concatenate(samples))
        assert abs(var - 2.0 / n) < 0.15 * (2.0 / n)

    def test_deterministic(self):
        a = nn.init_factorized(5, 4, 2, seed=7)
        b = nn.init_factorized(5, 4, 2, seed=7)
        for fa, fb in zip(a.factors, b.factors):
            assert np.array_equal(fa, fb)


class TestForward:
    def test_output_shape(self):
        model = make_model([6, 9, 4], depth=2)
        x = np.random.default_rng(0).standard_normal((11, 6))
        logits, _ = nn.forward(model, x)
        assert logits.shape == (11, 4)

    def test_matches_collapsed_dense(self):
        """A factorized network and its collapsed counterpart are the same
        function."""
        rng = np.random.default_rng(1)
        model = make_model([5, 8, 7, 3], depth=3, seed=2)
        collapsed = nn.Mlp(
            [nn.FactorizedDense([nn.collapse(layer)]) for layer in model.layers]
        )
        x = rng.standard_normal((20, 5))
        out_a, _ = nn.forward(model, x)
        out_b, _ = nn.forward(collapsed, x)
        assert np.abs(out_a - out_b).max() < 1e-10

    def test_relu_between_but_not_after_last(self):
        w1 = np.array([[1.0]])
        w2 = np.array([[-1.0]])
        model = nn.Mlp([nn.FactorizedDense([w1]), nn.FactorizedDense([w2])])
        x = np.array([[2.0], [-2.0]])
        logits, _ = nn.forward(model, x)
        # hidden relu(2)=2 -> -2; relu(-2)=0 -> 0 (last layer linear)
        assert np.allclose(logits, [[-2.0], [0.0]])


class TestBackward:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_gradient_check(self, seed):
        """Backward gradients match central finite differences on probed
        entries of every factor."""
        rng = np.random.default_rng(seed)
        model = make_model([4, 6, 3], depth=2, seed=seed)
        x = rng.standard_normal((9, 4))
        y = rng.integers(0, 3, size=9)

        def loss_value():
            logits, _ = nn.forward(model, x)
            loss, _ = nn.softmax_ce(logits, y)
            return loss

        logits, cache = nn.forward(model, x)
        _, dlogits = nn.softmax_ce(logits, y)
        grads = nn.backward(model, cache, dlogits)

        factors = model.all_factors()
        flat_grads = grads
        eps = 1e-6
        probes = 0
        for f, g in zip(factors, flat_grads):
            idx = (rng.integers(f.shape[0]), rng.integers(f.shape[1]))
            orig = f[idx]
            f[idx] = orig + eps
            up = loss_value()
            f[idx] = orig - eps
            down = loss_value()
            f[idx] = orig
            numeric = (up - down) / (2 * eps)
            denom = max(abs(numeric), abs(g[idx]), 1e-8)
            assert abs(numeric - g[idx]) / denom <= 1e-5
            probes += 1
        assert probes >= 4

    def test_grad_shapes_match_factors(self):
        model = make_model([4, 6, 3], depth=3)
        x = np.random.default_rng(0).standard_normal((5, 4))
        logits, cache = nn.forward(model, x)
        _, dlogits = nn.softmax_ce(logits, np.zeros(5, dtype=np.int64))
        grads = nn.backward(model, cache, dlogits)
        assert len(grads) == len(model.all_factors())
        for f, g in zip(model.all_factors(), grads):
            assert g.shape == f.shape

    def test_cache_model_mismatch_rejected(self):
        m1 = make_model([3, 4, 2], depth=1, seed=0)
        m2 = make_model([3, 4, 2], depth=1, seed=1)
        x = np.random.default_rng(0).standard_normal((4, 3))
        _, cache = nn.forward(m1, x)
        with pytest.raises(ShapeError):
            nn.backward(m2, cache, np.zeros((4, 2)))


class TestSoftmaxCe:
    def test_uniform_logits(self):
        loss, _ = nn.softmax_ce(np.zeros((4, 10)), np.arange(4, dtype=np.int64))
        assert abs(loss - np.log(10)) < 1e-12

    def test_extreme_logits_stable(self):
        logits = np.array([[1000.0, -1000.0]])
        loss, d = nn.softmax_ce(logits, np.array([0]))
        assert np.isfinite(loss) and loss < 1e-10
        assert np.all(np.isfinite(d))

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**31), b=st.integers(1, 12), c=st.integers(2, 8))
    def test_gradient_rows_sum_to_zero(self, seed, b, c):
        rng = np.random.default_rng(seed)
        logits = rng.standard_normal((b, c)) * 3
        labels = rng.integers(0, c, size=b)
        _, d = nn.softmax_ce(logits, labels)
        assert np.abs(d.sum(axis=1)).max() < 1e-12


class TestConv:
    @pytest.mark.parametrize("fh,fw", [(1, 1), (3, 3), (2, 3)])
    def test_full_rank_lowrank_equivalence(self, fh, fw):
        rng = np.random.default_rng(fh * 10 + fw)
        h, w, d, m = 6, 7, 4, 5
        image = rng.standard_normal((h, w, d))
        kernel = rng.standard_normal((fh, fw, d, m))
        direct = nn.conv_forward(image, kernel)

        from lorita import linalg

        unfolded = nn.mode4_unfold(kernel)  # (fh*fw*d) x m
        sr = linalg.svd(unfolded)
        l_tensor = nn.fold4(sr.u * sr.s, (fh, fw, d, sr.k))
        r_mat = np.ascontiguousarray(sr.vt.T)  # m x k
        lrc = nn.LowRankConv(l_tensor=l_tensor, r_mat=r_mat)
        low = nn.lowrank_conv_forward(image, lrc)
        assert np.abs(direct - low).max() <= 1e-6

    def test_conv_reference(self):
        """1x1 conv is a pixelwise linear map."""
        rng = np.random.default_rng(3)
        image = rng.standard_normal((4, 5, 3))
        kernel = rng.standard_normal((1, 1, 3, 2))
        out = nn.conv_forward(image, kernel)
        expected = (image.reshape(-1, 3) @ kernel[0, 0]).reshape(4, 5, 2)
        assert np.allclose(out, expected)

    def test_unfold_fold_roundtrip(self):
        rng = np.random.default_rng(4)
        kernel = rng.standard_normal((3, 2, 5, 4))
        mat = nn.mode4_unfold(kernel)
        assert mat.shape == (3 * 2 * 5, 4)
        back = nn.fold4(mat, kernel.shape)
        assert np.array_equal(back, kernel)
