import numpy as np
import pytest

from sasgp.encoder import (
    HIDDEN_SIZES,
    VAR_FLOOR,
    MlpParams,
    encode,
    encode_gaussian,
    encode_gaussian_backward,
    encode_gaussian_forward,
    init_latent_table,
    init_mlp,
    mlp_backward,
    mlp_forward,
    softplus,
)
from sasgp.errors import DimensionMismatch


def toy_net(w0, b0, w1, b1, w2, b2):
    """1 -> 1 -> 1 -> 1 stack from scalars."""
    return MlpParams(
        layers=[
            (np.array([[w0]]), np.array([b0])),
            (np.array([[w1]]), np.array([b1])),
            (np.array([[w2]]), np.array([b2])),
        ]
    )


def zero_net(d_in, d_out):
    mlp = init_mlp(d_in, d_out, np.random.default_rng(0))
    for w, b in mlp.layers:
        w[...] = 0.0
        b[...] = 0.0
    return mlp


class TestEncodeForward:
    def test_zero_parameters_give_zero_latents(self):
        mlp = zero_net(4, 2)
        x = np.random.default_rng(1).standard_normal((5, 4))
        assert np.all(encode(x, mlp) == 0.0)

    def test_toy_hand_forward_active_path(self):
        # x=1.5: h0 = 2*1.5 + 0.5 = 3.5 (relu keeps), h1 = 1*3.5 - 1 = 2.5
        # (relu keeps), out = 3*2.5 - 0.25 = 7.25
        mlp = toy_net(2.0, 0.5, 1.0, -1.0, 3.0, -0.25)
        out = encode(np.array([[1.5]]), mlp)
        assert out[0, 0] == pytest.approx(7.25, abs=1e-15)

    def test_toy_hand_forward_dead_relu(self):
        # h1 = -1*3.5 + 1 = -2.5 -> relu clips to 0 -> out = b2
        mlp = toy_net(2.0, 0.5, -1.0, 1.0, 3.0, -0.25)
        out = encode(np.array([[1.5]]), mlp)
        assert out[0, 0] == pytest.approx(-0.25, abs=1e-15)

    def test_row_permutation_equivariance(self):
        rng = np.random.default_rng(2)
        mlp = init_mlp(6, 2, rng)
        x = rng.standard_normal((7, 6))
        perm = rng.permutation(7)
        # identical up to BLAS blocking differences across row layouts
        assert np.allclose(encode(x[perm], mlp), encode(x, mlp)[perm], atol=1e-14, rtol=0)

    def test_rowwise_independence(self):
        rng = np.random.default_rng(3)
        mlp = init_mlp(3, 2, rng)
        x = rng.standard_normal((4, 3))
        base = encode(x, mlp)
        x2 = x.copy()
        x2[1] += 10.0
        out = encode(x2, mlp)
        assert np.array_equal(out[[0, 2, 3]], base[[0, 2, 3]])
        assert not np.allclose(out[1], base[1])

    def test_dimension_mismatch(self):
        mlp = init_mlp(3, 2, np.random.default_rng(0))
        with pytest.raises(DimensionMismatch):
            encode(np.ones((2, 4)), mlp)

    def test_architecture_sizes(self):
        mlp = init_mlp(784, 2, np.random.default_rng(0))
        shapes = [(w.shape, b.shape) for w, b in mlp.layers]
        assert shapes == [
            ((784, 512), (512,)),
            ((512, 256), (256,)),
            ((256, 2), (2,)),
        ]
        assert HIDDEN_SIZES == (512, 256)

    def test_init_bounds_and_seedability(self):
        rng = np.random.default_rng(5)
        mlp = init_mlp(100, 2, rng)
        w0, b0 = mlp.layers[0]
        bound = 1.0 / np.sqrt(100)
        assert np.abs(w0).max() <= bound and np.abs(b0).max() <= bound
        again = init_mlp(100, 2, np.random.default_rng(5))
        assert np.array_equal(w0, again.layers[0][0])


class TestEncodeGaussian:
    def test_zero_variance_net_gives_softplus_at_zero(self):
        mu_net = init_mlp(3, 2, np.random.default_rng(0))
        var_net = zero_net(3, 2)
        q = encode_gaussian(np.random.default_rng(1).standard_normal((4, 3)), mu_net, var_net)
        assert np.allclose(q.var, np.log(2.0), atol=1e-12)  # softplus(0) ~ 0.6931

    def test_zero_mean_net_gives_zero_means(self):
        mu_net = zero_net(3, 2)
        var_net = init_mlp(3, 2, np.random.default_rng(2))
        q = encode_gaussian(np.ones((2, 3)), mu_net, var_net)
        assert np.all(q.mu == 0.0)

    def test_variance_floor(self):
        mu_net = zero_net(2, 1)
        var_net = zero_net(2, 1)
        var_net.layers[-1][1][...] = -50.0  # softplus(-50) ~ 2e-22, below the floor
        q = encode_gaussian(np.zeros((3, 2)), mu_net, var_net)
        assert np.allclose(q.var, VAR_FLOOR)

    def test_mean_head_shared_architecture(self):
        rng = np.random.default_rng(3)
        det = init_mlp(5, 2, rng)
        bay_mu = init_mlp(5, 2, rng)
        assert [w.shape for w, _ in det.layers] == [w.shape for w, _ in bay_mu.layers]


class TestBackward:
    def test_zero_upstream_gives_zero_grads(self):
        rng = np.random.default_rng(4)
        mlp = init_mlp(3, 2, rng)
        out, cache = mlp_forward(rng.standard_normal((5, 3)), mlp)
        grads, _ = mlp_backward(mlp, cache, np.zeros_like(out))
        assert all(np.all(dw == 0) and np.all(db == 0) for dw, db in grads)

    def test_toy_hand_backprop(self):
        # Active path from the forward test: out = w2*(w1*(w0*x+b0)+b1)+b2
        # at x=1.5, all ReLUs active. d out/d w0 = w2*w1*x, d out/d b0 = w2*w1,
        # d out/d w1 = w2*a0, d out/d b1 = w2, d out/d w2 = a1, d out/d b2 = 1.
        mlp = toy_net(2.0, 0.5, 1.0, -1.0, 3.0, -0.25)
        out, cache = mlp_forward(np.array([[1.5]]), mlp)
        grads, dx = mlp_backward(mlp, cache, np.ones((1, 1)), need_input_grad=True)
        (dw0, db0), (dw1, db1), (dw2, db2) = grads
        assert dw0[0, 0] == pytest.approx(3.0 * 1.0 * 1.5)
        assert db0[0] == pytest.approx(3.0 * 1.0)
        assert dw1[0, 0] == pytest.approx(3.0 * 3.5)
        assert db1[0] == pytest.approx(3.0)
        assert dw2[0, 0] == pytest.approx(2.5)
        assert db2[0] == pytest.approx(1.0)
        assert dx[0, 0] == pytest.approx(3.0 * 1.0 * 2.0)

    def test_relu_subgradient_zero_at_kink(self):
        mlp = toy_net(1.0, 0.0, 1.0, 0.0, 1.0, 0.0)
        out, cache = mlp_forward(np.array([[0.0]]), mlp)  # pre-activations exactly 0
        grads, _ = mlp_backward(mlp, cache, np.ones((1, 1)))
        assert grads[0][0][0, 0] == 0.0  # blocked by the 0-subgradient

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        mlp = init_mlp(4, 3, rng, hidden=(8, 5))
        x = rng.standard_normal((6, 4))

        def loss(m):
            out, _ = mlp_forward(x, m)
            return 0.5 * float(np.sum(out**2))

        out, cache = mlp_forward(x, mlp)
        grads, _ = mlp_backward(mlp, cache, out)
        h = 1e-6
        worst = 0.0
        for li, (w, b) in enumerate(mlp.layers):
            for arr, g in ((w, grads[li][0]), (b, grads[li][1])):
                flat = arr.reshape(-1)
                for idx in range(0, flat.size, max(1, flat.size // 10)):
                    orig = flat[idx]
                    flat[idx] = orig + h
                    fp = loss(mlp)
                    flat[idx] = orig - h
                    fm = loss(mlp)
                    flat[idx] = orig
                    fd = (fp - fm) / (2 * h)
                    a = float(g.reshape(-1)[idx])
                    worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), 1e-8))
        assert worst <= 1e-6

    def test_gaussian_encode_backward_matches_fd(self):
        rng = np.random.default_rng(7)
        mu_net = init_mlp(3, 2, rng, hidden=(6, 4))
        var_net = init_mlp(3, 2, rng, hidden=(6, 4))
        x = rng.standard_normal((5, 3))
        w_mu = rng.standard_normal((5, 2))
        w_lv = rng.standard_normal((5, 2))

        def loss():
            q = encode_gaussian(x, mu_net, var_net)
            return float(np.sum(w_mu * q.mu) + np.sum(w_lv * q.log_var))

        q, cache_mu, cache_s, s = encode_gaussian_forward(x, mu_net, var_net)
        g_mu_net, g_var_net = encode_gaussian_backward(mu_net, var_net, cache_mu, cache_s, s, w_mu, w_lv)
        h = 1e-6
        worst = 0.0
        for net, grads in ((mu_net, g_mu_net), (var_net, g_var_net)):
            for li, (w, b) in enumerate(net.layers):
                for arr, g in ((w, grads[li][0]), (b, grads[li][1])):
                    flat = arr.reshape(-1)
                    for idx in range(0, flat.size, max(1, flat.size // 6)):
                        orig = flat[idx]
                        flat[idx] = orig + h
                        fp = loss()
                        flat[idx] = orig - h
                        fm = loss()
                        flat[idx] = orig
                        fd = (fp - fm) / (2 * h)
                        a = float(g.reshape(-1)[idx])
                        worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), 1e-8))
        assert worst <= 1e-6


class TestSoftplusAndTable:
    def test_softplus_overflow_safe(self):
        assert softplus(np.array([800.0]))[0] == pytest.approx(800.0)
        assert softplus(np.array([-800.0]))[0] == 0.0
        assert softplus(np.array([0.0]))[0] == pytest.approx(np.log(2.0), abs=1e-15)

    def test_latent_table_init(self):
        rng = np.random.default_rng(8)
        det = init_latent_table(100, 2, rng)
        assert det.log_var is None
        assert det.mean.shape == (100, 2)
        assert abs(det.mean.std() - 0.1) < 0.02  # N(0, 0.01 I)
        bay = init_latent_table(50, 3, np.random.default_rng(9), bayesian=True)
        assert np.allclose(bay.log_var, np.log(0.1))
