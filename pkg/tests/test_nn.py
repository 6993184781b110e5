import numpy as np
import pytest

from retailsim.nn import MLP, SGD, Adam, mse_loss_grad


def fd_grads(net, loss_fn, h=1e-6):
    flat = net.get_flat()
    out = np.empty_like(flat)
    for i in range(flat.size):
        vals = []
        for sign in (1, -1):
            f = flat.copy()
            f[i] += sign * h
            net.set_flat(f)
            vals.append(loss_fn())
        out[i] = (vals[0] - vals[1]) / (2 * h)
    net.set_flat(flat)
    return out


def max_rel(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-3)))


class TestMlp:
    @pytest.mark.parametrize("sizes", [[3, 5, 2], [4, 8, 6, 3], [2, 1]])
    def test_backprop_matches_finite_differences(self, sizes):
        rng = np.random.default_rng(len(sizes))
        net = MLP(sizes, rng)
        for b in net.b:
            b[...] = rng.normal(0, 0.1, b.shape)   # move units off the ReLU kink
        x = rng.normal(size=(7, sizes[0]))
        y = rng.normal(size=(7, sizes[-1]))
        _, grads = mse_loss_grad(net, x, y)
        flat = np.concatenate([g.ravel() for g in grads])
        fd = fd_grads(net, lambda: mse_loss_grad(net, x, y)[0])
        assert max_rel(flat, fd) < 1e-4

    def test_init_bounds_and_shapes(self):
        net = MLP([10, 4, 3], np.random.default_rng(0))
        assert net.W[0].shape == (10, 4) and np.all(np.abs(net.W[0]) <= np.sqrt(6 / 10))
        assert all(np.all(b == 0) for b in net.b)
        assert net.forward(np.zeros((5, 10))).shape == (5, 3)

    def test_forward_matches_manual(self):
        net = MLP([2, 3, 1], np.random.default_rng(1))
        x = np.array([0.5, -1.0])
        ref = np.maximum(x @ net.W[0] + net.b[0], 0) @ net.W[1] + net.b[1]
        np.testing.assert_allclose(net(x), ref, rtol=1e-15)

    def test_copy_independent_and_flat_round_trip(self):
        net = MLP([3, 4, 2], np.random.default_rng(2))
        c = net.copy()
        c.W[0][0, 0] += 1
        assert net.W[0][0, 0] != c.W[0][0, 0]
        c.load_from(net)
        np.testing.assert_array_equal(c.get_flat(), net.get_flat())
        flat = np.arange(net.get_flat().size, dtype=float)
        net.set_flat(flat)
        np.testing.assert_array_equal(net.get_flat(), flat)

    def test_invalid_sizes(self):
        with pytest.raises(ValueError):
            MLP([3])


class TestOptimizers:
    def test_sgd_step(self):
        net = MLP([2, 1], np.random.default_rng(0))
        before = net.get_flat()
        grads = [np.ones_like(p) for p in net.params]
        SGD(0.1).step(net, grads)
        np.testing.assert_allclose(net.get_flat(), before - 0.1)

    def test_adam_first_step_is_lr_sign(self):
        net = MLP([2, 1], np.random.default_rng(0))
        before = net.get_flat()
        grads = [np.full_like(p, 3.0) for p in net.params]
        Adam(0.01).step(net, grads)
        np.testing.assert_allclose(net.get_flat(), before - 0.01, rtol=1e-6)

    def test_regression_fits(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(-1, 1, (256, 2))
        y = (x[:, :1] - 2 * x[:, 1:]) * 0.5
        net = MLP([2, 16, 1], rng)
        opt = Adam(0.01)
        for _ in range(2000):
            loss, g = mse_loss_grad(net, x, y)
            opt.step(net, g)
        assert loss < 1e-3
