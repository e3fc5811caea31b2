"""Network forward pass and hand-rolled autodiff tests.

The reverse-mode gradient and the forward-mode directional derivative are
checked against central finite differences, and the forward pass of a tiny
net is checked against an independent matrix-arithmetic transcription.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from subflow.net import (FREQ_MAX, FREQ_MIN, N_FREQS, TIME_ENC_DIM, NetConfig,
                         VelocityNet)


def tiny_config(uses_interval=False) -> NetConfig:
    return NetConfig(num_classes=2, num_submodes=2, hidden_width=2,
                     hidden_layers=1, embed_dim=1, uses_interval=uses_interval)


def random_net(cfg: NetConfig, seed: int = 0, scale: float = 0.3) -> VelocityNet:
    net = VelocityNet(cfg)
    net.params[:] = scale * np.random.default_rng(seed).standard_normal(
        net.num_params)
    return net


def silu(z):
    return z / (1.0 + np.exp(-z))


class TestForward:
    def test_matches_hand_computation(self):
        """Tiny net transcribed independently with explicit matrices."""
        cfg = tiny_config()
        net = random_net(cfg, seed=4)
        x = np.array([0.3, -1.1])
        t = 0.37
        c, k = 1, 0

        freqs = np.geomspace(FREQ_MIN, FREQ_MAX, N_FREQS)
        enc = np.concatenate([[t], np.sin(t * freqs), np.cos(t * freqs)])
        feats = np.concatenate([x, enc, net.view("class_emb")[c],
                                net.view("submode_emb")[k]])
        h = silu(net.view("w0") @ feats + net.view("b0"))
        expected = net.view("w_out") @ h + net.view("b_out")
        np.testing.assert_allclose(net.forward(x, t, c=c, k=k), expected,
                                   atol=1e-14)

    def test_zero_params_give_zero_output(self):
        net = VelocityNet(tiny_config())
        out = net.forward(np.array([1.0, 2.0]), 0.5, c=0, k=-1)
        np.testing.assert_array_equal(out, np.zeros(2))

    def test_bit_identical_determinism(self):
        cfg = NetConfig(num_classes=3, num_submodes=2, uses_interval=True)
        net = VelocityNet.initialized(cfg, seed=1)
        x = np.random.default_rng(0).standard_normal((16, 2))
        t = np.full(16, 0.4)
        r = np.full(16, 0.1)
        c = np.zeros(16, dtype=np.int64)
        k = np.ones(16, dtype=np.int64)
        a = net.forward_batch(x, t, r, c, k)
        b = net.forward_batch(x, t, r, c, k)
        assert np.array_equal(a, b)

    def test_null_token_ignores_original_class(self):
        cfg = tiny_config()
        net = random_net(cfg, seed=7)
        x = np.array([0.2, 0.9])
        out_null = net.forward(x, 0.3, c=cfg.null_class, k=0)
        # the null row is its own embedding; any concrete class differs
        out_c0 = net.forward(x, 0.3, c=0, k=0)
        assert not np.allclose(out_null, out_c0)

    def test_absent_submode_is_zero_slot(self):
        cfg = tiny_config()
        net = random_net(cfg, seed=8)
        net.view("submode_emb")[:] = 0.0
        x = np.array([0.5, 0.5])
        np.testing.assert_allclose(net.forward(x, 0.6, c=0, k=-1),
                                   net.forward(x, 0.6, c=0, k=1), atol=1e-15)

    def test_index_bounds_checked(self):
        net = VelocityNet(tiny_config())
        with pytest.raises(IndexError):
            net.forward(np.zeros(2), 0.5, c=5, k=0)
        with pytest.raises(IndexError):
            net.forward(np.zeros(2), 0.5, c=0, k=2)

    def test_interval_flag_enforced(self):
        net_plain = VelocityNet(tiny_config(uses_interval=False))
        net_int = VelocityNet(tiny_config(uses_interval=True))
        with pytest.raises(ValueError):
            net_plain.forward(np.zeros(2), 0.5, r=0.2)
        with pytest.raises(ValueError):
            net_int.forward(np.zeros(2), 0.5)  # r missing

    def test_initialized_output_layer_zero(self):
        net = VelocityNet.initialized(tiny_config(), seed=0)
        assert np.all(net.view("w_out") == 0.0)
        assert np.all(net.view("b_out") == 0.0)
        out = net.forward(np.array([3.0, -2.0]), 0.8, c=1, k=1)
        np.testing.assert_array_equal(out, np.zeros(2))


class TestBackward:
    def grad_fd(self, net, x, t, r, c, k, cot, i, eps=1e-6):
        saved = net.params[i]
        net.params[i] = saved + eps
        up = float(np.sum(cot * net.forward_batch(x, t, r, c, k)))
        net.params[i] = saved - eps
        dn = float(np.sum(cot * net.forward_batch(x, t, r, c, k)))
        net.params[i] = saved
        return (up - dn) / (2 * eps)

    @pytest.mark.parametrize("uses_interval", [False, True])
    def test_gradient_matches_finite_differences(self, uses_interval):
        """50 random parameter coordinates, relative error < 1e-4."""
        cfg = NetConfig(num_classes=2, num_submodes=2, hidden_width=8,
                        hidden_layers=2, embed_dim=3,
                        uses_interval=uses_interval)
        net = random_net(cfg, seed=3)
        rng = np.random.default_rng(5)
        n = 6
        x = rng.standard_normal((n, 2))
        t = rng.uniform(0, 1, n)
        r = np.minimum(t, rng.uniform(0, 1, n)) if uses_interval else None
        c = rng.integers(0, 3, n)
        k = rng.integers(-1, 2, n)
        cot = rng.standard_normal((n, 2))
        grad = net.backward(x, t, r, c, k, cot)
        for i in rng.choice(net.num_params, size=50, replace=False):
            fd = self.grad_fd(net, x, t, r, c, k, cot, i)
            denom = max(abs(fd), abs(grad[i]), 1e-8)
            assert abs(grad[i] - fd) / denom < 1e-4, (i, grad[i], fd)

    def test_embedding_rows_accumulate(self):
        # two samples sharing a class row must sum their contributions
        cfg = tiny_config()
        net = random_net(cfg, seed=9)
        x = np.array([[0.1, 0.2], [0.3, -0.4]])
        t = np.array([0.2, 0.8])
        c = np.array([1, 1])
        k = np.array([0, 1])
        cot = np.ones((2, 2))
        grad_both = net.backward(x, t, None, c, k, cot)
        g1 = net.backward(x[:1], t[:1], None, c[:1], k[:1], cot[:1])
        g2 = net.backward(x[1:], t[1:], None, c[1:], k[1:], cot[1:])
        np.testing.assert_allclose(grad_both, g1 + g2, atol=1e-12)

    def test_cotangent_shape_checked(self):
        net = VelocityNet(tiny_config())
        with pytest.raises(ValueError):
            net.backward(np.zeros((2, 2)), np.zeros(2), None,
                         np.zeros(2, dtype=int), np.zeros(2, dtype=int),
                         np.zeros((3, 2)))


class TestJvp:
    @pytest.mark.parametrize("uses_interval", [False, True])
    def test_matches_central_differences(self, uses_interval):
        cfg = NetConfig(num_classes=2, num_submodes=3, hidden_width=16,
                        hidden_layers=2, embed_dim=4,
                        uses_interval=uses_interval)
        net = random_net(cfg, seed=1)
        rng = np.random.default_rng(2)
        x = rng.standard_normal(2)
        t = 0.45
        r = 0.2 if uses_interval else None
        dx = rng.standard_normal(2)
        dt = 0.7
        dr = 0.4 if uses_interval else 0.0
        jvp = net.jvp(x, t, r, 1, 0, dx, dt, dr)
        eps = 1e-6
        up = net.forward(x + eps * dx, t + eps * dt,
                         None if r is None else r + eps * dr, 1, 0)
        dn = net.forward(x - eps * dx, t - eps * dt,
                         None if r is None else r - eps * dr, 1, 0)
        fd = (up - dn) / (2 * eps)
        assert np.max(np.abs(jvp - fd)) < 1e-5

    def test_linearity(self):
        cfg = tiny_config(uses_interval=True)
        net = random_net(cfg, seed=6)
        rng = np.random.default_rng(3)
        x = rng.standard_normal(2)
        u = (rng.standard_normal(2), 0.3, 0.1)
        w = (rng.standard_normal(2), -0.9, 0.5)
        a, b = 1.7, -0.4
        combo = net.jvp(x, 0.6, 0.2, 0, 1,
                        a * u[0] + b * w[0], a * u[1] + b * w[1],
                        a * u[2] + b * w[2])
        parts = (a * net.jvp(x, 0.6, 0.2, 0, 1, *u)
                 + b * net.jvp(x, 0.6, 0.2, 0, 1, *w))
        np.testing.assert_allclose(combo, parts, atol=1e-10)

    def test_zero_tangent_gives_zero(self):
        net = random_net(tiny_config(), seed=0)
        out = net.jvp(np.ones(2), 0.5, None, 0, 0, np.zeros(2), 0.0)
        np.testing.assert_array_equal(out, np.zeros(2))

    @settings(deadline=None, max_examples=25)
    @given(t=st.floats(0.01, 0.99), dt=st.floats(-2, 2))
    def test_time_direction_consistency(self, t, dt):
        """jvp in t alone equals the derivative of the time encoding path."""
        net = random_net(tiny_config(), seed=11)
        x = np.array([0.4, -0.2])
        jvp = net.jvp(x, t, None, 0, 0, np.zeros(2), dt)
        eps = 1e-7
        fd = (net.forward(x, t + eps * dt, c=0, k=0)
              - net.forward(x, t - eps * dt, c=0, k=0)) / (2 * eps)
        np.testing.assert_allclose(jvp, fd, atol=5e-5)


class TestLayoutAndViews:
    def test_param_count_consistent(self):
        cfg = NetConfig(num_classes=2, num_submodes=2)
        net = VelocityNet(cfg)
        total = sum(int(np.prod(shape)) for _, shape in net.layout)
        assert net.num_params == total == len(net.params)

    def test_input_dim(self):
        cfg = tiny_config()
        assert cfg.input_dim == 2 + TIME_ENC_DIM + 2 * cfg.embed_dim
        cfg2 = tiny_config(uses_interval=True)
        assert cfg2.input_dim == 2 + 2 * TIME_ENC_DIM + 2 * cfg2.embed_dim

    def test_views_alias_flat_params(self):
        net = VelocityNet(tiny_config())
        net.view("b_out")[:] = 7.0
        assert np.sum(net.params == 7.0) == 2

    def test_wrong_param_length_rejected(self):
        with pytest.raises(ValueError):
            VelocityNet(tiny_config(), params=np.zeros(3))

    def test_unknown_view_name(self):
        with pytest.raises(KeyError):
            VelocityNet(tiny_config()).view("w9")

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError):
            NetConfig(num_classes=0, num_submodes=1)
