import numpy as np
import pytest

from ccnn.distributions import softmax
from ccnn.scorer import (
    ConvScorer,
    LinearScorer,
    conv_scorer,
    gradient_check,
    linear_scorer,
    load_parameters,
    save_parameters,
)


class SignFlipped(LinearScorer):
    def backward(self, grad_scores):
        return -super().backward(grad_scores)


@pytest.fixture
def grid():
    return np.random.default_rng(0).normal(size=(6, 6, 3))


class TestLinear:
    def test_zero_weights_give_uniform(self):
        s = linear_scorer(3, 4)
        s.set_params(np.zeros(s.num_params))
        scores = s.forward(np.random.default_rng(1).normal(size=(5, 3)))
        np.testing.assert_array_equal(scores, 0.0)
        np.testing.assert_allclose(softmax(scores), 0.25)

    def test_identity_mapping(self):
        s = linear_scorer(4, 4)
        s.set_params(np.concatenate([(2.5 * np.eye(4)).ravel(), np.zeros(4)]))
        x = np.eye(4)[[2, 0, 3]]
        np.testing.assert_array_equal(s.forward(x), 2.5 * x)

    def test_init_statistics(self):
        s = linear_scorer(40, 50, init_seed=3)
        assert abs(s.weight.mean()) < 1e-3
        assert s.weight.std() == pytest.approx(0.01, rel=0.05)
        np.testing.assert_array_equal(s.bias, 0.0)

    def test_gradient_check(self, grid):
        assert gradient_check(linear_scorer(3, 4, 1), grid, probe_count=16, h=1e-5) <= 1e-6

    def test_zero_upstream_gives_zero_gradient(self, grid):
        s = linear_scorer(3, 4)
        scores = s.forward(grid)
        np.testing.assert_array_equal(s.backward(np.zeros_like(scores)), 0.0)

    def test_deterministic(self, grid):
        a, b = linear_scorer(3, 4, 7), linear_scorer(3, 4, 7)
        assert a.forward(grid).tobytes() == b.forward(grid).tobytes()


class TestConv:
    def test_zero_weights_give_uniform(self, grid):
        s = conv_scorer(5, 3, 4, d=3)
        s.set_params(np.zeros(s.num_params))
        np.testing.assert_allclose(softmax(s.forward(grid)), 0.25)

    def test_1x1_without_hidden_layer_is_linear(self, grid):
        conv = conv_scorer(0, 1, 4, init_seed=2, d=3)
        lin = linear_scorer(3, 4)
        lin.set_params(conv.get_params())
        np.testing.assert_allclose(conv.forward(grid), lin.forward(grid), atol=1e-15)

    def test_preserves_pixel_count(self, grid):
        assert conv_scorer(4, 5, 2, d=3).forward(grid).shape == (36, 2)

    @pytest.mark.parametrize("channels, k", [(4, 3), (0, 3), (6, 5)])
    def test_gradient_check(self, grid, channels, k):
        s = ConvScorer(3, channels, k, 4, init_seed=5, last_std=0.5)
        assert gradient_check(s, grid, probe_count=30, h=1e-5) <= 1e-4

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            conv_scorer(2, 4, 3)

    def test_zero_upstream_gives_zero_gradient(self, grid):
        s = conv_scorer(3, 3, 4, d=3)
        scores = s.forward(grid)
        np.testing.assert_array_equal(s.backward(np.zeros_like(scores)), 0.0)

    def test_deterministic(self, grid):
        a, b = conv_scorer(3, 3, 4, 9, d=3), conv_scorer(3, 3, 4, 9, d=3)
        assert a.forward(grid).tobytes() == b.forward(grid).tobytes()


def test_checker_catches_sign_flip(grid):
    err = gradient_check(SignFlipped(3, 4, 0), grid, probe_count=8)
    assert err == pytest.approx(2.0, rel=1e-6)


def test_checker_restores_parameters(grid):
    s = conv_scorer(3, 3, 4, d=3)
    before = s.get_params().copy()
    gradient_check(s, grid, probe_count=5)
    np.testing.assert_array_equal(s.get_params(), before)


def test_parameter_file_round_trip(tmp_path):
    theta = np.random.default_rng(4).normal(size=37)
    path = tmp_path / "ckpt.bin"
    save_parameters(path, theta)
    raw = path.read_bytes()
    assert len(raw) == 8 + 37 * 8
    assert int.from_bytes(raw[:8], "little") == 37
    np.testing.assert_array_equal(load_parameters(path), theta)


def test_truncated_parameter_file(tmp_path):
    path = tmp_path / "bad.bin"
    save_parameters(path, np.ones(4))
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(ValueError):
        load_parameters(path)
