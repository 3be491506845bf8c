import math

import numpy as np
import pytest

from deepgrasp.errors import ModelFormatError
from deepgrasp.network import (CascadeParams, NetworkParams, dumps_model, forward, init_params, load_model,
                               loads_model, reconstruct, save_model, sigmoid)
from deepgrasp.patch import ModalityMask, NormStats


def loop_sigmoid(a):
    return 1.0 / (1.0 + math.exp(-a))


def loop_forward(net, x):
    N, K1, K2 = net.sizes
    h1 = [loop_sigmoid(sum(x[i] * net.W1[i, j] for i in range(N)) + net.b1[j]) for j in range(K1)]
    h2 = [loop_sigmoid(sum(h1[i] * net.W2[i, j] for i in range(K1)) + net.b2[j]) for j in range(K2)]
    return loop_sigmoid(sum(h2[j] * net.w3[j] for j in range(K2)) + net.b3), h1, h2


def small_net(seed=0, sizes=(6, 4, 3), scale=1.0):
    rng = np.random.default_rng(seed)
    N, K1, K2 = sizes
    return NetworkParams(scale * rng.normal(size=(N, K1)), rng.normal(size=K1), scale * rng.normal(size=(K1, K2)),
                         rng.normal(size=K2), scale * rng.normal(size=K2), rng.normal(),
                         ModalityMask(np.arange(N) % 3, 3))


class TestSigmoid:
    def test_values(self):
        assert sigmoid(0.0) == 0.5
        assert sigmoid(2.0) == pytest.approx(0.8807970779778823, abs=1e-15)

    def test_symmetry(self):
        a = np.random.default_rng(0).normal(scale=5, size=100)
        np.testing.assert_allclose(sigmoid(a) + sigmoid(-a), 1.0, atol=1e-15)

    def test_extremes_stay_inside(self):
        p = sigmoid(np.array([-1e3, 1e3]))
        assert np.all((p > 0) & (p < 1)) and np.all(np.isfinite(p))


class TestForward:
    def test_zero_net(self):
        net = NetworkParams(np.zeros((5, 3)), np.zeros(3), np.zeros((3, 2)), np.zeros(2), np.zeros(2), 0.0,
                            ModalityMask.single(5))
        act = forward(net, np.ones(5))
        np.testing.assert_array_equal(act.h1, 0.5)
        np.testing.assert_array_equal(act.h2, 0.5)
        assert act.p == 0.5

    def test_scalar_chain(self):
        net = NetworkParams([[2.0]], [0.0], [[1.0]], [0.0], [1.0], 0.0, ModalityMask.single(1))
        p = forward(net, np.array([1.0])).p
        want = loop_sigmoid(loop_sigmoid(loop_sigmoid(2.0)))
        assert p == pytest.approx(want, abs=1e-15)
        assert p == pytest.approx(0.66974, abs=1e-5)  # sigma(2)=0.8808, sigma(.)=0.7070, sigma(.)=0.6697

    def test_negating_w3_flips(self):
        net = small_net(1)
        net = net.copy(b3=0.0)
        x = np.random.default_rng(2).normal(size=6)
        flipped = net.copy(w3=-net.w3)
        assert forward(flipped, x).p == pytest.approx(1 - forward(net, x).p, abs=1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_loop_oracle(self, seed):
        net = small_net(seed)
        x = np.random.default_rng(seed + 10).normal(size=6)
        act = forward(net, x)
        p, h1, h2 = loop_forward(net, x)
        assert act.p == pytest.approx(p, abs=1e-12)
        np.testing.assert_allclose(act.h1, h1, atol=1e-12)
        np.testing.assert_allclose(act.h2, h2, atol=1e-12)

    def test_batch_equals_rows(self):
        net = small_net(3)
        X = np.random.default_rng(4).normal(size=(7, 6))
        batch = forward(net, X).p
        np.testing.assert_allclose(batch, [forward(net, x).p for x in X], atol=0)

    def test_large_weights_stay_finite(self):
        net = small_net(5, scale=1e3)
        act = forward(net, np.random.default_rng(6).normal(size=(20, 6)))
        for a in (act.h1, act.h2, act.p):
            assert np.all(np.isfinite(a)) and np.all((a > 0) & (a < 1))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            forward(small_net(), np.ones(5))


class TestReconstruct:
    def test_zero(self):
        np.testing.assert_array_equal(reconstruct(np.ones((4, 3)), np.zeros(3)), 0.0)

    def test_basis(self):
        W = np.random.default_rng(0).normal(size=(5, 3))
        np.testing.assert_array_equal(reconstruct(W, [0.0, 1.0, 0.0]), W[:, 1])

    def test_loop_oracle(self):
        rng = np.random.default_rng(1)
        W, h = rng.normal(size=(7, 4)), rng.normal(size=4)
        want = [sum(h[j] * W[i, j] for j in range(4)) for i in range(7)]
        np.testing.assert_allclose(reconstruct(W, h), want, atol=1e-12)

    def test_mismatch(self):
        with pytest.raises(ValueError):
            reconstruct(np.ones((4, 3)), np.ones(4))


class TestInit:
    def test_deterministic(self):
        a, b = init_params(3, (20, 5, 4)), init_params(3, (20, 5, 4))
        assert dumps_model(a) == dumps_model(b)
        assert dumps_model(a) != dumps_model(init_params(4, (20, 5, 4)))

    def test_paper_sizes(self):
        net = init_params(0, (4032, 200, 200))
        assert net.W1.shape == (4032, 200) and net.modality.n_modes == 7

    def test_bounds(self):
        net = init_params(0, (50, 30, 10))
        assert np.abs(net.W1).max() <= math.sqrt(6 / 80)
        assert np.abs(net.W2).max() <= math.sqrt(6 / 40)
        assert np.abs(net.w3).max() <= math.sqrt(6 / 11)
        assert not net.b1.any() and not net.b2.any() and net.b3 == 0.0

    def test_bad_sizes(self):
        with pytest.raises(ValueError):
            init_params(0, (10, 0, 3))

    def test_inconsistent_shapes(self):
        with pytest.raises(ValueError):
            NetworkParams(np.zeros((5, 3)), np.zeros(3), np.zeros((4, 2)), np.zeros(2), np.zeros(2), 0.0,
                          ModalityMask.single(5))

    def test_non_finite(self):
        W1 = np.zeros((5, 3))
        W1[0, 0] = np.nan
        with pytest.raises(ValueError):
            NetworkParams(W1, np.zeros(3), np.zeros((3, 2)), np.zeros(2), np.zeros(2), 0.0, ModalityMask.single(5))


class TestModelFile:
    def net(self):
        net = init_params(7, (4032, 6, 4), norm=NormStats(tuple(np.arange(7.0)), tuple(np.arange(1.0, 8.0))))
        return net.copy(b1=np.linspace(-1, 1, 6), b3=0.25)

    def test_round_trip_bytes(self, tmp_path):
        net = self.net()
        save_model(net, tmp_path / "a.model")
        back = load_model(tmp_path / "a.model")
        save_model(back, tmp_path / "b.model")
        assert (tmp_path / "a.model").read_bytes() == (tmp_path / "b.model").read_bytes()
        for k in ("W1", "b1", "W2", "b2", "w3"):
            np.testing.assert_array_equal(getattr(back, k), getattr(net, k))
        assert back.b3 == net.b3 and back.norm == net.norm and back.modality == net.modality
        assert back.flatten_order == net.flatten_order and back.side == 24 and back.cap == 2.0

    def test_without_norm(self):
        net = init_params(0, (9, 2, 2), ModalityMask(np.arange(9) % 3, 3))
        assert loads_model(dumps_model(net)).norm is None

    def test_truncated(self, tmp_path):
        data = dumps_model(self.net())
        for cut in (10, len(data) // 2, len(data) - 1):
            with pytest.raises(ModelFormatError):
                loads_model(data[:cut])

    def test_corrupt_byte(self):
        data = bytearray(dumps_model(self.net()))
        data[200] ^= 0xFF
        with pytest.raises(ModelFormatError, match="checksum"):
            loads_model(bytes(data))

    def test_bad_magic_and_version(self):
        data = dumps_model(self.net())
        with pytest.raises(ModelFormatError, match="magic"):
            loads_model(b"XXXXXX" + data[6:])
        bumped = bytearray(data)
        bumped[6] = 9
        with pytest.raises(ModelFormatError, match="version"):
            loads_model(bytes(bumped))

    def test_expected_inputs_named(self):
        with pytest.raises(ModelFormatError, match=r"4032.*1728"):
            loads_model(dumps_model(self.net()), expected_inputs=1728)


def test_cascade_requires_shared_inputs():
    a = init_params(0, (4032, 3, 2))
    b = init_params(1, (4032, 5, 4))
    CascadeParams(a, b)
    with pytest.raises(ValueError):
        CascadeParams(a, b.copy(cap=3.0))
    with pytest.raises(ValueError):
        CascadeParams(a, init_params(1, (9, 5, 4)))
