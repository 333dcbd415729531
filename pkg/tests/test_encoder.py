import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from dtmcast.encoder import (
    ConvAutoencoder,
    DecoderWeights,
    EncoderWeights,
    conv1d_same,
    conv1d_transpose,
    decode,
    encode,
    gradient_check,
    init_weights,
    load_encoder,
    reconstruction_loss,
    save_encoder,
    train_autoencoder,
)
from dtmcast.exceptions import DivergedLoss, EmptyDataset, FormatVersionMismatch, ShapeMismatch


def identity_1x1():
    enc = EncoderWeights(np.ones((1, 1, 1)), np.zeros(1), np.ones((1, 1)), np.zeros(1))
    dec = DecoderWeights(np.ones((1, 1)), np.zeros(1), np.ones((1, 1, 1)), np.zeros(1))
    return enc, dec


def test_conv_identity_kernel():
    out = conv1d_same([[3.0, 1.0, 4.0]], np.ones((1, 1, 1)), [0.0])
    assert out.tolist() == [[3.0, 1.0, 4.0]]


def test_conv_right_tap():
    out = conv1d_same([[1.0, 2.0, 3.0]], np.array([[[0.0, 0.0, 1.0]]]), [0.0])
    assert out.tolist() == [[2.0, 3.0, 0.0]]


def test_conv_bias_only():
    assert conv1d_same([[9.0, -2.0]], np.zeros((1, 1, 3)), [5.0]).tolist() == [[5.0, 5.0]]


def test_conv_shape_errors():
    with pytest.raises(ShapeMismatch):
        conv1d_same(np.ones((2, 3)), np.ones((1, 1, 3)), [0.0])
    with pytest.raises(ShapeMismatch):
        conv1d_same(np.ones((1, 3)), np.ones((1, 1, 2)), [0.0])


def test_conv_transpose_is_adjoint():
    rng = np.random.default_rng(0)
    K = rng.normal(size=(4, 3, 5))
    x, g = rng.normal(size=(3, 9)), rng.normal(size=(4, 9))
    zero4, zero3 = np.zeros(4), np.zeros(3)
    lhs = np.sum(conv1d_same(x, K, zero4) * g)
    rhs = np.sum(x * conv1d_transpose(g, K, zero3))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_encode_examples():
    enc, _ = identity_1x1()
    assert encode(np.array([[2.0, 4.0]]), enc).tolist() == [3.0]
    e, _ = init_weights(3, 4, 3, 5, 0)
    assert np.array_equal(encode(np.zeros((3, 6)), e), np.zeros(5))
    assert encode(np.random.default_rng(1).random((3, 6)), e).shape == (5,)
    with pytest.raises(ShapeMismatch):
        encode(np.zeros((2, 6)), e)


def test_decode_examples():
    _, dec = identity_1x1()
    assert decode(np.array([2.5]), dec, 4).tolist() == [[2.5] * 4]
    _, d = init_weights(3, 4, 3, 5, 0)
    out = decode(np.zeros(5), d, 12)
    assert out.shape == (3, 12) and not out.any()


@given(st.floats(-5, 5), st.integers(1, 12), st.integers(0, 10))
def test_encode_constant_permutation_invariant(c, T, seed):
    e, _ = init_weights(2, 3, 1, 2, seed)
    x = np.full((2, T), c)
    perm = np.random.default_rng(seed).permutation(T)
    assert np.array_equal(encode(x, e), encode(x[:, perm], e))


def test_encode_is_deterministic():
    e, _ = init_weights(4, 8, 3, 8, 7)
    x = np.random.default_rng(7).random((4, 10))
    assert encode(x, e).tobytes() == encode(x.copy(), e.copy()).tobytes()


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradient_check_small(seed):
    enc, dec = init_weights(3, 2, 3, 2, seed)
    enc.conv_bias[:] = 0.1  # keep relu away from its kink
    x = np.random.default_rng(seed).random((3, 6))
    assert gradient_check(enc, dec, x, 1e-5) < 1e-4


def test_gradient_check_zero():
    enc = EncoderWeights(np.zeros((2, 2, 3)), np.zeros(2), np.zeros((2, 2)), np.zeros(2))
    dec = DecoderWeights(np.zeros((2, 2)), np.zeros(2), np.zeros((2, 2, 3)), np.zeros(2))
    assert gradient_check(enc, dec, np.zeros((2, 4)), 1e-5) <= 1e-12


def test_gradient_check_degenerate_epsilon_returns():
    enc, dec = init_weights(2, 2, 3, 2, 0)
    val = gradient_check(enc, dec, np.ones((2, 3)), 1e-300)
    assert isinstance(val, float)


def test_epochs_zero_keeps_init():
    data = [np.ones((3, 5))]
    enc, dec, curve = train_autoencoder(data, 2, 3, 2, epochs=0, seed=4)
    e0, d0 = init_weights(3, 2, 3, 2, np.random.default_rng(4))
    assert curve == []
    assert all(np.array_equal(a, b) for a, b in zip(enc.params(), e0.params()))


def test_training_errors():
    with pytest.raises(EmptyDataset):
        train_autoencoder([])
    rng = np.random.default_rng(0)
    data = [rng.random((3, 8)) for _ in range(4)]
    with pytest.raises(DivergedLoss):
        train_autoencoder(data, lr=1e6, epochs=20)
    with pytest.raises(ShapeMismatch):
        train_autoencoder([np.ones((3, 4)), np.ones((3, 5))])


def test_training_lowers_loss_and_is_deterministic():
    rng = np.random.default_rng(5)
    data = [rng.random((5, 8)) for _ in range(16)]
    a = train_autoencoder(data, epochs=20, seed=1)
    b = train_autoencoder(data, epochs=20, seed=1)
    assert a[2] == b[2]
    assert a[2][-1] <= a[2][0]


def test_weights_file_round_trip(tmp_path):
    enc, _ = init_weights(11, 8, 3, 8, 9)
    p = tmp_path / "enc.txt"
    save_encoder(enc, p)
    assert p.read_text().startswith("ENC v1 8 3 8 11\n")
    back = load_encoder(p)
    assert all(np.array_equal(a, b) for a, b in zip(enc.params(), back.params()))
    p.write_text("DDQN v1 1 2 3\n0\n")
    with pytest.raises(FormatVersionMismatch):
        load_encoder(p)


def test_estimator_api():
    rng = np.random.default_rng(0)
    X = rng.random((6, 4, 8))
    est = ConvAutoencoder(n_filters=3, n_features=2, epochs=3, random_state=0)
    assert clone(est).get_params() == est.get_params()
    F = est.fit(X).transform(X)
    assert F.shape == (6, 2)
    assert est.inverse_transform(F).shape == X.shape
    mse = np.mean([reconstruction_loss(x, est.encoder_, est.decoder_) for x in X])
    assert mse == pytest.approx(np.mean((est.inverse_transform(F) - X) ** 2))
    wrapped = ConvAutoencoder.from_weights(est.encoder_)
    assert np.array_equal(wrapped.transform(X), F)
