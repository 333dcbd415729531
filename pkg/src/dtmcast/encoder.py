"""1D-CNN feature compression of status matrices, trained as an autoencoder.

Encoder: same-padded conv1d -> relu -> global mean pool over time -> linear.
Decoder: linear d -> F, broadcast over time, transposed conv F -> A.
All gradients are derived by hand; ``gradient_check`` compares them with
central finite differences.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import as_float_array, check_generator, check_shape
from .exceptions import DivergedLoss, EmptyDataset, FormatVersionMismatch, IoFailure, ShapeMismatch


@dataclass
class EncoderWeights:
    kernels: np.ndarray  # (F, A, k)
    conv_bias: np.ndarray  # (F,)
    projection: np.ndarray  # (d, F)
    projection_bias: np.ndarray  # (d,)

    def __post_init__(self):
        F, A, k = self.kernels.shape
        if k % 2 != 1:
            raise ShapeMismatch(f"kernel size must be odd, got {k}")
        check_shape(self.conv_bias, (F,), "conv_bias")
        d = self.projection.shape[0]
        check_shape(self.projection, (d, F), "projection")
        check_shape(self.projection_bias, (d,), "projection_bias")

    @property
    def n_filters(self):
        return self.kernels.shape[0]

    @property
    def n_inputs(self):
        return self.kernels.shape[1]

    @property
    def kernel_size(self):
        return self.kernels.shape[2]

    @property
    def n_features(self):
        return self.projection.shape[0]

    def params(self):
        return [self.kernels, self.conv_bias, self.projection, self.projection_bias]

    def copy(self):
        return EncoderWeights(*(p.copy() for p in self.params()))


@dataclass
class DecoderWeights:
    expansion: np.ndarray  # (F, d)
    expansion_bias: np.ndarray  # (F,)
    kernels: np.ndarray  # (F, A, k), applied transposed
    output_bias: np.ndarray  # (A,)

    def __post_init__(self):
        F, A, k = self.kernels.shape
        if k % 2 != 1:
            raise ShapeMismatch(f"kernel size must be odd, got {k}")
        check_shape(self.expansion, (F, self.expansion.shape[1]), "expansion")
        check_shape(self.expansion_bias, (F,), "expansion_bias")
        check_shape(self.output_bias, (A,), "output_bias")

    def params(self):
        return [self.expansion, self.expansion_bias, self.kernels, self.output_bias]

    def copy(self):
        return DecoderWeights(*(p.copy() for p in self.params()))


def init_weights(n_inputs, n_filters=8, kernel_size=3, n_features=8, random_state=None):
    """Seeded uniform fan-in initialisation with zero biases."""
    if kernel_size % 2 != 1:
        raise ShapeMismatch("kernel_size must be odd")
    rng = check_generator(random_state)
    A, F, k, d = n_inputs, n_filters, kernel_size, n_features

    def u(fan_in, shape):
        b = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-b, b, size=shape)

    enc = EncoderWeights(u(A * k, (F, A, k)), np.zeros(F), u(F, (d, F)), np.zeros(d))
    dec = DecoderWeights(u(d, (F, d)), np.zeros(F), u(F * k, (F, A, k)), np.zeros(A))
    return enc, dec


def _windows(x, k):
    r = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (r, r)))
    return sliding_window_view(xp, k, axis=1)  # (A, T, k)


def conv1d_same(x, kernels, biases):
    """out[f, t] = b[f] + sum_a sum_j K[f, a, j] * x[a, t + j], zero padded."""
    x = np.asarray(x, dtype=np.float64)
    kernels = np.asarray(kernels, dtype=np.float64)
    biases = np.asarray(biases, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 1:
        raise ShapeMismatch(f"input must be A x T with T >= 1, got {x.shape}")
    if kernels.ndim != 3 or kernels.shape[1] != x.shape[0] or kernels.shape[2] % 2 != 1:
        raise ShapeMismatch(f"kernels {kernels.shape} incompatible with input {x.shape}")
    if biases.shape != (kernels.shape[0],):
        raise ShapeMismatch("bias length must equal the number of filters")
    return np.einsum("fak,atk->ft", kernels, _windows(x, kernels.shape[2])) + biases[:, None]


def conv1d_transpose(g, kernels, biases):
    """Adjoint of ``conv1d_same`` w.r.t. its input: F x T -> A x T."""
    flipped = np.ascontiguousarray(np.transpose(kernels, (1, 0, 2))[:, :, ::-1])
    return conv1d_same(g, flipped, biases)


def _encode_parts(x, w):
    z = conv1d_same(x, w.kernels, w.conv_bias)
    h = np.maximum(z, 0.0)
    pooled = h.mean(axis=1)
    feat = w.projection @ pooled + w.projection_bias
    return z, pooled, feat


def encode(x, w):
    """Compress an A x T status matrix into a d-dimensional feature vector."""
    x = as_float_array(x, 2, "status matrix")
    if x.shape[0] != w.n_inputs:
        raise ShapeMismatch(f"matrix has {x.shape[0]} rows, weights expect {w.n_inputs}")
    return _encode_parts(x, w)[2]


def decode(feature, dec, T):
    """Expand a feature vector back to an A x T matrix."""
    feature = np.asarray(feature, dtype=np.float64)
    if feature.shape != (dec.expansion.shape[1],):
        raise ShapeMismatch(f"feature must have length {dec.expansion.shape[1]}")
    if T < 1:
        raise ShapeMismatch("T must be >= 1")
    e = dec.expansion @ feature + dec.expansion_bias
    g = np.repeat(e[:, None], T, axis=1)
    return conv1d_transpose(g, dec.kernels, dec.output_bias)


def loss_and_grads(x, enc, dec):
    """Reconstruction MSE of one matrix and the gradient of every parameter."""
    A, T = x.shape
    k = enc.kernel_size
    z, pooled, feat = _encode_parts(x, enc)
    e = dec.expansion @ feat + dec.expansion_bias
    g = np.repeat(e[:, None], T, axis=1)
    y = conv1d_transpose(g, dec.kernels, dec.output_bias)
    diff = y - x
    loss = float(np.mean(diff**2))

    dy = 2.0 * diff / (A * T)
    d_out_bias = dy.sum(axis=1)
    # y[a,t] = sum_f sum_j D[f,a,j] g[f,t-j]  ->  dD[f,a,j] = sum_t dy[a,t] g[f,t-j]
    gw = _windows(g, k)[:, :, ::-1]  # gw[f,t,jj] = g[f, t - (jj - r)]
    d_dec_k = np.einsum("at,ftk->fak", dy, gw)
    dg = conv1d_same(dy, dec.kernels, np.zeros(dec.kernels.shape[0]))
    de = dg.sum(axis=1)
    d_exp = np.outer(de, feat)
    d_exp_b = de
    dfeat = dec.expansion.T @ de
    d_proj = np.outer(dfeat, pooled)
    d_proj_b = dfeat
    dpooled = enc.projection.T @ dfeat
    dz = np.where(z > 0, dpooled[:, None] / T, 0.0)
    d_conv_b = dz.sum(axis=1)
    d_enc_k = np.einsum("ft,atk->fak", dz, _windows(x, k))

    enc_grads = [d_enc_k, d_conv_b, d_proj, d_proj_b]
    dec_grads = [d_exp, d_exp_b, d_dec_k, d_out_bias]
    return loss, enc_grads, dec_grads


def reconstruction_loss(x, enc, dec):
    return float(np.mean((decode(encode(x, enc), dec, x.shape[1]) - x) ** 2))


def train_autoencoder(
    dataset,
    n_filters=8,
    kernel_size=3,
    n_features=8,
    lr=0.1,
    epochs=50,
    batch_size=8,
    seed=0,
):
    """Mini-batch SGD on reconstruction MSE.

    Returns ``(encoder, decoder, loss_curve)`` where ``loss_curve[e]`` is the
    mean pre-step loss over epoch ``e``.
    """
    if len(dataset) == 0:
        raise EmptyDataset("training set is empty")
    if not lr > 0:
        raise ValueError("lr must be > 0")
    data = [as_float_array(m, 2, "training matrix") for m in dataset]
    A = data[0].shape[0]
    if any(m.shape != data[0].shape for m in data):
        raise ShapeMismatch("all training matrices must share one shape")
    rng = np.random.default_rng(seed)
    enc, dec = init_weights(A, n_filters, kernel_size, n_features, rng)
    curve = []
    n = len(data)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            enc_acc = [np.zeros_like(p) for p in enc.params()]
            dec_acc = [np.zeros_like(p) for p in dec.params()]
            with np.errstate(over="ignore", invalid="ignore"):
                for i in idx:
                    loss, eg, dg = loss_and_grads(data[i], enc, dec)
                    total += loss
                    for acc, gr in zip(enc_acc, eg):
                        acc += gr
                    for acc, gr in zip(dec_acc, dg):
                        acc += gr
                if not np.isfinite(total):
                    raise DivergedLoss(f"non-finite loss at epoch {epoch} (lr={lr})")
                step = lr / len(idx)
                for p, gr in zip(enc.params() + dec.params(), enc_acc + dec_acc):
                    p -= step * gr
        curve.append(total / n)
        if not np.isfinite(curve[-1]):
            raise DivergedLoss(f"non-finite loss at epoch {epoch} (lr={lr})")
    # a blow-up in the very last step only shows in the parameters
    if not all(np.all(np.isfinite(p)) for p in enc.params() + dec.params()):
        raise DivergedLoss(f"non-finite weights after training (lr={lr})")
    return enc, dec, curve


def gradient_check(enc, dec, x, epsilon=1e-5):
    """Max relative error between analytic and central-difference gradients.

    The relative error of one parameter is |ga - gn| / max(1e-12, |ga| + |gn|).
    A degenerate epsilon may produce nan/inf; the check still returns.
    """
    x = np.asarray(x, dtype=np.float64)
    _, eg, dg = loss_and_grads(x, enc, dec)
    worst = 0.0
    with np.errstate(all="ignore"):
        for params, grads in ((enc.params(), eg), (dec.params(), dg)):
            for p, ga in zip(params, grads):
                flat = p.reshape(-1)
                ga = ga.reshape(-1)
                for i in range(flat.size):
                    old = flat[i]
                    flat[i] = old + epsilon
                    lp = reconstruction_loss(x, enc, dec)
                    flat[i] = old - epsilon
                    lm = reconstruction_loss(x, enc, dec)
                    flat[i] = old
                    gn = (lp - lm) / (2.0 * epsilon)
                    err = abs(ga[i] - gn) / max(1e-12, abs(ga[i]) + abs(gn))
                    if not np.isfinite(err):
                        return float("nan")
                    worst = max(worst, err)
    return float(worst)


def _write_params(path, header, arrays):
    body = " ".join(format(float(v), ".17g") for a in arrays for v in np.ravel(a))
    try:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(header + "\n" + body + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _read_params(path, magic):
    try:
        with open(path, encoding="ascii") as fh:
            header, *rest = fh.read().split("\n", 1)
    except (OSError, UnicodeDecodeError) as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    tok = header.split()
    if len(tok) < 2 or tok[0] != magic or tok[1] != "v1":
        raise FormatVersionMismatch(f"{path}: bad header {header!r}")
    values = np.array([float(v) for v in " ".join(rest).split()], dtype=np.float64)
    return [int(t) for t in tok[2:]], values


def _unpack(values, shapes, path):
    sizes = [int(np.prod(s)) for s in shapes]
    if values.size != sum(sizes):
        raise FormatVersionMismatch(f"{path}: expected {sum(sizes)} values, found {values.size}")
    out, pos = [], 0
    for s, n in zip(shapes, sizes):
        out.append(values[pos : pos + n].reshape(s).copy())
        pos += n
    return out


def save_encoder(weights, path):
    """Header ``ENC v1 F k d A`` then kernels, conv bias, projection, projection bias."""
    w = weights
    header = f"ENC v1 {w.n_filters} {w.kernel_size} {w.n_features} {w.n_inputs}"
    _write_params(path, header, w.params())


def load_encoder(path):
    dims, values = _read_params(path, "ENC")
    if len(dims) != 4:
        raise FormatVersionMismatch(f"{path}: header needs F k d A")
    F, k, d, A = dims
    return EncoderWeights(*_unpack(values, [(F, A, k), (F,), (d, F), (d,)], path))


class ConvAutoencoder(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit`` on a stack of status matrices, ``transform`` to features.

    Parameters
    ----------
    n_filters, kernel_size, n_features : int
        Conv filters F, odd kernel taps k and feature dimension d.
    lr, epochs, batch_size : training schedule for plain SGD.
    random_state : int or None
        Seed of the initialisation and of the batch order.
    """

    def __init__(self, n_filters=8, kernel_size=3, n_features=8, lr=0.1, epochs=50,
                 batch_size=8, random_state=0):
        self.n_filters = n_filters
        self.kernel_size = kernel_size
        self.n_features = n_features
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X, y=None):
        X = as_float_array(X, 3, "X")
        self.encoder_, self.decoder_, self.loss_curve_ = train_autoencoder(
            list(X), self.n_filters, self.kernel_size, self.n_features,
            self.lr, self.epochs, self.batch_size, self.random_state,
        )
        self.n_timesteps_ = X.shape[2]
        return self

    def _check_fitted(self):
        if not hasattr(self, "encoder_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("ConvAutoencoder is not fitted yet")

    def transform(self, X):
        self._check_fitted()
        X = as_float_array(X, 3, "X")
        return np.array([encode(m, self.encoder_) for m in X]).reshape(len(X), -1)

    def inverse_transform(self, F):
        self._check_fitted()
        F = as_float_array(F, 2, "features")
        return np.array([decode(f, self.decoder_, self.n_timesteps_) for f in F])

    @classmethod
    def from_weights(cls, weights):
        """Encoder-only estimator around pre-trained weights (no decoder)."""
        est = cls(weights.n_filters, weights.kernel_size, weights.n_features, epochs=0)
        est.encoder_ = weights
        est.loss_curve_ = []
        return est
