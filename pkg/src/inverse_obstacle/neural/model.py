"""Network definition, backpropagation and SGD-with-momentum training."""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from ..geometry import StarCoeffs
from .ops import PAD_MODES, Conv2d, pool_backward, pool_forward, relu

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CnnArch:
    """Layer sizes. ``fc_widths`` holds ``(N_1, ..., N_{L'})``."""

    n_t: int
    n_d: int
    M: int
    n_c: int = 5
    p: int = 2
    n_conv: int = 2
    fc_widths: tuple = (250, 50)
    pad_mode: str = "periodic"

    def __post_init__(self):
        object.__setattr__(self, "fc_widths", tuple(int(w) for w in self.fc_widths))
        if self.pad_mode not in PAD_MODES:
            raise ValueError(f"pad_mode must be one of {PAD_MODES}")
        div = 2**self.n_conv
        if self.n_t % div or self.n_d % div:
            raise ValueError(f"input dims {self.n_t}x{self.n_d} must be divisible by 2^L = {div}")
        if min(self.n_c, self.n_conv, self.M + 1, self.p + 1) <= 0 or not self.fc_widths:
            raise ValueError("invalid architecture sizes")
        if min(self.fc_widths) <= 0:
            raise ValueError("FC widths must be positive")
        smallest = min(self.n_t, self.n_d) >> (self.n_conv - 1)
        if self.pad_mode == "periodic" and self.p > smallest:
            raise ValueError("padding too wide for periodic wrap")

    @classmethod
    def standard(cls, M: int, n_t: int = 48, n_d: int = 48, pad_mode: str = "periodic") -> "CnnArch":
        """Reference sizing: N_c = M, p = 2 (4 from M = 20), N_1 = 50M, N_2 = 10M."""
        p = 4 if M >= 20 else 2
        return cls(n_t, n_d, M, n_c=M, p=p, fc_widths=(50 * M, 10 * M), pad_mode=pad_mode)

    @property
    def n_k(self) -> int:
        return 2 * self.p + 1

    @property
    def n_fc(self) -> int:
        return len(self.fc_widths)

    @property
    def n_out(self) -> int:
        return 2 * self.M + 1

    @property
    def n_flat(self) -> int:
        return self.n_t * self.n_d * self.n_c // 4**self.n_conv

    def conv_shapes(self):
        """Spatial size at the input of each convolution layer."""
        return [(self.n_t >> l, self.n_d >> l) for l in range(self.n_conv)]

    def param_shapes(self):
        shapes = []
        c_in = 1
        for _ in range(self.n_conv):
            shapes += [(c_in, self.n_c, self.n_k, self.n_k), (self.n_c,)]
            c_in = self.n_c
        prev = self.n_flat
        for w in self.fc_widths:
            shapes += [(w, prev), (w,)]
            prev = w
        shapes += [(self.n_out, prev), (self.n_out,)]
        return shapes


def glorot_init(arch: CnnArch, rng: np.random.Generator):
    """Uniform on +-sqrt(6 / (fan_in + fan_out)); biases start at zero."""
    params = []
    for shape in arch.param_shapes():
        if len(shape) == 1:
            params.append(np.zeros(shape))
            continue
        if len(shape) == 4:
            c_in, c_out, kh, kw = shape
            fan_in, fan_out = c_in * kh * kw, c_out * kh * kw
        else:
            fan_out, fan_in = shape
        a = np.sqrt(6.0 / (fan_in + fan_out))
        params.append(rng.uniform(-a, a, size=shape))
    return params


@dataclass
class CnnModel:
    """Trained weights plus the normalization constants of the training set.

    ``params`` is the flat list ``[W^1, b^1, ..., W^L, b^L, W_fc^1, b_fc^1,
    ..., W_out, b_out]``. Convolution weights have shape ``(C_in, C_out, n_K,
    n_K)``; fully connected weights ``(N_l, N_{l-1})``.
    """

    arch: CnnArch
    params: list
    mu: float = 0.0
    sigma0: float = 1.0
    _convs: list = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.params = [np.asarray(P, dtype=float) for P in self.params]
        expected = self.arch.param_shapes()
        got = [P.shape for P in self.params]
        if got != expected:
            raise ValueError(f"parameter shapes {got} do not match architecture {expected}")
        if not self.sigma0 > 0:
            raise ValueError("sigma0 must be positive")

    @classmethod
    def initialize(cls, arch: CnnArch, rng, mu=0.0, sigma0=1.0) -> "CnnModel":
        return cls(arch, glorot_init(arch, rng), mu, sigma0)

    @classmethod
    def zeros(cls, arch: CnnArch, mu=0.0, sigma0=1.0) -> "CnnModel":
        return cls(arch, [np.zeros(s) for s in arch.param_shapes()], mu, sigma0)

    @property
    def convs(self):
        if self._convs is None:
            a = self.arch
            self._convs = [Conv2d(r, c, a.p, a.pad_mode) for r, c in a.conv_shapes()]
        return self._convs

    @property
    def b_out(self) -> np.ndarray:
        return self.params[-1]

    def copy(self) -> "CnnModel":
        return replace(self, params=[P.copy() for P in self.params])


def _check_input(arch: CnnArch, X):
    X = np.asarray(X, dtype=float)
    if X.shape[-2:] != (arch.n_t, arch.n_d):
        raise ValueError(f"input of shape {X.shape[-2:]} does not match architecture {(arch.n_t, arch.n_d)}")
    return X


def _forward(model: CnnModel, X, params=None, keep=False):
    """Batched forward pass on ``X`` of shape (B, N_t, N_d)."""
    arch = model.arch
    params = model.params if params is None else params
    cache = []
    A = X[None, :, :, :]  # (channel, batch, rows, cols)
    for l, conv in enumerate(model.convs):
        W, b = params[2 * l], params[2 * l + 1]
        Z, conv_cache = conv.forward(A, W, b)
        if keep:
            cache.append((conv_cache, Z))
        A = pool_forward(relu(Z))
    # channel-major flatten of each sample: channel, then row, then column
    x = A.transpose(1, 0, 2, 3).reshape(A.shape[1], -1)
    off = 2 * arch.n_conv
    fc_cache = []
    for l in range(arch.n_fc):
        W, b = params[off + 2 * l], params[off + 2 * l + 1]
        z = x @ W.T + b
        if keep:
            fc_cache.append((x, z))
        x = relu(z)
    out = x @ params[-2].T + params[-1]
    if keep:
        return out, (cache, A.shape, fc_cache, x)
    return out


def cnn_forward(model: CnnModel, X0) -> np.ndarray:
    """Network output for one normalized input matrix, or for a (B, N_t, N_d) stack."""
    X0 = _check_input(model.arch, X0)
    if X0.ndim == 2:
        return _forward(model, X0[None])[0]
    return _forward(model, X0)


def loss_and_grads(model: CnnModel, X, T, params=None, mean_components=True):
    """Training loss and its gradient for every parameter.

    The default is the mean squared error over samples and output
    components, ``sum (f(X_b) - T_b)^2 / (B (2M+1))``; the learning rates in
    :class:`TrainConfig` are tuned for this scaling. With
    ``mean_components=False`` the loss is ``mean_b 1/2 ||f(X_b) - T_b||^2``.
    """
    arch = model.arch
    params = model.params if params is None else params
    out, (cache, pooled_shape, fc_cache, x_last) = _forward(model, X, params, keep=True)
    B = X.shape[0]
    diff = out - T
    if mean_components:
        loss = float(np.sum(diff**2)) / (B * arch.n_out)
        g = diff * (2.0 / (B * arch.n_out))
    else:
        loss = 0.5 * float(np.sum(diff**2)) / B
        g = diff / B
    grads = [None] * len(params)
    grads[-2] = g.T @ x_last
    grads[-1] = g.sum(axis=0)
    g = g @ params[-2]
    off = 2 * arch.n_conv
    for l in reversed(range(arch.n_fc)):
        x_in, z = fc_cache[l]
        g = g * (z > 0)
        grads[off + 2 * l] = g.T @ x_in
        grads[off + 2 * l + 1] = g.sum(axis=0)
        g = g @ params[off + 2 * l]
    c, b_, h, w = pooled_shape
    G = g.reshape(b_, c, h, w).transpose(1, 0, 2, 3)
    for l in reversed(range(arch.n_conv)):
        conv_cache, Z = cache[l]
        G = pool_backward(G, Z.shape) * (Z > 0)
        G, dW, db = model.convs[l].backward(G, conv_cache, params[2 * l])
        grads[2 * l] = dW
        grads[2 * l + 1] = db
    return loss, grads


def backprop(model: CnnModel, X0, target):
    """Gradients of ``1/2 ||cnn_forward(X0) - target||^2`` for a single sample."""
    X0 = _check_input(model.arch, X0)
    target = np.asarray(target, dtype=float)
    if X0.ndim != 2 or target.shape != (model.arch.n_out,):
        raise ValueError("backprop expects one input matrix and one target vector")
    _, grads = loss_and_grads(model, X0[None], target[None], mean_components=False)
    return grads


def normalize(matrices):
    """Center and scale by the global mean and standard deviation over all entries.

    Returns ``(normalized, mu, sigma0)``.
    """
    X = np.asarray(matrices, dtype=float)
    if X.size == 0:
        raise ValueError("cannot normalize an empty dataset")
    mu = float(X.mean())
    sigma0 = float(X.std())
    if not sigma0 > 0:
        raise ValueError("dataset has zero variance")
    return (X - mu) / sigma0, mu, sigma0


def predict(model: CnnModel, raw) -> StarCoeffs:
    """Coefficients predicted from raw complex far-field data.

    Only the real part is used, normalized with the model's stored constants.
    """
    raw = np.asarray(raw)
    if raw.shape != (model.arch.n_t, model.arch.n_d):
        raise ValueError(f"data of shape {raw.shape} does not match architecture {(model.arch.n_t, model.arch.n_d)}")
    X = (np.real(raw) - model.mu) / model.sigma0
    return StarCoeffs(cnn_forward(model, X))


def predict_batch(model: CnnModel, raw) -> np.ndarray:
    raw = np.asarray(raw)
    X = (np.real(raw) - model.mu) / model.sigma0
    return cnn_forward(model, _check_input(model.arch, X).reshape(-1, model.arch.n_t, model.arch.n_d))


@dataclass(frozen=True)
class TrainConfig:
    """SGD schedule: ``lr`` for all but the last ``tail_epochs`` epochs, then ``lr_tail``.

    Without an explicit tail the last ``min(100, epochs // 10)`` epochs use
    the reduced rate.
    """

    epochs: int = 1000
    batch_size: int = 100
    lr: float = 0.16
    lr_tail: float = 0.08
    tail_epochs: int | None = None
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.tail_epochs is None:
            object.__setattr__(self, "tail_epochs", min(100, self.epochs // 10))
        if self.epochs <= self.tail_epochs:
            raise ValueError(f"epochs must exceed {self.tail_epochs}")
        if self.batch_size <= 0 or self.lr <= 0 or self.lr_tail <= 0:
            raise ValueError("batch size and learning rates must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")

    def rate(self, epoch: int) -> float:
        return self.lr if epoch < self.epochs - self.tail_epochs else self.lr_tail


@dataclass
class TrainResult:
    model: CnnModel
    loss_history: np.ndarray


def train(X, T, arch: CnnArch, tc: TrainConfig, mu=0.0, sigma0=1.0, init_rng=None, callback=None) -> TrainResult:
    """Fit the network to normalized inputs ``X`` (n, N_t, N_d) and targets ``T`` (n, 2M+1).

    Mini-batches come from a fresh seeded permutation each epoch; the last
    partial batch is used as is. A batch covering the whole set is not
    shuffled, so zero momentum reproduces plain gradient descent exactly. ``loss_history`` holds the mean training loss
    of each epoch (averaged over its batches, evaluated before each update).
    """
    X = _check_input(arch, X)
    T = np.asarray(T, dtype=float)
    if X.ndim != 3 or T.shape != (X.shape[0], arch.n_out):
        raise ValueError("X must be (n, N_t, N_d) and T must be (n, 2M+1)")
    n = X.shape[0]
    if tc.batch_size > n:
        raise ValueError(f"batch size {tc.batch_size} exceeds dataset size {n}")
    seeds = np.random.SeedSequence(tc.seed).spawn(2)
    init_rng = np.random.default_rng(seeds[0]) if init_rng is None else init_rng
    shuffle_rng = np.random.default_rng(seeds[1])
    model = CnnModel.initialize(arch, init_rng, mu, sigma0)
    params = model.params
    velocity = [np.zeros_like(P) for P in params]
    history = np.empty(tc.epochs)
    for epoch in range(tc.epochs):
        lr = tc.rate(epoch)
        # a single full batch keeps its natural order so the gradient reduction is reproducible
        order = shuffle_rng.permutation(n) if tc.batch_size < n else np.arange(n)
        total = 0.0
        n_batches = 0
        for start in range(0, n, tc.batch_size):
            idx = order[start : start + tc.batch_size]
            loss, grads = loss_and_grads(model, X[idx], T[idx])
            for P, V, G in zip(params, velocity, grads):
                V *= tc.momentum
                V -= lr * G
                P += V
            total += loss
            n_batches += 1
        history[epoch] = total / n_batches
        if not np.isfinite(history[epoch]):
            raise FloatingPointError(f"training diverged at epoch {epoch}")
        if callback is not None:
            callback(epoch, history[epoch])
        if epoch % 100 == 0:
            logger.info("epoch %d: loss %.4e", epoch, history[epoch])
    return TrainResult(model, history)


def evaluate(model: CnnModel, X, T) -> np.ndarray:
    """Relative l2 error of the prediction for each normalized input."""
    pred = cnn_forward(model, X)
    T = np.asarray(T, dtype=float)
    return np.linalg.norm(pred - T, axis=1) / np.linalg.norm(T, axis=1)
