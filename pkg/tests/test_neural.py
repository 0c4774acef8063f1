import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from inverse_obstacle.neural import (
    CnnArch,
    CnnModel,
    ModelFormatError,
    TrainConfig,
    avg_pool,
    backprop,
    cnn_forward,
    cross_correlate,
    load_model,
    loss_and_grads,
    normalize,
    pad,
    predict,
    relu,
    save_model,
    train,
)
from inverse_obstacle.neural.io import from_bytes, to_bytes
from inverse_obstacle.neural.ops import Conv2d


def test_pad_examples():
    assert np.array_equal(pad([[7.0]], 1, "periodic"), np.full((3, 3), 7.0))
    z = pad([[7.0]], 1, "zero")
    assert z[1, 1] == 7.0 and z.sum() == 7.0
    assert np.array_equal(pad([[1, 2], [3, 4]], 1, "periodic")[0], [4, 3, 4, 3])


def test_pad_errors():
    with pytest.raises(ValueError):
        pad(np.ones((2, 3)), 3, "periodic")
    with pytest.raises(ValueError):
        pad(np.ones((2, 2)), 1, "reflect")


@given(arrays(float, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.floats(-9, 9)),
       st.integers(0, 3), st.sampled_from(["periodic", "zero"]))
def test_pad_then_crop_is_identity(X, p, mode):
    if mode == "periodic" and p > min(X.shape):
        return
    Y = pad(X, p, mode)
    assert np.array_equal(Y[p : p + X.shape[0], p : p + X.shape[1]], X)


def test_cross_correlate_examples():
    X = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(cross_correlate([[1.0]], X), X)
    assert np.array_equal(cross_correlate(np.eye(2), X), [[5.0]])
    assert np.array_equal(cross_correlate(np.ones((2, 2)), X), [[10.0]])
    with pytest.raises(ValueError):
        cross_correlate(np.ones((3, 1)), X)


def test_cross_correlate_against_loops():
    rng = np.random.default_rng(0)
    W, X = rng.standard_normal((3, 2)), rng.standard_normal((6, 5))
    ref = np.zeros((4, 4))
    for i in range(4):
        for j in range(4):
            for a in range(3):
                for b in range(2):
                    ref[i, j] += W[a, b] * X[a + i, b + j]
    assert np.allclose(cross_correlate(W, X), ref, atol=1e-14)


def test_avg_pool_examples():
    assert np.array_equal(avg_pool([[1.0, 2.0], [3.0, 4.0]]), [[2.5]])
    assert np.array_equal(avg_pool(np.full((6, 4), 3.0)), np.full((3, 2), 3.0))
    X = np.arange(9.0).reshape(3, 3)
    assert np.array_equal(avg_pool(X), [[(0 + 1 + 3 + 4) / 4]])


@given(arrays(float, 10, elements=st.floats(-5, 5)))
def test_relu_idempotent(x):
    assert np.array_equal(relu(relu(x)), relu(x))


@pytest.mark.parametrize("mode", ["periodic", "zero"])
@pytest.mark.parametrize("p", [1, 4])
def test_batched_conv_matches_single_matrix_ops(mode, p):
    rng = np.random.default_rng(1)
    c_in, c_out = 3, 2
    X = rng.standard_normal((c_in, 4, 8, 6))
    W = rng.standard_normal((c_in, c_out, 2 * p + 1, 2 * p + 1))
    b = rng.standard_normal(c_out)
    Z, _ = Conv2d(8, 6, p, mode).forward(X, W, b)
    for s in range(4):
        for k in range(c_out):
            ref = sum(cross_correlate(W[j, k], pad(X[j, s], p, mode)) for j in range(c_in)) + b[k]
            assert np.allclose(Z[k, s], ref, atol=1e-12)


def test_arch_shapes_for_five_modes():
    arch = CnnArch.standard(5)
    assert (arch.n_c, arch.p, arch.n_k, arch.fc_widths) == (5, 2, 5, (250, 50))
    assert arch.conv_shapes() == [(48, 48), (24, 24)]
    assert arch.n_flat == 720
    shapes = arch.param_shapes()
    assert shapes[0] == (1, 5, 5, 5) and shapes[2] == (5, 5, 5, 5)
    assert shapes[4] == (250, 720) and shapes[6] == (50, 250) and shapes[8] == (11, 50)


def test_arch_validation():
    with pytest.raises(ValueError):
        CnnArch(50, 48, 5)
    with pytest.raises(ValueError):
        CnnArch(8, 8, 1, p=5, pad_mode="periodic")
    with pytest.raises(ValueError):
        CnnArch(8, 8, 1, pad_mode="mirror")


def tiny_arch(mode="periodic", **kw):
    return CnnArch(8, 8, 1, n_c=2, p=1, fc_widths=(6, 4), pad_mode=mode, **kw)


def random_model(arch, seed, scale=0.3):
    rng = np.random.default_rng(seed)
    model = CnnModel.initialize(arch, rng)
    for P in model.params:
        P += scale * rng.standard_normal(P.shape)
    return model


def test_zero_network_outputs_bias():
    arch = tiny_arch()
    model = CnnModel.zeros(arch)
    model.params[-1][:] = [0.5, -1.0, 2.0]
    X = np.random.default_rng(0).standard_normal((8, 8))
    assert np.array_equal(cnn_forward(model, X), [0.5, -1.0, 2.0])
    raw = X + 1j * X
    assert np.array_equal(predict(model, raw).c, [0.5, -1.0, 2.0])


def test_forward_is_deterministic_and_checks_shape():
    model = random_model(tiny_arch(), 0)
    X = np.random.default_rng(1).standard_normal((8, 8))
    assert np.array_equal(cnn_forward(model, X), cnn_forward(model, X))
    batch = cnn_forward(model, np.stack([X, 2 * X]))
    # batched GEMMs may reorder sums
    assert np.allclose(batch[0], cnn_forward(model, X), rtol=1e-13, atol=1e-14)
    with pytest.raises(ValueError):
        cnn_forward(model, np.zeros((8, 6)))


def test_backprop_zero_network():
    model = CnnModel.zeros(tiny_arch())
    model.params[-1][:] = [1.0, 2.0, 3.0]
    grads = backprop(model, np.zeros((8, 8)), np.zeros(3))
    for g in grads[:-1]:
        assert not g.any()
    assert np.array_equal(grads[-1], [1.0, 2.0, 3.0])


def fd_check(model, X, T, h=1e-6):
    _, grads = loss_and_grads(model, X, T)
    worst = 0.0
    for P, G in zip(model.params, grads):
        fd = np.zeros_like(P)
        for idx in np.ndindex(P.shape):
            old = P[idx]
            P[idx] = old + h
            lp = loss_and_grads(model, X, T)[0]
            P[idx] = old - h
            lm = loss_and_grads(model, X, T)[0]
            P[idx] = old
            fd[idx] = (lp - lm) / (2 * h)
        denom = max(np.linalg.norm(fd), np.linalg.norm(G), 1e-12)
        worst = max(worst, np.linalg.norm(fd - G) / denom)
    return worst


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("mode", ["periodic", "zero"])
def test_gradients_match_finite_differences(seed, mode):
    model = random_model(tiny_arch(mode), seed)
    rng = np.random.default_rng(100 + seed)
    assert fd_check(model, rng.standard_normal((2, 8, 8)), rng.standard_normal((2, 3))) < 1e-5


def test_gradient_wraps_at_border():
    # input energy only on the outer ring exercises the wrap-around path of the padding adjoint
    model = random_model(tiny_arch("periodic"), 7)
    X = np.zeros((1, 8, 8))
    X[0, 0, :] = X[0, -1, :] = 3.0
    X[0, :, 0] = X[0, :, -1] = -2.0
    assert fd_check(model, X, np.array([[0.3, -0.2, 0.1]])) < 1e-5


def test_loss_scalings_agree():
    model = random_model(tiny_arch(), 3)
    rng = np.random.default_rng(8)
    X, T = rng.standard_normal((1, 8, 8)), rng.standard_normal((1, 3))
    loss, grads = loss_and_grads(model, X, T)
    assert loss == pytest.approx(np.mean((cnn_forward(model, X) - T) ** 2), rel=1e-14)
    for g, h in zip(grads, backprop(model, X[0], T[0])):
        assert np.allclose(g, h * 2 / 3, rtol=1e-12, atol=1e-15)


def test_normalize_examples():
    out, mu, s0 = normalize([[[0.0, 2.0]]])
    assert (mu, s0) == (1.0, 1.0)
    assert np.array_equal(out, [[[-1.0, 1.0]]])
    data = np.random.default_rng(2).standard_normal((5, 4, 3)) * 3 + 7
    out, _, _ = normalize(data)
    assert abs(out.mean()) < 1e-12 and abs(out.var() - 1) < 1e-12
    with pytest.raises(ValueError):
        normalize(np.ones((2, 3, 3)))


def test_train_config_invariants():
    with pytest.raises(ValueError):
        TrainConfig(epochs=100, tail_epochs=100)
    tc = TrainConfig(epochs=1500)
    assert tc.tail_epochs == 100
    assert tc.rate(1399) == 0.16 and tc.rate(1400) == 0.08
    assert TrainConfig(epochs=30).tail_epochs == 3
    assert TrainConfig(epochs=1).tail_epochs == 0


def fit_arch():
    # a node-starved net can die at init; this one has room to interpolate a few samples
    return CnnArch(8, 8, 1, n_c=4, p=1, fc_widths=(32, 16))


def tiny_data(n, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, 8, 8)), rng.uniform(-1, 1, (n, 3))


def test_overfit_two_samples():
    X, T = tiny_data(2)
    res = train(X, T, fit_arch(), TrainConfig(epochs=200, batch_size=2, lr=0.06, lr_tail=0.03, seed=3))
    assert res.loss_history[-1] < res.loss_history[0] / 100


def test_training_is_reproducible():
    X, T = tiny_data(10)
    tc = TrainConfig(epochs=110, batch_size=4, lr=0.01, lr_tail=0.005, seed=11)
    a = train(X, T, tiny_arch(), tc).model
    b = train(X, T, tiny_arch(), tc).model
    assert all(np.array_equal(p, q) for p, q in zip(a.params, b.params))


def test_zero_momentum_full_batch_is_gradient_descent():
    X, T = tiny_data(6)
    tc = TrainConfig(epochs=105, batch_size=6, lr=0.01, lr_tail=0.005, momentum=0.0, seed=5)
    trained = train(X, T, tiny_arch(), tc).model
    init_seed = np.random.SeedSequence(5).spawn(2)[0]
    model = CnnModel.initialize(tiny_arch(), np.random.default_rng(init_seed))
    for epoch in range(tc.epochs):
        _, grads = loss_and_grads(model, X, T)
        for P, G in zip(model.params, grads):
            P -= tc.rate(epoch) * G
    assert all(np.array_equal(p, q) for p, q in zip(trained.params, model.params))


def test_overfit_prediction():
    rng = np.random.default_rng(4)
    raw = rng.standard_normal((3, 8, 8)) + 1j * rng.standard_normal((3, 8, 8))
    T = np.array([[1.1, 0.05, -0.02], [1.0, -0.03, 0.04], [1.15, 0.0, 0.06]])
    X, mu, s0 = normalize(raw.real)
    model = train(X, T, fit_arch(), TrainConfig(epochs=2000, batch_size=3, lr=0.06, lr_tail=0.03, seed=1),
                  mu, s0).model
    for i in range(3):
        c = predict(model, raw[i]).c
        assert np.linalg.norm(c - T[i]) / np.linalg.norm(T[i]) < 0.01
        shifted = predict(model, raw[i].real + 5j * rng.standard_normal((8, 8))).c
        assert np.array_equal(c, shifted)
    with pytest.raises(ValueError):
        predict(model, raw[0][:4])


def test_model_file_roundtrip(tmp_path):
    model = random_model(CnnArch(8, 8, 2, n_c=3, p=2, fc_widths=(7, 5), pad_mode="zero"), 9)
    model.mu, model.sigma0 = 0.25, 1.5
    path = tmp_path / "m.isnn"
    save_model(model, path)
    back = load_model(path)
    assert back.arch == model.arch
    assert (back.mu, back.sigma0) == (0.25, 1.5)
    assert all(np.array_equal(p, q) for p, q in zip(back.params, model.params))
    assert to_bytes(back) == path.read_bytes()


def test_model_file_layout():
    model = random_model(tiny_arch(), 1)
    buf = to_bytes(model)
    assert buf[:5] == b"ISNN1"
    header = struct.unpack_from("<11I2d", buf, 5)
    assert header[:11] == (2, 2, 2, 1, 3, 8, 8, 1, 6, 4, 0)
    pos = 5 + struct.calcsize("<11I2d")
    ndim, *dims = struct.unpack_from("<5I", buf, pos)
    assert ndim == 4 and tuple(dims) == (1, 2, 3, 3)
    first = np.frombuffer(buf, "<f8", count=18, offset=pos + 20)
    assert np.array_equal(first, model.params[0].ravel())


def test_model_file_rejects_corruption():
    buf = to_bytes(random_model(tiny_arch(), 2))
    with pytest.raises(ModelFormatError):
        from_bytes(b"XXXXX" + buf[5:])
    with pytest.raises(ModelFormatError):
        from_bytes(buf[:-8])
    with pytest.raises(ModelFormatError):
        from_bytes(buf + b"\0")


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_single_layer_fc_roundtrip(seed):
    arch = CnnArch(4, 4, 0, n_c=1, p=1, n_conv=1, fc_widths=(3,))
    model = random_model(arch, seed)
    back = from_bytes(to_bytes(model))
    assert back.arch.fc_widths == (3,)
    assert all(np.array_equal(p, q) for p, q in zip(back.params, model.params))
