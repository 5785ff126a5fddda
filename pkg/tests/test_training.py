import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acfatigue import _kernels
from acfatigue.dataset import fit_scaler, transform, as_arrays
from acfatigue.errors import GradientOverflowError
from acfatigue.network import Network, NetworkConfig, forward, forward_batch, init_network
from acfatigue.training import (
    LossKind,
    Optimizer,
    OptimizerKind,
    OptimizerState,
    TrainConfig,
    backprop,
    compute_loss,
    loss_gradient,
    optimizer_step,
    train,
)

from synth import surrogate_samples

BACKENDS = sorted(_kernels.BACKENDS)


# --- losses -----------------------------------------------------------------

def test_perfect_prediction_zero_loss():
    y = np.array([3e3, 1e5, 2e6])
    assert compute_loss("mse", y, y) == 0.0
    assert compute_loss("msle", y, y) == 0.0


def test_mse_by_hand():
    assert compute_loss(LossKind.MSE, [0, 0], [1, 3]) == 5.0


def test_msle_by_hand_with_clamp():
    assert compute_loss(LossKind.MSLE, [math.e - 1], [0.0]) == pytest.approx(1.0, abs=1e-15)
    # negative predictions are clamped to 0
    assert compute_loss(LossKind.MSLE, [math.e - 1], [-5.0]) == pytest.approx(1.0, abs=1e-15)


def test_loss_input_errors():
    with pytest.raises(ValueError, match="length mismatch"):
        compute_loss("mse", [1, 2], [1])
    with pytest.raises(ValueError, match="non-finite"):
        compute_loss("mse", [1.0], [math.nan])


def test_mse_scales_quadratically():
    rng = np.random.default_rng(1)
    y, p = rng.uniform(1, 10, 20), rng.uniform(1, 10, 20)
    assert compute_loss("mse", 7 * y, 7 * p) == pytest.approx(49 * compute_loss("mse", y, p), rel=1e-12)


def test_msle_matches_log_ratio_form():
    rng = np.random.default_rng(2)
    y, p = rng.uniform(0, 1e6, 50), rng.uniform(0, 1e6, 50)
    want = math.fsum(math.log((a + 1) / (b + 1)) ** 2 for a, b in zip(y, p)) / 50
    assert compute_loss("msle", y, p) == pytest.approx(want, rel=1e-12)


def test_gradient_zero_at_perfect_fit():
    y = np.array([1.0, 50.0, 7e4])
    for kind in LossKind:
        assert not loss_gradient(kind, y, y).any()


def test_mse_gradient_by_hand():
    np.testing.assert_array_equal(loss_gradient("mse", [2.0], [5.0]), [6.0])


def test_msle_gradient_blocked_by_clamp():
    assert loss_gradient("msle", [10.0, 10.0], [-1.0, -0.5]).tolist() == [0.0, 0.0]


@pytest.mark.parametrize("kind", list(LossKind))
def test_loss_gradient_finite_differences(kind):
    rng = np.random.default_rng(5)
    for _ in range(20):
        n = int(rng.integers(1, 8))
        y = rng.uniform(0.5, 50, n)
        p = rng.uniform(0.5, 50, n)
        g = loss_gradient(kind, y, p)
        for i in range(n):
            h = 1e-6 * max(1.0, abs(p[i]))
            up, dn = p.copy(), p.copy()
            up[i] += h
            dn[i] -= h
            fd = (compute_loss(kind, y, up) - compute_loss(kind, y, dn)) / (2 * h)
            assert g[i] == pytest.approx(fd, rel=1e-6, abs=1e-10)


# --- backprop ---------------------------------------------------------------

def _oracle_loss(net, X, y, kind):
    """Loss through the per-row forward pass, no batching or backprop code."""
    return compute_loss(kind, y, [forward(net, x)[0] for x in X])


def fd_gradients(net, X, y, kind, h=1e-5):
    out = []
    for p in net.params():
        g = np.empty_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            step = h * max(1.0, abs(orig))
            p[idx] = orig + step
            up = _oracle_loss(net, X, y, kind)
            p[idx] = orig - step
            dn = _oracle_loss(net, X, y, kind)
            p[idx] = orig
            g[idx] = (up - dn) / (2 * step)
        out.append(g)
    return out


def random_net(rng, sizes, act):
    Ws = [rng.normal(0, 1 / math.sqrt(a), size=(b, a)) for a, b in zip(sizes[:-1], sizes[1:])]
    bs = [rng.normal(0, 0.3, size=b) for b in sizes[1:]]
    return Network(Ws, bs, [act] * (len(sizes) - 2) + ["linear"])


def assert_grads_close(analytic, numeric, rtol=1e-4, atol=1e-6):
    for a, n in zip(analytic, numeric):
        np.testing.assert_allclose(a, n, rtol=rtol, atol=atol)


@pytest.mark.parametrize("backend", BACKENDS)
def test_perfect_fit_zero_parameter_gradients(backend):
    rng = np.random.default_rng(0)
    net = random_net(rng, [3, 4, 1], "tanh")
    X = rng.uniform(size=(6, 3))
    y = forward_batch(net, X, backend=backend)  # same summation order as backprop
    gW, gb = backprop(net, X, y, "mse", backend=backend)
    assert all(not g.any() for g in gW + gb)


@pytest.mark.parametrize("backend", BACKENDS)
def test_single_linear_neuron_by_hand(backend):
    x = np.array([[0.5, -1.0, 2.0]])
    net = Network([np.array([[0.2, 0.4, -0.1]])], [np.array([0.3])], ["linear"])
    pred = forward(net, x[0])[0]
    gW, gb = backprop(net, x, [1.5], "mse", backend=backend)
    np.testing.assert_allclose(gW[0], 2 * (pred - 1.5) * x, rtol=1e-14)
    np.testing.assert_allclose(gb[0], [2 * (pred - 1.5)], rtol=1e-14)


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("kind", list(LossKind))
@pytest.mark.parametrize("act", ["relu", "sigmoid", "tanh", "linear"])
def test_backprop_small_net_finite_differences(backend, kind, act):
    rng = np.random.default_rng(17)
    net = random_net(rng, [3, 4, 1], act)
    net.biases[-1][:] = 3.0  # keep predictions positive so MSLE is smooth
    X = rng.uniform(size=(5, 3))
    y = rng.uniform(1, 6, 5)
    gW, gb = backprop(net, X, y, kind, backend=backend)
    analytic = [g for pair in zip(gW, gb) for g in pair]
    assert_grads_close(analytic, fd_gradients(net, X, y, kind))


@pytest.mark.parametrize("backend", BACKENDS)
def test_backprop_3_8_8_1(backend):
    rng = np.random.default_rng(23)
    for kind in LossKind:
        net = random_net(rng, [3, 8, 8, 1], "tanh")
        net.biases[-1][:] = 4.0
        X = rng.uniform(size=(7, 3))
        y = rng.uniform(1, 9, 7)
        gW, gb = backprop(net, X, y, kind, backend=backend)
        assert_grads_close([g for p in zip(gW, gb) for g in p], fd_gradients(net, X, y, kind))


def test_backprop_overflow():
    net = Network([np.full((2, 3), 1e200), np.full((1, 2), 1e200)], [np.zeros(2), np.zeros(1)],
                  ["linear", "linear"])
    with pytest.raises(GradientOverflowError, match="gradient overflow"):
        backprop(net, np.ones((1, 3)), [1.0], "mse")


# --- optimizers -------------------------------------------------------------

def _step(kind, g, theta=0.0, **kw):
    opt = Optimizer(kind, **kw)
    params = [np.array([theta])]
    state = OptimizerState.zeros_like(params)
    optimizer_step(opt, state, params, [np.array([g])])
    return params[0][0], state


@pytest.mark.parametrize("kind", list(OptimizerKind))
def test_zero_gradient_no_change(kind):
    rng = np.random.default_rng(0)
    params = [rng.normal(size=(3, 2)), rng.normal(size=3)]
    before = [p.copy() for p in params]
    state = OptimizerState.zeros_like(params)
    for _ in range(3):
        optimizer_step(Optimizer(kind), state, params, [np.zeros_like(p) for p in params])
    assert state.t == 3
    for a, b in zip(params, before):
        np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("kind", list(OptimizerKind))
def test_zero_learning_rate_no_change(kind):
    theta, _ = _step(kind, 3.7, theta=1.25, learning_rate=0.0)
    assert theta == 1.25


def test_rmsprop_first_step_by_hand():
    theta, state = _step("rmsprop", 1.0, learning_rate=1e-3, rho=0.9, epsilon=1e-7)
    assert state.v[0][0] == pytest.approx(0.1, rel=1e-15)
    assert theta == pytest.approx(-0.001 / (math.sqrt(0.1) + 1e-7), abs=1e-15)
    assert theta == pytest.approx(-3.162277e-3, abs=1e-9)


@pytest.mark.parametrize("g", [1e-4, -0.3, 5.0, -2e5])
def test_adam_first_step_is_lr_sign(g):
    theta, state = _step("adam", g)
    want = -1e-3 * g / (abs(g) + 1e-7)
    assert theta == pytest.approx(want, abs=1e-15)
    assert abs(theta) == pytest.approx(1e-3, rel=1e-3)
    assert state.t == 1


def test_nadam_first_step_by_hand():
    g = 2.0
    theta, _ = _step("nadam", g)
    # m_hat = g, v_hat = g^2, numerator = beta1*g + g
    assert theta == pytest.approx(-1e-3 * 1.9 * g / (abs(g) + 1e-7), abs=1e-15)


def test_optimizer_step_shape_checks():
    params = [np.zeros(3)]
    with pytest.raises(ValueError):
        optimizer_step(Optimizer(), OptimizerState.zeros_like(params), params, [np.zeros(2)])


# --- training loop ----------------------------------------------------------

def _scaled(samples):
    X, y = as_arrays(samples)
    return transform(X, fit_scaler(X)), y


def test_one_epoch():
    X, y = _scaled(surrogate_samples(40, outliers=False))
    net = init_network(NetworkConfig(n_hidden_layers=1, neurons_per_hidden=8, seed=1))
    best, hist = train(net, (X[:30], y[:30]), (X[30:], y[30:]), TrainConfig(epochs=1))
    assert len(hist) == 1 and hist.best_epoch == 1 and hist.converged


def test_epochs_must_be_positive():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)


@pytest.mark.parametrize("backend", BACKENDS)
def test_training_bit_deterministic(backend):
    X, y = _scaled(surrogate_samples(50, outliers=False))
    cfg = TrainConfig(loss="mse", epochs=30, batch_size=8, seed=99)
    runs = []
    for _ in range(2):
        net = init_network(NetworkConfig(n_hidden_layers=2, neurons_per_hidden=16, seed=4))
        best, hist = train(net, (X[:40], y[:40]), (X[40:], y[40:]), cfg, backend=backend)
        runs.append((b"".join(p.tobytes() for p in best.params()), hist.train_loss))
    assert runs[0] == runs[1]


def test_backends_agree():
    X, y = _scaled(surrogate_samples(50, outliers=False))
    y = y / 1e5
    outs = {}
    for backend in BACKENDS:
        net = init_network(NetworkConfig(n_hidden_layers=2, neurons_per_hidden=12, seed=4))
        cfg = TrainConfig(loss="mse", optimizer=Optimizer("adam"), epochs=20, batch_size=8, seed=1)
        outs[backend] = train(net, (X[:40], y[:40]), (X[40:], y[40:]), cfg, backend=backend)
    ref_net, ref_hist = outs[BACKENDS[0]]
    for net, hist in outs.values():
        np.testing.assert_allclose(hist.val_loss, ref_hist.val_loss, rtol=1e-9)
        for p, q in zip(net.params(), ref_net.params()):
            np.testing.assert_allclose(p, q, rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize("metric", ["validation_loss", "training_loss"])
def test_checkpoint_dominance(metric):
    X, y = _scaled(surrogate_samples(60, outliers=False))
    net = init_network(NetworkConfig(n_hidden_layers=2, neurons_per_hidden=16, seed=2))
    cfg = TrainConfig(loss="msle", epochs=60, batch_size=16, checkpoint_metric=metric,
                      optimizer=Optimizer("rmsprop", learning_rate=0.05), seed=3)
    best, hist = train(net, (X[:45], y[:45]), (X[45:], y[45:]), cfg)
    series = hist.val_loss if metric == "validation_loss" else hist.train_loss
    Xm, ym = (X[45:], y[45:]) if metric == "validation_loss" else (X[:45], y[:45])
    achieved = compute_loss("msle", ym, [forward(best, x)[0] for x in Xm])
    assert achieved == pytest.approx(series[hist.best_epoch - 1], rel=1e-12)
    assert all(achieved <= v * (1 + 1e-12) for v in series)


@pytest.mark.parametrize("loss", list(LossKind))
@pytest.mark.parametrize("opt", list(OptimizerKind))
def test_huge_learning_rate_flagged_not_raised(loss, opt):
    X, y = _scaled(surrogate_samples(120, outliers=False))
    net = init_network(NetworkConfig(seed=0))
    cfg = TrainConfig(loss=loss, optimizer=Optimizer(opt, learning_rate=1e3), epochs=200, seed=0)
    best, hist = train(net, (X[:90], y[:90]), (X[90:], y[90:]), cfg)
    assert not hist.converged and hist.failure
    assert len(hist) < 200
    assert best.is_finite()


def test_blowup_rule():
    X, y = _scaled(surrogate_samples(60, outliers=False))
    net = init_network(NetworkConfig(n_hidden_layers=1, neurons_per_hidden=8, seed=0))
    # any finite loss exceeds a tiny factor, so the counter fills up at patience
    cfg = TrainConfig(loss="mse", epochs=50, divergence_factor=1e-30, divergence_patience=4)
    _, hist = train(net, (X[:40], y[:40]), (X[40:], y[40:]), cfg)
    assert not hist.converged and "diverged" in hist.failure and len(hist) == 4


def test_dead_relu_network_collapses():
    X, y = _scaled(surrogate_samples(30, outliers=False))
    net = init_network(NetworkConfig(n_hidden_layers=1, neurons_per_hidden=4, seed=0))
    net.weights[0][...] = -1.0  # inputs are >= 0, so every hidden unit is dead
    _, hist = train(net, (X[:20], y[:20]), (X[20:], y[20:]),
                    TrainConfig(loss="mse", epochs=30, divergence_patience=3))
    assert not hist.converged and "collapsed" in hist.failure and len(hist) == 3


def test_constant_inputs_are_not_collapse():
    X = np.full((8, 3), 0.5)
    y = np.linspace(1, 2, 8)
    net = init_network(NetworkConfig(n_hidden_layers=1, neurons_per_hidden=4, seed=0))
    _, hist = train(net, (X, y), (X, y), TrainConfig(loss="mse", epochs=15, divergence_patience=3))
    assert hist.converged and len(hist) == 15


def test_nonfinite_loss_stops_run():
    X = np.ones((4, 3))
    y = np.ones(4)
    net = Network([np.full((1, 3), 1e300)], [np.zeros(1)], ["linear"])
    best, hist = train(net, (X, y), (X, y), TrainConfig(loss="mse", epochs=5))
    assert not hist.converged and len(hist) == 1


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(list(OptimizerKind)))
def test_shape_chain_preserved_by_steps(seed, kind):
    rng = np.random.default_rng(seed)
    net = init_network(NetworkConfig(n_hidden_layers=2, neurons_per_hidden=5, seed=seed))
    X, y = rng.uniform(size=(6, 3)), rng.uniform(1, 2, 6)
    params = net.params()
    state = OptimizerState.zeros_like(params)
    for _ in range(3):
        gW, gb = backprop(net, X, y, "msle")
        optimizer_step(Optimizer(kind), state, params, [g for p in zip(gW, gb) for g in p])
    net.check_shapes()
    assert [m.shape for m in state.m] == [p.shape for p in params]
