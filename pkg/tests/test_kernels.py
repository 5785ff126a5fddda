"""The compiled core against the numpy reference, kernel by kernel."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acfatigue import _kernels
from acfatigue._kernels import _pure

core = pytest.importorskip("acfatigue._kernels._core")


def _net(rng, sizes, act_codes):
    params = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        params.append(rng.normal(0, 1 / np.sqrt(a), size=(b, a)))
        params.append(rng.normal(0, 0.3, size=b))
    return params, list(act_codes) + [1]


nets = st.tuples(
    st.integers(0, 2**32 - 1),
    st.lists(st.integers(1, 9), min_size=1, max_size=4),
    st.integers(0, 3),
    st.integers(1, 40),
)


@settings(max_examples=60, deadline=None)
@given(nets)
def test_predict_equivalent(case):
    seed, hidden, act, n = case
    rng = np.random.default_rng(seed)
    params, acts = _net(rng, [3, *hidden, 1], [act] * len(hidden))
    X = rng.uniform(size=(n, 3))
    np.testing.assert_allclose(core.predict(params, acts, X), _pure.predict(params, acts, X),
                               rtol=1e-12, atol=1e-13)


@settings(max_examples=60, deadline=None)
@given(nets, st.integers(0, 1))
def test_gradients_equivalent(case, loss):
    seed, hidden, act, n = case
    rng = np.random.default_rng(seed)
    params, acts = _net(rng, [3, *hidden, 1], [act] * len(hidden))
    X, y = rng.uniform(size=(n, 3)), rng.uniform(0, 3, n)
    lc, gc = core.gradients(params, acts, X, y, loss)
    lp, gp = _pure.gradients(params, acts, X, y, loss)
    assert lc == pytest.approx(lp, rel=1e-12, abs=1e-15)
    for a, b in zip(gc, gp):
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-13)


@pytest.mark.parametrize("opt", [0, 1, 2])
@pytest.mark.parametrize("loss", [0, 1])
@pytest.mark.parametrize("batch", [1, 7, 32, 100])
def test_train_epoch_equivalent(opt, loss, batch):
    rng = np.random.default_rng(opt * 10 + loss)
    params, acts = _net(rng, [3, 6, 5, 1], [0, 3])
    params[-1][:] = 2.0
    X, y = rng.uniform(size=(45, 3)), rng.uniform(1, 4, 45)
    perm = rng.permutation(45)
    states = {}
    for name, mod in (("core", core), ("pure", _pure)):
        p = [a.copy() for a in params]
        m = [np.zeros_like(a) for a in p]
        v = [np.zeros_like(a) for a in p]
        t = 0
        for _ in range(3):
            t, loss_val = mod.train_epoch(p, m, v, t, acts, X, y, perm, batch, loss, opt,
                                          1e-3, 0.9, 0.999, 0.9, 1e-7)
        states[name] = (p, m, v, t, loss_val)
    (pc, mc, vc, tc, lc), (pp, mp, vp, tp, lp) = states["core"], states["pure"]
    assert tc == tp == 3 * -(-45 // batch)
    assert lc == pytest.approx(lp, rel=1e-10)
    for group_c, group_p in ((pc, pp), (mc, mp), (vc, vp)):
        for a, b in zip(group_c, group_p):
            np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)


def test_train_epoch_rejects_copies():
    rng = np.random.default_rng(0)
    params, acts = _net(rng, [3, 4, 1], [0])
    params[0] = np.asfortranarray(params[0])  # would be silently copied
    m = [np.zeros_like(a) for a in params]
    v = [np.zeros_like(a) for a in params]
    with pytest.raises(ValueError):
        core.train_epoch(params, m, v, 0, acts, np.zeros((4, 3)), np.zeros(4), np.arange(4),
                         2, 0, 0, 1e-3, 0.9, 0.999, 0.9, 1e-7)


def test_bad_inputs():
    rng = np.random.default_rng(0)
    params, acts = _net(rng, [3, 4, 1], [0])
    with pytest.raises(ValueError):
        core.predict(params, acts, np.zeros((2, 4)))
    with pytest.raises(ValueError):
        core.gradients(params, acts, np.zeros((0, 3)), np.zeros(0), 0)
    m = [np.zeros_like(a) for a in params]
    with pytest.raises(IndexError):
        core.train_epoch(params, m, [np.zeros_like(a) for a in params], 0, acts,
                         np.zeros((4, 3)), np.zeros(4), np.array([0, 1, 2, 9]),
                         2, 0, 0, 1e-3, 0.9, 0.999, 0.9, 1e-7)


def test_empty_predict():
    params, acts = _net(np.random.default_rng(0), [3, 2, 1], [0])
    assert core.predict(params, acts, np.zeros((0, 3))).shape == (0,)


def test_get_backend():
    assert _kernels.get_backend("python") is _pure
    assert _kernels.get_backend("compiled") is core
    assert _kernels.get_backend() is _kernels.backend
    with pytest.raises(ValueError):
        _kernels.get_backend("fortran")
