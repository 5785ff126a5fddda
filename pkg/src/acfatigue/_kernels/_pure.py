"""Pure numpy implementation of the training kernels.

Parameters are passed as a flat list ``[W1, b1, W2, b2, ...]`` with
``W`` of shape (fan_out, fan_in).  Activations and losses are integer
codes so that this module and the compiled one share one calling
convention:

    activation  0 ReLU, 1 Linear, 2 Sigmoid, 3 Tanh
    loss        0 MSE, 1 MSLE
    optimizer   0 RMSprop, 1 Adam, 2 Nadam
"""

import numpy as np

RELU, LINEAR, SIGMOID, TANH = 0, 1, 2, 3
MSE, MSLE = 0, 1
RMSPROP, ADAM, NADAM = 0, 1, 2


def activate(z, code):
    if code == RELU:
        return np.maximum(z, 0.0)
    if code == LINEAR:
        return z.copy()
    if code == SIGMOID:
        # two-branch form avoids exp overflow
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    if code == TANH:
        return np.tanh(z)
    raise ValueError(f"unknown activation code {code}")


def activation_derivative(z, a, code):
    """Derivative of the activation at ``z``; ``a`` is the cached output."""
    if code == RELU:
        return (z > 0).astype(z.dtype)
    if code == LINEAR:
        return np.ones_like(z)
    if code == SIGMOID:
        return a * (1.0 - a)
    if code == TANH:
        return 1.0 - a * a
    raise ValueError(f"unknown activation code {code}")


def loss_value(kind, y, p):
    if kind == MSE:
        return float(np.mean((y - p) ** 2))
    r = np.log1p(y) - np.log1p(np.maximum(p, 0.0))
    return float(np.mean(r * r))


def loss_grad(kind, y, p):
    n = y.shape[0]
    if kind == MSE:
        return (2.0 / n) * (p - y)
    pc = np.maximum(p, 0.0)
    r = np.log1p(y) - np.log1p(pc)
    g = (-2.0 / n) * r / (pc + 1.0)
    return np.where(p >= 0.0, g, 0.0)


def _forward(params, acts, X):
    zs, as_ = [], [X]
    a = X
    for i, code in enumerate(acts):
        W, b = params[2 * i], params[2 * i + 1]
        z = a @ W.T + b
        a = activate(z, code)
        zs.append(z)
        as_.append(a)
    return zs, as_


def predict(params, acts, X):
    _, as_ = _forward(params, acts, np.ascontiguousarray(X, dtype=np.float64))
    return as_[-1][:, 0].copy()


def gradients(params, acts, X, y, loss_kind):
    """Batch loss and its gradient with respect to every parameter array."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    zs, as_ = _forward(params, acts, X)
    p = as_[-1][:, 0]
    loss = loss_value(loss_kind, y, p)
    delta = loss_grad(loss_kind, y, p)[:, None]
    grads = [None] * len(params)
    for i in range(len(acts) - 1, -1, -1):
        delta = delta * activation_derivative(zs[i], as_[i + 1], acts[i])
        grads[2 * i] = delta.T @ as_[i]
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ params[2 * i]
    return loss, grads


def update(opt, theta, g, m, v, t, lr, beta1, beta2, rho, eps):
    """Apply one optimizer update in place; ``t`` is the 1-based step index."""
    if opt == RMSPROP:
        v *= rho
        v += (1.0 - rho) * g * g
        theta -= lr * g / (np.sqrt(v) + eps)
        return
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    c1 = 1.0 - beta1 ** t
    m_hat = m / c1
    v_hat = v / (1.0 - beta2 ** t)
    if opt == NADAM:
        m_hat = beta1 * m_hat + ((1.0 - beta1) / c1) * g
    elif opt != ADAM:
        raise ValueError(f"unknown optimizer code {opt}")
    theta -= lr * m_hat / (np.sqrt(v_hat) + eps)


def train_epoch(params, m, v, t, acts, X, y, perm, batch_size, loss_kind, opt,
                lr, beta1, beta2, rho, eps):
    """Run one epoch of mini-batch updates in place.

    Returns the new step counter and the sample-weighted mean batch loss.
    """
    n = perm.shape[0]
    total = 0.0
    for start in range(0, n, batch_size):
        idx = perm[start:start + batch_size]
        loss, grads = gradients(params, acts, X[idx], y[idx], loss_kind)
        total += loss * idx.shape[0]
        t += 1
        for theta, g, mi, vi in zip(params, grads, m, v):
            update(opt, theta, g, mi, vi, t, lr, beta1, beta2, rho, eps)
    return t, total / n
