# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled training kernels.

Same calling convention as ``_pure``; see that module for the codes.
Matrices are row-major (C order).  A row-major ``M`` with shape (r, c) is
the column-major ``M^T``, which is how the ``dgemm`` calls below are set
up.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh, sqrt, log1p, pow
from libc.stdlib cimport malloc, free
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

cdef enum:
    RELU = 0
    LINEAR = 1
    SIGMOID = 2
    TANH = 3

cdef enum:
    MSE = 0
    MSLE = 1

cdef enum:
    RMSPROP = 0
    ADAM = 1
    NADAM = 2


cdef struct Net:
    int n_layers
    int* fan_in
    int* fan_out
    int* act
    double** W
    double** b


cdef list _as_c(list arrays):
    return [np.ascontiguousarray(a, dtype=np.float64) for a in arrays]


cdef int _check_inplace(list arrays) except -1:
    for a in arrays:
        if not (isinstance(a, np.ndarray) and a.dtype == np.float64 and a.flags.c_contiguous
                and a.flags.writeable):
            raise ValueError("parameter and state arrays must be writeable C-contiguous float64")
    return 0


cdef Net _make_net(list params, acts) except *:
    cdef Net net
    cdef int L = len(acts)
    cdef int i
    cdef double[:, ::1] Wv
    cdef double[::1] bv
    if len(params) != 2 * L:
        raise ValueError("params must hold one weight and one bias per layer")
    net.n_layers = L
    net.fan_in = <int*> malloc(L * sizeof(int))
    net.fan_out = <int*> malloc(L * sizeof(int))
    net.act = <int*> malloc(L * sizeof(int))
    net.W = <double**> malloc(L * sizeof(double*))
    net.b = <double**> malloc(L * sizeof(double*))
    for i in range(L):
        Wv = params[2 * i]
        bv = params[2 * i + 1]
        net.fan_out[i] = Wv.shape[0]
        net.fan_in[i] = Wv.shape[1]
        if bv.shape[0] != Wv.shape[0]:
            _free_net(&net)
            raise ValueError("bias length does not match weight rows")
        if i > 0 and net.fan_in[i] != net.fan_out[i - 1]:
            _free_net(&net)
            raise ValueError("layer dimensions do not chain")
        net.act[i] = int(acts[i])
        net.W[i] = &Wv[0, 0]
        net.b[i] = &bv[0]
    if net.fan_out[L - 1] != 1:
        _free_net(&net)
        raise ValueError("output layer must have a single unit")
    return net


cdef void _free_net(Net* net) noexcept:
    free(net.fan_in)
    free(net.fan_out)
    free(net.act)
    free(net.W)
    free(net.b)


cdef inline double _act(double z, int code) noexcept nogil:
    cdef double e
    if code == RELU:
        return z if z > 0.0 else 0.0
    elif code == SIGMOID:
        if z >= 0.0:
            return 1.0 / (1.0 + exp(-z))
        e = exp(z)
        return e / (1.0 + e)
    elif code == TANH:
        return tanh(z)
    return z


cdef inline double _dact(double z, double a, int code) noexcept nogil:
    if code == RELU:
        return 1.0 if z > 0.0 else 0.0
    elif code == SIGMOID:
        return a * (1.0 - a)
    elif code == TANH:
        return 1.0 - a * a
    return 1.0


cdef struct Work:
    int cap
    double** Z
    double** A      # A[0] is the input batch, A[i + 1] output of layer i
    double* delta
    double* delta_prev


cdef int _alloc_work(Work* w, Net* net, int cap, int n_in) except -1:
    cdef int i, widest = n_in
    cdef int L = net.n_layers
    w.cap = cap
    w.Z = <double**> malloc(L * sizeof(double*))
    w.A = <double**> malloc((L + 1) * sizeof(double*))
    w.A[0] = <double*> malloc(cap * n_in * sizeof(double))
    for i in range(L):
        w.Z[i] = <double*> malloc(cap * net.fan_out[i] * sizeof(double))
        w.A[i + 1] = <double*> malloc(cap * net.fan_out[i] * sizeof(double))
        if net.fan_out[i] > widest:
            widest = net.fan_out[i]
    w.delta = <double*> malloc(cap * widest * sizeof(double))
    w.delta_prev = <double*> malloc(cap * widest * sizeof(double))
    return 0


cdef void _free_work(Work* w, Net* net) noexcept:
    cdef int i
    for i in range(net.n_layers):
        free(w.Z[i])
        free(w.A[i + 1])
    free(w.A[0])
    free(w.Z)
    free(w.A)
    free(w.delta)
    free(w.delta_prev)


cdef void _forward(Net* net, Work* w, int B) noexcept nogil:
    cdef int i, r, j, fi, fo
    cdef double one = 1.0, zero = 0.0
    cdef double* Z
    cdef double* A
    cdef double* bias
    cdef int code
    for i in range(net.n_layers):
        fi = net.fan_in[i]
        fo = net.fan_out[i]
        Z = w.Z[i]
        # Z^T (fo x B) = W (fo x fi) @ A_prev^T (fi x B)
        dgemm(b"T", b"N", &fo, &B, &fi, &one, net.W[i], &fi, w.A[i], &fi, &zero, Z, &fo)
        A = w.A[i + 1]
        bias = net.b[i]
        code = net.act[i]
        for r in range(B):
            for j in range(fo):
                Z[r * fo + j] += bias[j]
                A[r * fo + j] = _act(Z[r * fo + j], code)


cdef double _backward(Net* net, Work* w, int B, const double* y, int loss_kind,
                      double** gW, double** gb) noexcept nogil:
    """Forward pass output must be in ``w``; writes gradients, returns loss."""
    cdef int L = net.n_layers
    cdef int i, r, j, fi, fo
    cdef double one = 1.0, zero = 0.0
    cdef double p, pc, res, loss = 0.0
    cdef double* out = w.A[L]
    cdef double* delta = w.delta
    cdef double* tmp
    cdef double* Z
    cdef double* A
    for r in range(B):
        p = out[r]
        if loss_kind == MSE:
            res = p - y[r]
            loss += res * res
            delta[r] = (2.0 / B) * res
        else:
            pc = p if p > 0.0 else 0.0
            res = log1p(y[r]) - log1p(pc)
            loss += res * res
            delta[r] = ((-2.0 / B) * res / (pc + 1.0)) if p >= 0.0 else 0.0
    loss /= B
    for i in range(L - 1, -1, -1):
        fi = net.fan_in[i]
        fo = net.fan_out[i]
        Z = w.Z[i]
        A = w.A[i + 1]
        for r in range(B * fo):
            delta[r] *= _dact(Z[r], A[r], net.act[i])
        # dW^T (fi x fo) = A_prev^T (fi x B) @ delta (B x fo)
        dgemm(b"N", b"T", &fi, &fo, &B, &one, w.A[i], &fi, delta, &fo, &zero, gW[i], &fi)
        for j in range(fo):
            gb[i][j] = 0.0
        for r in range(B):
            for j in range(fo):
                gb[i][j] += delta[r * fo + j]
        if i > 0:
            # delta_prev^T (fi x B) = W^T (fi x fo) @ delta^T (fo x B)
            dgemm(b"N", b"N", &fi, &B, &fo, &one, net.W[i], &fi, delta, &fo, &zero,
                  w.delta_prev, &fi)
            tmp = delta
            delta = w.delta_prev
            w.delta_prev = tmp
    w.delta = delta
    return loss


cdef void _load_batch(Work* w, const double* X, int n_in, const long long* idx, int B) noexcept nogil:
    cdef int r, j
    for r in range(B):
        for j in range(n_in):
            w.A[0][r * n_in + j] = X[idx[r] * n_in + j]


cdef void _update(int opt, double* theta, const double* g, double* m, double* v, Py_ssize_t n,
                  long long t, double lr, double beta1, double beta2, double rho,
                  double eps) noexcept nogil:
    cdef Py_ssize_t k
    cdef double c1, c2, mh, vh, gk
    if opt == RMSPROP:
        for k in range(n):
            gk = g[k]
            v[k] = rho * v[k] + (1.0 - rho) * gk * gk
            theta[k] -= lr * gk / (sqrt(v[k]) + eps)
        return
    c1 = 1.0 - pow(beta1, <double> t)
    c2 = 1.0 - pow(beta2, <double> t)
    for k in range(n):
        gk = g[k]
        m[k] = beta1 * m[k] + (1.0 - beta1) * gk
        v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk
        mh = m[k] / c1
        vh = v[k] / c2
        if opt == NADAM:
            mh = beta1 * mh + ((1.0 - beta1) / c1) * gk
        theta[k] -= lr * mh / (sqrt(vh) + eps)


cdef inline void memcpy_rows(double* dst, const double* src, Py_ssize_t count) noexcept nogil:
    cdef Py_ssize_t k
    for k in range(count):
        dst[k] = src[k]


def predict(list params, acts, X):
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] Xc = np.ascontiguousarray(X, dtype=np.float64)
    params = _as_c(params)
    cdef Net net = _make_net(params, acts)
    cdef Work w
    cdef int n = Xc.shape[0], n_in = Xc.shape[1], r
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    if n_in != net.fan_in[0]:
        _free_net(&net)
        raise ValueError("input width does not match the first layer")
    if n == 0:
        _free_net(&net)
        return out
    _alloc_work(&w, &net, n, n_in)
    memcpy_rows(w.A[0], &Xc[0, 0], n * n_in)
    with nogil:
        _forward(&net, &w, n)
    for r in range(n):
        out[r] = w.A[net.n_layers][r]
    _free_work(&w, &net)
    _free_net(&net)
    return out


def gradients(list params, acts, X, y, int loss_kind):
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] Xc = np.ascontiguousarray(X, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] yc = np.ascontiguousarray(y, dtype=np.float64)
    params = _as_c(params)
    cdef Net net = _make_net(params, acts)
    cdef int B = Xc.shape[0], n_in = Xc.shape[1], i
    cdef Work w
    cdef double loss
    if B == 0 or yc.shape[0] != B or n_in != net.fan_in[0]:
        _free_net(&net)
        raise ValueError("batch must be nonempty with matching shapes")
    grads = [np.empty_like(p) for p in params]
    cdef double** gW = <double**> malloc(net.n_layers * sizeof(double*))
    cdef double** gb = <double**> malloc(net.n_layers * sizeof(double*))
    cdef double[:, ::1] gWv
    cdef double[::1] gbv
    for i in range(net.n_layers):
        gWv = grads[2 * i]
        gbv = grads[2 * i + 1]
        gW[i] = &gWv[0, 0]
        gb[i] = &gbv[0]
    _alloc_work(&w, &net, B, n_in)
    memcpy_rows(w.A[0], &Xc[0, 0], B * n_in)
    with nogil:
        _forward(&net, &w, B)
        loss = _backward(&net, &w, B, &yc[0], loss_kind, gW, gb)
    _free_work(&w, &net)
    free(gW)
    free(gb)
    _free_net(&net)
    return loss, grads


def train_epoch(list params, list m, list v, long long t, acts, X, y, perm, int batch_size,
                int loss_kind, int opt, double lr, double beta1, double beta2, double rho,
                double eps):
    """One epoch of mini-batch updates, in place.  Returns (t, mean batch loss)."""
    _check_inplace(params)
    _check_inplace(m)
    _check_inplace(v)
    if not (len(m) == len(v) == len(params)):
        raise ValueError("optimizer state must hold one array per parameter")
    for p_, m_, v_ in zip(params, m, v):
        if m_.shape != p_.shape or v_.shape != p_.shape:
            raise ValueError("state shapes must mirror parameter shapes")
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] Xc = np.ascontiguousarray(X, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] yc = np.ascontiguousarray(y, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] pc = np.ascontiguousarray(perm, dtype=np.int64)
    cdef Net net = _make_net(params, acts)
    cdef int L = net.n_layers, n_in = Xc.shape[1], n = pc.shape[0]
    cdef int i, start, B, r
    cdef Work w
    if n == 0 or batch_size < 1 or n_in != net.fan_in[0]:
        _free_net(&net)
        raise ValueError("invalid epoch inputs")
    if batch_size > n:
        batch_size = n
    for r in range(n):
        if pc[r] < 0 or pc[r] >= Xc.shape[0]:
            _free_net(&net)
            raise IndexError("permutation index out of range")

    grads = [np.empty_like(p) for p in params]
    cdef int P = 2 * L
    cdef double** gp = <double**> malloc(P * sizeof(double*))
    cdef double** pp = <double**> malloc(P * sizeof(double*))
    cdef double** mp = <double**> malloc(P * sizeof(double*))
    cdef double** vp = <double**> malloc(P * sizeof(double*))
    cdef Py_ssize_t* sizes = <Py_ssize_t*> malloc(P * sizeof(Py_ssize_t))
    cdef double** gW = <double**> malloc(L * sizeof(double*))
    cdef double** gb = <double**> malloc(L * sizeof(double*))
    cdef cnp.ndarray arr
    for i in range(P):
        arr = grads[i]
        gp[i] = <double*> cnp.PyArray_DATA(arr)
        arr = params[i]
        pp[i] = <double*> cnp.PyArray_DATA(arr)
        sizes[i] = cnp.PyArray_SIZE(arr)
        arr = m[i]
        mp[i] = <double*> cnp.PyArray_DATA(arr)
        arr = v[i]
        vp[i] = <double*> cnp.PyArray_DATA(arr)
    for i in range(L):
        gW[i] = gp[2 * i]
        gb[i] = gp[2 * i + 1]

    cdef double total = 0.0, loss
    cdef const double* Xp = &Xc[0, 0]
    cdef const double* yp = &yc[0]
    cdef const long long* ip = <const long long*> &pc[0]
    cdef double* ybuf = <double*> malloc(batch_size * sizeof(double))
    _alloc_work(&w, &net, batch_size, n_in)
    with nogil:
        start = 0
        while start < n:
            B = batch_size if start + batch_size <= n else n - start
            _load_batch(&w, Xp, n_in, ip + start, B)
            for r in range(B):
                ybuf[r] = yp[ip[start + r]]
            _forward(&net, &w, B)
            loss = _backward(&net, &w, B, ybuf, loss_kind, gW, gb)
            total += loss * B
            t += 1
            for i in range(P):
                _update(opt, pp[i], gp[i], mp[i], vp[i], sizes[i], t, lr, beta1, beta2, rho, eps)
            start += B
    _free_work(&w, &net)
    free(ybuf)
    free(gp)
    free(pp)
    free(mp)
    free(vp)
    free(sizes)
    free(gW)
    free(gb)
    _free_net(&net)
    return t, total / n
