# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Fused training step for the GIN predictors.

Mirrors the numgrad route in gin.py op for op; the test suite checks the two
against each other.  Row-major everywhere; matrix products go through BLAS.
"""
import numpy as np

from libc.math cimport exp, log, log1p, pow, sqrt
from libc.string cimport memcpy, memset
from scipy.linalg.cython_blas cimport dgemm

cdef enum:
    MAXL = 8

cdef double BN_EPS = 1e-5
cdef double MOMENTUM = 0.1
cdef double SIGMA_FLOOR = 1e-4
cdef double HALF_LOG_2PI = 0.9189385332046727


cdef inline void mm(bint ta, bint tb, int m, int n, int k, double* A, int lda,
                    double* B, int ldb, double beta, double* C, int ldc) noexcept nogil:
    # C[m, n] = op(A)[m, k] @ op(B)[k, n] + beta * C, all row-major
    cdef char ca = b'T' if ta else b'N'
    cdef char cb = b'T' if tb else b'N'
    cdef double one = 1.0
    dgemm(&cb, &ca, &n, &m, &k, &one, B, &ldb, A, &lda, &beta, C, &ldc)


cdef inline double softplus(double x) noexcept nogil:
    if x > 0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


cdef inline double sigmoid(double x) noexcept nogil:
    cdef double e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


cdef extern from "_kernels.h" nogil:
    void npk_aggregate(const double* S, const double* X, double* Z, int G, int N, int F)
    void npk_aggregate_t(const double* S, const double* dZ, double* dX, int G, int N, int F)
    void npk_col_sum(const double* x, double* out, int rows, int cols)
    void npk_mul(double* x, const double* y, int n)
    void npk_act(double* p, const double* bias, double* a, int rows, int cols, int celu)
    void npk_bn_forward(const double* a, double* xhat, double* out, double* inv, double* mean, int rows, int cols,
                        const double* gamma, const double* beta, double* rmean, double* rvar)
    void npk_bn_backward(const double* dout, const double* xhat, const double* inv, const double* gamma,
                         int rows, int cols, double* dgamma, double* dbeta, double* din, const double* dact)
    void npk_pool(const double* h, double* e, int G, int N, int F)
    void npk_unpool(const double* de, double* dh, int G, int N, int F)
    void npk_adam(double* p, const double* g, double* m, double* v, long n, double lr, double b1, double b2,
                  double eps, double wd, double c1, double c2)


cdef class GinKernel:
    cdef int N, V, H, F, L, cap
    cdef bint unc, celu
    cdef Py_ssize_t _np, _nb
    cdef int oW[MAXL]
    cdef int ob[MAXL]
    cdef int og[MAXL]
    cdef int obe[MAXL]
    cdef int bm[MAXL]
    cdef int bv[MAXL]
    cdef int ofW, ofb, ofg, ofbe, o1W, o1b, o2W, o2b, bfm, bfv
    cdef object _ws
    cdef double* X0
    cdef double* S
    cdef double* Z[MAXL]
    cdef double* P[MAXL]
    cdef double* XH[MAXL]
    cdef double* HO[MAXL]
    cdef double* INV[MAXL]
    cdef double* MEAN[MAXL]
    cdef double* MEANF
    cdef double* E
    cdef double* QP
    cdef double* QA
    cdef double* XF
    cdef double* INVF
    cdef double* DM
    cdef double* H1
    cdef double* H2
    cdef double* G1
    cdef double* G2
    cdef double* dE
    cdef double* dQ
    cdef double* dM
    cdef double* dA
    cdef double* dB

    def __init__(self, int n_nodes, int vocab_size, int hidden, int fc, int layers, bint uncertainty, int capacity):
        if layers > MAXL or layers < 1:
            raise ValueError("unsupported layer count")
        self.N = n_nodes
        self.V = vocab_size
        self.H = hidden
        self.F = fc
        self.L = layers
        self.unc = uncertainty
        self.celu = uncertainty
        self.cap = capacity
        cdef int off = 0, boff = 0, l, fin = vocab_size
        for l in range(layers):
            self.oW[l] = off; off += fin * hidden
            self.ob[l] = off; off += hidden
            self.og[l] = off; off += hidden
            self.obe[l] = off; off += hidden
            self.bm[l] = boff; boff += hidden
            self.bv[l] = boff; boff += hidden
            fin = hidden
        self.ofW = off; off += hidden * fc
        self.ofb = off; off += fc
        self.ofg = off; off += fc
        self.ofbe = off; off += fc
        self.bfm = boff; boff += fc
        self.bfv = boff; boff += fc
        self.o1W = off; off += fc
        self.o1b = off; off += 1
        if uncertainty:
            self.o2W = off; off += fc
            self.o2b = off; off += 1
        self._np = off
        self._nb = boff

        cdef int M = capacity * n_nodes
        cdef int W = max(hidden, vocab_size)
        sizes = [M * vocab_size, capacity * n_nodes * n_nodes]
        for l in range(layers):
            sizes += [M * W, M * hidden, M * hidden, M * hidden, hidden, hidden]
        sizes += [capacity * hidden, capacity * fc, capacity * fc, capacity * fc, fc, capacity * fc,
                  capacity, capacity, capacity, capacity,
                  capacity * hidden, capacity * fc, capacity * fc, M * W, M * W, fc]
        offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self._ws = np.zeros(int(offsets[len(sizes)]))
        cdef double[::1] ws = self._ws
        cdef double* base = &ws[0]
        cdef long[::1] offs = offsets
        cdef int k = 0

        self.X0 = base + offs[k]; k += 1
        self.S = base + offs[k]; k += 1
        for l in range(layers):
            self.Z[l] = base + offs[k]; k += 1
            self.P[l] = base + offs[k]; k += 1
            self.XH[l] = base + offs[k]; k += 1
            self.HO[l] = base + offs[k]; k += 1
            self.INV[l] = base + offs[k]; k += 1
            self.MEAN[l] = base + offs[k]; k += 1
        self.E = base + offs[k]; k += 1
        self.QP = base + offs[k]; k += 1
        self.QA = base + offs[k]; k += 1
        self.XF = base + offs[k]; k += 1
        self.INVF = base + offs[k]; k += 1
        self.DM = base + offs[k]; k += 1
        self.H1 = base + offs[k]; k += 1
        self.H2 = base + offs[k]; k += 1
        self.G1 = base + offs[k]; k += 1
        self.G2 = base + offs[k]; k += 1
        self.dE = base + offs[k]; k += 1
        self.dQ = base + offs[k]; k += 1
        self.dM = base + offs[k]; k += 1
        self.dA = base + offs[k]; k += 1
        self.dB = base + offs[k]; k += 1
        self.MEANF = base + offs[k]; k += 1

    @property
    def n_params(self):
        return self._np

    @property
    def n_buffers(self):
        return self._nb

    def loss_grad(self, double[::1] params, double[::1] grad, double[::1] buffers,
                  double[:, :, ::1] X, double[:, :, ::1] S, double[::1] y,
                  long[::1] idx, double[:, ::1] mask):
        """Training-mode loss for rows ``idx`` of (X, S, y); writes ``grad``
        and updates the running statistics in ``buffers``."""
        cdef int G = idx.shape[0]
        if G < 2 or G > self.cap:
            raise ValueError(f"batch of {G} outside [2, {self.cap}]")
        if params.shape[0] != self._np or grad.shape[0] != self._np or buffers.shape[0] != self._nb:
            raise ValueError("flat vector length mismatch")
        if X.shape[1] != self.N or X.shape[2] != self.V or S.shape[1] != self.N or S.shape[2] != self.N:
            raise ValueError("graph array shape mismatch")
        if mask.shape[0] < G or mask.shape[1] != self.F:
            raise ValueError("dropout mask shape mismatch")
        cdef Py_ssize_t i
        for i in range(G):
            if idx[i] < 0 or idx[i] >= X.shape[0]:
                raise IndexError("batch index out of range")
        cdef double loss
        with nogil:
            loss = self._step(&params[0], &grad[0], &buffers[0], &X[0, 0, 0], &S[0, 0, 0], &y[0], &idx[0], &mask[0, 0], G)
        return loss

    cdef double _step(self, double* prm, double* grd, double* buf, double* Xall, double* Sall, double* yall,
                      long* idx, double* mask, int G) noexcept nogil:
        cdef int N = self.N, V = self.V, H = self.H, F = self.F, L = self.L
        cdef int M = G * N, l, g, v, u, j, fin
        cdef double s, loss = 0.0, r, sg, t
        cdef double* Xin
        cdef double* dH
        cdef double* dX
        cdef double* tmp

        for g in range(G):
            memcpy(self.X0 + g * N * V, Xall + idx[g] * N * V, N * V * sizeof(double))
            memcpy(self.S + g * N * N, Sall + idx[g] * N * N, N * N * sizeof(double))

        # GIN layers; dA doubles as scratch for the activations
        Xin = self.X0
        fin = V
        for l in range(L):
            npk_aggregate(self.S, Xin, self.Z[l], G, N, fin)
            mm(False, False, M, H, fin, self.Z[l], fin, prm + self.oW[l], H, 0.0, self.P[l], H)
            # P[l] is overwritten by the activation derivative
            npk_act(self.P[l], prm + self.ob[l], self.dA, M, H, self.celu)
            npk_bn_forward(self.dA, self.XH[l], self.HO[l], self.INV[l], self.MEAN[l], M, H,
                           prm + self.og[l], prm + self.obe[l], buf + self.bm[l], buf + self.bv[l])
            Xin = self.HO[l]
            fin = H

        npk_pool(Xin, self.E, G, N, H)

        # FC block
        mm(False, False, G, F, H, self.E, H, prm + self.ofW, F, 0.0, self.QP, F)
        npk_act(self.QP, prm + self.ofb, self.QA, G, F, self.celu)
        npk_bn_forward(self.QA, self.XF, self.DM, self.INVF, self.MEANF, G, F,
                       prm + self.ofg, prm + self.ofbe, buf + self.bfm, buf + self.bfv)
        npk_mul(self.DM, mask, G * F)

        # heads
        memset(self.dM, 0, G * F * sizeof(double))
        for g in range(G):
            t = prm[self.o1b]
            for j in range(F):
                t += self.DM[g * F + j] * prm[self.o1W + j]
            self.H1[g] = t
        if not self.unc:
            for g in range(G):
                sg = sigmoid(self.H1[g])
                r = sg - yall[idx[g]]
                loss += r * r
                self.G1[g] = 2.0 * r / G * sg * (1.0 - sg)
            loss /= G
        else:
            for g in range(G):
                t = prm[self.o2b]
                for j in range(F):
                    t += self.DM[g * F + j] * prm[self.o2W + j]
                self.H2[g] = t
            for g in range(G):
                s = softplus(self.H2[g]) + SIGMA_FLOOR
                r = yall[idx[g]] - self.H1[g]
                loss += log(s) + r * r / (2.0 * s * s)
                self.G1[g] = -r / (s * s) / G
                self.G2[g] = (1.0 / s - r * r / (s * s * s)) / G * sigmoid(self.H2[g])
            loss = loss / G + HALF_LOG_2PI

        grd[self.o1b] = 0.0
        for j in range(F):
            grd[self.o1W + j] = 0.0
        for g in range(G):
            grd[self.o1b] += self.G1[g]
            for j in range(F):
                grd[self.o1W + j] += self.DM[g * F + j] * self.G1[g]
                self.dM[g * F + j] += self.G1[g] * prm[self.o1W + j]
        if self.unc:
            grd[self.o2b] = 0.0
            for j in range(F):
                grd[self.o2W + j] = 0.0
            for g in range(G):
                grd[self.o2b] += self.G2[g]
                for j in range(F):
                    grd[self.o2W + j] += self.DM[g * F + j] * self.G2[g]
                    self.dM[g * F + j] += self.G2[g] * prm[self.o2W + j]

        # FC backward
        npk_mul(self.dM, mask, G * F)
        npk_bn_backward(self.dM, self.XF, self.INVF, prm + self.ofg, G, F, grd + self.ofg, grd + self.ofbe, self.dQ,
                        self.QP)
        mm(True, False, H, F, G, self.E, H, self.dQ, F, 0.0, grd + self.ofW, F)
        npk_col_sum(self.dQ, grd + self.ofb, G, F)
        mm(False, True, G, H, F, self.dQ, F, prm + self.ofW, F, 0.0, self.dE, H)

        dH = self.dA
        npk_unpool(self.dE, dH, G, N, H)

        # GIN backward, ping-ponging between the dA and dB scratch buffers
        dX = self.dB
        for l in range(L - 1, -1, -1):
            fin = V if l == 0 else H
            npk_bn_backward(dH, self.XH[l], self.INV[l], prm + self.og[l], M, H,
                            grd + self.og[l], grd + self.obe[l], dX, self.P[l])
            mm(True, False, fin, H, M, self.Z[l], fin, dX, H, 0.0, grd + self.oW[l], H)
            npk_col_sum(dX, grd + self.ob[l], M, H)
            if l == 0:
                break
            mm(False, True, M, H, H, dX, H, prm + self.oW[l], H, 0.0, dH, H)
            npk_aggregate_t(self.S, dH, dX, G, N, H)
            tmp = dH
            dH = dX
            dX = tmp
        return loss

    def train_epochs(self, double[::1] params, double[::1] grad, double[::1] buffers,
                     double[:, :, ::1] X, double[:, :, ::1] S, double[::1] y,
                     long[:, ::1] perms, double[:, :, ::1] masks, int batch,
                     double[::1] m, double[::1] v, long t0, double lr, double beta1, double beta2,
                     double eps, double weight_decay, double[::1] losses):
        """Run ``perms.shape[0]`` epochs of minibatch Adam.

        Each row of ``perms`` orders the samples of one epoch; ``masks`` holds
        one dropout row per sample in that order.  A trailing batch of one is
        merged into the previous batch.  Returns the final Adam step count.
        """
        cdef int E = perms.shape[0], n = perms.shape[1]
        if n < 2 or X.shape[0] != n or y.shape[0] != n:
            raise ValueError("need at least two samples and aligned arrays")
        if batch + 1 > self.cap or batch < 2:
            raise ValueError("batch size outside kernel capacity")
        if masks.shape[0] != E or masks.shape[1] != n or masks.shape[2] != self.F or losses.shape[0] < E:
            raise ValueError("epoch plan shape mismatch")
        if params.shape[0] != self._np or grad.shape[0] != self._np or buffers.shape[0] != self._nb:
            raise ValueError("flat vector length mismatch")
        if m.shape[0] != self._np or v.shape[0] != self._np:
            raise ValueError("moment length mismatch")
        if X.shape[1] != self.N or X.shape[2] != self.V or S.shape[0] != n or S.shape[1] != self.N or S.shape[2] != self.N:
            raise ValueError("graph array shape mismatch")
        cdef Py_ssize_t e, i
        for e in range(E):
            for i in range(n):
                if perms[e, i] < 0 or perms[e, i] >= n:
                    raise IndexError("permutation entry out of range")
        cdef long t = t0
        cdef int start, size
        cdef double total
        with nogil:
            for e in range(E):
                total = 0.0
                start = 0
                while start < n:
                    size = batch if n - start > batch else n - start
                    if n - start - size == 1:
                        size += 1
                    total += size * self._step(&params[0], &grad[0], &buffers[0], &X[0, 0, 0], &S[0, 0, 0], &y[0],
                                               &perms[e, start], &masks[e, start, 0], size)
                    t += 1
                    _adam(&params[0], &grad[0], &m[0], &v[0], self._np, t, lr, beta1, beta2, eps, weight_decay)
                    start += size
                losses[e] = total / n
        return t


cdef void _adam(double* p, double* g, double* m, double* v, Py_ssize_t n, long t,
                double lr, double beta1, double beta2, double eps, double weight_decay) noexcept nogil:
    npk_adam(p, g, m, v, n, lr, beta1, beta2, eps, weight_decay,
             1.0 - pow(beta1, <double>t), 1.0 - pow(beta2, <double>t))


def adam_update(double[::1] p, double[::1] g, double[::1] m, double[::1] v, long t,
                double lr, double beta1, double beta2, double eps, double weight_decay):
    """In-place Adam step on flat vectors; same arithmetic as numgrad.adam_step."""
    cdef Py_ssize_t n = p.shape[0]
    if g.shape[0] != n or m.shape[0] != n or v.shape[0] != n:
        raise ValueError("flat vector length mismatch")
    with nogil:
        _adam(&p[0], &g[0], &m[0], &v[0], n, t, lr, beta1, beta2, eps, weight_decay)
