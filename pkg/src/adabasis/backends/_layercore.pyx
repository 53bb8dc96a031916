# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled layer-sweep kernels.

Same contract as ``reference``: ``forward`` / ``backward`` over packed
parameter arrays.  Matrix products go through BLAS dgemm; element-wise
activation, skip and cotangent work runs in typed loops.
"""

from libc.math cimport tanh as ctanh

import numpy as np

cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

KIND_PLAIN = 0
KIND_RESNET = 1
KIND_RESNET_ALL = 2
ACT_RELU = 0
ACT_TANH = 1


cdef inline bint _has_skip(int kind, int layer) noexcept nogil:
    return (kind == 1 and layer >= 2) or kind == 2


cdef void _gemm_rm(char ta, char tb, int M, int N, int K, double alpha,
                   const double* A, int lda, const double* B, int ldb,
                   double beta, double* C, int ldc) noexcept nogil:
    # Row-major C(M,N) = alpha * opA(A) @ opB(B) + beta * C, expressed as the
    # transposed column-major product with swapped operands.
    if M == 0 or N == 0:
        return
    if K == 0:
        if beta == 0.0:
            for i in range(M * N):
                C[i] = 0.0
        elif beta != 1.0:
            for i in range(M * N):
                C[i] *= beta
        return
    dgemm(&tb, &ta, &N, &M, &K, &alpha, <double*> B, &ldb, <double*> A, &lda,
          &beta, C, &ldc)


cdef inline double _act_of(int act, double z) noexcept nogil:
    if act == 0:
        return z if z > 0.0 else 0.0
    return ctanh(z)


cdef inline double _dact_of(int act, double s) noexcept nogil:
    # Derivative from the post-activation value; ReLU' is 0 at the kink.
    if act == 0:
        return 1.0 if s > 0.0 else 0.0
    return 1.0 - s * s


def forward(int kind, int act, double[:, ::1] W1, double[:, :, ::1] Wr,
            double[:, ::1] b, double[:, ::1] X, bint need_jac, bint need_cache):
    cdef int N = X.shape[0]
    cdef int d = X.shape[1]
    cdef int w = W1.shape[0]
    cdef int L = b.shape[0]
    cdef int layer, j, i, c, din
    cdef double z

    S_arr = np.empty((L, N, w)) if need_cache else None
    H_arr = np.empty((L, N, w)) if need_cache else None
    J_arr = np.empty((L, d, N, w)) if (need_cache and need_jac) else None
    cdef double[:, :, ::1] S = S_arr if need_cache else None
    cdef double[:, :, ::1] H = H_arr if need_cache else None
    cdef double[:, :, :, ::1] J = J_arr if J_arr is not None else None

    # Scratch for the uncached path (ping-pong layer outputs) and the
    # pre-activation product.
    cdef double[:, ::1] Z = np.empty((N, w))
    cdef double[:, ::1] Sa = None
    cdef double[:, ::1] Ha = None
    cdef double[:, ::1] Hb = None
    if not need_cache:
        Sa = np.empty((N, w))
        Ha = np.empty((N, w))
        Hb = np.empty((N, w))

    cdef double[:, :, ::1] Ja = None
    cdef double[:, :, ::1] Jb = None
    cdef double[:, :, ::1] Abuf = None
    if need_jac:
        Abuf = np.empty((d, N, w))
        if not need_cache:
            Ja = np.empty((d, N, w))
            Jb = np.empty((d, N, w))

    cdef double[:, ::1] cur = X
    cdef double[:, ::1] Sl
    cdef double[:, ::1] Hl
    cdef double[:, :, ::1] jac_prev = None
    cdef double[:, :, ::1] jac_new
    cdef double[:, ::1] W
    cdef bint skip
    cdef double dv

    for layer in range(1, L + 1):
        din = d if layer == 1 else w
        W = W1 if layer == 1 else Wr[layer - 2]
        skip = _has_skip(kind, layer)
        _gemm_rm(b'N', b'T', N, w, din, 1.0, &cur[0, 0], din, &W[0, 0], din,
                 0.0, &Z[0, 0], w)
        if need_cache:
            Sl = S[layer - 1]
            Hl = H[layer - 1]
        else:
            Sl = Sa
            Hl = Ha if (layer % 2 == 1) else Hb
        for j in range(N):
            for i in range(w):
                z = _act_of(act, Z[j, i] + b[layer - 1, i])
                Sl[j, i] = z
                Hl[j, i] = z + cur[j, i] if skip else z

        if need_jac:
            jac_new = J[layer - 1] if need_cache else (Ja if (layer % 2 == 1) else Jb)
            if layer == 1:
                for c in range(d):
                    for j in range(N):
                        for i in range(w):
                            jac_new[c, j, i] = _dact_of(act, Sl[j, i]) * W1[i, c]
                if skip:
                    for c in range(d):
                        for j in range(N):
                            jac_new[c, j, c] += 1.0
            else:
                _gemm_rm(b'N', b'T', d * N, w, w, 1.0, &jac_prev[0, 0, 0], w,
                         &W[0, 0], w, 0.0, &Abuf[0, 0, 0], w)
                if skip:
                    for c in range(d):
                        for j in range(N):
                            for i in range(w):
                                jac_new[c, j, i] = (
                                    _dact_of(act, Sl[j, i]) * Abuf[c, j, i]
                                    + jac_prev[c, j, i]
                                )
                else:
                    for c in range(d):
                        for j in range(N):
                            for i in range(w):
                                jac_new[c, j, i] = _dact_of(act, Sl[j, i]) * Abuf[c, j, i]
            jac_prev = jac_new
        cur = Hl

    phi = np.asarray(cur).copy() if not need_cache else H_arr[L - 1].copy()
    if need_jac and not need_cache:
        jac_out = np.asarray(jac_prev).copy()
        return phi, None, None, jac_out
    return phi, S_arr, H_arr, J_arr


def backward(int kind, int act, double[:, ::1] W1, double[:, :, ::1] Wr,
             double[:, ::1] X, double[:, :, ::1] S, double[:, :, ::1] H,
             Jobj, double[:, ::1] Gphi, Gjacobj):
    cdef int N = X.shape[0]
    cdef int d = X.shape[1]
    cdef int w = W1.shape[0]
    cdef int L = S.shape[0]
    cdef int layer, li, j, i, c
    cdef bint with_jac = Gjacobj is not None
    cdef double[:, :, :, ::1] J = Jobj if with_jac else None
    cdef double dv, acc

    dW1_arr = np.zeros((w, d))
    dWr_arr = np.zeros((max(L - 1, 0), w, w))
    db_arr = np.zeros((L, w))
    cdef double[:, ::1] dW1 = dW1_arr
    cdef double[:, :, ::1] dWr = dWr_arr
    cdef double[:, ::1] db = db_arr

    cdef double[:, ::1] Xbar = np.array(Gphi, dtype=np.float64, copy=True)
    cdef double[:, ::1] Xbar2 = np.empty((N, w))
    cdef double[:, ::1] Zbar = np.empty((N, w))
    cdef double[:, ::1] tmp2
    cdef double[:, :, ::1] Jbar = None
    cdef double[:, :, ::1] Jbar2 = None
    cdef double[:, :, ::1] Abuf = None
    cdef double[:, :, ::1] Abar = None
    cdef double[:, :, ::1] tmp3
    if with_jac:
        Jbar = np.array(Gjacobj, dtype=np.float64, copy=True)
        Jbar2 = np.empty((d, N, w))
        Abuf = np.empty((d, N, w))
        Abar = np.empty((d, N, w))

    cdef double[:, ::1] Sl
    cdef double[:, ::1] Xl
    cdef double[:, ::1] W
    cdef double[:, :, ::1] Jprev
    cdef bint skip

    for layer in range(L, 0, -1):
        li = layer - 1
        Sl = S[li]
        skip = _has_skip(kind, layer)

        if with_jac:
            if layer == 1:
                for c in range(d):
                    for j in range(N):
                        for i in range(w):
                            Abuf[c, j, i] = W1[i, c]
            else:
                Jprev = J[li - 1]
                W = Wr[li - 1]
                _gemm_rm(b'N', b'T', d * N, w, w, 1.0, &Jprev[0, 0, 0], w,
                         &W[0, 0], w, 0.0, &Abuf[0, 0, 0], w)
            if act == 1:
                for j in range(N):
                    for i in range(w):
                        dv = _dact_of(act, Sl[j, i])
                        acc = 0.0
                        for c in range(d):
                            acc += Jbar[c, j, i] * Abuf[c, j, i]
                        Zbar[j, i] = Xbar[j, i] * dv - 2.0 * Sl[j, i] * dv * acc
            else:
                for j in range(N):
                    for i in range(w):
                        Zbar[j, i] = Xbar[j, i] * _dact_of(act, Sl[j, i])
            for c in range(d):
                for j in range(N):
                    for i in range(w):
                        Abar[c, j, i] = Jbar[c, j, i] * _dact_of(act, Sl[j, i])
        else:
            for j in range(N):
                for i in range(w):
                    Zbar[j, i] = Xbar[j, i] * _dact_of(act, Sl[j, i])

        for j in range(N):
            for i in range(w):
                db[li, i] += Zbar[j, i]

        if layer >= 2:
            Xl = H[li - 1]
            W = Wr[li - 1]
            _gemm_rm(b'T', b'N', w, w, N, 1.0, &Zbar[0, 0], w, &Xl[0, 0], w,
                     1.0, &dWr[li - 1, 0, 0], w)
            if with_jac:
                Jprev = J[li - 1]
                _gemm_rm(b'T', b'N', w, w, d * N, 1.0, &Abar[0, 0, 0], w,
                         &Jprev[0, 0, 0], w, 1.0, &dWr[li - 1, 0, 0], w)
                _gemm_rm(b'N', b'N', d * N, w, w, 1.0, &Abar[0, 0, 0], w,
                         &W[0, 0], w, 0.0, &Jbar2[0, 0, 0], w)
                if skip:
                    for c in range(d):
                        for j in range(N):
                            for i in range(w):
                                Jbar2[c, j, i] += Jbar[c, j, i]
                tmp3 = Jbar
                Jbar = Jbar2
                Jbar2 = tmp3
            _gemm_rm(b'N', b'N', N, w, w, 1.0, &Zbar[0, 0], w, &W[0, 0], w,
                     0.0, &Xbar2[0, 0], w)
            if skip:
                for j in range(N):
                    for i in range(w):
                        Xbar2[j, i] += Xbar[j, i]
            tmp2 = Xbar
            Xbar = Xbar2
            Xbar2 = tmp2
        else:
            _gemm_rm(b'T', b'N', w, d, N, 1.0, &Zbar[0, 0], w, &X[0, 0], d,
                     1.0, &dW1[0, 0], d)
            if with_jac:
                for c in range(d):
                    for j in range(N):
                        for i in range(w):
                            dW1[i, c] += Abar[c, j, i]

    return dW1_arr, dWr_arr, db_arr
