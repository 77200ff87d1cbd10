# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled normal-equation assembly, same contract as ``_assemble_py``."""
import numpy as np


def assemble(const double[:, ::1] Xs, const double[::1] ys,
             const double[:, ::1] Xt, const double[::1] yt,
             const double[:, ::1] mus, const double[:, ::1] mut,
             double wt, double lam, double gam):
    cdef Py_ssize_t n = Xs.shape[0], d = Xs.shape[1]
    cdef Py_ssize_t m = Xt.shape[0], C = mus.shape[1]
    cdef Py_ssize_t i, j, k, c
    cdef double total = <double>(n + m)
    cdef double yi, w, xij, yty, ymean, s

    xmean_arr = np.zeros(d)
    A_arr = np.zeros((d, d))
    G_arr = np.zeros((d, d))
    b_arr = np.zeros(d)
    qy_arr = np.zeros(d)
    src_sum_arr = np.zeros(d)
    tgt_sum_arr = np.zeros(d)
    Q_arr = np.zeros((d, C if C > 0 else 1))
    xc_arr = np.empty(d)
    cdef double[::1] xmean = xmean_arr
    cdef double[:, ::1] A = A_arr
    cdef double[:, ::1] G = G_arr
    cdef double[::1] b = b_arr
    cdef double[::1] qy = qy_arr
    cdef double[::1] src_sum = src_sum_arr
    cdef double[::1] tgt_sum = tgt_sum_arr
    cdef double[:, ::1] Q = Q_arr
    cdef double[::1] xc = xc_arr
    cdef bint use_gamma = gam > 0
    cdef bint use_mmd = m > 0 and lam > 0

    # pass 1: column and label means
    ymean = 0.0
    for i in range(n):
        ymean += ys[i]
        for j in range(d):
            xmean[j] += Xs[i, j]
    for i in range(m):
        ymean += yt[i]
        for j in range(d):
            xmean[j] += Xt[i, j]
    ymean /= total
    for j in range(d):
        xmean[j] /= total

    # pass 2: upper-triangular Gram sums, source rows into A, target rows into G
    yty = 0.0
    for i in range(n + m):
        if i < n:
            yi = ys[i] - ymean
            w = 1.0
            for j in range(d):
                xc[j] = Xs[i, j] - xmean[j]
        else:
            yi = yt[i - n] - ymean
            w = wt
            for j in range(d):
                xc[j] = Xt[i - n, j] - xmean[j]
        yty += yi * yi
        for j in range(d):
            xij = xc[j]
            b[j] += w * yi * xij
            qy[j] += yi * xij
        if i < n:
            for j in range(d):
                xij = xc[j]
                for k in range(j, d):
                    A[j, k] += xij * xc[k]
        else:
            for j in range(d):
                xij = xc[j]
                for k in range(j, d):
                    G[j, k] += xij * xc[k]
        if use_mmd:
            if i < n:
                for j in range(d):
                    src_sum[j] += xc[j]
                for c in range(C):
                    s = mus[i, c]
                    if s != 0.0:
                        for j in range(d):
                            Q[j, c] += s * xc[j]
            else:
                for j in range(d):
                    tgt_sum[j] += xc[j]
                for c in range(C):
                    s = mut[i - n, c]
                    if s != 0.0:
                        for j in range(d):
                            Q[j, c] -= s * xc[j]

    # A = G_src + wt * G_tgt, G = G_src + G_tgt
    for j in range(d):
        for k in range(j, d):
            s = A[j, k]
            A[j, k] = s + wt * G[j, k]
            G[j, k] = s + G[j, k]

    if use_mmd:
        for j in range(d):
            src_sum[j] = src_sum[j] / n - tgt_sum[j] / m
        for j in range(d):
            for k in range(j, d):
                s = src_sum[j] * src_sum[k]
                for c in range(C):
                    s += Q[j, c] * Q[k, c]
                A[j, k] += lam * s
    if use_gamma and yty > 0:
        for j in range(d):
            for k in range(j, d):
                A[j, k] += gam / yty * (G[j, k] - qy[j] * qy[k])
    for j in range(d):
        for k in range(j + 1, d):
            A[k, j] = A[j, k]
    return A_arr, b_arr, xmean_arr, ymean, yty
