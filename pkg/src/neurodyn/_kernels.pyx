# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: shallow-PLRNN GTF backprop and the tangent-space QR loop.

All arrays are C-contiguous float64. Matrix products go through BLAS dgemm
with row-major operands; see ``_mm``.
"""

import threading

import numpy as np
cimport numpy as cnp
from libc.math cimport log, sqrt, isfinite
from libc.string cimport memcpy, memset
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

_local = threading.local()


def _workspace(key, shapes):
    # Per-thread scratch buffers reused across calls of equal shape; avoids
    # page-faulting fresh multi-hundred-kB arrays on every batch.
    cache = getattr(_local, "ws", None)
    if cache is None or cache[0] != key:
        bufs = [np.empty(shp, dtype=dt) for shp, dt in shapes]
        cache = _local.ws = (key, bufs)
    return cache[1]


cdef inline void _mm(bint ta, bint tb, int m, int n, int k, double alpha,
                     const double* a, int lda, const double* b, int ldb,
                     double beta, double* c, int ldc) noexcept nogil:
    # Row-major C(m x n) = alpha * op(A) @ op(B) + beta * C.
    # BLAS sees the transposed problem C^T = op(B)^T op(A)^T in column-major order.
    cdef char tra = b'T' if ta else b'N'
    cdef char trb = b'T' if tb else b'N'
    dgemm(&trb, &tra, &n, &m, &k, &alpha, <double*>b, &ldb, <double*>a, &lda, &beta, c, &ldc)


def bptt_shallow(const double[::1] A, const double[:, ::1] W2, const double[:, ::1] W3,
                 const double[::1] b0, const double[::1] b1, const double[:, ::1] B,
                 const double[:, ::1] P, const double[:, ::1] Kr, const double[:, :, ::1] X,
                 double alpha, int interval, bint clipped):
    """Forced forward pass plus reverse sweep for a batch X of shape (Bt, T, N).

    Returns ``(mse, gA, gW2, gW3, gb0, gb1, gB)`` or raises FloatingPointError
    with the offending step in ``args[1]``.
    """
    cdef int Bt = X.shape[0], T = X.shape[1], N = X.shape[2]
    cdef int M = A.shape[0], H = W2.shape[1]
    cdef int S = T - 1
    cdef int BM = Bt * M, BH = Bt * H
    cdef int t, i, j, r, k, bad = -1
    cdef double norm = <double>S * N * Bt
    cdef double scale = 2.0 / norm
    cdef double v, pre, acc, sse = 0.0
    cdef bint forced

    f8, u1 = np.float64, np.uint8
    Z_, ZN_, PHI_, DA_, DC_, E_, GZN_, GPRE_, GZ_, GPHI_, KX_ = _workspace(
        (Bt, T, N, M, H),
        [((T, Bt, M), f8), ((S, Bt, M), f8), ((S, Bt, H), f8), ((S, Bt, H), u1),
         ((S, Bt, H), u1), ((S, Bt, N), f8), ((S, Bt, M), f8), ((S, Bt, H), f8),
         ((Bt, M), f8), ((Bt, H), f8), ((Bt, M), f8)])
    GZ_.fill(0.0)
    gA_ = np.zeros(M)
    gb0_ = np.zeros(M)
    gb1_ = np.zeros(H)
    gW2_ = np.zeros((M, H))
    gW3_ = np.zeros((H, M))
    gB_ = np.zeros((N, M))

    cdef double[:, :, ::1] Zv = Z_, ZNv = ZN_, PHIv = PHI_, Ev = E_
    cdef unsigned char[:, :, ::1] DAv = DA_, DCv = DC_
    cdef double[:, :, ::1] GZNv = GZN_, GPREv = GPRE_
    cdef double[:, ::1] GZv = GZ_, GPHIv = GPHI_, KXv = KX_
    cdef double[::1] gAv = gA_, gb0v = gb0_, gb1v = gb1_
    cdef double[:, ::1] gW2v = gW2_, gW3v = gW3_, gBv = gB_

    cdef double* Z = &Zv[0, 0, 0]
    cdef double* ZN = &ZNv[0, 0, 0]
    cdef double* PHI = &PHIv[0, 0, 0]
    cdef unsigned char* DA = &DAv[0, 0, 0]
    cdef unsigned char* DC = &DCv[0, 0, 0]
    cdef double* E = &Ev[0, 0, 0]
    cdef double* GZN = &GZNv[0, 0, 0]
    cdef double* GPRE = &GPREv[0, 0, 0]
    cdef double* GZ = &GZv[0, 0]
    cdef double* GPHI = &GPHIv[0, 0]
    cdef double* KX = &KXv[0, 0]
    cdef double* pA = &A[0]
    cdef double* pb0 = &b0[0]
    cdef double* pb1 = &b1[0]
    cdef double* pB = &B[0, 0]
    cdef double* pP = &P[0, 0]
    cdef double* pKr = &Kr[0, 0]
    cdef double* pX = &X[0, 0, 0]
    cdef double *zin, *zn, *ph, *e, *gzn, *gpre, *gph
    cdef unsigned char *da, *dc
    cdef double* pgb1 = &gb1v[0]
    cdef int TN = T * N

    with nogil:
        for t in range(0, T):
            # KX holds Kr x_t for the current t; used for z0 and forced steps
            if t == 0 or (alpha != 0.0 and t % interval == 0):
                for r in range(Bt):
                    for i in range(M):
                        acc = 0.0
                        for k in range(N):
                            acc = acc + pKr[i * N + k] * pX[r * TN + t * N + k]
                        KX[r * M + i] = acc
            if t == 0:
                memcpy(Z, KX, BM * sizeof(double))
                continue
            zin = Z + (t - 1) * BM
            zn = ZN + (t - 1) * BM
            ph = PHI + (t - 1) * BH
            da = DA + (t - 1) * BH
            dc = DC + (t - 1) * BH
            e = E + (t - 1) * Bt * N
            _mm(False, True, Bt, H, M, 1.0, zin, M, &W3[0, 0], M, 0.0, ph, H)
            for r in range(Bt):
                for j in range(H):
                    k = r * H + j
                    pre = ph[k]
                    v = pre + pb1[j]
                    if v > 0:
                        da[k] = 1
                    else:
                        da[k] = 0
                        v = 0.0
                    if clipped and pre > 0:
                        dc[k] = 1
                        v = v - pre
                    else:
                        dc[k] = 0
                    ph[k] = v
            for r in range(Bt):
                for i in range(M):
                    zn[r * M + i] = pA[i] * zin[r * M + i] + pb0[i]
            _mm(False, True, Bt, M, H, 1.0, ph, H, &W2[0, 0], H, 1.0, zn, M)
            for r in range(Bt):
                for k in range(N):
                    acc = -pX[r * TN + t * N + k]
                    for i in range(M):
                        acc = acc + pB[k * M + i] * zn[r * M + i]
                    e[r * N + k] = acc
                    sse += acc * acc
            for k in range(BM):
                if not isfinite(zn[k]):
                    bad = t
            if bad >= 0:
                break
            memcpy(Z + t * BM, zn, BM * sizeof(double))
            if alpha != 0.0 and t % interval == 0:
                # z <- z - alpha P z + alpha Kr x
                _mm(False, False, Bt, M, M, -alpha, zn, M, pP, M, 1.0, Z + t * BM, M)
                for k in range(BM):
                    Z[t * BM + k] += alpha * KX[k]

    if bad >= 0:
        raise FloatingPointError("non-finite latent state", bad)

    with nogil:
        for t in range(T - 1, 0, -1):
            gzn = GZN + (t - 1) * BM
            gpre = GPRE + (t - 1) * BH
            da = DA + (t - 1) * BH
            dc = DC + (t - 1) * BH
            e = E + (t - 1) * Bt * N
            forced = alpha != 0.0 and t % interval == 0
            v = (1.0 - alpha) if forced else 1.0
            for r in range(Bt):
                for i in range(M):
                    acc = v * GZ[r * M + i]
                    for k in range(N):
                        acc = acc + scale * e[r * N + k] * pB[k * M + i]
                    gzn[r * M + i] = acc
            _mm(False, False, Bt, H, M, 1.0, gzn, M, &W2[0, 0], H, 0.0, GPHI, H)
            for r in range(Bt):
                gph = GPHI + r * H
                for j in range(H):
                    k = r * H + j
                    v = gph[j] * da[k]
                    pgb1[j] += v
                    gpre[k] = v - gph[j] * dc[k]
            for r in range(Bt):
                for i in range(M):
                    GZ[r * M + i] = gzn[r * M + i] * pA[i]
            _mm(False, False, Bt, M, H, 1.0, gpre, H, &W3[0, 0], M, 1.0, GZ, M)

        # weight gradients as single products over all (step, batch) rows
        _mm(True, False, M, H, S * Bt, 1.0, GZN, M, PHI, H, 0.0, &gW2v[0, 0], H)
        _mm(True, False, H, M, S * Bt, 1.0, GPRE, H, Z, M, 0.0, &gW3v[0, 0], M)
        _mm(True, False, N, M, S * Bt, scale, E, N, ZN, M, 0.0, &gBv[0, 0], M)
        for k in range(S * Bt):
            for i in range(M):
                gAv[i] += GZN[k * M + i] * Z[k * M + i]
                gb0v[i] += GZN[k * M + i]

    return sse / norm, gA_, gW2_, gW3_, gb0_, gb1_, gB_


cdef int _mgs(double* Y, double* R, int M) noexcept nogil:
    # In-place modified Gram-Schmidt with one re-orthogonalization pass on the
    # columns of row-major Y (M x M). Writes the positive diagonal of R.
    cdef int i, j, k, p
    cdef double d, nrm
    for j in range(M):
        for p in range(2):
            for k in range(j):
                d = 0.0
                for i in range(M):
                    d += Y[i * M + k] * Y[i * M + j]
                for i in range(M):
                    Y[i * M + j] -= d * Y[i * M + k]
            nrm = 0.0
            for i in range(M):
                nrm += Y[i * M + j] * Y[i * M + j]
            nrm = sqrt(nrm)
            if p == 0:
                R[j] = nrm
            else:
                R[j] *= nrm
            if nrm == 0.0 or not isfinite(nrm):
                return j + 1
            for i in range(M):
                Y[i * M + j] /= nrm
    return 0


def lyapunov_shallow(const double[::1] A, const double[:, ::1] W2, const double[:, ::1] W3,
                     const double[::1] b0, const double[::1] b1, const double[::1] z0,
                     long T, long burn_in, int qr_interval, bint clipped):
    """Accumulated log stretch factors of the tangent frame along a trajectory.

    Returns ``(sums, z_final)``. Raises FloatingPointError(msg, step) on a
    non-finite state and ZeroDivisionError(msg, step) on a collapsed frame.
    """
    cdef int M = A.shape[0], H = W2.shape[1]
    cdef long t
    cdef int i, j, status = 0, since = 0
    cdef long bad = -1
    cdef double v, pre
    sums_ = np.zeros(M)
    z_ = np.array(z0, dtype=np.float64, copy=True)
    zn_ = np.empty(M)
    Q_ = np.eye(M)
    Y_ = np.empty((M, M))
    T1_ = np.empty((H, M))
    D_ = np.empty(H)
    PHI_ = np.empty(H)
    R_ = np.empty(M)
    cdef double[::1] sums = sums_, z = z_, zn = zn_, D = D_, PHI = PHI_, R = R_
    cdef double[:, ::1] Q = Q_, Y = Y_, T1 = T1_

    with nogil:
        for t in range(T):
            # pre-activations, derivative mask and hidden output at z_t
            _mm(False, False, H, 1, M, 1.0, &W3[0, 0], M, &z[0], 1, 0.0, &PHI[0], 1)
            for j in range(H):
                pre = PHI[j]
                v = pre + b1[j]
                D[j] = 1.0 if v > 0 else 0.0
                if v < 0:
                    v = 0.0
                if clipped and pre > 0:
                    D[j] -= 1.0
                    v -= pre
                PHI[j] = v
            # Y = J Q = diag(A) Q + W2 (D * (W3 Q))
            _mm(False, False, H, M, M, 1.0, &W3[0, 0], M, &Q[0, 0], M, 0.0, &T1[0, 0], M)
            for j in range(H):
                for i in range(M):
                    T1[j, i] *= D[j]
            for i in range(M):
                for j in range(M):
                    Y[i, j] = A[i] * Q[i, j]
            _mm(False, False, M, M, H, 1.0, &W2[0, 0], H, &T1[0, 0], M, 1.0, &Y[0, 0], M)
            # advance the state
            for i in range(M):
                zn[i] = A[i] * z[i] + b0[i]
            _mm(False, False, M, 1, H, 1.0, &W2[0, 0], H, &PHI[0], 1, 1.0, &zn[0], 1)
            for i in range(M):
                if not isfinite(zn[i]):
                    bad = t + 1
                z[i] = zn[i]
            if bad >= 0:
                break
            since += 1
            if t < burn_in or since >= qr_interval or t == T - 1:
                status = _mgs(&Y[0, 0], &R[0], M)
                if status:
                    bad = t + 1
                    break
                if t >= burn_in:
                    for i in range(M):
                        sums[i] += log(R[i])
                since = 0
            memcpy(&Q[0, 0], &Y[0, 0], M * M * sizeof(double))

    if bad >= 0:
        if status:
            raise ZeroDivisionError("tangent frame collapsed", bad)
        raise FloatingPointError("non-finite latent state", bad)
    return sums_, z_
