"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``.

Signatures, return values and raised exceptions match the compiled module so
:mod:`neurodyn.kernels` can swap them freely.
"""

from __future__ import annotations

import numpy as np


def bptt_shallow(A, W2, W3, b0, b1, B, P, Kr, X, alpha, interval, clipped):
    Bt, T, N = X.shape
    M, H = W2.shape
    S = T - 1
    norm = float(S * N * Bt)
    scale = 2.0 / norm

    Z = np.zeros((T, Bt, M))
    ZN = np.empty((S, Bt, M))
    PHI = np.empty((S, Bt, H))
    DA = np.empty((S, Bt, H))
    DC = np.zeros((S, Bt, H))
    E = np.empty((S, Bt, N))
    Z[0] = X[:, 0] @ Kr.T
    for t in range(1, T):
        pre = Z[t - 1] @ W3.T
        act = pre + b1
        DA[t - 1] = act > 0
        phi = np.maximum(act, 0.0)
        if clipped:
            DC[t - 1] = pre > 0
            phi = phi - np.maximum(pre, 0.0)
        PHI[t - 1] = phi
        zn = A * Z[t - 1] + b0 + phi @ W2.T
        ZN[t - 1] = zn
        E[t - 1] = zn @ B.T - X[:, t]
        if not np.all(np.isfinite(zn)):
            raise FloatingPointError("non-finite latent state", t)
        if alpha != 0.0 and t % interval == 0:
            Z[t] = zn - alpha * (zn @ P) + alpha * (X[:, t] @ Kr.T)
        else:
            Z[t] = zn

    GZN = np.empty((S, Bt, M))
    GPRE = np.empty((S, Bt, H))
    gb1 = np.zeros(H)
    gz = np.zeros((Bt, M))
    for t in range(T - 1, 0, -1):
        if alpha != 0.0 and t % interval == 0:
            gz = gz * (1.0 - alpha)
        gzn = gz + scale * (E[t - 1] @ B)
        GZN[t - 1] = gzn
        gphi = gzn @ W2
        ga = gphi * DA[t - 1]
        gb1 += ga.sum(axis=0)
        gpre = ga - gphi * DC[t - 1]
        GPRE[t - 1] = gpre
        gz = gzn * A + gpre @ W3

    gzn_f = GZN.reshape(-1, M)
    gW2 = gzn_f.T @ PHI.reshape(-1, H)
    gW3 = GPRE.reshape(-1, H).T @ Z[:S].reshape(-1, M)
    gB = scale * (E.reshape(-1, N).T @ ZN.reshape(-1, M))
    gA = (GZN * Z[:S]).sum(axis=(0, 1))
    gb0 = GZN.sum(axis=(0, 1))
    return float(np.sum(E * E) / norm), gA, gW2, gW3, gb0, gb1, gB


def lyapunov_shallow(A, W2, W3, b0, b1, z0, T, burn_in, qr_interval, clipped):
    M = A.shape[0]
    sums = np.zeros(M)
    z = np.array(z0, dtype=np.float64, copy=True)
    Q = np.eye(M)
    since = 0
    for t in range(T):
        pre = W3 @ z
        act = pre + b1
        d = (act > 0).astype(np.float64)
        phi = np.maximum(act, 0.0)
        if clipped:
            d -= pre > 0
            phi -= np.maximum(pre, 0.0)
        Y = A[:, None] * Q + W2 @ (d[:, None] * (W3 @ Q))
        z = A * z + W2 @ phi + b0
        if not np.all(np.isfinite(z)):
            raise FloatingPointError("non-finite latent state", t + 1)
        since += 1
        if t < burn_in or since >= qr_interval or t == T - 1:
            Q, R = np.linalg.qr(Y)
            r = np.diag(R)
            if np.any(r == 0) or not np.all(np.isfinite(r)):
                raise ZeroDivisionError("tangent frame collapsed", t + 1)
            Q = Q * np.sign(r)
            if t >= burn_in:
                sums += np.log(np.abs(r))
            since = 0
        else:
            Q = Y
    return sums, z
