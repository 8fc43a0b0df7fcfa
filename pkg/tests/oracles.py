"""Independent reference implementations used as test oracles.

Everything here is deliberately naive (explicit loops, dense algebra) and
shares no code with the package.
"""

import numpy as np


def naive_stft(x, window, hop):
    """O(N^2) DFT analysis on the zero-padded circle (window-start phases)."""
    n = len(window)
    L = len(x)
    total = 2 * n + hop * int(np.ceil(L / hop))
    xp = np.zeros(total)
    xp[n:n + L] = x
    T = total // hop
    X = np.zeros((n // 2 + 1, T), dtype=complex)
    for t in range(T):
        for f in range(n // 2 + 1):
            acc = 0.0 + 0.0j
            for k in range(n):
                acc += window[k] * xp[(t * hop + k) % total] * np.exp(-2j * np.pi * f * k / n)
            X[f, t] = acc
    return X


def dense_ar_posterior(a, V, sigma2, y):
    """Exact joint complex-Gaussian conditioning for stacked AR(p) sources.

    One frequency band:  x_k(t) = sum_p a[k][p-1] x_k(t-p) + b_k(t) with
    b_k(t) ~ CN(0, V[k][t]), x_k(t<=0) = 0, observed y(t) = sum_k x_k(t) + n,
    n ~ CN(0, sigma2).  Builds the KT-dimensional joint covariance through the
    innovations map and conditions densely.

    Parameters are plain lists/arrays: ``a[k]`` iterable of AR coefficients,
    ``V[k][t]`` innovation variances, ``y`` length-T complex observations.

    Returns (means (K,T), second_moments (K,T), lag1 (K,T), loglik) where
    lag1[k, t] = E[x_k(t) conj(x_k(t-1)) | y] and lag1[:, 0] = 0.
    """
    K = len(a)
    T = len(y)
    D = K * T

    # innovations map: x = Lmat b (stacked source-major: index k*T + t)
    Lmat = np.zeros((D, D), dtype=complex)
    for k in range(K):
        coeff = np.asarray(a[k], dtype=complex)
        p = len(coeff)
        # impulse response of the AR recursion
        imp = np.zeros(T, dtype=complex)
        imp[0] = 1.0
        for t in range(1, T):
            for j in range(1, min(p, t) + 1):
                imp[t] += coeff[j - 1] * imp[t - j]
        for t in range(T):
            for s in range(t + 1):
                Lmat[k * T + t, k * T + s] = imp[t - s]

    Vdiag = np.concatenate([np.asarray(V[k], dtype=float) for k in range(K)])
    Sx = Lmat @ np.diag(Vdiag).astype(complex) @ Lmat.conj().T

    # observation picks out sum over sources at each time
    C = np.zeros((T, D))
    for k in range(K):
        for t in range(T):
            C[t, k * T + t] = 1.0

    Sy = C @ Sx @ C.T + sigma2 * np.eye(T)
    G = Sx @ C.T @ np.linalg.inv(Sy)
    mean_vec = G @ y
    cov = Sx - G @ C @ Sx

    sign, logdet = np.linalg.slogdet(np.pi * Sy)
    loglik = float((-logdet - y.conj() @ np.linalg.solve(Sy, y)).real)

    means = mean_vec.reshape(K, T)
    second = np.abs(means) ** 2 + np.diag(cov).real.reshape(K, T)
    lag1 = np.zeros((K, T), dtype=complex)
    for k in range(K):
        for t in range(1, T):
            i, j = k * T + t, k * T + t - 1
            lag1[k, t] = means[k, t] * np.conj(means[k, t - 1]) + cov[i, j]
    return means, second, lag1, loglik
