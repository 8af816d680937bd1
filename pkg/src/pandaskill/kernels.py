"""Hot numeric kernels, each with a numba and a pure-numpy implementation.

The public names (``pl_team_terms``, ``logistic_pgd``) resolve to the numba
versions unless ``PANDASKILL_DISABLE_NUMBA`` is set. Both implementations are
importable by their private names so the benchmark and the tests can compare
them directly.
"""
import math

import numpy as np

from ._accel import USE_NUMBA, njit

__all__ = ["pl_team_terms", "logistic_pgd", "USE_NUMBA"]


# --------------------------------------------------------------------------
# Plackett-Luce team terms
# --------------------------------------------------------------------------

def _pl_team_terms_numpy(mu, sigma_sq, rank, beta_sq):
    k = mu.shape[0]
    c = math.sqrt(float(np.sum(sigma_sq)) + k * beta_sq)
    # exp(mu/c) shifted by the max; every use below is a ratio
    e = np.exp((mu - mu.max()) / c)
    worse_or_equal = rank[None, :] >= rank[:, None]          # [q, s]: r_s >= r_q
    sum_q = worse_or_equal.astype(np.float64) @ e             # [q]
    a = (rank[None, :] == rank[:, None]).sum(axis=1).astype(np.float64)
    include = rank[None, :] <= rank[:, None]                  # [i, q]: r_q <= r_i
    p = e[:, None] / sum_q[None, :]                           # [i, q]
    w = include / a[None, :]
    eye = np.eye(k)
    omega = np.sum(w * (eye - p), axis=1)
    delta = np.sum(w * p * (1.0 - p), axis=1)
    gamma = np.sqrt(sigma_sq) / c
    omega = omega * sigma_sq / c
    delta = delta * gamma * sigma_sq / (c * c)
    return omega, delta


@njit(cache=True)
def _pl_team_terms_numba(mu, sigma_sq, rank, beta_sq):
    k = mu.shape[0]
    total = 0.0
    mu_max = mu[0]
    for i in range(k):
        total += sigma_sq[i] + beta_sq
        if mu[i] > mu_max:
            mu_max = mu[i]
    c = math.sqrt(total)
    e = np.empty(k)
    for i in range(k):
        e[i] = math.exp((mu[i] - mu_max) / c)
    sum_q = np.zeros(k)
    a = np.zeros(k)
    for q in range(k):
        for s in range(k):
            if rank[s] >= rank[q]:
                sum_q[q] += e[s]
            if rank[s] == rank[q]:
                a[q] += 1.0
    omega = np.zeros(k)
    delta = np.zeros(k)
    for i in range(k):
        om = 0.0
        de = 0.0
        for q in range(k):
            if rank[q] <= rank[i]:
                p = e[i] / sum_q[q]
                de += p * (1.0 - p) / a[q]
                if q == i:
                    om += (1.0 - p) / a[q]
                else:
                    om -= p / a[q]
        gamma = math.sqrt(sigma_sq[i]) / c
        omega[i] = om * sigma_sq[i] / c
        delta[i] = de * gamma * sigma_sq[i] / (c * c)
    return omega, delta


# --------------------------------------------------------------------------
# Sign-projected logistic regression
# --------------------------------------------------------------------------

def _project_numpy(w, sign):
    w = np.where((sign > 0) & (w < 0), 0.0, w)
    return np.where((sign < 0) & (w > 0), 0.0, w)


def _logistic_loss_numpy(z, y, w, lam):
    return float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * lam * np.dot(w, w))


def _logistic_pgd_numpy(X, y, sign, w0, b0, lam, step, max_iter, tol):
    n = X.shape[0]
    w = _project_numpy(w0.astype(np.float64).copy(), sign)
    b = float(b0)
    z = X @ w + b
    loss = _logistic_loss_numpy(z, y, w, lam)
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        r = 1.0 / (1.0 + np.exp(-z)) - y
        w = _project_numpy(w - step * (X.T @ r / n + lam * w), sign)
        b -= step * float(np.mean(r))
        z = X @ w + b
        new_loss = _logistic_loss_numpy(z, y, w, lam)
        if abs(loss - new_loss) < tol:
            loss = new_loss
            converged = True
            break
        loss = new_loss
    return w, b, loss, it, converged


@njit(cache=True)
def _logaddexp0(z):
    if z > 0.0:
        return z + math.log1p(math.exp(-z))
    return math.log1p(math.exp(z))


@njit(cache=True)
def _logistic_pgd_numba(X, y, sign, w0, b0, lam, step, max_iter, tol):
    n, d = X.shape
    w = w0.astype(np.float64).copy()
    for j in range(d):
        if sign[j] > 0 and w[j] < 0.0:
            w[j] = 0.0
        elif sign[j] < 0 and w[j] > 0.0:
            w[j] = 0.0
    b = b0
    z = np.empty(n)
    grad = np.empty(d)

    def _loss(z, w):
        acc = 0.0
        for i in range(n):
            acc += _logaddexp0(z[i]) - y[i] * z[i]
        reg = 0.0
        for j in range(d):
            reg += w[j] * w[j]
        return acc / n + 0.5 * lam * reg

    for i in range(n):
        acc = b
        for j in range(d):
            acc += X[i, j] * w[j]
        z[i] = acc
    loss = _loss(z, w)
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        for j in range(d):
            grad[j] = 0.0
        gb = 0.0
        for i in range(n):
            r = 1.0 / (1.0 + math.exp(-z[i])) - y[i]
            gb += r
            for j in range(d):
                grad[j] += X[i, j] * r
        for j in range(d):
            wj = w[j] - step * (grad[j] / n + lam * w[j])
            if sign[j] > 0 and wj < 0.0:
                wj = 0.0
            elif sign[j] < 0 and wj > 0.0:
                wj = 0.0
            w[j] = wj
        b -= step * gb / n
        for i in range(n):
            acc = b
            for j in range(d):
                acc += X[i, j] * w[j]
            z[i] = acc
        new_loss = _loss(z, w)
        if abs(loss - new_loss) < tol:
            loss = new_loss
            converged = True
            break
        loss = new_loss
    return w, b, loss, it, converged


if USE_NUMBA:
    pl_team_terms = _pl_team_terms_numba
    logistic_pgd = _logistic_pgd_numba
else:
    pl_team_terms = _pl_team_terms_numpy
    logistic_pgd = _logistic_pgd_numpy
