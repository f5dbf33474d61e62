"""Independent reference implementations used as test oracles.

These work on the literal binary-matrix formulation (x in {0,1}^{k x m}) or
use a different numerical method than the package, so agreement between the
two is evidence rather than repetition.
"""

import itertools

import numpy as np


def bit_matrix(rows, m):
    X = np.zeros((len(rows), m))
    for i, j in enumerate(rows):
        X[i, j] = 1.0
    return X


def makespan_matrix(rows, theta, m):
    """``|| X^T theta ||_inf`` with ``X`` the binary assignment matrix."""
    return float(np.max(np.abs(bit_matrix(rows, m).T @ np.asarray(theta, float))))


def switching_matrix(prev, nxt, u, m):
    """``1^T |X - Y| u``."""
    D = np.abs(bit_matrix(prev, m) - bit_matrix(nxt, m))
    return float(np.ones(len(prev)) @ D @ np.asarray(u, float))


def all_assignments(k, m):
    return list(itertools.product(range(m), repeat=k))


def sequence_cost(seq, thetas, initial, u, m):
    total, prev = 0.0, tuple(initial)
    for x, th in zip(seq, thetas):
        total += makespan_matrix(x, th, m) + switching_matrix(prev, x, u, m)
        prev = x
    return total


def brute_force_plan(thetas, initial, u, m, cost_fn=None):
    """Minimum over every assignment sequence; returns ``(best_cost, best_seq, count)``."""
    k = len(initial)
    S = len(thetas)
    cands = all_assignments(k, m)
    cost_fn = cost_fn or (lambda seq: sequence_cost(seq, thetas, initial, u, m))
    best, best_seq, count = np.inf, None, 0
    for seq in itertools.product(cands, repeat=S):
        count += 1
        c = cost_fn(seq)
        if c < best:
            best, best_seq = c, seq
    return best, best_seq, count


def brute_force_subproblem(terms, left, right, c, u, m):
    """Minimiser with the smallest lexicographic (= base-m encoding) order among ties."""
    k = len(left)
    best, arg = np.inf, None
    for x in all_assignments(k, m):  # lexicographic order == increasing encoding
        v = sum(w * makespan_matrix(x, th, m) for w, th in terms)
        v += c * switching_matrix(x, left, u, m)
        if right is not None:
            v += c * switching_matrix(x, right, u, m)
        if v < best - 1e-12:
            best, arg = v, x
    return arg, best


def project_simplex_bisection(v, iters=200):
    """Projection onto the simplex by bisection on the shift ``tau``."""
    v = np.asarray(v, float)
    lo, hi = v.min() - 1.0, v.max()
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.maximum(v - mid, 0).sum() > 1.0:
            lo = mid
        else:
            hi = mid
    return np.maximum(v - 0.5 * (lo + hi), 0)


def rq_kernel(a, b, variance, length_scale, alpha):
    d2 = (np.asarray(a, float)[:, None] - np.asarray(b, float)[None, :]) ** 2
    return variance * (1 + d2 / (2 * alpha * length_scale**2)) ** (-alpha)


def gp_posterior_direct(y, times, query, variance, length_scale, alpha, noise):
    """Posterior mean/std via an explicit inverse (no Cholesky), on centred data."""
    y = np.asarray(y, float)
    mu = y.mean()
    K = rq_kernel(times, times, variance, length_scale, alpha) + noise * np.eye(len(y))
    Ks = rq_kernel(times, query, variance, length_scale, alpha)
    Kinv = np.linalg.inv(K)
    mean = Ks.T @ Kinv @ (y - mu) + mu
    var = variance - np.sum(Ks * (Kinv @ Ks), axis=0)
    return mean, np.sqrt(np.clip(var, 0, None))
