"""Slow, loop-based reference detectors used as test oracles.

Everything here works in the L-dimensional AP domain with explicit
inverses, one channel use and one user at a time, and shares no code with
the batched K-domain implementation under test.
"""

import numpy as np

from cfidd.modem import QPSK


def prior_stats(llr):
    """Mean and variance of Gray QPSK from bit LLRs (K, 2), via per-axis tanh."""
    llr = np.clip(llr, -60, 60)
    mean = (np.tanh(llr[:, 0] / 2) + 1j * np.tanh(llr[:, 1] / 2)) / np.sqrt(2)
    return mean, 1.0 - np.abs(mean) ** 2


def slice_qpsk(u):
    return (np.where(u.real >= 0, 1.0, -1.0) + 1j * np.where(u.imag >= 0, 1.0, -1.0)) / np.sqrt(2)


def lmmse_filter(G, weights, k, c):
    """``(c I + G diag(weights) G^H)^{-1} g_k`` with ``weights[k]`` forced to 1."""
    w = np.array(weights, dtype=float)
    w[k] = 1.0
    L = G.shape[0]
    M = c * np.eye(L) + (G * w) @ G.conj().T
    return np.linalg.inv(M) @ G[:, k]


def pic(y, G, c, llr):
    """Soft PIC at one channel use: (soft, mu) per user."""
    K = G.shape[1]
    mean, var = prior_stats(llr)
    soft = np.zeros(K, dtype=complex)
    mu = np.zeros(K)
    for k in range(K):
        others = np.arange(K) != k
        r = y - G[:, others] @ mean[others]
        w = lmmse_filter(G, var, k, c)
        soft[k] = np.vdot(w, r)
        mu[k] = np.vdot(w, G[:, k]).real
    return soft, mu


def mmse(y, G, c):
    K = G.shape[1]
    soft = np.zeros(K, dtype=complex)
    for k in range(K):
        soft[k] = np.vdot(lmmse_filter(G, np.ones(K), k, c), y)
    return soft


def sic_stage_filter(G, var, order, i, c):
    weights = np.array(var, dtype=float)
    weights[order[:i]] = 0.0
    return lmmse_filter(G, weights, order[i], c)


def hard_sic(y, G, c, llr, order=None):
    """Hard-feedback soft SIC: (soft, mu, decisions) per user."""
    K = G.shape[1]
    order = np.arange(K) if order is None else np.asarray(order)
    mean, var = prior_stats(llr)
    soft = np.zeros(K, dtype=complex)
    mu = np.zeros(K)
    dec = np.zeros(K, dtype=complex)
    for i, k in enumerate(order):
        r = y.copy()
        for j in order[:i]:
            r -= G[:, j] * dec[j]
        for j in order[i + 1:]:
            r -= G[:, j] * mean[j]
        w = sic_stage_filter(G, var, order, i, c)
        soft[k] = np.vdot(w, r)
        mu[k] = np.vdot(w, G[:, k]).real
        dec[k] = slice_qpsk(soft[k])
    return soft, mu, dec


def mf_sic_tree(y, G, c, llr, d_th, m, order=None):
    """Multi-feedback SIC decisions by explicit candidate-tree expansion.

    At an unreliable stage every one of the ``m`` nearest points is
    completed by plain hard SIC over the remaining users, and the completed
    vector with the smallest ``||y - G phi||^2`` fixes that stage.
    """
    K = G.shape[1]
    order = np.arange(K) if order is None else np.asarray(order)
    mean, var = prior_stats(llr)
    filters = [sic_stage_filter(G, var, order, i, c) for i in range(K)]

    def stage_output(i, dec):
        r = y.copy()
        for j in order[:i]:
            r -= G[:, j] * dec[j]
        for j in order[i + 1:]:
            r -= G[:, j] * mean[j]
        return np.vdot(filters[i], r)

    dec = np.zeros(K, dtype=complex)
    for i, k in enumerate(order):
        u = stage_output(i, dec)
        q = slice_qpsk(u)
        if abs(u - q) <= d_th:
            dec[k] = q
            continue
        dist = np.abs(u - QPSK.points)
        cands = QPSK.points[np.argsort(dist, kind="stable")[:m]]
        best, best_res = None, np.inf
        for cand in cands:
            phi = dec.copy()
            phi[k] = cand
            for i2 in range(i + 1, K):
                phi[order[i2]] = slice_qpsk(stage_output(i2, phi))
            res = np.sum(np.abs(y - G @ phi) ** 2)
            if res < best_res:
                best, best_res = cand, res
        dec[k] = best
    return dec


def ml(y, G):
    """Exhaustive joint ML by nested enumeration."""
    K = G.shape[1]
    best, best_res = None, np.inf
    for idx in np.ndindex(*(4,) * K):
        s = QPSK.points[list(idx)]
        res = np.sum(np.abs(y - G @ s) ** 2)
        if res < best_res:
            best, best_res = s, res
    return best


def random_instance(rng, L, K, snr_db=10.0, with_prior=False, T=1):
    """Random (y, G, noise_var, prior_llr, s) with unit-variance Rayleigh G."""
    G = (rng.standard_normal((L, K)) + 1j * rng.standard_normal((L, K))) / np.sqrt(2)
    s = QPSK.points[rng.integers(0, 4, (T, K))]
    nv = 10 ** (-snr_db / 10)
    noise = np.sqrt(nv / 2) * (rng.standard_normal((T, L)) + 1j * rng.standard_normal((T, L)))
    y = s @ G.T + noise
    llr = rng.normal(0, 3, (T, K, 2)) if with_prior else np.zeros((T, K, 2))
    return y, G, nv, llr, s
