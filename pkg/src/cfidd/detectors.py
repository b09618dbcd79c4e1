"""Soft-input soft-output multiuser detectors.

Every detector works on a block of ``T`` received vectors that share one
channel matrix ``G`` (L x K).  Priors are per channel use and per user and
come from decoder LLRs; all-zero LLRs mean "no prior".

The MMSE filters are evaluated in the K-dimensional user domain.  With
``A = G^H G`` and ``d = sqrt(diag(Delta_k))`` the filter

    w_k = (c I + G Delta_k G^H)^{-1} g_k,        c = noise_var / Es

equals ``G diag(d) v_k`` where ``v_k = (c I + diag(d) A diag(d))^{-1} e_k``.
The K x K system is Hermitian with eigenvalues >= c, and it gives
``mu_k = w_k^H g_k = 1 - c v_kk`` without cancellation error.
"""

from dataclasses import dataclass, field
from functools import cached_property
from itertools import product

import numpy as np

from . import modem
from .errors import ContractViolation, NumericalConsistencyError
from .modem import QPSK
from .numerics import cholesky, gram_plus_scaled_identity, hermitian_solve, scaled_gram_plus_identity

DETECTORS = ("mmse", "sic", "pic", "mf-sic", "mf-pic")
SIC_FEEDBACK = ("hard", "soft", "prior")

#: Floor applied to the effective noise variance of a filter output.
LAMBDA2_FLOOR = 1e-12


@dataclass
class DetectorContext:
    """Inputs shared by all detectors for one block of channel uses.

    Attributes
    ----------
    y : ndarray, shape (T, L)
    G : ndarray, shape (L, K)
    noise_var : float
    prior_llr : ndarray, shape (T, K, bits_per_symbol)
    es : float
        Average symbol energy.  ``y`` is rescaled on construction so that
        the detectors work with the unit-energy constellation; ``c`` is the
        matching noise-to-signal ratio.
    const : Constellation
    """

    y: np.ndarray
    G: np.ndarray
    noise_var: float
    prior_llr: np.ndarray = None
    es: float = 1.0
    const: modem.Constellation = field(default=QPSK)

    def __post_init__(self):
        self.y = np.atleast_2d(np.asarray(self.y, dtype=complex))
        self.G = np.asarray(self.G, dtype=complex)
        if self.G.ndim != 2 or self.y.shape[1] != self.G.shape[0]:
            raise ContractViolation(f"y of shape {self.y.shape} does not fit G of shape {self.G.shape}")
        if not self.noise_var > 0:
            raise ContractViolation(f"noise variance must be positive, got {self.noise_var}")
        if not self.es > 0:
            raise ContractViolation(f"symbol energy must be positive, got {self.es}")
        if self.es != 1.0:
            self.y = self.y / np.sqrt(self.es)
        shape = (self.T, self.K, self.const.bits_per_symbol)
        if self.prior_llr is None:
            self.prior_llr = np.zeros(shape)
        else:
            self.prior_llr = np.broadcast_to(np.asarray(self.prior_llr, dtype=float), shape)

    T = property(lambda self: self.y.shape[0])
    L = property(lambda self: self.G.shape[0])
    K = property(lambda self: self.G.shape[1])

    @property
    def c(self):
        return self.noise_var / self.es

    @cached_property
    def prior(self):
        return modem.soft_symbol_stats(self.prior_llr, self.const)

    @cached_property
    def gram(self):
        return np.conj(self.G.T) @ self.G

    @cached_property
    def matched(self):
        """``G^H y`` per channel use, shape (T, K)."""
        return self.y @ np.conj(self.G)

    @property
    def has_prior(self):
        return bool(np.any(self.prior_llr != 0))


@dataclass(frozen=True)
class SoftEstimate:
    """Filter outputs and their equivalent AWGN model ``s_hat = mu s + z``, all (T, K)."""

    soft: np.ndarray
    mu: np.ndarray
    lam2: np.ndarray


@dataclass(frozen=True)
class MfConfig:
    """Shadow-area reliability threshold and list size of the multi-feedback detectors."""

    d_th: float = 0.38
    candidates: int = 4

    def __post_init__(self):
        if self.d_th < 0:
            raise ContractViolation("d_th must be >= 0")
        if self.candidates < 1:
            raise ContractViolation("candidate count must be >= 1")


@dataclass(frozen=True)
class Detection:
    estimate: SoftEstimate
    hard: np.ndarray


def detection_order(G, kind="natural"):
    """User processing order: index order, or decreasing channel norm."""
    K = np.shape(G)[1]
    if kind == "natural":
        return np.arange(K)
    if kind == "norm":
        return np.argsort(-np.linalg.norm(G, axis=0), kind="stable")
    raise ContractViolation(f"unknown detection order {kind!r}")


# ---------------------------------------------------------------------------
# Reference (L-domain) formulas, one user at a time

def mmse_filter(ctx, k, t=0):
    """Filter of user ``k`` at channel use ``t`` straight from the L x L system."""
    if not 0 <= k < ctx.K:
        raise ContractViolation(f"user index {k} outside 0..{ctx.K - 1}")
    delta = ctx.prior.var[t]
    delta = delta.copy()
    delta[k] = 1.0
    M = gram_plus_scaled_identity(ctx.G, delta, ctx.c)
    return hermitian_solve(M, ctx.G[:, k])


def awgn_params(ctx, k, w):
    """Gain ``mu = w^H g_k`` and variance ``mu - mu^2`` of the filter output."""
    mu_c = np.vdot(w, ctx.G[:, k])
    if abs(mu_c.imag) > 1e-9 * max(1.0, abs(mu_c.real)):
        raise NumericalConsistencyError(f"w^H g has imaginary part {mu_c.imag:.3e}")
    mu = mu_c.real
    if not -1e-9 < mu <= 1 + 1e-9:
        raise NumericalConsistencyError(f"mu = {mu} outside (0, 1]")
    return mu, mu - mu * mu


# ---------------------------------------------------------------------------
# Batched K-domain machinery

def _dedupe_rows(delta):
    """Collapse the channel-use axis when every row is the same (e.g. no priors)."""
    if delta.shape[0] > 1 and np.all(delta == delta[:1]):
        return delta[:1]
    return delta


def _filter_bank(ctx, delta, targets):
    """Solve for one filter per (channel use, target).

    ``delta`` has shape (T or 1, J, K): row ``j`` holds the diagonal of the
    interference weighting for the filter of user ``targets[j]`` and must
    be 1 at that position.  Returns ``(v, d)`` shaped like ``delta``; see
    the module notes.
    """
    delta = _dedupe_rows(delta)
    d = np.sqrt(delta)
    H = scaled_gram_plus_identity(ctx.gram, d, ctx.c)
    e = np.zeros(delta.shape, dtype=complex)
    e[:, np.arange(len(targets)), targets] = 1.0
    v = hermitian_solve(H, e)
    return v, d


def _gain(ctx, v_own):
    """``mu`` and ``lambda^2`` from the diagonal entry ``v_kk`` of the filter solve."""
    cv = ctx.c * np.real(v_own)
    mu = 1.0 - cv
    if np.any(mu <= -1e-9) or np.any(mu > 1 + 1e-9):
        raise NumericalConsistencyError("filter gain outside (0, 1]")
    lam2 = np.maximum(mu * cv, LAMBDA2_FLOOR)
    return mu, lam2


def _apply(v, d, z):
    """Filter output ``w^H y_k = sum_j conj(v_j) d_j (G^H y_k)_j``."""
    return np.sum(np.conj(v) * d * z, axis=-1)


def _residual_rhs(ctx, x, rows=slice(None)):
    """``G^H (y - G x)`` for cancellation vectors ``x`` of shape (T, ..., K)."""
    r = ctx.matched[rows]
    extra = x.ndim - r.ndim
    r = r.reshape(r.shape[:1] + (1,) * extra + r.shape[1:])
    return r - x @ ctx.gram.T


def mmse_estimate(ctx):
    """Linear MMSE without cancellation: every other user counts as full-power interference."""
    K = ctx.K
    v, d = _filter_bank(ctx, np.ones((1, K, K)), np.arange(K))
    z = ctx.matched[:, None, :]
    soft = _apply(v, d, z)
    mu, lam2 = _gain(ctx, v[:, np.arange(K), np.arange(K)])
    return SoftEstimate(soft=soft, mu=np.broadcast_to(mu, soft.shape), lam2=np.broadcast_to(lam2, soft.shape))


def soft_pic_estimate(ctx):
    """Parallel soft interference cancellation followed by per-user MMSE filtering.

    User ``k`` sees ``y - sum_{j != k} mean_j g_j`` and a filter whose
    interference weights are the prior variances of the other users.
    """
    K = ctx.K
    var = ctx.prior.var
    delta = np.repeat(var[:, None, :], K, axis=1)
    delta[:, np.arange(K), np.arange(K)] = 1.0
    v, d = _filter_bank(ctx, delta, np.arange(K))
    x = np.repeat(ctx.prior.mean[:, None, :], K, axis=1)
    x[:, np.arange(K), np.arange(K)] = 0.0
    z = _residual_rhs(ctx, x)
    soft = _apply(v, d, z)
    mu, lam2 = _gain(ctx, v[:, np.arange(K), np.arange(K)])
    return SoftEstimate(soft=soft, mu=np.broadcast_to(mu, soft.shape), lam2=np.broadcast_to(lam2, soft.shape))


def _sic_filters(ctx, order):
    """Stage filters for successive cancellation in ``order``.

    Stage ``i`` targets user ``order[i]``: users detected earlier get
    weight 0 (treated as perfectly cancelled), the target gets 1
    and users still to come keep their prior variance.  The filters do not
    depend on the decisions, so all stages come out of one factorization
    per channel use.

    In detection order, stage ``i`` only involves the trailing block
    ``X[i+1:, i+1:]`` of ``X = c I + D A D`` (``D`` = prior standard
    deviations), bordered by the target's own column.  A reverse Cholesky
    ``X = U U^H`` with ``U`` upper triangular factors every trailing block
    at once, and the stage solve reduces to a Schur complement.
    """
    K = ctx.K
    order = np.asarray(order)
    if sorted(order.tolist()) != list(range(K)):
        raise ContractViolation(f"order {order.tolist()} is not a permutation of 0..{K - 1}")
    var = _dedupe_rows(ctx.prior.var)[:, order]
    A = ctx.gram[np.ix_(order, order)]
    sd = np.sqrt(var)  # (T', K)
    X = sd[:, :, None] * A * sd[:, None, :]
    X[:, np.arange(K), np.arange(K)] += ctx.c
    U = cholesky(X[:, ::-1, ::-1])[:, ::-1, ::-1]
    W = np.linalg.inv(U)
    below = np.tri(K, k=-1, dtype=bool)  # entry (m, i) with m > i
    B = np.where(below, sd[:, :, None] * A, 0.0)  # column i: border of stage i
    Q = np.where(below, W @ B, 0.0)
    P = np.where(below, np.conj(np.swapaxes(W, -1, -2)) @ Q, 0.0)
    schur = ctx.c + np.real(np.diagonal(A)) - np.sum(np.abs(Q) ** 2, axis=-2)  # (T', K)
    # V[t, i, m]: filter of stage i on ordered user m
    V = -np.swapaxes(P, -1, -2) / schur[:, :, None]
    V[:, np.arange(K), np.arange(K)] = 1.0 / schur
    Dm = np.where(np.tri(K, k=-1, dtype=bool).T, sd[:, None, :], 0.0)
    Dm[:, np.arange(K), np.arange(K)] = 1.0
    v = np.empty(V.shape, dtype=complex)
    d = np.empty(Dm.shape)
    v[:, :, order] = V
    d[:, :, order] = Dm
    v = np.broadcast_to(v, (ctx.T,) + v.shape[1:])
    d = np.broadcast_to(d, (ctx.T,) + d.shape[1:])
    return v, d


def _posterior_stats(ctx, soft, mu, lam2, prior_llr):
    """Posterior mean and variance of a symbol given its filter output."""
    pts = ctx.const.points
    metric = -np.abs(soft[..., None] - mu[..., None] * pts) ** 2 / lam2[..., None]
    metric = metric + modem.log_apriori(prior_llr, ctx.const)
    metric -= metric.max(axis=-1, keepdims=True)
    p = np.exp(metric)
    p /= p.sum(axis=-1, keepdims=True)
    mean = p @ pts
    var = np.sum(np.abs(pts - mean[..., None]) ** 2 * p, axis=-1)
    return mean, var


def soft_sic_estimate(ctx, order=None, feedback="hard"):
    """Successive soft interference cancellation with MMSE filtering.

    Parameters
    ----------
    ctx : DetectorContext
    order : sequence of int, optional
        Detection order; natural index order by default.
    feedback : {"hard", "soft", "prior"}
        What replaces an already detected user in the cancellation:

        * ``"hard"`` -- its sliced filter output; its filter weight drops to 0.
        * ``"soft"`` -- its posterior mean given the filter output; its
          filter weight becomes the posterior variance.
        * ``"prior"`` -- nothing new: every other user is cancelled with
          its prior mean, as in the one-shot soft-cancellation form.

    Returns
    -------
    SoftEstimate
        Filter outputs indexed by user (not by stage).
    """
    return _soft_sic(ctx, order, feedback)[0]


def _soft_sic(ctx, order, feedback):
    if feedback not in SIC_FEEDBACK:
        raise ContractViolation(f"unknown SIC feedback {feedback!r}")
    if order is None:
        order = np.arange(ctx.K)
    order = np.asarray(order)
    if feedback == "prior":
        est = soft_pic_estimate(ctx)
        return est, modem.quantize(est.soft, ctx.const)
    T, K = ctx.T, ctx.K
    mean = ctx.prior.mean
    if feedback == "hard":
        v, d = _sic_filters(ctx, order)
    soft = np.zeros((T, K), dtype=complex)
    mu = np.zeros((T, K))
    lam2 = np.zeros((T, K))
    decided = np.zeros((T, K), dtype=complex)
    post_var = np.zeros((T, K))
    for i, k in enumerate(order):
        if feedback == "soft":
            # the weights of earlier users depend on their posteriors, so
            # this stage's filter can only be solved now
            vi, di = _sic_filters_stage(ctx, order, i, post_var)
        else:
            vi, di = v[:, i], d[:, i]
        x = np.where(_before_mask(order, i, K), decided, mean)
        x[:, k] = 0.0
        z = _residual_rhs(ctx, x)
        soft[:, k] = _apply(vi, di, z)
        mu_k, lam2_k = _gain(ctx, vi[:, k])
        mu[:, k], lam2[:, k] = mu_k, lam2_k
        if feedback == "hard":
            decided[:, k] = modem.quantize(soft[:, k], ctx.const)
        else:
            decided[:, k], post_var[:, k] = _posterior_stats(
                ctx, soft[:, k], mu[:, k], lam2[:, k], ctx.prior_llr[:, k])
    hard = decided if feedback == "hard" else modem.quantize(soft, ctx.const)
    return SoftEstimate(soft=soft, mu=mu, lam2=lam2), hard


def _before_mask(order, i, K):
    m = np.zeros(K, dtype=bool)
    m[order[:i]] = True
    return m


def _sic_filters_stage(ctx, order, i, post_var):
    K = ctx.K
    k = order[i]
    delta = ctx.prior.var.copy()
    before = order[:i]
    delta[:, before] = post_var[:, before]
    delta[:, k] = 1.0
    v, d = _filter_bank(ctx, delta[:, None, :], np.array([k]))
    v = np.broadcast_to(v[:, 0], (ctx.T, K))
    d = np.broadcast_to(d[:, 0], (ctx.T, K))
    return v, d


def mf_sic_detect(ctx, mf=MfConfig(), order=None):
    """Multi-feedback SIC.

    Runs hard-decision SIC; whenever a stage output lies farther than
    ``mf.d_th`` from its nearest constellation point, the ``mf.candidates``
    nearest points are each propagated through conventional SIC of the
    remaining users (with the same stage filters) and the candidate whose
    completed vector best explains ``y`` in Euclidean distance is kept as
    the decision fed back to later stages.

    Returns
    -------
    Detection
        Soft outputs of the main SIC path and the final hard decisions.
    """
    T, K = ctx.T, ctx.K
    if order is None:
        order = np.arange(K)
    order = np.asarray(order)
    v, d = _sic_filters(ctx, order)
    mean = ctx.prior.mean
    soft = np.zeros((T, K), dtype=complex)
    mu = np.zeros((T, K))
    lam2 = np.zeros((T, K))
    decided = np.zeros((T, K), dtype=complex)
    for i, k in enumerate(order):
        x = np.where(_before_mask(order, i, K), decided, mean)
        x[:, k] = 0.0
        z = _residual_rhs(ctx, x)
        soft[:, k] = _apply(v[:, i], d[:, i], z)
        mu[:, k], lam2[:, k] = _gain(ctx, v[:, i, k])
        decided[:, k] = modem.quantize(soft[:, k], ctx.const)
        if np.isinf(mf.d_th):
            continue
        unreliable = np.flatnonzero(np.abs(soft[:, k] - decided[:, k]) > mf.d_th)
        if unreliable.size:
            decided[unreliable, k] = _best_candidate(
                ctx, mf, order, i, v, d, decided, unreliable, soft[unreliable, k])
    return Detection(SoftEstimate(soft=soft, mu=mu, lam2=lam2), decided)


def _best_candidate(ctx, mf, order, i, v, d, decided, rows, u):
    """Pick the list candidate for stage ``i`` at channel uses ``rows``."""
    K = ctx.K
    cand = modem.nearest_points(u, mf.candidates, ctx.const)  # (U, M)
    U, M = cand.shape
    k = order[i]
    phi = np.repeat(decided[rows][:, None, :], M, axis=1)
    phi[:, :, k] = cand
    mean = np.repeat(ctx.prior.mean[rows][:, None, :], M, axis=1)
    for j in range(i + 1, K):
        q = order[j]
        x = np.where(_before_mask(order, j, K), phi, mean)
        x[..., q] = 0.0
        z = _residual_rhs(ctx, x, rows)
        uq = _apply(v[rows, j][:, None, :], d[rows, j][:, None, :], z)
        phi[:, :, q] = modem.quantize(uq, ctx.const)
    res = candidate_residuals(ctx.y[rows], ctx.G, phi)
    best = np.argmin(res, axis=-1)
    return cand[np.arange(U), best]


def candidate_residuals(y, G, phi):
    """``||y - G phi||^2`` for candidate vectors ``phi`` (..., M, K) against ``y`` (..., L)."""
    err = y[..., None, :] - phi @ G.T
    return np.sum(np.abs(err) ** 2, axis=-1)


def mf_pic_detect(ctx, mf=MfConfig()):
    """Multi-feedback decisions on top of soft PIC.

    Users whose PIC output is unreliable try each of the nearest
    ``mf.candidates`` points while all other users hold their sliced PIC
    outputs, and keep the candidate with the smallest residual.  The soft
    outputs are those of PIC.
    """
    est = soft_pic_estimate(ctx)
    hard0 = modem.quantize(est.soft, ctx.const)
    hard = hard0.copy()
    if np.isinf(mf.d_th):
        return Detection(est, hard)
    for k in range(ctx.K):
        rows = np.flatnonzero(np.abs(est.soft[:, k] - hard0[:, k]) > mf.d_th)
        if rows.size == 0:
            continue
        cand = modem.nearest_points(est.soft[rows, k], mf.candidates, ctx.const)
        phi = np.repeat(hard0[rows][:, None, :], cand.shape[1], axis=1)
        phi[:, :, k] = cand
        best = np.argmin(candidate_residuals(ctx.y[rows], ctx.G, phi), axis=-1)
        hard[rows, k] = cand[np.arange(rows.size), best]
    return Detection(est, hard)


def exhaustive_ml(y, G, const=QPSK):
    """Joint ML decisions by enumerating every symbol vector (small K only)."""
    y = np.atleast_2d(y)
    K = G.shape[1]
    cands = np.array(list(product(const.points, repeat=K)))  # (order^K, K)
    res = np.sum(np.abs(y[:, None, :] - (cands @ G.T)[None]) ** 2, axis=-1)
    return cands[np.argmin(res, axis=1)]


def extrinsic_llrs(soft, mu, lam2, prior_llr, const=QPSK):
    """Per-bit extrinsic LLRs of filter outputs under the AWGN approximation.

    Parameters
    ----------
    soft, mu, lam2 : array_like
        Filter outputs and their model ``soft = mu s + N(0, lam2)``.
    prior_llr : array_like, shape soft.shape + (bits_per_symbol,)
        Decoder LLRs used as bit priors; they are subtracted again.

    Returns
    -------
    ndarray, shape soft.shape + (bits_per_symbol,)
    """
    soft = np.asarray(soft)
    mu = np.asarray(mu, dtype=float)
    lam2 = np.asarray(lam2, dtype=float)
    if np.any(lam2 <= 0):
        raise ContractViolation("lambda^2 must be positive")
    lam2 = np.maximum(lam2, LAMBDA2_FLOOR)
    prior = modem.clip_llr(np.asarray(prior_llr, dtype=float))
    metric = -np.abs(soft[..., None] - mu[..., None] * const.points) ** 2 / lam2[..., None]
    metric = metric + modem.log_apriori(prior, const)
    out = np.empty(soft.shape + (const.bits_per_symbol,))
    for b in range(const.bits_per_symbol):
        zero = const.labels[:, b] == 0
        out[..., b] = (_logsumexp(metric[..., zero]) - _logsumexp(metric[..., ~zero]))
    return out - prior


def _logsumexp(x):
    m = np.max(x, axis=-1, keepdims=True)
    return (m + np.log(np.sum(np.exp(x - m), axis=-1, keepdims=True)))[..., 0]


def detect(name, ctx, mf=MfConfig(), order=None, sic_feedback="hard"):
    """Run detector ``name`` (one of :data:`DETECTORS`) on ``ctx``."""
    if name == "mmse":
        est = mmse_estimate(ctx)
        return Detection(est, modem.quantize(est.soft, ctx.const))
    if name == "pic":
        est = soft_pic_estimate(ctx)
        return Detection(est, modem.quantize(est.soft, ctx.const))
    if name == "sic":
        est, hard = _soft_sic(ctx, order, sic_feedback)
        return Detection(est, hard)
    if name == "mf-sic":
        return mf_sic_detect(ctx, mf, order)
    if name == "mf-pic":
        return mf_pic_detect(ctx, mf)
    raise ContractViolation(f"unknown detector {name!r}; choose from {', '.join(DETECTORS)}")
