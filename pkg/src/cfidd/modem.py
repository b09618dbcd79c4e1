"""Gray-labelled constellations and the LLR <-> soft symbol conversions.

LLR sign convention everywhere in the package: ``L = log P(b=0) / P(b=1)``,
so a positive LLR favours bit 0, and bit 0 maps to the antipodal level +1.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

#: LLRs are clipped to this magnitude before any exponentiation.
LLR_CLIP = 60.0


@dataclass(frozen=True)
class Constellation:
    """Point set with bit labels.

    ``labels[i]`` holds the bits of ``points[i]`` (first bit first) and
    ``i`` is the integer those bits spell, most significant bit first.
    """

    points: np.ndarray
    labels: np.ndarray

    @property
    def bits_per_symbol(self):
        return self.labels.shape[1]

    @property
    def order(self):
        return self.points.shape[0]

    @property
    def energy(self):
        return float(np.mean(np.abs(self.points) ** 2))

    @property
    def signs(self):
        """Antipodal level (+1 for bit 0, -1 for bit 1) per point and bit."""
        return 1.0 - 2.0 * self.labels


def qpsk():
    """Unit-energy Gray QPSK: first bit on the real axis, second on the imaginary."""
    labels = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=np.uint8)
    sgn = 1.0 - 2.0 * labels
    points = (sgn[:, 0] + 1j * sgn[:, 1]) / np.sqrt(2.0)
    return Constellation(points=points, labels=labels)


QPSK = qpsk()


@dataclass(frozen=True)
class SoftSymbolStats:
    """Prior symbol statistics built from decoder LLRs.

    ``probs`` has a trailing axis over the constellation points; ``mean``
    and ``var`` drop it.
    """

    probs: np.ndarray
    mean: np.ndarray
    var: np.ndarray


def clip_llr(llr):
    return np.clip(llr, -LLR_CLIP, LLR_CLIP)


def modulate(bits, const=QPSK):
    """Map groups of ``bits_per_symbol`` bits (last axis) onto constellation points."""
    bits = np.asarray(bits, dtype=np.int64)
    mc = const.bits_per_symbol
    if bits.shape[-1] % mc:
        raise ContractViolation(f"bit count {bits.shape[-1]} is not a multiple of {mc}")
    groups = bits.reshape(bits.shape[:-1] + (-1, mc))
    weights = 1 << np.arange(mc - 1, -1, -1)
    return const.points[groups @ weights]


def nearest_index(u, const=QPSK):
    """Index of the closest constellation point for every entry of ``u``."""
    u = np.asarray(u)
    return np.argmin(np.abs(u[..., None] - const.points) ** 2, axis=-1)


def quantize(u, const=QPSK):
    """Hard slicer ``Q(u)``."""
    return const.points[nearest_index(u, const)]


def nearest_points(u, m, const=QPSK):
    """The ``m`` constellation points closest to each ``u``, nearest first.

    Returns an array of shape ``u.shape + (m,)``.  Ties keep point order.
    """
    if not 1 <= m <= const.order:
        raise ContractViolation(f"candidate count {m} outside 1..{const.order}")
    u = np.asarray(u)
    dist = np.abs(u[..., None] - const.points) ** 2
    idx = np.argsort(dist, axis=-1, kind="stable")[..., :m]
    return const.points[idx]


def hard_demap(symbols, const=QPSK):
    """Inverse of :func:`modulate` for (noisy) symbols: nearest-point labels."""
    lab = const.labels[nearest_index(symbols, const)]
    return lab.reshape(lab.shape[:-2] + (-1,))


def log_apriori(llrs, const=QPSK):
    """Log prior probability of every point from per-bit LLRs.

    ``llrs`` has a trailing axis of length ``bits_per_symbol``; the result
    replaces it with one of length ``order``.  Bits are treated as
    independent: ``P(s) = prod_l 1 / (1 + exp(-sign_l(s) L_l))``.
    """
    llrs = clip_llr(np.asarray(llrs, dtype=float))
    if llrs.shape[-1] != const.bits_per_symbol:
        raise ContractViolation(f"need {const.bits_per_symbol} LLRs per symbol")
    # (..., 1, Mc) * (order, Mc) -> (..., order, Mc)
    x = -llrs[..., None, :] * const.signs
    return -np.sum(np.logaddexp(0.0, x), axis=-1)


def apriori_probs(llrs, const=QPSK):
    return np.exp(log_apriori(llrs, const))


def soft_symbol_stats(llrs, const=QPSK):
    """Prior mean and variance of the transmitted symbol given bit LLRs."""
    probs = apriori_probs(llrs, const)
    mean = probs @ const.points
    var = np.sum(np.abs(const.points - mean[..., None]) ** 2 * probs, axis=-1)
    return SoftSymbolStats(probs=probs, mean=mean, var=np.maximum(var, 0.0))
