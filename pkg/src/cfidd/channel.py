"""Cell-free uplink channel: geometry, three-slope path loss, fading and AWGN.

Powers are linear unless a name ends in ``_db``.  The channel matrix ``G``
is L x K (access points by users) so that ``y = G s + n``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, DegenerateChannel


@dataclass(frozen=True)
class GeometryConfig:
    """Deployment area and propagation constants.

    Attributes
    ----------
    area_side : float
        Side of the square deployment area in meters.
    d0, d1 : float
        Breakpoints of the three-slope path-loss model in meters.
    h_ap, h_ue : float
        Antenna heights in meters.
    freq_mhz : float
        Carrier frequency in MHz.
    sigma_sh : float
        Log-normal shadowing standard deviation in dB.
    n_ap, n_ue : int
        Number of single-antenna access points (L) and users (K).
    """

    area_side: float = 1000.0
    d0: float = 10.0
    d1: float = 50.0
    h_ap: float = 15.0
    h_ue: float = 1.65
    freq_mhz: float = 1900.0
    sigma_sh: float = 8.0
    n_ap: int = 100
    n_ue: int = 40

    def __post_init__(self):
        if not 0 < self.d0 < self.d1 < self.area_side:
            raise ContractViolation(
                f"need 0 < d0 < d1 < area_side, got d0={self.d0}, d1={self.d1}, area_side={self.area_side}")
        if self.freq_mhz <= 0 or self.h_ap <= 0 or self.h_ue <= 0:
            raise ContractViolation("frequency and antenna heights must be positive")
        if self.sigma_sh < 0:
            raise ContractViolation(f"sigma_sh must be >= 0, got {self.sigma_sh}")
        if not self.n_ap >= self.n_ue >= 1:
            raise ContractViolation(f"need n_ap >= n_ue >= 1, got L={self.n_ap}, K={self.n_ue}")

    @property
    def hata(self):
        return hata_lambda(self.freq_mhz, self.h_ap, self.h_ue)


@dataclass(frozen=True)
class ChannelRealization:
    """One draw of the network: channel matrix plus the geometry behind it."""

    G: np.ndarray
    beta: np.ndarray
    ap_positions: np.ndarray
    ue_positions: np.ndarray


def hata_lambda(freq_mhz, h_ap, h_ue):
    """COST-231 Hata constant (dB) used by the far segment of the path-loss model."""
    if freq_mhz <= 0 or h_ap <= 0 or h_ue <= 0:
        raise ContractViolation("hata_lambda arguments must be positive")
    lf = np.log10(freq_mhz)
    return (46.3 + 33.9 * lf - 13.82 * np.log10(h_ap)
            - (1.1 * lf - 0.7) * h_ue + (1.56 * lf - 0.8))


def path_loss_db(d, geom):
    """Three-slope path loss in dB (a negative number) at distance ``d`` meters.

    Exponent 3.5 beyond ``d1``, 2 between ``d0`` and ``d1``, flat below ``d0``.
    Accepts scalars or arrays.
    """
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ContractViolation("distances must be positive")
    lam = geom.hata
    far = -lam - 35.0 * np.log10(d)
    mid = -lam - 15.0 * np.log10(geom.d1) - 20.0 * np.log10(d)
    near = -lam - 15.0 * np.log10(geom.d1) - 20.0 * np.log10(geom.d0)
    out = np.where(d > geom.d1, far, np.where(d > geom.d0, mid, near))
    return float(out) if out.ndim == 0 else out


def large_scale_gain(pl_db, sigma_sh, zeta):
    """Linear large-scale gain with log-normal shadowing applied in the dB domain."""
    if np.any(np.asarray(sigma_sh) < 0):
        raise ContractViolation("sigma_sh must be >= 0")
    return 10.0 ** ((np.asarray(pl_db) + sigma_sh * np.asarray(zeta)) / 10.0)


def complex_normal(rng, shape, variance=1.0):
    """Circularly-symmetric complex Gaussian samples, ``variance/2`` per real dimension."""
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def draw_positions(geom, rng):
    """Independent uniform AP and UE positions over the square, shapes (L, 2) and (K, 2)."""
    ap = rng.uniform(0.0, geom.area_side, size=(geom.n_ap, 2))
    ue = rng.uniform(0.0, geom.area_side, size=(geom.n_ue, 2))
    return ap, ue


def draw_channel(geom, rng, positions=None):
    """Draw a :class:`ChannelRealization`.

    Parameters
    ----------
    geom : GeometryConfig
    rng : numpy.random.Generator
        Consumed in a fixed order (positions, shadowing, small-scale fading),
        so equal generator states give identical realizations.
    positions : tuple of ndarray, optional
        Fixed ``(ap_positions, ue_positions)``; when given, only shadowing
        and small-scale fading are drawn.
    """
    if positions is None:
        ap, ue = draw_positions(geom, rng)
    else:
        ap, ue = (np.asarray(p, dtype=float) for p in positions)
        if ap.shape != (geom.n_ap, 2) or ue.shape != (geom.n_ue, 2):
            raise ContractViolation("fixed positions do not match the geometry's L and K")
    dist = np.linalg.norm(ap[:, None, :] - ue[None, :, :], axis=-1)
    zeta = rng.standard_normal(dist.shape)
    beta = large_scale_gain(path_loss_db(dist, geom), geom.sigma_sh, zeta)
    h = complex_normal(rng, dist.shape)
    return ChannelRealization(G=np.sqrt(beta) * h, beta=beta, ap_positions=ap, ue_positions=ue)


def apply_channel(G, s, noise_var, rng):
    """Return ``y = G s + n`` for one symbol vector (K,) or a block (T, K)."""
    G = np.asarray(G)
    s = np.asarray(s)
    if s.shape[-1] != G.shape[1]:
        raise ContractViolation(f"symbol vector length {s.shape[-1]} != K = {G.shape[1]}")
    if noise_var < 0:
        raise ContractViolation("noise variance must be >= 0")
    y = s @ G.T
    if noise_var == 0:
        return y
    return y + complex_normal(rng, y.shape, noise_var)


def channel_energy(G):
    """``tr(G G^H)``, i.e. the sum of all |g|^2."""
    G = np.asarray(G)
    return float(np.real(np.vdot(G, G)))


def noise_variance_for_snr(G, signal_power, rate, snr_linear):
    """Noise variance that puts realization ``G`` at the requested SNR.

    SNR is ``tr(signal_power G G^H) rate / (L K noise_var)``.
    """
    if snr_linear <= 0:
        raise ContractViolation("snr_linear must be positive")
    L, K = np.shape(G)
    energy = channel_energy(G)
    if energy <= 0:
        raise DegenerateChannel("channel matrix has zero energy")
    return signal_power * energy * rate / (L * K * snr_linear)


def snr_for_noise_variance(G, signal_power, rate, noise_var):
    """Forward SNR formula, the inverse of :func:`noise_variance_for_snr`."""
    L, K = np.shape(G)
    return signal_power * channel_energy(G) * rate / (L * K * noise_var)
