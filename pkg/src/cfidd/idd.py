"""Iterative detection and decoding of one frame.

Each user sends one LDPC codeword.  Coded bits are interleaved per user,
mapped onto symbols, and the symbols are sent over consecutive channel uses
of a block-fading channel.  The receiver alternates soft detection and
per-user LDPC decoding, exchanging extrinsic LLRs only.
"""

from dataclasses import dataclass

import numpy as np

from . import ldpc, modem
from .detectors import DetectorContext, MfConfig, detect, extrinsic_llrs
from .errors import ContractViolation
from .modem import QPSK


@dataclass(frozen=True)
class IddConfig:
    """Outer-loop settings.

    ``iterations`` counts detector passes: 1 means detect once and decode
    once, without feedback.  ``ldpc_max_iter`` bounds the decoder within
    each pass.
    """

    iterations: int = 2
    ldpc_max_iter: int = 10
    interleaver_seed: int = 0
    early_stop: bool = False
    warm_start: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise ContractViolation("IDD iterations must be >= 1")
        if self.ldpc_max_iter < 1:
            raise ContractViolation("LDPC iterations must be >= 1")


def permutation(n, seed, user=0):
    """Interleaver permutation of user ``user``; ``interleave(x)[i] = x[perm[i]]``."""
    return np.random.default_rng([int(seed), int(user)]).permutation(n)


def interleave(block, seed, user=0):
    block = np.asarray(block)
    return block[..., permutation(block.shape[-1], seed, user)]


def deinterleave(block, seed, user=0):
    block = np.asarray(block)
    perm = permutation(block.shape[-1], seed, user)
    out = np.empty_like(block)
    out[..., perm] = block
    return out


def _permutations(n, seed, K):
    return np.stack([permutation(n, seed, k) for k in range(K)])


def _gather(blocks, perms):
    """Row-wise ``blocks[k][perms[k]]``."""
    return np.take_along_axis(blocks, perms, axis=-1)


def _scatter(blocks, perms):
    out = np.empty_like(blocks)
    np.put_along_axis(out, perms, blocks, axis=-1)
    return out


def transmit_frame(code, messages, seed, const=QPSK):
    """Encode, interleave and map the messages of all users.

    Parameters
    ----------
    messages : ndarray, shape (K, k)

    Returns
    -------
    codewords : ndarray, shape (K, N)
    symbols : ndarray, shape (T, K) with ``T = N / bits_per_symbol``
    """
    cw = ldpc.encode(code, messages)
    perms = _permutations(code.n, seed, cw.shape[0])
    sym = modem.modulate(_gather(cw, perms), const)
    return cw, sym.T


@dataclass(frozen=True)
class FrameState:
    """Outcome of :func:`run_frame`.

    ``decoded[i]`` holds the message bits (K, k) decided after IDD
    iteration ``i + 1``; ``parity_ok[i]`` the per-user parity flags.
    ``detector_llr`` and ``decoder_llr`` are the last exchanged extrinsic
    blocks (K, N) in codeword (deinterleaved) order.
    """

    decoded: np.ndarray
    parity_ok: np.ndarray
    detector_llr: np.ndarray
    decoder_llr: np.ndarray


def run_frame(y, G, noise_var, detector, code, cfg=IddConfig(), mf=MfConfig(),
              order=None, sic_feedback="hard", es=1.0, const=QPSK):
    """Detect and decode one frame.

    Parameters
    ----------
    y : ndarray, shape (T, L)
        Received vectors of the frame's channel uses.
    G : ndarray, shape (L, K)
        Channel matrix, constant over the frame.
    noise_var : float
    detector : str
        One of :data:`cfidd.detectors.DETECTORS`.
    code : LinearCode
    cfg : IddConfig

    Returns
    -------
    FrameState
    """
    y = np.atleast_2d(y)
    K = np.shape(G)[1]
    mc = const.bits_per_symbol
    if code.n % mc:
        raise ContractViolation(f"codeword length {code.n} is not a multiple of {mc}")
    T = code.n // mc
    if y.shape[0] != T:
        raise ContractViolation(f"frame needs {T} channel uses, got {y.shape[0]}")
    perms = _permutations(code.n, cfg.interleaver_seed, K)
    prior = np.zeros((T, K, mc))
    decoded = np.zeros((cfg.iterations, K, code.k), dtype=np.uint8)
    parity = np.zeros((cfg.iterations, K), dtype=bool)
    messages = None
    for it in range(cfg.iterations):
        ctx = DetectorContext(y, G, noise_var, prior, es, const)
        est = detect(detector, ctx, mf, order, sic_feedback).estimate
        le = extrinsic_llrs(est.soft, est.mu, est.lam2, prior, const)  # (T, K, mc)
        det_llr = _scatter(le.transpose(1, 0, 2).reshape(K, code.n), perms)
        res = ldpc.decode(code, det_llr, cfg.ldpc_max_iter,
                          c2v_init=messages if cfg.warm_start else None)
        messages = res.messages
        decoded[it] = res.hard[:, code.info_positions]
        parity[it] = res.parity_ok
        if cfg.early_stop and parity[it].all():
            decoded[it + 1:] = decoded[it]
            parity[it + 1:] = parity[it]
            break
        # feedback is the decoder's extrinsic output, never its posterior
        prior = _gather(res.extrinsic, perms).reshape(K, T, mc).transpose(1, 0, 2)
    return FrameState(decoded=decoded, parity_ok=parity, detector_llr=det_llr,
                      decoder_llr=res.extrinsic)
