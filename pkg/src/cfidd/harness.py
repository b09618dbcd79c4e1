"""Monte Carlo BER sweeps over channel realizations, SNR points and detectors.

Randomness is derived per realization from ``(seed, realization index)``,
so results do not depend on how realizations are spread over workers, and
merging is plain integer addition.  Within a realization every detector and
IDD setting sees the same transmitted bits and the same noise draw (common
random numbers); the noise draw is also shared across SNR points, only its
scale changes.
"""

import hashlib
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import channel, ldpc, modem
from .channel import GeometryConfig
from .detectors import DETECTORS, DetectorContext, MfConfig, detect, detection_order, exhaustive_ml
from .errors import ContractViolation, DegenerateChannel, NumericalConsistencyError, SolverFailure
from .idd import IddConfig, run_frame, transmit_frame
from .modem import QPSK

log = logging.getLogger(__name__)

#: Name of the exhaustive joint ML detector (uncoded mode only).
ML = "ml"
_CELL_ERRORS = (SolverFailure, NumericalConsistencyError, DegenerateChannel, FloatingPointError)


@dataclass(frozen=True)
class SimConfig:
    """Everything needed to reproduce a sweep."""

    geometry: GeometryConfig = GeometryConfig()
    code_n: int = 256
    code_m: int = 128
    code_seed: int = 0
    code_alist: str = ""
    detectors: tuple = DETECTORS
    idd_iterations: tuple = (1, 2)
    ldpc_max_iter: int = 10
    interleaver_seed: int = 0
    snr_db: tuple = (-5.0, 0.0, 5.0, 10.0, 15.0)
    realizations: int = 1000
    frames_per_realization: int = 1
    seed: int = 0
    signal_power: float = 1.0
    d_th: float = 0.38
    candidates: int = 4
    order: str = "natural"
    sic_feedback: str = "hard"
    freeze_geometry: bool = False
    uncoded: bool = False
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "detectors", tuple(self.detectors))
        object.__setattr__(self, "idd_iterations", tuple(sorted(set(int(i) for i in self.idd_iterations))))
        object.__setattr__(self, "snr_db", tuple(float(s) for s in self.snr_db))
        if self.realizations < 1:
            raise ContractViolation("realization count must be >= 1")
        if self.frames_per_realization < 1:
            raise ContractViolation("frames per realization must be >= 1")
        if not self.snr_db:
            raise ContractViolation("SNR grid is empty")
        if not self.detectors:
            raise ContractViolation("no detectors selected")
        allowed = DETECTORS + ((ML,) if self.uncoded else ())
        for d in self.detectors:
            if d not in allowed:
                raise ContractViolation(f"unknown detector {d!r}; choose from {', '.join(allowed)}")
        if not self.idd_iterations or min(self.idd_iterations) < 1:
            raise ContractViolation("IDD iteration counts must be >= 1")
        if self.signal_power <= 0:
            raise ContractViolation("signal power must be positive")
        if self.workers < 1:
            raise ContractViolation("workers must be >= 1")
        # remaining range checks live in the component constructors
        self.mf_config()
        self.idd_config()

    def mf_config(self):
        return MfConfig(d_th=self.d_th, candidates=self.candidates)

    def idd_config(self):
        return IddConfig(iterations=max(self.idd_iterations), ldpc_max_iter=self.ldpc_max_iter,
                         interleaver_seed=self.interleaver_seed)

    def build_code(self):
        if self.code_alist:
            code = ldpc.LinearCode.from_alist(self.code_alist)
            if code.n != self.code_n or code.m != self.code_m:
                raise ContractViolation(
                    f"{self.code_alist} is a ({code.n}, {code.m}) code, config says ({self.code_n}, {self.code_m})")
            return code
        return ldpc.build_code(self.code_n, self.code_m, self.code_seed)

    def cells(self):
        """Result keys ``(detector, snr_db, idd_iterations)`` in CSV order."""
        idds = (0,) if self.uncoded else self.idd_iterations
        return [(d, s, i) for d in sorted(self.detectors) for i in idds for s in sorted(self.snr_db)]


@dataclass(frozen=True)
class BerRecord:
    """Error counters of one (detector, SNR, IDD iterations) cell.

    In uncoded mode ``idd_iterations`` is 0 and ``bits``/``bit_errors``
    count QPSK symbols and symbol errors.  A frame is one user's codeword.
    """

    detector: str
    snr_db: float
    idd_iterations: int
    n_ap: int
    n_ue: int
    bits: int = 0
    bit_errors: int = 0
    frames: int = 0
    frame_errors: int = 0
    elapsed: float = field(default=0.0, compare=False)

    def __post_init__(self):
        if not (0 <= self.bit_errors <= self.bits and 0 <= self.frame_errors <= self.frames):
            raise ContractViolation("error counts must lie between 0 and the totals")

    @property
    def key(self):
        return (self.detector, self.snr_db, self.idd_iterations, self.n_ap, self.n_ue)

    @property
    def ber(self):
        return self.bit_errors / self.bits if self.bits else float("nan")

    @property
    def fer(self):
        return self.frame_errors / self.frames if self.frames else float("nan")


def accumulate(a, b):
    """Sum the counters of two records of the same cell."""
    if a.key != b.key:
        raise ContractViolation(f"cannot merge records {a.key} and {b.key}")
    return replace(a, bits=a.bits + b.bits, bit_errors=a.bit_errors + b.bit_errors,
                   frames=a.frames + b.frames, frame_errors=a.frame_errors + b.frame_errors,
                   elapsed=a.elapsed + b.elapsed)


@dataclass
class RealizationResult:
    """Raw outcome of one channel realization.

    ``errors[key]`` is an int array (frames, K) of bit errors (symbol
    errors in uncoded mode) per user frame, ``units`` the bits (symbols)
    per user frame.  ``digests[(detector, snr_db, frame)]`` fingerprints
    the received block each detector consumed.
    """

    index: int
    units: int
    errors: dict = field(default_factory=dict)
    elapsed: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)
    digests: dict = field(default_factory=dict)


def _streams(cfg, index):
    ss = np.random.SeedSequence([cfg.seed, index])
    geo, data, noise = ss.spawn(3)
    return np.random.default_rng(geo), np.random.default_rng(data), noise


def fixed_positions(cfg):
    """AP/UE positions shared by all realizations when geometry is frozen."""
    return channel.draw_positions(cfg.geometry, np.random.default_rng(np.random.SeedSequence([cfg.seed])))


def _digest(y):
    return hashlib.sha1(np.ascontiguousarray(y).tobytes()).hexdigest()


def simulate_realization(cfg, index, code=None, positions=None):
    """Run every configured cell on realization ``index``."""
    if code is None and not cfg.uncoded:
        code = cfg.build_code()
    if positions is None and cfg.freeze_geometry:
        positions = fixed_positions(cfg)
    geo_rng, data_rng, noise_ss = _streams(cfg, index)
    real = channel.draw_channel(cfg.geometry, geo_rng, positions)
    G = real.G
    K = cfg.geometry.n_ue
    mc = QPSK.bits_per_symbol
    T = cfg.code_n // mc
    order = detection_order(G, cfg.order)
    mf = cfg.mf_config()
    idd_cfg = cfg.idd_config()
    frame_seeds = noise_ss.spawn(cfg.frames_per_realization)
    F = cfg.frames_per_realization
    units = T if cfg.uncoded else code.k
    out = RealizationResult(index=index, units=units)
    rate = 1.0 if cfg.uncoded else code.rate
    es = cfg.signal_power
    for f in range(F):
        if cfg.uncoded:
            idx = data_rng.integers(QPSK.order, size=(T, K))
            s = QPSK.points[idx] * np.sqrt(es)
        else:
            messages = data_rng.integers(0, 2, size=(K, code.k), dtype=np.uint8)
            _, s = transmit_frame(code, messages, cfg.interleaver_seed)
            s = s * np.sqrt(es)
        for snr in cfg.snr_db:
            try:
                nv = channel.noise_variance_for_snr(G, cfg.signal_power, rate, 10.0 ** (snr / 10.0))
            except DegenerateChannel as exc:
                for det in cfg.detectors:
                    out.failures[(det, snr)] = repr(exc)
                continue
            y = channel.apply_channel(G, s, nv, np.random.default_rng(frame_seeds[f]))
            for det in cfg.detectors:
                if (det, snr) in out.failures:
                    continue
                out.digests[(det, snr, f)] = _digest(y)
                t0 = time.perf_counter()
                try:
                    if cfg.uncoded:
                        if det == ML:
                            hard = exhaustive_ml(y / np.sqrt(es), G)
                        else:
                            ctx = DetectorContext(y, G, nv, es=es)
                            hard = detect(det, ctx, mf, order, cfg.sic_feedback).hard
                        errs = np.sum(modem.nearest_index(hard) != idx, axis=0)
                        out.errors.setdefault((det, snr, 0), np.zeros((F, K), dtype=np.int64))[f] = errs
                    else:
                        state = run_frame(y, G, nv, det, code, idd_cfg, mf, order,
                                          cfg.sic_feedback, es=es)
                        for it in cfg.idd_iterations:
                            errs = np.sum(state.decoded[it - 1] != messages, axis=1)
                            out.errors.setdefault((det, snr, it), np.zeros((F, K), dtype=np.int64))[f] = errs
                except _CELL_ERRORS as exc:
                    out.failures[(det, snr)] = f"realization {index}: {exc!r}"
                    log.warning("cell %s @ %s dB failed on realization %d: %s", det, snr, index, exc)
                out.elapsed[(det, snr)] = out.elapsed.get((det, snr), 0.0) + time.perf_counter() - t0
    return out


@dataclass
class SweepResult:
    records: list
    failures: dict
    cell_time: dict


_worker_state = {}


def _init_worker(cfg, code, positions):
    _worker_state.update(cfg=cfg, code=code, positions=positions)


def _worker(index):
    st = _worker_state
    return simulate_realization(st["cfg"], index, st["code"], st["positions"])


def iter_realizations(cfg, code=None):
    """Yield :class:`RealizationResult` for every realization, in index order."""
    if code is None and not cfg.uncoded:
        code = cfg.build_code()
    positions = fixed_positions(cfg) if cfg.freeze_geometry else None
    indices = range(cfg.realizations)
    if cfg.workers == 1:
        for i in indices:
            yield simulate_realization(cfg, i, code, positions)
        return
    with ProcessPoolExecutor(cfg.workers, initializer=_init_worker,
                             initargs=(cfg, code, positions)) as pool:
        yield from pool.map(_worker, indices, chunksize=max(1, cfg.realizations // (8 * cfg.workers)))


def run_sweep_detailed(cfg, progress=None):
    """Run the whole sweep and aggregate per-cell counters.

    ``progress(done, total)`` is called after each realization.
    """
    K = cfg.geometry.n_ue
    totals = {key: np.zeros(4, dtype=np.int64) for key in cfg.cells()}
    cell_time = {}
    failures = {}
    for n_done, res in enumerate(iter_realizations(cfg), start=1):
        for (det, snr), msg in res.failures.items():
            failures.setdefault((det, snr), msg)
        for key, errs in res.errors.items():
            if key not in totals:
                continue
            totals[key] += [errs.size * res.units, errs.sum(), errs.size, np.count_nonzero(errs)]
        for key, t in res.elapsed.items():
            cell_time[key] = cell_time.get(key, 0.0) + t
        if progress is not None:
            progress(n_done, cfg.realizations)
    records = []
    for det, snr, idd in cfg.cells():
        if (det, snr) in failures:
            continue
        bits, bit_err, frames, frame_err = (int(v) for v in totals[(det, snr, idd)])
        records.append(BerRecord(det, snr, idd, cfg.geometry.n_ap, K, bits, bit_err, frames, frame_err,
                                 elapsed=cell_time.get((det, snr), 0.0)))
    return SweepResult(records=records, failures=failures, cell_time=cell_time)


def run_sweep(cfg, progress=None):
    """Run the sweep described by ``cfg`` and return one :class:`BerRecord` per cell."""
    return run_sweep_detailed(cfg, progress).records
