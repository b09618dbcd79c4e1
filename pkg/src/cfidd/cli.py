"""Command-line front end: config resolution, sweep execution, CSV + manifest output.

Config files are flat ``key = value`` text.  Keys are dotted
(``channel.d0 = 10``); a ``[section]`` header prefixes the undotted keys
below it.
Lists are comma separated, ``#`` starts a comment.  Resolution order is
built-in defaults, then the file, then command-line flags.
"""

import argparse
import csv
import datetime
import io
import json
import logging
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .channel import GeometryConfig
from .detectors import DETECTORS, SIC_FEEDBACK
from .errors import ContractViolation
from .harness import ML, SimConfig, run_sweep_detailed

log = logging.getLogger(__name__)

CSV_HEADER = ("detector", "snr_db", "idd_iters", "L", "K", "bits", "bit_errors", "ber",
              "frames", "frame_errors", "fer")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists one message per offending key."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


# ---------------------------------------------------------------------------
# value parsers

def _int(text):
    return int(str(text).strip())


def _float(text):
    v = float(str(text).strip())
    if not np.isfinite(v) and str(text).strip().lower() not in ("inf", "+inf"):
        raise ValueError(f"{text!r} is not a finite number")
    return v


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"{text!r} is not a boolean")


def _str(text):
    t = str(text).strip()
    if len(t) >= 2 and t[0] == t[-1] and t[0] in "\"'":
        t = t[1:-1]
    return t


def _names(text):
    return tuple(p.strip() for p in str(text).split(",") if p.strip())


def _ints(text):
    return tuple(_int(p) for p in _names(text))


def parse_snr(text):
    """``"a,b,c"`` or ``"start:step:end"`` (end inclusive) to a tuple of dB values."""
    text = str(text).strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"range {text!r} is not START:STEP:END")
        start, step, end = (float(p) for p in parts)
        if step == 0 or (end - start) / step < 0:
            raise ValueError(f"range {text!r} is empty or never ends")
        n = int(np.floor((end - start) / step + 1e-9)) + 1
        return tuple(round(start + i * step, 9) for i in range(n))
    vals = tuple(_float(p) for p in _names(text))
    if not vals:
        raise ValueError("empty SNR list")
    return vals


# validators return an error message or None
def _positive(v):
    return None if v > 0 else "must be > 0"


def _at_least(lo):
    return lambda v: None if v >= lo else f"must be >= {lo}"


def _nonneg(v):
    return None if v >= 0 else "must be >= 0"


def _one_of(choices):
    return lambda v: None if v in choices else f"must be one of {', '.join(choices)}"


def _each(check):
    def inner(vals):
        if not vals:
            return "must not be empty"
        for x in vals:
            msg = check(x)
            if msg:
                return f"{x!r}: {msg}"
        return None
    return inner


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


_GEOM = {
    "channel.area_side": ("area_side", _float, _positive),
    "channel.d0": ("d0", _float, _positive),
    "channel.d1": ("d1", _float, _positive),
    "channel.h_ap": ("h_ap", _float, _positive),
    "channel.h_ue": ("h_ue", _float, _positive),
    "channel.freq_mhz": ("freq_mhz", _float, _positive),
    "channel.sigma_sh": ("sigma_sh", _float, _nonneg),
    "channel.n_ap": ("n_ap", _int, _at_least(1)),
    "channel.n_ue": ("n_ue", _int, _at_least(1)),
}

_SIM = {
    "code.n": ("code_n", _int, _at_least(2)),
    "code.m": ("code_m", _int, _at_least(1)),
    "code.seed": ("code_seed", _int, _nonneg),
    "code.alist": ("code_alist", _str, lambda v: None),
    "code.max_iter": ("ldpc_max_iter", _int, _at_least(1)),
    "idd.iterations": ("idd_iterations", _ints, _each(_at_least(1))),
    "idd.interleaver_seed": ("interleaver_seed", _int, _nonneg),
    "detector.names": ("detectors", _names, _each(_one_of(DETECTORS + (ML,)))),
    "detector.order": ("order", _str, _one_of(("natural", "norm"))),
    "detector.sic_feedback": ("sic_feedback", _str, _one_of(SIC_FEEDBACK)),
    "detector.d_th": ("d_th", _float, _nonneg),
    "detector.candidates": ("candidates", _int, _at_least(1)),
    "sim.snr_db": ("snr_db", parse_snr, lambda v: None if v else "must not be empty"),
    "sim.realizations": ("realizations", _int, _at_least(1)),
    "sim.frames_per_realization": ("frames_per_realization", _int, _at_least(1)),
    "sim.seed": ("seed", _int, _nonneg),
    "sim.signal_power": ("signal_power", _float, _positive),
    "sim.freeze_geometry": ("freeze_geometry", _bool, lambda v: None),
    "sim.uncoded": ("uncoded", _bool, lambda v: None),
    "sim.workers": ("workers", _int, _at_least(1)),
}

KEYS = tuple(_GEOM) + tuple(_SIM)


def read_config_text(text, source="<config>"):
    """Split config text into a ``{dotted key: raw string}`` mapping."""
    raw = {}
    problems = []
    section = ""
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            problems.append(f"{source}:{lineno}: expected 'key = value', got {line!r}")
            continue
        key, value = (p.strip() for p in line.split("=", 1))
        if section and "." not in key:
            key = f"{section}.{key}"
        raw[key] = value
    if problems:
        raise ConfigError(problems)
    return raw


def build_config(raw):
    """Validate a raw mapping layered over the defaults and build a :class:`SimConfig`.

    Every unknown key and every invalid value is reported, not just the
    first one.
    """
    problems = []
    geom_kw, sim_kw = {}, {}
    for key, text in raw.items():
        if key in _GEOM:
            field_name, parse, check = _GEOM[key]
            target = geom_kw
        elif key in _SIM:
            field_name, parse, check = _SIM[key]
            target = sim_kw
        else:
            problems.append(f"unknown key {key!r}")
            continue
        try:
            value = parse(text)
        except (TypeError, ValueError) as exc:
            problems.append(f"{key}: cannot parse {text!r} ({exc})")
            continue
        msg = check(value)
        if msg:
            problems.append(f"{key} = {text}: {msg}")
            continue
        target[field_name] = value
    if problems:
        raise ConfigError(problems)
    try:
        geom = GeometryConfig(**geom_kw)
    except (ContractViolation, ValueError) as exc:
        raise ConfigError([f"channel: {exc}"]) from None
    try:
        return SimConfig(geometry=geom, **sim_kw)
    except (ContractViolation, ValueError) as exc:
        raise ConfigError([str(exc)]) from None


def parse_config(path=None, text=None):
    """Build a :class:`SimConfig` from a config file, config text, or the defaults."""
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError([f"cannot read config {path}: {exc.strerror}"]) from None
    if text is None:
        return build_config({})
    return build_config(read_config_text(text, str(path or "<config>")))


def config_items(cfg):
    """``{dotted key: value}`` for every setting of ``cfg``, defaults included."""
    out = {}
    for key, (name, _, _) in _GEOM.items():
        out[key] = getattr(cfg.geometry, name)
    for key, (name, _, _) in _SIM.items():
        out[key] = getattr(cfg, name)
    return out


def emit_config(cfg):
    """Config text that :func:`parse_config` turns back into ``cfg``."""
    lines = [f"{key} = {_fmt(value)}" for key, value in config_items(cfg).items()]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# output

def format_csv(records):
    if not records:
        raise ContractViolation("no records to write")
    rows = sorted(records, key=lambda r: (r.detector, r.idd_iterations, r.snr_db))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([r.detector, repr(float(r.snr_db)), r.idd_iterations, r.n_ap, r.n_ue, r.bits,
                    r.bit_errors, repr(r.ber), r.frames, r.frame_errors, repr(r.fer)])
    return buf.getvalue()


def emit_csv(records, path):
    """Write records as CSV to ``path`` (``"-"`` for standard output)."""
    text = format_csv(records)
    if str(path) == "-":
        sys.stdout.write(text)
        return
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write CSV to {path}: {exc.strerror}") from None


def version_string():
    """Package version, with ``git describe`` appended when run from a checkout."""
    try:
        desc = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                              text=True, timeout=5, cwd=Path(__file__).resolve().parent)
        if desc.returncode == 0 and desc.stdout.strip():
            return f"{__version__}+g{desc.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def build_manifest(cfg, sweep, started, finished, overrides=None):
    items = {k: (list(v) if isinstance(v, tuple) else v) for k, v in config_items(cfg).items()}
    return {
        "version": version_string(),
        "seed": cfg.seed,
        "started": started,
        "finished": finished,
        "config": items,
        "overrides": overrides or {},
        "cell_runtime_s": [
            {"detector": det, "snr_db": snr, "seconds": round(t, 6)}
            for (det, snr), t in sorted(sweep.cell_time.items())
        ],
        "failed_cells": [
            {"detector": det, "snr_db": snr, "error": msg}
            for (det, snr), msg in sorted(sweep.failures.items())
        ],
    }


# ---------------------------------------------------------------------------
# entry point

_FLAG_KEYS = {
    "detector": "detector.names",
    "snr": "sim.snr_db",
    "idd": "idd.iterations",
    "realizations": "sim.realizations",
    "seed": "sim.seed",
    "l": "channel.n_ap",
    "k": "channel.n_ue",
    "order": "detector.order",
    "workers": "sim.workers",
}


def make_parser():
    p = argparse.ArgumentParser(prog="cfidd", description="BER sweeps for coded cell-free massive MIMO uplink "
                                "with iterative detection and decoding.")
    p.add_argument("--config", metavar="PATH", help="flat key = value config file")
    p.add_argument("--detector", metavar="NAME[,NAME...]", help=f"any of {', '.join(DETECTORS)}")
    p.add_argument("--snr", metavar="LIST|START:STEP:END", help="SNR grid in dB")
    p.add_argument("--idd", metavar="N[,N...]", help="IDD iteration counts to report")
    p.add_argument("--realizations", metavar="N")
    p.add_argument("--seed", metavar="N")
    p.add_argument("--l", metavar="N", help="number of access points")
    p.add_argument("--k", metavar="N", help="number of users")
    p.add_argument("--order", choices=("natural", "norm"), help="SIC detection order")
    p.add_argument("--workers", metavar="N", help="worker processes")
    p.add_argument("--uncoded", action="store_true", help="bypass LDPC and count symbol errors")
    p.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                   help="override any config key (repeatable)")
    p.add_argument("--out", metavar="PATH", default="-", help="CSV destination (default: stdout)")
    p.add_argument("--manifest", metavar="PATH",
                   help="run manifest destination (default: OUT.manifest.json)")
    p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    p.add_argument("--quiet", action="store_true", help="no progress output")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def _join_values(argv):
    # lets "--snr -5:5:15" through argparse, which takes "-5:..." for an option
    out = []
    it = iter(argv)
    for a in it:
        if a in ("--snr", "--set"):
            nxt = next(it, None)
            out.append(a if nxt is None else f"{a}={nxt}")
        else:
            out.append(a)
    return out


def resolve(args):
    """Layer defaults, config file and flags.  Returns ``(cfg, overrides)``.

    ``overrides`` maps every key set both in the file and by a flag to
    ``{"file": ..., "flag": ...}``.
    """
    raw = {}
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError([f"cannot read config {args.config}: {exc.strerror}"]) from None
        raw = read_config_text(text, args.config)
    flags = {}
    for name, key in _FLAG_KEYS.items():
        val = getattr(args, name)
        if val is not None:
            flags[key] = str(val)
    if args.uncoded:
        flags["sim.uncoded"] = "true"
    problems = []
    for item in args.set:
        if "=" not in item:
            problems.append(f"--set {item!r}: expected KEY=VALUE")
            continue
        k, v = (p.strip() for p in item.split("=", 1))
        flags[k] = v
    if problems:
        raise ConfigError(problems)
    overrides = {k: {"file": raw[k], "flag": v} for k, v in flags.items() if k in raw and raw[k] != v}
    return build_config({**raw, **flags}), overrides


def _progress(quiet):
    if quiet:
        return None
    t0 = time.perf_counter()
    step = {"last": 0.0}

    def report(done, total):
        now = time.perf_counter()
        if done == total or now - step["last"] > 1.0:
            step["last"] = now
            print(f"\rrealization {done}/{total}  {now - t0:7.1f} s", end="", file=sys.stderr, flush=True)
            if done == total:
                print(file=sys.stderr)
    return report


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def main(argv=None):
    args = make_parser().parse_args(_join_values(sys.argv[1:] if argv is None else list(argv)))
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg, overrides = resolve(args)
    except ConfigError as exc:
        for msg in exc.problems:
            print(f"config error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    if args.print_config:
        sys.stdout.write(emit_config(cfg))
        return EXIT_OK
    started = _now()
    try:
        sweep = run_sweep_detailed(cfg, _progress(args.quiet))
        if not sweep.records:
            raise RuntimeError("every cell failed: " + "; ".join(sweep.failures.values()))
        emit_csv(sweep.records, args.out)
        manifest_path = args.manifest or (None if args.out == "-" else f"{args.out}.manifest.json")
        if manifest_path:
            manifest = build_manifest(cfg, sweep, started, _now(), overrides)
            try:
                Path(manifest_path).write_text(json.dumps(manifest, indent=2) + "\n")
            except OSError as exc:
                raise OSError(exc.errno, f"cannot write manifest to {manifest_path}: {exc.strerror}") from None
    except (OSError, RuntimeError, ArithmeticError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for (det, snr), msg in sorted(sweep.failures.items()):
        print(f"warning: cell {det} @ {snr} dB dropped: {msg}", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
