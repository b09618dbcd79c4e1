import csv
import json
import subprocess
import sys

import pytest

from cfidd import cli
from cfidd.cli import ConfigError, emit_config, emit_csv, format_csv, main, parse_config, parse_snr
from cfidd.errors import ContractViolation
from cfidd.harness import BerRecord

SMALL = ["--l", "8", "--k", "2", "--snr", "0,10", "--realizations", "2", "--detector", "sic", "--quiet"]


def rec(det="sic", snr=0.0, idd=1, bits=256, errs=3):
    return BerRecord(det, snr, idd, 8, 2, bits, errs, 2, 1 if errs else 0)


class TestParseConfig:
    def test_empty_gives_defaults(self):
        cfg = parse_config(text="")
        g = cfg.geometry
        assert (g.area_side, g.d0, g.d1, g.h_ap, g.h_ue, g.freq_mhz) == (1000, 10, 50, 15, 1.65, 1900)
        assert cfg.d_th == 0.38
        assert (cfg.code_n, cfg.code_m) == (256, 128)
        assert cfg.ldpc_max_iter == 10
        assert cfg.signal_power == 1.0
        assert cfg.realizations == 1000
        assert cfg == parse_config()

    def test_sections_and_comments(self):
        cfg = parse_config(text="[channel]\nd0 = 12  # near\n\nsim.seed = 4\n")
        assert cfg.geometry.d0 == 12.0 and cfg.seed == 4

    def test_every_problem_reported(self):
        with pytest.raises(ConfigError) as err:
            parse_config(text="foo = 1\nsim.realizations = 0\ndetector.names = sic, zf\n")
        msgs = err.value.problems
        assert len(msgs) == 3
        assert any("'foo'" in m for m in msgs)
        assert any("sim.realizations" in m and ">= 1" in m for m in msgs)
        assert any("zf" in m for m in msgs)

    def test_malformed_line(self):
        with pytest.raises(ConfigError):
            parse_config(text="just words\n")

    def test_cross_field_violation(self):
        with pytest.raises(ConfigError):
            parse_config(text="channel.d0 = 80\n")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_config(tmp_path / "nope.cfg")

    def test_emit_round_trip(self):
        cfg = parse_config(text="sim.snr_db = -5:2.5:5\ndetector.d_th = inf\nsim.uncoded = yes\n"
                                "detector.names = ml, mmse\nidd.iterations = 2\n")
        assert parse_config(text=emit_config(cfg)) == cfg
        default = parse_config()
        assert parse_config(text=emit_config(default)) == default


class TestSnrRange:
    def test_range(self):
        assert parse_snr("-5:5:15") == (-5.0, 0.0, 5.0, 10.0, 15.0)

    def test_fractional_step(self):
        assert parse_snr("0:0.1:0.3") == (0.0, 0.1, 0.2, 0.3)

    def test_list(self):
        assert parse_snr("3, -1") == (3.0, -1.0)

    @pytest.mark.parametrize("bad", ["0:0:5", "5:1:0", "1:2", ""])
    def test_bad(self, bad):
        with pytest.raises(ValueError):
            parse_snr(bad)


class TestCsv:
    def test_one_record(self):
        text = format_csv([rec()])
        lines = text.split("\n")
        assert lines[0] == ",".join(cli.CSV_HEADER)
        assert len(lines) == 3 and lines[2] == ""
        assert "\r" not in text

    def test_ber_rederived_exactly(self):
        row = next(csv.DictReader(format_csv([rec(bits=3 * 128, errs=7)]).splitlines()))
        assert float(row["ber"]) == int(row["bit_errors"]) / int(row["bits"])

    def test_row_order(self):
        recs = [rec("sic", 5.0, 2), rec("mmse", 5.0, 1), rec("sic", -5.0, 1), rec("sic", 0.0, 2)]
        rows = list(csv.reader(format_csv(recs).splitlines()))[1:]
        assert [(r[0], r[2], r[1]) for r in rows] == [
            ("mmse", "1", "5.0"), ("sic", "1", "-5.0"), ("sic", "2", "0.0"), ("sic", "2", "5.0")]

    def test_empty(self):
        with pytest.raises(ContractViolation):
            format_csv([])

    def test_unwritable(self, tmp_path):
        target = tmp_path / "missing" / "out.csv"
        with pytest.raises(OSError, match="out.csv"):
            emit_csv([rec()], target)

    def test_byte_identical(self, tmp_path):
        emit_csv([rec(), rec("mmse")], tmp_path / "a.csv")
        emit_csv([rec("mmse"), rec()], tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


class TestMain:
    def test_run_writes_csv_and_manifest(self, tmp_path):
        out = tmp_path / "r.csv"
        assert main(SMALL + ["--out", str(out)]) == 0
        rows = list(csv.DictReader(out.read_text().splitlines()))
        assert len(rows) == 4
        man = json.loads((tmp_path / "r.csv.manifest.json").read_text())
        assert man["config"]["channel.n_ap"] == 8
        assert man["seed"] == 0
        assert man["started"] <= man["finished"]
        assert {c["detector"] for c in man["cell_runtime_s"]} == {"sic"}
        assert set(cli.KEYS) <= set(man["config"])

    def test_flag_beats_file_and_both_recorded(self, tmp_path):
        conf = tmp_path / "c.cfg"
        conf.write_text("sim.seed = 5\nchannel.n_ap = 8\nchannel.n_ue = 2\n")
        out = tmp_path / "r.csv"
        args = ["--config", str(conf), "--seed", "7", "--snr", "0", "--realizations", "1",
                "--detector", "mmse", "--quiet", "--out", str(out)]
        assert main(args) == 0
        man = json.loads((tmp_path / "r.csv.manifest.json").read_text())
        assert man["seed"] == 7
        assert man["overrides"]["sim.seed"] == {"file": "5", "flag": "7"}

    def test_negative_snr_range_flag(self, capsys):
        assert main(["--snr", "-5:5:15", "--print-config"]) == 0
        assert "sim.snr_db = -5.0, 0.0, 5.0, 10.0, 15.0" in capsys.readouterr().out

    def test_config_error_exit_code(self, capsys):
        assert main(["--detector", "zf", "--set", "bogus=1"]) == 2
        err = capsys.readouterr().err
        assert "bogus" in err and "zf" in err

    def test_runtime_error_exit_code(self, tmp_path):
        assert main(SMALL + ["--out", str(tmp_path / "nodir" / "x.csv")]) == 3

    def test_stdout_and_progress_to_stderr(self, capsys):
        args = [a for a in SMALL if a != "--quiet"]
        assert main(args) == 0
        cap = capsys.readouterr()
        assert cap.out.startswith("detector,snr_db")
        assert "realization" in cap.err and "realization" not in cap.out

    def test_uncoded_flag(self, capsys):
        assert main(["--uncoded", "--detector", "ml,mmse", "--l", "4", "--k", "2", "--snr", "5",
                     "--realizations", "2", "--quiet"]) == 0
        rows = list(csv.DictReader(capsys.readouterr().out.splitlines()))
        assert {r["idd_iters"] for r in rows} == {"0"}

    def test_module_entry_point(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "cfidd", "--version"], capture_output=True, text=True)
        assert proc.returncode == 0 and "cfidd" in proc.stdout
