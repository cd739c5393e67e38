import json
import random
import threading

import pytest

from hwgn2.cli import main
from hwgn2.leakage import import_traces
from hwgn2.mips import assemble, disassemble, run_plain
from hwgn2.nncompile import MlpModel, Q_ONE, save_model, step_config_for

COPY_ASM = """
.input 0 1
.output 1 1
lw r1, 0(r0)
addi r2, r1, 5
sw r2, 1(r0)
halt
"""


def parse_report(captured: str) -> dict:
    lines = captured.splitlines()
    end = lines.index("}")
    return json.loads("\n".join(lines[:end + 1]))


@pytest.fixture
def prog_file(tmp_path):
    path = tmp_path / "prog.asm"
    path.write_text(disassemble(assemble(COPY_ASM)))
    return str(path)


@pytest.fixture
def model_file(tmp_path):
    rng = random.Random(1)
    sizes = [32, 4, 2]
    ws = [[[rng.randint(-Q_ONE, Q_ONE) for _ in range(sizes[l])]
           for _ in range(sizes[l + 1])] for l in range(2)]
    bs = [[rng.randint(-64, 64) for _ in range(sizes[l + 1])]
          for l in range(2)]
    m = MlpModel(sizes, ws, bs, ["relu", "none"])
    path = tmp_path / "model.json"
    save_model(m, path)
    return str(path)


class TestCompile:
    def test_compiles_and_reports_counts(self, model_file, tmp_path, capsys):
        out = str(tmp_path / "out.asm")
        assert main(["compile", model_file, "-o", out]) == 0
        report = parse_report(capsys.readouterr().out)
        prog = assemble((tmp_path / "out.asm").read_text())
        assert report["instructions"] == len(prog) > 0

    def test_bnn_emits_fewer_instructions(self, model_file, tmp_path, capsys):
        counts = {}
        for flag in ([], ["--bnn"]):
            out = str(tmp_path / f"o{len(flag)}.asm")
            assert main(["compile", model_file, "-o", out] + flag) == 0
            counts[bool(flag)] = parse_report(capsys.readouterr().out)[
                "instructions"]
        assert counts[True] < counts[False]

    def test_malformed_model_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{ nope }")
        assert main(["compile", str(bad), "-o", str(tmp_path / "x.asm")]) == 2

    def test_missing_model_exits_2(self, tmp_path):
        assert main(["compile", str(tmp_path / "none.json"),
                     "-o", str(tmp_path / "x.asm")]) == 2


class TestRun:
    def test_loopback_matches_plain_cpu(self, prog_file, capsys):
        assert main(["run", prog_file, "--loopback", "--input", "41",
                     "--seed", "ab"]) == 0
        report = parse_report(capsys.readouterr().out)
        prog = assemble(COPY_ASM)
        expect = run_plain(prog, step_config_for(prog), [41]).outputs
        assert report["y"] == [v & 0xFFFFFFFF for v in expect] == [46]
        assert report["verdict"] == "OK"

    def test_stream_rounds_reported(self, prog_file, capsys):
        assert main(["run", prog_file, "--loopback", "--input", "1",
                     "--mode", "stream:1", "--seed", "ab"]) == 0
        report = parse_report(capsys.readouterr().out)
        T = len(assemble(COPY_ASM).instructions)
        assert report["comm_stats"]["ot_rounds"] == T + 2
        assert report["side_info"]["step_count"] == T

    def test_malicious_honest_verdict_ok(self, prog_file, capsys):
        assert main(["run", prog_file, "--loopback", "--input", "9",
                     "--security", "malicious:4", "--seed", "cd"]) == 0
        report = parse_report(capsys.readouterr().out)
        assert report["verdict"] == "OK" and report["y"] == [14]

    def test_deterministic_given_seed(self, prog_file, capsys):
        reports = []
        for _ in range(2):
            assert main(["run", prog_file, "--loopback", "--input", "5",
                         "--seed", "ee"]) == 0
            rep = parse_report(capsys.readouterr().out)
            del rep["seconds"]
            reports.append(rep)
        assert reports[0] == reports[1]

    def test_tcp_session(self, prog_file, capsys):
        port = 39411
        g_rc = {}

        def garbler():
            g_rc["rc"] = main(["run", prog_file, "--listen",
                               f"127.0.0.1:{port}", "--seed", "ab"])

        th = threading.Thread(target=garbler, daemon=True)
        th.start()
        import time
        for _ in range(50):
            time.sleep(0.1)
            rc = main(["run", "--connect", f"127.0.0.1:{port}",
                       "--input", "41", "--seed", "ab"])
            if rc != 1:
                break
        th.join(timeout=60)
        assert rc == 0 and g_rc["rc"] == 0
        out = capsys.readouterr().out
        assert '"y": [\n    46\n  ]' in out or '"y": [46]' in out

    def test_wrong_input_count_exits_2(self, prog_file):
        assert main(["run", prog_file, "--loopback", "--input", "1,2"]) == 2

    def test_endpoint_flags_are_exclusive(self, prog_file):
        assert main(["run", prog_file, "--loopback",
                     "--listen", "1.2.3.4:1", "--input", "1"]) == 2

    def test_bad_mode_exits_2(self, prog_file):
        assert main(["run", prog_file, "--loopback", "--input", "1",
                     "--mode", "express"]) == 2


class TestAccount:
    def test_stream_one_rounds(self, prog_file, capsys):
        assert main(["account", prog_file, "--mode", "stream:1"]) == 0
        report = parse_report(capsys.readouterr().out)
        assert report["predicted"]["ot_rounds"] == report["steps"] + 2

    def test_full_mode_two_rounds(self, prog_file, capsys):
        assert main(["account", prog_file, "--mode", "full"]) == 0
        assert parse_report(capsys.readouterr().out)[
            "predicted"]["ot_rounds"] == 2


class TestLeakage:
    def test_unprotected_fails_and_writes_artifacts(self, prog_file,
                                                    tmp_path, capsys):
        stem = str(tmp_path / "camp")
        rc = main(["leakage", prog_file, "--target", "unprotected",
                   "--traces", "60", "--sigma", "1.0", "--out", stem,
                   "--seed", "07"])
        assert rc == 1
        report = parse_report(capsys.readouterr().out)
        assert report["verdict"] == "FAIL"
        fixed = import_traces(tmp_path / "camp_fixed.trc")
        rand = import_traces(tmp_path / "camp_random.trc")
        assert fixed.n_traces + rand.n_traces == 60
        assert fixed.n_samples == rand.n_samples == report["samples"]
        csv = (tmp_path / "camp_tscores.csv").read_text().splitlines()
        assert csv[0] == "sample,t"
        assert len(csv) == report["samples"] + 1

    def test_garbled_passes(self, prog_file, tmp_path, capsys):
        rc = main(["leakage", prog_file, "--target", "garbled",
                   "--traces", "40", "--sigma", "1.0",
                   "--out", str(tmp_path / "g"), "--seed", "07"])
        assert rc == 0
        assert parse_report(capsys.readouterr().out)["verdict"] == "PASS"

    def test_reused_seed_control_fails(self, prog_file, tmp_path, capsys):
        rc = main(["leakage", prog_file, "--target", "garbled-reused-seed",
                   "--traces", "40", "--sigma", "0.0",
                   "--out", str(tmp_path / "r"), "--seed", "07"])
        assert rc == 1
        assert parse_report(capsys.readouterr().out)["verdict"] == "FAIL"

    def test_unknown_target_rejected_by_parser(self, prog_file, tmp_path):
        with pytest.raises(SystemExit):
            main(["leakage", prog_file, "--target", "masked",
                  "--out", str(tmp_path / "x")])
