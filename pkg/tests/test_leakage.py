import math
import statistics

import numpy as np
import pytest

from hwgn2 import leakage as lk
from hwgn2.mips import assemble
from hwgn2.mips.emulator import CpuStepConfig
from hwgn2.protocol import instruction_trace

CPU = CpuStepConfig(dmem_words=16, include_mult=False)
PROG = assemble("""
.input 0 1
.output 1 1
lw r1, 0(r0)
addi r2, r1, 5
xor r3, r2, r1
sw r3, 1(r0)
halt
""")
T = len(instruction_trace(PROG, CPU, 1000))


def synthetic(fixed_rows, random_rows):
    rows = fixed_rows + random_rows
    pops = [0] * len(fixed_rows) + [1] * len(random_rows)
    return lk.TraceSet(traces=np.array(rows, dtype=np.float32),
                       populations=np.array(pops, dtype=np.uint8),
                       samples_per_step=1)


class TestWelchT:
    def test_matches_independent_computation(self):
        f = [[1.0], [2.0], [4.0], [1.5]]
        r = [[7.0], [9.0], [6.0], [8.0], [10.0]]
        got = lk.welch_t(synthetic(f, r)).t[0]
        m0 = statistics.fmean(v[0] for v in f)
        m1 = statistics.fmean(v[0] for v in r)
        v0 = statistics.variance([v[0] for v in f])
        v1 = statistics.variance([v[0] for v in r])
        want = (m0 - m1) / math.sqrt(v0 / len(f) + v1 / len(r))
        assert got == pytest.approx(want, rel=1e-12)

    def test_constant_equal_populations_score_zero(self):
        ts = synthetic([[3.0]] * 4, [[3.0]] * 4)
        assert lk.welch_t(ts).t[0] == 0.0

    def test_constant_unequal_populations_score_infinite(self):
        ts = synthetic([[3.0]] * 4, [[5.0]] * 4)
        assert np.isinf(lk.welch_t(ts).t[0])

    def test_n_squared_variant_differs(self):
        rng = np.random.default_rng(1)
        ts = synthetic(rng.normal(0, 1, (10, 3)).tolist(),
                       rng.normal(1, 1, (12, 3)).tolist())
        std = lk.welch_t(ts).t
        var = lk.welch_t(ts, variant="n-squared").t
        assert not np.allclose(std, var)
        # dividing by n^2 inflates the scores for n > 1
        assert np.all(np.abs(var) > np.abs(std))

    def test_unknown_variant_rejected(self):
        with pytest.raises(lk.LeakageError):
            lk.welch_t(synthetic([[1.0]] * 2, [[2.0]] * 2), variant="pooled")

    def test_requires_two_traces_per_population(self):
        with pytest.raises(lk.LeakageError):
            lk.welch_t(synthetic([[1.0]], [[2.0]] * 3))


class TestVerdict:
    def test_threshold_is_4_5(self):
        assert lk.TVLA_THRESHOLD == 4.5

    def test_exceeding_sample_flags_leak(self):
        s = lk.TScoreSeries(t=np.array([0.3, -4.6, 1.0]), n_fixed=5, n_random=5)
        v = lk.tvla_verdict(s)
        assert v.leaks and v.n_exceeding == 1
        assert v.max_abs_t == pytest.approx(4.6)

    def test_below_threshold_passes(self):
        s = lk.TScoreSeries(t=np.array([4.4, -4.4]), n_fixed=5, n_random=5)
        assert not lk.tvla_verdict(s).leaks


class TestCampaigns:
    def test_unprotected_target_leaks(self):
        ts = lk.make_campaign(PROG, CPU, "unprotected", 100, [0xFFFFFFFF],
                              lk.LeakageModel(noise_sigma=1.0), seed=3)
        assert lk.tvla_verdict(lk.welch_t(ts)).leaks

    def test_garbled_target_passes(self):
        ts = lk.make_campaign(PROG, CPU, "garbled", 40, [0xFFFFFFFF],
                              lk.LeakageModel(noise_sigma=1.0), seed=3)
        assert not lk.tvla_verdict(lk.welch_t(ts)).leaks

    def test_reused_seed_negative_control_leaks(self):
        # noiseless reuse of one garbling must light up the t-test; this is
        # the power check showing a pass on fresh garbling is meaningful
        ts = lk.make_campaign(PROG, CPU, "garbled-reused-seed", 40,
                              [0xFFFFFFFF], lk.LeakageModel(noise_sigma=0.0),
                              seed=3)
        assert lk.tvla_verdict(lk.welch_t(ts)).leaks

    def test_sample_count_is_steps_times_slots(self):
        model = lk.LeakageModel(noise_sigma=0.5, samples_per_step=3)
        ts = lk.make_campaign(PROG, CPU, "unprotected", 10, [1], model, seed=0)
        assert ts.traces.shape == (10, T * 3)

    def test_deterministic_with_seed(self):
        a = lk.make_campaign(PROG, CPU, "unprotected", 12, [5], seed=9)
        b = lk.make_campaign(PROG, CPU, "unprotected", 12, [5], seed=9)
        assert np.array_equal(a.traces, b.traces)
        assert np.array_equal(a.populations, b.populations)

    def test_populations_are_balanced(self):
        ts = lk.make_campaign(PROG, CPU, "unprotected", 20, [5], seed=1)
        assert int(ts.populations.sum()) == 10

    def test_bad_target_rejected(self):
        with pytest.raises(lk.LeakageError, match="unknown target"):
            lk.make_campaign(PROG, CPU, "masked", 10, [5])

    def test_fixed_input_width_checked(self):
        with pytest.raises(lk.LeakageError):
            lk.make_campaign(PROG, CPU, "unprotected", 10, [1, 2])


class TestModel:
    def test_negative_sigma_rejected(self):
        with pytest.raises(lk.LeakageError):
            lk.LeakageModel(noise_sigma=-1.0)

    def test_zero_slots_rejected(self):
        with pytest.raises(lk.LeakageError):
            lk.LeakageModel(samples_per_step=0)


class TestTraceFiles:
    def make_set(self):
        rng = np.random.default_rng(4)
        return lk.TraceSet(traces=rng.normal(0, 1, (6, 9)).astype(np.float32),
                           populations=np.array([0, 1, 0, 1, 0, 1], np.uint8),
                           samples_per_step=3)

    def test_round_trip(self, tmp_path):
        ts = self.make_set()
        path = tmp_path / "run.trc"
        lk.export_traces(ts, path)
        back = lk.import_traces(path)
        assert np.array_equal(back.traces, ts.traces)
        assert np.array_equal(back.populations, ts.populations)

    def test_header_layout(self, tmp_path):
        path = tmp_path / "run.trc"
        lk.export_traces(self.make_set(), path)
        data = path.read_bytes()
        assert data[:8] == b"HWGN2TRC"
        assert data[8] == 1
        assert int.from_bytes(data[9:13], "little") == 6
        assert int.from_bytes(data[13:17], "little") == 9
        assert len(data) == 17 + 6 + 4 * 6 * 9

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.trc"
        path.write_bytes(b"NOTTRACE" + bytes(20))
        with pytest.raises(lk.LeakageError, match="magic"):
            lk.import_traces(path)

    def test_unsupported_version_rejected(self, tmp_path):
        path = tmp_path / "v9.trc"
        lk.export_traces(self.make_set(), path)
        data = bytearray(path.read_bytes())
        data[8] = 9
        path.write_bytes(bytes(data))
        with pytest.raises(lk.LeakageError, match="version"):
            lk.import_traces(path)

    def test_truncation_reports_byte_offset(self, tmp_path):
        path = tmp_path / "cut.trc"
        lk.export_traces(self.make_set(), path)
        data = path.read_bytes()[:40]
        path.write_bytes(data)
        with pytest.raises(lk.LeakageError, match="byte 40"):
            lk.import_traces(path)
