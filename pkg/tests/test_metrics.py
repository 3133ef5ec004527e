import numpy as np
import pytest

from clearwave.audio import AudioBuffer
from clearwave.metrics import (
    EvalReport,
    EvalRow,
    evaluate_pair,
    log_spectral_distance,
    si_sdr_db,
)

FS = 16000


def noise(n=FS, seed=0, scale=0.2):
    return np.random.default_rng(seed).normal(size=n) * scale


class TestSiSdr:
    def test_identical_capped(self):
        x = noise()
        assert si_sdr_db(x, x.copy()) == 100.0

    def test_scale_invariance(self):
        x = noise(seed=1)
        assert si_sdr_db(0.5 * x, x) == 100.0
        assert si_sdr_db(3.0 * x, x) == 100.0

    def test_orthogonal_perturbation_zero_db(self):
        # est = ref + e with e orthogonal to ref and |e| == |a ref|
        rng = np.random.default_rng(2)
        ref = rng.normal(size=FS)
        e = rng.normal(size=FS)
        e -= ref * np.dot(e, ref) / np.dot(ref, ref)
        e *= np.sqrt(np.dot(ref, ref) / np.dot(e, e))
        est = ref + e
        assert si_sdr_db(est, ref) == pytest.approx(0.0, abs=1e-9)

    def test_known_snr_construction(self):
        rng = np.random.default_rng(3)
        ref = rng.normal(size=FS)
        e = rng.normal(size=FS)
        e -= ref * np.dot(e, ref) / np.dot(ref, ref)
        e *= np.sqrt(np.dot(ref, ref) / np.dot(e, e)) / np.sqrt(10.0)
        assert si_sdr_db(ref + e, ref) == pytest.approx(10.0, abs=1e-9)

    def test_silent_reference_rejected(self):
        with pytest.raises(ValueError, match="silent"):
            si_sdr_db(noise(), np.zeros(FS))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            si_sdr_db(np.zeros(10), np.zeros(11))


class TestLsd:
    def test_identical_zero(self):
        x = noise(seed=4)
        assert log_spectral_distance(x, x.copy()) == pytest.approx(0.0, abs=1e-9)

    def test_constant_ratio(self):
        # broadband signal keeps every bin well above the epsilon guard
        x = noise(seed=5, scale=0.5)
        d = log_spectral_distance(2.0 * x, x)
        assert d == pytest.approx(20 * np.log10(2.0), abs=0.01)

    def test_symmetric(self):
        a, b = noise(seed=6), noise(seed=7)
        assert log_spectral_distance(a, b) == pytest.approx(
            log_spectral_distance(b, a), abs=1e-9
        )


class TestReport:
    def test_aggregate_recomputable(self, tmp_path):
        rows = tuple(
            EvalRow(f"f{i}", si_sdr_db=float(i), snr_db=float(2 * i), lsd_db=float(i) / 2)
            for i in range(5)
        )
        report = EvalReport(rows)
        agg = report.aggregate()
        vals = np.array([r.si_sdr_db for r in rows])
        assert agg["si_sdr_db"]["mean"] == pytest.approx(vals.mean())
        expected_ci = 1.96 * vals.std(ddof=1) / np.sqrt(len(vals))
        assert agg["si_sdr_db"]["ci95"] == pytest.approx(expected_ci)
        path = tmp_path / "report.tsv"
        report.write(path)
        text = path.read_text()
        assert text.startswith("name\tsi_sdr_db")
        assert "#mean_si_sdr_db" in text

    def test_report_bytes_deterministic(self, tmp_path):
        rows = tuple(EvalRow(f"f{i}", 1.5 * i, 2.0, 3.0) for i in range(3))
        p1, p2 = tmp_path / "a.tsv", tmp_path / "b.tsv"
        EvalReport(rows).write(p1)
        EvalReport(rows).write(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_evaluate_pair_trims_lengths(self):
        a = AudioBuffer(noise(FS, seed=8))
        b = AudioBuffer(noise(FS - 100, seed=8))
        row = evaluate_pair("x", a, b)
        assert np.isfinite(row.si_sdr_db)
