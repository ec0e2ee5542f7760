import json
import tempfile
import unittest
from pathlib import Path

import numpy as np

from earcardio.errors import ConstantInput, EmptyInput, LengthMismatch, TooFewCycles, TooFewSets
from earcardio.fiducial import FiducialSet
from earcardio.metrics import (
    Grouping,
    cycle_variability,
    error_percentiles,
    fiducial_variability,
    mean_pearson,
    pearson,
    summarize_timing_errors,
    timing_errors,
    write_cdf_csv,
)
from earcardio.synth import SynthConfig, generate_session
from earcardio.utils import provenance_sidecar


class PearsonTests(unittest.TestCase):
    def test_known_values(self):
        a = np.random.default_rng(0).normal(size=50)
        self.assertAlmostEqual(pearson(a, a), 1.0, delta=1e-12)
        self.assertAlmostEqual(pearson(a, -a), -1.0, delta=1e-12)
        self.assertAlmostEqual(pearson([1, 2, 3], [1, 2, 4]), 0.981981, delta=1e-5)

    def test_errors(self):
        with self.assertRaises(LengthMismatch):
            pearson([1, 2, 3], [1, 2])
        with self.assertRaises(ConstantInput):
            pearson([1, 1, 1], [1, 2, 3])

    def test_mean_pearson(self):
        a = np.arange(10.0)
        self.assertAlmostEqual(mean_pearson([a, a], [a, -a]), 0.0, delta=1e-12)
        with self.assertRaises(EmptyInput):
            mean_pearson([], [])


class CycleVariabilityTests(unittest.TestCase):
    def test_identical(self):
        x = np.sin(np.arange(400) / 10.0)
        report = cycle_variability([x] * 4)
        self.assertAlmostEqual(report.mean_r, 1.0, delta=1e-12)
        self.assertAlmostEqual(report.std_r, 0.0, delta=1e-12)

    def test_pair_count(self):
        rng = np.random.default_rng(1)
        for n in (2, 5, 7):
            report = cycle_variability([rng.normal(size=400) for _ in range(n)], Grouping.INTER_USER)
            self.assertEqual(report.n_pairs, n * (n - 1) // 2)
            self.assertEqual(report.grouping, Grouping.INTER_USER)

    def test_format(self):
        text = str(cycle_variability([np.arange(5.0), np.arange(5.0)], "InterDevice"))
        self.assertEqual(text, "InterDevice: 1.00 ± 0.00 (1 pairs)")

    def test_too_few(self):
        with self.assertRaises(TooFewCycles):
            cycle_variability([np.arange(5.0)])


class FiducialVariabilityTests(unittest.TestCase):
    def test_identical(self):
        s = FiducialSet(80, 90, 100, 110, 120)
        self.assertEqual(set(fiducial_variability([s, s, s]).values()), {0.0})

    def test_two_sets(self):
        result = fiducial_variability([FiducialSet(80, 90, 100, 110, 120), FiducialSet(78, 90, 100, 110, 120), None])
        self.assertEqual(result, {"ao_mc": 2.0, "ao_im": 0.0, "ao_ma": 0.0, "ao_re": 0.0})

    def test_recovers_injected_jitter(self):
        _, truth = generate_session(SynthConfig(duration_s=162.0, fiducial_jitter_ms=3.0))
        sets = [truth.fiducial_set(b, 0) for b in range(len(truth.beat_times_s))]
        self.assertGreaterEqual(len(sets), 200)
        self.assertAlmostEqual(fiducial_variability(sets)["ao_mc"], 3.0, delta=0.5)

    def test_too_few(self):
        with self.assertRaises(TooFewSets):
            fiducial_variability([FiducialSet(80, 90, 100, 110, 120), None])


class PercentileTests(unittest.TestCase):
    def test_values(self):
        self.assertEqual(error_percentiles([0, 2, 4]).median, 2.0)
        constant = error_percentiles([4.0] * 100)
        self.assertEqual((constant.median, constant.p95), (4.0, 4.0))
        self.assertEqual(constant.cdf, [(4.0, 1.0)])
        uniform = error_percentiles(list(range(100)))
        self.assertAlmostEqual(uniform.median, 49.5)
        self.assertAlmostEqual(uniform.p95, 94.05)

    def test_empty(self):
        with self.assertRaises(EmptyInput):
            error_percentiles([])


class TimingErrorTableTests(unittest.TestCase):
    def test_common_ids_only(self):
        truth = {0: FiducialSet(80, 90, 100, 110, 120), 1: FiducialSet(80, 90, 100, 110, 120)}
        pred = {1: FiducialSet(81, 90, 100, 110, 122), 2: FiducialSet(1, 2, 3, 4, 5)}
        errors = timing_errors(pred, truth)
        self.assertEqual(errors["mc"], [2.0])
        self.assertEqual(errors["re"], [4.0])
        summary = summarize_timing_errors(errors)
        self.assertEqual(summary["ao"], {"median_ms": 0.0, "p95_ms": 0.0, "n": 1})

    def test_disjoint(self):
        with self.assertRaises(EmptyInput):
            timing_errors({0: FiducialSet(1, 2, 3, 4, 5)}, {1: FiducialSet(1, 2, 3, 4, 5)})

    def test_cdf_csv(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "cdf.csv"
            write_cdf_csv(path, {"ao": [0.0, 2.0, 2.0, 4.0]})
            lines = path.read_text().splitlines()
        self.assertEqual(lines[0], "fiducial,error_ms,cdf")
        self.assertEqual(lines[1:], ["ao,0.0000,0.250000", "ao,2.0000,0.750000", "ao,4.0000,1.000000"])

    def test_cdf_csv_provenance_sidecar(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "cdf.csv"
            write_cdf_csv(path, {"ao": [1.0]}, {"tool": "earcardio", "config_hash": "abc"})
            sidecar = json.loads(provenance_sidecar(path).read_text())
        self.assertEqual(sidecar["artifact"], "cdf.csv")
        self.assertEqual(sidecar["provenance"]["config_hash"], "abc")


if __name__ == "__main__":
    unittest.main()
