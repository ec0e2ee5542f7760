import json
import tempfile
import unittest
from dataclasses import replace
from pathlib import Path

import numpy as np

from earcardio.errors import InvalidConfig
from earcardio.fiducial import FIDUCIAL_NAMES
from earcardio.segmentation import CYCLE_LEN, CYCLE_PRE
from earcardio.synth import (
    MotionEvent,
    MotionKind,
    PerturbDimension,
    SynthConfig,
    generate_gate_corpus,
    generate_session,
    perturb,
    write_truth,
)
from earcardio.waveform import Modality


class GenerateSessionTests(unittest.TestCase):
    def test_beat_count(self):
        _, truth = generate_session(SynthConfig(duration_s=60.0, heart_rate_bpm=75.0))
        self.assertAlmostEqual(len(truth.beat_times_s), 75, delta=1)

    def test_deterministic(self):
        cfg = SynthConfig(seed=7, duration_s=10.0, music_db=-10.0, hr_jitter_pct=3.0)
        a, _ = generate_session(cfg)
        b, _ = generate_session(cfg)
        np.testing.assert_array_equal(a.ear.samples, b.ear.samples)
        np.testing.assert_array_equal(a.scg.samples, b.scg.samples)

    def test_streams_share_timebase(self):
        session, _ = generate_session(SynthConfig(duration_s=10.0))
        self.assertEqual(len(session.ear), 5000)
        self.assertEqual(len(session.scg), len(session.gcg))
        self.assertEqual(session.ear.modality, Modality.EAR_SOUND)

    def test_fiducials_ordered_under_jitter(self):
        _, truth = generate_session(SynthConfig(duration_s=20.0, fiducial_jitter_ms=8.0))
        for fid in truth.fiducial_times_s:
            times = [fid[name] for name in FIDUCIAL_NAMES]
            self.assertTrue(all(a < b for a, b in zip(times, times[1:])))

    def test_clean_cycles_peak_at_ao(self):
        _, truth = generate_session(SynthConfig(duration_s=10.0))
        cycles = truth.clean_cycles(Modality.SCG)
        self.assertGreater(len(cycles), 8)
        for beat, cycle in cycles:
            self.assertEqual(cycle.size, CYCLE_LEN)
            self.assertLessEqual(abs(int(np.argmax(cycle)) - CYCLE_PRE), 1)
            fset = truth.fiducial_set(beat, truth.ao_index(beat) - CYCLE_PRE)
            self.assertTrue(fset.is_ordered())

    def test_motion_event_raises_energy(self):
        quiet, _ = generate_session(SynthConfig(duration_s=10.0))
        moving, _ = generate_session(
            SynthConfig(duration_s=10.0, motion_events=(MotionEvent(2.0, 3.0, MotionKind.WALKING),))
        )
        window = slice(1000, 2500)
        self.assertGreater(np.std(moving.ear.samples[window]), 2 * np.std(quiet.ear.samples[window]))

    def test_invalid_heart_rate(self):
        with self.assertRaises(InvalidConfig):
            generate_session(SynthConfig(heart_rate_bpm=150.0))

    def test_write_truth(self):
        _, truth = generate_session(SynthConfig(duration_s=5.0))
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "truth.json"
            write_truth(path, truth, {"tool": "earcardio"})
            payload = json.loads(path.read_text())
        self.assertEqual(len(payload["beat_times_ms"]), len(truth.beat_times_s))
        self.assertEqual(payload["provenance"]["tool"], "earcardio")


class PerturbTests(unittest.TestCase):
    def setUp(self):
        self.base = SynthConfig(seed=3, duration_s=10.0)

    def test_device_keeps_truth(self):
        _, truth = generate_session(self.base)
        device_session, device_truth = generate_session(perturb(self.base, PerturbDimension.DEVICE))
        self.assertEqual(truth.fiducial_times_s, device_truth.fiducial_times_s)
        np.testing.assert_array_equal(truth.clean_scg.samples, device_truth.clean_scg.samples)
        self.assertFalse(np.allclose(truth.clean_ear.samples, device_truth.clean_ear.samples))

    def test_user_shifts_ao_mc_interval(self):
        for seed in range(5):
            user = perturb(self.base, PerturbDimension.USER, seed=seed)
            old = self.base.fiducial_offsets_ms["ao"] - self.base.fiducial_offsets_ms["mc"]
            new = user.fiducial_offsets_ms["ao"] - user.fiducial_offsets_ms["mc"]
            self.assertGreaterEqual(abs(new - old), 10.0)
            self.assertLessEqual(abs(new - old), 30.0)
            offsets = [user.fiducial_offsets_ms[name] for name in FIDUCIAL_NAMES]
            self.assertEqual(offsets, sorted(offsets))

    def test_session_changes_noise_only(self):
        session_cfg = perturb(self.base, "Session", seed=1)
        self.assertEqual(session_cfg.fiducial_offsets_ms, self.base.fiducial_offsets_ms)
        self.assertIsNotNone(session_cfg.noise_seed)
        self.assertEqual(session_cfg, perturb(self.base, PerturbDimension.SESSION, seed=1))

    def test_config_round_trip(self):
        cfg = replace(self.base, motion_events=(MotionEvent(1.0, 2.0, MotionKind.CHEWING),), music_db=-5.0)
        self.assertEqual(SynthConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))), cfg)

    def test_unknown_key(self):
        with self.assertRaises(InvalidConfig):
            SynthConfig.from_dict({"tempo": 3})


class GateCorpusTests(unittest.TestCase):
    def test_labels_and_lengths(self):
        windows, labels = generate_gate_corpus(n_static=2, n_motion=3, seed=1)
        self.assertEqual(labels, ["Static", "Static", "Motion", "Motion", "Motion"])
        self.assertTrue(all(len(w) == 5000 for w in windows))


if __name__ == "__main__":
    unittest.main()
