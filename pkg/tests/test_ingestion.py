import tempfile
import unittest
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from earcardio.errors import (
    CorruptHeader,
    NonMonotonicTimestamps,
    RecordingNotFound,
    SchemaMismatch,
    TapsNotFound,
)
from earcardio.ingestion import (
    IMU_COLUMNS,
    PairedSession,
    align_by_taps,
    crop_aligned,
    find_taps,
    read_imu_csv,
    read_wav,
    write_wav,
)
from earcardio.waveform import Modality, SampledSignal


def write_imu(path, t_ns, values):
    lines = [",".join(IMU_COLUMNS)]
    for t, v in zip(t_ns, values):
        lines.append(f"{int(t)},0,0,{float(v):.17g},0,{-float(v):.17g},0")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def tap_stream(tap_samples, n=6000, seed=0):
    rng = np.random.default_rng(seed)
    x = 0.05 * rng.normal(size=n)
    t = np.arange(n)
    for center in tap_samples:
        x += np.exp(-0.5 * ((t - center) / 12.5) ** 2) * np.cos(2 * np.pi * 20.0 * (t - center) / 500.0)
    return SampledSignal(x, 500.0)


class WavTests(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_int16_scaling(self):
        path = self.dir / "a.wav"
        wavfile.write(path, 16000, np.array([32767, 0, -32768], dtype=np.int16))
        [sig] = read_wav(path)
        self.assertEqual(sig.rate_hz, 16000.0)
        self.assertAlmostEqual(sig.samples[0], 32767 / 32768)
        self.assertEqual(sig.samples[2], -1.0)
        self.assertEqual(sig.modality, Modality.EAR_SOUND)

    def test_stereo_channels(self):
        path = self.dir / "s.wav"
        left = SampledSignal(np.linspace(-0.5, 0.5, 100), 8000.0)
        right = SampledSignal(np.linspace(0.5, -0.5, 100), 8000.0)
        write_wav(path, [left, right])
        channels = read_wav(path)
        self.assertEqual([c.channel_id for c in channels], ["left", "right"])
        np.testing.assert_allclose(channels[1].samples, right.samples, atol=1e-6)

    def test_500_hz_round_trip_is_exact(self):
        path = self.dir / "ear.wav"
        x = np.random.default_rng(0).uniform(-0.9, 0.9, 5000).astype(np.float32).astype(np.float64)
        write_wav(path, [SampledSignal(x, 500.0)])
        [sig] = read_wav(path)
        self.assertEqual(sig.rate_hz, 500.0)
        np.testing.assert_array_equal(sig.samples, x)
        write_wav(self.dir / "again.wav", [sig])
        self.assertEqual((self.dir / "again.wav").read_bytes(), path.read_bytes())

    def test_missing_and_corrupt(self):
        with self.assertRaises(RecordingNotFound):
            read_wav(self.dir / "nope.wav")
        bad = self.dir / "bad.wav"
        bad.write_bytes(b"not a wave file at all")
        with self.assertRaises(CorruptHeader):
            read_wav(bad)


class ImuCsvTests(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / "imu.csv"

    def tearDown(self):
        self.tmp.cleanup()

    def test_exact_rate_is_identity(self):
        n = 2000
        values = np.sin(2 * np.pi * 10.0 * np.arange(n) / 500.0)
        write_imu(self.path, np.arange(n) * 2_000_000, values)
        scg, gcg = read_imu_csv(self.path)
        self.assertEqual(len(scg), n)
        np.testing.assert_allclose(scg.samples, values, atol=1e-9)
        np.testing.assert_allclose(gcg.samples, -values, atol=1e-9)
        self.assertEqual(scg.modality, Modality.SCG)

    def test_454_hz_timestamps(self):
        t_s = np.arange(int(454 * 20)) / 454.0
        write_imu(self.path, np.round(t_s * 1e9), np.sin(2 * np.pi * 10.0 * t_s))
        scg, _ = read_imu_csv(self.path)
        spectrum = np.abs(np.fft.rfft(scg.samples))
        freqs = np.fft.rfftfreq(len(scg), 1 / 500.0)
        self.assertAlmostEqual(freqs[np.argmax(spectrum)], 10.0, delta=0.1)

    def test_axis_map(self):
        n = 1000
        write_imu(self.path, np.arange(n) * 2_000_000, np.linspace(0, 1, n))
        scg, _ = read_imu_csv(self.path, axis_map={"scg": "gy"})
        self.assertLess(scg.samples[-1], 0.0)

    def test_decreasing_timestamp(self):
        t = list(np.arange(1000) * 2_000_000)
        t[500], t[501] = t[501], t[500]
        write_imu(self.path, t, np.zeros(1000))
        with self.assertRaises(NonMonotonicTimestamps):
            read_imu_csv(self.path)

    def test_bad_header(self):
        self.path.write_text("time,x,y,z\n1,2,3,4\n", encoding="utf-8")
        with self.assertRaises(SchemaMismatch):
            read_imu_csv(self.path)


class TapAlignmentTests(unittest.TestCase):
    def test_identical_streams(self):
        s = tap_stream([1000, 2500])
        self.assertEqual(align_by_taps(s, s), 0.0)

    def test_delay(self):
        ear = tap_stream([1000, 2500], seed=1)
        imu = tap_stream([1037, 2537], seed=2)
        self.assertAlmostEqual(align_by_taps(ear, imu), 74.0, delta=2.0)

    def test_antisymmetric(self):
        a = tap_stream([1000, 2500], seed=3)
        b = tap_stream([1020, 2520], seed=4)
        self.assertAlmostEqual(align_by_taps(a, b), -align_by_taps(b, a))

    def test_single_tap(self):
        with self.assertRaises(TapsNotFound):
            find_taps(tap_stream([1000]))

    def test_crop(self):
        ear = SampledSignal(np.arange(100.0), 500.0)
        imu = SampledSignal(np.arange(100.0) + 1000, 500.0)
        ear_c, [imu_c] = crop_aligned(ear, [imu], 20.0)
        self.assertEqual(len(ear_c), 90)
        self.assertEqual(len(imu_c), 90)
        self.assertEqual(imu_c.samples[0], 1010.0)
        self.assertEqual(ear_c.samples[0], 0.0)


class PairedSessionTests(unittest.TestCase):
    def test_save_and_load(self):
        rng = np.random.default_rng(0)
        session = PairedSession(
            ear=SampledSignal(rng.normal(size=500) * 0.1, 500.0, Modality.EAR_SOUND, "left"),
            scg=SampledSignal(rng.normal(size=500), 500.0, Modality.SCG),
            gcg=SampledSignal(rng.normal(size=500), 500.0, Modality.GCG),
            offset_ms=4.0,
            meta={"user": "u1"},
        )
        with tempfile.TemporaryDirectory() as tmp:
            session.save(tmp)
            loaded = PairedSession.load(tmp)
        self.assertEqual(loaded.offset_ms, 4.0)
        self.assertEqual(loaded.meta["user"], "u1")
        self.assertEqual(list(loaded.ear_channels()), ["left"])
        np.testing.assert_allclose(loaded.scg.samples, session.scg.samples, atol=1e-6)

    def test_missing_session(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(RecordingNotFound):
                PairedSession.load(tmp)


if __name__ == "__main__":
    unittest.main()
