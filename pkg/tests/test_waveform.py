import unittest

import numpy as np
from scipy import signal as sp_signal

from earcardio.errors import EmptySignal, InvalidBand, NonPositiveRate, SignalTooShort
from earcardio.waveform import (
    BandpassSpec,
    Modality,
    SampledSignal,
    bandpass,
    condition,
    fft,
    ifft,
    polyphase_factors,
    resample,
    zscore,
    zscore_array,
)


def sine(freq_hz, rate_hz, seconds, amp=1.0):
    t = np.arange(int(round(rate_hz * seconds))) / rate_hz
    return amp * np.sin(2 * np.pi * freq_hz * t)


def rms(x):
    return float(np.sqrt(np.mean(np.square(x))))


class ResampleTests(unittest.TestCase):
    def test_sine_keeps_frequency_and_amplitude(self):
        sig = SampledSignal(sine(20.0, 16000.0, 10.0), 16000.0)
        out = resample(sig, 500.0)
        self.assertEqual(out.rate_hz, 500.0)
        self.assertEqual(len(out), 5000)
        spectrum = np.abs(np.fft.rfft(out.samples))
        freqs = np.fft.rfftfreq(len(out), 1 / 500.0)
        self.assertAlmostEqual(freqs[np.argmax(spectrum)], 20.0, delta=0.1)
        middle = out.samples[500:-500]
        self.assertAlmostEqual(np.max(np.abs(middle)), 1.0, delta=0.01)

    def test_same_rate_is_identity(self):
        x = np.random.default_rng(0).normal(size=1000)
        out = resample(SampledSignal(x, 500.0), 500.0)
        np.testing.assert_array_equal(out.samples, x)

    def test_constant_stays_constant(self):
        out = resample(SampledSignal(np.full(4540, 3.2), 454.0), 500.0)
        np.testing.assert_allclose(out.samples[200:-200], 3.2, atol=1e-3)

    def test_there_and_back(self):
        x = sum(sine(f, 500.0, 10.0, amp=a) for f, a in [(7.0, 1.0), (18.0, 0.6), (33.0, 0.3)])
        up = resample(SampledSignal(x, 500.0), 16000.0)
        back = resample(up, 500.0)
        self.assertEqual(len(back), len(x))
        err = rms(back.samples[200:-200] - x[200:-200]) / rms(x[200:-200])
        self.assertLess(err, 0.01)

    def test_exact_factors_for_integer_rates(self):
        self.assertEqual(polyphase_factors(16000.0, 500.0), (1, 32))
        self.assertEqual(polyphase_factors(44100.0, 500.0), (5, 441))
        self.assertEqual(polyphase_factors(9973.0, 500.0), (500, 9973))
        out = resample(SampledSignal(sine(20.0, 9973.0, 2.0), 9973.0), 500.0)
        self.assertEqual(len(out), 1000)

    def test_repeatable(self):
        sig = SampledSignal(np.random.default_rng(2).normal(size=4410), 441.0)
        np.testing.assert_array_equal(resample(sig, 500.0).samples, resample(sig, 500.0).samples)

    def test_errors(self):
        with self.assertRaises(EmptySignal):
            resample(SampledSignal(np.array([]), 500.0), 250.0)
        with self.assertRaises(NonPositiveRate):
            resample(SampledSignal(np.ones(10), 500.0), 0.0)
        with self.assertRaises(NonPositiveRate):
            SampledSignal(np.ones(10), -1.0)


class BandpassTests(unittest.TestCase):
    def test_passband_and_stopbands(self):
        pass_out = bandpass(SampledSignal(sine(25.0, 500.0, 10.0), 500.0))
        gain_db = 20 * np.log10(rms(pass_out.samples[1000:-1000]) / rms(sine(25.0, 500.0, 6.0)))
        self.assertLess(abs(gain_db), 0.5)
        for freq in (1.0, 100.0):
            x = sine(freq, 500.0, 10.0)
            out = bandpass(SampledSignal(x, 500.0))
            atten_db = 20 * np.log10(rms(out.samples[1000:-1000]) / rms(x))
            self.assertLessEqual(atten_db, -20.0)

    def test_zero_group_delay(self):
        x = np.random.default_rng(1).normal(size=5000)
        out = bandpass(SampledSignal(x, 500.0)).samples
        corr = sp_signal.correlate(out, x, mode="full")
        lags = sp_signal.correlation_lags(out.size, x.size, mode="full")
        self.assertEqual(lags[np.argmax(corr)], 0)

    def test_invalid_band(self):
        with self.assertRaises(InvalidBand):
            bandpass(SampledSignal(np.zeros(5000), 500.0), BandpassSpec(45.0, 5.0))
        with self.assertRaises(InvalidBand):
            bandpass(SampledSignal(np.zeros(5000), 500.0), BandpassSpec(5.0, 300.0))

    def test_too_short(self):
        with self.assertRaises(SignalTooShort):
            bandpass(SampledSignal(np.zeros(1000), 500.0))


class ZscoreTests(unittest.TestCase):
    def test_known_values(self):
        np.testing.assert_allclose(zscore_array([1.0, 2.0, 3.0]), [-1.224745, 0.0, 1.224745], atol=1e-6)

    def test_constant_maps_to_zeros(self):
        np.testing.assert_array_equal(zscore_array(np.full(7, 4.0)), np.zeros(7))

    def test_idempotent(self):
        x = np.random.default_rng(1).normal(3.0, 2.0, size=500)
        once = zscore(SampledSignal(x, 500.0, Modality.SCG))
        twice = zscore(once)
        np.testing.assert_allclose(twice.samples, once.samples, atol=1e-12)
        self.assertEqual(twice.modality, Modality.SCG)

    def test_empty(self):
        with self.assertRaises(EmptySignal):
            zscore_array([])


class FftTests(unittest.TestCase):
    def test_impulse_is_flat(self):
        x = np.zeros(8)
        x[0] = 1.0
        np.testing.assert_allclose(fft(x).bins, np.ones(8))

    def test_parseval(self):
        x = np.random.default_rng(2).normal(size=400)
        spec = fft(x, 500.0)
        self.assertAlmostEqual(np.sum(x ** 2), np.sum(np.abs(spec.bins) ** 2) / 400, places=9)

    def test_inverse(self):
        x = np.random.default_rng(3).normal(size=400)
        np.testing.assert_allclose(ifft(fft(x)).real, x, atol=1e-12)

    def test_frequencies(self):
        spec = fft(SampledSignal(np.zeros(400), 500.0))
        self.assertEqual(spec.rate_hz, 500.0)
        self.assertAlmostEqual(spec.frequencies_hz[1], 1.25)


class ConditionTests(unittest.TestCase):
    def test_repeatable(self):
        sig = SampledSignal(np.random.default_rng(3).normal(size=80000), 16000.0)
        np.testing.assert_array_equal(condition(sig).samples, condition(sig).samples)

    def test_output_is_normalized_at_500_hz(self):
        x = sine(25.0, 2000.0, 8.0) + 0.5 * sine(2.0, 2000.0, 8.0)
        out = condition(SampledSignal(x, 2000.0, Modality.EAR_SOUND))
        self.assertEqual(out.rate_hz, 500.0)
        self.assertAlmostEqual(float(out.samples.mean()), 0.0, places=9)
        self.assertAlmostEqual(float(out.samples.std()), 1.0, places=9)
        self.assertEqual(out.modality, Modality.EAR_SOUND)


if __name__ == "__main__":
    unittest.main()
