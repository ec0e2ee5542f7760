import json
import tempfile
import unittest
from pathlib import Path

from earcardio import TOOL_NAME, __version__
from earcardio.config import PipelineConfig, config_hash, load_config, provenance
from earcardio.errors import InvalidBand, InvalidConfig, RecordingNotFound


class LoadConfigTests(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / "config.json"

    def tearDown(self):
        self.tmp.cleanup()

    def test_defaults(self):
        cfg = load_config()
        self.assertEqual(cfg.snr_threshold_db, 7.0)
        self.assertEqual(cfg.bandpass.low_hz, 5.0)
        self.assertEqual(cfg.model.input_len, 400)

    def test_nested_sections(self):
        self.path.write_text(json.dumps({
            "seed": 9,
            "bandpass": {"low_hz": 4.0, "high_hz": 40.0},
            "model": {"channels_per_branch": 8, "target_modality": "GCG"},
            "synth": {"heart_rate_bpm": 60.0},
        }))
        cfg = load_config(self.path)
        self.assertEqual(cfg.bandpass.high_hz, 40.0)
        self.assertEqual(cfg.model.channels_per_branch, 8)
        self.assertEqual(cfg.model.target_modality.value, "GCG")
        self.assertEqual(cfg.synth.heart_rate_bpm, 60.0)

    def test_round_trip(self):
        cfg = PipelineConfig(snr_threshold_db=5.0, calibration_cycles=3)
        self.path.write_text(json.dumps(cfg.to_dict()))
        self.assertEqual(load_config(self.path).to_dict(), cfg.to_dict())

    def test_rejections(self):
        with self.assertRaises(RecordingNotFound):
            load_config(Path(self.tmp.name) / "missing.json")
        self.path.write_text("{not json")
        with self.assertRaises(InvalidConfig):
            load_config(self.path)
        self.path.write_text(json.dumps({"snr": 3}))
        with self.assertRaises(InvalidConfig):
            load_config(self.path)
        self.path.write_text(json.dumps({"bandpass": {"low_hz": 50.0, "high_hz": 10.0}}))
        with self.assertRaises(InvalidBand):
            load_config(self.path)
        self.path.write_text(json.dumps({"model": {"depth": 3}}))
        with self.assertRaises(InvalidConfig):
            load_config(self.path)


class OverrideTests(unittest.TestCase):
    def test_seed_propagates(self):
        cfg = PipelineConfig().with_overrides(seed=123, jobs=None)
        self.assertEqual((cfg.seed, cfg.train.seed, cfg.synth.seed, cfg.jobs), (123, 123, 123, 1))

    def test_invalid_jobs(self):
        with self.assertRaises(InvalidConfig):
            PipelineConfig().with_overrides(jobs=0).validate()


class ProvenanceTests(unittest.TestCase):
    def test_hash(self):
        self.assertEqual(config_hash(PipelineConfig()), config_hash(PipelineConfig()))
        self.assertNotEqual(config_hash(PipelineConfig()), config_hash(PipelineConfig(seed=1)))
        self.assertEqual(len(config_hash(PipelineConfig())), 64)
        self.assertEqual(config_hash(PipelineConfig()), config_hash(PipelineConfig(jobs=4)))

    def test_stamp(self):
        stamp = provenance(PipelineConfig())
        self.assertEqual(stamp["tool"], TOOL_NAME)
        self.assertEqual(stamp["version"], __version__)


if __name__ == "__main__":
    unittest.main()
