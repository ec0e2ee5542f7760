import os
import tempfile
import unittest
from pathlib import Path

import numpy as np
import torch

from earcardio.errors import InvalidConfig, RecordingNotFound, SchemaMismatch, ShapeMismatch
from earcardio.model import (
    CycleReconstructor,
    DecoderBlock,
    EncoderBlock,
    GlobalConv,
    ModelConfig,
    TemporalSelfAttention,
    TrainConfig,
    build_model,
    load_checkpoint,
    save_checkpoint,
)
from earcardio.waveform import Modality

SMALL = ModelConfig(channels_per_branch=4, encoder_blocks=2, attention_dim=8, global_kernel=16)


class ModelConfigTests(unittest.TestCase):
    def test_defaults(self):
        cfg = ModelConfig()
        cfg.validate()
        self.assertEqual(cfg.decoder_blocks, cfg.encoder_blocks)

    def test_invalid(self):
        with self.assertRaises(InvalidConfig):
            ModelConfig(input_len=401).validate()
        with self.assertRaises(InvalidConfig):
            ModelConfig(target_modality=Modality.EAR_SOUND).validate()
        with self.assertRaises(InvalidConfig):
            ModelConfig(dropout_p=1.0).validate()
        with self.assertRaises(InvalidConfig):
            TrainConfig(lr=0.0).validate()

    def test_dict_round_trip(self):
        cfg = ModelConfig(local_dilations=(1, 3), target_modality="GCG")
        self.assertEqual(ModelConfig.from_dict(cfg.to_dict()), cfg)
        with self.assertRaises(InvalidConfig):
            ModelConfig.from_dict({"layers": 3})


class LayerTests(unittest.TestCase):
    def test_attention_rows_sum_to_one(self):
        layer = TemporalSelfAttention(4, 8)
        layer(torch.randn(2, 4, 25))
        self.assertEqual(tuple(layer.last_weights.shape), (2, 25, 25))
        torch.testing.assert_close(layer.last_weights.sum(dim=-1), torch.ones(2, 25))

    def test_global_conv_keeps_length(self):
        layer = GlobalConv(2, 3, 48)
        self.assertEqual(layer(torch.randn(1, 2, 60)).shape[-1], 60)
        self.assertEqual(layer(torch.randn(1, 2, 61)).shape[-1], 61)


GRAD_SEEDS = range(20)
NETWORK_SEEDS = range(20) if os.environ.get("EARCARDIO_SLOW") == "1" else range(2)
TINY = ModelConfig(channels_per_branch=2, encoder_blocks=2, attention_dim=4, global_kernel=16, dropout_p=0.0)


class GradientTests(unittest.TestCase):
    def check(self, make_module, shapes, seeds=GRAD_SEEDS):
        for seed in seeds:
            with self.subTest(seed=seed):
                torch.manual_seed(seed)
                module = make_module().double().eval()
                inputs = tuple(torch.randn(*s, dtype=torch.float64, requires_grad=True) for s in shapes)
                self.assertTrue(torch.autograd.gradcheck(module, inputs))

    def test_attention(self):
        self.check(lambda: TemporalSelfAttention(3, 4), [(1, 3, 10)])

    def test_global_conv(self):
        self.check(lambda: GlobalConv(2, 3, 48), [(1, 2, 60)])

    def test_encoder_block(self):
        self.check(lambda: EncoderBlock(1, TINY), [(1, 1, 24)])
        self.check(lambda: EncoderBlock(4, TINY), [(1, 4, 24)])

    def test_decoder_block(self):
        self.check(lambda: DecoderBlock(TINY), [(1, 4, 10), (1, 4, 20)])

    def test_head(self):
        self.check(lambda: CycleReconstructor(TINY).head, [(1, 4, 30)])

    def test_whole_network(self):
        self.check(lambda: CycleReconstructor(TINY), [(1, 400)], seeds=NETWORK_SEEDS)


class CycleReconstructorTests(unittest.TestCase):
    def test_shapes(self):
        model = build_model(SMALL, seed=0)
        model.network.eval()
        out = model.network(torch.randn(3, 400))
        self.assertEqual(tuple(out.shape), (3, 400))
        self.assertEqual(tuple(model.network(torch.randn(2, 1, 400)).shape), (2, 400))
        with self.assertRaises(ShapeMismatch):
            model.network(torch.randn(2, 300))

    def test_attention_in_every_block(self):
        model = build_model(SMALL)
        model.network.eval()
        model.network(torch.randn(1, 400))
        layers = model.network.attention_layers()
        self.assertEqual(len(layers), SMALL.encoder_blocks + 1)
        for layer in layers:
            torch.testing.assert_close(layer.last_weights.sum(dim=-1), torch.ones_like(layer.last_weights[..., 0]))

    def test_seeded_init(self):
        state_before = torch.random.get_rng_state()
        a = build_model(SMALL, seed=5)
        b = build_model(SMALL, seed=5)
        c = build_model(SMALL, seed=6)
        self.assertTrue(torch.equal(state_before, torch.random.get_rng_state()))
        for (name, pa), pb, pc in zip(a.network.state_dict().items(), b.network.state_dict().values(),
                                      c.network.state_dict().values()):
            self.assertTrue(torch.equal(pa, pb), name)
        self.assertFalse(torch.equal(a.network.head.weight, c.network.head.weight))
        self.assertEqual(a.parameter_shapes(), c.parameter_shapes())

    def test_eval_is_deterministic(self):
        model = build_model(SMALL, seed=1)
        model.network.eval()
        x = torch.randn(4, 400)
        with torch.no_grad():
            self.assertTrue(torch.equal(model.network(x), model.network(x)))


class CheckpointTests(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / "model.ckpt"

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip(self):
        model = build_model(SMALL, seed=2)
        model.train_meta = {"seed": 2, "epochs": 0}
        model.network.eval()
        save_checkpoint(model, self.path)
        loaded = load_checkpoint(self.path)
        self.assertEqual(loaded.config, SMALL)
        self.assertEqual(loaded.train_meta, {"seed": 2, "epochs": 0})
        x = torch.randn(2, 400)
        with torch.no_grad():
            torch.testing.assert_close(loaded.network(x), model.network(x), rtol=0, atol=0)

    def test_rejects_other_files(self):
        self.path.write_bytes(b"PK\x03\x04 something else")
        with self.assertRaises(SchemaMismatch):
            load_checkpoint(self.path)
        with self.assertRaises(RecordingNotFound):
            load_checkpoint(Path(self.tmp.name) / "missing.ckpt")

    def test_rejects_trailing_bytes(self):
        save_checkpoint(build_model(SMALL), self.path)
        with open(self.path, "ab") as f:
            f.write(b"\x00\x00\x00\x00")
        with self.assertRaises(SchemaMismatch):
            load_checkpoint(self.path)


if __name__ == "__main__":
    unittest.main()
