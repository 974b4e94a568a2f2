"""Tests for the config module."""

import os
import tempfile
import unittest
from unittest import mock

import numpy as np

import config
from config import Config, ConfigError

EXAMPLE = """
[sensor]
width = 30
height = 20

[training]
lr = 1e-3
fusion = "concat"
steps = 10

[grid]
resolution = 16

[[scenes]]
kind = "bottle"

[[scenes]]
kind = "box"
deformable = true
stiffness = 0.2
pose = { rotvec = [0.0, 0.0, 1.5707963267948966], translation = [1, 0, 0] }
"""


class TestDefaults(unittest.TestCase):
    def test_values(self):
        cfg = Config()
        self.assertEqual(2e-4, cfg.training.lr)
        self.assertEqual(6, cfg.training.batch_size)
        self.assertEqual(3000, cfg.sampling.num_points)
        self.assertEqual(2048, cfg.sampling.queries)
        self.assertEqual(100000, cfg.sampling.pool)
        self.assertEqual(20000, cfg.sampling.surface)
        self.assertEqual(0.1, cfg.sampling.radius)
        self.assertEqual((60, 12, 8), cfg.dataset.counts())
        self.assertEqual(32, cfg.grid.grid().dims[0])
        self.assertEqual(64, cfg.grid.eval_grid().dims[0])
        self.assertEqual(35, cfg.architecture().fused_dim)
        self.assertEqual((40, 60), cfg.architecture().tactile_shape)

    def test_datagen_settings(self):
        settings = Config().datagen_settings(threads=3)
        self.assertEqual(3000, settings.num_points)
        self.assertEqual(3, settings.threads)
        self.assertEqual(60, settings.sensor.width)


class TestParse(unittest.TestCase):
    def test_example(self):
        cfg = config.parse_config(EXAMPLE)
        self.assertEqual((20, 30), cfg.architecture().tactile_shape)
        self.assertEqual(67, cfg.architecture().fused_dim)
        self.assertEqual(10, cfg.training.steps)
        self.assertEqual(16, cfg.grid.grid().dims[0])
        self.assertEqual(["bottle", "box"], [s.category for s in cfg.scenes])
        self.assertEqual(0.2, cfg.scenes[1].stiffness)
        np.testing.assert_allclose(
            [1, 0, 0], cfg.scenes[1].pose.translation)
        np.testing.assert_allclose(
            [0, 1, 0], cfg.scenes[1].pose.apply_vectors([1, 0, 0]),
            atol=1e-12)

    def test_errors(self):
        bad = [
            "[training]\nlearning_rate = 1\n",
            "[training]\nbatch_size = 0\n",
            "[training]\nfusion = \"multiply\"\n",
            "[training]\nvariant = \"tactile-only\"\n",
            "[sensor]\nmax_indentation = 0.2\n",
            "[sampling]\nsurface = 200000\n",
            "[dataset]\ntrain = -1\n",
            "[optimizer]\nlr = 1\n",
            "[[scenes]]\nkind = \"sphere\"\nstiffness = 0\n",
            "[[scenes]]\nkind = \"teapot\"\n",
            "[[scenes]]\nshape = \"sphere\"\n",
            "not toml at all [",
        ]
        for text in bad:
            with self.assertRaises(ConfigError, msg=text):
                config.parse_config(text)

    def test_error_message(self):
        try:
            config.parse_config("[grid]\nsize = -1\n")
        except ConfigError as e:
            self.assertEqual("grid.size", e.key)
            self.assertIn("-1", str(e))
        else:
            self.fail("No ConfigError")


class TestLoad(unittest.TestCase):
    def test_sources(self):
        with tempfile.TemporaryDirectory() as tmp:
            explicit = os.path.join(tmp, "a.toml")
            from_env = os.path.join(tmp, "b.toml")
            with open(explicit, "w") as f:
                f.write("[training]\nsteps = 3\n")
            with open(from_env, "w") as f:
                f.write("[training]\nsteps = 5\n")

            with mock.patch.dict(os.environ, {config.ENV_VAR: from_env}):
                self.assertEqual(
                    3, config.load_config(explicit).training.steps)
                self.assertEqual(5, config.load_config().training.steps)
            with mock.patch.dict(os.environ, {config.ENV_VAR: ""}):
                self.assertEqual(2000, config.load_config().training.steps)

    def test_missing_file(self):
        with self.assertRaises(FileNotFoundError):
            config.load_config("/nonexistent/config.toml")


if __name__ == '__main__':
    unittest.main()
