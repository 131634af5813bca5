"""Shared fixtures: a tiny synthetic corpus and matching configs."""

import numpy as np
import pytest

from signl import config as cfgmod
from signl import featio


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Small corpus (40/10/20 clips, F=T=32) reused across test modules."""
    root = tmp_path_factory.mktemp("tiny-corpus")
    cfg = featio.SynthConfig(F=32, T=32,
                             n_per_split={"train": 40, "dev": 10, "eval": 20},
                             n_attack_types=3, artifact_strength=1.0, seed=11)
    entries = featio.gen_synthetic(cfg, root)
    return root, entries


@pytest.fixture
def tiny_cfg(tiny_corpus):
    root, _ = tiny_corpus
    cfg = cfgmod.defaults()
    cfg.update({"data.dir": str(root), "data.f": 32, "data.t": 32,
                "train.epochs": 2, "train.batch_size": 16, "train.seed": 11})
    return cfg


@pytest.fixture
def rng():
    return np.random.default_rng(0)
