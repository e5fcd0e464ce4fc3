"""Session fixtures for the acceptance suite: trained toy checkpoints and
classifiers. Set RETSYN_TEST_CACHE to a directory to reuse them across local
runs; unset (the default) everything trains from scratch."""
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from retsyn.classify import ClassifierConfig, FitSchedule, build_classifier, train_classifier
from retsyn.data import make_toy_dataset, split_dataset
from retsyn.gan import GanConfig, GeneratorCheckpoint, load_checkpoint, save_checkpoint
from retsyn.training import GanTrainer, StageSpec, TrainConfig

SMOKE_CHANNELS = {4: 48, 8: 32, 16: 24}
SMOKE_LADDER = [(4, 32, 400), (8, 32, 600), (16, 32, 2000)]


def _cache_dir():
    path = os.environ.get("RETSYN_TEST_CACHE")
    return Path(path) if path else None


def _train_toy_gan(dataset, n_classes: int, seed: int, tag: str):
    cache = _cache_dir()
    if cache and (cache / tag / "manifest.json").exists():
        ckpt = load_checkpoint(cache / tag)
        meta = json.loads((cache / tag / "train-meta.json").read_text())
        return ckpt, meta["seconds"]
    cfg = GanConfig(latent_dim=32, w_dim=32, n_classes=n_classes, target_resolution=16,
                    channels=dict(SMOKE_CHANNELS), noise_scale_init=0.03, seed=seed)
    tc = TrainConfig(seed=seed, learning_rate=1e-3,
                     resolution_ladder=[StageSpec(*s) for s in SMOKE_LADDER])
    ckpt = GeneratorCheckpoint.fresh(cfg)
    t0 = time.time()
    GanTrainer(ckpt, tc).run(dataset)
    seconds = time.time() - t0
    if cache:
        save_checkpoint(ckpt, cache / tag)
        (cache / tag / "train-meta.json").write_text(json.dumps({"seconds": seconds}))
    return ckpt, seconds


@pytest.fixture(scope="session")
def toy3():
    return make_toy_dataset(200, 16, 3, seed=42)


@pytest.fixture(scope="session")
def trained3(toy3):
    """Three smoke-trained 3-class checkpoints (seeds 0,1,2) with wall times."""
    out = []
    for seed in (0, 1, 2):
        ckpt, seconds = _train_toy_gan(toy3, 3, seed, f"gan3-seed{seed}")
        out.append({"ckpt": ckpt, "seconds": seconds, "seed": seed})
    return out


@pytest.fixture(scope="session")
def toy5_sets():
    full = make_toy_dataset(300, 16, 5, seed=7)
    train, val, test = split_dataset(full, fractions=(0.8, 0.1, 0.1), seed=0)
    assert len(train) == 1200
    return train, val, test


@pytest.fixture(scope="session")
def trained5(toy5_sets):
    train, _, _ = toy5_sets
    ckpt, seconds = _train_toy_gan(train, 5, 0, "gan5-seed0")
    return {"ckpt": ckpt, "seconds": seconds}


def _train_toy_classifier(train, val, n_outputs, seed, tag):
    cache = _cache_dir()
    cfg = ClassifierConfig(n_outputs=n_outputs, seed=seed)
    model = build_classifier(cfg)
    if cache and (cache / f"{tag}.npz").exists():
        model.load_state_dict(dict(np.load(cache / f"{tag}.npz")))
        return model
    sched = FitSchedule(head_epochs=3, full_epochs=15, batch_size=32, seed=seed)
    train_classifier(model, train, val, sched)
    if cache:
        cache.mkdir(parents=True, exist_ok=True)
        np.savez(cache / f"{tag}.npz", **model.state_dict())
    return model


@pytest.fixture(scope="session")
def clf3(toy3):
    train, val, _ = split_dataset(toy3, seed=0)
    return _train_toy_classifier(train, val, 3, 0, "clf3")


@pytest.fixture(scope="session")
def clf5(toy5_sets):
    train, val, _ = toy5_sets
    return _train_toy_classifier(train, val, 5, 0, "clf5")
