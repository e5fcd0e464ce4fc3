import json

import numpy as np
import pytest

from retsyn import sefa
from retsyn.augment import (AugmentError, HealedPair,
                            build_detection_set, collect_pairs, lesion_sign,
                            pseudo_filter, save_pair_manifest, sefa_heal)
from retsyn.classify import ClassifierConfig, build_classifier
from retsyn.data import LabeledImageSet
from retsyn.gan import GanConfig, GeneratorCheckpoint


@pytest.fixture(scope="module")
def ckpt5():
    cfg = GanConfig(latent_dim=10, w_dim=10, n_classes=5, target_resolution=16,
                    channels={4: 12, 8: 10, 16: 8}, seed=4)
    return GeneratorCheckpoint.fresh(cfg)


@pytest.fixture(scope="module")
def dirset(ckpt5):
    return sefa.factorize_checkpoint(ckpt5, "top", "W", k=4)


def fixed_class_classifier(cls: int, n_outputs=5):
    """A real classifier forced to always predict one class."""
    model = build_classifier(ClassifierConfig(
        n_outputs=n_outputs, stem_channels=4, stage_channels=(4,), head_hidden=8, seed=0))
    model.head.fc2.w.data[...] = 0
    bias = np.full(n_outputs, -10.0, dtype=np.float32)
    bias[cls] = 10.0
    model.head.fc2.b.data[...] = bias
    return model


def _mk_pairs(per_class, classes=(1, 2, 3, 4), accepted=True, res=8):
    rng = np.random.default_rng(0)
    out = []
    for c in classes:
        for i in range(per_class):
            out.append(HealedPair(
                abnormal=rng.standard_normal((3, res, res)).astype(np.float32),
                healed=rng.standard_normal((3, res, res)).astype(np.float32),
                source_class=c, z_seed=i, alpha=-2.0, pseudo_label=0, accepted=accepted))
    return out


# ---------------------------------------------------------------------------
# sefa_heal
# ---------------------------------------------------------------------------


def test_heal_alpha_zero_policy_degenerate(ckpt5, dirset):
    clf = fixed_class_classifier(0)
    pair = sefa_heal(ckpt5, dirset, 0, z_seed=3, c_abnormal=2, classifier=clf,
                     alphas=(0.0,))
    assert pair.accepted
    assert np.array_equal(pair.abnormal, pair.healed)


def test_heal_accepts_first_passing_alpha(ckpt5, dirset):
    clf = fixed_class_classifier(0)
    pair = sefa_heal(ckpt5, dirset, 0, z_seed=5, c_abnormal=1, classifier=clf)
    assert pair.accepted and pair.alpha == -1.0 and pair.pseudo_label == 0


def test_heal_rejection_marked(ckpt5, dirset):
    clf = fixed_class_classifier(2)
    pair = sefa_heal(ckpt5, dirset, 0, z_seed=5, c_abnormal=1, classifier=clf)
    assert not pair.accepted and pair.pseudo_label == 2


def test_heal_rejects_class_zero(ckpt5, dirset):
    with pytest.raises(AugmentError):
        sefa_heal(ckpt5, dirset, 0, z_seed=1, c_abnormal=0,
                  classifier=fixed_class_classifier(0))


def test_heal_pair_shares_codes_outside_range(ckpt5, dirset):
    # alpha=0 edit on the same z keeps everything; nonzero alpha moves only
    # the top sites, so the bottom/middle geometry stays put: verify via the
    # synthesis equality when the top-range codes are restored
    import retsyn.autodiff as ad
    from retsyn.autodiff import Tensor
    from retsyn.gan import LayerRange, NoiseSpec

    gen = ckpt5.generator
    cfg = ckpt5.config
    lr = LayerRange.resolve("top", cfg)
    rng = np.random.default_rng([5, 0x4EA1])
    z = rng.standard_normal(cfg.latent_dim)
    with ad.no_grad():
        w = gen.map_latent(z[None], np.array([1])).data
        codes = [w] * cfg.n_sites
        edited = sefa.edit_code(codes, dirset.direction(0), -2.0, lr)
        restored = sefa.edit_code(edited, dirset.direction(0), 2.0, lr)
        img_a = gen.synthesize([Tensor(c.astype(cfg.dtype)) for c in codes], NoiseSpec("zero")).data
        img_b = gen.synthesize([Tensor(c.astype(cfg.dtype)) for c in restored], NoiseSpec("zero")).data
    assert np.allclose(img_a, img_b, atol=1e-5)
    for i in range(cfg.n_sites):
        if i not in lr.sites:
            assert np.array_equal(edited[i], codes[i])


# ---------------------------------------------------------------------------
# pseudo_filter
# ---------------------------------------------------------------------------


def test_filter_all_kept_when_classifier_says_zero():
    pairs = _mk_pairs(3, accepted=False)
    kept = pseudo_filter(pairs, fixed_class_classifier(0))
    assert len(kept) == len(pairs)
    assert all(p.accepted and p.pseudo_label == 0 for p in pairs)


def test_filter_none_kept_when_classifier_says_two():
    pairs = _mk_pairs(3, accepted=True)
    kept = pseudo_filter(pairs, fixed_class_classifier(2))
    assert kept == []
    assert all(not p.accepted and p.pseudo_label == 2 for p in pairs)


def test_filter_mixed_counts_exactly():
    # classifier predicting argmax of the healed image's mean sign
    pairs = _mk_pairs(10, classes=(1,))
    model = fixed_class_classifier(0)
    # flip the output by image mean: wire first-layer bias from max-pool sign
    # simpler: relabel half by monkeypatched prediction through data tweak
    for i, p in enumerate(pairs):
        p.healed = p.healed + (100.0 if i % 2 else 0.0)
    # a classifier with batchnorm on huge inputs still yields one argmax per
    # item; just verify count equality against its own predictions
    from retsyn.classify import predict

    healed = np.stack([p.healed for p in pairs])
    pred, _ = predict(model, healed)
    kept = pseudo_filter(pairs, model)
    assert len(kept) == int((pred == 0).sum())


def test_filter_empty_input():
    assert pseudo_filter([], fixed_class_classifier(0)) == []


# ---------------------------------------------------------------------------
# build_detection_set
# ---------------------------------------------------------------------------


def _real_set(n, n_classes=5, res=8):
    per = n // n_classes
    rng = np.random.default_rng(1)
    images = rng.standard_normal((per * n_classes, 3, res, res)).astype(np.float32)
    labels = np.repeat(np.arange(n_classes), per)
    return LabeledImageSet(images=images, labels=labels,
                           ids=[f"r{i}" for i in range(per * n_classes)])


def test_detection_set_arithmetic_1200():
    real = _real_set(1200)
    pairs = _mk_pairs(per_class=80)  # more than needed
    out = build_detection_set(real, pairs)
    synth = out.subset(range(1200, len(out)))
    assert len(out) == 1200 + 600
    assert len(synth) == 600
    hist = synth.histogram()
    assert hist == {0: 300, 1: 300}
    # 75 pairs per abnormal source class
    per_class_ids = [i for i in synth.ids if i.startswith("synth-abn-1-")]
    assert len(per_class_ids) == 75


def test_detection_set_zero_pairs_is_error():
    real = _real_set(1200)
    with pytest.raises(AugmentError):
        build_detection_set(real, [])


def test_detection_set_shortfall_names_class():
    real = _real_set(1200)
    pairs = _mk_pairs(80, classes=(1, 2, 3))  # class 4 missing
    with pytest.raises(AugmentError, match="4"):
        build_detection_set(real, pairs)


def test_detection_set_balanced_synth_labels():
    real = _real_set(160)
    pairs = _mk_pairs(10)
    out = build_detection_set(real, pairs)
    synth = out.subset(range(160, len(out)))
    hist = synth.histogram()
    assert hist[0] == hist[1] == len(synth) // 2


def test_detection_set_rejects_unaccepted_pairs():
    real = _real_set(1200)
    pairs = _mk_pairs(80, accepted=False)
    with pytest.raises(AugmentError):
        build_detection_set(real, pairs)


# ---------------------------------------------------------------------------
# orientation + manifest
# ---------------------------------------------------------------------------


def test_lesion_sign_is_plus_minus_one(ckpt5, dirset):
    s = lesion_sign(ckpt5, dirset, 0, lambda img: float(img.mean()), n_probes=2, seed=0)
    assert s in (-1.0, 1.0)


def test_pair_manifest_jsonl(tmp_path):
    pairs = _mk_pairs(2, classes=(1, 2))
    save_pair_manifest(pairs, tmp_path / "pairs.jsonl")
    lines = (tmp_path / "pairs.jsonl").read_text().strip().splitlines()
    assert len(lines) == 4
    rec = json.loads(lines[0])
    assert set(rec) == {"z_seed", "source_class", "alpha", "pseudo_label", "accepted",
                        "direction_id"}


def test_collect_pairs_shortfall_error(ckpt5, dirset):
    clf = fixed_class_classifier(3)  # never accepts
    with pytest.raises(AugmentError, match="accepted"):
        collect_pairs(ckpt5, dirset, 0, clf, per_class=2, seed=0, max_tries_factor=2)


def test_collect_pairs_deterministic(ckpt5, dirset):
    clf = fixed_class_classifier(0)  # accepts everything
    a = collect_pairs(ckpt5, dirset, 0, clf, per_class=2, seed=3)
    b = collect_pairs(ckpt5, dirset, 0, clf, per_class=2, seed=3)
    assert [p.to_record() for p in a] == [p.to_record() for p in b]
    assert all(np.array_equal(x.healed, y.healed) for x, y in zip(a, b))
