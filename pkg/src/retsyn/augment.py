"""Healing-based augmentation for the detection task: synthesize abnormal
images, push them along the lesion direction until a pseudo-labeler calls
them healthy, and assemble the paired binary training set."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classify import Classifier, predict
from .data import LabeledImageSet, binarize_labels
from .gan import GeneratorCheckpoint, LayerRange, NoiseSpec
from .sefa import DirectionSet, sweep

ABNORMAL_CLASSES = (1, 2, 3, 4)
DEFAULT_ALPHAS = (-1.0, -2.0, -3.0)


class AugmentError(ValueError):
    pass


@dataclass
class HealedPair:
    abnormal: np.ndarray
    healed: np.ndarray
    source_class: int
    z_seed: int
    alpha: float
    pseudo_label: int
    accepted: bool
    direction_id: str = ""

    def to_record(self) -> dict:
        return {
            "z_seed": self.z_seed,
            "source_class": self.source_class,
            "alpha": self.alpha,
            "pseudo_label": self.pseudo_label,
            "accepted": self.accepted,
            "direction_id": self.direction_id,
        }


def lesion_sign(ckpt, dirset: DirectionSet, direction_index: int, probe_fn,
                n_probes: int = 8, seed: int = 0) -> float:
    """Orientation along which the probe decreases (eigenvector sign is
    conventional, so the healing side is determined empirically)."""
    cfg = ckpt.config if isinstance(ckpt, GeneratorCheckpoint) else ckpt.cfg
    lr = LayerRange.resolve(dirset.layer_range, cfg)
    n = dirset.direction(direction_index)
    rng = np.random.default_rng([seed, 0x516E])
    diff = 0.0
    for _ in range(n_probes):
        z = rng.standard_normal(cfg.latent_dim)
        c = int(rng.integers(1, cfg.n_classes))
        frames = sweep(z, c, n, [-2.0, 2.0], lr, ckpt, space=dirset.space)
        diff += probe_fn(frames[1]) - probe_fn(frames[0])
    return -1.0 if diff > 0 else 1.0


def sefa_heal(ckpt, dirset: DirectionSet, direction_index: int, z_seed: int,
              c_abnormal: int, classifier: Classifier,
              alphas=DEFAULT_ALPHAS, heal_sign: float = -1.0,
              noise: NoiseSpec | None = None) -> HealedPair:
    """One candidate pair: the conditional sample and its first healed
    version the pseudo-labeler accepts as class 0 (else marked rejected)."""
    if c_abnormal not in ABNORMAL_CLASSES:
        raise AugmentError(f"abnormal class must be one of {ABNORMAL_CLASSES}")
    cfg = ckpt.config if isinstance(ckpt, GeneratorCheckpoint) else ckpt.cfg
    lr = LayerRange.resolve(dirset.layer_range, cfg)
    n = dirset.direction(direction_index)
    noise = noise or NoiseSpec("zero")
    rng = np.random.default_rng([z_seed, 0x4EA1])
    z = rng.standard_normal(cfg.latent_dim)
    signed = [heal_sign * abs(a) for a in alphas]
    frames = sweep(z, c_abnormal, n, [0.0] + list(signed), lr, ckpt, noise=noise,
                   space=dirset.space)
    abnormal = frames[0]
    pred, _ = predict(classifier, frames[1:])
    for i, alpha in enumerate(signed):
        if pred[i] == 0:
            return HealedPair(abnormal, frames[1 + i], c_abnormal, z_seed, alpha,
                              0, True, dirset.ids()[direction_index])
    last = len(signed) - 1
    return HealedPair(abnormal, frames[1 + last], c_abnormal, z_seed, signed[last],
                      int(pred[last]), False, dirset.ids()[direction_index])


def pseudo_filter(candidates: list[HealedPair], classifier: Classifier) -> list[HealedPair]:
    """Keep candidates whose healed image the classifier calls class 0."""
    if not candidates:
        return []
    healed = np.stack([c.healed for c in candidates])
    pred, _ = predict(classifier, healed)
    kept = []
    for cand, p in zip(candidates, pred):
        cand.pseudo_label = int(p)
        cand.accepted = bool(p == 0)
        if cand.accepted:
            kept.append(cand)
    return kept


def collect_pairs(ckpt, dirset: DirectionSet, direction_index: int,
                  classifier: Classifier, per_class: int, seed: int = 0,
                  alphas=DEFAULT_ALPHAS, heal_sign: float = -1.0,
                  max_tries_factor: int = 30) -> list[HealedPair]:
    """Resample latents until `per_class` accepted pairs exist for every
    abnormal source class available to the model."""
    cfg = ckpt.config if isinstance(ckpt, GeneratorCheckpoint) else ckpt.cfg
    classes = [c for c in ABNORMAL_CLASSES if c < cfg.n_classes]
    accepted: dict[int, list[HealedPair]] = {c: [] for c in classes}
    budget = max_tries_factor * per_class
    for c in classes:
        tries = 0
        while len(accepted[c]) < per_class and tries < budget:
            pair = sefa_heal(ckpt, dirset, direction_index, seed * 1_000_003 + c * 7919 + tries,
                             c, classifier, alphas=alphas, heal_sign=heal_sign)
            if pair.accepted:
                accepted[c].append(pair)
            tries += 1
        if len(accepted[c]) < per_class:
            raise AugmentError(
                f"class {c}: only {len(accepted[c])}/{per_class} healed pairs accepted "
                f"after {tries} tries"
            )
    return [p for c in classes for p in accepted[c]]


def build_detection_set(real_train: LabeledImageSet, accepted_pairs: list[HealedPair],
                        n_abnormal_classes: int = 4) -> LabeledImageSet:
    """Binary set: binarized real images plus paired synthetics equal to half
    the real count (|real|/16 pairs per abnormal source class, floored)."""
    n_real = len(real_train)
    per_class = n_real // (4 * n_abnormal_classes)
    if per_class == 0:
        raise AugmentError(f"real set of {n_real} too small to pair against")
    by_class: dict[int, list[HealedPair]] = {}
    for p in accepted_pairs:
        if not p.accepted:
            continue
        by_class.setdefault(p.source_class, []).append(p)
    classes = sorted(by_class)
    shortfall = {
        c: per_class - len(by_class.get(c, []))
        for c in range(1, n_abnormal_classes + 1)
        if len(by_class.get(c, [])) < per_class
    }
    if shortfall:
        raise AugmentError(f"not enough accepted pairs per class (missing {shortfall})")
    images, labels, ids = [], [], []
    for c in classes:
        for i, p in enumerate(by_class[c][:per_class]):
            images.append(p.abnormal)
            labels.append(1)
            ids.append(f"synth-abn-{c}-{i}")
            images.append(p.healed)
            labels.append(0)
            ids.append(f"synth-heal-{c}-{i}")
    synth = LabeledImageSet(
        images=np.stack(images),
        labels=np.asarray(labels, dtype=np.int64),
        ids=ids,
        provenance="healed",
    )
    return binarize_labels(real_train).concat(synth, provenance="mixed")


def save_pair_manifest(pairs: list[HealedPair], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for p in pairs:
            fh.write(json.dumps(p.to_record()) + "\n")
