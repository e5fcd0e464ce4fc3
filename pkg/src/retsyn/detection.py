"""Binary DR-detection experiments: real baseline, plain conditional
augmentation, healing-pair augmentation, and pretrain-then-finetune."""
from __future__ import annotations

from .classify import (ClassifierConfig, ExperimentError, FitSchedule, _sample_matching,
                       build_classifier, predict, train_classifier)
from .data import LabeledImageSet, binarize_labels
from .metrics import MetricReport, full_report

DETECTION_SPECS = ("R", "R+S_cstylegan", "R+S_sefa", "S->R_sefa")


def compose_detection(spec_id: str, real_train: LabeledImageSet,
                      synth: LabeledImageSet | None, seed: int = 0) -> dict:
    """Training-set rules. `synth` is the multi-class conditional pool for
    R+S_cstylegan and the paired healed/abnormal binary set for the
    SeFa-based specs."""
    real_bin = binarize_labels(real_train)
    if spec_id == "R":
        return {"id": spec_id, "train": real_bin, "protocol": "single"}
    if synth is None:
        raise ExperimentError(f"spec {spec_id!r} needs a synthetic set")
    if spec_id == "R+S_cstylegan":
        want = {c: n // 2 for c, n in real_train.histogram().items()}
        sampled = _sample_matching(synth, want, seed)
        return {"id": spec_id, "train": real_bin.concat(binarize_labels(sampled)),
                "protocol": "single"}
    if spec_id == "R+S_sefa":
        _check_paired(synth, len(real_train))
        return {"id": spec_id, "train": real_bin.concat(synth), "protocol": "single"}
    if spec_id == "S->R_sefa":
        _check_paired(synth, len(real_train))
        return {"id": spec_id, "pretrain": synth, "train": real_bin,
                "protocol": "pretrain-finetune"}
    raise ExperimentError(f"unknown detection spec {spec_id!r}; known: {DETECTION_SPECS}")


def _check_paired(synth: LabeledImageSet, n_real: int):
    hist = synth.histogram()
    if set(hist) - {0, 1}:
        raise ExperimentError("paired set must carry binary labels")
    if hist.get(0, 0) != hist.get(1, 0):
        raise ExperimentError(f"paired set must balance healed/abnormal, got {hist}")


def run_detection_experiment(spec_id: str, real_train, val_set, test_set, synth,
                             clf_cfg: ClassifierConfig, schedule: FitSchedule,
                             seed: int = 0) -> tuple[MetricReport, dict]:
    plan = compose_detection(spec_id, real_train, synth, seed=seed)
    val_bin, test_bin = binarize_labels(val_set), binarize_labels(test_set)
    model = build_classifier(clf_cfg)
    info: dict = {"id": spec_id, "composition": plan["train"].histogram()}
    if plan["protocol"] == "pretrain-finetune":
        pre = train_classifier(model, plan["pretrain"], val_bin, schedule)
        info["pretrain_best_val"] = pre.best_val_accuracy
    hist = train_classifier(model, plan["train"], val_bin, schedule)
    pred, probs = predict(model, test_bin)
    report = full_report(test_bin.labels, pred, probs, 2)
    info["history"] = hist
    info["model"] = model
    info["truth"] = test_bin.labels
    info["probabilities"] = probs
    return report, info
