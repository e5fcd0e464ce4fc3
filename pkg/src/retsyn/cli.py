"""Command-line entry points for the full pipeline.

Every subcommand accepts --seed and --config (JSON overriding defaults) and
writes its artifacts plus a manifest.json into a run directory.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import sefa as sefa_mod
from .augment import build_detection_set, collect_pairs, lesion_sign, save_pair_manifest
from .classify import (ClassifierConfig, FitSchedule, build_classifier, predict,
                       run_experiment, train_classifier, GRADING_SPECS, DETECTION_SPECS)
from .data import (LabeledImageSet, PreprocessParams, binarize_labels, load_aptos,
                   load_processed_set, make_toy_dataset, preprocess_set,
                   save_processed_set, split_dataset)
from .gan import (GanConfig, NoiseSpec, LayerRange, load_checkpoint,
                  render_class_grid)
from .metrics import MetricReport
from .service import ServeState, create_app, image_to_png
from .training import TrainConfig, StageSpec, train_gan


def _load_config(path) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text())


def _pick(cfg: dict, section: str) -> dict:
    return dict(cfg.get(section, {}))


def _run_dir(args, name: str) -> Path:
    out = Path(args.out) if getattr(args, "out", None) else Path("runs") / f"{name}-{int(time.time())}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, args, artifacts: list[str]):
    manifest = {
        "command": " ".join(sys.argv[1:]),
        "seed": getattr(args, "seed", None),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "artifacts": artifacts,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))


def _save_grid_png(grid: np.ndarray, path: Path):
    path.write_bytes(image_to_png(grid))


def _load_set(path) -> LabeledImageSet:
    return load_processed_set(path)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_prep(args):
    cfg = _load_config(args.config)
    params = PreprocessParams(**_pick(cfg, "preprocess"))
    out = _run_dir(args, "prep")
    raw = load_aptos(args.csv, args.images)
    if raw.load_errors:
        for _, msg in raw.load_errors:
            print(f"warning: {msg}", file=sys.stderr)
    processed = preprocess_set(raw, params)
    save_processed_set(processed, out / "cache", params)
    hist = processed.histogram()
    print(f"prepared {len(processed)} images -> {out / 'cache'}; histogram {hist}")
    _write_manifest(out, args, ["cache"])


def cmd_toy_data(args):
    out = _run_dir(args, "toy-data")
    ds = make_toy_dataset(args.n_per_class, args.resolution, args.n_classes, args.seed)
    save_processed_set(ds, out / "cache")
    print(f"toy dataset: {len(ds)} images at {args.resolution}x{args.resolution} -> {out / 'cache'}")
    _write_manifest(out, args, ["cache"])


def cmd_train_gan(args):
    cfg = _load_config(args.config)
    gan_cfg = GanConfig(**{"seed": args.seed, **_pick(cfg, "gan")})
    tr_kwargs = _pick(cfg, "train")
    if "resolution_ladder" in tr_kwargs:
        tr_kwargs["resolution_ladder"] = [StageSpec(*s) for s in tr_kwargs["resolution_ladder"]]
    train_cfg = TrainConfig(**{"seed": args.seed, **tr_kwargs})
    out = _run_dir(args, "train-gan")
    ds = _load_set(args.data)
    t0 = time.time()

    def progress(step, losses, elapsed):
        print(f"step {step} stage {losses['stage']} d={losses['d_loss']:.3f} "
              f"g={losses['g_loss']:.3f} r1={losses['r1']:.4f} [{elapsed:.0f}s]")

    ckpt = train_gan(ds, gan_cfg, train_cfg, out_dir=out / "checkpoint", progress=progress)
    import shutil

    shutil.move(str(out / "checkpoint" / "losses.csv"), str(out / "losses.csv"))
    print(f"trained {ckpt.step} steps in {time.time() - t0:.0f}s -> {out / 'checkpoint'}")
    _write_manifest(out, args, ["checkpoint", "losses.csv"])


def cmd_generate(args):
    out = _run_dir(args, "generate")
    ckpt = load_checkpoint(args.checkpoint)
    noise = NoiseSpec(args.noise, args.seed if args.noise == "fixed" else None)
    if args.grid:
        grid = render_class_grid(ckpt.generator, samples_per_class=args.n, seed=args.seed,
                                 noise=noise)
        _save_grid_png(grid, out / "grid.png")
        print(f"class grid ({ckpt.config.n_classes} rows x {args.n}) -> {out / 'grid.png'}")
        _write_manifest(out, args, ["grid.png"])
        return
    rng = np.random.default_rng([args.seed, 0x5EED])
    z = rng.standard_normal((args.n, ckpt.config.latent_dim))
    labels = np.full(args.n, args.cls)
    imgs = ckpt.generator.generate(z, labels, noise)
    files = []
    for i, img in enumerate(imgs):
        p = out / f"sample-{args.cls}-{i}.png"
        p.write_bytes(image_to_png(img))
        files.append(p.name)
    print(f"{args.n} samples of class {args.cls} -> {out}")
    _write_manifest(out, args, files)


def cmd_sefa(args):
    out = _run_dir(args, f"sefa-{args.action}")
    ckpt = load_checkpoint(args.checkpoint)
    if args.action == "factorize":
        ds = sefa_mod.factorize_checkpoint(ckpt, args.layer_range, args.space, k=args.k)
        sefa_mod.save_direction_set(ds, out / "directions")
        print(f"k={ds.k} directions ({args.space}/{args.layer_range}), "
              f"eigenvalues {np.round(ds.eigenvalues, 4).tolist()} -> {out / 'directions.json'}")
        _write_manifest(out, args, ["directions.json", "directions.bin"])
        return
    ds = sefa_mod.load_direction_set(args.directions)
    if ds.checkpoint_hash and ds.checkpoint_hash != ckpt.hash():
        raise SystemExit("direction file does not match this checkpoint (hash mismatch)")
    lr = LayerRange.resolve(ds.layer_range, ckpt.config)
    if args.action == "sweep":
        rng = np.random.default_rng([args.seed, 0x5EED])
        z = rng.standard_normal(ckpt.config.latent_dim)
        alphas = [float(a) for a in args.alphas.split(",")]
        frames = sefa_mod.sweep(z, args.cls, ds.direction(args.index), alphas, lr, ckpt)
        strip = np.concatenate(list(frames), axis=2)
        _save_grid_png(strip, out / "sweep.png")
        print(f"sweep over alphas {alphas} -> {out / 'sweep.png'}")
        _write_manifest(out, args, ["sweep.png"])
        return
    if args.action == "rank":
        probe = data_mod.count_lesion_dots if args.probe == "dots" else data_mod.lesion_energy
        ranked = sefa_mod.rank_directions_by_effect(ckpt, ds, probe, n_probes=args.probes,
                                                    seed=args.seed)
        (out / "ranking.json").write_text(json.dumps(ranked, indent=1))
        for r in ranked:
            print(f"{r['id']}: effect {r['effect']:.4f} (eigenvalue {r['eigenvalue']:.4f})")
        _write_manifest(out, args, ["ranking.json"])
        return
    raise SystemExit(f"unknown sefa action {args.action}")


def cmd_mix(args):
    out = _run_dir(args, "mix")
    ckpt = load_checkpoint(args.checkpoint)
    cross = LayerRange.resolve(args.crossover, ckpt.config)
    rng_a = np.random.default_rng([args.seed_a, 0x5EED])
    rng_b = np.random.default_rng([args.seed_b, 0x5EED])
    za = rng_a.standard_normal(ckpt.config.latent_dim)
    zb = rng_b.standard_normal(ckpt.config.latent_dim)
    img = sefa_mod.style_mix(za, args.class_a, zb, args.class_b, cross, ckpt)[0]
    (out / "mix.png").write_bytes(image_to_png(img))
    print(f"mixed {args.class_a}/{args.class_b} over {args.crossover} -> {out / 'mix.png'}")
    _write_manifest(out, args, ["mix.png"])


def cmd_train_clf(args):
    cfg = _load_config(args.config)
    out = _run_dir(args, "train-clf")
    ds = _load_set(args.data)
    if args.binary:
        ds = binarize_labels(ds)
    train, val, test = split_dataset(ds, seed=args.seed)
    n_out = int(ds.labels.max()) + 1
    clf_cfg = ClassifierConfig(**{"n_outputs": n_out, "seed": args.seed, **_pick(cfg, "classifier")})
    schedule = FitSchedule(**{"seed": args.seed, **_pick(cfg, "fit")})
    model = build_classifier(clf_cfg)
    hist = train_classifier(model, train, val, schedule)
    pred, probs = predict(model, test)
    from .metrics import full_report

    report = full_report(test.labels, pred, probs, clf_cfg.n_outputs)
    _emit_report(report, out, "report", truth=test.labels, probabilities=probs)
    np.savez(out / "classifier.npz", **model.state_dict())
    (out / "classifier-config.json").write_text(json.dumps(asdict(clf_cfg)))
    print(f"best val acc {hist.best_val_accuracy:.3f}; test accuracy {report.accuracy:.3f}")
    _write_manifest(out, args, ["classifier.npz", "report.json", "report.csv"])


def _emit_report(report: MetricReport, out: Path, stem: str,
                 truth=None, probabilities=None):
    (out / f"{stem}.json").write_text(json.dumps(report.to_dict(), indent=1))
    with open(out / f"{stem}.csv", "w") as fh:
        fh.write(",".join(MetricReport.TABLE_COLUMNS) + "\n")
        fh.write(",".join(f"{v:.4f}" for v in report.table_row()) + "\n")
    with open(out / f"{stem}-confusion.csv", "w") as fh:
        for row in report.confusion:
            fh.write(",".join(str(int(v)) for v in row) + "\n")
    curves = None
    if truth is not None and probabilities is not None:
        from .metrics import roc_auc

        auc = roc_auc(truth, probabilities)
        curves = {**{f"class-{c}": fts for c, fts in auc["curves"].items()}}
        if auc["micro_curve"]:
            curves["micro"] = auc["micro_curve"]
        with open(out / f"{stem}-roc.csv", "w") as fh:
            fh.write("curve,fpr,tpr\n")
            for name, (fpr, tpr) in curves.items():
                for x, y in zip(fpr, tpr):
                    fh.write(f"{name},{x:.6f},{y:.6f}\n")
    try:
        _plot_report(report, out, stem, curves)
    except Exception as e:  # plotting is best-effort on headless boxes
        print(f"warning: plot failed: {e}", file=sys.stderr)


def _plot_report(report: MetricReport, out: Path, stem: str, curves=None):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4, 4))
    ax.imshow(report.confusion, cmap="Blues")
    n = report.confusion.shape[0]
    for i in range(n):
        for j in range(n):
            ax.text(j, i, str(report.confusion[i, j]), ha="center", va="center")
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    fig.tight_layout()
    fig.savefig(out / f"{stem}-confusion.png", dpi=120)
    plt.close(fig)
    if curves:
        fig, ax = plt.subplots(figsize=(4.5, 4))
        for name, (fpr, tpr) in curves.items():
            ax.plot(fpr, tpr, label=name, lw=1.2)
        ax.plot([0, 1], [0, 1], "k--", lw=0.7)
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(out / f"{stem}-roc.png", dpi=120)
        plt.close(fig)


def cmd_experiment(args):
    cfg = _load_config(args.config)
    out = _run_dir(args, f"experiment-{args.spec}")
    real = _load_set(args.real)
    synth = _load_set(args.synth) if args.synth else None
    train, val, test = split_dataset(real, seed=args.seed)
    if args.spec in GRADING_SPECS:
        n_out = int(real.labels.max()) + 1
        clf_cfg = ClassifierConfig(**{"n_outputs": n_out, "seed": args.seed,
                                      **_pick(cfg, "classifier")})
        schedule = FitSchedule(**{"seed": args.seed, **_pick(cfg, "fit")})
        report, info = run_experiment(args.spec, train, val, test, synth, clf_cfg, schedule,
                                      seed=args.seed)
    elif args.spec in DETECTION_SPECS:
        from .detection import run_detection_experiment

        clf_cfg = ClassifierConfig(**{"n_outputs": 2, "seed": args.seed,
                                      **_pick(cfg, "classifier")})
        schedule = FitSchedule(**{"seed": args.seed, **_pick(cfg, "fit")})
        report, info = run_detection_experiment(args.spec, train, val, test, synth,
                                                clf_cfg, schedule, seed=args.seed)
    else:
        raise SystemExit(f"unknown spec {args.spec}; grading: a..f, detection: {DETECTION_SPECS}")
    _emit_report(report, out, "report", truth=info.get("truth"),
                 probabilities=info.get("probabilities"))
    row = ",".join(f"{v:.4f}" for v in report.table_row())
    print(f"experiment {args.spec}: {dict(zip(MetricReport.TABLE_COLUMNS, report.table_row()))}")
    _write_manifest(out, args, ["report.json", "report.csv"])


def cmd_augment_sefa(args):
    out = _run_dir(args, "augment-sefa")
    ckpt = load_checkpoint(args.checkpoint)
    dirset = sefa_mod.load_direction_set(args.directions)
    real = _load_set(args.real)
    real_train, _, _ = split_dataset(real, seed=args.seed)
    model, clf_cfg = _load_classifier(args.classifier)
    sign = lesion_sign(ckpt, dirset, args.index, data_mod.lesion_energy, seed=args.seed)
    n_abn = ckpt.config.n_classes - 1
    per_class = len(real_train) // (4 * n_abn)
    pairs = collect_pairs(ckpt, dirset, args.index, model, per_class, seed=args.seed,
                          heal_sign=sign)
    detection = build_detection_set(real_train, pairs, n_abnormal_classes=n_abn)
    pairs_only = detection.subset(range(len(real_train), len(detection)))
    pairs_only.provenance = "healed"
    save_pair_manifest(pairs, out / "pairs.jsonl")
    save_processed_set(detection, out / "detection-cache")
    save_processed_set(pairs_only, out / "pairs-cache")
    print(f"{len(pairs)} accepted pairs (heal sign {sign:+.0f}); "
          f"detection set of {len(detection)} -> {out / 'detection-cache'}")
    _write_manifest(out, args, ["pairs.jsonl", "detection-cache", "pairs-cache"])


def _load_classifier(path):
    path = Path(path)
    cfg = ClassifierConfig(**json.loads((path / "classifier-config.json").read_text()))
    model = build_classifier(cfg)
    state = dict(np.load(path / "classifier.npz"))
    model.load_state_dict(state)
    return model, cfg


def cmd_serve(args):
    import uvicorn

    stems = []
    for d in args.directions or []:
        stems.append(Path(d).with_suffix(""))
    state = ServeState.from_paths(args.checkpoint, stems, strict_hash=not args.allow_mismatch)
    app = create_app(state, ui_dir=args.ui)
    print(f"serving checkpoint {state.hash[:12]} on port {args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")


def cmd_bench(args):
    from .bench import run_benchmarks

    run_benchmarks(repeats=args.repeats)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="retsyn", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--config", default=None, help="JSON config file")
        sp.add_argument("--out", default=None, help="run directory")

    sp = sub.add_parser("prep", help="preprocess an APTOS-format dataset")
    sp.add_argument("--csv", required=True)
    sp.add_argument("--images", required=True)
    common(sp)
    sp.set_defaults(fn=cmd_prep)

    sp = sub.add_parser("toy-data", help="generate the procedural toy dataset")
    sp.add_argument("--n-per-class", type=int, default=200)
    sp.add_argument("--resolution", type=int, default=16)
    sp.add_argument("--n-classes", type=int, default=3)
    common(sp)
    sp.set_defaults(fn=cmd_toy_data)

    sp = sub.add_parser("train-gan", help="progressive adversarial training")
    sp.add_argument("--data", required=True, help="processed cache directory")
    common(sp)
    sp.set_defaults(fn=cmd_train_gan)

    sp = sub.add_parser("generate", help="conditional samples from a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--cls", type=int, default=0)
    sp.add_argument("--n", type=int, default=3)
    sp.add_argument("--noise", choices=("zero", "fixed", "fresh"), default="zero")
    sp.add_argument("--grid", action="store_true", help="one row per class")
    common(sp)
    sp.set_defaults(fn=cmd_generate)

    sp = sub.add_parser("sefa", help="factorize | sweep | rank")
    sp.add_argument("action", choices=("factorize", "sweep", "rank"))
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--space", choices=("Z", "W"), default="W")
    sp.add_argument("--layer-range", default="all")
    sp.add_argument("--k", type=int, default=None)
    sp.add_argument("--directions", help="direction file stem or .json path")
    sp.add_argument("--index", type=int, default=0)
    sp.add_argument("--cls", type=int, default=0)
    sp.add_argument("--alphas", default="-3,-1.5,0,1.5,3")
    sp.add_argument("--probe", choices=("dots", "energy"), default="energy")
    sp.add_argument("--probes", type=int, default=16)
    common(sp)
    sp.set_defaults(fn=cmd_sefa)

    sp = sub.add_parser("mix", help="style mixing between two seeds")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--seed-a", type=int, required=True)
    sp.add_argument("--class-a", type=int, required=True)
    sp.add_argument("--seed-b", type=int, required=True)
    sp.add_argument("--class-b", type=int, required=True)
    sp.add_argument("--crossover", default="top")
    common(sp)
    sp.set_defaults(fn=cmd_mix)

    sp = sub.add_parser("train-clf", help="train the grading/detection classifier")
    sp.add_argument("--data", required=True)
    sp.add_argument("--binary", action="store_true")
    common(sp)
    sp.set_defaults(fn=cmd_train_clf)

    sp = sub.add_parser("experiment", help="comparative experiment a..f or detection id")
    sp.add_argument("spec")
    sp.add_argument("--real", required=True)
    sp.add_argument("--synth", default=None)
    common(sp)
    sp.set_defaults(fn=cmd_experiment)

    sp = sub.add_parser("augment-sefa", help="healing-based detection augmentation")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--directions", required=True)
    sp.add_argument("--classifier", required=True, help="train-clf output directory")
    sp.add_argument("--real", required=True)
    sp.add_argument("--index", type=int, default=0)
    common(sp)
    sp.set_defaults(fn=cmd_augment_sefa)

    sp = sub.add_parser("serve", help="HTTP inference service")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--directions", nargs="*", default=None)
    sp.add_argument("--port", type=int, default=8000)
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--ui", default=None, help="built explorer UI directory")
    sp.add_argument("--allow-mismatch", action="store_true")
    common(sp)
    sp.set_defaults(fn=cmd_serve)

    sp = sub.add_parser("bench", help="numba vs numpy kernel benchmark")
    sp.add_argument("--repeats", type=int, default=30)
    common(sp)
    sp.set_defaults(fn=cmd_bench)

    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    args.fn(args)


if __name__ == "__main__":
    main()
