"""Dataset ingestion, fundus preprocessing, the procedural toy dataset, and
split/binarization utilities.

Images inside a :class:`LabeledImageSet` are always channel-first float32 in
[-1, 1]; raw on-disk images are 8-bit RGB.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import backend

GRADES = (0, 1, 2, 3, 4)
BLACK_CROP_THRESHOLD = 10.0  # on the [0,255] intensity scale


class DataError(ValueError):
    pass


@dataclass
class PreprocessParams:
    """Blur-subtraction enhancement: out = alpha*I + beta*(G(rho)*I) + gamma."""

    alpha: float = 4.0
    beta: float = -4.0
    gamma_offset: float = 128.0
    rho: float | None = None  # defaults to target_size / 30
    target_size: int = 256

    def __post_init__(self):
        if self.rho is None:
            self.rho = self.target_size / 30.0
        if self.rho <= 0:
            raise DataError("rho must be > 0")
        if self.target_size < 4:
            raise DataError("target_size must be >= 4")


@dataclass
class LabeledImageSet:
    images: list[np.ndarray] | np.ndarray  # each (3,H,W) float32 in [-1,1]
    labels: np.ndarray  # (N,) integer grades
    ids: list[str]
    split: str | None = None
    provenance: str = "real"
    load_errors: list[tuple[str, str]] = field(default_factory=list)

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i):
        return self.images[i], int(self.labels[i])

    def items(self):
        for i in range(len(self)):
            yield self[i]

    def histogram(self) -> dict[int, int]:
        vals, counts = np.unique(self.labels, return_counts=True)
        return {int(v): int(c) for v, c in zip(vals, counts)}

    def stacked(self) -> np.ndarray:
        if isinstance(self.images, np.ndarray):
            return self.images
        return np.stack(self.images)

    def subset(self, idx, split=None) -> "LabeledImageSet":
        idx = np.asarray(idx, dtype=np.int64)
        imgs = self.stacked()[idx] if len(idx) else np.zeros((0,), dtype=np.float32)
        return LabeledImageSet(
            images=imgs,
            labels=self.labels[idx],
            ids=[self.ids[i] for i in idx],
            split=split if split is not None else self.split,
            provenance=self.provenance,
        )

    def concat(self, other: "LabeledImageSet", provenance="mixed") -> "LabeledImageSet":
        return LabeledImageSet(
            images=np.concatenate([self.stacked(), other.stacked()]),
            labels=np.concatenate([self.labels, other.labels]),
            ids=self.ids + other.ids,
            split=self.split,
            provenance=provenance,
        )


# ---------------------------------------------------------------------------
# APTOS-format loading
# ---------------------------------------------------------------------------


def load_aptos(csv_path, image_dir, strict=False) -> LabeledImageSet:
    """Read an `id_code,diagnosis` CSV and its image directory.

    Pixel values are mapped linearly to [-1,1]; run :func:`preprocess_set`
    for the actual enhancement pipeline. Rows with a missing file or an
    out-of-range diagnosis are rejected and reported in ``load_errors``.
    """
    from PIL import Image

    csv_path, image_dir = Path(csv_path), Path(image_dir)
    images, labels, ids, errors = [], [], [], []
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or reader.fieldnames[:2] != ["id_code", "diagnosis"]:
            raise DataError(f"expected header id_code,diagnosis in {csv_path}")
        for row in reader:
            id_code = row["id_code"]
            try:
                grade = int(row["diagnosis"])
            except (TypeError, ValueError):
                errors.append((id_code, f"row {id_code!r}: non-integer diagnosis {row['diagnosis']!r}"))
                continue
            if grade not in GRADES:
                errors.append((id_code, f"row {id_code!r}: diagnosis {grade} outside 0..4"))
                continue
            path = None
            for ext in (".png", ".jpg", ".jpeg"):
                cand = image_dir / f"{id_code}{ext}"
                if cand.exists():
                    path = cand
                    break
            if path is None:
                errors.append((id_code, f"row {id_code!r}: no image file under {image_dir}"))
                continue
            arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32)
            images.append((arr.transpose(2, 0, 1) / 255.0) * 2.0 - 1.0)
            labels.append(grade)
            ids.append(id_code)
    if strict and errors:
        raise DataError("; ".join(msg for _, msg in errors))
    return LabeledImageSet(
        images=images,
        labels=np.asarray(labels, dtype=np.int64),
        ids=ids,
        provenance="real",
        load_errors=errors,
    )


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------


def crop_black_border(img_255: np.ndarray, threshold=BLACK_CROP_THRESHOLD) -> np.ndarray:
    """Drop leading/trailing rows and columns whose max intensity is below
    `threshold`. Input (H,W,3) on the [0,255] scale."""
    prof_r = img_255.max(axis=(1, 2))
    prof_c = img_255.max(axis=(0, 2))
    rows = np.nonzero(prof_r >= threshold)[0]
    cols = np.nonzero(prof_c >= threshold)[0]
    if rows.size == 0 or cols.size == 0:
        raise DataError("empty field of view")
    return img_255[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample of (H,W,C) with half-pixel centers."""
    h, w = img.shape[:2]
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    a = img[np.ix_(y0, x0)]
    b = img[np.ix_(y0, x1)]
    c = img[np.ix_(y1, x0)]
    d = img[np.ix_(y1, x1)]
    top = a * (1 - fx) + b * fx
    bot = c * (1 - fx) + d * fx
    return top * (1 - fy) + bot * fy


def enhance(img_255: np.ndarray, p: PreprocessParams) -> np.ndarray:
    """Channel-wise alpha*I + beta*blur(I) + gamma on the [0,255] scale."""
    blurred = np.stack([backend.gaussian_blur(img_255[..., c], p.rho) for c in range(img_255.shape[-1])], axis=-1)
    return p.alpha * img_255 + p.beta * blurred + p.gamma_offset


def preprocess_image(img, p: PreprocessParams) -> np.ndarray:
    """Crop, resize, enhance, clip, normalize. Input (H,W,3) on [0,255];
    output (3,S,S) float32 in [-1,1]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[-1] != 3:
        raise DataError(f"expected (H,W,3) image, got {img.shape}")
    img = crop_black_border(img)
    img = resize_bilinear(img, p.target_size, p.target_size)
    img = enhance(img, p)
    img = np.clip(img, 0.0, 255.0)
    out = (img / 255.0) * 2.0 - 1.0
    return out.transpose(2, 0, 1).astype(np.float32)


def preprocess_set(ds: LabeledImageSet, p: PreprocessParams) -> LabeledImageSet:
    """Apply :func:`preprocess_image` to a raw-loaded set (values in [-1,1]
    are mapped back to [0,255] first)."""
    out = []
    for img in ds.images:
        raw = (np.asarray(img, dtype=np.float64).transpose(1, 2, 0) + 1.0) * 0.5 * 255.0
        out.append(preprocess_image(raw, p))
    return LabeledImageSet(
        images=np.stack(out) if out else [],
        labels=ds.labels.copy(),
        ids=list(ds.ids),
        split=ds.split,
        provenance=ds.provenance,
    )


# ---------------------------------------------------------------------------
# procedural toy dataset
# ---------------------------------------------------------------------------

# colors in [-1,1]; lesions are the only blue-bright structure, which is what
# the dot-count oracle keys on
_BODY = np.array([0.25, -0.35, -0.72])
_OPTIC = np.array([0.85, 0.55, -0.45])
_VESSEL = np.array([-0.20, -0.70, -0.92])
_LESION = np.array([0.95, 0.85, 0.78])
LESION_BLUE_THRESHOLD = 0.15


def _toy_geometry(resolution: int):
    r0 = 0.42 * resolution
    dot_r = max(1.1, 0.05 * resolution)
    min_sep = 2.0 * dot_r + max(1.3, resolution / 14.0)
    return r0, dot_r, min_sep


def render_toy_image(resolution: int, grade: int, rng: np.random.Generator) -> np.ndarray:
    """One synthetic fundus: disc + optic blob + vessels + `grade` lesion dots."""
    res = resolution
    r0, dot_r, min_sep = _toy_geometry(res)
    cy = res / 2 + rng.uniform(-0.02, 0.02) * res
    cx = res / 2 + rng.uniform(-0.02, 0.02) * res
    r0 = r0 * rng.uniform(0.97, 1.03)
    yy, xx = np.mgrid[0:res, 0:res].astype(np.float64) + 0.5
    disc = (yy - cy) ** 2 + (xx - cx) ** 2 <= r0**2

    img = np.full((res, res, 3), -1.0)
    body = _BODY + rng.uniform(-0.04, 0.04, 3)
    img[disc] = body

    # optic blob on a random side
    side = 1 if rng.random() < 0.5 else -1
    oy = cy + rng.uniform(-0.10, 0.10) * r0
    ox = cx + side * 0.55 * r0
    orad = 0.28 * r0
    optic = ((yy - oy) ** 2 + (xx - ox) ** 2 <= orad**2) & disc
    img[optic] = _OPTIC

    # vessels: dark strokes fanning out from the optic blob
    n_vessels = 2
    for _ in range(n_vessels):
        ang = rng.uniform(0, 2 * np.pi)
        curve = rng.uniform(-0.35, 0.35)
        t = np.linspace(0.0, 1.0, 6 * res)
        length = rng.uniform(0.9, 1.5) * r0
        py = oy + t * length * np.sin(ang) + curve * r0 * np.sin(np.pi * t) * np.cos(ang)
        px = ox + t * length * np.cos(ang) - curve * r0 * np.sin(np.pi * t) * np.sin(ang)
        iy = np.round(py - 0.5).astype(int)
        ix = np.round(px - 0.5).astype(int)
        ok = (iy >= 0) & (iy < res) & (ix >= 0) & (ix < res)
        iy, ix = iy[ok], ix[ok]
        keep = disc[iy, ix] & ~optic[iy, ix]
        img[iy[keep], ix[keep]] = _VESSEL

    # lesion dots: rejection-sample positions inside the disc, mutually
    # separated and clear of the optic blob; restart the whole placement when
    # a greedy attempt wedges itself
    centers: list[tuple[float, float]] = []
    for restart in range(80):
        centers = []
        attempts = 0
        while len(centers) < grade and attempts < 250 * max(grade, 1):
            attempts += 1
            rr = rng.uniform(0, 0.75 * r0)
            aa = rng.uniform(0, 2 * np.pi)
            ly, lx = cy + rr * np.sin(aa), cx + rr * np.cos(aa)
            if (ly - oy) ** 2 + (lx - ox) ** 2 < (orad + dot_r + 0.8) ** 2:
                continue
            if any((ly - qy) ** 2 + (lx - qx) ** 2 < min_sep**2 for qy, qx in centers):
                continue
            centers.append((ly, lx))
        if len(centers) == grade:
            break
    else:
        raise DataError(
            f"resolution {res} too small to place {grade} lesion dots without overlap"
        )
    for ly, lx in centers:
        dot = (yy - ly) ** 2 + (xx - lx) ** 2 <= dot_r**2
        img[dot] = _LESION

    return img.transpose(2, 0, 1).astype(np.float32)


def count_lesion_dots(img: np.ndarray, min_area: int = 2) -> int:
    """Rule-based oracle: count connected blue-bright blobs.

    Only lesion dots are rendered blue-bright, so on clean toy images the
    count equals the grade; on generated images it measures lesion content.
    """
    blue = np.asarray(img)[2]
    mask = blue > LESION_BLUE_THRESHOLD
    lab, n = ndimage.label(mask)
    if n == 0:
        return 0
    sizes = ndimage.sum_labels(np.ones_like(blue), lab, index=np.arange(1, n + 1))
    return int((sizes >= min_area).sum())


def lesion_energy(img: np.ndarray) -> float:
    """Continuous probe: total blue brightness above the lesion threshold."""
    blue = np.asarray(img)[2]
    return float(np.clip(blue - LESION_BLUE_THRESHOLD, 0, None).sum())


def make_toy_dataset(n_per_class: int, resolution: int, n_classes: int, seed: int) -> LabeledImageSet:
    if resolution not in (8, 16, 32, 64):
        raise DataError(f"resolution must be one of 8/16/32/64, got {resolution}")
    if not 1 <= n_classes <= 5:
        raise DataError("n_classes must be in 1..5")
    images, labels, ids = [], [], []
    for grade in range(n_classes):
        for i in range(n_per_class):
            rng = np.random.default_rng([seed, grade, i])
            images.append(render_toy_image(resolution, grade, rng))
            labels.append(grade)
            ids.append(f"toy-{grade}-{i}")
    return LabeledImageSet(
        images=np.stack(images),
        labels=np.asarray(labels, dtype=np.int64),
        ids=ids,
        provenance="real",
    )


def render_toy_pair(resolution: int, grade: int, rng_seed) -> tuple[np.ndarray, np.ndarray]:
    """A graded image and its grade-0 twin sharing all non-lesion geometry."""
    a = render_toy_image(resolution, grade, np.random.default_rng(rng_seed))
    b = render_toy_image(resolution, 0, np.random.default_rng(rng_seed))
    return a, b


# ---------------------------------------------------------------------------
# splitting / label ops
# ---------------------------------------------------------------------------


def split_dataset(ds: LabeledImageSet, fractions=(0.70, 0.20, 0.10), seed: int = 0):
    """Stratified train/val/test split; deterministic, disjoint, exhaustive."""
    if not np.isclose(sum(fractions), 1.0):
        raise DataError(f"fractions must sum to 1, got {fractions}")
    rng = np.random.default_rng([seed, 0x5197])
    buckets: list[list[int]] = [[], [], []]
    for cls in np.unique(ds.labels):
        idx = np.nonzero(ds.labels == cls)[0]
        rng.shuffle(idx)
        n = len(idx)
        base = [int(np.floor(f * n)) for f in fractions]
        rem = n - sum(base)
        fracpart = [f * n - b for f, b in zip(fractions, base)]
        for j in np.argsort(fracpart)[::-1][:rem]:
            base[j] += 1
        start = 0
        for b, count in zip(buckets, base):
            b.extend(idx[start : start + count].tolist())
            start += count
    names = ("train", "val", "test")
    return tuple(ds.subset(sorted(b), split=name) for b, name in zip(buckets, names))


def binarize_labels(ds: LabeledImageSet) -> LabeledImageSet:
    """Grade 0 stays 0; grades 1..4 merge into class 1. Pixels untouched."""
    if not np.isin(ds.labels, GRADES).all():
        raise DataError("labels outside 0..4")
    return LabeledImageSet(
        images=ds.images,
        labels=(ds.labels > 0).astype(np.int64),
        ids=list(ds.ids),
        split=ds.split,
        provenance=ds.provenance,
    )


# ---------------------------------------------------------------------------
# preprocessed cache (one .bin + .json sidecar per image)
# ---------------------------------------------------------------------------


def save_processed_set(ds: LabeledImageSet, out_dir, params: PreprocessParams | None = None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index = {"ids": ds.ids, "split": ds.split, "provenance": ds.provenance}
    for i, (img, label) in enumerate(ds.items()):
        arr = np.ascontiguousarray(img, dtype="<f4")
        (out_dir / f"{ds.ids[i]}.bin").write_bytes(arr.tobytes())
        sidecar = {
            "shape": list(arr.shape),
            "dtype": "<f4",
            "label": int(label),
            "params": asdict(params) if params else None,
            "source_hash": hashlib.sha256(arr.tobytes()).hexdigest(),
        }
        (out_dir / f"{ds.ids[i]}.json").write_text(json.dumps(sidecar))
    (out_dir / "index.json").write_text(json.dumps(index))


def load_processed_set(in_dir) -> LabeledImageSet:
    in_dir = Path(in_dir)
    index = json.loads((in_dir / "index.json").read_text())
    images, labels = [], []
    for id_code in index["ids"]:
        sidecar = json.loads((in_dir / f"{id_code}.json").read_text())
        raw = (in_dir / f"{id_code}.bin").read_bytes()
        arr = np.frombuffer(raw, dtype="<f4").reshape(sidecar["shape"])
        images.append(arr.copy())
        labels.append(sidecar["label"])
    return LabeledImageSet(
        images=np.stack(images) if images else [],
        labels=np.asarray(labels, dtype=np.int64),
        ids=list(index["ids"]),
        split=index.get("split"),
        provenance=index.get("provenance", "real"),
    )
