import json

import numpy as np
import pytest
from PIL import Image

from retsyn import backend, data
from retsyn.data import (DataError, PreprocessParams, binarize_labels, count_lesion_dots,
                         load_aptos, load_processed_set, make_toy_dataset,
                         preprocess_image, save_processed_set, split_dataset)


def dense_blur_oracle(img: np.ndarray, rho: float) -> np.ndarray:
    """Brute-force 2-D convolution with the truncated kernel and explicit
    reflective index folding (the independent check for the separable path)."""
    k = backend.gaussian_kernel1d(rho)
    r = len(k) // 2
    h, w = img.shape
    out = np.zeros_like(img, dtype=np.float64)

    def fold(i, n):
        while i < 0 or i >= n:
            if i < 0:
                i = -i - 1
            if i >= n:
                i = 2 * n - 1 - i
        return i

    for y in range(h):
        for x in range(w):
            acc = 0.0
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    acc += k[dy + r] * k[dx + r] * img[fold(y + dy, h), fold(x + dx, w)]
            out[y, x] = acc
    return out


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------


def test_constant_image_maps_to_gamma():
    # alpha*v + beta*v + gamma with beta = -alpha leaves exactly gamma
    p = PreprocessParams(alpha=4, beta=-4, gamma_offset=128, target_size=16)
    img = np.full((24, 24, 3), 100.0)
    out = preprocess_image(img, p)
    assert out.shape == (3, 16, 16)
    assert np.allclose(out, 2 * 128 / 255 - 1, atol=1e-6)


def test_identity_parameters_pass_through():
    p = PreprocessParams(alpha=1, beta=0, gamma_offset=0, target_size=8)
    rng = np.random.default_rng(0)
    img = rng.uniform(20, 235, (8, 8, 3))
    out = preprocess_image(img, p)
    expected = (img / 255.0 * 2 - 1).transpose(2, 0, 1)
    assert np.allclose(out, expected, atol=1e-6)


def test_impulse_blur_matches_dense_oracle():
    imp = np.zeros((9, 9))
    imp[4, 4] = 1.0
    ours = backend.gaussian_blur(imp, 1.0)
    oracle = dense_blur_oracle(imp, 1.0)
    assert np.abs(ours - oracle).max() < 1e-6


def test_blur_oracle_on_random_image():
    rng = np.random.default_rng(1)
    img = rng.uniform(0, 255, (11, 13))
    assert np.abs(backend.gaussian_blur(img, 1.4) - dense_blur_oracle(img, 1.4)).max() < 1e-6


def test_preprocess_output_always_in_range():
    rng = np.random.default_rng(2)
    p = PreprocessParams(target_size=12)
    for _ in range(20):
        img = rng.uniform(0, 255, (20, 25, 3))
        out = preprocess_image(img, p)
        assert out.min() >= -1.0 and out.max() <= 1.0


def test_black_border_cropped_before_resize():
    p = PreprocessParams(alpha=1, beta=0, gamma_offset=0, target_size=4)
    img = np.zeros((12, 12, 3))
    img[4:8, 4:8] = 200.0
    out = preprocess_image(img, p)
    # the bright interior fills the full output after cropping
    assert np.allclose(out, 2 * 200 / 255 - 1, atol=1e-6)


def test_fully_black_image_rejected():
    p = PreprocessParams()
    with pytest.raises(DataError, match="empty field of view"):
        preprocess_image(np.zeros((10, 10, 3)), p)


def test_default_rho_tracks_target_size():
    p = PreprocessParams(target_size=256)
    assert np.isclose(p.rho, 256 / 30)


# ---------------------------------------------------------------------------
# APTOS loading
# ---------------------------------------------------------------------------


def _write_aptos(tmp_path, rows, sizes=None):
    csv_path = tmp_path / "train.csv"
    lines = ["id_code,diagnosis"] + [f"{i},{d}" for i, d in rows]
    csv_path.write_text("\n".join(lines))
    img_dir = tmp_path / "imgs"
    img_dir.mkdir(exist_ok=True)
    for idx, (i, _) in enumerate(rows):
        size = (sizes or {}).get(i, (6, 6))
        arr = np.full(size + (3,), 50 + 10 * idx, dtype=np.uint8)
        Image.fromarray(arr).save(img_dir / f"{i}.png")
    return csv_path, img_dir


def test_load_aptos_basic(tmp_path):
    csv_path, img_dir = _write_aptos(tmp_path, [("a", 0), ("b", 2)])
    ds = load_aptos(csv_path, img_dir)
    assert len(ds) == 2
    assert ds.histogram() == {0: 1, 2: 1}
    assert not ds.load_errors


def test_load_aptos_rejects_out_of_range_label(tmp_path):
    csv_path, img_dir = _write_aptos(tmp_path, [("a", 0), ("c", 7)])
    ds = load_aptos(csv_path, img_dir)
    assert len(ds) == 1
    assert any("c" in msg for _, msg in ds.load_errors)


def test_load_aptos_reports_missing_file(tmp_path):
    csv_path, img_dir = _write_aptos(tmp_path, [("a", 1)])
    (img_dir / "a.png").unlink()
    ds = load_aptos(csv_path, img_dir)
    assert len(ds) == 0
    assert any("a" in msg for _, msg in ds.load_errors)
    with pytest.raises(DataError):
        load_aptos(csv_path, img_dir, strict=True)


def test_load_aptos_requires_header(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("image,label\nx,0\n")
    with pytest.raises(DataError, match="header"):
        load_aptos(bad, tmp_path)


# ---------------------------------------------------------------------------
# toy dataset and its oracle
# ---------------------------------------------------------------------------


def test_toy_dataset_counts_and_oracle():
    ds = make_toy_dataset(10, 16, 3, seed=7)
    assert len(ds) == 30
    for img, label in ds.items():
        assert count_lesion_dots(img) == label


def test_toy_dataset_grade0_has_no_dots():
    ds = make_toy_dataset(5, 16, 1, seed=3)
    assert all(count_lesion_dots(img) == 0 for img, _ in ds.items())


def test_toy_dataset_deterministic():
    a = make_toy_dataset(4, 16, 3, seed=11)
    b = make_toy_dataset(4, 16, 3, seed=11)
    assert np.array_equal(a.stacked(), b.stacked())
    c = make_toy_dataset(4, 16, 3, seed=12)
    assert not np.array_equal(a.stacked(), c.stacked())


def test_toy_dataset_range_and_shape():
    ds = make_toy_dataset(2, 32, 5, seed=0)
    arr = ds.stacked()
    assert arr.shape == (10, 3, 32, 32)
    assert arr.min() >= -1 and arr.max() <= 1


def test_toy_dataset_rejects_impossible_placement():
    with pytest.raises(DataError, match="too small"):
        make_toy_dataset(2, 8, 5, seed=0)


def test_toy_dataset_rejects_bad_resolution():
    with pytest.raises(DataError):
        make_toy_dataset(2, 10, 3, seed=0)


# ---------------------------------------------------------------------------
# splitting / binarization
# ---------------------------------------------------------------------------


def test_split_exact_fractions_single_class():
    ds = make_toy_dataset(100, 16, 1, seed=5)
    tr, va, te = split_dataset(ds, seed=9)
    assert (len(tr), len(va), len(te)) == (70, 20, 10)


def test_split_is_partition():
    ds = make_toy_dataset(17, 16, 3, seed=6)
    for seed in (0, 1, 2):
        tr, va, te = split_dataset(ds, seed=seed)
        ids = [set(s.ids) for s in (tr, va, te)]
        assert not (ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2])
        assert len(tr) + len(va) + len(te) == len(ds)


def test_split_stratified_within_one_item():
    # counting check on the histogram {0:50, 1:10, 2:27, 3:5, 4:8}
    rng = np.random.default_rng(0)
    counts = {0: 50, 1: 10, 2: 27, 3: 5, 4: 8}
    labels = np.concatenate([np.full(n, c) for c, n in counts.items()])
    images = rng.standard_normal((len(labels), 3, 4, 4)).astype(np.float32)
    ds = data.LabeledImageSet(images=images, labels=labels, ids=[str(i) for i in range(len(labels))])
    tr, va, te = split_dataset(ds, seed=3)
    for frac, subset in zip((0.7, 0.2, 0.1), (tr, va, te)):
        hist = subset.histogram()
        for c, n in counts.items():
            assert abs(hist.get(c, 0) - frac * n) <= 1.0


def test_split_deterministic():
    ds = make_toy_dataset(20, 16, 3, seed=8)
    a = split_dataset(ds, seed=4)
    b = split_dataset(ds, seed=4)
    assert all(x.ids == y.ids for x, y in zip(a, b))


def test_split_rejects_bad_fractions():
    ds = make_toy_dataset(5, 16, 1, seed=0)
    with pytest.raises(DataError):
        split_dataset(ds, fractions=(0.5, 0.2, 0.1), seed=0)


def test_binarize_definition():
    rng = np.random.default_rng(1)
    images = rng.standard_normal((5, 3, 4, 4)).astype(np.float32)
    ds = data.LabeledImageSet(images=images, labels=np.array([0, 1, 2, 3, 4]),
                              ids=list("abcde"))
    out = binarize_labels(ds)
    assert out.labels.tolist() == [0, 1, 1, 1, 1]
    assert np.array_equal(out.stacked(), ds.stacked())


def test_binarize_all_zero_unchanged():
    ds = make_toy_dataset(4, 16, 1, seed=2)
    out = binarize_labels(ds)
    assert out.labels.tolist() == [0, 0, 0, 0]


def test_binarize_histogram_arithmetic():
    # class shares in the real-data spirit: class 0 keeps ~49.3% of the mass
    counts = {0: 1805, 1: 370, 2: 999, 3: 194, 4: 295}
    labels = np.concatenate([np.full(n, c) for c, n in counts.items()])
    images = np.zeros((len(labels), 3, 2, 2), dtype=np.float32)
    ds = data.LabeledImageSet(images=images, labels=labels, ids=[str(i) for i in range(len(labels))])
    hist = binarize_labels(ds).histogram()
    assert hist[0] == 1805 and hist[1] == len(labels) - 1805


# ---------------------------------------------------------------------------
# cache round-trip
# ---------------------------------------------------------------------------


def test_cache_roundtrip(tmp_path):
    ds = make_toy_dataset(3, 16, 2, seed=1)
    params = PreprocessParams(target_size=16)
    save_processed_set(ds, tmp_path / "cache", params)
    back = load_processed_set(tmp_path / "cache")
    assert np.array_equal(back.stacked(), ds.stacked())
    assert back.labels.tolist() == ds.labels.tolist()
    sidecar = json.loads((tmp_path / "cache" / f"{ds.ids[0]}.json").read_text())
    assert sidecar["dtype"] == "<f4"
    assert sidecar["params"]["target_size"] == 16
    assert len(sidecar["source_hash"]) == 64
