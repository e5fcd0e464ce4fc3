"""Closed-form discovery of interpretable latent directions.

The top-k directions are the leading eigenvectors of A^T A, where A is either
the first mapping layer's weight restricted to the latent columns (Z space) or
the stacked affine style-head weights over a group of sites (W space, the
default: only that mode gives layer-selective edits).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .gan import GeneratorCheckpoint, LayerRange, NoiseSpec


@dataclass
class DirectionSet:
    directions: np.ndarray  # (d, k) columns unit-norm
    eigenvalues: np.ndarray  # (k,) descending
    space: str  # "Z" | "W"
    layer_range: str
    checkpoint_hash: str = ""

    def __post_init__(self):
        if self.space not in ("Z", "W"):
            raise ValueError("space must be Z or W")
        self.directions = np.asarray(self.directions, dtype=np.float64)
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=np.float64)

    @property
    def k(self) -> int:
        return self.directions.shape[1]

    def direction(self, i: int) -> np.ndarray:
        return self.directions[:, i]

    def ids(self) -> list[str]:
        return [f"{self.space}:{self.layer_range}:{i}" for i in range(self.k)]


def collect_weight(ckpt, layer_range: LayerRange | str, space: str = "W"):
    """The affine weight SeFa factorizes: (A, b) with A of shape (m, d).

    Z space reads the first mapping layer (latent columns only); W space
    stacks the style-head weights of every site in the range.
    """
    gen = ckpt.generator if isinstance(ckpt, GeneratorCheckpoint) else ckpt
    cfg = gen.cfg
    if isinstance(layer_range, str):
        layer_range = LayerRange.resolve(layer_range, cfg)
    if space == "Z":
        fc0 = gen.mapping.fc[0]
        A = fc0.w.data[: cfg.latent_dim, :].T.astype(np.float64)
        b = fc0.b.data.astype(np.float64)
        return A, b
    if space != "W":
        raise ValueError("space must be Z or W")
    if not layer_range.sites:
        raise ValueError(f"layer range {layer_range.name!r} is empty")
    blocks, biases = [], []
    for site in layer_range.sites:
        head = gen.synthesis.styles[site]
        blocks.append(head.w.data.T.astype(np.float64))  # (2C, d_w)
        biases.append(head.b.data.astype(np.float64))
    return np.concatenate(blocks, axis=0), np.concatenate(biases)


def _fix_signs(vecs: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Sign convention: first component above `tol` in magnitude positive."""
    out = vecs.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        nz = np.nonzero(np.abs(col) > tol)[0]
        if nz.size and col[nz[0]] < 0:
            out[:, j] = -col
    return out


def factorize(A: np.ndarray, k: int, space: str = "W", layer_range: str = "all",
              checkpoint_hash: str = "") -> DirectionSet:
    """Top-k eigenvectors of A^T A with eigenvalues, deterministic ordering."""
    A = np.asarray(A, dtype=np.float64)
    if not np.isfinite(A).all():
        raise ValueError("weight matrix contains non-finite entries")
    d = A.shape[1]
    if not 1 <= k <= d:
        raise ValueError(f"k must be in 1..{d}")
    evals, evecs = np.linalg.eigh(A.T @ A)
    order = np.argsort(-evals, kind="stable")[:k]
    vals = np.clip(evals[order], 0.0, None)
    vecs = _fix_signs(evecs[:, order])
    return DirectionSet(vecs, vals, space=space, layer_range=layer_range,
                        checkpoint_hash=checkpoint_hash)


def factorize_checkpoint(ckpt: GeneratorCheckpoint, layer_range: str, space: str = "W",
                         k: int | None = None) -> DirectionSet:
    A, _ = collect_weight(ckpt, layer_range, space)
    k = k if k is not None else min(8, A.shape[1])
    return factorize(A, k, space=space, layer_range=layer_range,
                     checkpoint_hash=ckpt.hash())


# ---------------------------------------------------------------------------
# editing
# ---------------------------------------------------------------------------


def edit_code(code, n: np.ndarray, alpha: float, layer_range: LayerRange | None = None):
    """Additive edit. For a flat latent: z + alpha*n. For a per-site w list:
    only the sites inside `layer_range` are shifted."""
    n = np.asarray(n)
    if isinstance(code, np.ndarray):
        if code.shape[-1] != n.shape[0]:
            raise ValueError(f"direction dim {n.shape[0]} != code dim {code.shape[-1]}")
        return code + alpha * n.astype(code.dtype)
    sites = set(layer_range.sites) if layer_range is not None else set(range(len(code)))
    out = []
    for i, w in enumerate(code):
        arr = w.data if isinstance(w, Tensor) else np.asarray(w)
        if i in sites:
            if arr.shape[-1] != n.shape[0]:
                raise ValueError(f"direction dim {n.shape[0]} != w dim {arr.shape[-1]}")
            out.append(arr + alpha * n.astype(arr.dtype))
        else:
            out.append(arr.copy())
    return out


def verify_first_layer_consistency(ckpt, z: np.ndarray, n: np.ndarray, alpha: float,
                                   c=0) -> float:
    """Max-abs residual between editing-then-projecting and projecting-then-
    shifting through the first affine layer; linearity makes it ~0."""
    gen = ckpt.generator if isinstance(ckpt, GeneratorCheckpoint) else ckpt
    z = np.atleast_2d(z)
    labels = np.full(len(z), c, dtype=np.int64)
    A, _ = collect_weight(ckpt, "all", space="Z")
    with ad.no_grad():
        y0 = gen.first_layer_output(z, labels).data
        y1 = gen.first_layer_output(z + alpha * np.asarray(n), labels).data
    shift = alpha * (np.asarray(n) @ A.T)
    return float(np.abs(y1 - (y0 + shift.astype(y0.dtype))).max())


def sweep(z, c, n, alphas, layer_range: LayerRange, ckpt, noise: NoiseSpec | None = None,
          space: str = "W") -> np.ndarray:
    """One image per alpha with fixed noise; alpha=0 reproduces the plain
    generation bit-exactly."""
    gen = ckpt.generator if isinstance(ckpt, GeneratorCheckpoint) else ckpt
    noise = noise or NoiseSpec("zero")
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    labels = np.full(len(z), int(c), dtype=np.int64)
    frames = []
    with ad.no_grad():
        if space == "Z":
            for a in alphas:
                w = gen.map_latent(edit_code(z, n, a), labels)
                frames.append(gen.synthesize(gen.broadcast_w(w), noise).data)
        else:
            w = gen.map_latent(z, labels)
            base = [w.data] * gen.cfg.n_sites
            for a in alphas:
                edited = edit_code(base, n, a, layer_range)
                frames.append(gen.synthesize([Tensor(e) for e in edited], noise).data)
    return np.stack([f[0] for f in frames]) if len(z) == 1 else np.stack(frames)


def style_mix(z_a, c_a, z_b, c_b, crossover_range: LayerRange, ckpt,
              noise: NoiseSpec | None = None) -> np.ndarray:
    """Per-site codes from source B inside the crossover range, A elsewhere."""
    gen = ckpt.generator if isinstance(ckpt, GeneratorCheckpoint) else ckpt
    noise = noise or NoiseSpec("zero")
    z_a = np.atleast_2d(np.asarray(z_a, dtype=np.float64))
    z_b = np.atleast_2d(np.asarray(z_b, dtype=np.float64))
    la = np.full(len(z_a), int(c_a), dtype=np.int64)
    lb = np.full(len(z_b), int(c_b), dtype=np.int64)
    cross = set(crossover_range.sites)
    with ad.no_grad():
        wa = gen.map_latent(z_a, la).data
        wb = gen.map_latent(z_b, lb).data
        w_sites = [Tensor(wb if i in cross else wa) for i in range(gen.cfg.n_sites)]
        img = gen.synthesize(w_sites, noise).data
    return img


def rank_directions_by_effect(ckpt, dirset: DirectionSet, probe_fn, n_probes: int = 16,
                              seed: int = 0, alpha: float = 2.0) -> list[dict]:
    """Sort directions by the mean |probe(+alpha) - probe(-alpha)| over a
    seeded set of latents; stable order on ties."""
    gen = ckpt.generator if isinstance(ckpt, GeneratorCheckpoint) else ckpt
    cfg = gen.cfg
    lr = LayerRange.resolve(dirset.layer_range, cfg)
    rng = np.random.default_rng([seed, 0xEFFEC7])
    zs = rng.standard_normal((n_probes, cfg.latent_dim))
    cs = rng.integers(0, cfg.n_classes, n_probes)
    effects = []
    for j in range(dirset.k):
        n = dirset.direction(j)
        total = 0.0
        for z, c in zip(zs, cs):
            frames = sweep(z, int(c), n, [-alpha, alpha], lr, ckpt, space=dirset.space)
            total += abs(probe_fn(frames[1]) - probe_fn(frames[0]))
        effects.append(total / n_probes)
    order = sorted(range(dirset.k), key=lambda j: (-effects[j], j))
    return [
        {"index": j, "id": dirset.ids()[j], "effect": effects[j],
         "eigenvalue": float(dirset.eigenvalues[j])}
        for j in order
    ]


# ---------------------------------------------------------------------------
# persistence: JSON manifest + float32 matrix blob
# ---------------------------------------------------------------------------


def save_direction_set(ds: DirectionSet, stem) -> None:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "space": ds.space,
        "layer_range": ds.layer_range,
        "k": ds.k,
        "dim": int(ds.directions.shape[0]),
        "eigenvalues": [float(v) for v in ds.eigenvalues],
        "checkpoint_hash": ds.checkpoint_hash,
        "conventions": {"ties": "stable-index", "sign": "first-nonzero-positive"},
    }
    stem.with_suffix(".json").write_text(json.dumps(manifest, indent=1))
    blob = np.ascontiguousarray(ds.directions, dtype="<f4")
    stem.with_suffix(".bin").write_bytes(blob.tobytes())


def load_direction_set(stem) -> DirectionSet:
    stem = Path(stem)
    manifest = json.loads(stem.with_suffix(".json").read_text())
    raw = stem.with_suffix(".bin").read_bytes()
    mat = np.frombuffer(raw, dtype="<f4").reshape(manifest["dim"], manifest["k"])
    return DirectionSet(
        directions=mat.astype(np.float64),
        eigenvalues=np.asarray(manifest["eigenvalues"], dtype=np.float64),
        space=manifest["space"],
        layer_range=manifest["layer_range"],
        checkpoint_hash=manifest.get("checkpoint_hash", ""),
    )
