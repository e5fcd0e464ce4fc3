"""Class-conditional style-based generator and projection discriminator.

Generator: label embedding -> mapping MLP -> constant-seeded synthesis stack
with per-site noise injection and adaptive instance normalization, two style
sites per resolution. Discriminator mirrors the ladder downward and ends with
a minibatch-stddev layer and a per-class output vector indexed by the label.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor

ADAIN_EPS = 1e-8
CHECKPOINT_FORMAT = 1


class CheckpointError(ValueError):
    pass


def default_channels(target_resolution: int, base: int = 128) -> dict[int, int]:
    """Feature widths halving from `base` at 4x4, floored at 8."""
    ch, res, out = base, 4, {}
    while res <= target_resolution:
        out[res] = max(8, ch)
        ch //= 2
        res *= 2
    return out


@dataclass
class GanConfig:
    latent_dim: int = 64
    w_dim: int = 64
    n_classes: int = 5
    base_resolution: int = 4
    target_resolution: int = 32
    channels: dict[int, int] | None = None
    leaky_slope: float = 0.2
    noise_scale_init: float = 0.05
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        t = self.target_resolution
        if t < 8 or (t & (t - 1)) or self.base_resolution != 4:
            raise ValueError("target_resolution must be 4*2^k with k >= 1")
        if self.latent_dim <= 0 or self.w_dim <= 0:
            raise ValueError("latent and w dims must be positive")
        if self.channels is None:
            self.channels = default_channels(t)
        self.channels = {int(k): int(v) for k, v in self.channels.items()}

    @property
    def resolutions(self) -> list[int]:
        out, r = [], self.base_resolution
        while r <= self.target_resolution:
            out.append(r)
            r *= 2
        return out

    @property
    def n_sites(self) -> int:
        return 2 * len(self.resolutions)

    def site_resolution(self, site: int) -> int:
        return self.resolutions[site // 2]

    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = {str(k): v for k, v in self.channels.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GanConfig":
        d = dict(d)
        if d.get("channels"):
            d["channels"] = {int(k): v for k, v in d["channels"].items()}
        return cls(**d)


@dataclass
class NoiseSpec:
    """How per-site noise images are drawn: fresh entropy, a fixed seed, or
    all zeros (fully deterministic synthesis)."""

    mode: str = "zero"
    seed: int | None = None

    def __post_init__(self):
        if self.mode not in ("fresh", "fixed", "zero"):
            raise ValueError(f"noise mode must be fresh|fixed|zero, got {self.mode}")
        if self.mode == "fixed" and self.seed is None:
            raise ValueError("fixed noise needs a seed")

    def realize(self, shapes: list[tuple], dtype, rng=None) -> list[np.ndarray]:
        if self.mode == "zero":
            return [np.zeros(s, dtype=dtype) for s in shapes]
        if self.mode == "fixed":
            return [
                np.random.default_rng([int(self.seed), i]).standard_normal(s).astype(dtype)
                for i, s in enumerate(shapes)
            ]
        rng = rng if rng is not None else np.random.default_rng()
        return [rng.standard_normal(s).astype(dtype) for s in shapes]


@dataclass(frozen=True)
class LayerRange:
    """A named group of style sites: coarse 4x4 sites, the middle resolutions,
    the finest ones, everything, or an explicit index range."""

    name: str
    sites: tuple[int, ...]

    @staticmethod
    def resolve(name: str, cfg: GanConfig) -> "LayerRange":
        res = cfg.resolutions
        sites_at = lambda rs: tuple(
            i for i in range(cfg.n_sites) if cfg.site_resolution(i) in rs
        )
        if name == "all":
            return LayerRange("all", tuple(range(cfg.n_sites)))
        if name == "bottom":
            return LayerRange("bottom", sites_at({4}))
        target = res[-1]
        if target >= 32:
            mids, tops = {8, 16}, {r for r in res if r >= 32}
        elif target == 16:
            mids, tops = {8}, {16}
        else:
            mids, tops = set(), {8}
        if name == "middle":
            if not mids:
                raise ValueError(f"no middle sites at target resolution {target}")
            return LayerRange("middle", sites_at(mids))
        if name == "top":
            return LayerRange("top", sites_at(tops))
        if name.startswith("custom:"):
            lo, hi = name.split(":", 1)[1].split("-")
            sites = tuple(range(int(lo), int(hi) + 1))
            if not sites or max(sites) >= cfg.n_sites:
                raise ValueError(f"custom range {name} outside 0..{cfg.n_sites - 1}")
            return LayerRange(name, sites)
        raise ValueError(f"unknown layer range {name!r}")


# ---------------------------------------------------------------------------
# functional pieces
# ---------------------------------------------------------------------------


def embed_label(c, R) -> np.ndarray:
    """One-hot label times the fixed embedding matrix = row selection."""
    R = R.data if isinstance(R, Tensor) else np.asarray(R)
    c = np.asarray(c)
    if not np.issubdtype(c.dtype, np.integer):
        raise ValueError("labels must be integers")
    if c.min() < 0 or c.max() >= R.shape[0]:
        raise ValueError(f"label outside 0..{R.shape[0] - 1}")
    return R[c]


def adain(x, s_scale, s_bias, eps: float = ADAIN_EPS):
    """Per-channel standardization (population std over H,W) followed by a
    style-driven scale and bias. Accepts (B,C,H,W) with styles (B,C) or (C,)."""
    x = ad.astensor(x)
    s_scale, s_bias = ad.astensor(s_scale), ad.astensor(s_bias)
    mu = ad.mean(x, axis=(2, 3), keepdims=True)
    var = ad.mean(ad.pow_const(ad.sub(x, mu), 2), axis=(2, 3), keepdims=True)
    std = ad.sqrt(var)
    xn = ad.div(ad.sub(x, mu), ad.add(std, eps))
    shape = (1, -1, 1, 1) if s_scale.ndim == 1 else (s_scale.shape[0], -1, 1, 1)
    return ad.add(
        ad.mul(xn, ad.reshape(s_scale, shape)), ad.reshape(s_bias, shape)
    )


def minibatch_stddev(x):
    """Append one channel holding the batch-averaged per-feature std."""
    x = ad.astensor(x)
    b, _, h, w = x.shape
    mu = ad.mean(x, axis=0, keepdims=True)
    var = ad.mean(ad.pow_const(ad.sub(x, mu), 2), axis=0, keepdims=True)
    s = ad.mean(ad.sqrt(var))
    ch = ad.broadcast_to(ad.reshape(s, (1, 1, 1, 1)), (b, 1, h, w))
    return ad.concat([x, ch], axis=1)


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------


class MappingNetwork(nn.Module):
    N_LAYERS = 8

    def __init__(self, cfg: GanConfig, rng):
        super().__init__()
        dt = cfg.np_dtype()
        self.slope = cfg.leaky_slope
        dims = [2 * cfg.latent_dim] + [cfg.w_dim] * self.N_LAYERS
        self.fc = nn.ModuleList(
            nn.Linear(dims[i], dims[i + 1], rng, dtype=dt) for i in range(self.N_LAYERS)
        )

    def first_layer_affine(self, zcat):
        """Pre-activation output of the first layer (the affine map the
        closed-form factorization reads in latent space)."""
        return self.fc[0](ad.astensor(zcat))

    def __call__(self, zcat):
        h = ad.astensor(zcat)
        for layer in self.fc:
            h = ad.leaky_relu(layer(h), self.slope)
        return h


class SynthesisNetwork(nn.Module):
    def __init__(self, cfg: GanConfig, rng):
        super().__init__()
        dt = cfg.np_dtype()
        self.cfg_res = cfg.resolutions
        self.slope = cfg.leaky_slope
        ch = cfg.channels
        self.const = Tensor(np.ones((1, ch[4], 4, 4), dtype=dt), requires_grad=True)
        convs, styles, noise_scales, to_rgb = [], [], [], []
        style_std = 0.5 / np.sqrt(cfg.w_dim)
        for res in self.cfg_res:
            c = ch[res]
            if res == 4:
                convs.append(nn.Conv2d(c, c, 3, rng, dtype=dt))  # between the two sites
            else:
                cprev = ch[res // 2]
                convs.append(nn.Conv2d(cprev, c, 3, rng, dtype=dt))
                convs.append(nn.Conv2d(c, c, 3, rng, dtype=dt))
            for _ in range(2):
                head = nn.Linear(cfg.w_dim, 2 * c, rng, std=style_std, dtype=dt)
                head.b.data[:c] = 1.0  # styles start at identity scale
                styles.append(head)
                noise_scales.append(
                    Tensor(np.full(c, cfg.noise_scale_init, dtype=dt), requires_grad=True)
                )
            to_rgb.append(nn.Conv2d(c, 3, 1, rng, std=np.sqrt(1.0 / c), dtype=dt))
        self.convs = nn.ModuleList(convs)
        self.styles = nn.ModuleList(styles)
        self.noise = nn.ModuleList(_ParamHolder(t) for t in noise_scales)
        self.to_rgb = nn.ModuleList(to_rgb)

    def noise_shapes(self, batch: int, stage_res: int | None = None) -> list[tuple]:
        stage_res = stage_res or self.cfg_res[-1]
        shapes = []
        for res in self.cfg_res:
            if res > stage_res:
                break
            shapes += [(batch, 1, res, res)] * 2
        return shapes

    def _site(self, x, site: int, w_sites, noise_imgs):
        scale = self.noise[site].value
        n = ad.mul(Tensor(noise_imgs[site]), ad.reshape(scale, (1, -1, 1, 1)))
        x = ad.add(x, n)
        x = ad.leaky_relu(x, self.slope)
        style = self.styles[site](ad.astensor(w_sites[site]))
        c = scale.shape[0]
        s_scale = ad.slice_axis(style, -1, 0, c)
        s_bias = ad.slice_axis(style, -1, c, 2 * c)
        return adain(x, s_scale, s_bias)

    def __call__(self, w_sites, noise_imgs, stage_res=None, blend=1.0):
        stage_res = stage_res or self.cfg_res[-1]
        batch = np.asarray(
            w_sites[0].data if isinstance(w_sites[0], Tensor) else w_sites[0]
        ).shape[0]
        x = ad.broadcast_to(self.const, (batch,) + self.const.shape[1:])
        x_prev = None
        site = ci = 0
        for res in self.cfg_res:
            if res > stage_res:
                break
            if res == 4:
                x = self._site(x, 0, w_sites, noise_imgs)
                x = self.convs[0](x)
                x = self._site(x, 1, w_sites, noise_imgs)
                site, ci = 2, 1
            else:
                x_prev = x
                x = ad.upsample2x(x)
                x = self.convs[ci](x)
                x = self._site(x, site, w_sites, noise_imgs)
                x = self.convs[ci + 1](x)
                x = self._site(x, site + 1, w_sites, noise_imgs)
                site, ci = site + 2, ci + 2
        stage_idx = self.cfg_res.index(stage_res)
        rgb = self.to_rgb[stage_idx](x)
        if blend < 1.0 and stage_idx > 0 and x_prev is not None:
            rgb_old = ad.upsample2x(self.to_rgb[stage_idx - 1](x_prev))
            rgb = ad.add(ad.mul(rgb_old, 1.0 - blend), ad.mul(rgb, blend))
        return ad.tanh(rgb)


class _ParamHolder(nn.Module):
    def __init__(self, t: Tensor):
        super().__init__()
        self.value = t


class Generator(nn.Module):
    def __init__(self, cfg: GanConfig, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng([cfg.seed, 0x6E6])
        self.cfg = cfg
        dt = cfg.np_dtype()
        # fixed class-embedding matrix, stored but never trained
        self.R = rng.standard_normal((cfg.n_classes, cfg.latent_dim)).astype(dt)
        self.mapping = MappingNetwork(cfg, rng)
        self.synthesis = SynthesisNetwork(cfg, rng)

    def embed_label(self, c) -> np.ndarray:
        return embed_label(c, self.R)

    def map_latent(self, z, c):
        z = ad.astensor(np.asarray(z, dtype=self.cfg.np_dtype()))
        if z.ndim != 2 or z.shape[1] != self.cfg.latent_dim:
            raise ValueError(f"z must be (B,{self.cfg.latent_dim}), got {z.shape}")
        emb = self.embed_label(np.asarray(c, dtype=np.int64))
        zcat = ad.concat([z, Tensor(emb)], axis=1)
        return self.mapping(zcat)

    def first_layer_output(self, z, c):
        z = np.asarray(z, dtype=self.cfg.np_dtype())
        emb = self.embed_label(np.asarray(c, dtype=np.int64))
        zcat = np.concatenate([z, emb], axis=1)
        return self.mapping.first_layer_affine(Tensor(zcat))

    def broadcast_w(self, w) -> list:
        return [w] * self.cfg.n_sites

    def synthesize(self, w_sites, noise: NoiseSpec, stage_res=None, blend=1.0, rng=None):
        batch = np.asarray(
            w_sites[0].data if isinstance(w_sites[0], Tensor) else w_sites[0]
        ).shape[0]
        expected = len(self.synthesis.noise_shapes(batch, stage_res))
        if len(w_sites) != expected:
            raise ValueError(f"need {expected} per-site codes, got {len(w_sites)}")
        shapes = self.synthesis.noise_shapes(batch, stage_res)
        imgs = noise.realize(shapes, self.cfg.np_dtype(), rng=rng)
        return self.synthesis(w_sites, imgs, stage_res=stage_res, blend=blend)

    def generate(self, z, c, noise: NoiseSpec | None = None, stage_res=None, blend=1.0, rng=None) -> np.ndarray:
        """Inference path: full composition map -> broadcast -> synthesize."""
        noise = noise or NoiseSpec("zero")
        with ad.no_grad():
            w = self.map_latent(z, c)
            w_sites = self.broadcast_w(w)
            if stage_res is not None:
                w_sites = w_sites[: len(self.synthesis.noise_shapes(1, stage_res))]
            img = self.synthesize(w_sites, noise, stage_res=stage_res, blend=blend, rng=rng)
        return img.data

    def generate_graph(self, z, c, noise: NoiseSpec, stage_res=None, blend=1.0, rng=None):
        w = self.map_latent(z, c)
        w_sites = self.broadcast_w(w)
        if stage_res is not None:
            w_sites = w_sites[: len(self.synthesis.noise_shapes(1, stage_res))]
        return self.synthesize(w_sites, noise, stage_res=stage_res, blend=blend, rng=rng)


class Discriminator(nn.Module):
    def __init__(self, cfg: GanConfig, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng([cfg.seed, 0xD15C])
        self.cfg = cfg
        dt = cfg.np_dtype()
        ch = cfg.channels
        self.slope = cfg.leaky_slope
        self.from_rgb = nn.ModuleList(
            nn.Conv2d(3, ch[res], 1, rng, dtype=dt) for res in cfg.resolutions
        )
        blocks = []
        for res in cfg.resolutions[1:]:  # 8 and up, finest last
            blocks.append(
                _DBlock(ch[res], ch[res // 2], 3, rng, cfg.leaky_slope, dt)
            )
        self.blocks = nn.ModuleList(blocks)
        c4 = ch[4]
        self.final_conv = nn.Conv2d(c4 + 1, c4, 3, rng, dtype=dt)
        self.fc1 = nn.Linear(c4 * 16, c4, rng, dtype=dt)
        self.fc2 = nn.Linear(c4, cfg.n_classes, rng, std=np.sqrt(1.0 / c4), dtype=dt)

    def class_scores(self, x, stage_res=None, blend=1.0):
        """Per-class output vector v (computed once, independent of labels)."""
        x = ad.astensor(x)
        stage_res = stage_res or self.cfg.resolutions[-1]
        res_list = self.cfg.resolutions
        stage_idx = res_list.index(stage_res)
        h = ad.leaky_relu(self.from_rgb[stage_idx](x), self.slope)
        for idx in range(stage_idx, 0, -1):
            h = self.blocks[idx - 1](h)
            if idx == stage_idx and blend < 1.0 and stage_idx >= 1:
                h_old = ad.leaky_relu(
                    self.from_rgb[stage_idx - 1](ad.avgpool2x(x)), self.slope
                )
                h = ad.add(ad.mul(h_old, 1.0 - blend), ad.mul(h, blend))
        h = minibatch_stddev(h)
        h = ad.leaky_relu(self.final_conv(h), self.slope)
        b = h.shape[0]
        h = ad.reshape(h, (b, -1))
        h = ad.leaky_relu(self.fc1(h), self.slope)
        return self.fc2(h)

    def discriminate(self, x, c, stage_res=None, blend=1.0):
        """Projection conditioning: the logit is the label-indexed component
        of the class-score vector."""
        v = self.class_scores(x, stage_res=stage_res, blend=blend)
        c = np.asarray(c, dtype=np.int64)
        if c.min() < 0 or c.max() >= self.cfg.n_classes:
            raise ValueError(f"label outside 0..{self.cfg.n_classes - 1}")
        onehot = np.zeros((len(c), self.cfg.n_classes), dtype=v.dtype)
        onehot[np.arange(len(c)), c] = 1.0
        return ad.sum_(ad.mul(v, Tensor(onehot)), axis=1)


class _DBlock(nn.Module):
    def __init__(self, cin, cout, k, rng, slope, dt):
        super().__init__()
        self.slope = slope
        self.conv_a = nn.Conv2d(cin, cin, k, rng, dtype=dt)
        self.conv_b = nn.Conv2d(cin, cout, k, rng, dtype=dt)

    def __call__(self, x):
        x = ad.leaky_relu(self.conv_a(x), self.slope)
        x = ad.leaky_relu(self.conv_b(x), self.slope)
        return ad.avgpool2x(x)


# ---------------------------------------------------------------------------
# checkpoint I/O
# ---------------------------------------------------------------------------


@dataclass
class GeneratorCheckpoint:
    config: GanConfig
    generator: Generator
    discriminator: Discriminator
    step: int = 0

    @classmethod
    def fresh(cls, cfg: GanConfig) -> "GeneratorCheckpoint":
        return cls(cfg, Generator(cfg), Discriminator(cfg), step=0)

    def arrays(self) -> list[tuple[str, np.ndarray]]:
        out = [(f"g/{k}", v) for k, v in sorted(self.generator.state_dict().items())]
        out += [(f"d/{k}", v) for k, v in sorted(self.discriminator.state_dict().items())]
        return out

    def hash(self) -> str:
        h = hashlib.sha256()
        for _, arr in self.arrays():
            h.update(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        return h.hexdigest()


def save_checkpoint(ckpt: GeneratorCheckpoint, path) -> str:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries, blobs = [], []
    for name, arr in ckpt.arrays():
        if arr.dtype != np.float32:
            raise CheckpointError(f"array {name!r} is {arr.dtype}; checkpoints store float32")
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "<f4"})
        blobs.append(blob)
    manifest = {
        "format_version": CHECKPOINT_FORMAT,
        "config": ckpt.config.to_dict(),
        "step": ckpt.step,
        "arrays": entries,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1))
    (path / "params.bin").write_bytes(b"".join(blobs))
    return ckpt.hash()


def load_checkpoint(path) -> GeneratorCheckpoint:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("format_version") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unsupported format_version {manifest.get('format_version')}")
    cfg = GanConfig.from_dict(manifest["config"])
    ckpt = GeneratorCheckpoint.fresh(cfg)
    expected = dict(ckpt.arrays())
    raw = (path / "params.bin").read_bytes()
    offset = 0
    loaded = {}
    for entry in manifest["arrays"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in expected:
            raise CheckpointError(f"array {name!r} not part of this architecture")
        if expected[name].shape != shape:
            raise CheckpointError(
                f"array {name!r}: manifest shape {shape} != model shape {expected[name].shape}"
            )
        nbytes = int(np.prod(shape)) * 4
        if offset + nbytes > len(raw):
            raise CheckpointError(f"array {name!r}: params.bin truncated")
        loaded[name] = np.frombuffer(raw, dtype="<f4", count=int(np.prod(shape)), offset=offset).reshape(shape)
        offset += nbytes
    missing = set(expected) - set(loaded)
    if missing or offset != len(raw):
        raise CheckpointError(f"params.bin does not match manifest (missing={sorted(missing)})")
    gstate = {k[2:]: v.copy() for k, v in loaded.items() if k.startswith("g/")}
    dstate = {k[2:]: v.copy() for k, v in loaded.items() if k.startswith("d/")}
    ckpt.generator.load_state_dict(gstate)
    ckpt.discriminator.load_state_dict(dstate)
    ckpt.step = int(manifest["step"])
    return ckpt


def render_class_grid(gen: Generator, samples_per_class: int = 3, seed: int = 0,
                      noise: NoiseSpec | None = None) -> np.ndarray:
    """Grid of samples, one row per class (the qualitative sample sheet)."""
    cfg = gen.cfg
    rows = []
    for c in range(cfg.n_classes):
        rng = np.random.default_rng([seed, c])
        z = rng.standard_normal((samples_per_class, cfg.latent_dim))
        imgs = gen.generate(z, np.full(samples_per_class, c), noise or NoiseSpec("zero"))
        rows.append(np.concatenate(list(imgs), axis=2))
    grid = np.concatenate(rows, axis=1)
    return grid
