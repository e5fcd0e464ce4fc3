"""HTTP inference service: conditional generation, latent edits, style mixing
and direction listings over JSON, plus the static explorer UI if built.

Every endpoint is a pure function of the loaded artifacts and the request;
images are PNG, base64-encoded in JSON responses.
"""
from __future__ import annotations

import base64
import io
from pathlib import Path

import numpy as np
from starlette.requests import Request

from . import autodiff as ad
from .autodiff import Tensor
from .gan import GeneratorCheckpoint, LayerRange, NoiseSpec, load_checkpoint
from .sefa import DirectionSet, edit_code, load_direction_set


class ServiceError(Exception):
    def __init__(self, status: int, error: str, field: str | None = None):
        super().__init__(error)
        self.status = status
        self.error = error
        self.field = field

    def body(self) -> dict:
        out = {"error": self.error}
        if self.field:
            out["field"] = self.field
        return out


def image_to_png(img: np.ndarray) -> bytes:
    """[-1,1] CHW float -> 8-bit PNG bytes (deterministic encode)."""
    from PIL import Image

    arr = np.clip((np.asarray(img, dtype=np.float64) + 1.0) * 0.5 * 255.0, 0, 255)
    arr = np.round(arr).astype(np.uint8).transpose(1, 2, 0)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def png_b64(img: np.ndarray) -> str:
    return base64.b64encode(image_to_png(img)).decode("ascii")


class ServeState:
    """Immutable artifacts behind the endpoints: checkpoint, direction sets
    (validated against the checkpoint hash), optional classifier."""

    def __init__(self, ckpt: GeneratorCheckpoint,
                 direction_sets: dict[str, DirectionSet] | None = None,
                 strict_hash: bool = True):
        self.ckpt = ckpt
        self.hash = ckpt.hash()
        self.directions: dict[str, DirectionSet] = {}
        self.hash_mismatch: set[str] = set()
        for key, ds in (direction_sets or {}).items():
            if ds.checkpoint_hash and ds.checkpoint_hash != self.hash:
                if strict_hash:
                    raise ValueError(
                        f"direction set {key!r} was factorized from checkpoint "
                        f"{ds.checkpoint_hash[:12]}, but {self.hash[:12]} is loaded"
                    )
                self.hash_mismatch.add(key)
            self.directions[key] = ds

    @classmethod
    def from_paths(cls, ckpt_dir, direction_stems=(), strict_hash=True) -> "ServeState":
        ckpt = load_checkpoint(ckpt_dir)
        sets = {}
        for stem in direction_stems:
            ds = load_direction_set(stem)
            sets[f"{ds.space}:{ds.layer_range}"] = ds
        return cls(ckpt, sets, strict_hash=strict_hash)

    # -- request handlers (framework-independent; raise ServiceError) --------

    def _resolve_z(self, payload) -> tuple[np.ndarray, int | None]:
        cfg = self.ckpt.config
        if payload.get("z") is not None:
            z = np.asarray(payload["z"], dtype=np.float64)
            if z.shape != (cfg.latent_dim,):
                raise ServiceError(400, f"z must have length {cfg.latent_dim}", "z")
            return z, None
        seed = payload.get("seed")
        if seed is None:
            raise ServiceError(400, "provide either seed or z", "seed")
        z = np.random.default_rng([int(seed), 0x5EED]).standard_normal(cfg.latent_dim)
        return z, int(seed)

    def _resolve_class(self, payload, key="class") -> int:
        cfg = self.ckpt.config
        c = payload.get(key)
        if not isinstance(c, int) or not 0 <= c < cfg.n_classes:
            raise ServiceError(400, f"{key} must be an integer in 0..{cfg.n_classes - 1}", key)
        return c

    def _resolve_noise(self, payload) -> NoiseSpec:
        mode = payload.get("noise_mode", "zero")
        if mode not in ("zero", "fixed", "fresh"):
            raise ServiceError(400, "noise_mode must be zero|fixed|fresh", "noise_mode")
        if mode == "fixed":
            return NoiseSpec("fixed", int(payload.get("noise_seed", 0)))
        return NoiseSpec(mode)

    def _resolve_range(self, payload, key="layer_range") -> LayerRange:
        name = payload.get(key, "all")
        try:
            return LayerRange.resolve(name, self.ckpt.config)
        except ValueError as e:
            raise ServiceError(400, str(e), key)

    def model_info(self) -> dict:
        cfg = self.ckpt.config
        return {
            "n_classes": cfg.n_classes,
            "latent_dim": cfg.latent_dim,
            "w_dim": cfg.w_dim,
            "target_resolution": cfg.target_resolution,
            "n_sites": cfg.n_sites,
            "step": self.ckpt.step,
            "checkpoint_hash": self.hash,
            "direction_sets": sorted(self.directions),
            "layer_ranges": ["bottom", "middle", "top", "all"],
        }

    def handle_generate(self, payload: dict) -> dict:
        gen = self.ckpt.generator
        z, seed = self._resolve_z(payload)
        c = self._resolve_class(payload)
        noise = self._resolve_noise(payload)
        img = gen.generate(z[None], np.array([c]), noise)[0]
        with ad.no_grad():
            w = gen.map_latent(z[None], np.array([c])).data[0]
        return {
            "png": png_b64(img),
            "z": z.tolist(),
            "w": w.astype(np.float64).tolist(),
            "w_layers": [w.astype(np.float64).tolist()] * self.ckpt.config.n_sites,
            "seed": seed,
            "class": c,
        }

    def _direction(self, direction_id: str) -> tuple[DirectionSet, int]:
        parts = str(direction_id).split(":")
        if len(parts) != 3:
            raise ServiceError(404, f"unknown direction {direction_id!r}", "direction_id")
        key = f"{parts[0]}:{parts[1]}"
        ds = self.directions.get(key)
        if ds is None:
            raise ServiceError(404, f"no direction set {key!r} loaded", "direction_id")
        if key in self.hash_mismatch:
            raise ServiceError(409, f"direction set {key!r} does not match the loaded checkpoint")
        try:
            idx = int(parts[2])
        except ValueError:
            raise ServiceError(404, f"unknown direction {direction_id!r}", "direction_id")
        if not 0 <= idx < ds.k:
            raise ServiceError(404, f"direction index {idx} outside 0..{ds.k - 1}", "direction_id")
        return ds, idx

    def handle_edit(self, payload: dict) -> dict:
        gen = self.ckpt.generator
        cfg = self.ckpt.config
        c = self._resolve_class(payload)
        noise = self._resolve_noise(payload)
        ds, idx = self._direction(payload.get("direction_id"))
        alpha = payload.get("alpha", 0.0)
        if not isinstance(alpha, (int, float)) or not np.isfinite(alpha):
            raise ServiceError(400, "alpha must be a finite number", "alpha")
        n = ds.direction(idx)
        lr = LayerRange.resolve(ds.layer_range, cfg)
        if ds.space == "Z":
            z, _ = self._resolve_z(payload)
            z_edit = edit_code(z, n, float(alpha))
            img = gen.generate(z_edit[None], np.array([c]), noise)[0]
            return {"png": png_b64(img), "z": z_edit.tolist(), "class": c,
                    "direction_id": payload["direction_id"], "alpha": alpha}
        if payload.get("w_layers") is not None:
            w_layers = [np.asarray(w, dtype=np.float64) for w in payload["w_layers"]]
            if len(w_layers) != cfg.n_sites or any(w.shape != (cfg.w_dim,) for w in w_layers):
                raise ServiceError(400, f"w_layers must be {cfg.n_sites} vectors of length {cfg.w_dim}", "w_layers")
        else:
            z, _ = self._resolve_z(payload)
            with ad.no_grad():
                w = gen.map_latent(z[None], np.array([c])).data[0].astype(np.float64)
            w_layers = [w] * cfg.n_sites
        edited = edit_code([w[None] for w in w_layers], n, float(alpha), lr)
        with ad.no_grad():
            img = gen.synthesize([Tensor(e.astype(cfg.dtype)) for e in edited], noise).data[0]
        return {
            "png": png_b64(img),
            "w_layers": [e[0].tolist() for e in edited],
            "class": c,
            "direction_id": payload["direction_id"],
            "alpha": alpha,
        }

    def handle_mix(self, payload: dict) -> dict:
        from .sefa import style_mix

        cfg = self.ckpt.config
        ca = self._resolve_class(payload, "class_a")
        cb = self._resolve_class(payload, "class_b")
        for key in ("seed_a", "seed_b"):
            if not isinstance(payload.get(key), int):
                raise ServiceError(400, f"{key} must be an integer", key)
        cross = self._resolve_range(payload, "crossover_range")
        noise = self._resolve_noise(payload)
        za = np.random.default_rng([payload["seed_a"], 0x5EED]).standard_normal(cfg.latent_dim)
        zb = np.random.default_rng([payload["seed_b"], 0x5EED]).standard_normal(cfg.latent_dim)
        img = style_mix(za, ca, zb, cb, cross, self.ckpt, noise=noise)[0]
        return {"png": png_b64(img), "crossover_range": cross.name}

    def handle_directions(self, space=None, layer_range=None) -> dict:
        matches = {
            key: ds
            for key, ds in self.directions.items()
            if (space is None or ds.space == space)
            and (layer_range is None or ds.layer_range == layer_range)
        }
        if not matches:
            raise ServiceError(404, f"no direction set for space={space} layer_range={layer_range}")
        key = sorted(matches)[0]
        if key in self.hash_mismatch:
            raise ServiceError(409, f"direction set {key!r} does not match the loaded checkpoint")
        ds = matches[key]
        return {
            "direction_ids": ds.ids(),
            "eigenvalues": [float(v) for v in ds.eigenvalues],
            "k": ds.k,
            "space": ds.space,
            "layer_range": ds.layer_range,
        }


def create_app(state: ServeState, ui_dir=None):
    """FastAPI wiring over the pure handlers."""
    from fastapi import FastAPI
    from fastapi.responses import JSONResponse

    app = FastAPI(title="retsyn inference service")

    def guard(fn, *args, **kwargs):
        try:
            return JSONResponse(fn(*args, **kwargs))
        except ServiceError as e:
            return JSONResponse(e.body(), status_code=e.status)

    @app.get("/model/info")
    def model_info():
        return guard(state.model_info)

    @app.post("/generate")
    async def generate(request: Request):  # noqa: F811 - resolved at module scope
        return guard(state.handle_generate, await request.json())

    @app.post("/edit")
    async def edit(request: Request):
        return guard(state.handle_edit, await request.json())

    @app.post("/mix")
    async def mix(request: Request):
        return guard(state.handle_mix, await request.json())

    @app.get("/directions")
    def directions(space: str | None = None, layer_range: str | None = None):
        return guard(state.handle_directions, space, layer_range)

    ui = Path(ui_dir) if ui_dir else None
    if ui and ui.is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui), html=True), name="ui")
    return app
