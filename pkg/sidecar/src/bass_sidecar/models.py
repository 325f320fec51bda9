"""Model bundles behind the sidecar endpoints.

Two bundles share one interface:

* ``StubModelBundle`` is a deterministic, dependency-light stand-in with the
  real checkpoint dimensions (77x1024 prompt embeddings, 768-d features).
  It renders actual PNGs whose pixels encode the embedding's column means,
  so features extracted from those pixels vary smoothly with column swaps
  and the whole sampling engine can run against the sidecar end to end.
* ``TorchModelBundle`` hosts the real checkpoints: a latent-diffusion text
  encoder + generator, a CLIP ViT-L/14@336 feature extractor, and SAM for
  segmentation.  Heavy libraries are imported lazily; any load problem
  raises ModelLoadError so the service refuses to start instead of serving
  garbage.

The segmentation contract is shared: ``segment_masks`` returns the image
area plus one bounding-box crop per mask; the app layer drops oversized
(background) masks and turns the surviving crops into features.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image


class ModelLoadError(RuntimeError):
    """A bundle could not be constructed; the service must refuse to start."""


@dataclass(frozen=True)
class MaskCrop:
    """One segmentation mask: its pixel area and the bounding-box crop."""

    mask_area_px: int
    png: bytes


def _seed64(*parts: str) -> int:
    digest = hashlib.sha256("\x1f".join(parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def _png_bytes(array: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(array, "RGB").save(buf, format="PNG")
    return buf.getvalue()


def _normalize(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise ValueError("feature collapsed to the zero vector")
    return (v / norm).astype(np.float32)


class StubModelBundle:
    """Deterministic CPU bundle with real checkpoint dimensions (d=768).

    Images are 64x64 PNGs whose gray level tiles tanh of the embedding's
    column means; features are a fixed transform of the decoded pixels, so
    equal bytes always yield equal features.
    """

    H = 77
    W = 1024
    D = 768
    IMAGE_SIZE = 64

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.identity = f"sidecar-stub:{self.seed}"
        self.encoder_id = f"stub-encoder:{self.seed}"
        self.h, self.w, self.d = self.H, self.W, self.D
        self.model_names = {
            "encoder": "stub-text-encoder",
            "generator": "stub-generator",
            "features": "stub-feature-extractor-768",
            "segmenter": "stub-segmenter",
        }
        rng = np.random.default_rng(_seed64("stub-text-projection", str(self.seed)))
        self._q = rng.standard_normal((self.D, self.W)).astype(np.float32)

    # --- text encoder -----------------------------------------------------
    def encode_text(self, prompt: str) -> np.ndarray:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        rng = np.random.default_rng(_seed64("stub-encode", str(self.seed), prompt))
        return rng.standard_normal((self.H, self.W)).astype(np.float32)

    # --- generator ----------------------------------------------------------
    def generate(self, matrix: np.ndarray, seed: int) -> bytes:
        g = matrix.astype(np.float64).mean(axis=0)  # (1024,)
        gray = np.tanh(g) * 127.5 + 127.5
        tile = gray.reshape(32, 32)
        up = np.repeat(np.repeat(tile, 2, axis=0), 2, axis=1)  # 64x64
        noise_rng = np.random.default_rng(_seed64("stub-gen-noise", str(int(seed))))
        jitter = noise_rng.integers(-2, 3, size=up.shape)
        red = np.clip(up, 0, 255).astype(np.uint8)
        green = np.clip(up + jitter, 0, 255).astype(np.uint8)
        blue = np.clip(255 - up, 0, 255).astype(np.uint8)
        return _png_bytes(np.stack([red, green, blue], axis=-1))

    # --- feature extractor ---------------------------------------------------
    def image_features(self, png: bytes) -> np.ndarray:
        img = Image.open(io.BytesIO(png)).convert("RGB")
        small = img.resize((16, 16), Image.NEAREST)
        pixels = np.asarray(small, dtype=np.float64).reshape(-1) / 255.0  # 768 values
        centered = pixels - pixels.mean()
        eta_rng = np.random.default_rng(
            _seed64("stub-feature-eta", hashlib.sha256(png).hexdigest())
        )
        return _normalize(centered + 1e-3 * eta_rng.standard_normal(self.D))

    def text_features(self, prompt: str) -> np.ndarray:
        g = self.encode_text(prompt).astype(np.float64).mean(axis=0)
        return _normalize(self._q.astype(np.float64) @ g)

    # --- segmenter ----------------------------------------------------------
    def segment_masks(self, png: bytes) -> tuple[int, list[MaskCrop]]:
        img = Image.open(io.BytesIO(png)).convert("RGB")
        width, height = img.size
        image_area = width * height
        crops = [MaskCrop(mask_area_px=image_area, png=png)]  # background mask
        half_w, half_h = width // 2, height // 2
        for top in (0, half_h):
            for left in (0, half_w):
                box = (left, top, left + half_w, top + half_h)
                crop = img.crop(box)
                buf = io.BytesIO()
                crop.save(buf, format="PNG")
                crops.append(
                    MaskCrop(mask_area_px=half_w * half_h, png=buf.getvalue())
                )
        return image_area, crops


class TorchModelBundle:
    """Real checkpoints: diffusion text encoder + generator, CLIP, SAM.

    Needs the ``models`` extra (torch, transformers, diffusers) and local or
    downloadable weights; construction fails with ModelLoadError otherwise.
    """

    DEFAULTS = {
        "generator_id": "stabilityai/stable-diffusion-2-base",
        "clip_id": "openai/clip-vit-large-patch14-336",
        "sam_id": "facebook/sam-vit-base",
        "num_inference_steps": 25,
        "guidance_scale": 7.5,
    }

    def __init__(self, config: dict | None = None, device: str = "cpu"):
        cfg = dict(self.DEFAULTS)
        cfg.update(config or {})
        self.config = cfg
        self.device = device
        try:
            import torch
            from diffusers import StableDiffusionPipeline
            from transformers import CLIPModel, CLIPProcessor, pipeline
        except ImportError as exc:
            raise ModelLoadError(
                f"model libraries unavailable (install the 'models' extra): {exc}"
            ) from exc
        try:
            self._torch = torch
            self._pipe = StableDiffusionPipeline.from_pretrained(cfg["generator_id"])
            self._pipe.to(device)
            self._clip = CLIPModel.from_pretrained(cfg["clip_id"]).to(device).eval()
            self._clip_processor = CLIPProcessor.from_pretrained(cfg["clip_id"])
            self._sam = pipeline("mask-generation", model=cfg["sam_id"], device=device)
        except Exception as exc:
            raise ModelLoadError(f"cannot load checkpoints: {exc}") from exc

        self.identity = f"sidecar-torch:{cfg['generator_id']}"
        self.encoder_id = f"{cfg['generator_id']}/text-encoder"
        tokenizer = self._pipe.tokenizer
        self.h = tokenizer.model_max_length
        self.w = self._pipe.text_encoder.config.hidden_size
        self.d = self._clip.config.projection_dim
        self.model_names = {
            "encoder": cfg["generator_id"] + "/text-encoder",
            "generator": cfg["generator_id"],
            "features": cfg["clip_id"],
            "segmenter": cfg["sam_id"],
        }

    def encode_text(self, prompt: str) -> np.ndarray:
        torch = self._torch
        tokens = self._pipe.tokenizer(
            prompt,
            padding="max_length",
            max_length=self.h,
            truncation=True,
            return_tensors="pt",
        )
        with torch.no_grad():
            embeds = self._pipe.text_encoder(tokens.input_ids.to(self.device))[0]
        return embeds[0].float().cpu().numpy()

    def generate(self, matrix: np.ndarray, seed: int) -> bytes:
        torch = self._torch
        embeds = torch.from_numpy(matrix).to(self.device).unsqueeze(0)
        generator = torch.Generator(device=self.device).manual_seed(int(seed))
        result = self._pipe(
            prompt_embeds=embeds,
            num_inference_steps=int(self.config["num_inference_steps"]),
            guidance_scale=float(self.config["guidance_scale"]),
            generator=generator,
        )
        buf = io.BytesIO()
        result.images[0].save(buf, format="PNG")
        return buf.getvalue()

    def image_features(self, png: bytes) -> np.ndarray:
        torch = self._torch
        image = Image.open(io.BytesIO(png)).convert("RGB")
        inputs = self._clip_processor(images=image, return_tensors="pt").to(self.device)
        with torch.no_grad():
            features = self._clip.get_image_features(**inputs)
        return features[0].float().cpu().numpy()

    def text_features(self, prompt: str) -> np.ndarray:
        torch = self._torch
        inputs = self._clip_processor(
            text=[prompt], return_tensors="pt", padding=True, truncation=True
        ).to(self.device)
        with torch.no_grad():
            features = self._clip.get_text_features(**inputs)
        return features[0].float().cpu().numpy()

    def segment_masks(self, png: bytes) -> tuple[int, list[MaskCrop]]:
        image = Image.open(io.BytesIO(png)).convert("RGB")
        width, height = image.size
        outputs = self._sam(image)
        crops: list[MaskCrop] = []
        for mask in outputs["masks"]:
            mask_arr = np.asarray(mask, dtype=bool)
            area = int(mask_arr.sum())
            if area == 0:
                continue
            rows = np.any(mask_arr, axis=1)
            cols = np.any(mask_arr, axis=0)
            top, bottom = np.where(rows)[0][[0, -1]]
            left, right = np.where(cols)[0][[0, -1]]
            crop = image.crop((int(left), int(top), int(right) + 1, int(bottom) + 1))
            buf = io.BytesIO()
            crop.save(buf, format="PNG")
            crops.append(MaskCrop(mask_area_px=area, png=buf.getvalue()))
        return width * height, crops


def load_bundle(spec: str, device: str = "cpu"):
    """Build a bundle from ``stub``, ``stub:<seed>``, or a JSON config path.

    The JSON config carries {"bundle": "stub"|"torch", ...bundle options}.
    """

    if spec == "stub":
        return StubModelBundle(0)
    if spec.startswith("stub:"):
        try:
            return StubModelBundle(int(spec.split(":", 1)[1]))
        except ValueError as exc:
            raise ModelLoadError(f"bad stub spec {spec!r}: {exc}") from exc
    if spec == "torch":
        return TorchModelBundle(device=device)
    path = Path(spec)
    if not path.is_file():
        raise ModelLoadError(f"models config not found: {spec}")
    try:
        config = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelLoadError(f"cannot parse models config {spec}: {exc}") from exc
    kind = config.pop("bundle", "torch")
    if kind == "stub":
        return StubModelBundle(int(config.get("seed", 0)))
    if kind == "torch":
        return TorchModelBundle(config, device=device)
    raise ModelLoadError(f"unknown bundle kind {kind!r}")
