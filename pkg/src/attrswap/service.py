"""HTTP inference service over one loaded checkpoint.

Editing is the only part of the system that benefits from a long-lived
process serving many small requests, so the service exposes exactly that:
reconstruct, transfer, and classify over base64-encoded PNG payloads.
Training, evaluation, and ablation stay batch jobs behind the CLI.
"""

from __future__ import annotations

import base64
import io
import warnings

import numpy as np
import torch
from fastapi import FastAPI, HTTPException
from PIL import Image
from pydantic import BaseModel, Field

from .editing import from_uint8, predict_labels, reconstruct, to_uint8, transfer
from .networks import load_checkpoint


class TransferRequest(BaseModel):
    source_png: str = Field(description="base64-encoded PNG, model-sized RGB")
    exemplar_png: str
    mask: list[int]
    ex_labels: list[int] | None = None
    src_labels: list[int] | None = None
    mode: str = "mix"
    predict_labels: bool = False


class ReconstructRequest(BaseModel):
    image_png: str
    labels: list[int] | None = None
    predict_labels: bool = False


class ImageResponse(BaseModel):
    image_png: str
    warnings: list[str] = []


class ClassifyRequest(BaseModel):
    image_png: str


class ClassifyResponse(BaseModel):
    probs: list[float]
    labels: list[int]


def _decode_png(b64: str, size: int) -> torch.Tensor:
    try:
        with Image.open(io.BytesIO(base64.b64decode(b64, validate=True))) as im:
            arr = np.asarray(im.convert("RGB"))
    except Exception:
        raise HTTPException(status_code=400, detail="payload is not a decodable image")
    if arr.shape[:2] != (size, size):
        raise HTTPException(
            status_code=422,
            detail=f"model expects {size}x{size} images, got {arr.shape[1]}x{arr.shape[0]}",
        )
    return from_uint8(arr)


def _encode_png(image: torch.Tensor) -> str:
    buf = io.BytesIO()
    Image.fromarray(to_uint8(image), mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _parse_labels(values, n_attrs: int, name: str) -> torch.Tensor:
    if values is None:
        raise HTTPException(status_code=422, detail=f"{name} is required here")
    if len(values) != n_attrs or any(v not in (0, 1) for v in values):
        raise HTTPException(
            status_code=422,
            detail=f"{name} must be {n_attrs} binary values, got {values}",
        )
    return torch.tensor(values, dtype=torch.float32)


def create_app(checkpoint_path) -> FastAPI:
    ckpt = load_checkpoint(checkpoint_path)
    generator = ckpt.generator.eval()
    critic = ckpt.critic.eval()
    config = ckpt.config
    app = FastAPI(title="attrswap", description="exemplar-based attribute editing")

    def maybe_predict(image, given, flag, name):
        if flag:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                return predict_labels(critic, image)
        return _parse_labels(given, config.n_attrs, name)

    @app.get("/health")
    def health():
        return {"status": "ok", "step": ckpt.step, "image_size": config.image_size,
                "n_attrs": config.n_attrs}

    @app.get("/model")
    def model():
        from dataclasses import asdict

        return {"config": asdict(config), "step": ckpt.step, "extra": ckpt.extra}

    @app.post("/reconstruct", response_model=ImageResponse)
    def do_reconstruct(req: ReconstructRequest):
        image = _decode_png(req.image_png, config.image_size)
        labels = maybe_predict(image, req.labels, req.predict_labels, "labels")
        out = reconstruct(generator, image, labels)
        return ImageResponse(image_png=_encode_png(out))

    @app.post("/transfer", response_model=ImageResponse)
    def do_transfer(req: TransferRequest):
        source = _decode_png(req.source_png, config.image_size)
        exemplar = _decode_png(req.exemplar_png, config.image_size)
        mask = _parse_labels(req.mask, config.n_attrs, "mask")
        ex_labels = maybe_predict(exemplar, req.ex_labels, req.predict_labels, "ex_labels")
        src_labels = None
        if req.mode == "mix":
            src_labels = maybe_predict(source, req.src_labels, req.predict_labels,
                                       "src_labels")
        if req.mode not in ("mix", "replace"):
            raise HTTPException(status_code=422,
                                detail=f"mode must be 'mix' or 'replace', got {req.mode!r}")
        notes = []
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            out = transfer(generator, source, exemplar, ex_labels, mask,
                           req.mode, src_labels)
            notes = [str(w.message) for w in caught]
        return ImageResponse(image_png=_encode_png(out), warnings=notes)

    @app.post("/classify", response_model=ClassifyResponse)
    def do_classify(req: ClassifyRequest):
        image = _decode_png(req.image_png, config.image_size)
        with torch.no_grad():
            probs = critic.classify(image.unsqueeze(0)).squeeze(0)
        return ClassifyResponse(probs=[float(p) for p in probs],
                                labels=[int(p > 0.5) for p in probs])

    return app
