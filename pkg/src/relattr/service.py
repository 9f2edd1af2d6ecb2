"""HTTP inference service: translation and interpolation over one loaded
checkpoint. JSON bodies carry base64-encoded PNGs; see the editor frontend
for the reference client.

Error contract: 400 malformed request / unknown attribute / out-of-range
value, 422 undecodable image payload, 503 before a model is loaded, 500 on
inference failure.
"""
from __future__ import annotations

import base64
import binascii
import io
import time

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel

from .metrics import interpolation_smoothness, sequences_from_frames, ssim
from .types import ImageBatch, RelativeAttributes


class TranslateRequest(BaseModel):
    image: str
    relative_attributes: dict[str, float] = {}


class InterpolateRequest(TranslateRequest):
    steps: int = 10


def _decode_image(b64: str) -> Image.Image:
    try:
        raw = base64.b64decode(b64, validate=True)
        im = Image.open(io.BytesIO(raw))
        im.load()
        return im.convert("RGB")
    except (binascii.Error, UnidentifiedImageError, OSError, ValueError) as e:
        raise HTTPException(status_code=422, detail=f"image payload is not a decodable PNG: {e}")


def _levels(arr: np.ndarray) -> np.ndarray:
    return np.clip(np.round((arr + 1.0) * 127.5), 0, 255)


def _encode_image(arr: np.ndarray, resize_to=None) -> str:
    im = Image.fromarray(_levels(arr).astype(np.uint8))
    if resize_to is not None and im.size != resize_to:
        im = im.resize(resize_to, Image.BILINEAR)
    buf = io.BytesIO()
    im.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _quantized(arr: np.ndarray) -> np.ndarray:
    # same value a client sees after decoding the returned PNG
    return _levels(arr).astype(np.float64) / 127.5 - 1.0


def _prepare(im: Image.Image, size: int) -> ImageBatch:
    if im.size != (size, size):
        side = min(im.size)
        left = (im.width - side) // 2
        top = (im.height - side) // 2
        im = im.crop((left, top, left + side, top + side)).resize((size, size), Image.BILINEAR)
    arr = np.asarray(im).astype(np.float32) / 127.5 - 1.0
    return ImageBatch(arr[None])


def _relative_vector(payload: dict, names) -> RelativeAttributes:
    values = np.zeros(len(names), dtype=np.float64)
    index = {name: i for i, name in enumerate(names)}
    for name, value in payload.items():
        if name not in index:
            raise HTTPException(status_code=400, detail=f"unknown attribute {name!r}")
        if not -1.0 <= float(value) <= 1.0:
            raise HTTPException(
                status_code=400,
                detail=f"value {value} for {name!r} out of range [-1, 1]",
            )
        values[index[name]] = float(value)
    return RelativeAttributes(values)


def create_app(checkpoint_path=None, *, generator=None, attribute_names=None) -> FastAPI:
    """Build the app; pass a checkpoint path or an already-loaded generator."""
    app = FastAPI(title="relative-attribute editor service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"],
    )

    if checkpoint_path is not None:
        from .networks import load_models

        generator, _, payload = load_models(checkpoint_path)
        attribute_names = payload["attribute_names"]
    if generator is not None:
        generator.eval()
    app.state.generator = generator
    app.state.names = tuple(attribute_names or ())

    @app.exception_handler(RequestValidationError)
    async def _validation_to_400(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    def _require_model():
        if app.state.generator is None:
            raise HTTPException(status_code=503, detail="no model loaded")
        return app.state.generator

    def _infer(x: ImageBatch, v_rows: np.ndarray) -> np.ndarray:
        from .networks import generator_forward

        gen = app.state.generator
        try:
            return generator_forward(gen, x, v_rows).data
        except HTTPException:
            raise
        except Exception as e:
            raise HTTPException(status_code=500, detail=f"inference failed: {e}")

    @app.get("/attributes")
    def attributes():
        _require_model()
        names = list(app.state.names)
        return {"names": names, "n": len(names)}

    @app.post("/translate")
    def translate(req: TranslateRequest):
        gen = _require_model()
        t0 = time.perf_counter()
        v = _relative_vector(req.relative_attributes, app.state.names)
        im = _decode_image(req.image)
        original_size = im.size
        x = _prepare(im, gen.config.image_size)
        out = _infer(x, np.tile(v.values, (1, 1)))
        response = {
            "image": _encode_image(out[0], resize_to=original_size),
            "latency_ms": round((time.perf_counter() - t0) * 1000.0, 3),
        }
        if not np.any(v.values):
            response["self_ssim"] = float(ssim(x.data[0], out[0]))
        return response

    @app.post("/interpolate")
    def interpolate(req: InterpolateRequest):
        gen = _require_model()
        t0 = time.perf_counter()
        if not 1 <= req.steps <= 50:
            raise HTTPException(
                status_code=400, detail=f"steps must be in [1, 50], got {req.steps}"
            )
        v = _relative_vector(req.relative_attributes, app.state.names)
        im = _decode_image(req.image)
        original_size = im.size
        x = _prepare(im, gen.config.image_size)
        m = req.steps
        frames = [_infer(x, np.tile((i / m) * v.values, (1, 1))) for i in range(m + 1)]
        # score the quantized frames so sigma is reproducible from the payload
        seq = sequences_from_frames([_quantized(f) for f in frames])[0]
        sigma = interpolation_smoothness(seq)
        return {
            "frames": [_encode_image(f[0], resize_to=original_size) for f in frames],
            "sigma": sigma,
            "steps": m,
            "latency_ms": round((time.perf_counter() - t0) * 1000.0, 3),
        }

    return app
