"""HTTP inference service consumed by the editor UI.

Model state loads once at startup and is read-only afterwards; malformed AU
vectors get 400, unknown sessions and cameras 404.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from pydantic import BaseModel

from ..aucode import (AUCode, AUActivationMask, AUValidationError,
                      ModulationParams, codes_from_array, sequence_modulate)
from ..splat import ACTIVE_KERNEL
from ..splat.render import image_to_png_bytes
from ..text2au import predict_mask
from .animate import PipelineBundle, render_au_code


class TextToAURequest(BaseModel):
    prompt: str


class ModulateRequest(BaseModel):
    codes: list[list[float]]
    mask: list[int]
    alpha: float = 0.5
    beta: float = 0.3


class RenderRequest(BaseModel):
    au_code: list[float]
    camera_id: int = 0
    frame: int = 0


def create_app(bundle: PipelineBundle, sessions_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="gshead inference service")
    sessions = Path(sessions_dir) if sessions_dir else None

    @app.get("/health")
    def health():
        return {"status": "ok", "kernel": ACTIVE_KERNEL,
                "cameras": len(bundle.cameras)}

    @app.post("/text2au")
    def text2au(req: TextToAURequest):
        if not req.prompt.strip():
            raise HTTPException(status_code=400, detail="empty prompt")
        mask, probs = predict_mask(req.prompt, bundle.controller,
                                   threshold=bundle.config.text2au.threshold)
        return {"mask": mask.flags.tolist(), "probs": probs.tolist(),
                "active": mask.active_units()}

    @app.post("/aucode/modulate")
    def modulate(req: ModulateRequest):
        try:
            codes = codes_from_array(np.asarray(req.codes, dtype=np.float64))
            mask = AUActivationMask(np.asarray(req.mask))
            params = ModulationParams(enhance=req.alpha, suppress=req.beta)
        except (AUValidationError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        out = sequence_modulate(codes, mask, params)
        return {"codes": [c.values.tolist() for c in out]}

    @app.post("/render")
    def render(req: RenderRequest):
        try:
            code = AUCode(np.asarray(req.au_code, dtype=np.float64))
        except AUValidationError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        if not 0 <= req.camera_id < len(bundle.cameras):
            raise HTTPException(status_code=404,
                                detail=f"unknown camera {req.camera_id}")
        image = render_au_code(bundle, code, bundle.cameras[req.camera_id],
                               frame=req.frame)
        return Response(content=image_to_png_bytes(image), media_type="image/png")

    @app.get("/session/{session_id}/trace")
    def session_trace(session_id: str):
        if sessions is None:
            raise HTTPException(status_code=404, detail="no session store")
        trace = sessions / session_id / "trace.json"
        if not trace.exists() or not trace.resolve().is_relative_to(sessions.resolve()):
            raise HTTPException(status_code=404,
                                detail=f"unknown session {session_id!r}")
        return json.loads(trace.read_text())

    return app


def serve(bundle: PipelineBundle, port: int = 8000,
          sessions_dir: str | Path | None = None, host: str = "127.0.0.1") -> None:
    import uvicorn
    uvicorn.run(create_app(bundle, sessions_dir), host=host, port=port)
