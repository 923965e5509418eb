"""FastAPI service exposing diagram parsing and sheet evaluation."""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Optional, Union

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from . import __version__
from .config import BackendConfig, Config
from .errors import EmptyDiagram, InputError, SchemaError
from .flowgraph import serialize
from .pipeline import diagram_from_detections, evaluate_sheet, load_answer_key, save_report
from .schemas import (
    EvaluateRequest,
    HealthResponse,
    ParseDiagramRequest,
    ParseDiagramResponse,
    ReportModel,
    format_loc,
)


def _errors(items: list[dict], status: int = 400) -> JSONResponse:
    return JSONResponse(status_code=status, content={"detail": items})


def create_app(config: Optional[Config] = None, out_dir: Union[str, Path, None] = None) -> FastAPI:
    config = config or Config()
    app = FastAPI(title="flowgrade", version=__version__)

    @app.exception_handler(RequestValidationError)
    async def _validation(request: Request, exc: RequestValidationError):
        items = []
        for err in exc.errors():
            loc = list(err.get("loc", ()))
            if loc and loc[0] == "body":
                loc = loc[1:]
            items.append({"path": format_loc(loc), "msg": err.get("msg", "")})
        return _errors(items)

    @app.exception_handler(InputError)
    async def _input(request: Request, exc: InputError):
        path = exc.path if isinstance(exc, SchemaError) else ""
        msg = exc.message if isinstance(exc, SchemaError) else str(exc)
        return _errors([{"path": path, "msg": msg}])

    @app.get("/v1/health", response_model=HealthResponse)
    def health():
        return {"status": "ok"}

    @app.post("/v1/diagrams/parse", response_model=ParseDiagramResponse)
    def parse_diagram(req: ParseDiagramRequest):
        if not any(b.id == req.block for p in req.detections.pages for b in p.blocks):
            return _errors([{"path": "block", "msg": f"no block {req.block!r} in detections"}], 404)
        try:
            graph = diagram_from_detections(req.detections, req.block, config)
        except EmptyDiagram as exc:
            return _errors([{"path": "block", "msg": str(exc)}], 422)
        return {"block": req.block, "canonical": serialize(graph),
                "warnings": [w.to_dict() for w in graph.warnings]}

    @app.post("/v1/evaluate", response_model=ReportModel, response_model_exclude_none=True)
    def evaluate(req: EvaluateRequest):
        cfg = config
        if req.backend is not None and req.backend != cfg.backend.kind:
            backend = BackendConfig.from_env(cfg.backend, kind=req.backend)
            cfg = dataclasses.replace(cfg, backend=backend)
        key = load_answer_key(req.key, cfg, allow_paths=False)
        report = evaluate_sheet(req.detections, key, cfg)
        if out_dir is not None:
            save_report(report, out_dir)
        return report.to_dict()

    return app


def serve(config: Optional[Config] = None, host: str = "127.0.0.1", port: int = 8000,
          out_dir: Union[str, Path, None] = None) -> None:
    import uvicorn

    uvicorn.run(create_app(config, out_dir), host=host, port=port, log_level="info")
