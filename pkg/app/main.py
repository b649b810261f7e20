import logging
import os
import time
import uuid
from dataclasses import asdict, replace
from typing import Optional

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .config import (
    LOG_LEVEL,
    MODEL_STORE_BACKEND,
    MODEL_STORE_TTL_SECONDS,
    REDIS_DB,
    REDIS_HOST,
    REDIS_PASSWORD,
    REDIS_PORT,
    REDIS_PREFIX,
    REDIS_URL,
    DetectionSettings,
    IdentifySettings,
    SweepSettings,
    configure_logging,
)
from .errors import HyperspectralError, ReportPathRejected
from .model_store import InMemoryModelStore, build_model_store
from .models import (
    DetectionOptions,
    DetectRequest,
    DetectResponse,
    IdentificationOut,
    IdentifyOptions,
    IdentifyRequest,
    IdentifyResponse,
    RoiOut,
    SweepRequest,
    SweepResponse,
)
from .report import FORMATS, emit_report, parse_formats, report_document
from .scene_synth import load_truth
from .services.pipeline import PipelineService
from .sweep import parse_grid
from .telemetry.events import log_event

ALLOWED_ORIGINS = [o.strip() for o in os.getenv("ALLOWED_ORIGINS", "").split(",") if o.strip()]
# /sweep writes report files only below this directory; empty disables writing
REPORT_ROOT = os.getenv("REPORT_ROOT", "")
# Exposes the full traceback text of unexpected errors in responses; keep off in production
DEBUG_MODE = os.getenv("DEBUG_MODE", "false").lower() == "true"

configure_logging(LOG_LEVEL)
logger = logging.getLogger("app")

app = FastAPI(title="Hyperspectral PC-truncation toolkit", version="0.1.0")

# Instantiate store with fallback
try:
    _MODEL_STORE = build_model_store(
        MODEL_STORE_BACKEND,
        url=REDIS_URL,
        host=REDIS_HOST,
        port=REDIS_PORT,
        db=REDIS_DB,
        password=REDIS_PASSWORD,
        prefix=REDIS_PREFIX,
        ttl=MODEL_STORE_TTL_SECONDS,
    )
except Exception as e:
    logger.warning("model store backend %r unavailable (%s); using memory", MODEL_STORE_BACKEND, e)
    _MODEL_STORE = InMemoryModelStore()
    MODEL_STORE_BACKEND = "memory"

PIPELINE = PipelineService(_MODEL_STORE)

# Optional CORS
if ALLOWED_ORIGINS:
    app.add_middleware(
        CORSMiddleware,
        allow_origins=ALLOWED_ORIGINS,
        allow_credentials=False,
        allow_methods=["GET", "POST", "OPTIONS"],
        allow_headers=["Content-Type"],
        max_age=3600,
    )


def _get_request_id(request: Request) -> Optional[str]:
    h = request.headers.get("x-cloud-trace-context") or request.headers.get("x-request-id")
    if h:
        return h
    # fallback to middleware-provided id or generate one
    try:
        return getattr(request.state, "request_id", None) or str(uuid.uuid4())
    except Exception:
        return str(uuid.uuid4())


# Exception handlers to surface errors with request correlation
@app.exception_handler(HyperspectralError)
async def on_domain_error(request: Request, exc: HyperspectralError):
    req_id = _get_request_id(request)
    log_event(
        logger,
        "domain_error",
        type=type(exc).__name__,
        status=exc.status_code,
        message=exc.message,
        requestId=req_id,
        path=request.url.path,
        caps={"message": 512},
    )
    return JSONResponse(
        status_code=exc.status_code,
        content={
            "error": {
                "message": exc.message,
                "code": exc.status_code,
                "type": type(exc).__name__,
                "requestId": req_id,
            }
        },
    )


@app.exception_handler(HTTPException)
async def on_http_exception(request: Request, exc: HTTPException):
    req_id = _get_request_id(request)
    log_event(logger, "http_exception", status=exc.status_code, detail=str(exc.detail), requestId=req_id)
    if isinstance(exc.detail, dict):
        base = dict(exc.detail.get("error", exc.detail))
    else:
        base = {"message": str(exc.detail)}
    base.setdefault("message", "")
    base.setdefault("code", exc.status_code)
    base.setdefault("requestId", req_id)
    return JSONResponse(status_code=exc.status_code, content={"error": base})


@app.exception_handler(RequestValidationError)
async def on_validation_error(request: Request, exc: RequestValidationError):
    req_id = _get_request_id(request)
    errors = [{"loc": list(e.get("loc", ())), "msg": e.get("msg"), "type": e.get("type")} for e in exc.errors()]
    log_event(logger, "request_validation_error", errors=errors, requestId=req_id, path=request.url.path)
    return JSONResponse(
        status_code=422,
        content={
            "error": {
                "message": "Request validation failed",
                "code": 422,
                "type": "RequestValidationError",
                "requestId": req_id,
                "errors": errors,
            }
        },
    )


@app.exception_handler(Exception)
async def on_unhandled_exception(request: Request, exc: Exception):
    req_id = _get_request_id(request)
    logger.exception("Unhandled application exception: %s", exc)
    body = {"message": "Internal server error", "code": 500, "requestId": req_id}
    if DEBUG_MODE:
        body["detail"] = repr(exc)
    return JSONResponse(status_code=500, content={"error": body})


# Structured logging middleware with request id
@app.middleware("http")
async def log_requests(request: Request, call_next):
    req_id = request.headers.get("x-cloud-trace-context") or request.headers.get("x-request-id") or str(uuid.uuid4())
    request.state.request_id = req_id
    start = time.time()
    log_event(
        logger,
        "request_start",
        method=request.method,
        path=request.url.path,
        client=request.client.host if request.client else None,
        requestId=req_id,
        bodySize=int(request.headers.get("content-length") or 0),
    )
    response = await call_next(request)
    try:
        response.headers["x-request-id"] = req_id
    except Exception:
        pass
    log_event(
        logger,
        "request_end",
        method=request.method,
        path=request.url.path,
        status=getattr(response, "status_code", None),
        latencyMs=int((time.time() - start) * 1000),
        requestId=req_id,
    )
    return response


def _detection_settings(body: DetectionOptions) -> DetectionSettings:
    overrides = {
        "threshold": body.threshold,
        "cap": body.cap,
        "order": body.order.lower() if body.order else None,
        "squared": body.squared,
    }
    return replace(DetectionSettings(), **{k: v for k, v in overrides.items() if v is not None})


def _report_dir(out: str) -> str:
    """Resolve a requested report directory inside REPORT_ROOT."""
    if not REPORT_ROOT:
        raise ReportPathRejected("report output is disabled; set REPORT_ROOT to let /sweep write files")
    root = os.path.realpath(REPORT_ROOT)
    target = os.path.realpath(os.path.join(root, out))
    if os.path.commonpath([root, target]) != root:
        raise ReportPathRejected(f"report directory {out!r} is outside REPORT_ROOT")
    return target


def _identify_settings(body: IdentifyOptions) -> IdentifySettings:
    overrides = {
        "p_min": body.pMin,
        "f_min": body.fMin,
        "inner": body.inner,
        "outer": body.outer,
        "max_ace": body.maxAce,
    }
    return replace(IdentifySettings(), **{k: v for k, v in overrides.items() if v is not None})


@app.get("/healthz")
def healthz():
    return {"status": "ok"}


@app.get("/config")
def config():
    return {
        "detection": asdict(DetectionSettings()),
        "identify": asdict(IdentifySettings()),
        "sweep": {
            "radius": SweepSettings().radius,
            "metric": SweepSettings().metric,
            "recordTiming": SweepSettings().record_timing,
        },
        "logLevel": LOG_LEVEL,
        "allowedOrigins": ALLOWED_ORIGINS,
        "reportRoot": REPORT_ROOT,
        "modelStoreBackend": MODEL_STORE_BACKEND,
        "modelStoreTtlSeconds": MODEL_STORE_TTL_SECONDS,
        "reportFormats": list(FORMATS),
        "debugMode": DEBUG_MODE,
    }


@app.post("/detect", response_model=DetectResponse)
def detect(body: DetectRequest):
    inputs = PIPELINE.load_inputs(body.cube, body.library, mask_path=body.mask, use_bbl=body.useBbl)
    found = PIPELINE.detect(inputs, body.target, body.k, _detection_settings(body))
    return DetectResponse(
        target=body.target,
        k=body.k,
        lines=found.score_map.shape[0],
        samples=found.score_map.shape[1],
        rois=[
            RoiOut(
                id=r.id,
                line=r.center[0],
                sample=r.center[1],
                peakScore=r.peak_score,
                pixelCount=r.pixel_count,
            )
            for r in found.rois
        ],
    )


@app.post("/identify", response_model=IdentifyResponse)
def identify(body: IdentifyRequest):
    inputs = PIPELINE.load_inputs(body.cube, body.library, mask_path=body.mask, use_bbl=body.useBbl)
    outcome = PIPELINE.identify(inputs, body.target, body.k, _detection_settings(body), _identify_settings(body))
    return IdentifyResponse(
        target=body.target,
        k=body.k,
        results=[
            IdentificationOut(
                roiId=r.roi_id,
                line=r.center[0],
                sample=r.center[1],
                peakScore=r.peak_score,
                bestLabel=r.best_label,
                probability=r.probability,
                spectralFit=r.spectral_fit,
                decision=r.decision,
                flag=r.flag,
                stem=r.stem,
                perClassProbabilities=dict(r.per_class_probabilities),
            )
            for r in outcome.results
        ],
    )


@app.post("/sweep", response_model=SweepResponse)
def sweep(body: SweepRequest):
    base = SweepSettings()
    overrides = {"radius": body.radius, "metric": body.metric.lower() if body.metric else None, "record_timing": body.recordTiming}
    settings = replace(
        base,
        detection=_detection_settings(body),
        identify=_identify_settings(body),
        **{k: v for k, v in overrides.items() if v is not None},
    )
    out_dir = _report_dir(body.out) if body.out else None
    grid = parse_grid(body.grid) if body.grid else None
    truth = load_truth(body.truth) if body.truth else None
    inputs = PIPELINE.load_inputs(body.cube, body.library, mask_path=body.mask, use_bbl=body.useBbl)
    outcome = PIPELINE.sweep(inputs, body.targets, grid, settings, truth)
    extra = {"nontarget_tracks": outcome.nontarget_tracks, "overlay": outcome.result.overlay}
    files = []
    if out_dir:
        formats = parse_formats(body.formats) if body.formats else list(FORMATS)
        files = emit_report(outcome.result.report, outcome.tracks, out_dir, formats, outcome.accuracy, **extra)
    return SweepResponse(
        report=report_document(outcome.result.report, outcome.tracks, outcome.accuracy, **extra),
        files=files,
    )
