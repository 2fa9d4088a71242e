"""HTTP facade over sessions, plus the external-denoiser wire protocol.

The REST surface is what the browser studio talks to: create a session,
run add/translate stages (synchronously or as a job with a server-sent
progress stream), and fetch per-stage renders.  The service itself is
stateless above the session store — every byte it serves comes from the
session directories, so a restart loses nothing.

The backend protocol at the bottom of this file is the seam where a real
depth-conditioned diffusion model would plug in; the bundled toy model
both dispatches in-process and can be served over the same wire.
"""

from __future__ import annotations

import base64
import json
import threading
import uuid
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response, StreamingResponse
from pydantic import BaseModel, ConfigDict, Field

from .blobio import decode_f32_blob, encode_f32_blob
from .denoiser import (
    AttentionMode,
    CrossAttnRecord,
    KVRecord,
    LatentCodec,
    ToyDenoiser,
)
from .geometry import Box3D, LayoutError, Vec3, scene_from_dict, scene_to_dict
from .pipeline import (
    PipelineError,
    Session,
    SessionConfig,
    StageOrderError,
    StagePrompt,
    StageRecord,
    load_session,
    run_add_stage,
    run_stage0,
    run_translate_stage,
)
from .render import render_cartesian
from .translate import (
    SegmentationFailedError,
    TranslationError,
    TranslationRequest,
)

SESSION_ID_BYTES = 6


class ServiceError(Exception):
    """An error with a fixed HTTP status and a machine-readable code."""

    def __init__(self, status: int, code: str, message: str, detail: Any = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.detail = detail


class BackendError(RuntimeError):
    """The external backend call failed (unreachable, bad reply, ...)."""


class CapabilityError(BackendError):
    """The request needs a capability the backend does not advertise."""


# ---------------------------------------------------------------------------
# Backend descriptors and the prediction wire protocol


@dataclass(frozen=True)
class BackendDescriptor:
    kind: str                           # "toy" | "external"
    endpoint: str | None = None
    max_resolution: int = 512
    supports_kv_injection: bool = True

    def __post_init__(self):
        if self.kind not in ("toy", "external"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.kind == "external" and not self.endpoint:
            raise ValueError("external backends need an endpoint URL")
        if self.kind == "toy" and self.endpoint:
            raise ValueError("the toy backend runs in-process; it takes no URL")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "endpoint": self.endpoint,
            "capabilities": {
                "max_resolution": self.max_resolution,
                "supports_kv_injection": self.supports_kv_injection,
            },
        }

    @staticmethod
    def from_dict(d: dict) -> "BackendDescriptor":
        caps = d.get("capabilities", {})
        return BackendDescriptor(
            kind=str(d["kind"]),
            endpoint=d.get("endpoint"),
            max_resolution=int(caps.get("max_resolution", 512)),
            supports_kv_injection=bool(caps.get("supports_kv_injection", True)),
        )


@dataclass(frozen=True)
class PredictRequest:
    """One denoiser evaluation.  ``prompt`` is the embedded prompt matrix
    (rows = words) so classifier-free null prompts have a representation."""

    latent: np.ndarray                  # (4, h, w)
    t: int
    prompt: np.ndarray                  # (n_words, PROMPT_DIM)
    depth: np.ndarray                   # latent-grid inverse depth (h, w)
    mode: AttentionMode = AttentionMode()


@dataclass(frozen=True)
class EpsPrediction:
    eps: np.ndarray
    kv: tuple[KVRecord, ...]
    cross: tuple[CrossAttnRecord, ...]


def _pack2d(arr: np.ndarray) -> str:
    """(rows, cols) float array -> base64 f32 blob."""
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    return base64.b64encode(encode_f32_blob(a)).decode("ascii")


def _unpack2d(blob: str) -> np.ndarray:
    return decode_f32_blob(base64.b64decode(blob))[:, :, 0].astype(np.float64)


def _pack_chw(arr: np.ndarray) -> str:
    """Channel-first (c, h, w) array -> base64 f32 blob stored as h x w x c."""
    return base64.b64encode(
        encode_f32_blob(np.asarray(arr, dtype=np.float64).transpose(1, 2, 0))
    ).decode("ascii")


def _unpack_chw(blob: str) -> np.ndarray:
    return decode_f32_blob(base64.b64decode(blob)).astype(np.float64).transpose(2, 0, 1)


def _pack_grid(arr: np.ndarray) -> str:
    return base64.b64encode(
        encode_f32_blob(np.asarray(arr, dtype=np.float64))
    ).decode("ascii")


def _unpack_grid(blob: str) -> np.ndarray:
    return decode_f32_blob(base64.b64decode(blob))[:, :, 0].astype(np.float64)


def _kv_to_wire(record: KVRecord) -> dict:
    return {"layer": record.layer, "t": record.t,
            "k": _pack2d(record.K), "v": _pack2d(record.V)}


def _kv_from_wire(d: dict) -> KVRecord:
    return KVRecord(layer=str(d["layer"]), t=int(d["t"]),
                    K=_unpack2d(d["k"]), V=_unpack2d(d["v"]))


def mode_to_wire(mode: AttentionMode) -> dict:
    out: dict = {"kind": mode.kind}
    if mode.kv_prev is not None:
        out["kv_prev"] = [_kv_to_wire(r) for r in mode.kv_prev.values()]
    if mode.kv_list:
        out["kv_list"] = [
            [_kv_to_wire(r) for r in refs.values()] for refs in mode.kv_list
        ]
    if mode.fg_tokens is not None:
        out["fg_tokens"] = {
            layer: _pack2d(mask.astype(np.float64))
            for layer, mask in mode.fg_tokens.items()
        }
    return out


def mode_from_wire(d: dict) -> AttentionMode:
    kv_prev = None
    if "kv_prev" in d:
        kv_prev = {r["layer"]: _kv_from_wire(r) for r in d["kv_prev"]}
    kv_list = tuple(
        {r["layer"]: _kv_from_wire(r) for r in refs} for refs in d.get("kv_list", [])
    )
    fg_tokens = None
    if "fg_tokens" in d:
        fg_tokens = {
            layer: (_unpack2d(blob)[:, 0] > 0.5).astype(np.uint8)
            for layer, blob in d["fg_tokens"].items()
        }
    return AttentionMode(kind=str(d.get("kind", "standard")), kv_prev=kv_prev,
                         kv_list=kv_list, fg_tokens=fg_tokens)


def predict_request_to_wire(request: PredictRequest) -> dict:
    return {
        "latent": _pack_chw(request.latent),
        "t": request.t,
        "prompt": _pack2d(request.prompt),
        "depth": _pack_grid(request.depth),
        "mode": mode_to_wire(request.mode),
    }


def predict_request_from_wire(d: dict) -> PredictRequest:
    return PredictRequest(
        latent=_unpack_chw(d["latent"]),
        t=int(d["t"]),
        prompt=_unpack2d(d["prompt"]),
        depth=_unpack_grid(d["depth"]),
        mode=mode_from_wire(d.get("mode", {"kind": "standard"})),
    )


def prediction_to_wire(pred: EpsPrediction) -> dict:
    return {
        "eps": _pack_chw(pred.eps),
        "kv": [_kv_to_wire(r) for r in pred.kv],
        "cross_attn": [
            {"layer": r.layer, "t": r.t, "token_index": r.token_index,
             "map": _pack2d(r.map)}
            for r in pred.cross
        ],
    }


def prediction_from_wire(d: dict) -> EpsPrediction:
    return EpsPrediction(
        eps=_unpack_chw(d["eps"]),
        kv=tuple(_kv_from_wire(r) for r in d.get("kv", [])),
        cross=tuple(
            CrossAttnRecord(layer=str(r["layer"]), t=int(r["t"]),
                            token_index=int(r["token_index"]),
                            map=_unpack2d(r["map"])[:, 0])
            for r in d.get("cross_attn", [])
        ),
    )


def backend_predict(
    descriptor: BackendDescriptor,
    request: PredictRequest,
    *,
    model: ToyDenoiser | None = None,
    client=None,
    timeout: float = 60.0,
) -> EpsPrediction:
    """Evaluate a denoiser through its descriptor.

    The toy kind dispatches in-process and is bit-exact with a direct call;
    the external kind speaks the f32-blob wire protocol.  A mode that
    injects prior KV state refuses loudly when the backend does not
    advertise kv injection — there is no silent fallback to standard
    attention.
    """
    resolution = request.latent.shape[-1] * LatentCodec.PATCH
    if resolution > descriptor.max_resolution:
        raise CapabilityError(
            f"resolution {resolution} exceeds backend maximum {descriptor.max_resolution}"
        )
    if request.mode.kind != "standard" and not descriptor.supports_kv_injection:
        raise CapabilityError(
            f"attention mode {request.mode.kind!r} needs kv injection, which "
            f"this backend does not support"
        )
    if descriptor.kind == "toy":
        model = model if model is not None else ToyDenoiser(seed=0)
        eps, kvs, crosses = model.predict_eps(
            request.latent, request.t, request.prompt, request.depth, request.mode
        )
        return EpsPrediction(eps=eps, kv=tuple(kvs), cross=tuple(crosses))

    import httpx

    client = client or httpx.Client(timeout=timeout)
    try:
        resp = client.post(descriptor.endpoint, json=predict_request_to_wire(request))
        resp.raise_for_status()
        return prediction_from_wire(resp.json())
    except httpx.HTTPError as exc:
        raise BackendError(f"backend call failed: {exc}") from exc
    except (KeyError, ValueError, TypeError) as exc:
        raise BackendError(f"malformed backend reply: {exc}") from exc


class ExternalModel(ToyDenoiser):
    """Drop-in model whose predictions come from a remote backend.

    Prompt embedding and token-mask bookkeeping are deterministic local
    functions; only the denoiser evaluation itself crosses the wire.
    """

    def __init__(self, descriptor: BackendDescriptor | str, client=None,
                 timeout: float = 60.0):
        super().__init__(seed=0)  # local weights unused; keeps shape metadata
        if isinstance(descriptor, str):
            descriptor = BackendDescriptor(kind="external", endpoint=descriptor)
        if descriptor.kind != "external":
            raise ValueError("ExternalModel wraps external descriptors only")
        self.descriptor = descriptor
        self._client = client
        self._timeout = timeout

    def predict_eps(self, x_t, t, prompt_embedding, depth, mode=AttentionMode()):
        pred = backend_predict(
            self.descriptor,
            PredictRequest(latent=x_t, t=t, prompt=prompt_embedding,
                           depth=depth, mode=mode),
            client=self._client,
            timeout=self._timeout,
        )
        return pred.eps, list(pred.kv), list(pred.cross)


# ---------------------------------------------------------------------------
# Per-session FIFO mutation queue


class FifoLock:
    """Mutual exclusion with strict arrival-order handoff."""

    def __init__(self):
        self._mutex = threading.Lock()
        self._waiters: deque[threading.Event] = deque()
        self._held = False

    def acquire(self) -> None:
        with self._mutex:
            if not self._held:
                self._held = True
                return
            gate = threading.Event()
            self._waiters.append(gate)
        gate.wait()

    def release(self) -> None:
        with self._mutex:
            if self._waiters:
                self._waiters.popleft().set()  # lock stays held, next in line runs
            else:
                self._held = False

    def __enter__(self) -> "FifoLock":
        self.acquire()
        return self

    def __exit__(self, *exc) -> None:
        self.release()


# ---------------------------------------------------------------------------
# Jobs (async stage runs with SSE progress)


class Job:
    def __init__(self, job_id: str, session_id: str):
        self.id = job_id
        self.session_id = session_id
        self.events: list[dict] = []
        self.cv = threading.Condition()
        self.status = "queued"
        self.result: dict | None = None
        self.error: dict | None = None

    @property
    def finished(self) -> bool:
        return self.status in ("done", "error")

    def emit(self, event: dict) -> None:
        with self.cv:
            self.events.append(event)
            self.cv.notify_all()

    def finish(self, status: str, payload: dict) -> None:
        with self.cv:
            self.status = status
            if status == "done":
                self.result = payload
            else:
                self.error = payload
            self.events.append({"type": status, **payload})
            self.cv.notify_all()


# ---------------------------------------------------------------------------
# Request bodies


class PromptBody(BaseModel):
    text: str
    object_token_index: int = 0


class CreateSessionBody(BaseModel):
    scene: dict
    config: dict | None = None
    operation_key: str | None = None


class AddStageBody(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    box: dict | None = None          # omitted -> the background stage
    prompt: PromptBody
    operation_key: str | None = None
    run_async: bool = Field(False, alias="async")


class TranslateBody(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    box_id: str
    t: list[float] = Field(min_length=3, max_length=3)
    blend_fraction: float | None = None
    operation_key: str | None = None
    run_async: bool = Field(False, alias="async")


# ---------------------------------------------------------------------------
# Service state and app factory


class ServiceState:
    def __init__(self, root: Path, model, codec, segmenter, backends):
        self.root = root
        self.model = model
        self.codec = codec
        self.segmenter = segmenter
        self.backends = backends
        self.sessions: dict[str, Session] = {}
        self.locks: dict[str, FifoLock] = {}
        self.jobs: dict[str, Job] = {}
        self.op_cache: dict[tuple[str, str], tuple[int, dict]] = {}
        self.registry_lock = threading.Lock()
        self._restore()

    def _restore(self) -> None:
        if not self.root.is_dir():
            return
        for entry in sorted(self.root.iterdir()):
            if (entry / "config.json").is_file():
                self.sessions[entry.name] = load_session(
                    entry, model=self.model, codec=self.codec,
                    segmenter=self.segmenter,
                )
                self.locks[entry.name] = FifoLock()

    def session(self, session_id: str) -> Session:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise ServiceError(404, "session_not_found",
                               f"no session {session_id!r}") from None

    def lock(self, session_id: str) -> FifoLock:
        return self.locks[session_id]

    def handle(self, session_id: str) -> dict:
        session = self.session(session_id)
        created = (self.root / session_id / "config.json").stat().st_mtime
        return {
            "id": session_id,
            "created_at": created,
            "config": session.config.to_dict(),
            "stage_count": len(session.stages),
        }

    def stage_summary(self, session_id: str, record: StageRecord) -> dict:
        base = f"/sessions/{session_id}/stages/{record.index}"
        return {
            "index": record.index,
            "kind": record.kind,
            "box": record.box.to_dict() if record.box is not None else None,
            "prompt": {"text": record.prompt.text,
                       "object_token_index": record.prompt.object_token_index},
            "seed": record.seed,
            "blend_fraction": record.blend_fraction,
            "translation": record.translation.to_list()
            if record.translation is not None else None,
            "image_url": f"{base}/render/image",
            "depth_url": f"{base}/render/depth",
            "mask_url": f"{base}/render/mask_fg",
        }


def _error_payload(exc: Exception) -> tuple[int, dict]:
    """Map a pipeline/translate failure onto a wire error."""
    if isinstance(exc, StageOrderError):
        return 409, {"code": "stage_order", "message": str(exc), "detail": None}
    if isinstance(exc, SegmentationFailedError):
        return 409, {"code": "segmentation_failed", "message": str(exc), "detail": None}
    if isinstance(exc, TranslationError):
        return 409, {"code": "translation_failed", "message": str(exc), "detail": None}
    if isinstance(exc, LayoutError):
        return 409, {"code": "invalid_layout", "message": str(exc), "detail": None}
    if isinstance(exc, PipelineError):
        code = "out_of_bounds" if "room" in str(exc) else "stage_failed"
        return 409, {"code": code, "message": str(exc), "detail": None}
    if isinstance(exc, CapabilityError):
        return 409, {"code": "capability_mismatch", "message": str(exc), "detail": None}
    if isinstance(exc, BackendError):
        return 502, {"code": "backend_unreachable", "message": str(exc), "detail": None}
    return 500, {"code": "internal_error",
                 "message": f"{type(exc).__name__}: {exc}", "detail": None}


def create_app(
    root: str | Path | None = None,
    *,
    model: ToyDenoiser | None = None,
    codec: LatentCodec | None = None,
    segmenter=None,
    backends: tuple[BackendDescriptor, ...] | None = None,
) -> FastAPI:
    """Build the service app over a session store directory.

    Passing the same ``root`` to a fresh app restores every session from
    disk; nothing lives only in process memory except in-flight jobs.
    """
    if root is None:
        import tempfile

        root = tempfile.mkdtemp(prefix="scenestage-")
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    state = ServiceState(
        root=root,
        model=model if model is not None else ToyDenoiser(seed=0),
        codec=codec if codec is not None else LatentCodec(seed=0),
        segmenter=segmenter,
        backends=backends if backends is not None else (BackendDescriptor(kind="toy"),),
    )

    app = FastAPI(title="scenestage", version="0.1.0")
    app.state.service = state

    @app.exception_handler(ServiceError)
    async def _service_error(request: Request, exc: ServiceError):
        return JSONResponse(
            status_code=exc.status,
            content={"code": exc.code, "message": exc.message, "detail": exc.detail},
        )

    @app.exception_handler(RequestValidationError)
    async def _validation_error(request: Request, exc: RequestValidationError):
        detail = [
            {"field": ".".join(str(p) for p in err.get("loc", [])),
             "error": err.get("msg", "invalid")}
            for err in exc.errors()
        ]
        return JSONResponse(
            status_code=422,
            content={"code": "validation_error",
                     "message": "request body failed validation",
                     "detail": detail},
        )

    # -- idempotency ----------------------------------------------------------

    def cached(scope: str, key: str | None):
        if key is None:
            return None
        return state.op_cache.get((scope, key))

    def remember(scope: str, key: str | None, status: int, body: dict) -> None:
        if key is not None:
            state.op_cache[(scope, key)] = (status, body)

    # -- sessions -------------------------------------------------------------

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        hit = cached("create", body.operation_key)
        if hit is not None:
            return JSONResponse(status_code=hit[0], content=hit[1])
        try:
            scene = scene_from_dict(body.scene)
        except (LayoutError, KeyError, IndexError, TypeError, ValueError) as exc:
            raise ServiceError(422, "invalid_scene", f"scene does not parse: {exc}",
                               detail=[{"field": "scene", "error": str(exc)}])
        try:
            config = SessionConfig(**(body.config or {}))
        except (PipelineError, TypeError) as exc:
            raise ServiceError(422, "invalid_config", str(exc),
                               detail=[{"field": "config", "error": str(exc)}])
        session_id = uuid.uuid4().hex[: 2 * SESSION_ID_BYTES]
        try:
            session = Session(scene, config, root=state.root / session_id,
                              model=state.model, codec=state.codec,
                              segmenter=state.segmenter)
        except PipelineError as exc:
            raise ServiceError(422, "invalid_config", str(exc),
                               detail=[{"field": "config", "error": str(exc)}])
        with state.registry_lock:
            state.sessions[session_id] = session
            state.locks[session_id] = FifoLock()
        body_out = state.handle(session_id)
        remember("create", body.operation_key, 201, body_out)
        return JSONResponse(status_code=201, content=body_out)

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        session = state.session(session_id)
        out = state.handle(session_id)
        out["scene"] = scene_to_dict(session.scene)
        out["initial_scene"] = scene_to_dict(session.initial_scene)
        out["stages"] = [state.stage_summary(session_id, r) for r in session.stages]
        return out

    # -- stage mutations ------------------------------------------------------

    def run_mutation(session_id: str, scope: str, key: str | None,
                     run_async: bool, op):
        """Run a stage operation under the session's FIFO lock, either
        synchronously or as a job with SSE progress."""
        state.session(session_id)  # 404 before queueing
        hit = cached(scope, key)
        if hit is not None:
            return JSONResponse(status_code=hit[0], content=hit[1])

        if not run_async:
            with state.lock(session_id):
                session = state.session(session_id)
                try:
                    record = op(session)
                except Exception as exc:  # noqa: BLE001 - mapped to wire errors
                    status, payload = _error_payload(exc)
                    raise ServiceError(status, payload["code"],
                                       payload["message"], payload["detail"])
            body_out = state.stage_summary(session_id, record)
            remember(scope, key, 200, body_out)
            return JSONResponse(status_code=200, content=body_out)

        job = Job(uuid.uuid4().hex[:12], session_id)
        with state.registry_lock:
            state.jobs[job.id] = job

        def work():
            with state.lock(session_id):
                session = state.session(session_id)
                job.status = "running"
                session.step_hook = lambda done, total: job.emit(
                    {"type": "progress", "step": done, "total": total}
                )
                try:
                    record = op(session)
                    job.finish("done", state.stage_summary(session_id, record))
                except Exception as exc:  # noqa: BLE001 - reported on the stream
                    _, payload = _error_payload(exc)
                    job.finish("error", payload)
                finally:
                    session.step_hook = None

        threading.Thread(target=work, daemon=True).start()
        body_out = {"job_id": job.id, "events_url": f"/jobs/{job.id}/events"}
        remember(scope, key, 202, body_out)
        return JSONResponse(status_code=202, content=body_out)

    @app.post("/sessions/{session_id}/stages:add")
    def add_stage(session_id: str, body: AddStageBody):
        try:
            prompt = StagePrompt(body.prompt.text, body.prompt.object_token_index)
        except PipelineError as exc:
            raise ServiceError(422, "invalid_prompt", str(exc),
                               detail=[{"field": "prompt", "error": str(exc)}])
        if body.box is None:
            op = lambda session: run_stage0(session, prompt)  # noqa: E731
        else:
            try:
                box = Box3D.from_dict({"yaw": 0.0, **body.box})
            except (LayoutError, KeyError, IndexError, TypeError, ValueError) as exc:
                raise ServiceError(422, "invalid_box", f"box does not parse: {exc}",
                                   detail=[{"field": "box", "error": str(exc)}])
            op = lambda session: run_add_stage(session, box, prompt)  # noqa: E731
        return run_mutation(session_id, f"add:{session_id}",
                            body.operation_key, body.run_async, op)

    @app.post("/sessions/{session_id}/stages:translate")
    def translate_stage(session_id: str, body: TranslateBody):
        session = state.session(session_id)
        blend = (body.blend_fraction if body.blend_fraction is not None
                 else session.config.blend_fraction)
        try:
            request = TranslationRequest(
                box_id=body.box_id,
                t=Vec3(*[float(v) for v in body.t]),
                blend_fraction=blend,
            )
        except TranslationError as exc:
            raise ServiceError(422, "invalid_translation", str(exc),
                               detail=[{"field": "blend_fraction", "error": str(exc)}])
        return run_mutation(session_id, f"translate:{session_id}",
                            body.operation_key, body.run_async,
                            lambda s: run_translate_stage(s, request))

    # -- renders --------------------------------------------------------------

    @app.get("/sessions/{session_id}/stages/{index}/render/{kind}")
    def get_render(session_id: str, index: int, kind: str):
        session = state.session(session_id)
        if not 0 <= index < len(session.stages):
            raise ServiceError(404, "stage_not_found",
                               f"session has {len(session.stages)} stages")
        stage_dir = state.root / session_id / "stages" / str(index)
        if kind == "image":
            return Response(content=(stage_dir / "image.png").read_bytes(),
                            media_type="image/png")
        if kind == "mask_fg":
            return Response(content=(stage_dir / "mask_fg.png").read_bytes(),
                            media_type="image/png")
        if kind == "depth":
            return Response(content=(stage_dir / "depth.f32").read_bytes(),
                            media_type="application/octet-stream")
        if kind == "cartesian":
            record = session.stages[index]
            if record.box is None:
                raise ServiceError(404, "no_box",
                                   "the background stage has no box to map")
            cmap = render_cartesian(record.box, session.scene.camera)
            coords = np.where(cmap.hit[:, :, None], cmap.coords, 0.0)
            return Response(content=encode_f32_blob(coords),
                            media_type="application/octet-stream")
        raise ServiceError(404, "unknown_render_kind",
                           f"no render kind {kind!r}")

    # -- jobs -----------------------------------------------------------------

    def get_job(job_id: str) -> Job:
        try:
            return state.jobs[job_id]
        except KeyError:
            raise ServiceError(404, "job_not_found", f"no job {job_id!r}") from None

    @app.get("/jobs/{job_id}")
    def job_status(job_id: str):
        job = get_job(job_id)
        return {
            "job_id": job.id,
            "session_id": job.session_id,
            "status": job.status,
            "events": len(job.events),
            "result": job.result,
            "error": job.error,
        }

    @app.get("/jobs/{job_id}/events")
    def job_events(job_id: str, request: Request, start: int = 0):
        job = get_job(job_id)
        resume = request.headers.get("last-event-id")
        first = int(resume) + 1 if resume is not None else start

        def stream():
            i = first
            while True:
                with job.cv:
                    while i >= len(job.events) and not job.finished:
                        job.cv.wait(timeout=1.0)
                    if i >= len(job.events):
                        if job.finished:
                            return
                        continue
                    event = job.events[i]
                yield (f"id: {i}\nevent: {event['type']}\n"
                       f"data: {json.dumps(event)}\n\n")
                if event["type"] in ("done", "error"):
                    return
                i += 1

        return StreamingResponse(stream(), media_type="text/event-stream")

    # -- misc -----------------------------------------------------------------

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "sessions": len(state.sessions)}

    @app.get("/backends")
    def backends_view():
        return {"backends": [b.to_dict() for b in state.backends]}

    @app.post("/backend/predict")
    def backend_predict_route(payload: dict):
        try:
            request = predict_request_from_wire(payload)
        except (KeyError, ValueError, TypeError) as exc:
            raise ServiceError(422, "invalid_predict_request", str(exc))
        eps, kvs, crosses = state.model.predict_eps(
            request.latent, request.t, request.prompt, request.depth, request.mode
        )
        return prediction_to_wire(
            EpsPrediction(eps=eps, kv=tuple(kvs), cross=tuple(crosses))
        )

    return app


def serve(root: str | Path | None = None, host: str = "127.0.0.1",
          port: int = 8000) -> None:
    """Run the service under uvicorn (blocking)."""
    import uvicorn

    uvicorn.run(create_app(root), host=host, port=port)
