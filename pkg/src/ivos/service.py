"""Annotation service: sessions over HTTP + WebSocket, persisted to disk.

Each session lives in its own directory under the storage root:

    <root>/<id>/
      session.json                 manifest (dims, config, history, counters)
      frames/00000.png ...         ingested frames
      embeddings/00000.maef ...    cached embedding fields
      rounds/<r>/scribbles.json    scribbles as submitted (ROI applied)
      rounds/<r>/masks/*.png       full-resolution label masks
      rounds/<r>/masks_stride/*.png
      rounds/<r>/provenance.json
      memory/global|local/*.maef   memory snapshot after the round

Mutations per session are serialized; encoding and propagation run on worker
threads and stream {round, frame, done} events to subscribers.
"""
from __future__ import annotations

import json
import logging
import queue
import shutil
import threading
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request, Response, WebSocket
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from starlette.datastructures import UploadFile

from .core import (
    LabelMask, load_frames, load_mask_png, save_mask_png, scribbles_from_json,
    scribbles_to_json,
)
from .embedding import FeatureEncoder, FileEmbeddingProvider, save_embeddings
from .errors import IvosError, ValidationError
from .heads import load_checkpoint
from .matching import MatchConfig
from .memory import ForgettingConfig, load_memory_snapshot, save_memory_snapshot
from .session import DECISION_DISTANCE, DECISION_HEADS, Session, SessionConfig

logger = logging.getLogger(__name__)

STATE_CREATED = "created"
STATE_ENCODING = "encoding"
STATE_READY = "ready"
STATE_PROPAGATING = "propagating"
STATE_ERROR = "error"


def _config_from_payload(payload: dict) -> tuple[SessionConfig, dict]:
    cfg = payload.get("config", {}) or {}
    embedding = cfg.get("embedding", {}) or {}
    session_config = SessionConfig(
        match=MatchConfig(
            int(cfg.get("window", 12)), int(cfg.get("local_downsample", 2))),
        forget=ForgettingConfig(int(cfg.get("retained_rounds", 2))),
        roi_margin=float(cfg.get("roi_margin", 0.5)),
        decision=cfg.get("decision", DECISION_DISTANCE),
        aggregate_global=bool(cfg.get("aggregate_global", True)),
    )
    provider_config = {
        "dim": int(embedding.get("dim", 32)),
        "stride": int(embedding.get("stride", 4)),
        "seed": int(embedding.get("seed", 0)),
        "gain": float(embedding.get("gain", 2.5)),
    }
    return session_config, provider_config


class SessionEntry:
    """Bookkeeping for one stored session."""

    def __init__(self, session_id: str, directory: Path):
        self.id = session_id
        self.directory = directory
        self.state = STATE_CREATED
        self.error: str | None = None
        self.round = 0
        self.frames = 0
        self.height = 0
        self.width = 0
        self.objects = 0
        self.encoder_invocations = 0
        self.annotated_history: list[int] = []
        self.session_config: SessionConfig | None = None
        self.provider_config: dict = {}
        self.checkpoints: dict = {}
        self.session: Session | None = None
        self.lock = threading.Lock()
        self.progress = {"round": 0, "frames_done": 0, "total": 0}
        self.subscribers: list[queue.Queue] = []

    # -- events --------------------------------------------------------------

    def subscribe(self) -> queue.Queue:
        q: queue.Queue = queue.Queue()
        self.subscribers.append(q)
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        if q in self.subscribers:
            self.subscribers.remove(q)

    def publish(self, event: dict) -> None:
        for q in list(self.subscribers):
            q.put(event)

    # -- persistence ----------------------------------------------------------

    def manifest(self) -> dict:
        return {
            "id": self.id,
            "state": self.state if self.state != STATE_PROPAGATING else STATE_READY,
            "round": self.round,
            "frames": self.frames,
            "height": self.height,
            "width": self.width,
            "objects": self.objects,
            "encoder_invocations": self.encoder_invocations,
            "annotated_history": (
                list(self.session.annotated_history) if self.session
                else list(self.annotated_history)
            ),
            "config": {
                "window": self.session_config.match.window,
                "local_downsample": self.session_config.match.local_downsample,
                "retained_rounds": self.session_config.forget.retained_rounds,
                "roi_margin": self.session_config.roi_margin,
                "decision": self.session_config.decision,
                "aggregate_global": self.session_config.aggregate_global,
                "embedding": self.provider_config,
                "checkpoints": self.checkpoints,
            },
        }

    def save_manifest(self) -> None:
        (self.directory / "session.json").write_text(
            json.dumps(self.manifest(), indent=2))

    def handle(self) -> dict:
        return {
            "id": self.id,
            "state": self.state,
            "round": self.round,
            "frames": self.frames,
            "height": self.height,
            "width": self.width,
            "objects": self.objects,
            "error": self.error,
            "progress": dict(self.progress),
        }


class SessionStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.entries: dict[str, SessionEntry] = {}

    # -- creation -------------------------------------------------------------

    def create(self, payload: dict, uploads: list[tuple[str, bytes]] | None = None) -> SessionEntry:
        objects = int(payload.get("objects") or 0)
        if objects < 2:
            raise ValidationError("objects must be >= 2 (background plus one object)")
        session_id = uuid.uuid4().hex[:12]
        directory = self.root / session_id
        frames_dir = directory / "frames"
        frames_dir.mkdir(parents=True)
        if uploads:
            for i, (_, blob) in enumerate(uploads):
                (frames_dir / f"{i:05d}.png").write_bytes(blob)
        elif payload.get("path"):
            src = Path(payload["path"])
            if not src.is_dir():
                raise ValidationError(f"frame path {src} is not a directory")
            for p in sorted(src.glob("*.png")):
                shutil.copy(p, frames_dir / p.name)
        else:
            raise ValidationError("provide PNG uploads or a frames directory path")

        entry = SessionEntry(session_id, directory)
        entry.objects = objects
        entry.session_config, entry.provider_config = _config_from_payload(payload)
        entry.checkpoints = (payload.get("config", {}) or {}).get("checkpoints", {})
        self.entries[session_id] = entry

        worker = threading.Thread(target=self._encode, args=(entry,), daemon=True)
        entry.state = STATE_ENCODING
        worker.start()
        return entry

    def _load_heads(self, entry: SessionEntry):
        if entry.session_config.decision != DECISION_HEADS:
            return None, None
        try:
            prop = load_checkpoint(entry.checkpoints["propagation"])
            inter = load_checkpoint(entry.checkpoints["interaction"])
        except KeyError as exc:
            raise ValidationError(f"heads mode needs checkpoint paths: {exc}") from exc
        return prop, inter

    def _encode(self, entry: SessionEntry) -> None:
        try:
            frames = load_frames(entry.directory / "frames")
            provider = FeatureEncoder(**entry.provider_config)
            prop, inter = self._load_heads(entry)
            session = Session(frames, provider, entry.objects, entry.session_config,
                              prop, inter)
            emb_dir = entry.directory / "embeddings"
            emb_dir.mkdir(exist_ok=True)
            for t, field in enumerate(session.embeddings):
                save_embeddings(field, emb_dir / f"{t:05d}.maef")
            with entry.lock:
                entry.session = session
                entry.frames = frames.n
                entry.height = frames.height
                entry.width = frames.width
                entry.encoder_invocations = session.encoder_invocations
                entry.state = STATE_READY
                entry.save_manifest()
        except Exception as exc:  # surfaced through the handle, not the log only
            logger.exception("encoding failed for session %s", entry.id)
            with entry.lock:
                entry.state = STATE_ERROR
                entry.error = str(exc)
        entry.publish({"state": entry.state})

    # -- rounds ---------------------------------------------------------------

    def submit(self, entry: SessionEntry, scribbles_text: str) -> int:
        scribbles = scribbles_from_json(scribbles_text)
        with entry.lock:
            if entry.state == STATE_PROPAGATING:
                raise ConflictError("a round is already in flight")
            if entry.state != STATE_READY:
                raise ValidationError(f"session is {entry.state}, not ready")
            entry.state = STATE_PROPAGATING
            round_index = entry.round + 1
            entry.progress = {
                "round": round_index, "frames_done": 0, "total": entry.frames}
        worker = threading.Thread(
            target=self._run_round, args=(entry, scribbles), daemon=True)
        worker.start()
        return round_index

    def _run_round(self, entry: SessionEntry, scribbles) -> None:
        session = entry.session
        try:
            done = {"count": 0}

            def progress(frame_index: int) -> None:
                done["count"] += 1
                entry.progress["frames_done"] = done["count"]
                entry.publish({
                    "round": entry.progress["round"],
                    "frame": int(frame_index),
                    "done": False,
                })

            result = session.round(scribbles, progress=progress)
            rdir = entry.directory / "rounds" / str(result.round_index)
            (rdir / "masks").mkdir(parents=True)
            (rdir / "masks_stride").mkdir()
            for t, m in enumerate(result.masks):
                save_mask_png(m, rdir / "masks" / f"{t:05d}.png")
                save_mask_png(LabelMask(result.stride_masks[t], "stride"),
                              rdir / "masks_stride" / f"{t:05d}.png")
            (rdir / "scribbles.json").write_text(
                scribbles_to_json(session.round_scribbles[result.round_index]))
            (rdir / "provenance.json").write_text(json.dumps({
                "round": result.round_index,
                "annotated_frame": result.annotated_frame,
                "served_by_round": [
                    None if p is None else int(p) for p in result.provenance
                ],
            }))
            save_memory_snapshot(
                session.global_mem, session.local_mem, entry.directory / "memory")
            with entry.lock:
                entry.round = result.round_index
                entry.state = STATE_READY
                entry.save_manifest()
            entry.publish({"round": result.round_index, "done": True})
        except Exception as exc:
            logger.exception("round failed for session %s", entry.id)
            with entry.lock:
                entry.state = STATE_ERROR
                entry.error = str(exc)
            entry.publish({"state": STATE_ERROR, "error": str(exc)})

    # -- restore --------------------------------------------------------------

    def restore(self) -> None:
        for directory in sorted(self.root.iterdir()):
            manifest_path = directory / "session.json"
            if not directory.is_dir() or not manifest_path.exists():
                continue
            entry = SessionEntry(directory.name, directory)
            try:
                manifest = json.loads(manifest_path.read_text())
                entry.objects = manifest["objects"]
                entry.frames = manifest["frames"]
                entry.height = manifest["height"]
                entry.width = manifest["width"]
                entry.round = manifest["round"]
                entry.encoder_invocations = manifest["encoder_invocations"]
                cfg = manifest["config"]
                entry.session_config, entry.provider_config = _config_from_payload(
                    {"config": cfg})
                entry.checkpoints = cfg.get("checkpoints", {})
                entry.annotated_history = list(manifest["annotated_history"])
                entry.session = self._rebuild_session(entry, manifest)
                entry.state = STATE_READY
            except Exception as exc:
                logger.exception("could not restore session %s", directory.name)
                entry.state = STATE_ERROR
                entry.error = f"restore failed: {exc}"
            self.entries[entry.id] = entry

    def _rebuild_session(self, entry: SessionEntry, manifest: dict) -> Session:
        frames = load_frames(entry.directory / "frames")
        provider = FileEmbeddingProvider(entry.directory / "embeddings")
        prop, inter = self._load_heads(entry)
        session = Session(frames, provider, entry.objects, entry.session_config,
                          prop, inter)
        session.encoder_invocations = entry.encoder_invocations
        history = manifest["annotated_history"]
        if entry.round >= 1:
            gmem, lmem = load_memory_snapshot(
                entry.directory / "memory", frames.n, entry.objects,
                *session.grid_shape, entry.session_config.forget,
                {i + 1: t for i, t in enumerate(history)},
            )
            session.global_mem = gmem
            session.local_mem = lmem
            session.round_index = entry.round
            session.annotated_history = list(history)
            stride_dir = entry.directory / "rounds" / str(entry.round) / "masks_stride"
            session.stride_masks[entry.round] = np.stack([
                load_mask_png(stride_dir / f"{t:05d}.png", "stride").grid
                for t in range(frames.n)
            ])
        return session


class ConflictError(IvosError):
    pass


# ---------------------------------------------------------------------------
# FastAPI app


def create_app(root: str | Path) -> FastAPI:
    app = FastAPI(title="ivos annotation service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
        allow_headers=["*"],
    )
    store = SessionStore(root)
    store.restore()
    app.state.store = store

    def entry_or_404(session_id: str) -> SessionEntry:
        entry = store.entries.get(session_id)
        if entry is None:
            raise HTTPException(404, f"no session {session_id}")
        return entry

    @app.exception_handler(ValidationError)
    async def _validation(request, exc):
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.exception_handler(ConflictError)
    async def _conflict(request, exc):
        return JSONResponse(status_code=409, content={"detail": str(exc)})

    @app.post("/sessions")
    async def create_session(request: Request):
        content_type = request.headers.get("content-type", "")
        if content_type.startswith("multipart/"):
            form = await request.form()
            uploads = []
            for item in form.getlist("frames"):
                if isinstance(item, UploadFile):
                    uploads.append((item.filename or "", await item.read()))
            payload = {
                "objects": form.get("objects"),
                "config": json.loads(form.get("config") or "{}"),
            }
            entry = store.create(payload, uploads)
        else:
            payload = await request.json()
            entry = store.create(payload)
        return {"id": entry.id, "state": entry.state}

    @app.get("/sessions")
    def list_sessions():
        return [e.handle() for e in store.entries.values()]

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return entry_or_404(session_id).handle()

    @app.post("/sessions/{session_id}/scribbles")
    async def submit_scribbles(session_id: str, request: Request):
        entry = entry_or_404(session_id)
        body = await request.body()
        round_index = store.submit(entry, body.decode("utf-8"))
        return {"round": round_index, "state": entry.state}

    @app.get("/sessions/{session_id}/rounds/{round_index}/masks")
    def get_masks(session_id: str, round_index: int, frame: int | None = None):
        entry = entry_or_404(session_id)
        rdir = entry.directory / "rounds" / str(round_index)
        if round_index < 1 or not rdir.exists() or round_index > entry.round:
            raise HTTPException(404, f"round {round_index} not completed")
        if frame is not None:
            path = rdir / "masks" / f"{frame:05d}.png"
            if not path.exists():
                raise HTTPException(404, f"no frame {frame}")
            return Response(path.read_bytes(), media_type="image/png")
        provenance = json.loads((rdir / "provenance.json").read_text())
        return {
            "round": round_index,
            "files": sorted(p.name for p in (rdir / "masks").glob("*.png")),
            "provenance": provenance,
        }

    @app.get("/sessions/{session_id}/rounds/{round_index}/scribbles")
    def get_round_scribbles(session_id: str, round_index: int):
        entry = entry_or_404(session_id)
        path = entry.directory / "rounds" / str(round_index) / "scribbles.json"
        if not path.exists():
            raise HTTPException(404, f"round {round_index} not completed")
        return Response(path.read_bytes(), media_type="application/json")

    @app.get("/sessions/{session_id}/frames/{frame}")
    def get_frame(session_id: str, frame: int):
        entry = entry_or_404(session_id)
        path = entry.directory / "frames" / f"{frame:05d}.png"
        if not path.exists():
            raise HTTPException(404, f"no frame {frame}")
        return Response(path.read_bytes(), media_type="image/png")

    @app.get("/sessions/{session_id}/metrics")
    def get_metrics(session_id: str):
        entry = entry_or_404(session_id)
        return {
            "encoder_invocations": entry.encoder_invocations,
            "frames": entry.frames,
            "rounds_completed": entry.round,
            "state": entry.state,
        }

    @app.websocket("/sessions/{session_id}/events")
    async def events(websocket: WebSocket, session_id: str):
        import asyncio

        entry = store.entries.get(session_id)
        await websocket.accept()
        if entry is None:
            await websocket.close(code=4404)
            return
        q = entry.subscribe()
        try:
            while True:
                try:
                    event = q.get_nowait()
                except queue.Empty:
                    await asyncio.sleep(0.02)
                    continue
                await websocket.send_json(event)
                if event.get("done") or event.get("state") == STATE_ERROR:
                    break
        finally:
            entry.unsubscribe(q)
            await websocket.close()

    return app


def serve(root: str | Path, port: int = 8008, host: str = "127.0.0.1") -> None:
    import uvicorn

    uvicorn.run(create_app(root), host=host, port=port, log_level="info")
