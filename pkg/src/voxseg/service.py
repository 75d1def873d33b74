"""HTTP face of the rating protocol.

Thin FastAPI layer over :mod:`voxseg.rater`: it owns one study manifest
and one session store, translates workbench exceptions to status codes,
and optionally serves the browser client as static files.  All protocol
logic (seeding, blinding, tallying, persistence) lives in the core
module so scripted clients and the browser hit identical behaviour.
"""

import argparse
from typing import Literal, Optional

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .errors import (
    DuplicateChoice,
    IndexOutOfRange,
    ManifestError,
    NoData,
    UnknownSession,
    VoxsegError,
)
from .rater import SessionStore, StudyManifest, create_session, tally, trial_payload

_STATUS = {
    UnknownSession: 404,
    IndexOutOfRange: 404,
    NoData: 404,
    DuplicateChoice: 409,
    ManifestError: 400,
}


class SessionRequest(BaseModel):
    rater_id: str
    seed: int
    manifest: Optional[str] = None  # optional ref, checked against the served study


class ChoiceRequest(BaseModel):
    choice: Literal["A", "B", "skip"]
    slices_viewed: list = []
    final_opacity: float = 1.0


def build_app(manifest, store_dir, ui_dir=None):
    """App serving one study; `manifest` is a StudyManifest or a path."""
    if not isinstance(manifest, StudyManifest):
        manifest = StudyManifest.load(manifest)
    store = SessionStore(store_dir)
    app = FastAPI(title="segmentation rating service")
    app.state.manifest = manifest
    app.state.store = store

    @app.exception_handler(VoxsegError)
    def _as_json(request, exc):
        return JSONResponse({"error": type(exc).__name__, "detail": str(exc)},
                            status_code=_STATUS.get(type(exc), 400))

    @app.post("/sessions")
    def open_session(req: SessionRequest):
        if req.manifest is not None and req.manifest != manifest.name:
            raise ManifestError(
                f"this service hosts study {manifest.name!r}, not {req.manifest!r}")
        session = store.create(create_session(manifest, req.rater_id, req.seed))
        return {"session_id": session.session_id,
                "trial_count": len(session.trials),
                "recorded": len(session.choices),
                "complete": session.complete}

    @app.get("/sessions/{session_id}")
    def session_progress(session_id: str):
        session = store.get(session_id)
        return {"session_id": session.session_id,
                "rater_id": session.rater_id,
                "trial_count": len(session.trials),
                "recorded": len(session.choices),
                "complete": session.complete}

    @app.get("/sessions/{session_id}/trials/{index}")
    def get_trial(session_id: str, index: int):
        return trial_payload(manifest, store.get(session_id), index)

    @app.post("/sessions/{session_id}/trials/{index}/choice")
    def post_choice(session_id: str, index: int, req: ChoiceRequest):
        session = store.record(session_id, index, req.choice,
                               req.slices_viewed, req.final_opacity)
        return {"ok": True,
                "recorded": len(session.choices),
                "complete": session.complete}

    @app.get("/tally")
    def get_tally():
        sessions = store.sessions()
        counts = tally(sessions)
        tags = manifest.candidate_tags
        return {"study": manifest.name,
                "candidates": {"candidate_1": tags[0], "candidate_2": tags[1]},
                "sessions": sum(1 for s in sessions if s.complete),
                "rois": counts}

    if ui_dir is not None:
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app


def main(argv=None):
    parser = argparse.ArgumentParser(
        description="serve a blinded A/B segmentation rating study")
    parser.add_argument("manifest", help="study manifest JSON")
    parser.add_argument("--store", default="rating-sessions",
                        help="directory for session logs and snapshots")
    parser.add_argument("--ui", default=None, help="static UI bundle to host at /")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8000)
    args = parser.parse_args(argv)

    import uvicorn
    uvicorn.run(build_app(args.manifest, args.store, args.ui),
                host=args.host, port=args.port)


if __name__ == "__main__":
    main()
