"""HTTP JSON API over the study service, plus static serving for crop PNGs
and the study UI bundle."""

from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .study import StudyService, UnknownItemError, UnknownSessionError


class VoteBody(BaseModel):
    session: str
    item_id: str
    choice: str


def create_app(
    service: StudyService,
    operator: bool = False,
    crops_dir: Optional[str | Path] = None,
    ui_dir: Optional[str | Path] = None,
) -> FastAPI:
    """API surface:

    POST /api/session        -> {session_id, total_items}
    GET  /api/items/next     -> item view (no method labels) | {done: true}
    POST /api/vote           -> {ok, counted}
    GET  /api/results        -> aggregated result (operator mode only)
    """
    app = FastAPI(title="pairwise crop study")

    @app.post("/api/session")
    def start_session() -> dict:
        session_id = service.register_session()
        return {"session_id": session_id, "total_items": len(service.items)}

    @app.get("/api/items/next")
    def next_item(session: str = Query(...)) -> dict:
        try:
            item = service.next_item(session)
        except UnknownSessionError:
            raise HTTPException(status_code=404, detail="unknown session") from None
        done, total = service.progress(session)
        if item is None:
            return {"done": True, "progress": {"done": done, "total": total}}
        return {
            "done": False,
            "item_id": item.item_id,
            "left_png_url": item.left_crop,
            "right_png_url": item.right_crop,
            "progress": {"done": done, "total": total},
        }

    @app.post("/api/vote")
    def vote(body: VoteBody) -> dict:
        if body.choice not in ("left", "right"):
            raise HTTPException(status_code=422, detail="choice must be left or right")
        try:
            counted = service.record_vote(body.session, body.item_id, body.choice)
        except UnknownItemError:
            raise HTTPException(status_code=404, detail="unknown item") from None
        return {"ok": True, "counted": counted}

    @app.get("/api/results")
    def results() -> JSONResponse:
        if not operator:
            raise HTTPException(status_code=403, detail="results are operator-only")
        return JSONResponse(service.results().to_dict())

    if crops_dir is not None:
        app.mount("/static", StaticFiles(directory=str(crops_dir)), name="static")
    if ui_dir is not None:
        # Mounted last so /api and /static keep precedence.
        app.mount("/", StaticFiles(directory=str(Path(ui_dir)), html=True), name="ui")

    return app
