"""Local HTTP/JSON surface over the ledger, live runs, and checkpoints.

Read-only except POST /runs/{id}/checkpoint, which feeds the run's state
machine. Token protection is a single shared bearer token from the
SDDKIT_API_TOKEN environment variable (or create_app argument).
"""

from __future__ import annotations

import os
from typing import Optional

from fastapi import Depends, FastAPI, HTTPException, Header, Query, Response
from pydantic import BaseModel

from .events import RunRegistry
from .ledger import LedgerStore, RunRecord


class RunSummary(BaseModel):
    run_id: str
    task_id: Optional[str] = None
    repo_id: Optional[str] = None
    config: Optional[str] = None
    status: Optional[str] = None
    phase: Optional[str] = None
    checkpoint: Optional[str] = None
    outcome: Optional[str] = None
    failure_category: Optional[str] = None
    judge_composite: Optional[float] = None
    needs_review: Optional[bool] = None
    live: bool = False


class CheckpointRequest(BaseModel):
    decision: str  # approve | reject
    decided_by: str = ""


class CheckpointResponse(BaseModel):
    accepted: bool
    reason: Optional[str] = None


class EventModel(BaseModel):
    seq: int
    run_id: str
    kind: str
    payload: dict


def _record_summary(record: RunRecord, live: bool = False) -> RunSummary:
    judge_composite = None
    needs_review = None
    if record.judge:
        judge_composite = record.judge.get("composite")
        needs_review = record.judge.get("needs_review")
    return RunSummary(
        run_id=record.run_id,
        task_id=record.task_id,
        repo_id=record.repo_id,
        config=record.config.value,
        status=record.status.value,
        outcome=record.outcome.status if record.outcome else None,
        failure_category=(
            record.outcome.category.value
            if record.outcome and record.outcome.category
            else None
        ),
        judge_composite=judge_composite,
        needs_review=needs_review,
        live=live,
    )


def create_app(
    store: LedgerStore,
    registry: Optional[RunRegistry] = None,
    token: Optional[str] = None,
) -> FastAPI:
    registry = registry or RunRegistry()
    token = token if token is not None else os.environ.get("SDDKIT_API_TOKEN")
    app = FastAPI(title="sddkit", docs_url=None, redoc_url=None)
    app.state.store = store
    app.state.registry = registry

    def require_token(authorization: Optional[str] = Header(default=None)) -> None:
        if token and authorization != f"Bearer {token}":
            raise HTTPException(status_code=401, detail="invalid or missing token")

    auth = Depends(require_token)

    @app.get("/runs", response_model=list[RunSummary])
    def list_runs(_: None = auth) -> list[RunSummary]:
        summaries: dict[str, RunSummary] = {}
        for record in store.query():
            summaries[record.run_id] = _record_summary(record)
        for handle in registry.all():
            if handle.done and handle.run_id in summaries:
                continue
            state = handle.state
            summaries[handle.run_id] = RunSummary(
                run_id=handle.run_id,
                config=state.config.value if state else None,
                status=state.status.value if state else None,
                phase=state.phase.value if state and state.phase else None,
                checkpoint=state.checkpoint.value if state else None,
                live=not handle.done,
            )
        return [summaries[k] for k in sorted(summaries)]

    @app.get("/runs/{run_id}")
    def get_run(run_id: str, _: None = auth) -> dict:
        record = store.load(run_id)
        handle = registry.get(run_id)
        if record is not None:
            view = record.to_dict()
            view["live"] = False
            return view
        if handle is not None:
            state = handle.state
            return {
                "run_id": run_id,
                "live": True,
                "config": state.config.value if state else None,
                "status": state.status.value if state else None,
                "phase": state.phase.value if state and state.phase else None,
                "checkpoint": state.checkpoint.value if state else None,
            }
        raise HTTPException(status_code=404, detail="unknown run")

    @app.get("/runs/{run_id}/artifacts/{kind}")
    def get_artifact(run_id: str, kind: str, _: None = auth) -> Response:
        if kind not in ("spec", "plan", "tasks", "patch"):
            raise HTTPException(status_code=404, detail="unknown artifact kind")
        if store.load(run_id) is None and registry.get(run_id) is None:
            raise HTTPException(status_code=404, detail="unknown run")
        text = store.load_artifact(run_id, kind)
        if text is None:
            raise HTTPException(status_code=404, detail="artifact not produced")
        return Response(content=text, media_type="text/markdown")

    @app.get("/runs/{run_id}/reports/{phase}")
    def get_report(run_id: str, phase: str, _: None = auth) -> dict:
        report = store.load_report(run_id, phase)
        if report is None:
            raise HTTPException(status_code=404, detail="no report for phase")
        return report

    @app.post("/runs/{run_id}/checkpoint", response_model=CheckpointResponse)
    def post_checkpoint(
        run_id: str, request: CheckpointRequest, _: None = auth
    ) -> CheckpointResponse:
        if request.decision not in ("approve", "reject"):
            raise HTTPException(status_code=422, detail="decision must be approve or reject")
        handle = registry.get(run_id)
        if handle is None:
            raise HTTPException(status_code=404, detail="unknown run")
        gate = handle.gate
        if gate is None or handle.done:
            raise HTTPException(status_code=409, detail="checkpoint is not pending")
        accepted = gate.decide(request.decision == "approve", request.decided_by)
        if not accepted:
            raise HTTPException(status_code=409, detail="checkpoint already decided")
        return CheckpointResponse(accepted=True)

    @app.get("/events", response_model=list[EventModel])
    def events(
        run: Optional[str] = Query(default=None),
        since: int = Query(default=0, ge=0),
        _: None = auth,
    ) -> list[EventModel]:
        handles = registry.all() if run is None else []
        if run is not None:
            handle = registry.get(run)
            if handle is None:
                raise HTTPException(status_code=404, detail="unknown run")
            handles = [handle]
        out = []
        for handle in sorted(handles, key=lambda h: h.run_id):
            for event in handle.events.since(since):
                out.append(
                    EventModel(
                        seq=event.seq,
                        run_id=event.run_id,
                        kind=event.kind,
                        payload=event.payload,
                    )
                )
        return out

    return app
